"""Dataset CSV files, JSON sidecars, model files and JSON-lines output."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from .core import Dataset, Halfspace
from .errors import InvalidInputError
from .schemas import DatasetMetadata, ModelFile
from .utils import dumps, loads

logger = structlog.get_logger()


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_dataset(S: Dataset, path: str | Path) -> list[Path]:
    """Write ``y,x1..xd`` rows (shortest round-trip decimals) and the metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(S.X, columns=[f"x{j + 1}" for j in range(S.dim)])
    frame.insert(0, "y", S.y.astype(np.int64))
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    written = [path]
    if S.metadata is not None:
        side = sidecar_path(path)
        side.write_bytes(dumps(S.metadata.model_dump(), indent=True))
        written.append(side)
    return written


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"dataset file not found: {path}")
    # read as text with the header as row 0: later rows longer than the header fail to parse
    try:
        raw = pd.read_csv(path, header=None, dtype=str, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise InvalidInputError(f"{path}: expected a header starting with 'y'") from None
    except pd.errors.ParserError as e:
        raise InvalidInputError(f"{path}: malformed CSV ({e})") from None
    header = raw.iloc[0]
    if str(header.iloc[0]).strip() != "y":
        raise InvalidInputError(f"{path}: expected a header starting with 'y'")
    body = raw.iloc[1:]
    if body.empty:
        raise InvalidInputError(f"{path}: dataset has no rows")
    width = raw.shape[1]
    if body.isna().to_numpy().any():
        raise InvalidInputError(f"{path}: rows must have {width} columns")
    try:
        table = body.astype(np.float64).to_numpy()
    except ValueError as e:
        raise InvalidInputError(f"{path}: non-numeric value ({e})") from None

    meta = None
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = DatasetMetadata.model_validate(loads(side.read_bytes()))
        except ValidationError as e:
            raise InvalidInputError(f"{side}: invalid metadata ({e})") from None
    return Dataset(table[:, 1:], table[:, 0], meta)


def write_model(model: Halfspace | dict[str, Any], path: str | Path, q: Any = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = model.to_dict() if isinstance(model, Halfspace) else dict(model)
    if q is not None:
        data["q"] = q
    path.write_bytes(dumps(ModelFile.model_validate(data).model_dump(exclude_none=True), indent=True))
    return path


def read_model(path: str | Path) -> tuple[Halfspace, ModelFile]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"model file not found: {path}")
    try:
        model = ModelFile.model_validate(loads(path.read_bytes()))
    except ValidationError as e:
        raise InvalidInputError(f"{path}: invalid model file ({e})") from None
    return Halfspace(np.asarray(model.w), model.bias), model


def write_json_lines(records: Iterable[dict[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        for rec in records:
            fh.write(dumps(rec) + b"\n")
    return path


def read_json_lines(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open("rb") as fh:
        return [loads(line) for line in fh if line.strip()]
