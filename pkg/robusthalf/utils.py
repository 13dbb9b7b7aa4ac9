import hashlib
from typing import Any

import numpy as np
import orjson

_JSON_OPTS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS


# ---------------------------------------------------
# Seeds
# ---------------------------------------------------
def stable_key(name: str | int) -> int:
    """32-bit key for a seed-splitting label; independent of PYTHONHASHSEED."""
    if isinstance(name, int):
        return name
    h = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(h[:4], "little")


def derive_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the stream `seed -> names[0] -> names[1] -> ...`.

    Every random draw in the package goes through here, e.g.
    ``derive_rng(7, "gen", "features")`` or ``derive_rng(7, "sweep", cell, rep)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(stable_key(n) for n in names))
    return np.random.default_rng(ss)


def vector_digest(v: np.ndarray) -> str:
    data = np.ascontiguousarray(v, dtype=np.float64).tobytes()
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------
# JSON
# ---------------------------------------------------
def dumps(obj: Any, indent: bool = False) -> bytes:
    opts = _JSON_OPTS | (orjson.OPT_INDENT_2 if indent else 0)
    return orjson.dumps(obj, option=opts)


def loads(data: bytes | str) -> Any:
    return orjson.loads(data)
