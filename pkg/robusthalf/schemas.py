from typing import Annotated, Any, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from .core import format_p, parse_p


def _norm_token(value: Any) -> float | str:
    return format_p(parse_p(value))


# ---------------------------------------------------
# Files
# ---------------------------------------------------
class DatasetMetadata(BaseModel):
    """JSON sidecar written next to a dataset CSV."""

    seed: Optional[int] = None
    gamma: Optional[float] = None
    eta: Optional[float] = None
    p: Optional[Union[float, str]] = None
    w_star: Optional[List[float]] = None
    bias: Optional[float] = None

    @field_validator("p")
    @classmethod
    def normalize_p(cls, value):
        return None if value is None else _norm_token(value)


class ModelFile(BaseModel):
    w: List[float] = Field(min_length=1)
    bias: float = 0.0
    q: Optional[Union[float, str]] = None

    @field_validator("q")
    @classmethod
    def normalize_q(cls, value):
        return None if value is None else _norm_token(value)


# ---------------------------------------------------
# Adversary descriptions
# ---------------------------------------------------
class LpBallConfig(BaseModel):
    kind: Literal["lp_ball"]
    p: Union[float, str]
    gamma: float = Field(gt=0)

    @field_validator("p")
    @classmethod
    def normalize_p(cls, value):
        return _norm_token(value)


class PolytopeConfig(BaseModel):
    kind: Literal["polytope"]
    A: List[List[float]] = Field(min_length=1)
    c: List[float] = Field(min_length=1)


class HullConfig(BaseModel):
    kind: Literal["hull"]
    offsets: List[List[float]] = Field(min_length=1)


AdversaryConfig = Annotated[Union[LpBallConfig, PolytopeConfig, HullConfig], Field(discriminator="kind")]
_adversary_adapter: TypeAdapter = TypeAdapter(AdversaryConfig)


def parse_adversary_config(data: Any) -> Union[LpBallConfig, PolytopeConfig, HullConfig]:
    return _adversary_adapter.validate_python(data)


# ---------------------------------------------------
# Run records
# ---------------------------------------------------
class RunRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: str
    config: dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    metrics: dict[str, Any] = Field(default_factory=dict)
    artifacts: dict[str, str] = Field(default_factory=dict)
    # wall-clock measurements go to the log, never into the serialized record
    timing: dict[str, float] = Field(default_factory=dict, exclude=True)


# ---------------------------------------------------
# HTTP payloads
# ---------------------------------------------------
class ExamplePayload(BaseModel):
    x: List[float] = Field(min_length=1)
    y: Literal[-1, 1]


class CertifyRequest(BaseModel):
    model: ModelFile
    examples: List[ExamplePayload] = Field(min_length=1)
    adversary: AdversaryConfig


class EvalRequest(CertifyRequest):
    gamma: Optional[float] = Field(default=None, gt=0)


class ErrorResponse(BaseModel):
    error: str
