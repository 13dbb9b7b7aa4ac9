from __future__ import annotations

import numpy as np
import structlog
from fastapi import FastAPI, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import __version__
from .certify import Counterexample, certify
from .config import settings
from .core import Dataset, Halfspace, LabeledExample, NormSpec, clean_error, empirical_robust_risk, margin_error
from .errors import RobustHalfError
from .logging_conf import setup_logging
from .middlewares import log_requests
from .perturbations import NormBallAdversary, from_config
from .schemas import CertifyRequest, ErrorResponse, EvalRequest

setup_logging(settings.LOG_LEVEL)
logger = structlog.get_logger()

app = FastAPI(title=settings.APP_NAME)

origins = [o.strip() for o in settings.CORS_ORIGINS.split(",") if o.strip()]
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"] if origins == ["*"] else origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)
app.middleware("http")(log_requests)


def _error(code: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=code, content=ErrorResponse(error=message).model_dump())


def _unpack(payload: CertifyRequest) -> tuple[Halfspace, Dataset]:
    h = Halfspace(np.asarray(payload.model.w), payload.model.bias)
    S = Dataset.from_examples([LabeledExample(np.asarray(e.x), e.y) for e in payload.examples])
    return h, S


# Routes
@app.get("/")
async def root():
    return {
        "service": settings.APP_NAME,
        "version": __version__,
        "status": "running",
        "endpoints": {
            "certify": "/certify (POST)",
            "eval": "/eval (POST)",
            "health": "/health (GET)",
        },
    }


@app.get("/health")
async def health():
    """Simple health check."""
    return {"status": "ok"}


@app.post("/certify", responses={400: {"model": ErrorResponse}, 422: {"model": ErrorResponse}})
def certify_examples(payload: CertifyRequest):
    try:
        h, S = _unpack(payload)
        adv = from_config(payload.adversary)
        results = [certify(adv, h, ex) for ex in S]
        logger.info(
            "certify.done",
            examples=len(results),
            counterexamples=sum(isinstance(r, Counterexample) for r in results),
        )
        return {"results": [{"index": i} | r.to_dict() for i, r in enumerate(results)]}

    except ValueError as e:
        logger.warning("validation_error", error=str(e))
        return _error(status.HTTP_400_BAD_REQUEST, str(e))
    except RobustHalfError as e:
        logger.error("certify_failed", error=str(e))
        return _error(status.HTTP_422_UNPROCESSABLE_ENTITY, str(e))
    except Exception as e:
        logger.exception("certify_error", error=str(e))
        return _error(status.HTTP_500_INTERNAL_SERVER_ERROR, "Internal server error")


@app.post("/eval", responses={400: {"model": ErrorResponse}, 422: {"model": ErrorResponse}})
def evaluate(payload: EvalRequest):
    try:
        h, S = _unpack(payload)
        adv = from_config(payload.adversary)
        metrics = {
            "robust_risk": empirical_robust_risk(h, S, adv),
            "clean_error": clean_error(h, S),
        }
        gamma = payload.gamma
        if gamma is None and isinstance(adv, NormBallAdversary):
            gamma = adv.gamma
        if gamma is not None:
            spec = adv.spec if isinstance(adv, NormBallAdversary) else NormSpec(2.0)
            metrics["margin_error_gamma"] = margin_error(h, S, gamma, spec)
            metrics["margin_error_half"] = margin_error(h, S, gamma / 2.0, spec)
        return metrics

    except ValueError as e:
        logger.warning("validation_error", error=str(e))
        return _error(status.HTTP_400_BAD_REQUEST, str(e))
    except RobustHalfError as e:
        logger.error("eval_failed", error=str(e))
        return _error(status.HTTP_422_UNPROCESSABLE_ENTITY, str(e))
    except Exception as e:
        logger.exception("eval_error", error=str(e))
        return _error(status.HTTP_500_INTERNAL_SERVER_ERROR, "Internal server error")
