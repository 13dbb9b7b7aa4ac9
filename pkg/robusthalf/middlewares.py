import time

import structlog
from fastapi import Request

logger = structlog.get_logger()


async def log_requests(request: Request, call_next):
    started = time.perf_counter()
    logger.info("request.start", method=request.method, path=request.url.path)
    try:
        response = await call_next(request)
    except Exception as e:
        logger.exception("request.error", path=request.url.path, error=str(e))
        raise
    logger.info(
        "request.end",
        path=request.url.path,
        status_code=response.status_code,
        elapsed_ms=round(1000 * (time.perf_counter() - started), 2),
    )
    return response
