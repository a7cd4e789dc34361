"""HTTP front end of the lab: ``uvicorn app.main:app``."""
from contextlib import asynccontextmanager
import logging

from fastapi import FastAPI

from app.api import experiments
from app.core.config import settings
from app.core.logging import setup_logging
from app.core.telemetry import instrument_app, setup_telemetry

# providers must exist before FastAPI instrumentation hooks into the app
setup_logging(level=settings.log_level)
setup_telemetry()
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info("Lab service starting", extra={
        "version": settings.app_version,
        "default_threads": settings.default_threads,
        "quadrature_nodes": settings.quadrature_nodes,
        "nested_substeps": settings.nested_substeps,
        "otel_enabled": settings.otel_enabled,
    })
    yield
    logger.info("Lab service stopped")


app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="Monte Carlo welfare-loss bounds for consumption with multiplicative habit",
    lifespan=lifespan,
)
instrument_app(app)
app.include_router(experiments.router)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app.main:app", host=settings.host, port=settings.port, reload=settings.reload)
