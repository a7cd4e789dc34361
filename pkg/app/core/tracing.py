"""Span decorator for the numerical pipeline stages (simulation, calibration, dual controls, runs)."""
from functools import wraps
from typing import Callable
import logging

from opentelemetry import trace
from opentelemetry.trace import Status, StatusCode

from app.core.errors import LabError

logger = logging.getLogger(__name__)


def traced_component(component_name: str, **default_attributes):
    """Run the wrapped stage inside a ``<component>.<function>`` span.

    Lab errors are part of the CLI and HTTP contract: the span carries their
    exit code and they are logged as warnings. Anything else is logged as an error.
    """

    def decorator(func: Callable) -> Callable:
        span_name = f"{component_name}.{func.__name__}"

        @wraps(func)
        def wrapper(*args, **kwargs):
            tracer = trace.get_tracer(__name__)
            with tracer.start_as_current_span(span_name, attributes={"lab.component": component_name}) as span:
                for key, value in default_attributes.items():
                    span.set_attribute(key, value)
                try:
                    result = func(*args, **kwargs)
                except LabError as e:
                    span.record_exception(e)
                    span.set_attribute("lab.exit_code", e.exit_code)
                    span.set_status(Status(StatusCode.ERROR, str(e)))
                    logger.warning(f"{span_name} stopped", extra={"error": str(e), "error_type": type(e).__name__})
                    raise
                except Exception as e:
                    span.record_exception(e)
                    span.set_status(Status(StatusCode.ERROR, str(e)))
                    logger.error(f"{span_name} failed", extra={"error": str(e), "error_type": type(e).__name__})
                    raise
                span.set_status(Status(StatusCode.OK))
                return result

        return wrapper

    return decorator
