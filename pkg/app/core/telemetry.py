from opentelemetry import trace, metrics
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor
from opentelemetry.sdk.metrics import MeterProvider
from opentelemetry.sdk.metrics.export import PeriodicExportingMetricReader
from opentelemetry.sdk.resources import Resource, SERVICE_NAME, SERVICE_VERSION

from app.core.config import settings
import logging

logger = logging.getLogger(__name__)

_initialized = False


def build_resource(service_name=None, service_version=None) -> Resource:
    """Resource attributes shared by traces, metrics and logs"""
    return Resource(attributes={
        SERVICE_NAME: service_name or settings.otel_service_name,
        SERVICE_VERSION: service_version or settings.otel_service_version,
        "deployment.environment": settings.otel_deployment_environment,
        "service.namespace": "habit-duality",
    })


def setup_telemetry(enable_export=None):
    """
    Initialize OpenTelemetry providers

    Spans and metrics are always recorded in-process; OTLP exporters are
    attached only when export is enabled. Safe to call more than once.
    """
    global _initialized
    if _initialized:
        return
    _initialized = True

    if enable_export is None:
        enable_export = settings.otel_enabled

    resource = build_resource()

    trace_provider = TracerProvider(resource=resource)
    metric_readers = []

    if enable_export:
        from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
        from opentelemetry.exporter.otlp.proto.grpc.metric_exporter import OTLPMetricExporter

        otlp_span_exporter = OTLPSpanExporter(
            endpoint=settings.otel_exporter_otlp_endpoint,
            insecure=True  # Set to False if using TLS
        )
        trace_provider.add_span_processor(
            BatchSpanProcessor(
                otlp_span_exporter,
                max_queue_size=2048,
                max_export_batch_size=512,
                export_timeout_millis=30000,
            )
        )

        otlp_metric_exporter = OTLPMetricExporter(
            endpoint=settings.otel_exporter_otlp_endpoint,
            insecure=True
        )
        metric_readers.append(PeriodicExportingMetricReader(
            otlp_metric_exporter,
            export_interval_millis=settings.otel_metric_export_interval
        ))

    trace.set_tracer_provider(trace_provider)
    metrics.set_meter_provider(MeterProvider(
        resource=resource,
        metric_readers=metric_readers
    ))

    logger.info(
        "OpenTelemetry initialized",
        extra={
            "service_name": settings.otel_service_name,
            "export_enabled": enable_export,
            "endpoint": settings.otel_exporter_otlp_endpoint if enable_export else None
        }
    )


def instrument_app(app):
    """Apply auto-instrumentation to the FastAPI app"""
    from opentelemetry.instrumentation.fastapi import FastAPIInstrumentor

    FastAPIInstrumentor.instrument_app(
        app,
        tracer_provider=trace.get_tracer_provider()
    )

    logger.info("Auto-instrumentation applied")
