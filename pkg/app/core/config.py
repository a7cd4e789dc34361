from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        extra='ignore',
    )

    # Application
    app_name: str = "Habit Duality Lab"
    app_version: str = "1.0.0"
    environment: str = "development"

    # Server
    host: str = "0.0.0.0"
    port: int = 8000
    reload: bool = False

    # Logging
    log_level: str = "INFO"

    # Numerics
    default_threads: int = 1
    quadrature_nodes: int = 32
    nested_substeps: int = 4

    # OpenTelemetry
    otel_enabled: bool = False
    otel_service_name: str = "habit-duality-lab"
    otel_service_version: str = "1.0.0"
    otel_deployment_environment: str = "development"
    otel_exporter_otlp_endpoint: str = "http://localhost:4317"
    otel_metric_export_interval: int = 60000


# Global settings instance
settings = Settings()
