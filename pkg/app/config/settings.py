from dotenv import load_dotenv
from pydantic import Field, computed_field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Only logging and service defaults come from the environment; the CLI never
# reads numerical parameters from here.
load_dotenv()


class Settings(BaseSettings):
    """Base settings for the application."""

    model_config = SettingsConfigDict(
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Application settings
    APP_NAME: str = "FEM Impute"
    APP_VERSION: str = "0.1.0"
    APP_DESCRIPTION: str = "Robust mixture-model imputation of missing values"

    # Logging
    LOG_LEVEL: str = Field(default="INFO", description="Console log level")
    LOG_TO_FILES: bool = Field(default=False, description="Also write rotating log files")
    LOG_DIR: str = "logs"

    # Service-level fit defaults (HTTP surface only)
    DEFAULT_OUTER_TOL: float = Field(default=1e-5, gt=0)
    DEFAULT_MAX_OUTER_ITERS: int = Field(default=200, ge=1)
    DEFAULT_INNER_TOL: float = Field(default=1e-6, gt=0)
    DEFAULT_MAX_INNER_ITERS: int = Field(default=20, ge=1)
    MAX_REQUEST_ROWS: int = Field(default=20000, ge=1, description="Row cap for /v1/impute payloads")

    # Bench harness
    BENCH_PARALLELISM: int = Field(default=1, ge=1, description="Concurrent MC replicates")

    @computed_field
    @property
    def effective_log_level(self) -> str:
        """Normalized console log level (falls back to INFO on unknown names)."""
        level = (self.LOG_LEVEL or "").strip().upper()
        if level in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            return level
        return "INFO"


settings = Settings()
