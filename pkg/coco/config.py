from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults, sourced from COCO_* environment variables or .env."""

    app_name: str = Field(default="coco")
    output_dir: Path = Field(default=Path("runs"), alias="COCO_OUTPUT_DIR")
    log_level: str = Field(default="INFO", alias="COCO_LOG_LEVEL")
    workers: int = Field(default=4, ge=1, alias="COCO_WORKERS")
    default_n: int = Field(
        default=10_000,
        ge=1,
        alias="COCO_DEFAULT_N",
        description="Per-environment sample size when a run config does not set one.",
    )
    default_seed: int = Field(default=0, ge=0, alias="COCO_SEED")
    irm_lambda_grid: list[float] = Field(
        default=[2.0, 20.0, 200.0],
        alias="COCO_IRM_LAMBDAS",
        description="Penalty weights scanned for IRMv1 and V-REx in the linear suite.",
    )
    penalty_grid_size: int = Field(
        default=10,
        ge=1,
        alias="COCO_PENALTY_GRID_SIZE",
        description="Number of log-spaced weights on [1, 100] scanned in the GMM suite.",
    )

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Cached accessor so imports share a single settings instance."""
    return Settings()  # type: ignore[call-arg]
