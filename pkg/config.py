"""Configuration management for the CUSP uncertainty toolkit."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix ``CUSP_``)."""

    model_config = SettingsConfigDict(
        env_prefix="CUSP_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Results store
    results_db_path: str = "./data/cusp_results.duckdb"

    # Default output directory when a config names none
    output_dir: str = "./runs"

    # Logging
    log_level: str = "INFO"

    # Master seed used when neither the config nor --seed provide one
    default_seed: int = 0

    # Scoring fan-out
    score_workers: int = 1
    score_chunk_size: int = 256

    # Reject NaN/Inf when arrays enter the engine
    checked_tensors: bool = True

    # Desk-scale sample limits
    train_limit: int = 2000
    test_limit: int = 500


settings = Settings()
