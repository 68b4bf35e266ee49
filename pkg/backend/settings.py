"""
Environment settings for the knowledge tracing engine
"""
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Values read from KT_* environment variables or a .env file"""

    model_config = SettingsConfigDict(env_prefix="KT_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    output_root: Path = Path("runs")
    default_seed: int = 42


def get_settings() -> Settings:
    return Settings()
