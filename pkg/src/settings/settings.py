from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv, find_dotenv
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from _helper.resources import default_thread_count

load_dotenv(find_dotenv())

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR"}


class Settings(BaseSettings):
    """
    Process-wide defaults, read from WZ_* environment variables or a .env file.
    """

    model_config = SettingsConfigDict(env_prefix="WZ_")

    output_dir: Path = Path("results")
    threads: int = default_thread_count()
    chunk_size: int = 1024
    log_level: str = "INFO"
    seed: int = 20240229

    @field_validator("threads", "chunk_size")
    @classmethod
    def _validate_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"Value must be >= 1, got {value}.")
        return value

    @field_validator("log_level", mode="before")
    @classmethod
    def _validate_log_level(cls, value: str) -> str:
        level = str(value).upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f"Log level {value} is not one of {sorted(_LOG_LEVELS)}.")
        return level

    @field_validator("seed")
    @classmethod
    def _validate_seed(cls, value: int) -> int:
        if not 0 <= value < 2**64:
            raise ValueError(f"Seed {value} does not fit into 64 bits.")
        return value

    @field_validator("output_dir", mode="before")
    @classmethod
    def _validate_output_dir(cls, value: str) -> Path:
        _output_dir = Path(value)
        if _output_dir.exists() and not _output_dir.is_dir():
            raise ValueError(f"Path: {_output_dir} exists and is not a directory.")
        return _output_dir


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Loads settings once per process.
    """
    return Settings()


if __name__ == "__main__":
    print(get_settings().model_dump())
