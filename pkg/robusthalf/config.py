from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field

class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", env_prefix="ROBUSTHALF_", extra="ignore"
    )

    TOLERANCE: float = Field(default=1e-9, gt=0)
    PRECISION_BITS: int = Field(default=16, ge=1)
    SMD_MAX_STEPS: int = Field(default=200_000, ge=1)

    LOG_LEVEL: str = Field(default="INFO")

    CORS_ORIGINS: str = Field(default="*")

    APP_NAME: str = Field(default="robusthalf")
    APP_ENV: str = Field(default="dev")

settings = Settings()
