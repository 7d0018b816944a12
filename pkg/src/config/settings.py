from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv
import os

# Only load .env.local in local development
if os.path.exists(".env.local"):
    load_dotenv(".env.local")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=None, extra="ignore")

    CASCADE_LOG_LEVEL: str = "INFO"
    # Threads for scene generation and evaluation over disjoint images; training stays single-threaded
    CASCADE_WORKERS: int = Field(default=1, ge=1)
    # Output directory when --out is not given
    CASCADE_DEFAULT_OUT: str = "runs"


settings = Settings()
