from pydantic_settings import BaseSettings
import os
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    # Output
    results_dir: str = os.getenv("ISAC_RESULTS_DIR", "results")

    # Parallelism
    threads: int = int(os.getenv("ISAC_THREADS", str(os.cpu_count() or 1)))
    torch_num_threads: int = int(os.getenv("ISAC_TORCH_NUM_THREADS", "1"))

    # Logging
    log_level: str = os.getenv("ISAC_LOG_LEVEL", "INFO")

    class Config:
        env_file = ".env"
        env_prefix = "ISAC_"
        extra = "ignore"


settings = Settings()
