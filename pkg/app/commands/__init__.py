from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

from app.models.run_config import RunConfig


class CommandContext(BaseModel):
    """What every command receives from the entry point"""

    model_config = ConfigDict(frozen=True)

    cfg: RunConfig
    out_dir: Path
    threads: int = Field(1, ge=1)
