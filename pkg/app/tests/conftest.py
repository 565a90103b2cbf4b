import pytest

from app.models.run_config import RunConfig
from app.tests.scenarios import small_config


@pytest.fixture
def small_cfg() -> RunConfig:
    return small_config()
