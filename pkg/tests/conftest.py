from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"


@pytest.fixture
def smoke_config():
    return CONFIGS / "smoke.json"
