import sys
from decimal import Decimal
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mathdivide.dataset import Problem
from mathdivide.llm_gateway import BackendConfig
from mathdivide.orchestrator import RunConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def mini_corpus_path() -> str:
    return str(FIXTURES / "gsm8k_mini.jsonl")


@pytest.fixture
def problem() -> Problem:
    return Problem(
        id="p00000",
        statement="A farm collects 16 eggs per box across 2 boxes. How many eggs in total?",
        gold_raw="16 * 2 = 32\n#### 32",
        gold_value=Decimal(32),
    )


def make_config(**overrides) -> RunConfig:
    defaults = dict(
        run_id="test-run",
        backend=BackendConfig(kind="mock"),
        interpreter=sys.executable,
        workers=1,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


@pytest.fixture
def mock_config() -> RunConfig:
    return make_config()
