from pathlib import Path

import pytest

from t2s.datagen import PipelineConfig
from t2s.model import DialectTag
from t2s.runner import QueryExecutor, RetailFixture

DATA_DIR = Path(__file__).parent / "data"

# Must mirror tools/build_cassette.py; a drift shows up as a cassette miss.
TOY_PIPELINE_CONFIG = PipelineConfig(
    seed_topics=("Customer demographics",),
    target_topic_count=2,
    max_questions_per_topic=3,
    max_heal_attempts=5,
    max_rewrites=2,
    split_ratio=0.8,
    rng_seed=7,
    dialects=(DialectTag.GENERIC,),
    model="gpt-4",
    topic_concurrency=1,
)


@pytest.fixture(scope="session")
def base_fixture() -> RetailFixture:
    return RetailFixture.load("base")


@pytest.fixture
def executor(base_fixture):
    with QueryExecutor() as ex:
        ex.seed(base_fixture)
        yield ex


@pytest.fixture(scope="session")
def toy_cassette_path() -> Path:
    return DATA_DIR / "cassette_toy.json"


@pytest.fixture(scope="session")
def toy_config_path() -> Path:
    return DATA_DIR / "config_toy.yaml"
