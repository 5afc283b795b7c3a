from pathlib import Path

import pytest

from longshot.dsa import clear_prompt_cache
from longshot.judge import ChatClient, JudgeConfig, load_reference_bank
from longshot.manifest import load_manifest, load_prompt_suite

DATA_DIR = Path(__file__).parent / "data"
CASSETTE_DIR = DATA_DIR / "cassettes"


@pytest.fixture(autouse=True)
def _fresh_prompt_cache():
    clear_prompt_cache()
    yield
    clear_prompt_cache()


@pytest.fixture
def fixture_suite():
    return load_prompt_suite(DATA_DIR / "suite_13.json")


@pytest.fixture
def fixture_manifest(fixture_suite):
    return load_manifest(DATA_DIR / "manifest_13.json", suite=fixture_suite)


@pytest.fixture
def fixture_bank():
    return load_reference_bank(DATA_DIR / "ref_bank.json")


@pytest.fixture
def replay_client():
    return ChatClient(cassette_dir=CASSETTE_DIR, mode="replay")


@pytest.fixture
def judge_cfg():
    return JudgeConfig(model_name="judge-model", seed=0, max_in_flight=1)
