from __future__ import annotations

import pytest

from sphmm_sid.corpus import SynthSpec, generate_synthetic_corpus, render, synthetic_records
from sphmm_sid.frontend import extract_features
from sphmm_sid.recognizer import ModelConfig

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    """Record a criterion outcome for the end-of-run summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


TINY_SPEC = SynthSpec(speakers_per_gender=2, sentences=1, train_reps=3, test_reps=2)
TINY_MODEL = ModelConfig(num_states=3, num_mixtures=2, max_iterations=8)


@pytest.fixture(scope="session")
def tiny_spec() -> SynthSpec:
    return TINY_SPEC


@pytest.fixture(scope="session")
def tiny_model_config() -> ModelConfig:
    return TINY_MODEL


@pytest.fixture(scope="session")
def tiny_labeled():
    """(record, features) pairs of the tiny corpus, rendered in memory."""
    return [
        (record, extract_features(render(TINY_SPEC, record, voice, sentence, rep_key)))
        for record, voice, sentence, rep_key in synthetic_records(TINY_SPEC)
    ]


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """The tiny corpus on disk; returns the manifest path."""
    return generate_synthetic_corpus(TINY_SPEC, tmp_path_factory.mktemp("tiny_corpus"))
