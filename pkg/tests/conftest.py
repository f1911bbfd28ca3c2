import json
from pathlib import Path

import pytest

from mcidrive.pipeline import PipelineConfig, extract
from mcidrive.synth import CohortSpec, generate_cohort

SMALL_SPEC = CohortSpec(n_participants=4, weeks=4, seed=7)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cohort")
    generate_cohort(SMALL_SPEC, out)
    return out


@pytest.fixture(scope="session")
def small_features(small_cohort, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("features")
    return extract(small_cohort, out, PipelineConfig())


@pytest.fixture(scope="session")
def small_ledger(small_cohort) -> list[dict]:
    with open(small_cohort / "ledger.json", encoding="utf-8") as fh:
        return json.load(fh)["trips"]


# verdict lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
