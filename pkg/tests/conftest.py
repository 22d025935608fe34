import numpy as np
import pytest
from hypothesis import settings

from ssdkd import config

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def tiny_config(**sections):
    """A configuration small enough for a full run in well under a second."""
    base = {
        "data": {"classes": 4, "per_class": 60, "dim": 4, "test_size": 40},
        "teacher": {"lr": 0.1, "hidden": 16, "epochs": 4, "batch_size": 32, "min_accuracy": 0.0},
        "student": {"lr": 0.05, "hidden": 8},
        "generator": {"lr": 0.01, "latent_dim": 4, "hidden": 8},
        "replay": {"capacity": 24},
        "engine": {"epochs": 3, "inversion_steps": 4, "distill_steps": 3, "synth_batch": 10,
                   "batch_size": 8},
    }
    for name, overrides in sections.items():
        base[name] = {**base.get(name, {}), **overrides}
    return config.from_dict(base)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
