import numpy as np
import pytest
from hypothesis import settings

from forni.geometry import build_dictionary, default_basis
from forni.io import normalize_signals
from forni.phantom import PhantomSpec, StraightTract, make_phantom

settings.register_profile("forni", deadline=None, max_examples=60)
settings.load_profile("forni")


@pytest.fixture(scope="session")
def basis():
    return default_basis()


def small_spec():
    """Two orthogonal slabs crossing in the middle of a 12 x 12 x 6 grid."""
    return PhantomSpec(
        shape=(12, 12, 6),
        tracts=[
            StraightTract((6.0, 5.0, 3.0), (1.0, 0.0, 0.0), thickness=3, height=3),
            StraightTract((5.0, 6.0, 3.0), (0.0, 1.0, 0.0), thickness=3, height=3),
        ],
    )


@pytest.fixture(scope="session")
def small_case(basis):
    """Noisy two-slab phantom: (truth, scheme, normalized signals, dictionary)."""
    truth, scheme, raw = make_phantom(small_spec(), snr=20, seed=3)
    y, _ = normalize_signals(raw, scheme)
    return truth, scheme, y, build_dictionary(basis, scheme)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
