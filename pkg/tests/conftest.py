import numpy as np
import pytest

from chromafix.color import ChartCorrespondence


def random_correspondence(rng, n=24, noise=20.0):
    """Distinct random sources in the cube; targets are a noisy copy, clipped."""
    src = rng.uniform(0.0, 255.0, size=(n, 3))
    tgt = np.clip(src + rng.normal(0.0, noise, size=(n, 3)), 0.0, 255.0)
    return ChartCorrespondence(src, tgt)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def corr(rng):
    return random_correspondence(rng)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from chromafix.synthetic import write_synthetic_dataset

    out = tmp_path_factory.mktemp("synthetic")
    return write_synthetic_dataset(out, n_images=4, seed=3, replicas=2)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
