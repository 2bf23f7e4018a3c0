from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from spanforge.sim import canonical_topology, run

settings.register_profile("default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def canonical_corpus():
    return run(canonical_topology())


@pytest.fixture(scope="session")
def canonical_dir(tmp_path_factory, canonical_corpus):
    return canonical_corpus.write(tmp_path_factory.mktemp("canonical"))


# ------------------------------------------------------------------ acceptance
# Each acceptance test records one verdict line; all of them are echoed in
# the terminal summary so a plain `pytest` run shows a PASS/FAIL per
# criterion even when output capture is on.

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" -- {detail}" if detail else "")
        _VERDICTS[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
