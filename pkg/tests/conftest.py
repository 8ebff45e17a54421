from pathlib import Path

import pytest

from recjudge.corpus import ItemRecord, InteractionLog, Qrels

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def golden():
    return GOLDEN


@pytest.fixture
def tiny_catalog():
    return {
        "m1": ItemRecord("m1", title="Alpha", genres=("Drama",), year=1999, runtime_minutes=120),
        "m2": ItemRecord("m2", title="Beta", genres=("Comedy", "Romance"), year=2005),
        "m3": ItemRecord("m3", title="Gamma", directors=("Dee Rector",), average_rating=3.9),
        "m4": ItemRecord("m4", title="Delta", overview="A heist goes wrong."),
        "m5": ItemRecord("m5", title="Epsilon", cast=("A. Actor", "B. Actor"), languages=("en",)),
    }


@pytest.fixture
def tiny_history():
    return InteractionLog.from_records(
        [
            ("u1", "m1", 4.0, 10),
            ("u1", "m2", 3.0, 11),
            ("u1", "m3", 5.0, 12),
            ("u2", "m2", 2.0, 20),
            ("u2", "m4", 4.5, 21),
        ]
    )


@pytest.fixture
def tiny_truth():
    return Qrels({("u1", "m4"): 6, ("u1", "m5"): 1, ("u2", "m1"): 0, ("u2", "m3"): 7, ("u2", "m5"): 3})


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion.

    The line is printed immediately (visible with ``-s``) and repeated in the
    terminal summary so every run shows the full checklist.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
