import contextlib
import logging
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clh.pipeline import ClinicalNote  # noqa: E402
from clh.io import read_jsonl  # noqa: E402
from clh.retrieval import HashingEmbedder, TermIndex  # noqa: E402
from clh.synthetic import synthetic_fixture  # noqa: E402
from clh.taxonomy import load_taxonomy  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "clh" / "data"


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="clh")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy(DATA / "tabular.jsonl", DATA / "alpha_index.jsonl", DATA / "guidelines.jsonl")


@pytest.fixture(scope="session")
def notes():
    return [ClinicalNote.from_record(r) for r in read_jsonl(DATA / "notes.jsonl")]


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture(scope="session")
def term_index(taxonomy, embedder):
    return TermIndex.build(taxonomy.alpha_index, embedder)


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_fixture(seed=0)


@pytest.fixture(scope="session")
def synthetic_index(synthetic, embedder):
    return TermIndex.build(synthetic.alpha_index, embedder)


# acceptance verdicts, printed once more at the end of the session

VERDICTS = pytest.StashKey[list]()


@pytest.fixture()
def verdict(request, capsys):
    """Context manager recording a PASS or FAIL line for one acceptance criterion."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    @contextlib.contextmanager
    def record(number: int, title: str):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            line = f"FAIL {number:2d} {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        else:
            line = f"PASS {number:2d} {title} ({time.perf_counter() - start:.2f}s)"
        finally:
            lines.append((number, line))
            with capsys.disabled():
                print(f"\n{line}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
