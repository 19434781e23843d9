import contextlib

import numpy as np
import pytest
from PIL import Image

from infmae.config import TINY_MODEL

_ACCEPTANCE = []


@contextlib.contextmanager
def _record(criterion, title):
    entry = {"id": criterion, "title": title, "detail": ""}
    _ACCEPTANCE.append(entry)
    try:
        yield entry
    except BaseException as exc:
        entry["status"] = "FAIL"
        entry["detail"] = entry["detail"] or str(exc).splitlines()[0][:120]
        raise
    entry["status"] = "PASS"


@pytest.fixture
def acceptance():
    """``with acceptance("C1", "title") as rec: ...`` records one pass/fail line."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(_ACCEPTANCE, key=lambda e: int(e["id"][1:])):
        status = e.get("status", "FAIL")
        terminalreporter.write_line(f"{e['id']:>4} {status}  {e['title']}  {e['detail']}")


@pytest.fixture
def tiny_cfg():
    return TINY_MODEL


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path
