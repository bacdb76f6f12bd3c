import json
from pathlib import Path

import pytest
from hypothesis import settings

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def read_jsonl(name):
    with open(FIXTURES / name, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


@pytest.fixture(scope="session")
def corpus_records():
    return read_jsonl("corpus.jsonl")


@pytest.fixture(scope="session")
def unsupported_records():
    return read_jsonl("unsupported.jsonl")


def tiny_config(fusion="single", **kw):
    from comformer.model import ModelConfig

    base = dict(
        vocab_size=20, d_model=8, heads=2, layers=1, d_ff=16, dropout=0.0,
        max_code_len=6, max_ast_len=6, max_comment_len=6, fusion=fusion, seed=0,
    )
    base.update(kw)
    return ModelConfig(**base)


# -- acceptance criteria reporting ------------------------------------------------
# Tests marked ``criterion(n, title)`` roll up into one PASS/FAIL/SKIP line per
# criterion at the end of the run.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "states": []})
    entry["states"].append("FAIL" if rep.failed else "SKIP" if rep.skipped else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        states = _CRITERIA[number]["states"]
        verdict = "FAIL" if "FAIL" in states else "PASS" if "PASS" in states else "SKIP"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {_CRITERIA[number]['title']}")
