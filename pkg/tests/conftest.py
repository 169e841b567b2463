import pytest

from tricdr.config import TrainConfig
from tricdr.corpus import SynthConfig, generate_synthetic, prepare_corpus


@pytest.fixture(scope="session")
def small_corpus():
    recs = generate_synthetic(SynthConfig(n_users=60, n_source_items=80, n_target_items=150, seed=1))
    return prepare_corpus(recs, seed=1, n_eval_neg=20)


def make_cfg(**kw) -> TrainConfig:
    base = dict(d=8, max_len=12, epochs=3, pretrain_epochs=2, patience=50, batch_size=32,
                dropout=0.1, lr=0.01, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def fast_cfg():
    return make_cfg


# -- acceptance reporting: one PASS/FAIL line per criterion in the summary

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--a8-input", default=None,
                     help="interaction TSV (user, item, timestamp, domain) for the real-data smoke test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    key = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    _ACCEPTANCE[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {status}  {detail}")
