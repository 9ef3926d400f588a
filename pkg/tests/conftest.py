import pytest

from zsrl.data import SynthConfig, generate, make_split
from zsrl.ndcore import Rng

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ACCEPTANCE[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, status = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")


@pytest.fixture
def small_items():
    cfg = SynthConfig(num_classes=6, sketches_per_class=12, photos_per_class=12,
                      feature_dim=8, class_separation=2.0, noise_sigma=0.3,
                      latent_dim=4)
    return generate(cfg, Rng(3))


@pytest.fixture
def small_split(small_items):
    return make_split(sorted({it.class_id for it in small_items}), "random_k", {"k": 2}, 5)
