import numpy as np
import pytest

from tcalib.attributes import rank_attributes, synthetic_catalog
from tcalib.embedcore import EncoderConfig
from tcalib.tuner import ZeroShotContext, init_prompt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ctx():
    return ZeroShotContext.from_config(EncoderConfig(d_tok=64, d_embed=32, projection_seed=3))


@pytest.fixture(scope="session")
def small_ctx():
    return ZeroShotContext.from_config(EncoderConfig(d_tok=16, d_embed=8, projection_seed=5))


@pytest.fixture(scope="session")
def catalog():
    return synthetic_catalog(4, 3, seed=11)


@pytest.fixture
def attr_prompt(ctx, catalog):
    ranked = {n: rank_attributes(n, catalog[n], ctx.encoder, ctx.global_seed, 2) for n in catalog.class_names}
    return init_prompt("a photo of a", catalog.class_names, ctx, ranked)


def random_unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = (rep.passed, mark.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
