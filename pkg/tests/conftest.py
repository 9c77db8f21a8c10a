import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cvdetect.corpus import AudioStore
from cvdetect.dsp import featurize_manifest
from cvdetect.synth import SynthConfig, synth_cv_corpus

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for number, text in getattr(report, "criterion", ()):
        _CRITERIA.append((number, text, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.criterion = [tuple(m.args) for m in item.iter_markers("criterion")]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, outcome in sorted(_CRITERIA):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Two consonants, one vowel, a handful of tokens: fast end-to-end data."""
    cfg = SynthConfig(consonants=("s", "l"), vowels=("a",), tokens_per_class=40,
                      n_train_speakers=3, n_test_speakers=2, n_atypical_speakers=2,
                      atypical_rate=0.15, test_fraction=0.35)
    waveforms, manifest = synth_cv_corpus(cfg, seed=3)
    return waveforms, manifest


@pytest.fixture(scope="session")
def tiny_features(tiny_corpus):
    waveforms, manifest = tiny_corpus
    return featurize_manifest(manifest, AudioStore(waveforms=waveforms))
