import sys
import warnings

import numpy as np
import pytest

from otdistill.distributions import LabeledMeasure, MultiDomainDataset
from otdistill.errors import NotConvergedWarning


@pytest.fixture(autouse=True)
def _quiet_sinkhorn():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        yield


def blobs(rng, n_per_class, n_classes, d, shift=0.0, sep=4.0, noise=0.5):
    """Gaussian class blobs with means on scaled axis vectors."""
    means = np.zeros((n_classes, d))
    for c in range(n_classes):
        means[c, c % d] = sep * (1 + c // d)
    y = np.repeat(np.arange(n_classes), n_per_class)
    x = means[y] + noise * rng.normal(size=(y.size, d)) + shift
    return x, y


@pytest.fixture
def toy_dataset():
    rng = np.random.default_rng(11)
    domains = {}
    for k, s in enumerate([0.0, 0.5, -0.5]):
        x, y = blobs(rng, 20, 3, 4, shift=s)
        domains[f"s{k}"] = LabeledMeasure(x, y, 3)
    xt, yt = blobs(rng, 20, 3, 4, shift=1.0)
    domains["t"] = LabeledMeasure(xt, None, 3)
    return MultiDomainDataset(domains, "t", 3, 4), yt


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
