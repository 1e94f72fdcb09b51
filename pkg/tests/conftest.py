import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcrlab.datagen import make_ground_truth, sample_design
from pcrlab.estimators import PcaDecomposition, pca
from pcrlab.spectrum import make_spectrum

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def axis_aligned_design(values):
    """n = p design whose sample covariance is exactly diag(values)."""
    values = np.asarray(values, dtype=np.float64)
    p = values.size
    return np.sqrt(p) * np.diag(np.sqrt(values))


def exact_decomposition(values):
    """PCA with Phat = P and lambda_hat = lambda."""
    values = np.asarray(values, dtype=np.float64)
    return PcaDecomposition(lambda_hat=values.copy(), U_hat=np.eye(values.size), n=values.size)


@pytest.fixture
def poly_instance():
    spec = make_spectrum("polynomial", alpha=2.0, p=30)
    gt = make_ground_truth(spec, s=0.5, L=1.0, seed=3, sigma2=0.5)
    sample = sample_design(gt, 120, "gaussian", seed=(11, 120, 0))
    return spec, gt, sample, pca(sample.X)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
