import numpy as np
import pytest

from funcreg import FunctionalSample


def single_component_data(seed, n=500, G=50, score_sd=2.0, noise_sd=0.5,
                          missing_frac=0.0):
    """Curves from one sine eigenfunction: the recurring FPCA test bed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF9CA,)))
    grid = np.linspace(0.0, 1.0, G)
    phi = np.sqrt(2.0) * np.sin(2.0 * np.pi * grid)
    xi = rng.normal(0.0, score_sd, n)
    Y = xi[:, None] * phi[None, :] + rng.normal(0.0, noise_sd, (n, G))
    mask = rng.random((n, G)) < missing_frac
    # keep every subject observable
    full_rows = mask.all(axis=1)
    mask[full_rows, 0] = False
    samples = []
    for i in range(n):
        keep = ~mask[i]
        samples.append(FunctionalSample(f"s{i}", grid[keep], Y[i, keep]))
    return grid, phi, xi, Y, mask, samples


def shifted_subjects_data(seed, n=60, G=16, shift_sd=1.0, noise_sd=0.25,
                          beta1_scale=0.5):
    """FoSR test bed: one binary covariate effect plus subject shifts."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF05A,)))
    grid = np.linspace(0.0, 1.0, G)
    beta0 = 1.0 + 0.5 * np.sin(np.pi * grid)
    beta1 = beta1_scale * np.cos(np.pi * grid)
    x = (np.arange(n) % 2).astype(float)
    shifts = rng.normal(0.0, shift_sd, n)
    Y = (
        beta0[None, :]
        + x[:, None] * beta1[None, :]
        + shifts[:, None]
        + rng.normal(0.0, noise_sd, (n, G))
    )
    samples = [
        FunctionalSample(f"s{i}", grid, Y[i], covariates={"x": x[i]})
        for i in range(n)
    ]
    return grid, beta0, beta1, samples


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
