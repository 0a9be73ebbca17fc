import numpy as np
import pytest

from jlbo.channel import ArrayConfig, prior_variances, sample_gains
from jlbo.geometry import sample_scene
from jlbo.signal import random_beamforming

SMALL = dict(n_bs=2, n_bs_antennas=4, n_ue_antennas=2, n_ris_elements=4,
             n_subcarriers_per_bs=2, n_pilots=2)


class Instance:
    """Scene, gains, beams and array config drawn from one seed."""

    def __init__(self, seed, l1=1, l2=1, region=(100.0, 100.0), **cfg_kw):
        rng = np.random.default_rng(seed)
        self.cfg = ArrayConfig(**{**SMALL, **cfg_kw})
        self.scene = sample_scene(self.cfg.n_bs, l1, l2, rng, region=region)
        self.var_g, self.var_h = prior_variances(self.scene)
        self.gains = sample_gains(self.var_g, self.var_h, rng)
        self.bf = random_beamforming(self.cfg, rng)
        self.rng = rng


@pytest.fixture
def make_instance():
    return Instance


@pytest.fixture
def small():
    return Instance(1)


def central_diff(f, x, h):
    """Column-wise central differences of a vector function ``f`` at ``x``."""
    x = np.asarray(x, float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


WELL_CONDITIONED = dict(l1=1, l2=1, region=(200.0, 200.0), n_subcarriers_per_bs=4,
                        n_ue_antennas=4, n_pilots=8, n_bs_antennas=8, n_ris_elements=16,
                        sample_period=100e-9)


def perturb(kappa, layout, rng, position=0.5, angle=0.05):
    """Uniform perturbation: ``position`` metres on coordinates, ``angle`` rad on orientations."""
    k = np.array(kappa, float)
    is_angle = np.zeros(k.size, bool)
    is_angle[[layout.varphi, layout.omega]] = True
    k[~is_angle] += rng.uniform(-position, position, int((~is_angle).sum()))
    k[is_angle] += rng.uniform(-angle, angle, int(is_angle.sum()))
    return k


ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (len(s.split(":")[0]), s)):
            terminalreporter.write_line(line)
