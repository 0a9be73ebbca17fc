import os
import subprocess
import sys

import numpy as np
import pytest

from jlbo import _kernels_py, kernels


def random_inputs(rng, nu=3, p1=2, p2=3, m=4, b=2, k=7):
    def c(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    return (c(nu, p2), c(nu, p2), c(p1), c(p2), c(p1), c(p2), 1.7, c(p1, m), c(p1, m),
            c(b, p2, p1), c(b, p2, p1), c(b, p2, p1),
            rng.standard_normal((p1, k)), rng.standard_normal((p1, k)),
            rng.standard_normal((p1, k)), rng.standard_normal((p2, k)),
            rng.standard_normal((p2, k)), rng.standard_normal((p2, k)))


def test_backend_is_known():
    assert kernels.BACKEND in ("python", "cython")


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(3))
def test_compiled_matches_reference(seed):
    args = random_inputs(np.random.default_rng(seed))
    ref = _kernels_py.block_terms(*args, True)
    out = kernels.block_terms(*args, True)
    for a, b in zip(out, ref):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(b).max())
    ref0 = _kernels_py.block_terms(*args, False)
    out0 = kernels.block_terms(*args, False)
    assert out0[2] is None and out0[3] is None
    np.testing.assert_allclose(out0[0], ref0[0], rtol=1e-12)


def test_reference_gamma_by_loops():
    """Gamma entry from explicit sums: a_U[r,p] ph2[p] sum_l z[b,p,l] g[l] ph1[l] x1[l,m]."""
    rng = np.random.default_rng(4)
    args = random_inputs(rng)
    au, _, ph1, ph2, g, h, _, x1, _, z = args[:10]
    gam, lam, _, _ = _kernels_py.block_terms(*args, False)
    b, m, r, p = 1, 2, 0, 2
    want = au[r, p] * ph2[p] * sum(z[b, p, l] * g[l] * ph1[l] * x1[l, m] for l in range(len(g)))
    assert gam[b, m, r, p] == pytest.approx(want)
    l = 1
    want = sum(au[r, q] * h[q] * ph2[q] * z[b, q, l] for q in range(len(h))) * ph1[l] * x1[l, m]
    assert lam[b, m, r, l] == pytest.approx(want)


def test_pure_python_env_forces_fallback():
    env = dict(os.environ, JLBO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import jlbo.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
