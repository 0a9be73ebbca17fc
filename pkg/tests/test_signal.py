import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import Instance
from jlbo.geometry import pack_kappa
from jlbo.signal import (ObservationBlock, blocks_to_matrix, build_gamma, build_lambda,
                         complex_noise, evaluate_blocks, noiseless_signal, observation_from_text,
                         observation_to_text, random_beamforming, simulate_rx)


def factorization_errors(inst):
    s, cfg, gains, bf = inst.scene, inst.cfg, inst.gains, inst.bf
    k = pack_kappa(s)
    y = noiseless_signal(s, gains, bf, cfg)
    gh = build_gamma(k.kappa2, bf.theta, bf.w, gains.g, s, cfg) @ gains.h_vec
    lg = build_lambda(k.kappa1, bf.theta, bf.w, gains.h, s, cfg) @ gains.g_vec
    return np.linalg.norm(y - gh) / np.linalg.norm(gh), np.linalg.norm(gh - lg) / np.linalg.norm(gh)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), l1=st.integers(0, 3), l2=st.integers(0, 3))
def test_bilinear_factorization(seed, l1, l2):
    e1, e2 = factorization_errors(Instance(seed, l1, l2))
    assert e1 < 1e-10 and e2 < 1e-10


def test_gamma_shape_and_block_structure(small):
    cfg, s = small.cfg, small.scene
    k = pack_kappa(s)
    gam = build_gamma(k.kappa2, small.bf.theta, small.bf.w, small.gains.g, s, cfg)
    p2 = s.n_paths_ris_ue + 1
    assert gam.shape == (cfg.n_rows, cfg.n_bs * p2)
    rb = cfg.n_rows // cfg.n_bs
    assert np.all(gam[:rb, p2:] == 0) and np.all(gam[rb:, :p2] == 0)


def test_linear_in_beams(small):
    """The per-beam maps reproduce the signal for the actual beams."""
    s, cfg, g, h, bf = small.scene, small.cfg, small.gains.g, small.gains.h, small.bf
    direct = evaluate_blocks(s, g, h, bf.w, bf.theta, cfg, derivs=False).gamma[:, :, 0]
    unit = evaluate_blocks(s, g, h, bf.w, bf.theta, cfg, derivs=False, linear_in="w").gamma[:, :, 0]
    # unit: (N, NS, NT, NU, P2); combine with each pilot's beam
    combined = np.einsum("nsmt,nstrp->nsmrp", bf.w, unit)
    np.testing.assert_allclose(combined, direct, atol=1e-12 * np.abs(direct).max())


def test_linear_in_ris_phases(small):
    s, cfg, g, h, bf = small.scene, small.cfg, small.gains.g, small.gains.h, small.bf
    direct = evaluate_blocks(s, g, h, bf.w, bf.theta, cfg, derivs=True)
    per = evaluate_blocks(s, g, h, bf.w, bf.theta, cfg, derivs=True, linear_in="theta")
    for name in ("gamma", "lam", "xi", "psi"):
        combined = np.einsum("t,nstmrp...->nsmrp...", bf.theta, getattr(per, name))
        ref = getattr(direct, name)[:, :, 0]
        np.testing.assert_allclose(combined, ref, atol=1e-12 * np.abs(ref).max(), err_msg=name)


def test_random_beamforming_feasible():
    inst = Instance(5)
    bf = random_beamforming(inst.cfg, np.random.default_rng(1))
    np.testing.assert_allclose(np.linalg.norm(bf.w, axis=-1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.abs(bf.theta), 1.0, atol=1e-15)


def test_simulate_rx_noise_and_reuse(small):
    y0 = noiseless_signal(small.scene, small.gains, small.bf, small.cfg)
    noise = np.full(y0.size, 0.5 + 0.5j)
    obs = simulate_rx(small.scene, small.gains, small.bf, small.cfg, 1.0, noise=noise)
    np.testing.assert_allclose(obs.y - y0, noise)
    quiet = simulate_rx(small.scene, small.gains, small.bf, small.cfg, 0.0)
    np.testing.assert_array_equal(quiet.y, y0)
    with pytest.raises(ValueError):
        simulate_rx(small.scene, small.gains, small.bf, small.cfg, 1.0)


def test_complex_noise_variance():
    z = complex_noise(200000, 3.0, np.random.default_rng(0))
    assert np.mean(np.abs(z) ** 2) == pytest.approx(3.0, rel=0.02)
    assert abs(np.mean(z ** 2)) < 0.05


def test_blocks_to_matrix_places_blocks():
    arr = np.arange(2 * 1 * 1 * 2 * 3).reshape(2, 1, 1, 2, 3).astype(complex)
    m = blocks_to_matrix(arr)
    assert m.shape == (4, 6)
    np.testing.assert_array_equal(m[:2, :3], arr[0, 0, 0])
    np.testing.assert_array_equal(m[2:, 3:], arr[1, 0, 0])
    assert np.all(m[:2, 3:] == 0)


def test_observation_text_round_trip():
    obs = ObservationBlock(np.array([1 + 1j, -2e-7 + 3j]), 1.5e-9, t=4)
    back = observation_from_text(observation_to_text(obs))
    np.testing.assert_array_equal(back.y, obs.y)
    assert back.sigma2 == obs.sigma2 and back.t == 4
