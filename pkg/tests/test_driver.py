import numpy as np
import pytest

from conftest import WELL_CONDITIONED, Instance, perturb
from jlbo.channel import ArrayConfig
from jlbo.driver import (AssumptionError, JlboInit, JlboLimits, JlboStepError, Simulator,
                         dimension_requirement, lifted_gain_estimate, noise_zero_mean_test,
                         perturbed_init, run_jlbo, validate_assumptions)
from jlbo.geometry import pack_kappa
from jlbo.signal import random_beamforming


def test_dimension_requirement_arithmetic():
    cfg = ArrayConfig(n_bs=2, n_ue_antennas=2, n_subcarriers_per_bs=2, n_pilots=4)
    assert dimension_requirement(cfg, 2, 3) == (32, 15, 19)


def test_validate_assumptions_flags_small_budget():
    inst = Instance(0, l1=3, l2=3, n_pilots=1, n_subcarriers_per_bs=1, n_ue_antennas=1)
    rep = validate_assumptions(inst.cfg, inst.scene, inst.gains)
    assert not rep.dimension_ok and not rep.ok
    assert "FAIL" in rep.summary()
    with pytest.raises(AssumptionError) as err:
        raise AssumptionError(rep)
    assert err.value.report is rep


def test_validate_assumptions_passes_well_conditioned():
    inst = Instance(1, **WELL_CONDITIONED)
    noise = np.random.default_rng(0).standard_normal(inst.cfg.n_rows) * (1 + 0j)
    rep = validate_assumptions(inst.cfg, inst.scene, inst.gains, noise=noise, sigma2=1.0)
    assert rep.dimension_ok and rep.rank_ok and rep.ok
    assert rep.jacobian_rank == rep.n_kappa


def test_noise_zero_mean_test_detects_bias():
    rng = np.random.default_rng(0)
    z = (rng.standard_normal(4000) + 1j * rng.standard_normal(4000)) / np.sqrt(2)
    assert noise_zero_mean_test(z, 1.0)[0]
    assert not noise_zero_mean_test(z + 0.5, 1.0)[0]


def test_lifted_gain_estimate_recovers_products():
    inst = Instance(2, **WELL_CONDITIONED)
    sim = Simulator.create(inst.scene, inst.gains, inst.cfg, 0.0, inst.rng)
    y = sim.observe(inst.bf).y
    g, h = lifted_gain_estimate(y, pack_kappa(inst.scene).kappa, inst.bf, inst.scene, inst.cfg)
    n = inst.cfg.n_bs
    for i in range(n):
        want = np.outer(inst.gains.g[i], inst.gains.h[i])
        got = np.outer(g.reshape(n, -1)[i], h.reshape(n, -1)[i])
        assert np.linalg.norm(got - want) <= 1e-8 * np.linalg.norm(want)


def test_noiseless_run_from_truth_has_tiny_residual():
    inst = Instance(3, **WELL_CONDITIONED)
    sim = Simulator.create(inst.scene, inst.gains, inst.cfg, 0.0, inst.rng)
    init = JlboInit(pack_kappa(inst.scene).kappa, inst.gains.g.ravel(), inst.bf)
    state = run_jlbo(sim, init, inst.var_g, inst.var_h, inst.cfg,
                     JlboLimits(max_iters=2, beam_mode="frozen"), truth=inst.scene)
    y = sim.observe(inst.bf).y
    assert state.history[-1].residual <= 1e-20 * np.vdot(y, y).real
    assert state.history[-1].nmse_kappa < 1e-16
    assert set(state.outputs()) == {"kappa", "w", "h", "g", "theta"}


@pytest.mark.parametrize("mode", ["design", "random", "fixed-ris"])
def test_beam_modes_run_and_record(mode):
    inst = Instance(5, **WELL_CONDITIONED)
    y_ref = Simulator.create(inst.scene, inst.gains, inst.cfg, 0.0, inst.rng).observe(inst.bf).y
    sigma2 = float(np.vdot(y_ref, y_ref).real / y_ref.size / 10 ** 2)
    sim = Simulator.create(inst.scene, inst.gains, inst.cfg, sigma2, np.random.default_rng(0))
    k = pack_kappa(inst.scene)
    init = JlboInit(perturb(k.kappa, k.layout, np.random.default_rng(1)), inst.gains.g.ravel(),
                    inst.bf)
    state = run_jlbo(sim, init, inst.var_g, inst.var_h, inst.cfg,
                     JlboLimits(max_iters=2, bf_rounds=2, beam_mode=mode, damping=1.0),
                     np.random.default_rng(2), truth=inst.scene)
    assert 1 <= len(state.history) <= 2
    rec = state.history[-1]
    assert np.isfinite(rec.residual) and np.isfinite(rec.crlb_total) and rec.crlb_total > 0
    if mode == "fixed-ris":
        np.testing.assert_array_equal(state.bf.theta, inst.bf.theta)
    np.testing.assert_allclose(np.abs(state.bf.theta), 1.0, atol=1e-15)


def test_step_failure_carries_partial_state():
    inst = Instance(0, l1=2, l2=2, n_pilots=1, n_subcarriers_per_bs=1, n_ue_antennas=1)
    sim = Simulator.create(inst.scene, inst.gains, inst.cfg, 0.0, inst.rng)
    k = pack_kappa(inst.scene).kappa
    init = JlboInit(k + 0.1, inst.gains.g.ravel(), inst.bf)
    with pytest.raises(JlboStepError) as err:
        run_jlbo(sim, init, inst.var_g, inst.var_h, inst.cfg, JlboLimits(beam_mode="frozen"))
    assert err.value.iteration == 1
    assert err.value.state.history == []
    assert err.value.state.diagnostics


def test_unknown_beam_mode_rejected(small):
    sim = Simulator.create(small.scene, small.gains, small.cfg, 0.0, small.rng)
    init = perturbed_init(small.scene, small.cfg, small.var_g, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_jlbo(sim, init, small.var_g, small.var_h, small.cfg, JlboLimits(beam_mode="magic"))


def test_perturbed_init_respects_radii(small):
    rng = np.random.default_rng(0)
    init = perturbed_init(small.scene, small.cfg, small.var_g, rng, 2.0, 0.1)
    k = pack_kappa(small.scene)
    d = init.kappa - k.kappa
    ang = [k.layout.varphi, k.layout.omega]
    assert np.abs(d[ang]).max() <= 0.1
    assert np.abs(np.delete(d, ang)).max() <= 2.0
    bf = random_beamforming(small.cfg, rng)
    assert init.bf.w.shape == bf.w.shape
