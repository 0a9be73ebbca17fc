"""Outer block-coordinate loop: gains, beams, location, repeat.

One outer iteration:

1. ``h`` by least squares on ``Gamma(kappa, g)``, where ``g`` is the better of
   the previous estimate and a rank-one fit of the lifted gain products.
2. ``g`` by least squares on ``Lambda(kappa, h)``.
3. New beams and RIS phases (CRLB design, random, or frozen).
4. Re-observe the slot with the new beams.
5. ``kappa`` by Gauss-Newton from the previous estimate.

The loop stops when the relative change of the residual energy falls below
``tol`` or after ``max_iters`` iterations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .beamformer import LineSearchParams, design_beamforming
from .channel import ArrayConfig, GainRealization, sample_gains
from .estimation import ls_estimate
from .fim import crlb_total
from .geometry import GeometryError, KappaLayout, Scene, pack_kappa, unpack_kappa
from .location import LocationContext, RankDeficientError, estimate_location, model_signal_and_jacobian, realify
from .signal import (BeamformingState, ObservationBlock, build_gamma, build_lambda, complex_noise,
                     random_beamforming, simulate_rx)

log = logging.getLogger(__name__)

BEAM_MODES = ("design", "random", "fixed-ris", "frozen")


class AssumptionError(RuntimeError):
    """Raised when a run is refused because the pilot budget is too small."""

    def __init__(self, report: "AssumptionReport"):
        super().__init__(report.summary())
        self.report = report


class JlboStepError(RuntimeError):
    """A sub-step failed; ``state`` holds the history up to the failing iteration."""

    def __init__(self, message: str, iteration: int, state: "JlboState"):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


@dataclass
class AssumptionReport:
    dimension_ok: bool
    n_observations: int
    required_kappa1: int
    required_kappa2: int
    rank_ok: bool
    jacobian_rank: int
    n_kappa: int
    noise_zero_mean_ok: bool | None = None
    noise_mean_z: float | None = None

    @property
    def ok(self) -> bool:
        return self.dimension_ok and self.rank_ok and self.noise_zero_mean_ok is not False

    def summary(self) -> str:
        return (f"observations {self.n_observations} (need {self.required_kappa1} and "
                f"{self.required_kappa2}): {'ok' if self.dimension_ok else 'FAIL'}; "
                f"Jacobian rank {self.jacobian_rank}/{self.n_kappa}: "
                f"{'ok' if self.rank_ok else 'FAIL'}")


def dimension_requirement(cfg: ArrayConfig, l1: int, l2: int):
    """``(rows, need for kappa1 side, need for kappa2 side)`` of the pilot budget inequality."""
    rows = cfg.n_subcarriers_per_bs * cfg.n_ue_antennas * cfg.n_bs * cfg.n_pilots
    return rows, 2 * cfg.n_bs * (l1 + 1) + 3, 2 * cfg.n_bs * (l2 + 1) + 3


def noise_zero_mean_test(noise, sigma2: float, z_max: float = 4.0):
    """z-statistic of the sample mean of complex noise; passes when below ``z_max``."""
    noise = np.asarray(noise)
    if noise.size == 0 or sigma2 <= 0:
        return True, 0.0
    z = abs(noise.mean()) / np.sqrt(sigma2 / noise.size)
    return bool(z < z_max), float(z)


def validate_assumptions(cfg: ArrayConfig, probe: Scene, gains: GainRealization | None = None,
                         bf: BeamformingState | None = None, noise=None, sigma2: float = 0.0,
                         rng: np.random.Generator | None = None,
                         rank_tol: float = 1e-10) -> AssumptionReport:
    """Check the pilot budget arithmetically and the Jacobian rank on ``probe``."""
    l1, l2 = probe.n_paths_bs_ris, probe.n_paths_ris_ue
    rows, need1, need2 = dimension_requirement(cfg, l1, l2)
    dim_ok = cfg.n_pilots > 0 and rows >= need1 and rows >= need2
    lay = KappaLayout.of(probe)
    rank = 0
    if cfg.n_pilots > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        if gains is None:
            from .channel import prior_variances
            gains = sample_gains(*prior_variances(probe), rng)
        bf = random_beamforming(cfg, rng) if bf is None else bf
        ctx = LocationContext(probe, gains.g, gains.h, bf, cfg)
        try:
            _, J = model_signal_and_jacobian(pack_kappa(probe).kappa, ctx)
            rank = int(np.linalg.matrix_rank(realify(J), tol=None if rank_tol is None else
                                             rank_tol * np.linalg.norm(realify(J), 2)))
        except GeometryError:
            rank = 0
    report = AssumptionReport(dim_ok, rows, need1, need2, rank == lay.size, rank, lay.size)
    if noise is not None:
        report.noise_zero_mean_ok, report.noise_mean_z = noise_zero_mean_test(noise, sigma2)
    return report


@dataclass
class Simulator:
    """A quasi-static slot: fixed scene, gains and noise; beams may change.

    The noise realization is drawn once, so re-observing with new beams
    changes only the signal part.
    """

    scene: Scene
    gains: GainRealization
    cfg: ArrayConfig
    sigma2: float
    noise: np.ndarray

    @classmethod
    def create(cls, scene, gains, cfg, sigma2, rng) -> "Simulator":
        rows = cfg.n_rows
        noise = complex_noise(rows, sigma2, rng) if sigma2 > 0 else np.zeros(rows, complex)
        return cls(scene, gains, cfg, float(sigma2), noise)

    def observe(self, bf: BeamformingState) -> ObservationBlock:
        return simulate_rx(self.scene, self.gains, bf, self.cfg, self.sigma2, noise=self.noise)


@dataclass
class JlboInit:
    kappa: np.ndarray
    g: np.ndarray
    bf: BeamformingState


def perturbed_init(truth: Scene, cfg: ArrayConfig, var_g, rng: np.random.Generator,
                   position_radius: float = 5.0, angle_radius: float = 0.1) -> JlboInit:
    """Truth plus uniform noise, gains from the prior, random feasible beams."""
    k = pack_kappa(truth)
    lay = k.layout
    kappa = k.kappa.copy()
    is_angle = np.zeros(lay.size, bool)
    is_angle[[lay.varphi, lay.omega]] = True
    kappa[~is_angle] += rng.uniform(-position_radius, position_radius, int((~is_angle).sum()))
    kappa[is_angle] += rng.uniform(-angle_radius, angle_radius, int(is_angle.sum()))
    var_g = np.asarray(var_g)
    g0 = np.sqrt(var_g / 2) * (rng.standard_normal(var_g.shape) + 1j * rng.standard_normal(var_g.shape))
    return JlboInit(kappa, g0.ravel(), random_beamforming(cfg, rng))


@dataclass(frozen=True)
class JlboLimits:
    tol: float = 1e-5
    max_iters: int = 30
    location_iters: int = 10
    bf_rounds: int = 5
    beam_mode: str = "design"
    schedule: str = "joint"
    precondition: bool = False
    lifted_gains: bool = True
    damping: float = 0.0
    line_search: LineSearchParams = field(default_factory=LineSearchParams)


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    crlb_total: float
    nmse_position: float = np.nan
    nmse_kappa: float = np.nan
    position_error: float = np.nan
    wall_ms: float = 0.0
    residual_steps: tuple = ()


@dataclass
class JlboState:
    iteration: int
    kappa: np.ndarray
    g: np.ndarray
    h: np.ndarray
    bf: BeamformingState
    initial: IterationRecord
    history: list = field(default_factory=list)
    converged: bool = False
    diagnostics: list = field(default_factory=list)

    def outputs(self) -> dict:
        lay_kappa = self.kappa
        return {"kappa": lay_kappa, "w": self.bf.w, "h": self.h, "g": self.g, "theta": self.bf.theta}


def _truth_metrics(kappa, truth_kappa, layout: KappaLayout):
    if truth_kappa is None:
        return np.nan, np.nan, np.nan
    dx = kappa[layout.x] - truth_kappa[layout.x]
    nx = float(dx @ dx / (truth_kappa[layout.x] @ truth_kappa[layout.x]))
    dk = kappa - truth_kappa
    nk = float(dk @ dk / (truth_kappa @ truth_kappa))
    return nx, nk, float(np.sqrt(dx @ dx))


def _residual(y, kappa, g, h, bf, template, cfg):
    scene = unpack_kappa(kappa, template)
    lay = KappaLayout.of(template)
    G = build_gamma(kappa[lay.kappa2], bf.theta, bf.w, g, scene, cfg)
    r = y - G @ h
    return float(np.vdot(r, r).real)


def lifted_gain_estimate(y, kappa, bf: BeamformingState, template: Scene, cfg: ArrayConfig):
    """Gains from one linear solve on the outer product ``g h^T`` per BS.

    The signal is linear in ``q[n] = g[n] h[n]^T``; the least-squares ``q`` is
    reduced to its best rank-one factor.  The split of scale between ``g``
    and ``h`` is arbitrary; ``g`` gets unit-norm singular-vector scaling
    times ``sqrt(s_max)``, and so does ``h``.
    """
    scene = unpack_kappa(kappa, template)
    lay = KappaLayout.of(template)
    p1, p2 = template.n_paths_bs_ris + 1, template.n_paths_ris_ue + 1
    cols = []
    for l1 in range(p1):
        e = np.zeros((cfg.n_bs, p1), complex)
        e[:, l1] = 1.0
        cols.append(build_gamma(kappa[lay.kappa2], bf.theta, bf.w, e, scene, cfg))
    # column order: (l1, n, l2) -> reorder to (n, l1, l2)
    A = np.stack(cols, axis=1).reshape(y.size, p1, cfg.n_bs, p2)
    A = A.transpose(0, 2, 1, 3).reshape(y.size, -1)
    q = ls_estimate(y, A).estimate.reshape(cfg.n_bs, p1, p2)
    g = np.empty((cfg.n_bs, p1), complex)
    h = np.empty((cfg.n_bs, p2), complex)
    for n in range(cfg.n_bs):
        u, sv, vh = np.linalg.svd(q[n])
        g[n] = np.sqrt(sv[0]) * u[:, 0]
        h[n] = np.sqrt(sv[0]) * vh[0]
    return g.ravel(), h.ravel()


def run_jlbo(sim: Simulator, init: JlboInit, var_g, var_h, cfg: ArrayConfig,
             limits: JlboLimits = JlboLimits(), rng: np.random.Generator | None = None,
             truth: Scene | None = None) -> JlboState:
    """Alternate gain, beam and location updates until the residual settles.

    ``truth`` only feeds the NMSE columns of the history.  Sub-step failures
    are re-raised with the iteration index; a location stall ends the run
    with ``converged=False``.
    """
    if limits.beam_mode not in BEAM_MODES:
        raise ValueError(f"beam_mode must be one of {BEAM_MODES}")
    rng = np.random.default_rng(0) if rng is None else rng
    template = unpack_kappa(init.kappa, sim.scene)
    lay = KappaLayout.of(template)
    truth_kappa = None if truth is None else pack_kappa(truth).kappa
    sigma2 = sim.sigma2 if sim.sigma2 > 0 else 1e-30  # CRLB needs a positive noise floor

    kappa = np.asarray(init.kappa, float).copy()
    g = np.asarray(init.g, complex).ravel().copy()
    bf = init.bf.copy()
    obs = sim.observe(bf)
    h = np.zeros(lay.n_bs * (template.n_paths_ris_ue + 1), complex)
    nx, nk, pe = _truth_metrics(kappa, truth_kappa, lay)
    state = JlboState(0, kappa, g, h, bf, IterationRecord(0, np.nan, np.nan, nx, nk, pe))
    ynorm = float(np.vdot(obs.y, obs.y).real) or 1.0
    prev_res = None
    for it in range(1, limits.max_iters + 1):
        t0 = time.perf_counter()
        try:
            scene_hat = unpack_kappa(kappa, template)
            r3, h = np.inf, None
            starts = [g]
            if limits.lifted_gains:
                starts.append(lifted_gain_estimate(obs.y, kappa, bf, template, cfg)[0])
            for g_start in starts:
                gam = build_gamma(kappa[lay.kappa2], bf.theta, bf.w, g_start, scene_hat, cfg)
                h_try = ls_estimate(obs.y, gam).estimate
                r_try = float(np.linalg.norm(obs.y - gam @ h_try) ** 2)
                if r_try < r3:
                    r3, h, g = r_try, h_try, g_start
            lam = build_lambda(kappa[lay.kappa1], bf.theta, bf.w, h, scene_hat, cfg)
            g = ls_estimate(obs.y, lam).estimate
            r4 = float(np.linalg.norm(obs.y - lam @ g) ** 2)

            crlb = None
            if limits.beam_mode in ("design", "fixed-ris"):
                res = design_beamforming(scene_hat, g, h, var_g, var_h, bf, sigma2, cfg,
                                         rounds=limits.bf_rounds, ls=limits.line_search,
                                         update_theta_too=limits.beam_mode == "design", rng=rng)
                bf, crlb = res.bf, res.crlb.total
            elif limits.beam_mode == "random":
                bf = random_beamforming(cfg, rng)
            obs = sim.observe(bf)

            ctx = LocationContext(template, g, h, bf, cfg, precondition=limits.precondition,
                                  damping=limits.damping)
            r6_before = _residual(obs.y, kappa, g, h, bf, template, cfg)
            loc = estimate_location(obs.y, kappa, ctx, max_iters=limits.location_iters,
                                    schedule=limits.schedule)
            kappa = loc.kappa
            residual = loc.objective
            if crlb is None:
                crlb = crlb_total(unpack_kappa(kappa, template), g, h, var_g, var_h, bf,
                                  sigma2, cfg).total
        except (RankDeficientError, GeometryError, np.linalg.LinAlgError) as exc:
            state.diagnostics.append(f"iteration {it}: {type(exc).__name__}: {exc}")
            raise JlboStepError(f"outer iteration {it}: {type(exc).__name__}: {exc}", it,
                                state) from exc
        nx, nk, pe = _truth_metrics(kappa, truth_kappa, lay)
        rec = IterationRecord(it, residual, float(crlb), nx, nk, pe,
                              1e3 * (time.perf_counter() - t0), (r3, r4, r6_before, residual))
        state.history.append(rec)
        state.iteration, state.kappa, state.g, state.h, state.bf = it, kappa, g, h, bf
        if residual <= 1e-28 * ynorm:
            state.converged = True
            break
        if prev_res is not None and abs(prev_res - residual) <= limits.tol * prev_res:
            state.converged = True
            break
        if not loc.converged and loc.trace and len(loc.trace) > 1 and loc.trace[-1][2] == 0.0:
            state.diagnostics.append(f"iteration {it}: location step stalled")
        prev_res = residual
    return state
