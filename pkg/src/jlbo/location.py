"""Location estimation by damped Gauss-Newton on the structured residual.

The residual ``y - Gamma(kappa2) h`` (equivalently ``y - Lambda(kappa1) g``) is
linearized in ``kappa2``, in ``kappa1``, or in both at once, with the rest
held fixed.  Complex residuals are stacked as ``[Re; Im]`` so the update is
real.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig
from .geometry import KappaLayout, Scene, pack_kappa, path_param_gradients, unpack_kappa
from .signal import BeamformingState, evaluate_blocks


class RankDeficientError(RuntimeError):
    """The Jacobian lost column rank, so the location update is not identifiable."""


@dataclass(frozen=True)
class ArmijoParams:
    a: float = 1e-4
    shrink: float = 0.5
    initial: float = 1.0
    max_backtracks: int = 30


@dataclass
class LocationContext:
    """Everything held fixed while ``kappa`` moves."""

    template: Scene
    g: np.ndarray
    h: np.ndarray
    bf: BeamformingState
    cfg: ArrayConfig
    armijo: ArmijoParams = field(default_factory=ArmijoParams)
    precondition: bool = False
    rank_tol: float = 1e-10
    damping: float = 0.0

    @property
    def layout(self) -> KappaLayout:
        return KappaLayout.of(self.template)


@dataclass
class LocationIterate:
    kappa: np.ndarray
    objective: float
    step: float = 0.0
    iteration: int = 0
    direction_norm: float = 0.0
    stalled: bool = False


def _half_index(layout: KappaLayout, half: str) -> np.ndarray:
    if half == "kappa2":
        return layout.kappa2
    if half == "kappa1":
        return layout.kappa1
    if half == "joint":
        return np.arange(layout.size)
    raise ValueError(f"unknown half {half!r}")


def model_signal(kappa, ctx: LocationContext) -> np.ndarray:
    """Noiseless model ``Gamma(kappa) h`` at the full parameter vector ``kappa``."""
    scene = unpack_kappa(kappa, ctx.template)
    bt = evaluate_blocks(scene, ctx.g, ctx.h, ctx.bf.w, ctx.bf.theta, ctx.cfg, derivs=False)
    h = np.asarray(ctx.h).reshape(ctx.cfg.n_bs, -1)
    return np.einsum("nsbmrp,np->nsbmr", bt.gamma, h).ravel()


def model_signal_and_jacobian(kappa, ctx: LocationContext):
    """Signal and its complex Jacobian with respect to the full ``kappa``."""
    scene = unpack_kappa(kappa, ctx.template)
    bt = evaluate_blocks(scene, ctx.g, ctx.h, ctx.bf.w, ctx.bf.theta, ctx.cfg, derivs=True,
                         grads=path_param_gradients(scene))
    h = np.asarray(ctx.h).reshape(ctx.cfg.n_bs, -1)
    s = np.einsum("nsbmrp,np->nsbmr", bt.gamma, h).ravel()
    J = np.einsum("nsbmrpk,np->nsbmrk", bt.xi, h).reshape(s.size, -1)
    return s, J


def _jacobian_half(kappa_half, half, theta, w, g, h, scene_fixed, cfg):
    full = pack_kappa(scene_fixed)
    full = full.with_kappa2(kappa_half) if half == "kappa2" else full.with_kappa1(kappa_half)
    ctx = LocationContext(scene_fixed, g, h, BeamformingState(w, theta), cfg)
    _, J = model_signal_and_jacobian(full.kappa, ctx)
    return J[:, _half_index(full.layout, half)]


def jacobian_gamma_h(kappa2, theta, w, g, h, scene_fixed: Scene, cfg: ArrayConfig) -> np.ndarray:
    """``d (Gamma(kappa2) h) / d kappa2``, shape ``(rows, dim kappa2)``."""
    return _jacobian_half(kappa2, "kappa2", theta, w, g, h, scene_fixed, cfg)


def jacobian_lambda_g(kappa1, theta, w, g, h, scene_fixed: Scene, cfg: ArrayConfig) -> np.ndarray:
    """``d (Lambda(kappa1) g) / d kappa1``, shape ``(rows, dim kappa1)``."""
    return _jacobian_half(kappa1, "kappa1", theta, w, g, h, scene_fixed, cfg)


def realify(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=0)


def objective(kappa, y, ctx: LocationContext) -> float:
    r = y - model_signal(kappa, ctx)
    return float(np.vdot(r, r).real)


def sca_location_step(it: LocationIterate, y, ctx: LocationContext,
                      half: str = "kappa2") -> LocationIterate:
    """One Gauss-Newton step on ``half`` with Armijo backtracking."""
    idx = _half_index(ctx.layout, half)
    s, J = model_signal_and_jacobian(it.kappa, ctx)
    r = y - s
    f0 = float(np.vdot(r, r).real)
    Jr = realify(J[:, idx])
    rr = realify(r)
    scale = np.ones(idx.size)
    if ctx.precondition:
        norms = np.linalg.norm(Jr, axis=0)
        scale = np.where(norms > 0, 1.0 / norms, 1.0)
    eta_s, _, rank, sv = np.linalg.lstsq(Jr * scale, rr, rcond=ctx.rank_tol)
    if rank < idx.size:
        raise RankDeficientError(
            f"Jacobian of {half} has rank {rank} < {idx.size}; the location "
            "parameters are not identifiable from these pilots")
    if ctx.damping > 0:
        # Marquardt: (J^T J + mu diag(J^T J)) eta = J^T r, solved as augmented LS
        cn = np.linalg.norm(Jr * scale, axis=0)
        aug = np.vstack([Jr * scale, np.diag(np.sqrt(ctx.damping) * cn)])
        eta_s = np.linalg.lstsq(aug, np.concatenate([rr, np.zeros(idx.size)]),
                                rcond=ctx.rank_tol)[0]
    eta = eta_s * scale
    slope = float(-2.0 * rr @ (Jr @ eta))  # directional derivative of f
    eta_norm = float(np.linalg.norm(eta))
    if eta_norm == 0.0 or f0 == 0.0:
        return LocationIterate(it.kappa.copy(), f0, 0.0, it.iteration + 1, eta_norm)
    lam = ctx.armijo.initial
    for _ in range(ctx.armijo.max_backtracks + 1):
        cand = it.kappa.copy()
        cand[idx] += lam * eta
        try:
            f1 = objective(cand, y, ctx)
        except ValueError:  # step crossed a degenerate geometry
            f1 = np.inf
        if f1 <= f0 - ctx.armijo.a * lam * abs(slope):
            return LocationIterate(cand, f1, lam, it.iteration + 1, eta_norm)
        lam *= ctx.armijo.shrink
    return LocationIterate(it.kappa.copy(), f0, 0.0, it.iteration + 1, eta_norm, stalled=True)


@dataclass
class LocationResult:
    kappa: np.ndarray
    objective: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def estimate_location(y, init_kappa, ctx: LocationContext, tol: float = 1e-6,
                      max_iters: int = 100, schedule: str = "joint") -> LocationResult:
    """Gauss-Newton iterations on ``kappa`` until the objective settles.

    ``schedule="joint"`` linearizes in all of ``kappa`` at once.
    ``schedule="alternate"`` takes a ``kappa2`` step then a ``kappa1`` step per
    iteration; it is slower because the RIS and UE positions are strongly
    coupled through the direct-path delay.  Stops when the relative objective
    decrease drops below ``tol`` or every step stalls.
    """
    halves = ("joint",) if schedule == "joint" else ("kappa2", "kappa1")
    kappa = np.asarray(init_kappa, dtype=float).copy()
    f = objective(kappa, y, ctx)
    it = LocationIterate(kappa, f)
    trace = [(0, f, 0.0, 0.0)]
    ynorm = float(np.vdot(y, y).real) or 1.0
    converged = False
    for k in range(1, max_iters + 1):
        f_prev = it.objective
        steps = []
        cur = it
        for half in halves:
            cur = sca_location_step(cur, y, ctx, half)
            steps.append(cur)
        stalled = all(st.stalled for st in steps)
        it = LocationIterate(cur.kappa, cur.objective, cur.step, k,
                             max(st.direction_norm for st in steps), stalled)
        trace.append((k, it.objective, cur.step, it.direction_norm))
        if it.objective <= 1e-28 * ynorm:
            converged = True
            break
        if stalled:
            break
        if f_prev - it.objective <= tol * f_prev:
            converged = True
            break
    return LocationResult(it.kappa, it.objective, it.iteration, converged, trace)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "objective", "step", "direction_norm"])
    for row in trace:
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()
