"""CRLB-driven design of the transmit beams and the RIS phases.

Every FIM entry is a quadratic form in one transmit beam ``w[n, s, m]`` (and
in the RIS phase vector ``theta``).  Linearizing ``tr(F^{-1})`` in ``F`` at the
current point gives the surrogate::

    f_S(w) = C - sum_{n,s,m} w^H P_{n,s} w,    P = T^H (F^{-2})^T T / sigma2

with ``T`` the linear map from a beam to the FIM's square-root rows.  At the
touch point ``sum w^H P w`` equals the CRLB itself.  The surrogate is
maximized over unit-norm beams by the principal eigenvector, approached with
an Armijo step on the Rayleigh quotient.  For ``theta`` the unit-modulus
constraint is handled with a quadratic penalty whose weight doubles each
round, followed by a hard projection.  Each accepted update is finally
checked against the true CRLB and pulled back toward the previous iterate if
it would increase it, or if it would make the joint location problem
ill-conditioned (see :func:`design_beamforming`).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig
from .fim import (CrlbValue, crlb_from_parts, expected_fim, fim_parts, identifiability_condition,
                  inverse)
from .geometry import KappaLayout, Scene
from .signal import BeamformingState, evaluate_blocks, prepare_blocks

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSearchParams:
    armijo_a: float = 1e-4
    shrink: float = 0.5
    initial: float = 1.0
    max_backtracks: int = 30


@dataclass
class SurrogateQuadratic:
    """PSD matrices of the surrogate and the point where it touches the CRLB.

    ``matrices`` is ``(N, NS, NT, NT)`` for beams (shared by all pilots of a
    block) or ``(NR, NR)`` for RIS phases.
    """

    kind: str
    matrices: np.ndarray
    anchor: np.ndarray
    crlb: CrlbValue
    penalty: float = 0.0
    constant: float = 0.0

    def quadratic_terms(self, x) -> np.ndarray:
        """``x^H P x`` for each beam (or the single phase vector)."""
        if self.kind == "w":
            return np.einsum("nsmk,nskq,nsmq->nsm", x.conj(), self.matrices, x).real
        return np.array(np.vdot(x, self.matrices @ x).real)

    def value(self, x) -> float:
        return float(self.constant - self.quadratic_terms(x).sum())


def _curvature(parts, var_g, var_h, sigma2):
    """``F^{-2}`` blocks of both expected FIMs, and the CRLB there."""
    out = {}
    for half, var in (("kappa2", var_h), ("kappa1", var_g)):
        f = expected_fim(parts, var, sigma2, half)
        inv = inverse(f.fim)
        k2 = inv @ inv
        out[half] = (k2[:f.n_kappa, :f.n_kappa], k2[f.n_kappa:, f.n_kappa:])
    return out


def _gain_block_apply(arr, kg, n_bs):
    """Apply the per-BS diagonal block of ``kg`` along the last axis of ``arr[n]``."""
    p = arr.shape[-1]
    out = np.empty_like(arr)
    for n in range(n_bs):
        blk = kg[n * p:(n + 1) * p, n * p:(n + 1) * p]
        out[n] = arr[n] @ blk
    return out


def build_surrogate_w(scene: Scene, g, h, var_g, var_h, bf: BeamformingState, sigma2: float,
                      cfg: ArrayConfig, parts=None, geometry=None) -> SurrogateQuadratic:
    """Surrogate quadratic in the transmit beams at ``bf``."""
    lay = KappaLayout.of(scene)
    geometry = prepare_blocks(scene, cfg) if geometry is None else geometry
    parts = fim_parts(scene, g, h, bf, cfg, geometry) if parts is None else parts
    crlb = crlb_from_parts(parts, var_g, var_h, sigma2)
    curv = _curvature(parts, var_g, var_h, sigma2)
    lin = evaluate_blocks(scene, g, h, bf.w, bf.theta, cfg, derivs=True, linear_in="w",
                          geometry=geometry)
    var_g = np.asarray(var_g).reshape(cfg.n_bs, -1)
    var_h = np.asarray(var_h).reshape(cfg.n_bs, -1)
    # (N, NS, NT, NU, P, K): drop the unit batch axis
    sides = (
        (lin.xi[:, :, 0][..., lay.kappa2], lin.gamma[:, :, 0], var_h, curv["kappa2"]),
        (lin.psi[:, :, 0][..., lay.kappa1], lin.lam[:, :, 0], var_g, curv["kappa1"]),
    )
    P = 0
    for X, A, var, (kk, kg) in sides:
        P = P + np.einsum("nskrla,nl,nsqrla->nskq", X.conj(), var, X @ kk)
        P = P + np.einsum("nskrl,nsqrl->nskq", A.conj(), _gain_block_apply(A, kg, cfg.n_bs))
    P = P / sigma2
    P = 0.5 * (P + np.conj(np.swapaxes(P, -1, -2)))
    return SurrogateQuadratic("w", P, bf.w.copy(), crlb)


def build_surrogate_theta(scene: Scene, g, h, var_g, var_h, bf: BeamformingState, sigma2: float,
                          cfg: ArrayConfig, penalty: float, parts=None,
                          geometry=None) -> SurrogateQuadratic:
    """Surrogate quadratic in the RIS phases at ``bf``, with penalty weight ``penalty``."""
    if penalty < 0:
        raise ValueError("penalty weight must be non-negative")
    lay = KappaLayout.of(scene)
    geometry = prepare_blocks(scene, cfg) if geometry is None else geometry
    parts = fim_parts(scene, g, h, bf, cfg, geometry) if parts is None else parts
    crlb = crlb_from_parts(parts, var_g, var_h, sigma2)
    curv = _curvature(parts, var_g, var_h, sigma2)
    lin = evaluate_blocks(scene, g, h, bf.w, bf.theta, cfg, derivs=True, linear_in="theta",
                          geometry=geometry)
    var_g = np.asarray(var_g).reshape(cfg.n_bs, -1)
    var_h = np.asarray(var_h).reshape(cfg.n_bs, -1)
    sides = (
        (lin.xi[..., lay.kappa2], lin.gamma, var_h, curv["kappa2"]),
        (lin.psi[..., lay.kappa1], lin.lam, var_g, curv["kappa1"]),
    )
    P = 0
    for X, A, var, (kk, kg) in sides:
        P = P + np.einsum("nstmrla,nl,nsumrla->tu", X.conj(), var, X @ kk)
        P = P + np.einsum("nstmrl,nsumrl->tu", A.conj(), _gain_block_apply(A, kg, cfg.n_bs))
    P = P / sigma2
    P = 0.5 * (P + P.conj().T)
    return SurrogateQuadratic("theta", P, bf.theta.copy(), crlb, penalty=penalty)


# ---------------------------------------------------------------- updates


def rayleigh(P, x) -> float:
    return float(np.vdot(x, P @ x).real / np.vdot(x, x).real)


def rayleigh_gradient(P, x) -> np.ndarray:
    """Gradient (``2 d/d conj(x)``) of ``-x^H P x / ||x||^2``."""
    nx = np.vdot(x, x).real
    if nx == 0:
        return np.zeros_like(x)
    Px = P @ x
    return -2.0 * (nx * Px - np.vdot(x, Px).real * x) / nx ** 2


def principal_direction(P, ref) -> np.ndarray:
    """Unit principal eigenvector of ``P``, phase-aligned so ``v^H ref >= 0``.

    When ``v`` is orthogonal to ``ref`` the largest-magnitude entry is made
    real positive instead.
    """
    _, vecs = np.linalg.eigh(P)
    v = vecs[:, -1]
    c = np.vdot(v, ref)
    if abs(c) > 1e-12 * max(np.linalg.norm(ref), 1e-300):
        v = v * (c / abs(c))
    else:
        k = int(np.argmax(np.abs(v)))
        v = v * (np.abs(v[k]) / v[k])
    return v


@dataclass
class StepRecord:
    """One Armijo-controlled step: slope ``Re{d^H grad}`` and surrogate values."""

    slope: float
    before: float
    after: float
    step: float


@dataclass
class UpdateInfo:
    steps: list = field(default_factory=list)
    stalled: int = 0
    penalty_residual: float = 0.0
    penalty_rounds: int = 0


def _armijo(f, x, d, slope, f0, ls: LineSearchParams):
    lam = ls.initial
    for _ in range(ls.max_backtracks + 1):
        cand = x + lam * d
        f1 = f(cand)
        if f1 <= f0 + ls.armijo_a * lam * slope:
            return cand, f1, lam
        lam *= ls.shrink
    return None, f0, 0.0


def update_w(w_prev: np.ndarray, sur: SurrogateQuadratic,
             ls: LineSearchParams = LineSearchParams()):
    """Eigen-direction step with Armijo on the Rayleigh quotient, per beam."""
    w_new = w_prev.copy()
    info = UpdateInfo()
    n_bs, ns, m_count, _ = w_prev.shape
    for n in range(n_bs):
        for s in range(ns):
            P = sur.matrices[n, s]
            for m in range(m_count):
                w = w_prev[n, s, m]
                v = principal_direction(P, w)
                d = v - w
                grad = rayleigh_gradient(P, w)
                slope = float(np.vdot(d, grad).real)
                f0 = -rayleigh(P, w)
                if np.linalg.norm(d) <= 1e-14:
                    info.steps.append(StepRecord(slope, f0, f0, 0.0))
                    continue

                def f(x):
                    nx = np.linalg.norm(x)
                    return np.inf if nx == 0 else -rayleigh(P, x)

                cand, f1, lam = _armijo(f, w, d, slope, f0, ls)
                if cand is None:
                    info.stalled += 1
                    info.steps.append(StepRecord(slope, f0, f0, 0.0))
                    continue
                w_new[n, s, m] = cand / np.linalg.norm(cand)
                info.steps.append(StepRecord(slope, f0, f1, lam))
    return w_new, info


def _project_unit_modulus(theta, rng=None):
    mag = np.abs(theta)
    out = np.empty_like(theta)
    zero = mag == 0
    out[~zero] = theta[~zero] / mag[~zero]
    if zero.any():
        rng = np.random.default_rng(0) if rng is None else rng
        log.warning("re-randomizing %d zero-modulus RIS phases", int(zero.sum()))
        out[zero] = np.exp(1j * rng.uniform(-np.pi, np.pi, int(zero.sum())))
    return out


def update_theta(theta_prev: np.ndarray, sur: SurrogateQuadratic,
                 ls: LineSearchParams = LineSearchParams(), tol: float = 1e-3,
                 max_doublings: int = 30, rng=None):
    """Penalized eigen-direction steps, then projection to unit modulus.

    Each round takes an eigen-direction step and a modulus-restoring step
    (toward ``theta / |theta|``) on ``-NR rho(theta) + eta sum (|theta_i|-1)^2``,
    both Armijo-controlled, then doubles ``eta`` until the largest modulus
    error is below ``tol``.
    """
    P = sur.matrices
    nr = P.shape[0]
    eta = sur.penalty
    theta = theta_prev.astype(complex).copy()
    target = np.sqrt(nr) * principal_direction(P, theta)
    info = UpdateInfo()

    def objective(x, eta):
        nx = np.vdot(x, x).real
        if nx == 0:
            return np.inf
        return -nr * rayleigh(P, x) + eta * np.sum((np.abs(x) - 1.0) ** 2)

    def gradient(x, eta):
        mag = np.abs(x)
        pen = np.where(mag > 0, 2.0 * eta * (mag - 1.0) * x / np.where(mag > 0, mag, 1.0), 0)
        return nr * rayleigh_gradient(P, x) + pen

    for k in range(max_doublings + 1):
        mag = np.abs(theta)
        restore = np.where(mag > 0, theta / np.where(mag > 0, mag, 1.0), 0) - theta
        for d in (target - theta, restore):
            if np.linalg.norm(d) <= 1e-14:
                continue
            f0 = objective(theta, eta)
            slope = float(np.vdot(d, gradient(theta, eta)).real)
            if slope >= 0:
                continue
            cand, f1, lam = _armijo(lambda x: objective(x, eta), theta, d, slope, f0, ls)
            if cand is None:
                info.stalled += 1
                continue
            info.steps.append(StepRecord(slope, f0, f1, lam))
            theta = cand
        info.penalty_rounds = k + 1
        info.penalty_residual = float(np.max(np.abs(np.abs(theta) - 1.0)))
        if info.penalty_residual < tol:
            break
        eta *= 2.0
    return _project_unit_modulus(theta, rng), info


# ---------------------------------------------------------------- design loop


@dataclass
class DesignResult:
    bf: BeamformingState
    crlb: CrlbValue
    trace: list
    w_info: list
    theta_info: list


def _normalize_rows(w):
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def _safeguard(prev_x, cand_x, prev_value, cond_cap, evaluate, fix, ls: LineSearchParams):
    """Shrink ``cand - prev`` until the CRLB does not increase and the
    identifiability condition stays below ``cond_cap``."""
    s = 1.0
    for _ in range(ls.max_backtracks + 1):
        x = fix(prev_x + s * (cand_x - prev_x))
        val = evaluate(x)
        if val[0] <= prev_value and val[3] <= cond_cap:
            return x, val
        s *= ls.shrink
    return prev_x, None


def design_beamforming(scene: Scene, g, h, var_g, var_h, bf: BeamformingState, sigma2: float,
                       cfg: ArrayConfig, rounds: int = 5,
                       ls: LineSearchParams = LineSearchParams(),
                       penalty0: float | None = None, update_theta_too: bool = True,
                       condition_limit: float = 1e5, rng=None) -> DesignResult:
    """Alternate beam and RIS-phase updates for ``rounds`` inner rounds.

    The surrogate is blind to how the pilots of one block complement each
    other: its maximizer sends every pilot along the same eigenvector, which
    leaves the joint location problem unidentifiable.  Accepted updates must
    therefore keep the column-equilibrated condition number of the location
    Jacobian and gain designs below ``max(condition_limit, current value)``.
    """
    bf = bf.copy()
    geo = prepare_blocks(scene, cfg)
    parts = fim_parts(scene, g, h, bf, cfg, geo)
    crlb = crlb_from_parts(parts, var_g, var_h, sigma2)
    cond = identifiability_condition(parts)
    eta0 = 10.0 * abs(crlb.total) if penalty0 is None else penalty0
    trace = [(0, crlb.crlb1, crlb.crlb2, crlb.total, 0.0)]
    w_infos, t_infos = [], []

    def evaluate(w, theta):
        p = fim_parts(scene, g, h, BeamformingState(w, theta), cfg, geo)
        c = crlb_from_parts(p, var_g, var_h, sigma2)
        return c.total, c, p, identifiability_condition(p)

    for rnd in range(1, rounds + 1):
        sur = build_surrogate_w(scene, g, h, var_g, var_h, bf, sigma2, cfg, parts, geo)
        w_cand, winfo = update_w(bf.w, sur, ls)
        w_infos.append(winfo)
        w_new, val = _safeguard(bf.w, w_cand, crlb.total, max(condition_limit, cond),
                                lambda w: evaluate(w, bf.theta), _normalize_rows, ls)
        if val is not None:
            bf.w, crlb, parts, cond = w_new, val[1], val[2], val[3]

        resid = 0.0
        if update_theta_too:
            sur = build_surrogate_theta(scene, g, h, var_g, var_h, bf, sigma2, cfg, eta0, parts,
                                       geo)
            t_cand, tinfo = update_theta(bf.theta, sur, ls, rng=rng)
            t_infos.append(tinfo)
            resid = tinfo.penalty_residual
            t_new, val = _safeguard(bf.theta, t_cand, crlb.total, max(condition_limit, cond),
                                    lambda t: evaluate(bf.w, t), _project_unit_modulus, ls)
            if val is not None:
                bf.theta, crlb, parts, cond = t_new, val[1], val[2], val[3]
        trace.append((rnd, crlb.crlb1, crlb.crlb2, crlb.total, resid))
    return DesignResult(bf, crlb, trace, w_infos, t_infos)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["round", "crlb1", "crlb2", "total", "penalty_residual"])
    for row in trace:
        wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()
