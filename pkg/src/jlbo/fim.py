"""Fisher information and Cramer-Rao bounds for the two halves of ``kappa``.

For the RIS side the unknowns are ``(kappa2, h)`` and the signal is
``Gamma(kappa2) h``; its Jacobian is ``D = [Xi h, Gamma]`` and the FIM is
``D^H D / sigma2``.  The UE side uses ``(kappa1, g)``, ``Lambda`` and ``Psi``.

The expected FIM averages over the random gains: its ``kappa`` block is
``sum_rows conj(Xi) Sigma Xi^T`` with ``Sigma = E[h* h^T]``, the gain block
is ``Gamma^H Gamma`` and the cross blocks vanish because the gains have zero
mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, delay_phase_rate, steering_matrix, steering_wavenumber, \
    subcarrier_wavelength
from .geometry import KappaLayout, Scene, path_param_gradients, path_params
from .signal import BeamformingState, blocks_to_matrix, evaluate_blocks, subcarrier_schedule

RIDGE_COND = 1e12
RIDGE_SCALE = 1e-12


class SingularFimError(RuntimeError):
    """FIM stays singular after the ridge floor; more pilots are needed."""


# ---------------------------------------------------------------- derivative vectors


@dataclass
class DerivativeVectors:
    """Log-derivative of one phasor entry w.r.t. one half of ``kappa``.

    ``p``: position block (RIS position for ``kappa2``, UE position for
    ``kappa1``); ``o``: orientation; ``q``: the scatterer block, non-zero only
    on the entries of the path's own scatterer.
    """

    p: np.ndarray
    o: complex
    q: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.p, [self.o], self.q])


def _split(vec) -> DerivativeVectors:
    return DerivativeVectors(vec[:2].copy(), complex(vec[2]), vec[3:].copy())


def mu_phasor(scene: Scene, cfg: ArrayConfig, n: int, s: int, l: int, r: int, t: int) -> complex:
    """RIS-side phasor: ``sqrt(NR NU) e^{-i rate tau2} conj(a_Rd[t]) a_U[r]``.

    ``n``, ``s`` (schedule position), ``l``, ``r``, ``t`` are zero-based.
    """
    pp = path_params(scene)
    j = subcarrier_schedule(n + 1, cfg.n_bs, cfg.n_subcarriers_per_bs)[s]
    ard, _ = steering_matrix("ris_tx", pp.aod_ris[n, l:l + 1], j, cfg)
    au, _ = steering_matrix("ue_rx", pp.aoa_ue[n, l:l + 1], j, cfg)
    rate = delay_phase_rate(j, cfg)
    amp = np.sqrt(cfg.n_ris_elements * cfg.n_ue_antennas)
    return complex(amp * np.exp(-1j * rate * pp.toa_ris_ue[n, l]) * np.conj(ard[t, 0]) * au[r, 0])


def mu_bar_phasor(scene: Scene, cfg: ArrayConfig, theta, h, n: int, s: int, l: int, r: int,
                  t: int) -> complex:
    """UE-side phasor: ``sqrt(NR NT) e^{-i rate tau1} conj(a_T[t]) [H Theta a_R]_r``."""
    pp = path_params(scene)
    j = subcarrier_schedule(n + 1, cfg.n_bs, cfg.n_subcarriers_per_bs)[s]
    rate = delay_phase_rate(j, cfg)
    at, _ = steering_matrix("bs_tx", pp.aod_bs[n, l:l + 1], j, cfg)
    ar, _ = steering_matrix("ris_rx", pp.aoa_ris[n, l:l + 1], j, cfg)
    ard, _ = steering_matrix("ris_tx", pp.aod_ris[n], j, cfg)
    au, _ = steering_matrix("ue_rx", pp.aoa_ue[n], j, cfg)
    hp = np.sqrt(cfg.n_ris_elements * cfg.n_ue_antennas) * np.asarray(h).reshape(cfg.n_bs, -1)[n] \
        * np.exp(-1j * rate * pp.toa_ris_ue[n])
    c = (au * hp) @ (ard.conj().T @ (np.asarray(theta) * ar[:, 0]))
    amp = np.sqrt(cfg.n_ris_elements * cfg.n_bs_antennas)
    return complex(amp * np.exp(-1j * rate * pp.toa_bs_ris[n, l]) * np.conj(at[t, 0]) * c[r])


def derivative_vectors(scene: Scene, cfg: ArrayConfig, half: str, n: int, s: int, l: int,
                       r: int, t: int, theta=None, h=None) -> DerivativeVectors:
    """``d log(phasor) / d kappa_half`` for one antenna/element pair.

    ``half="kappa2"`` differentiates :func:`mu_phasor` (element ``t`` of the RIS);
    ``half="kappa1"`` differentiates :func:`mu_bar_phasor` (BS antenna ``t``),
    which also needs the RIS phases and the RIS-UE gains.
    """
    lay = KappaLayout.of(scene)
    pp = path_params(scene)
    gr = path_param_gradients(scene)
    j = subcarrier_schedule(n + 1, cfg.n_bs, cfg.n_subcarriers_per_bs)[s]
    rate = delay_phase_rate(j, cfg)
    lam = subcarrier_wavelength(j, cfg)
    pf = cfg.steering_phase_factor

    if half == "kappa2":
        k_r = steering_wavenumber(cfg.spacing("ris_tx"), lam, pf)
        k_u = steering_wavenumber(cfg.spacing("ue_rx"), lam, pf)
        full = (-1j * rate * gr.toa_ris_ue[n, l]
                + 1j * k_r * t * np.cos(pp.aod_ris[n, l]) * gr.aod_ris[n, l]
                - 1j * k_u * r * np.cos(pp.aoa_ue[n, l]) * gr.aoa_ue[n, l])
        return _split(full[lay.kappa2])

    if half != "kappa1":
        raise ValueError(f"unknown half {half!r}")
    if theta is None or h is None:
        raise ValueError("kappa1 derivative vectors need theta and h")
    k_t = steering_wavenumber(cfg.spacing("bs_tx"), lam, pf)
    own = (-1j * rate * gr.toa_bs_ris[n, l]
           + 1j * k_t * t * np.cos(pp.aod_bs[n, l]) * gr.aod_bs[n, l])
    ar, dar = steering_matrix("ris_rx", pp.aoa_ris[n, l:l + 1], j, cfg)
    ard, dard = steering_matrix("ris_tx", pp.aod_ris[n], j, cfg)
    au, dau = steering_matrix("ue_rx", pp.aoa_ue[n], j, cfg)
    theta = np.asarray(theta)
    hp = np.sqrt(cfg.n_ris_elements * cfg.n_ue_antennas) * np.asarray(h).reshape(cfg.n_bs, -1)[n] \
        * np.exp(-1j * rate * pp.toa_ris_ue[n])
    z = ard.conj().T @ (theta * ar[:, 0])
    zd = ard.conj().T @ (theta * dar[:, 0])
    zb = dard.conj().T @ (theta * ar[:, 0])
    c = np.sum(au[r] * hp * z)
    dc = (np.sum(au[r] * hp * z * (-1j * rate) * gr.toa_ris_ue[n].T, axis=1)
          + np.sum(dau[r] * hp * z * gr.aoa_ue[n].T, axis=1)
          + np.sum(au[r] * hp * zb * gr.aod_ris[n].T, axis=1)
          + np.sum(au[r] * hp * zd) * gr.aoa_ris[n, l])
    full = own + dc / c
    return _split(full[lay.kappa1])


# ---------------------------------------------------------------- FIM assembly


@dataclass
class FimParts:
    """Everything the FIMs need at one operating point.

    ``xi``/``psi`` are block arrays ``(N, NS, M, NU, P, K_half)`` holding the
    derivative of each ``Gamma``/``Lambda`` entry w.r.t. its half of kappa.
    """

    gamma: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    j2: np.ndarray  # Xi h, (rows, K2)
    j1: np.ndarray  # Psi g, (rows, K1)


def fim_parts(scene: Scene, g, h, bf: BeamformingState, cfg: ArrayConfig,
              geometry=None) -> FimParts:
    lay = KappaLayout.of(scene)
    bt = evaluate_blocks(scene, g, h, bf.w, bf.theta, cfg, derivs=True, geometry=geometry)
    xi = bt.xi[:, :, 0][..., lay.kappa2]
    psi = bt.psi[:, :, 0][..., lay.kappa1]
    g = np.asarray(g).reshape(cfg.n_bs, -1)
    h = np.asarray(h).reshape(cfg.n_bs, -1)
    j2 = np.einsum("nsmrpk,np->nsmrk", xi, h).reshape(-1, lay.kappa2.size)
    j1 = np.einsum("nsmrpk,np->nsmrk", psi, g).reshape(-1, lay.kappa1.size)
    return FimParts(blocks_to_matrix(bt.gamma[:, :, 0]), blocks_to_matrix(bt.lam[:, :, 0]),
                    xi, psi, j2, j1)


def _equilibrated_condition(A: np.ndarray) -> float:
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        return np.inf
    sv = np.linalg.svd(A / norms, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf


def identifiability_condition(parts: FimParts) -> float:
    """Worst column-equilibrated condition number among the estimation problems.

    Covers the joint location Jacobian (both halves at once, gains fixed)
    and the two gain designs ``Gamma`` and ``Lambda``.
    """
    J = np.concatenate([parts.j1, parts.j2], axis=1)
    return max(_equilibrated_condition(np.concatenate([J.real, J.imag])),
               _equilibrated_condition(parts.gamma), _equilibrated_condition(parts.lam))


@dataclass
class FisherInfo:
    fim: np.ndarray
    sigma2: float
    half: str
    n_kappa: int


def _half_parts(parts: FimParts, half: str):
    if half == "kappa2":
        return parts.j2, parts.gamma, parts.xi
    if half == "kappa1":
        return parts.j1, parts.lam, parts.psi
    raise ValueError(f"unknown half {half!r}")


def fisher_information(parts: FimParts, sigma2: float, half: str = "kappa2") -> FisherInfo:
    """Instantaneous complex FIM ``D^H D / sigma2`` with ``D = [J_kappa, Gamma]``."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    J, A, _ = _half_parts(parts, half)
    D = np.hstack([J, A])
    F = D.conj().T @ D / sigma2
    return FisherInfo(0.5 * (F + F.conj().T), sigma2, half, J.shape[1])


def expected_fim(parts: FimParts, covariance, sigma2: float, half: str = "kappa2") -> FisherInfo:
    """Block-diagonal FIM averaged over zero-mean gains with ``E[x* x^T] = covariance``.

    ``covariance`` is either the per-path variances (independent gains) or a
    full PSD matrix in the stacked gain order.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    _, A, X = _half_parts(parts, half)
    cov = np.asarray(covariance)
    n_gain = X.shape[0] * X.shape[4]
    if cov.shape != (n_gain, n_gain):
        var = cov.reshape(X.shape[0], X.shape[4]).astype(float)
        if np.any(var < 0):
            raise ValueError("variances must be non-negative")
        kk = np.einsum("nsmrpk,np,nsmrpl->kl", X.conj(), var, X)
    else:
        cov = cov.astype(complex)
        if np.linalg.eigvalsh(0.5 * (cov + cov.conj().T)).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance is not positive semidefinite")
        Xm = blocks_to_matrix(X)
        kk = np.einsum("ipk,pq,iql->kl", Xm.conj(), cov, Xm)
    gg = A.conj().T @ A
    k = kk.shape[0]
    F = np.zeros((k + gg.shape[0],) * 2, dtype=complex)
    F[:k, :k] = kk
    F[k:, k:] = gg
    F /= sigma2
    return FisherInfo(0.5 * (F + F.conj().T), sigma2, half, k)


def _equilibration(F: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.abs(np.diag(F).real))
    return np.where(d > 0, d, 1.0)


def regularized(F: np.ndarray) -> np.ndarray:
    """Add the ridge floor when the condition number exceeds ``RIDGE_COND``.

    Condition number and ridge are measured after scaling ``F`` to unit
    diagonal, so the rule does not depend on the units of the parameters
    (metres and radians against path gains of order 1e-6).  In the original
    coordinates the ridge is ``RIDGE_SCALE * diag(F)``.
    """
    F = 0.5 * (F + F.conj().T)
    d = _equilibration(F)
    Fe = F / np.outer(d, d)
    ev = np.linalg.eigvalsh(Fe)
    if ev[-1] <= 0:
        raise SingularFimError("FIM has no positive eigenvalue; increase M or NS")
    if ev[0] <= 0 or ev[-1] / ev[0] > RIDGE_COND:
        eps = RIDGE_SCALE * np.trace(Fe).real / F.shape[0]
        F = F + eps * np.diag(d ** 2)
    return F


def inverse(F: np.ndarray) -> np.ndarray:
    Fr = regularized(F)
    d = _equilibration(Fr)
    inv = np.linalg.inv(Fr / np.outer(d, d)) / np.outer(d, d)
    return 0.5 * (inv + inv.conj().T)


def trace_inverse(F: np.ndarray) -> float:
    inv = inverse(F)
    if not np.all(np.isfinite(inv)) or np.any(np.diag(inv).real <= 0):
        raise SingularFimError("FIM singular after the ridge floor; increase M or NS")
    return float(np.trace(inv).real)


@dataclass
class CrlbValue:
    crlb1: float
    crlb2: float
    total: float
    kappa_block1: float
    kappa_block2: float


def crlb_from_parts(parts: FimParts, var_g, var_h, sigma2: float) -> CrlbValue:
    """Both bounds from the expected FIMs; ``crlb1`` is the RIS-side one."""
    f1 = expected_fim(parts, var_h, sigma2, "kappa2")
    f2 = expected_fim(parts, var_g, sigma2, "kappa1")
    i1 = inverse(f1.fim)
    i2 = inverse(f2.fim)
    c1 = float(np.trace(i1).real)
    c2 = float(np.trace(i2).real)
    k1 = float(np.trace(i1[:f1.n_kappa, :f1.n_kappa]).real)
    k2 = float(np.trace(i2[:f2.n_kappa, :f2.n_kappa]).real)
    return CrlbValue(c1, c2, c1 + c2, k1, k2)


def crlb_total(scene: Scene, g_hat, h_hat, var_g, var_h, bf: BeamformingState, sigma2: float,
               cfg: ArrayConfig) -> CrlbValue:
    return crlb_from_parts(fim_parts(scene, g_hat, h_hat, bf, cfg), var_g, var_h, sigma2)


def real_fisher_information(parts: FimParts, sigma2: float, half: str = "kappa2") -> np.ndarray:
    """FIM for the real unknowns ``(kappa_half, Re gains, Im gains)``.

    This is the bound that applies to real-valued location estimates under
    circular Gaussian noise: ``2 Re(D^H D) / sigma2`` with
    ``D = [J_kappa, A, iA]``.
    """
    J, A, _ = _half_parts(parts, half)
    D = np.hstack([J, A, 1j * A])
    F = 2.0 * (D.conj().T @ D).real / sigma2
    return 0.5 * (F + F.T)


def kappa_block_crlb(F: np.ndarray, n_kappa: int) -> float:
    """Trace of the ``kappa`` block of ``F^{-1}`` (gains treated as nuisance)."""
    inv = inverse(F)
    return float(np.trace(inv[:n_kappa, :n_kappa]).real)
