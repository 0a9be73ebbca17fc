"""Pilot schedule, received-signal simulation and the structured models.

The stacked observation is ordered BS-major, then the BS's subcarriers in
schedule order, then pilot symbol, then UE antenna (fastest).  The received
signal is bilinear in the path gains::

    y = Gamma(kappa, g) h + n = Lambda(kappa, h) g + n

``Gamma`` and ``Lambda`` are block diagonal over base stations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import (ArrayConfig, GainRealization, assemble_channels, delay_phase_rate,
                      steering_matrix)
from .geometry import (PathParamGradients, Scene, pack_kappa, path_param_gradients, path_params,
                       unpack_kappa)


def subcarrier_schedule(n: int, n_bs: int, n_sub: int) -> list[int]:
    """Subcarriers of BS ``n`` (1-based): ``n, n + N, ..., n + (NS - 1) N``."""
    if not 1 <= n <= n_bs:
        raise ValueError(f"BS index {n} outside 1..{n_bs}")
    return [n + s * n_bs for s in range(n_sub)]


@dataclass
class BeamformingState:
    """Transmit beams ``w[n, s, m]`` (length NT) and RIS phases ``theta``."""

    w: np.ndarray  # (N, NS, M, NT)
    theta: np.ndarray  # (NR,)

    def copy(self) -> "BeamformingState":
        return BeamformingState(self.w.copy(), self.theta.copy())


def random_beams(cfg: ArrayConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.n_bs, cfg.n_subcarriers_per_bs, cfg.n_pilots, cfg.n_bs_antennas)
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def random_phases(cfg: ArrayConfig, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * rng.uniform(-np.pi, np.pi, cfg.n_ris_elements))


def random_beamforming(cfg: ArrayConfig, rng: np.random.Generator) -> BeamformingState:
    """Unit-norm transmit beams and unit-modulus RIS phases."""
    return BeamformingState(random_beams(cfg, rng), random_phases(cfg, rng))


@dataclass
class ObservationBlock:
    y: np.ndarray
    sigma2: float
    t: int = 0


def noiseless_signal(scene: Scene, gains: GainRealization, bf: BeamformingState,
                     cfg: ArrayConfig) -> np.ndarray:
    """``H_n Theta G_n w`` stacked, computed from the explicit channel matrices."""
    pp = path_params(scene)
    out = []
    for n in range(cfg.n_bs):
        for s, j in enumerate(subcarrier_schedule(n + 1, cfg.n_bs, cfg.n_subcarriers_per_bs)):
            ch = assemble_channels(scene, gains, cfg, n, j, pp)
            rx = ch.H @ (bf.theta[:, None] * (ch.G @ bf.w[n, s].T))  # (NU, M)
            out.append(rx.T.ravel())
    return np.concatenate(out) if out else np.zeros(0, complex)


def complex_noise(n: int, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    return np.sqrt(sigma2 / 2.0) * (z[:, 0] + 1j * z[:, 1])


def simulate_rx(scene: Scene, gains: GainRealization, bf: BeamformingState, cfg: ArrayConfig,
                sigma2: float, rng: np.random.Generator | None = None, t: int = 0,
                noise: np.ndarray | None = None) -> ObservationBlock:
    """Received pilots plus ``CN(0, sigma2)`` noise.

    Pass ``noise`` to reuse a realization (the same slot re-observed with new
    beams); otherwise it is drawn from ``rng``.
    """
    y = noiseless_signal(scene, gains, bf, cfg)
    if noise is None and sigma2 > 0:
        if rng is None:
            raise ValueError("rng required when sigma2 > 0")
        noise = complex_noise(y.size, sigma2, rng)
    if noise is not None:
        y = y + noise
    return ObservationBlock(y, float(sigma2), t)


# ---------------------------------------------------------------- block model


@dataclass
class BlockTerms:
    """Kernel outputs stacked over blocks: leading axes ``(N, NS)``."""

    gamma: np.ndarray  # (N, NS, B, M, NU, P2)
    lam: np.ndarray  # (N, NS, B, M, NU, P1)
    xi: np.ndarray | None  # (..., P2, K)
    psi: np.ndarray | None  # (..., P1, K)


def _block_inputs(scene, cfg, pp, n, s):
    j = subcarrier_schedule(n + 1, cfg.n_bs, cfg.n_subcarriers_per_bs)[s]
    at, dat = steering_matrix("bs_tx", pp.aod_bs[n], j, cfg)
    ar, dar = steering_matrix("ris_rx", pp.aoa_ris[n], j, cfg)
    ard, dard = steering_matrix("ris_tx", pp.aod_ris[n], j, cfg)
    au, dau = steering_matrix("ue_rx", pp.aoa_ue[n], j, cfg)
    rate = delay_phase_rate(j, cfg)
    nt, nr, nu = cfg.n_bs_antennas, cfg.n_ris_elements, cfg.n_ue_antennas
    ph1 = np.sqrt(nt * nr) * np.exp(-1j * rate * pp.toa_bs_ris[n])
    ph2 = np.sqrt(nr * nu) * np.exp(-1j * rate * pp.toa_ris_ue[n])
    return at, dat, ar, dar, ard, dard, au, dau, rate, ph1, ph2


@dataclass
class BlockGeometry:
    """Steering matrices and path-parameter gradients for a fixed scene.

    Reuse one instance while only the beams or RIS phases change.
    """

    inputs: list  # [n][s] -> _block_inputs tuple
    grads: PathParamGradients | None


def prepare_blocks(scene: Scene, cfg: ArrayConfig, derivs: bool = True,
                   grads: PathParamGradients | None = None) -> BlockGeometry:
    pp = path_params(scene)
    grads = path_param_gradients(scene) if (derivs and grads is None) else grads
    inputs = [[_block_inputs(scene, cfg, pp, n, s) for s in range(cfg.n_subcarriers_per_bs)]
              for n in range(cfg.n_bs)]
    return BlockGeometry(inputs, grads)


def evaluate_blocks(scene: Scene, g, h, w, theta, cfg: ArrayConfig, derivs: bool = True,
                    linear_in: str | None = None,
                    grads: PathParamGradients | None = None,
                    geometry: BlockGeometry | None = None) -> BlockTerms:
    """Run the block kernel over every (BS, subcarrier) pair.

    ``linear_in`` selects what the pilot axis and batch axis mean:

    * ``None``: pilots are the beams in ``w``; batch of one for ``theta``.
    * ``"w"``: pilot axis indexes unit transmit vectors, so each output is the
      linear map from a beam to the quantity (``M`` becomes ``NT``).
    * ``"theta"``: batch axis indexes unit RIS-phase vectors (``B = NR``).

    ``geometry`` from :func:`prepare_blocks` skips the scene-dependent setup.
    """
    if geometry is None or (derivs and geometry.grads is None):
        geometry = prepare_blocks(scene, cfg, derivs, grads)
    grads = geometry.grads
    g = np.asarray(g, dtype=complex).reshape(cfg.n_bs, -1)
    h = np.asarray(h, dtype=complex).reshape(cfg.n_bs, -1)
    theta = np.asarray(theta, dtype=complex)
    zero = np.zeros((0, 0))
    rows = []
    for n in range(cfg.n_bs):
        per_s = []
        for s in range(cfg.n_subcarriers_per_bs):
            at, dat, ar, dar, ard, dard, au, dau, rate, ph1, ph2 = geometry.inputs[n][s]
            if linear_in == "w":
                x1 = np.ascontiguousarray(at.conj().T)
                dx1 = np.ascontiguousarray(dat.conj().T)
            else:
                wm = w[n, s].T  # (NT, M)
                x1 = at.conj().T @ wm
                dx1 = dat.conj().T @ wm
            if linear_in == "theta":
                # one batch entry per RIS element: conj(ard[t, q]) * ar[t, p]
                z = ard.conj()[:, :, None] * ar[:, None, :]
                zd = ard.conj()[:, :, None] * dar[:, None, :]
                zb = dard.conj()[:, :, None] * ar[:, None, :]
            else:
                tar = theta[:, None] * ar
                tdar = theta[:, None] * dar
                z = (ard.conj().T @ tar)[None]
                zd = (ard.conj().T @ tdar)[None]
                zb = (dard.conj().T @ tar)[None]
            if derivs:
                dv = (grads.toa_bs_ris[n], grads.aod_bs[n], grads.aoa_ris[n],
                      grads.toa_ris_ue[n], grads.aod_ris[n], grads.aoa_ue[n])
            else:
                dv = (zero,) * 6
            per_s.append(kernels.block_terms(
                au, dau, ph1, ph2, g[n], h[n], rate, x1, dx1,
                np.ascontiguousarray(z), np.ascontiguousarray(zd), np.ascontiguousarray(zb),
                *dv, derivs))
        rows.append(per_s)

    def stack(i):
        if rows[0][0][i] is None:
            return None
        return np.stack([np.stack([blk[i] for blk in per_s]) for per_s in rows])

    return BlockTerms(stack(0), stack(1), stack(2), stack(3))


def blocks_to_matrix(arr: np.ndarray) -> np.ndarray:
    """``(N, NS, M, NU, P, ...)`` block array to the block-diagonal matrix.

    Trailing axes beyond ``P`` are kept, giving e.g. ``(rows, N P, K)``.
    """
    n_bs, ns, m, nu, p = arr.shape[:5]
    tail = arr.shape[5:]
    per_bs = arr.reshape((n_bs, ns * m * nu, p) + tail)
    out = np.zeros((n_bs * ns * m * nu, n_bs * p) + tail, dtype=arr.dtype)
    rb = ns * m * nu
    for n in range(n_bs):
        out[n * rb:(n + 1) * rb, n * p:(n + 1) * p] = per_bs[n]
    return out


def scene_with_kappa2(kappa2, scene_fixed: Scene) -> Scene:
    return unpack_kappa(pack_kappa(scene_fixed).with_kappa2(kappa2), scene_fixed)


def scene_with_kappa1(kappa1, scene_fixed: Scene) -> Scene:
    return unpack_kappa(pack_kappa(scene_fixed).with_kappa1(kappa1), scene_fixed)


def build_gamma(kappa2, theta, w, g, scene_fixed: Scene, cfg: ArrayConfig) -> np.ndarray:
    """``Gamma`` with the RIS-side parameters ``kappa2`` substituted into ``scene_fixed``.

    Shape ``(N NS M NU, N (L2 + 1))``; column ``(n, l)`` is the received
    signal when only ``h[n, l] = 1``.
    """
    scene = scene_with_kappa2(kappa2, scene_fixed)
    h0 = np.zeros((cfg.n_bs, scene.n_paths_ris_ue + 1), complex)
    bt = evaluate_blocks(scene, g, h0, w, theta, cfg, derivs=False)
    return blocks_to_matrix(bt.gamma[:, :, 0])


def build_lambda(kappa1, theta, w, h, scene_fixed: Scene, cfg: ArrayConfig) -> np.ndarray:
    """``Lambda`` with the UE-side parameters ``kappa1`` substituted."""
    scene = scene_with_kappa1(kappa1, scene_fixed)
    g0 = np.zeros((cfg.n_bs, scene.n_paths_bs_ris + 1), complex)
    bt = evaluate_blocks(scene, g0, h, w, theta, cfg, derivs=False)
    return blocks_to_matrix(bt.lam[:, :, 0])


def observation_to_text(obs: ObservationBlock) -> str:
    head = f"# sigma2 = {float(obs.sigma2)!r}\n# t = {obs.t}\n"
    body = "".join(f"{i} {float(z.real)!r} {float(z.imag)!r}\n" for i, z in enumerate(obs.y))
    return head + body


def observation_from_text(text: str) -> ObservationBlock:
    sigma2, t, vals = 0.0, 0, {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            if key.strip() == "sigma2":
                sigma2 = float(val)
            elif key.strip() == "t":
                t = int(val)
            continue
        i, re, im = line.split()
        vals[int(i)] = complex(float(re), float(im))
    y = np.array([vals[i] for i in range(len(vals))], dtype=complex)
    return ObservationBlock(y, sigma2, t)
