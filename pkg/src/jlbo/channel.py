"""Steering vectors, per-subcarrier gain matrices and the cascaded channels.

For BS ``n`` on subcarrier ``j``::

    G_n[j] = A_R diag(sqrt(NT NR) g e^{-i 2 pi j tau1 / (NS TS)}) A_T^H   (NR x NT)
    H_n[j] = A_U diag(sqrt(NR NU) h e^{-i 2 pi j tau2 / (NS TS)}) A_Rd^H  (NU x NR)

where ``A_Rd`` holds RIS steering vectors at the RIS departure angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import LIGHT_SPEED, PathParams, Scene, path_params

ROLES = ("bs_tx", "ris_rx", "ris_tx", "ue_rx")


@dataclass(frozen=True)
class ArrayConfig:
    n_bs: int = 2
    n_bs_antennas: int = 8
    n_ue_antennas: int = 2
    n_ris_elements: int = 16
    n_subcarriers_per_bs: int = 2
    n_pilots: int = 4
    carrier_hz: float = 28e9
    sample_period: float = 10e-9
    light_speed: float = LIGHT_SPEED
    spacing_bs: float | None = None
    spacing_ris: float | None = None
    spacing_ue: float | None = None
    steering_phase_factor: float = np.pi
    fixed_wavelength: bool = False

    def __post_init__(self):
        counts = (
            self.n_bs,
            self.n_bs_antennas,
            self.n_ue_antennas,
            self.n_ris_elements,
            self.n_subcarriers_per_bs,
        )
        if min(counts) < 1:
            raise ValueError(f"array counts must be >= 1, got {counts}")
        if self.n_pilots < 0:
            raise ValueError("n_pilots must be >= 0")

    @property
    def n_subcarriers_total(self) -> int:
        return self.n_bs * self.n_subcarriers_per_bs

    @property
    def carrier_wavelength(self) -> float:
        return self.light_speed / self.carrier_hz

    def spacing(self, role: str) -> float:
        explicit = {
            "bs_tx": self.spacing_bs,
            "ris_rx": self.spacing_ris,
            "ris_tx": self.spacing_ris,
            "ue_rx": self.spacing_ue,
        }[role]
        return explicit if explicit is not None else self.carrier_wavelength / 2.0

    def n_elements(self, role: str) -> int:
        return {
            "bs_tx": self.n_bs_antennas,
            "ris_rx": self.n_ris_elements,
            "ris_tx": self.n_ris_elements,
            "ue_rx": self.n_ue_antennas,
        }[role]

    @property
    def n_rows(self) -> int:
        """Length of the stacked observation vector."""
        return self.n_bs * self.n_subcarriers_per_bs * self.n_pilots * self.n_ue_antennas


def subcarrier_wavelength(j: int, cfg: ArrayConfig) -> float:
    """``c / (fc + j * df)`` with ``df = 1 / (total subcarriers * TS)``."""
    if cfg.fixed_wavelength:
        return cfg.carrier_wavelength
    df = 1.0 / (cfg.n_subcarriers_total * cfg.sample_period)
    return cfg.light_speed / (cfg.carrier_hz + j * df)


def delay_phase_rate(j: int, cfg: ArrayConfig) -> float:
    """Radians of phase per second of delay on subcarrier ``j``."""
    return 2.0 * np.pi * j / (cfg.n_subcarriers_per_bs * cfg.sample_period)


def steering_wavenumber(spacing: float, wavelength: float, phase_factor: float = np.pi) -> float:
    return phase_factor * spacing / wavelength


def steering_vector(angle, n_elements: int, spacing: float, wavelength: float,
                    phase_factor: float = np.pi) -> np.ndarray:
    """ULA response ``exp(-i k m sin(angle))``, ``m = 0..n-1``.

    ``angle`` may be an array; the element index becomes the leading axis.
    """
    k = steering_wavenumber(spacing, wavelength, phase_factor)
    m = np.arange(n_elements).reshape((-1,) + (1,) * np.ndim(angle))
    return np.exp(-1j * k * m * np.sin(angle))


def steering_matrix(role: str, angles, j: int, cfg: ArrayConfig):
    """Steering vectors for ``angles`` and their angle derivatives.

    Returns ``(A, dA)``, each ``(n_elements, len(angles))``.
    """
    lam = subcarrier_wavelength(j, cfg)
    k = steering_wavenumber(cfg.spacing(role), lam, cfg.steering_phase_factor)
    m = np.arange(cfg.n_elements(role))[:, None]
    angles = np.asarray(angles, dtype=float)[None, :]
    a = np.exp(-1j * k * m * np.sin(angles))
    da = a * (-1j * k * m * np.cos(angles))
    return a, da


def gain_diag(gains, delays, j: int, cfg: ArrayConfig, scale: float) -> np.ndarray:
    """``scale * diag(g_l exp(-i 2 pi j tau_l / (NS TS)))``."""
    gains = np.asarray(gains, dtype=complex)
    rate = delay_phase_rate(j, cfg)
    return np.diag(scale * gains * np.exp(-1j * rate * np.asarray(delays, dtype=float)))


def gain_variance(distance, exponent_offset: float = -6.14, shadow_db: float = -5.0) -> np.ndarray:
    """Log-distance path-loss variance ``10^(shadow/10) * 10^(offset - 2 log10 d)``."""
    d = np.asarray(distance, dtype=float)
    return 10.0 ** (shadow_db / 10.0) * 10.0 ** (exponent_offset - 2.0 * np.log10(d))


@dataclass
class GainRealization:
    """Complex path gains, each shaped ``(N, L + 1)``; stacked BS-major."""

    g: np.ndarray
    h: np.ndarray
    var_g: np.ndarray
    var_h: np.ndarray

    @property
    def g_vec(self) -> np.ndarray:
        return self.g.ravel()

    @property
    def h_vec(self) -> np.ndarray:
        return self.h.ravel()


def path_lengths(scene: Scene):
    pp = path_params(scene)
    return pp.toa_bs_ris * scene.light_speed, pp.toa_ris_ue * scene.light_speed


def prior_variances(scene: Scene):
    """Per-path gain variances from the path lengths of ``scene``."""
    d1, d2 = path_lengths(scene)
    return gain_variance(d1), gain_variance(d2)


def sample_gains(var_g, var_h, rng: np.random.Generator) -> GainRealization:
    """Circularly-symmetric complex Gaussian gains with the given variances."""
    var_g = np.asarray(var_g, dtype=float)
    var_h = np.asarray(var_h, dtype=float)

    def cn(var):
        z = rng.standard_normal(var.shape + (2,))
        return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])

    return GainRealization(cn(var_g), cn(var_h), var_g, var_h)


@dataclass
class ChannelRealization:
    """Channel matrices for one BS on one subcarrier."""

    n: int
    j: int
    G: np.ndarray
    H: np.ndarray
    gains: GainRealization


def assemble_channels(scene: Scene, gains: GainRealization, cfg: ArrayConfig, n: int, j: int,
                      pp: PathParams | None = None) -> ChannelRealization:
    """``G_n[j]`` and ``H_n[j]`` for the zero-based BS index ``n``."""
    pp = path_params(scene) if pp is None else pp
    nt, nr, nu = cfg.n_bs_antennas, cfg.n_ris_elements, cfg.n_ue_antennas
    at, _ = steering_matrix("bs_tx", pp.aod_bs[n], j, cfg)
    ar, _ = steering_matrix("ris_rx", pp.aoa_ris[n], j, cfg)
    ard, _ = steering_matrix("ris_tx", pp.aod_ris[n], j, cfg)
    au, _ = steering_matrix("ue_rx", pp.aoa_ue[n], j, cfg)
    dg = gain_diag(gains.g[n], pp.toa_bs_ris[n], j, cfg, np.sqrt(nt * nr))
    dh = gain_diag(gains.h[n], pp.toa_ris_ue[n], j, cfg, np.sqrt(nr * nu))
    G = ar @ dg @ at.conj().T
    H = au @ dh @ ard.conj().T
    return ChannelRealization(n, j, G, H, gains)


def complex_to_text(values) -> str:
    """Dump a complex array as ``index real imag`` lines (flattened C order)."""
    v = np.ravel(np.asarray(values, dtype=complex))
    return "".join(f"{i} {float(z.real)!r} {float(z.imag)!r}\n" for i, z in enumerate(v))


def complex_from_text(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    out = np.zeros(len(rows), dtype=complex)
    for idx, re, im in rows:
        out[int(idx)] = complex(float(re), float(im))
    return out
