"""2-D deployment geometry and the map from positions to path delays/angles.

Angles are measured from the +x axis with the sign taken from the y component
(``atan2``), then reduced by the orientation of the array that observes them.
Distances are plain Euclidean norms.

Parameter vector layout (all real)::

    kappa  = [r, u, varphi, omega, b, x]
    kappa1 = [x, varphi, r]        (UE side)
    kappa2 = [b, omega, u]         (RIS side)

``r`` stacks the BS-RIS scatterers path-major (path 1 for every BS, then path 2,
...), ``u`` does the same for the RIS-UE scatterers.  Only scattered paths own a
scatterer, so each block holds ``2 * N * L`` coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LIGHT_SPEED = 299_792_458.0
MIN_SEPARATION = 1.0
MAX_REDRAWS = 10_000


class GeometryError(ValueError):
    """Raised for degenerate geometry such as coincident path endpoints."""


def wrap_angle(a):
    """Reduce angles to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def direction_angle(v):
    """Angle of vector(s) ``v`` (last axis of length 2) from the +x axis."""
    v = np.asarray(v, dtype=float)
    return np.arctan2(v[..., 1], v[..., 0])


def direction_angle_grad(v):
    """Gradient of :func:`direction_angle` with respect to ``v``."""
    v = np.asarray(v, dtype=float)
    n2 = v[..., 0] ** 2 + v[..., 1] ** 2
    return np.stack([-v[..., 1] / n2, v[..., 0] / n2], axis=-1)


@dataclass
class Scene:
    bs_positions: np.ndarray  # (N, 2)
    bs_orientations: np.ndarray  # (N,)
    ris_position: np.ndarray  # (2,)
    ris_orientation: float
    ue_position: np.ndarray  # (2,)
    ue_orientation: float
    bs_ris_scatterers: np.ndarray  # (N, L1, 2)
    ris_ue_scatterers: np.ndarray  # (N, L2, 2)
    light_speed: float = LIGHT_SPEED

    def __post_init__(self):
        self.bs_positions = np.asarray(self.bs_positions, dtype=float).reshape(-1, 2)
        n = self.bs_positions.shape[0]
        self.bs_orientations = np.asarray(self.bs_orientations, dtype=float).reshape(n)
        self.ris_position = np.asarray(self.ris_position, dtype=float).reshape(2)
        self.ue_position = np.asarray(self.ue_position, dtype=float).reshape(2)
        self.ris_orientation = float(self.ris_orientation)
        self.ue_orientation = float(self.ue_orientation)
        self.bs_ris_scatterers = np.asarray(self.bs_ris_scatterers, dtype=float).reshape(n, -1, 2)
        self.ris_ue_scatterers = np.asarray(self.ris_ue_scatterers, dtype=float).reshape(n, -1, 2)

    @property
    def n_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def n_paths_bs_ris(self) -> int:
        """Scattered BS-RIS paths per BS (L1)."""
        return self.bs_ris_scatterers.shape[1]

    @property
    def n_paths_ris_ue(self) -> int:
        return self.ris_ue_scatterers.shape[1]

    def copy(self) -> "Scene":
        return replace(
            self,
            bs_positions=self.bs_positions.copy(),
            bs_orientations=self.bs_orientations.copy(),
            ris_position=self.ris_position.copy(),
            ue_position=self.ue_position.copy(),
            bs_ris_scatterers=self.bs_ris_scatterers.copy(),
            ris_ue_scatterers=self.ris_ue_scatterers.copy(),
        )


@dataclass
class PathParams:
    """Per-BS path delays and angles; path 0 is the direct (unscattered) one.

    Arrays are shaped ``(N, L1 + 1)`` for the BS-RIS hop and ``(N, L2 + 1)``
    for the RIS-UE hop.
    """

    toa_bs_ris: np.ndarray
    aod_bs: np.ndarray
    aoa_ris: np.ndarray
    toa_ris_ue: np.ndarray
    aod_ris: np.ndarray
    aoa_ue: np.ndarray


@dataclass
class PathParamGradients:
    """Derivatives of every :class:`PathParams` entry with respect to ``kappa``.

    Each array carries a trailing axis of length ``len(kappa)``.
    """

    toa_bs_ris: np.ndarray
    aod_bs: np.ndarray
    aoa_ris: np.ndarray
    toa_ris_ue: np.ndarray
    aod_ris: np.ndarray
    aoa_ue: np.ndarray


# ---------------------------------------------------------------- kappa layout


@dataclass(frozen=True)
class KappaLayout:
    n_bs: int
    l1: int
    l2: int

    @property
    def size(self) -> int:
        return 2 * self.n_bs * (self.l1 + self.l2) + 6

    def r_index(self, n: int, l: int) -> int:
        """Offset of scatterer ``r`` of BS ``n`` on scattered path ``l`` (1-based)."""
        return 2 * ((l - 1) * self.n_bs + n)

    def u_index(self, n: int, l: int) -> int:
        return 2 * self.n_bs * self.l1 + 2 * ((l - 1) * self.n_bs + n)

    @property
    def varphi(self) -> int:
        return 2 * self.n_bs * (self.l1 + self.l2)

    @property
    def omega(self) -> int:
        return self.varphi + 1

    @property
    def b(self) -> slice:
        return slice(self.varphi + 2, self.varphi + 4)

    @property
    def x(self) -> slice:
        return slice(self.varphi + 4, self.varphi + 6)

    @property
    def kappa1(self) -> np.ndarray:
        """Indices of ``[x, varphi, r]`` inside ``kappa``."""
        x0 = self.x.start
        return np.r_[x0, x0 + 1, self.varphi, np.arange(2 * self.n_bs * self.l1)]

    @property
    def kappa2(self) -> np.ndarray:
        """Indices of ``[b, omega, u]`` inside ``kappa``."""
        b0 = self.b.start
        u0 = 2 * self.n_bs * self.l1
        return np.r_[b0, b0 + 1, self.omega, u0 + np.arange(2 * self.n_bs * self.l2)]

    @classmethod
    def of(cls, scene: Scene) -> "KappaLayout":
        return cls(scene.n_bs, scene.n_paths_bs_ris, scene.n_paths_ris_ue)


@dataclass
class LocationParams:
    kappa: np.ndarray
    layout: KappaLayout = field(repr=False)

    @property
    def kappa1(self) -> np.ndarray:
        return self.kappa[self.layout.kappa1]

    @property
    def kappa2(self) -> np.ndarray:
        return self.kappa[self.layout.kappa2]

    def with_kappa1(self, k1) -> "LocationParams":
        k = self.kappa.copy()
        k[self.layout.kappa1] = k1
        return LocationParams(k, self.layout)

    def with_kappa2(self, k2) -> "LocationParams":
        k = self.kappa.copy()
        k[self.layout.kappa2] = k2
        return LocationParams(k, self.layout)


def pack_kappa(scene: Scene) -> LocationParams:
    lay = KappaLayout.of(scene)
    r = scene.bs_ris_scatterers.transpose(1, 0, 2).ravel()
    u = scene.ris_ue_scatterers.transpose(1, 0, 2).ravel()
    kappa = np.concatenate(
        [r, u, [scene.ris_orientation, scene.ue_orientation], scene.ris_position, scene.ue_position]
    )
    return LocationParams(kappa, lay)


def unpack_kappa(params, template: Scene) -> Scene:
    """Scene equal to ``template`` with every kappa-controlled field replaced."""
    lay = KappaLayout.of(template)
    kappa = np.asarray(params.kappa if isinstance(params, LocationParams) else params, dtype=float)
    if kappa.shape != (lay.size,):
        raise ValueError(f"kappa has shape {kappa.shape}, expected ({lay.size},)")
    n, l1, l2 = lay.n_bs, lay.l1, lay.l2
    r = kappa[: 2 * n * l1].reshape(l1, n, 2).transpose(1, 0, 2)
    u = kappa[2 * n * l1 : lay.varphi].reshape(l2, n, 2).transpose(1, 0, 2)
    return replace(
        template,
        bs_positions=template.bs_positions.copy(),
        bs_orientations=template.bs_orientations.copy(),
        ris_position=kappa[lay.b].copy(),
        ris_orientation=kappa[lay.varphi],
        ue_position=kappa[lay.x].copy(),
        ue_orientation=kappa[lay.omega],
        bs_ris_scatterers=r.copy(),
        ris_ue_scatterers=u.copy(),
    )


# ---------------------------------------------------------------- path params


def _checked_norm(v, what):
    d = np.linalg.norm(v, axis=-1)
    bad = np.argwhere(d <= 1e-9)
    if bad.size:
        raise GeometryError(f"coincident endpoints on {what} at index {tuple(bad[0])}")
    return d


def path_params(scene: Scene) -> PathParams:
    a = scene.bs_positions
    b = scene.ris_position
    x = scene.ue_position
    r = scene.bs_ris_scatterers
    u = scene.ris_ue_scatterers
    c = scene.light_speed
    phi = scene.bs_orientations[:, None]

    v_ab = b - a  # (N, 2)
    v_ar = r - a[:, None, :]  # (N, L1, 2)
    v_rb = b - r
    d_ab = _checked_norm(v_ab, "BS-RIS direct path")
    d_ar = _checked_norm(v_ar, "BS-scatterer segment")
    d_rb = _checked_norm(v_rb, "scatterer-RIS segment")
    toa1 = np.concatenate([d_ab[:, None], d_ar + d_rb], axis=1) / c
    aod_bs = np.concatenate([direction_angle(v_ab)[:, None], direction_angle(v_ar)], axis=1) - phi
    aoa_ris = (
        np.pi
        + np.concatenate([direction_angle(v_ab)[:, None], direction_angle(v_rb)], axis=1)
        - scene.ris_orientation
    )

    n = scene.n_bs
    v_bx = np.broadcast_to(x - b, (n, 2))
    v_bu = u - b
    v_ux = x - u
    d_bx = _checked_norm(v_bx, "RIS-UE direct path")
    d_bu = _checked_norm(v_bu, "RIS-scatterer segment")
    d_ux = _checked_norm(v_ux, "scatterer-UE segment")
    toa2 = np.concatenate([d_bx[:, None], d_bu + d_ux], axis=1) / c
    aod_ris = (
        np.concatenate([direction_angle(v_bx)[:, None], direction_angle(v_bu)], axis=1)
        - scene.ris_orientation
    )
    aoa_ue = (
        np.pi
        + np.concatenate([direction_angle(v_bx)[:, None], direction_angle(v_ux)], axis=1)
        - scene.ue_orientation
    )
    return PathParams(toa1, aod_bs, aoa_ris, toa2, aod_ris, aoa_ue)


def path_param_gradients(scene: Scene) -> PathParamGradients:
    """Analytic derivatives of :func:`path_params` with respect to ``kappa``."""
    lay = KappaLayout.of(scene)
    n, l1, l2, k = lay.n_bs, lay.l1, lay.l2, lay.size
    a = scene.bs_positions
    b = scene.ris_position
    x = scene.ue_position
    r = scene.bs_ris_scatterers
    u = scene.ris_ue_scatterers
    c = scene.light_speed
    bs, xs = lay.b, lay.x

    def unit(v):
        return v / np.linalg.norm(v)

    dtoa1 = np.zeros((n, l1 + 1, k))
    daod_bs = np.zeros((n, l1 + 1, k))
    daoa_ris = np.zeros((n, l1 + 1, k))
    dtoa2 = np.zeros((n, l2 + 1, k))
    daod_ris = np.zeros((n, l2 + 1, k))
    daoa_ue = np.zeros((n, l2 + 1, k))

    for i in range(n):
        v = b - a[i]
        dtoa1[i, 0, bs] = unit(v) / c
        ga = direction_angle_grad(v)
        daod_bs[i, 0, bs] = ga
        daoa_ris[i, 0, bs] = ga
        daoa_ris[i, 0, lay.varphi] = -1.0
        for l in range(1, l1 + 1):
            ri = lay.r_index(i, l)
            rs = slice(ri, ri + 2)
            v_ar = r[i, l - 1] - a[i]
            v_rb = b - r[i, l - 1]
            dtoa1[i, l, bs] = unit(v_rb) / c
            dtoa1[i, l, rs] = (unit(v_ar) - unit(v_rb)) / c
            daod_bs[i, l, rs] = direction_angle_grad(v_ar)
            g = direction_angle_grad(v_rb)
            daoa_ris[i, l, bs] = g
            daoa_ris[i, l, rs] = -g
            daoa_ris[i, l, lay.varphi] = -1.0

        v = x - b
        dtoa2[i, 0, xs] = unit(v) / c
        dtoa2[i, 0, bs] = -unit(v) / c
        g = direction_angle_grad(v)
        daod_ris[i, 0, xs] = g
        daod_ris[i, 0, bs] = -g
        daod_ris[i, 0, lay.varphi] = -1.0
        daoa_ue[i, 0, xs] = g
        daoa_ue[i, 0, bs] = -g
        daoa_ue[i, 0, lay.omega] = -1.0
        for l in range(1, l2 + 1):
            ui = lay.u_index(i, l)
            us = slice(ui, ui + 2)
            v_bu = u[i, l - 1] - b
            v_ux = x - u[i, l - 1]
            dtoa2[i, l, bs] = -unit(v_bu) / c
            dtoa2[i, l, us] = (unit(v_bu) - unit(v_ux)) / c
            dtoa2[i, l, xs] = unit(v_ux) / c
            g = direction_angle_grad(v_bu)
            daod_ris[i, l, us] = g
            daod_ris[i, l, bs] = -g
            daod_ris[i, l, lay.varphi] = -1.0
            g = direction_angle_grad(v_ux)
            daoa_ue[i, l, xs] = g
            daoa_ue[i, l, us] = -g
            daoa_ue[i, l, lay.omega] = -1.0
    return PathParamGradients(dtoa1, daod_bs, daoa_ris, dtoa2, daod_ris, daoa_ue)


# ---------------------------------------------------------------- sampling


def _min_pairwise(points: np.ndarray) -> float:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min()) if len(points) > 1 else np.inf


def sample_scene(
    n_bs: int,
    l1: int,
    l2: int,
    rng: np.random.Generator,
    region=(1000.0, 1000.0),
    light_speed: float = LIGHT_SPEED,
    min_separation: float = MIN_SEPARATION,
) -> Scene:
    """Uniform scene in ``[0, w] x [0, h]`` with a minimum pairwise separation."""
    w, h = (float(region[0]), float(region[1]))
    if w <= 0 or h <= 0:
        raise ValueError(f"region must have positive extent, got {region}")
    if n_bs < 1 or l1 < 0 or l2 < 0:
        raise ValueError("need n_bs >= 1 and non-negative path counts")
    scale = np.array([w, h])
    for _ in range(MAX_REDRAWS):
        a = rng.uniform(size=(n_bs, 2)) * scale
        b = rng.uniform(size=2) * scale
        x = rng.uniform(size=2) * scale
        r = rng.uniform(size=(n_bs, l1, 2)) * scale
        u = rng.uniform(size=(n_bs, l2, 2)) * scale
        orient = rng.uniform(-np.pi, np.pi, size=n_bs + 2)
        pts = np.vstack([a, b, x, r.reshape(-1, 2), u.reshape(-1, 2)])
        if _min_pairwise(pts) >= min_separation:
            return Scene(a, orient[:n_bs], b, orient[n_bs], x, orient[n_bs + 1], r, u, light_speed)
    raise GeometryError(f"no scene met the {min_separation} m separation after {MAX_REDRAWS} draws")


# ---------------------------------------------------------------- text format


def scene_to_text(scene: Scene) -> str:
    """Key-value document, one ``key = values`` line per field.

    Vectors are whitespace separated; point lists are flattened row-major.
    """

    def fmt(arr):
        return " ".join(repr(float(v)) for v in np.ravel(arr))

    lines = [
        f"n_bs = {scene.n_bs}",
        f"l1 = {scene.n_paths_bs_ris}",
        f"l2 = {scene.n_paths_ris_ue}",
        f"light_speed = {fmt(scene.light_speed)}",
        f"bs_positions = {fmt(scene.bs_positions)}",
        f"bs_orientations = {fmt(scene.bs_orientations)}",
        f"ris_position = {fmt(scene.ris_position)}",
        f"ris_orientation = {fmt(scene.ris_orientation)}",
        f"ue_position = {fmt(scene.ue_position)}",
        f"ue_orientation = {fmt(scene.ue_orientation)}",
        f"bs_ris_scatterers = {fmt(scene.bs_ris_scatterers)}",
        f"ris_ue_scatterers = {fmt(scene.ris_ue_scatterers)}",
    ]
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        kv[key.strip()] = val.split()

    def arr(key):
        return np.array([float(v) for v in kv[key]])

    n, l1, l2 = int(kv["n_bs"][0]), int(kv["l1"][0]), int(kv["l2"][0])
    return Scene(
        bs_positions=arr("bs_positions").reshape(n, 2),
        bs_orientations=arr("bs_orientations"),
        ris_position=arr("ris_position"),
        ris_orientation=arr("ris_orientation")[0],
        ue_position=arr("ue_position"),
        ue_orientation=arr("ue_orientation")[0],
        bs_ris_scatterers=arr("bs_ris_scatterers").reshape(n, l1, 2),
        ris_ue_scatterers=arr("ris_ue_scatterers").reshape(n, l2, 2),
        light_speed=arr("light_speed")[0],
    )
