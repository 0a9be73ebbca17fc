"""Seeded Monte Carlo sweeps, NMSE metrics and CSV/JSON/SVG output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig, prior_variances, sample_gains
from .driver import (AssumptionError, JlboInit, JlboLimits, JlboStepError, Simulator, run_jlbo,
                     validate_assumptions)
from .geometry import GeometryError, KappaLayout, pack_kappa, sample_scene
from .signal import BeamformingState, noiseless_signal, random_beams

log = logging.getLogger(__name__)

SWEEP_AXES = ("iterations", "n_ris", "snr", "bs_ris_distance")
ALGORITHMS = ("jlbo", "random", "fixed-ris")
CSV_FIELDS = ("trial", "seed", "sweep_value", "iteration", "algorithm", "nmse_position",
              "nmse_kappa", "crlb_total", "residual", "wall_ms")
_BEAM_MODE = {"jlbo": "design", "random": "random", "fixed-ris": "fixed-ris"}


@dataclass(frozen=True)
class SystemConfig:
    n_bs: int = 2
    n_bs_antennas: int = 8
    n_ue_antennas: int = 2
    n_ris_elements: int = 16
    n_subcarriers_per_bs: int = 2
    n_pilots: int = 4
    l1: int = 2
    l2: int = 2
    carrier_hz: float = 28e9
    sample_period: float = 10e-9
    region: tuple = (100.0, 100.0)
    snr_db: tuple = (15.0,)
    n_ris_values: tuple = (16, 32, 64)
    bs_ris_distances: tuple = (10.0, 20.0, 40.0, 80.0)
    trials: int = 50
    seed: int = 0
    sweep: str = "iterations"
    init_position_radius: float = 5.0
    init_angle_radius: float = 0.1
    tol: float = 1e-5
    max_iters: int = 6
    location_iters: int = 10
    bf_rounds: int = 5
    damping: float = 1.0
    baselines: tuple = ()
    steering_phase_factor: float = math.pi
    precondition: bool = False
    warn_only: bool = False
    timing: bool = False

    def array_config(self, n_ris: int | None = None) -> ArrayConfig:
        return ArrayConfig(n_bs=self.n_bs, n_bs_antennas=self.n_bs_antennas,
                           n_ue_antennas=self.n_ue_antennas,
                           n_ris_elements=self.n_ris_elements if n_ris is None else int(n_ris),
                           n_subcarriers_per_bs=self.n_subcarriers_per_bs,
                           n_pilots=self.n_pilots, carrier_hz=self.carrier_hz,
                           sample_period=self.sample_period,
                           steering_phase_factor=self.steering_phase_factor)

    def limits(self, algorithm: str) -> JlboLimits:
        return JlboLimits(tol=self.tol, max_iters=self.max_iters,
                          location_iters=self.location_iters, bf_rounds=self.bf_rounds,
                          beam_mode=_BEAM_MODE[algorithm], precondition=self.precondition,
                          damping=self.damping)

    @property
    def algorithms(self) -> tuple:
        return ("jlbo",) + tuple(b for b in self.baselines if b != "jlbo")

    def sweep_values(self) -> tuple:
        if self.sweep == "snr":
            return tuple(float(v) for v in self.snr_db)
        if self.sweep == "n_ris":
            return tuple(int(v) for v in self.n_ris_values)
        if self.sweep == "bs_ris_distance":
            return tuple(float(v) for v in self.bs_ris_distances)
        return (float(self.snr_db[0]),)

    def validate(self) -> None:
        counts = ("n_bs", "n_bs_antennas", "n_ue_antennas", "n_ris_elements",
                  "n_subcarriers_per_bs", "n_pilots", "trials", "max_iters")
        for name in counts:
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("path counts must be non-negative")
        if self.sweep not in SWEEP_AXES:
            raise ValueError(f"sweep must be one of {SWEEP_AXES}")
        for b in self.baselines:
            if b not in ALGORITHMS:
                raise ValueError(f"unknown baseline {b!r}; choose from random, fixed-ris")
        if min(self.region) <= 0:
            raise ValueError("region dimensions must be positive")
        if not self.snr_db:
            raise ValueError("at least one SNR value is required")

    def replace(self, **kw) -> "SystemConfig":
        return dataclasses.replace(self, **kw)


PROFILES = {
    "desk": SystemConfig(),
    "paper": SystemConfig(n_bs=5, n_bs_antennas=64, n_ue_antennas=4, n_ris_elements=32,
                          n_subcarriers_per_bs=4, n_pilots=8, l1=10, l2=8,
                          region=(1000.0, 1000.0), trials=200, max_iters=30),
}


# ---------------------------------------------------------------- config text


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], str) or not default and not _numeric(items):
            return tuple(items)
        return tuple(float(t) if _is_float(t) else int(t) for t in items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _is_float(t: str) -> bool:
    return any(c in t for c in ".eE") or t.lower() in ("inf", "nan")


def _numeric(items) -> bool:
    try:
        [float(t) for t in items]
    except ValueError:
        return False
    return True


def config_from_text(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse ``key = value`` lines (``#`` comments, comma-separated lists)."""
    base = PROFILES["desk"] if base is None else base
    fields = {f.name: f for f in dataclasses.fields(SystemConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in fields:
            raise ValueError(f"line {lineno}: unknown or malformed entry {raw.strip()!r}")
        updates[key] = _parse_value(value, getattr(base, key))
    return base.replace(**updates)


def config_to_text(cfg: SystemConfig) -> str:
    lines = []
    for f in dataclasses.fields(SystemConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- metrics


def nmse(estimate, truth) -> float:
    """``||estimate - truth||^2 / ||truth||^2``."""
    estimate = np.asarray(estimate, float)
    truth = np.asarray(truth, float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth differ in length")
    denom = float(truth @ truth)
    if denom == 0:
        raise ValueError("truth has zero norm")
    d = estimate - truth
    return float(d @ d) / denom


def sigma2_for_snr(signal, snr_db: float) -> float:
    """Noise variance giving ``||s||^2 / (dim s * sigma2)`` equal to ``snr_db``."""
    signal = np.asarray(signal)
    return float(np.vdot(signal, signal).real / signal.size / 10.0 ** (snr_db / 10.0))


def derive_seed(master: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(master), int(trial)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    sweep_value: float
    iteration: int
    algorithm: str
    nmse_position: float
    nmse_kappa: float
    crlb_total: float
    residual: float
    wall_ms: float

    def sort_key(self):
        return (self.sweep_value, self.algorithm, self.trial, self.iteration)


# ---------------------------------------------------------------- one trial


@dataclass
class TrialInstance:
    """Everything random about one trial, shared across sweep values and algorithms."""

    seed: int
    scene: object
    gains: object
    var_g: np.ndarray
    var_h: np.ndarray
    kappa0: np.ndarray
    g0: np.ndarray
    w0: np.ndarray
    noise_unit: np.ndarray
    streams: dict = field(default_factory=dict)


def make_instance(cfg: SystemConfig, trial: int) -> TrialInstance:
    seed = derive_seed(cfg.seed, trial)
    ss = np.random.SeedSequence(seed)
    s_scene, s_gain, s_init, s_noise, s_beam, s_algo = ss.spawn(6)
    scene = sample_scene(cfg.n_bs, cfg.l1, cfg.l2, np.random.default_rng(s_scene),
                         region=tuple(cfg.region))
    var_g, var_h = prior_variances(scene)
    gains = sample_gains(var_g, var_h, np.random.default_rng(s_gain))
    rng = np.random.default_rng(s_init)
    k = pack_kappa(scene)
    lay = k.layout
    kappa0 = k.kappa.copy()
    is_angle = np.zeros(lay.size, bool)
    is_angle[[lay.varphi, lay.omega]] = True
    kappa0[~is_angle] += rng.uniform(-cfg.init_position_radius, cfg.init_position_radius,
                                     int((~is_angle).sum()))
    kappa0[is_angle] += rng.uniform(-cfg.init_angle_radius, cfg.init_angle_radius,
                                    int(is_angle.sum()))
    g0 = np.sqrt(var_g / 2) * (rng.standard_normal(var_g.shape) + 1j * rng.standard_normal(var_g.shape))
    acfg = cfg.array_config()
    w0 = random_beams(acfg, np.random.default_rng(s_beam))
    z = np.random.default_rng(s_noise).standard_normal((acfg.n_rows, 2))
    noise_unit = (z[:, 0] + 1j * z[:, 1]) / np.sqrt(2.0)
    return TrialInstance(seed, scene, gains, var_g, var_h, kappa0, g0.ravel(), w0, noise_unit,
                         {"beam": s_beam, "algo": s_algo})


def _theta0(inst: TrialInstance, n_ris: int) -> np.ndarray:
    # derived from the beam stream and the RIS size, so each N_R gets its own draw
    rng = np.random.default_rng(np.random.SeedSequence(inst.seed, spawn_key=(7, n_ris)))
    return np.exp(1j * rng.uniform(-np.pi, np.pi, n_ris))


def _scene_for(cfg: SystemConfig, inst: TrialInstance, value):
    if cfg.sweep != "bs_ris_distance":
        return inst.scene, inst.kappa0
    # RIS moved along the ray from BS 1 through its original position; UE fixed
    scene = inst.scene.copy()
    a = scene.bs_positions[0]
    u = scene.ris_position - a
    u = u / np.linalg.norm(u)
    shift = a + float(value) * u - scene.ris_position
    scene.ris_position = scene.ris_position + shift
    lay = KappaLayout.of(scene)
    kappa0 = inst.kappa0.copy()
    kappa0[lay.b] += shift
    return scene, kappa0


def run_trial(cfg: SystemConfig, trial: int, inst: TrialInstance | None = None) -> list:
    """All sweep values and algorithms for one trial."""
    inst = make_instance(cfg, trial) if inst is None else inst
    ref_cfg = cfg.array_config()
    ref_bf = BeamformingState(inst.w0, _theta0(inst, ref_cfg.n_ris_elements))
    ref_signal = noiseless_signal(inst.scene, inst.gains, ref_bf, ref_cfg)
    out = []
    for value in cfg.sweep_values():
        snr = value if cfg.sweep == "snr" else float(cfg.snr_db[0])
        n_ris = int(value) if cfg.sweep == "n_ris" else cfg.n_ris_elements
        acfg = cfg.array_config(n_ris)
        sigma2 = sigma2_for_snr(ref_signal, snr)
        scene, kappa0 = _scene_for(cfg, inst, value)
        sim = Simulator(scene, inst.gains, acfg, sigma2, np.sqrt(sigma2) * inst.noise_unit)
        bf0 = BeamformingState(inst.w0.copy(), _theta0(inst, n_ris))
        for algo in cfg.algorithms:
            rng = np.random.default_rng(np.random.SeedSequence(
                inst.seed, spawn_key=(11, ALGORITHMS.index(algo))))
            init = JlboInit(kappa0.copy(), inst.g0.copy(), bf0.copy())
            t0 = time.perf_counter()
            failed = None
            try:
                state = run_jlbo(sim, init, inst.var_g, inst.var_h, acfg, cfg.limits(algo), rng,
                                 truth=scene)
            except JlboStepError as exc:
                state, failed = exc.state, exc
            except (GeometryError, np.linalg.LinAlgError, ValueError) as exc:
                state, failed = None, exc
            recs = [] if state is None else [state.initial] + state.history
            for r in recs:
                wall = r.wall_ms if cfg.timing else 0.0
                out.append(TrialRecord(trial, inst.seed, float(value), r.iteration, algo,
                                       float(r.nmse_position), float(r.nmse_kappa),
                                       float(r.crlb_total), float(r.residual), float(wall)))
            if failed is not None:
                # flagged row: iteration -1 and NaN metrics mark a failed run
                log.warning("trial %d %s at %s failed: %s", trial, algo, value, failed)
                out.append(TrialRecord(trial, inst.seed, float(value), -1, algo,
                                       math.nan, math.nan, math.nan, math.nan, 0.0))
            log.debug("trial %d %s at %s: %.1f ms", trial, algo, value,
                      1e3 * (time.perf_counter() - t0))
    return out


def preflight(cfg: SystemConfig):
    """Validate the config and the pilot budget on the first trial's scene."""
    cfg.validate()
    inst = make_instance(cfg, 0)
    report = validate_assumptions(cfg.array_config(), inst.scene, inst.gains,
                                  rng=np.random.default_rng(0))
    if not report.dimension_ok and not cfg.warn_only:
        raise AssumptionError(report)
    if not report.ok:
        log.warning("assumption check: %s", report.summary())
    return report


def _run_trial_job(args):
    cfg, trial = args
    return run_trial(cfg, trial)


def run_monte_carlo(cfg: SystemConfig, workers: int = 1, check: bool = True) -> list:
    """Run every trial; records come back sorted, so worker count does not matter."""
    if check:
        preflight(cfg)
    else:
        cfg.validate()
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trial_job, jobs))
    else:
        chunks = [_run_trial_job(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=TrialRecord.sort_key)


# ---------------------------------------------------------------- aggregation


def final_records(records) -> list:
    """Last iteration of every (trial, sweep value, algorithm) run."""
    last = {}
    for r in records:
        key = (r.trial, r.sweep_value, r.algorithm)
        if key not in last or r.iteration > last[key].iteration:
            last[key] = r
    return sorted(last.values(), key=TrialRecord.sort_key)


def median_by(records, key, value="nmse_position") -> dict:
    groups = {}
    for r in records:
        v = getattr(r, value)
        if math.isfinite(v):
            groups.setdefault(key(r), []).append(v)
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def aggregate(records, axis: str) -> dict:
    """Median position NMSE per algorithm along ``axis``.

    For the iterations axis the x values are outer iterations; otherwise they
    are sweep values at each run's final iteration.
    """
    if axis == "iterations":
        med = median_by([r for r in records if r.iteration >= 0],
                        lambda r: (r.algorithm, r.iteration))
    else:
        med = median_by(final_records(records), lambda r: (r.algorithm, r.sweep_value))
    out = {}
    for (algo, x), v in med.items():
        out.setdefault(algo, []).append((float(x), v))
    return out


# ---------------------------------------------------------------- emission


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    wr.writerow(CSV_FIELDS)
    for r in records:
        wr.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    rd = csv.DictReader(io.StringIO(text))
    if tuple(rd.fieldnames or ()) != CSV_FIELDS:
        raise ValueError("unexpected CSV header")
    out = []
    for row in rd:
        out.append(TrialRecord(int(row["trial"]), int(row["seed"]), float(row["sweep_value"]),
                               int(row["iteration"]), row["algorithm"],
                               float(row["nmse_position"]), float(row["nmse_kappa"]),
                               float(row["crlb_total"]), float(row["residual"]),
                               float(row["wall_ms"])))
    return out


def _json_safe(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def records_to_json(records, axis: str) -> str:
    body = {
        "records": [{f: _json_safe(getattr(r, f)) for f in CSV_FIELDS} for r in records],
        "aggregate": {a: [[x, _json_safe(y)] for x, y in pts]
                      for a, pts in aggregate(records, axis).items()},
        "axis": axis,
    }
    return json.dumps(body, indent=1, sort_keys=True) + "\n"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def records_to_svg(records, axis: str, width: int = 640, height: int = 420) -> str:
    """Median NMSE against the sweep axis, log-scale y, one polyline per algorithm."""
    agg = aggregate(records, axis)
    pts = [(x, y) for series in agg.values() for x, y in series if y > 0]
    if not pts:
        raise ValueError("no finite positive NMSE values to plot")
    xs = [p[0] for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    ml, mr, mt, mb = 70, 20, 20, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (y1 - math.log10(v)) / (y1 - y0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(y0, y1 + 1):
        y = sy(10.0 ** e)
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" font-size="11" '
                     f'text-anchor="end">1e{e}</text>')
    for x in sorted(set(xs)):
        parts.append(f'<text x="{sx(x):.1f}" y="{mt + ph + 16}" font-size="11" '
                     f'text-anchor="middle">{x:g}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" font-size="12" '
                 f'text-anchor="middle">{axis}</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.1f})">median position NMSE</text>')
    for i, (algo, series) in enumerate(sorted(agg.items())):
        good = [(x, y) for x, y in series if y > 0]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in good)
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                     f'points="{coords}"><title>{algo}</title></polyline>')
        parts.append(f'<text x="{ml + pw - 4}" y="{mt + 16 + 14 * i}" font-size="11" '
                     f'text-anchor="end" fill="{color}">{algo}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit(records, fmt: str, path, axis: str = "iterations") -> None:
    """Write ``records`` as csv, json or an svg line plot."""
    records = sorted(records, key=TrialRecord.sort_key)
    if fmt == "csv":
        text = records_to_csv(records)
    elif fmt == "json":
        text = records_to_json(records, axis)
    elif fmt in ("svg", "svg-lineplot"):
        if not records:
            raise ValueError("svg output needs at least one record")
        text = records_to_svg(records, axis)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)
