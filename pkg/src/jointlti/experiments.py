"""Seeded experiment harness: error-vs-M sweeps, misspecification grids,
state-growth profiles and basis-count selection, with CSV/JSON/SVG output.

Every cell ``(M, replicate)`` draws its data from ``derive_seed(seed,
"replicate", r)``. Ensembles, radii and trajectories are drawn from
per-system streams, so the systems of a small-``M`` cell are a prefix of
those of a larger one; joint and OLS are always fitted on the same bundle.
"""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _io
from ._rng import derive_seed
from .diagnostics import estimation_error
from .dynamics import NoiseModel, simulate, simulate_bundle
from .ensemble import JordanSpec, build_from_jordan, generate_ensemble
from .errors import ArgumentError, JointLTIError
from .estimators import FitConfig, joint_fit, ols_fit, select_k

CSV_HEADER = ("M", "method", "regime", "a", "mean_error", "std_error", "replicates")
REGIMES = ("stable", "unit_root")


@dataclass(frozen=True)
class SweepConfig:
    """Sweep settings. ``k_fit=None`` fits with ``k_true``; ``misspec`` is ``(a, fro_sq_target)``."""

    d: int = 10
    k_true: int = 3
    T: int = 100
    M_list: tuple = (1, 5, 25, 50)
    k_fit: Optional[int] = None
    regime: str = "stable"
    radius_lo: float = 0.7
    radius_hi: float = 0.9
    noise_variance: float = 1.0
    misspec: Optional[tuple] = None
    replicates: int = 10
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        M_list = tuple(int(m) for m in self.M_list)
        if not M_list or any(m < 1 for m in M_list) or list(M_list) != sorted(set(M_list)):
            raise ArgumentError(f"M_list must be non-empty, positive and strictly ascending, got {self.M_list}")
        object.__setattr__(self, "M_list", M_list)
        if self.replicates < 1:
            raise ArgumentError("replicates must be >= 1")
        if self.regime not in REGIMES:
            raise ArgumentError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.noise_variance < 0:
            raise ArgumentError("noise_variance must be >= 0")
        if self.misspec is not None:
            a, fro = self.misspec
            object.__setattr__(self, "misspec", (float(a), float(fro)))
        if isinstance(self.fit, dict):
            object.__setattr__(self, "fit", FitConfig(**self.fit))

    @property
    def k_used(self) -> int:
        return self.k_true if self.k_fit is None else self.k_fit

    def to_dict(self):
        out = asdict(self)
        out["M_list"] = list(self.M_list)
        out["misspec"] = None if self.misspec is None else list(self.misspec)
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        if obj.get("misspec") is not None:
            obj["misspec"] = tuple(obj["misspec"])
        if "M_list" in obj:
            obj["M_list"] = tuple(obj["M_list"])
        if isinstance(obj.get("fit"), dict):
            obj["fit"] = FitConfig(**obj["fit"])
        return cls(**obj)


@dataclass(frozen=True)
class SweepRow:
    M: int
    method: str
    regime: str
    a: Optional[float]
    mean_error: float
    std_error: float
    replicates: int


@dataclass(frozen=True)
class SweepResult:
    """Aggregated rows plus the per-replicate errors they were reduced from.

    ``raw[(a, M, method)]`` holds the replicate errors in replicate order.
    """

    rows: tuple
    raw: dict = field(default_factory=dict, compare=False)
    config: Optional[dict] = field(default=None, compare=False)

    def cell(self, M, method, a=None):
        for r in self.rows:
            if r.M == M and r.method == method and (a is None or r.a == a):
                return r
        raise KeyError((M, method, a))

    def series(self, method, a=None):
        rows = [r for r in self.rows if r.method == method and (a is None or r.a == a)]
        return [r.M for r in rows], [r.mean_error for r in rows], [r.std_error for r in rows]


# --- sweeps -----------------------------------------------------------------

def _cell_ensemble(cfg, M, rep_seed, a):
    misspec = None
    if cfg.misspec is not None and cfg.misspec[1] > 0:
        misspec = (a, cfg.misspec[1])
    return generate_ensemble(cfg.d, cfg.k_true, M, rep_seed, regime=cfg.regime,
                             radius_lo=cfg.radius_lo, radius_hi=cfg.radius_hi,
                             T_nominal=cfg.T, misspec=misspec)


def _run_cell(args):
    cfg, M, r = args
    a = None if cfg.misspec is None else cfg.misspec[0]
    try:
        rep_seed = derive_seed(cfg.seed, "replicate", r)
        ens = _cell_ensemble(cfg, M, rep_seed, a)
        noise = NoiseModel.isotropic(cfg.d, cfg.noise_variance)
        bundle = simulate_bundle(ens, cfg.T, noise, seed=rep_seed, retain_noise=False)
        joint = joint_fit(bundle, cfg.k_used, cfg.fit)
        ols = ols_fit(bundle)
    except JointLTIError as err:
        err.cell = (M, r)
        if err.args:
            err.args = (f"[M={M}, replicate={r}] {err.args[0]}",) + tuple(err.args[1:])
        raise
    return (M, r), (estimation_error(joint.A_hat, ens).mean, estimation_error(ols.A_hat, ens).mean)


def _std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_sweep(config: SweepConfig, jobs=1) -> SweepResult:
    """Per-system estimation error of joint and OLS estimators across ``M_list``.

    Cells run on ``jobs`` worker processes; results are keyed by cell and
    reduced in key order, so the output does not depend on ``jobs``.
    """
    tasks = [(config, M, r) for M in config.M_list for r in range(config.replicates)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = dict(pool.map(_run_cell, tasks))
    else:
        done = dict(map(_run_cell, tasks))
    a = None if config.misspec is None else config.misspec[0]
    rows, raw = [], {}
    for M in config.M_list:
        errs = np.array([done[(M, r)] for r in range(config.replicates)])
        for j, method in enumerate(("joint", "ols")):
            vals = errs[:, j]
            raw[(a, M, method)] = tuple(float(v) for v in vals)
            rows.append(SweepRow(M, method, config.regime, a, float(np.mean(vals)), _std(vals),
                                 config.replicates))
    return SweepResult(tuple(rows), raw, config.to_dict())


def run_misspec_grid(config: SweepConfig, a_list=(0.0, 0.25, 0.5), fro_sq_target=None,
                     jobs=1) -> SweepResult:
    """One sweep per exponent ``a``; deviations hit each system with probability ``M**-a``.

    ``fro_sq_target`` defaults to the one in ``config.misspec``, else 1.0. A
    target of 0 reproduces the well-specified sweep with the same seeds.
    """
    if fro_sq_target is None:
        fro_sq_target = 1.0 if config.misspec is None else config.misspec[1]
    rows, raw = [], {}
    for a in a_list:
        res = run_sweep(replace(config, misspec=(float(a), float(fro_sq_target))), jobs)
        rows.extend(res.rows)
        raw.update(res.raw)
    cfg = config.to_dict()
    cfg.update(a_list=[float(a) for a in a_list], fro_sq_target=float(fro_sq_target))
    return SweepResult(tuple(rows), raw, cfg)


# --- state growth -----------------------------------------------------------

@dataclass(frozen=True)
class GrowthProfile:
    """``log ||x(t)||_2`` for ``t = 0..T``; zero-norm states are NaN."""

    t: np.ndarray
    log_norm: np.ndarray
    label: str = ""

    def __len__(self):
        return len(self.t)


def state_growth_profile(spec: JordanSpec, T, noise=None, seed=0, *, x0=None,
                         transform="identity", label=None) -> GrowthProfile:
    """Simulate one trajectory of ``build_from_jordan(spec)`` and log its state magnitudes.

    ``noise=None`` is noiseless; ``x0`` defaults to the last standard basis vector.
    """
    if T < 10:
        raise ArgumentError(f"T must be >= 10, got {T}")
    d = spec.d
    A, _ = build_from_jordan(spec, seed, transform)
    if noise is None:
        noise = NoiseModel(np.zeros((d, d)))
    if x0 is None:
        x0 = np.zeros(d)
        x0[-1] = 1.0
    traj = simulate(A, T, noise, x0=x0, seed=seed, retain_noise=False)
    norms = np.linalg.norm(traj.states, axis=1)
    with np.errstate(divide="ignore"):
        logs = np.where(norms > 0, np.log(np.where(norms > 0, norms, 1.0)), np.nan)
    if label is None:
        label = f"l={spec.l_star}, lambda={spec.spectral_radius:g}"
    return GrowthProfile(np.arange(T + 1), logs, label)


def growth_slope(profile: GrowthProfile, t_lo=None, t_hi=None) -> float:
    """Least-squares slope of ``log ||x(t)||`` against ``log t`` on ``[t_lo, t_hi]``.

    Defaults to the second half of the profile.
    """
    T = int(profile.t[-1])
    t_lo = T // 2 if t_lo is None else t_lo
    t_hi = T if t_hi is None else t_hi
    sel = (profile.t >= max(t_lo, 1)) & (profile.t <= t_hi) & np.isfinite(profile.log_norm)
    if np.count_nonzero(sel) < 2:
        raise ArgumentError("need at least two finite points to fit a slope")
    slope, _ = np.polyfit(np.log(profile.t[sel]), profile.log_norm[sel], 1)
    return float(slope)


# --- model selection --------------------------------------------------------

@dataclass(frozen=True)
class SelectionRun:
    run: int
    k_chosen: int
    curve: tuple


def run_selection_experiment(d, k_true, T, M, k_grid, replicates, seed, *, noise_variance=1.0,
                             regime="stable", validation=0.2, split="steps", config=None,
                             elbow_slack=0.05, x0=None) -> tuple:
    """Repeat :func:`select_k` on freshly generated data; one :class:`SelectionRun` per run.

    ``x0`` is one initial state shared by every system (default zero).
    """
    if replicates < 1:
        raise ArgumentError("replicates must be >= 1")
    starts = None if x0 is None else [np.asarray(x0, dtype=float)] * M
    runs = []
    for r in range(replicates):
        run_seed = derive_seed(seed, "selection", r)
        ens = generate_ensemble(d, k_true, M, run_seed, regime=regime, T_nominal=T)
        bundle = simulate_bundle(ens, T, NoiseModel.isotropic(d, noise_variance), starts,
                                 seed=run_seed, retain_noise=False)
        sel = select_k(bundle, k_grid, validation, config, split=split, elbow_slack=elbow_slack)
        runs.append(SelectionRun(r, sel.k_chosen, sel.curve))
    return tuple(runs)


# --- export -----------------------------------------------------------------

def _fmt_opt(x):
    return "" if x is None else _io.fmt_float(x)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow([r.M, r.method, r.regime, _fmt_opt(r.a), _io.fmt_float(r.mean_error),
                    _io.fmt_float(r.std_error), r.replicates])
    return buf.getvalue()


def _row_dict(r):
    return {"M": r.M, "method": r.method, "regime": r.regime, "a": r.a,
            "mean_error": r.mean_error, "std_error": r.std_error, "replicates": r.replicates}


def export(result: SweepResult, path, format=None):
    """Write a sweep result as CSV or JSON (inferred from the suffix when ``format`` is None)."""
    if not result.rows:
        raise ArgumentError("nothing to export: result has no rows")
    path = Path(path)
    fmt = format or ("json" if path.suffix == ".json" else "csv")
    if fmt == "csv":
        path.write_text(sweep_csv(result))
    elif fmt == "json":
        _io.dump({"config": result.config, "rows": [_row_dict(r) for r in result.rows]}, path)
    else:
        raise ArgumentError(f"format must be 'csv' or 'json', got {fmt!r}")
    return path


def import_result(path) -> SweepResult:
    """Read back a file written by :func:`export`."""
    path = Path(path)
    if path.suffix == ".json":
        obj = _io.load(path)
        rows = [SweepRow(int(r["M"]), r["method"], r["regime"],
                         None if r["a"] is None else float(r["a"]), float(r["mean_error"]),
                         float(r["std_error"]), int(r["replicates"])) for r in obj["rows"]]
        return SweepResult(tuple(rows), {}, obj.get("config"))
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ArgumentError(f"unexpected CSV header {reader.fieldnames}")
        rows = [SweepRow(int(r["M"]), r["method"], r["regime"],
                         None if r["a"] == "" else float(r["a"]), float(r["mean_error"]),
                         float(r["std_error"]), int(r["replicates"])) for r in reader]
    return SweepResult(tuple(rows))


def growth_csv(profiles) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "t", "log_norm"))
    for p in profiles:
        for t, v in zip(p.t, p.log_norm):
            w.writerow((p.label, int(t), "" if not np.isfinite(v) else _io.fmt_float(v)))
    return buf.getvalue()


def selection_csv(runs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run", "k", "fit_error", "validation_error", "k_chosen"))
    for run in runs:
        for p in run.curve:
            w.writerow((run.run, p.k, _io.fmt_float(p.fit_error), _io.fmt_float(p.validation_error),
                        run.k_chosen))
    return buf.getvalue()


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``data`` as git would hash it as a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path, config, outputs=()):
    """JSON manifest of the run configuration, its content hash and output hashes."""
    cfg_bytes = _io.dumps(config).encode()
    files = {}
    for p in outputs:
        p = Path(p)
        files[p.name] = git_blob_hash(p.read_bytes())
    return _io.dump({"config": config, "config_hash": git_blob_hash(cfg_bytes), "outputs": files}, path)


# --- plots ------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "jointlti"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    return Path(path)


def render_plots(result, path):
    """Write one SVG figure for a sweep result, growth profiles or selection runs.

    Plotted series carry ``gid`` attributes (``series-<n>``) and use markers,
    so every sample appears as one ``<use>`` element inside its group.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        if isinstance(result, SweepResult):
            _plot_sweep(ax, result)
        elif isinstance(result, GrowthProfile) or (
                isinstance(result, (list, tuple)) and result and isinstance(result[0], GrowthProfile)):
            _plot_growth(ax, [result] if isinstance(result, GrowthProfile) else list(result))
        elif isinstance(result, (list, tuple)) and result and isinstance(result[0], SelectionRun):
            _plot_selection(ax, result)
        else:
            raise ArgumentError("nothing to plot")
        fig.tight_layout()
        return _save(fig, path)
    finally:
        plt.close(fig)


def _plot_sweep(ax, result):
    keys = []
    for r in result.rows:
        key = (r.method, r.a)
        if key not in keys:
            keys.append(key)
    for n, (method, a) in enumerate(keys):
        rows = [r for r in result.rows if r.method == method and r.a == a]
        label = method if a is None else f"{method}, a={a:g}"
        cont = ax.errorbar([r.M for r in rows], [r.mean_error for r in rows],
                           yerr=[r.std_error for r in rows], marker="o", capsize=3, label=label)
        cont.lines[0].set_gid(f"series-{n}")
    ax.set_xlabel("number of systems M")
    ax.set_ylabel("mean squared Frobenius error per system")
    ax.set_yscale("log")
    ax.legend()


def _plot_growth(ax, profiles):
    for n, p in enumerate(profiles):
        (line,) = ax.plot(p.t, p.log_norm, marker=".", markersize=2, linewidth=0.8, label=p.label)
        line.set_gid(f"series-{n}")
    ax.set_xlabel("t")
    ax.set_ylabel("log ||x(t)||")
    ax.legend()


def _plot_selection(ax, runs):
    for n, run in enumerate(runs):
        ks = [p.k for p in run.curve]
        (line,) = ax.plot(ks, [p.validation_error for p in run.curve], marker="o", alpha=0.6,
                          label=f"run {run.run} (k={run.k_chosen})")
        line.set_gid(f"series-{n}")
    ax.set_xlabel("basis count k")
    ax.set_ylabel("validation prediction error")
    ax.set_yscale("log")
    ax.legend(fontsize=6)


def count_plotted_samples(svg_path, series=0) -> int:
    """Number of markers drawn for ``series-<series>`` in an SVG from :func:`render_plots`."""
    import xml.etree.ElementTree as ET

    root = ET.parse(svg_path).getroot()
    for el in root.iter():
        if el.get("id") == f"series-{series}":
            return sum(1 for c in el.iter() if c.tag.endswith("use"))
    raise KeyError(f"series-{series} not found in {svg_path}")
