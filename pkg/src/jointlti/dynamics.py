"""Trajectory simulation for VAR(1) systems and the independent-regressor variant.

VAR mode follows ``x(t+1) = A x(t) + eta(t+1)``. Regression mode draws
``x(t) ~ N(0, Sigma_x)`` independently and observes ``y(t) = A x(t) + eta(t)``.
Either way a trajectory exposes matched ``regressors`` (rows ``t = 0..T-1``)
and ``targets`` (the responses to those rows), which is all the estimators
look at.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _io, kernels
from ._rng import stream
from .errors import ArgumentError, SimulationOverflowError

VAR = "var"
REGRESSION = "regression"


def _psd_factor(C):
    w, V = np.linalg.eigh(C)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise with covariance ``C``; ``sigma_sq`` is the sub-Gaussian proxy."""

    C: np.ndarray
    sigma_sq: Optional[float] = None
    kind: str = "gaussian"
    factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ArgumentError(f"noise covariance must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ArgumentError("noise covariance must be finite")
        if np.max(np.abs(C - C.T), initial=0.0) > 1e-12:
            raise ArgumentError("noise covariance must be symmetric")
        C = 0.5 * (C + C.T)
        w = np.linalg.eigvalsh(C)
        if w[0] < -1e-12:
            raise ArgumentError(f"noise covariance must be PSD, smallest eigenvalue {w[0]:.3g}")
        if self.kind != "gaussian":
            raise ArgumentError(f"only gaussian noise is supported, got {self.kind!r}")
        lam_max = float(max(w[-1], 0.0))
        if self.sigma_sq is None:
            sigma_sq = lam_max
        else:
            sigma_sq = float(self.sigma_sq)
            if abs(sigma_sq - lam_max) > 1e-12 * max(1.0, lam_max):
                raise ArgumentError("for gaussian noise sigma_sq must equal lambda_max(C)")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma_sq", sigma_sq)
        object.__setattr__(self, "factor", _psd_factor(C))

    @classmethod
    def isotropic(cls, d, variance):
        if variance < 0:
            raise ArgumentError(f"variance must be >= 0, got {variance}")
        return cls(variance * np.eye(d))

    @property
    def d(self) -> int:
        return self.C.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(max(np.linalg.eigvalsh(self.C)[0], 0.0))

    @property
    def lambda_max(self) -> float:
        return float(max(np.linalg.eigvalsh(self.C)[-1], 0.0))

    def sample(self, rng, n):
        """``n`` independent draws, shape ``(n, d)``."""
        z = rng.standard_normal((n, self.d))
        return z @ self.factor.T

    def to_dict(self):
        C = self.C
        if np.array_equal(C, np.diag(np.diag(C))):
            return {"kind": self.kind, "diag": np.diag(C), "sigma_sq": self.sigma_sq}
        return {"kind": self.kind, "C": C, "sigma_sq": self.sigma_sq}

    @classmethod
    def from_dict(cls, obj):
        if "diag" in obj:
            C = np.diag(_io.as_array(obj["diag"], 1))
        else:
            C = _io.as_array(obj["C"], 2)
        return cls(C, kind=obj.get("kind", "gaussian"))


@dataclass(frozen=True)
class Trajectory:
    """States of one system.

    In VAR mode ``states`` has ``T + 1`` rows, row ``t`` being ``x(t)``. In
    regression mode row ``t < T`` is the regressor ``x(t)`` and
    ``responses[t + 1]`` is its response; row ``T`` of ``states`` and row 0 of
    ``responses`` are unused padding. ``noise`` (when retained) holds
    ``eta(1..T)`` row-wise.
    """

    states: np.ndarray
    system_index: int = 0
    responses: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.states, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ArgumentError(f"states must be 2-d with at least two rows, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ArgumentError("states must be finite")
        X.setflags(write=False)
        object.__setattr__(self, "states", X)
        if self.responses is not None:
            Y = np.asarray(self.responses, dtype=float)
            if Y.shape != X.shape:
                raise ArgumentError("responses must be shaped like states")
            Y.setflags(write=False)
            object.__setattr__(self, "responses", Y)
        if self.noise is not None:
            N = np.asarray(self.noise, dtype=float)
            if N.shape != (X.shape[0] - 1, X.shape[1]):
                raise ArgumentError("noise must have shape (T, d)")
            N.setflags(write=False)
            object.__setattr__(self, "noise", N)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def regressors(self) -> np.ndarray:
        return self.states[:-1]

    @property
    def targets(self) -> np.ndarray:
        paired = self.states if self.responses is None else self.responses
        return paired[1:]


@dataclass(frozen=True)
class TrajectoryBundle:
    trajectories: tuple
    noise: NoiseModel
    mode: str = VAR
    seed: Optional[int] = None

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ArgumentError("a bundle needs at least one trajectory")
        T, d = trajs[0].T, trajs[0].d
        for tr in trajs:
            if (tr.T, tr.d) != (T, d):
                raise ArgumentError("all trajectories in a bundle must share (T, d)")
        if sorted(tr.system_index for tr in trajs) != list(range(len(trajs))):
            raise ArgumentError("system indices must be 0..M-1, each exactly once")
        trajs = tuple(sorted(trajs, key=lambda tr: tr.system_index))
        if self.noise.d != d:
            raise ArgumentError(f"noise dimension {self.noise.d} does not match state dimension {d}")
        if self.mode not in (VAR, REGRESSION):
            raise ArgumentError(f"mode must be 'var' or 'regression', got {self.mode!r}")
        if self.mode == REGRESSION and any(tr.responses is None for tr in trajs):
            raise ArgumentError("regression bundles need responses")
        object.__setattr__(self, "trajectories", trajs)

    @property
    def M(self) -> int:
        return len(self.trajectories)

    @property
    def T(self) -> int:
        return self.trajectories[0].T

    @property
    def d(self) -> int:
        return self.trajectories[0].d

    @property
    def has_noise(self) -> bool:
        return all(tr.noise is not None for tr in self.trajectories)

    def regressors(self) -> np.ndarray:
        """Array ``(M, T, d)`` of regressors."""
        return np.stack([tr.regressors for tr in self.trajectories])

    def targets(self) -> np.ndarray:
        """Array ``(M, T, d)`` of responses aligned with :meth:`regressors`."""
        return np.stack([tr.targets for tr in self.trajectories])

    def subset(self, systems=None, steps=None) -> "TrajectoryBundle":
        """Restrict to some systems (re-indexed from 0) and/or a range of transitions.

        ``steps`` is a ``slice`` over transition indices ``t = 0..T-1``.
        """
        picked = list(range(self.M)) if systems is None else [int(m) for m in systems]
        out = []
        for new_m, m in enumerate(picked):
            tr = self.trajectories[m]
            states, responses, noise = tr.states, tr.responses, tr.noise
            if steps is not None:
                idx = np.arange(tr.T)[steps]
                if idx.size < 1 or np.any(np.diff(idx) != 1):
                    raise ArgumentError("steps must select a contiguous, non-empty range")
                lo, hi = int(idx[0]), int(idx[-1]) + 1
                states = states[lo:hi + 1]
                if responses is not None:
                    responses = responses[lo:hi + 1]
                if noise is not None:
                    noise = noise[lo:hi]
            out.append(Trajectory(states, new_m, responses, noise))
        return TrajectoryBundle(tuple(out), self.noise, self.mode, self.seed)


def _as_x0(x0, d):
    if x0 is None:
        return np.zeros(d)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != d:
        raise ArgumentError(f"x0 must have {d} entries, got {x0.size}")
    return x0


def simulate(A, T, noise, x0=None, seed=0, *, system_index=0, retain_noise=True) -> Trajectory:
    """Run ``x(t+1) = A x(t) + eta(t+1)`` for ``T`` steps from ``x0`` (default 0).

    Raises :class:`SimulationOverflowError` at the first non-finite state.
    """
    A = np.ascontiguousarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError("A must be finite")
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise ArgumentError(f"T must be an integer >= 1, got {T!r}")
    d = A.shape[0]
    if noise.d != d:
        raise ArgumentError(f"noise dimension {noise.d} does not match A ({d})")
    x0 = np.ascontiguousarray(_as_x0(x0, d))
    rng = stream(seed, "dynamics", system_index)
    eta = np.ascontiguousarray(noise.sample(rng, int(T)))
    out = np.empty((int(T) + 1, d))
    bad = kernels.var_recursion(A, x0, eta, out)
    if bad >= 0:
        raise SimulationOverflowError(int(bad))
    return Trajectory(out, system_index, None, eta if retain_noise else None)


def simulate_bundle(ensemble, T, noise, x0=None, seed=0, *, retain_noise=True) -> TrajectoryBundle:
    """Simulate every system of ``ensemble``; system ``m`` uses sub-stream ``(seed, m)``.

    ``x0`` is ``None``/``"zero"`` or a sequence of ``M`` initial states.
    """
    M, d = ensemble.M, ensemble.d
    if noise.d != d:
        raise ArgumentError(f"noise dimension {noise.d} does not match ensemble dimension {d}")
    if x0 is None or (isinstance(x0, str) and x0 == "zero"):
        starts = [None] * M
    else:
        starts = list(x0)
        if len(starts) != M:
            raise ArgumentError(f"need {M} initial states, got {len(starts)}")
    trajs = []
    for m in range(M):
        try:
            trajs.append(simulate(ensemble.A[m], T, noise, starts[m], seed,
                                  system_index=m, retain_noise=retain_noise))
        except SimulationOverflowError as exc:
            raise SimulationOverflowError(exc.step, system=m) from None
    return TrajectoryBundle(tuple(trajs), noise, VAR, seed)


def simulate_regression_bundle(ensemble, T, noise, regressor_cov, seed=0, *,
                               retain_noise=True) -> TrajectoryBundle:
    """Independent regressors ``x_m(t) ~ N(0, regressor_cov)`` with ``y = A_m x + eta``."""
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise ArgumentError(f"T must be an integer >= 1, got {T!r}")
    d = ensemble.d
    if noise.d != d:
        raise ArgumentError(f"noise dimension {noise.d} does not match ensemble dimension {d}")
    reg = NoiseModel(regressor_cov)
    if reg.d != d:
        raise ArgumentError("regressor covariance has the wrong dimension")
    trajs = []
    for m in range(ensemble.M):
        rng = stream(seed, "regression", m)
        X = reg.sample(rng, int(T) + 1)
        eta = noise.sample(rng, int(T))
        Y = np.zeros_like(X)
        Y[1:] = X[:-1] @ ensemble.A[m].T + eta
        if not np.all(np.isfinite(Y)):
            raise SimulationOverflowError(int(np.argmax(~np.isfinite(Y).all(axis=1))), system=m)
        trajs.append(Trajectory(X, m, Y, eta if retain_noise else None))
    return TrajectoryBundle(tuple(trajs), noise, REGRESSION, seed)


# --- persistence ---------------------------------------------------------

def _sidecar_path(path):
    path = Path(path)
    return path.with_suffix(".json")


def save_bundle(bundle, path, extra=None):
    """Write ``path`` (CSV) plus a JSON sidecar next to it.

    The CSV header is ``system,t,x0,...,x{d-1}``; regression bundles add the
    response columns ``y0,...,y{d-1}``.
    """
    path = Path(path)
    d = bundle.d
    header = ["system", "t"] + [f"x{i}" for i in range(d)]
    if bundle.mode == REGRESSION:
        header += [f"y{i}" for i in range(d)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tr in bundle.trajectories:
            for t in range(tr.T + 1):
                row = [tr.system_index, t] + [_io.fmt_float(v) for v in tr.states[t]]
                if bundle.mode == REGRESSION:
                    row += [_io.fmt_float(v) for v in tr.responses[t]]
                w.writerow(row)
    meta = {
        "T": bundle.T,
        "d": d,
        "M": bundle.M,
        "noise": bundle.noise.to_dict(),
        "mode": bundle.mode,
        "seed": bundle.seed,
    }
    if extra:
        meta.update(extra)
    _io.dump(meta, _sidecar_path(path))
    return path


def load_bundle(path) -> TrajectoryBundle:
    path = Path(path)
    sidecar = _sidecar_path(path)
    meta = _io.load(sidecar) if sidecar.exists() else None
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [list(map(float, row)) for row in r if row]
    if header[:2] != ["system", "t"]:
        raise ArgumentError(f"{path}: expected header starting with system,t")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    data = np.array(rows)
    systems = np.unique(data[:, 0]).astype(int)
    trajs = []
    for m in systems:
        sel = data[data[:, 0] == m]
        sel = sel[np.argsort(sel[:, 1])]
        states = sel[:, xcols]
        responses = sel[:, ycols] if ycols else None
        trajs.append(Trajectory(states, int(m), responses))
    d = trajs[0].d
    if meta is not None:
        noise = NoiseModel.from_dict(meta["noise"])
        mode = meta.get("mode", VAR)
        seed = meta.get("seed")
    else:
        noise, mode, seed = NoiseModel(np.eye(d)), (REGRESSION if ycols else VAR), None
    return TrajectoryBundle(tuple(trajs), noise, mode, seed)
