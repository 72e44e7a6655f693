"""Per-system least squares and the pooled low-rank (shared-basis) estimator.

All fits work from per-system lag moments

    S_m = sum_t x_m(t) x_m(t)'        R_m = sum_t y_m(t) x_m(t)'

where ``y_m(t)`` is the response paired with regressor ``x_m(t)`` (the next
state in VAR mode). The joint objective is the pooled one-step squared
prediction error averaged over ``M * T`` transitions.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _io
from ._rng import stream
from .errors import ArgumentError, DivergenceError, RankDeficiencyError

logger = logging.getLogger(__name__)

_AUTO_RIDGE = 1e-10
_SINGULAR_RTOL = 1e-12
_SELECTION_FLOOR = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Optimiser settings for :func:`joint_fit`.

    ``ridge=None`` picks ``1e-10 * trace(Gram) / dim`` separately for every
    least-squares subproblem; a number fixes it (0 disables regularisation).
    """

    optimizer: str = "als"
    max_iters: int = 500
    tol: float = 1e-8
    restarts: int = 1
    ridge: Optional[float] = None
    init_seed: int = 0
    gd_step: float = 1e-2

    def __post_init__(self):
        if self.optimizer not in ("als", "gd"):
            raise ArgumentError(f"optimizer must be 'als' or 'gd', got {self.optimizer!r}")
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ArgumentError("tol must be > 0")
        if self.restarts < 1:
            raise ArgumentError("restarts must be >= 1")
        if self.ridge is not None and self.ridge < 0:
            raise ArgumentError("ridge must be >= 0")
        if self.optimizer == "gd" and not self.gd_step > 0:
            raise ArgumentError("gd_step must be > 0")

    def replace(self, **changes) -> "FitConfig":
        return FitConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class OlsFit:
    A_hat: np.ndarray
    ridge_used: float
    per_system_residual: np.ndarray


@dataclass(frozen=True)
class JointFit:
    W_hat: np.ndarray
    B_hat: np.ndarray
    loss_trace: tuple
    converged: bool
    best_restart: int
    half_step_trace: tuple = ()
    restart_losses: tuple = ()
    ridge_used: tuple = ()
    config: Optional[FitConfig] = None
    A_hat: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "A_hat", combine(self.W_hat, self.B_hat))

    @property
    def k(self) -> int:
        return self.W_hat.shape[0]

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])

    @property
    def iterations(self) -> int:
        return len(self.loss_trace) - 1


def combine(W, B):
    """``A_m = sum_i B[i, m] W_i`` for every column of ``B``."""
    return np.einsum("im,iab->mab", np.asarray(B, dtype=float), np.asarray(W, dtype=float))


def _unwrap(W, B):
    W = getattr(W, "W", W)
    B = getattr(B, "B", B)
    return np.asarray(W, dtype=float), np.asarray(B, dtype=float)


def moments(bundle):
    """Return ``(X, Y, S, R)`` with ``X, Y`` of shape ``(M, T, d)``."""
    X = bundle.regressors()
    Y = bundle.targets()
    S = np.einsum("mti,mtj->mij", X, X)
    R = np.einsum("mti,mtj->mij", Y, X)
    return X, Y, S, R


def _residual_loss(X, Y, A):
    res = Y - np.matmul(X, np.transpose(A, (0, 2, 1)))
    return float(np.sum(res * res) / (X.shape[0] * X.shape[1]))


def prediction_loss(bundle, A_hat) -> float:
    """Mean squared one-step prediction error of ``A_hat`` over all transitions."""
    A_hat = np.asarray(A_hat, dtype=float)
    if A_hat.shape != (bundle.M, bundle.d, bundle.d):
        raise ArgumentError(f"expected {bundle.M} matrices of size {bundle.d}, got {A_hat.shape}")
    return _residual_loss(bundle.regressors(), bundle.targets(), A_hat)


def evaluate_loss(bundle, W, B) -> float:
    """Averaged squared loss ``1/(MT) sum_m sum_t ||y - (sum_i B[i,m] W_i) x||^2``."""
    W, B = _unwrap(W, B)
    if W.ndim != 3 or W.shape[1:] != (bundle.d, bundle.d):
        raise ArgumentError(f"basis must have shape (k, {bundle.d}, {bundle.d}), got {W.shape}")
    if B.shape != (W.shape[0], bundle.M):
        raise ArgumentError(f"coefficients must have shape ({W.shape[0]}, {bundle.M}), got {B.shape}")
    return prediction_loss(bundle, combine(W, B))


def _is_singular(G):
    w = np.linalg.eigvalsh(G)
    return w[-1] <= 0 or w[0] <= _SINGULAR_RTOL * w[-1]


# --- individual least squares --------------------------------------------

def ols_fit(bundle, ridge=0.0) -> OlsFit:
    """Per-system (ridge) least squares ``A_m = R_m (S_m + ridge I)^{-1}``.

    Without a ridge the regression is solved from the regressors directly
    (SVD least squares), which keeps fast-growing trajectories accurate; a
    regressor matrix of numerical rank below ``d`` is an error.
    """
    if ridge < 0:
        raise ArgumentError("ridge must be >= 0")
    X, Y, S, R = moments(bundle)
    d = bundle.d
    A_hat = np.empty((bundle.M, d, d))
    for m in range(bundle.M):
        if ridge == 0:
            sol, _, rank, _ = np.linalg.lstsq(X[m], Y[m], rcond=None)
            if rank < d:
                raise RankDeficiencyError(
                    f"regressor Gram matrix of system {m} is singular (rank {rank} < {d}); "
                    "pass ridge > 0", system=m
                )
            A_hat[m] = sol.T
        else:
            A_hat[m] = np.linalg.solve(S[m] + ridge * np.eye(d), R[m].T).T
    res = Y - np.matmul(X, np.transpose(A_hat, (0, 2, 1)))
    per = np.einsum("mti,mti->m", res, res)
    return OlsFit(A_hat, float(ridge), per)


# --- joint estimator ------------------------------------------------------

def _coefficient_step(W, S, R, ridge):
    k = W.shape[0]
    WS = np.matmul(W[None], S[:, None])
    H = np.einsum("iab,mjab->mij", W, WS)
    g = np.einsum("iab,mab->mi", W, R)
    B = np.empty((k, S.shape[0]))
    eps_used = np.empty(S.shape[0])
    for m in range(S.shape[0]):
        eps = _AUTO_RIDGE * np.trace(H[m]) / k if ridge is None else ridge
        eps_used[m] = eps
        if eps > 0:
            B[:, m] = np.linalg.solve(H[m] + eps * np.eye(k), g[m])
        else:
            # gauge directions make H singular whenever the basis is redundant
            B[:, m] = np.linalg.lstsq(H[m], g[m], rcond=None)[0]
    return B, float(np.max(eps_used))


def _basis_step(B, S, R, ridge):
    k, d = B.shape[0], S.shape[1]
    G = np.einsum("im,jm,mab->iajb", B, B, S).reshape(k * d, k * d)
    rhs = np.einsum("im,mab->aib", B, R).reshape(d, k * d)
    eps = _AUTO_RIDGE * np.trace(G) / (k * d) if ridge is None else ridge
    if eps > 0:
        Wst = np.linalg.solve(G + eps * np.eye(k * d), rhs.T)
    else:
        Wst = np.linalg.lstsq(G, rhs.T, rcond=None)[0]
    W = Wst.T.reshape(d, k, d).transpose(1, 0, 2)
    return np.ascontiguousarray(W), float(eps)


def _init(k, d, M, seed, restart):
    rng = stream(seed, "init", restart)
    W = rng.standard_normal((k, d, d)) / np.sqrt(d)
    B = rng.standard_normal((k, M))
    return W, B


def _run_als(X, Y, S, R, W, B, cfg):
    trace = [_residual_loss(X, Y, combine(W, B))]
    half = [trace[0]]
    ridges = []
    converged = False
    for _ in range(cfg.max_iters):
        B, eps_b = _coefficient_step(W, S, R, cfg.ridge)
        half.append(_residual_loss(X, Y, combine(W, B)))
        W, eps_w = _basis_step(B, S, R, cfg.ridge)
        loss = _residual_loss(X, Y, combine(W, B))
        half.append(loss)
        ridges.append((eps_b, eps_w))
        prev = trace[-1]
        trace.append(loss)
        if prev - loss <= cfg.tol * prev:
            converged = True
            break
    return W, B, trace, half, converged, ridges


def _run_gd(X, Y, S, R, W, B, cfg):
    """Full-batch Adam on ``(W, B)``."""
    M, T = X.shape[0], X.shape[1]
    lam = 0.0 if cfg.ridge is None else cfg.ridge
    b1, b2, eps = 0.9, 0.999, 1e-12
    mW = np.zeros_like(W); vW = np.zeros_like(W)
    mB = np.zeros_like(B); vB = np.zeros_like(B)
    trace = [_residual_loss(X, Y, combine(W, B))]
    converged = False
    for it in range(1, cfg.max_iters + 1):
        A = combine(W, B)
        Gm = (2.0 / (M * T)) * (np.matmul(A, S) - R)
        gW = np.einsum("im,mab->iab", B, Gm) + 2.0 * lam / (M * T) * W
        gB = np.einsum("iab,mab->im", W, Gm) + 2.0 * lam / (M * T) * B
        mW = b1 * mW + (1 - b1) * gW; vW = b2 * vW + (1 - b2) * gW * gW
        mB = b1 * mB + (1 - b1) * gB; vB = b2 * vB + (1 - b2) * gB * gB
        c1, c2 = 1 - b1 ** it, 1 - b2 ** it
        W = W - cfg.gd_step * (mW / c1) / (np.sqrt(vW / c2) + eps)
        B = B - cfg.gd_step * (mB / c1) / (np.sqrt(vB / c2) + eps)
        loss = _residual_loss(X, Y, combine(W, B))
        if not np.isfinite(loss):
            raise DivergenceError(f"gradient descent diverged at iteration {it}")
        prev = trace[-1]
        trace.append(loss)
        if abs(prev - loss) <= cfg.tol * prev:
            converged = True
            break
    return W, B, trace, (), converged, [(lam, lam)] * (len(trace) - 1)


def joint_fit(bundle, k_fit, config=None) -> JointFit:
    """Minimise the pooled loss over a rank-``k_fit`` shared basis.

    ALS alternates an exact ridge solve for every ``beta_m`` with an exact
    ridge solve for the basis; the basis step reduces to ``d`` independent
    ``(d k) x (d k)`` systems sharing one Gram matrix. The best of
    ``config.restarts`` random initialisations is returned.
    """
    cfg = config or FitConfig()
    d, M = bundle.d, bundle.M
    if isinstance(k_fit, bool) or not isinstance(k_fit, (int, np.integer)) or not 1 <= k_fit <= d * d:
        raise ArgumentError(f"k_fit must be an integer in [1, d^2={d * d}], got {k_fit!r}")
    X, Y, S, R = moments(bundle)
    if cfg.ridge == 0 and _is_singular(S.sum(axis=0)):
        raise RankDeficiencyError("basis step: pooled regressor Gram matrix is singular", step="basis")
    run = _run_als if cfg.optimizer == "als" else _run_gd

    best = None
    finals = []
    for r in range(cfg.restarts):
        W0, B0 = _init(int(k_fit), d, M, cfg.init_seed, r)
        out = run(X, Y, S, R, W0, B0, cfg)
        finals.append(out[2][-1])
        if best is None or out[2][-1] < best[1][2][-1]:
            best = (r, out)
        logger.debug("restart %d: loss %.6g after %d iterations", r, out[2][-1], len(out[2]) - 1)
    r, (W, B, trace, half, converged, ridges) = best
    eps_used = tuple(max(e) for e in ridges) if ridges else ()
    return JointFit(
        W_hat=W,
        B_hat=B,
        loss_trace=tuple(trace),
        converged=converged,
        best_restart=r,
        half_step_trace=tuple(half),
        restart_losses=tuple(finals),
        ridge_used=eps_used,
        config=cfg,
    )


def fit_coefficients(bundle, W, ridge=None):
    """Coefficient step alone: best ``beta_m`` for a fixed basis."""
    W = np.asarray(getattr(W, "W", W), dtype=float)
    _, _, S, R = moments(bundle)
    B, _ = _coefficient_step(W, S, R, ridge)
    return B


# --- model selection ------------------------------------------------------

@dataclass(frozen=True)
class SelectionCurvePoint:
    k: int
    fit_error: float
    validation_error: float


@dataclass(frozen=True)
class SelectionResult:
    k_chosen: int
    curve: tuple
    fits: tuple = ()


def split_bundle(bundle, validation=0.2, split="steps"):
    """Return ``(train, validation)`` bundles.

    ``split="steps"`` holds out the trailing fraction of transitions of every
    system; ``split="systems"`` holds out the trailing fraction of systems.
    """
    if not 0 < validation < 1:
        raise ArgumentError(f"validation fraction must be in (0, 1), got {validation}")
    if split == "steps":
        n_val = int(round(validation * bundle.T))
        n_train = bundle.T - n_val
        if n_val < 1 or n_train < 1:
            raise ArgumentError("validation split leaves no training or no validation steps")
        return bundle.subset(steps=slice(0, n_train)), bundle.subset(steps=slice(n_train, bundle.T))
    if split == "systems":
        n_val = int(round(validation * bundle.M))
        n_train = bundle.M - n_val
        if n_val < 1 or n_train < 1:
            raise ArgumentError("validation split leaves no training or no validation systems")
        return (bundle.subset(systems=range(n_train)),
                bundle.subset(systems=range(n_train, bundle.M)))
    raise ArgumentError(f"split must be 'steps' or 'systems', got {split!r}")


def _validation_error(fit, val, split):
    if split == "steps":
        return prediction_loss(val, fit.A_hat)
    # held-out systems: fit beta on the first half of each trajectory, score the second
    half = max(1, val.T // 2)
    if half >= val.T:
        raise ArgumentError("held-out systems need at least two transitions")
    first = val.subset(steps=slice(0, half))
    second = val.subset(steps=slice(half, val.T))
    B = fit_coefficients(first, fit.W_hat)
    return prediction_loss(second, combine(fit.W_hat, B))


def select_k(bundle, k_grid, validation=0.2, config=None, *, split="steps",
             elbow_slack=0.05) -> SelectionResult:
    """Elbow choice of the basis count on held-out one-step prediction error.

    Picks the smallest ``k`` whose validation error is within
    ``(1 + elbow_slack)`` of the minimum over ``k_grid``. A floor of
    ``1e-10`` times the mean squared validation target keeps noiseless
    curves, whose errors sit at round-off level, from being compared
    purely relatively.
    """
    grid = [int(k) for k in k_grid]
    if not grid or grid != sorted(grid):
        raise ArgumentError("k_grid must be non-empty and sorted ascending")
    train, val = split_bundle(bundle, validation, split)
    curve, fits = [], []
    for k in grid:
        fit = joint_fit(train, k, config)
        curve.append(SelectionCurvePoint(k, fit.final_loss, _validation_error(fit, val, split)))
        fits.append(fit)
    best = min(p.validation_error for p in curve)
    Yv = val.targets()
    floor = _SELECTION_FLOOR * float(np.mean(np.sum(Yv * Yv, axis=-1)))
    cutoff = (1.0 + elbow_slack) * best + floor
    k_chosen = next(p.k for p in curve if p.validation_error <= cutoff)
    return SelectionResult(k_chosen, tuple(curve), tuple(fits))


# --- serialisation --------------------------------------------------------

def fit_to_dict(fit, bundle=None) -> dict:
    prov = None if bundle is None else {"seed": bundle.seed, "M": bundle.M, "T": bundle.T, "d": bundle.d}
    if isinstance(fit, OlsFit):
        return {
            "method": "ols",
            "A_hat": fit.A_hat,
            "ridge_used": fit.ridge_used,
            "per_system_residual": fit.per_system_residual,
            "bundle_provenance": prov,
        }
    return {
        "method": "joint",
        "k": fit.k,
        "W_hat": fit.W_hat,
        "B_hat": fit.B_hat,
        "A_hat": fit.A_hat,
        "loss_trace": list(fit.loss_trace),
        "final_loss": fit.final_loss,
        "converged": fit.converged,
        "best_restart": fit.best_restart,
        "restart_losses": list(fit.restart_losses),
        "ridge_used": list(fit.ridge_used),
        "config": None if fit.config is None else asdict(fit.config),
        "bundle_provenance": prov,
    }


def fit_from_dict(obj):
    if obj["method"] == "ols":
        return OlsFit(_io.as_array(obj["A_hat"], 3), float(obj["ridge_used"]),
                      _io.as_array(obj["per_system_residual"], 1))
    cfg = None if obj.get("config") is None else FitConfig(**obj["config"])
    return JointFit(
        W_hat=_io.as_array(obj["W_hat"], 3),
        B_hat=_io.as_array(obj["B_hat"], 2),
        loss_trace=tuple(obj["loss_trace"]),
        converged=bool(obj["converged"]),
        best_restart=int(obj["best_restart"]),
        restart_losses=tuple(obj.get("restart_losses", ())),
        ridge_used=tuple(obj.get("ridge_used", ())),
        config=cfg,
    )


def save_fit(fit, path, bundle=None):
    return _io.dump(fit_to_dict(fit, bundle), path)


def load_fit(path):
    return fit_from_dict(_io.load(path))
