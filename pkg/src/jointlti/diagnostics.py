"""Spectral constants, covariance envelopes and error metrics.

The amplification constant of a transition matrix ``A = P^{-1} Lambda P`` is

    alpha(A) = ||P^{-1}||_{inf->2} ||P||_inf * f(Lambda)     if |lambda_1| < 1
    alpha(A) = ||P^{-1}||_{inf->2} ||P||_inf * e^{rho + 1}   if |lambda_1| <= 1 + rho/T

and feeds the per-system envelopes ``lambda_min(C) T / 4`` (lower) and
``alpha^2 b^2 T`` or ``alpha^2 b^2 T^{2 l* + 1}`` (upper) on the sample
covariance ``Sigma_m = sum_{t<T} x_m(t) x_m(t)'``.

Jordan structure is never extracted numerically from a defective matrix;
callers supply ``(P, JordanSpec)`` from :func:`jointlti.ensemble.build_from_jordan`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _io, kernels
from .errors import ArgumentError, DomainError, JordanUnavailableError, NoiseUnavailableError

STABLE = "stable"
NEAR_UNIT = "near_unit"

_UNIT_TOL = 1e-9
_DIAG_COND_MAX = 1e8


def f_lambda(l_star, lam):
    """Eigenvalue-decay factor ``f(Lambda)`` for largest block ``l_star`` and ``|lambda_1| = lam``.

    ``l_star = 1`` gives the diagonalisable value ``1 / (1 - lam)``. Larger
    blocks use ``e^{1/lam} [(l-1)/(-log lam) + (l-1)!/(-log lam)^l]``,
    evaluated in log space.
    """
    l_star = int(l_star)
    if l_star < 1:
        raise ArgumentError(f"l_star must be >= 1, got {l_star}")
    if not lam < 1:
        raise DomainError(f"f_lambda needs |lambda_1| < 1, got {lam}; use the near-unit branch")
    if lam < 0:
        raise ArgumentError(f"lam is a modulus and must be >= 0, got {lam}")
    if l_star == 1:
        return 1.0 / (1.0 - lam)
    if lam == 0:
        return math.inf
    nl = -math.log(lam)
    log_second = math.lgamma(l_star) - l_star * math.log(nl)
    log_pref = 1.0 / lam
    # e^{1/lam} * [(l-1)/nl + e^{log_second}]
    first = math.log(l_star - 1) - math.log(nl)
    hi = max(first, log_second)
    log_sum = hi + math.log(math.exp(first - hi) + math.exp(log_second - hi))
    total = log_pref + log_sum
    return math.exp(total) if total < 709.0 else math.inf


def op_norm_inf(A):
    """``||A||_inf``: largest absolute row sum."""
    A = np.atleast_2d(np.asarray(A))
    return float(np.max(np.sum(np.abs(A), axis=1), initial=0.0))


def op_norm_inf_to_2(A, max_exact_dim=16):
    """``||A||_{inf->2} = max_{||v||_inf <= 1} ||A v||_2``.

    Returns ``(value, exact)``. For real ``A`` with at most ``max_exact_dim``
    columns the maximum over the vertices of the hypercube is enumerated
    (the objective is convex, so a vertex attains it). Otherwise the bound
    ``sqrt(sum_i ||row_i||_1^2)`` is returned with ``exact=False``; this is
    also the path for complex matrices.
    """
    A = np.atleast_2d(np.asarray(A))
    if np.iscomplexobj(A) and np.any(np.imag(A) != 0):
        return float(np.sqrt(np.sum(np.sum(np.abs(A), axis=1) ** 2))), False
    A = np.ascontiguousarray(np.real(A), dtype=float)
    if A.shape[1] <= max_exact_dim:
        val_sq, _ = kernels.max_sign_vertex(A)
        return float(np.sqrt(val_sq)), True
    return float(np.sqrt(np.sum(np.sum(np.abs(A), axis=1) ** 2))), False


@dataclass(frozen=True)
class SpectralSummary:
    spectral_radius: float
    l_star: int
    xi: float
    xi_exact: bool
    f_value: float
    alpha: float
    regime: str
    rho: float = 0.0
    T: Optional[int] = None

    def to_dict(self):
        return {
            "spectral_radius": self.spectral_radius,
            "l_star": self.l_star,
            "xi": self.xi,
            "xi_exact": self.xi_exact,
            "f_value": self.f_value,
            "alpha": self.alpha,
            "regime": self.regime,
            "rho": self.rho,
            "T": self.T,
        }


def classify_regime(radius, rho=0.0, T=None):
    if radius < 1.0 - _UNIT_TOL:
        return STABLE
    budget = rho / T if (T and rho) else 0.0
    if radius <= 1.0 + budget + _UNIT_TOL:
        return NEAR_UNIT
    raise DomainError(
        f"spectral radius {radius:.6g} exceeds 1 + rho/T = {1.0 + budget:.6g}"
    )


def _diagonal_transform(A):
    w, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > _DIAG_COND_MAX:
        raise JordanUnavailableError(
            f"matrix is numerically defective (eigenvector condition {cond:.3g}); "
            "supply (P, JordanSpec) from build_from_jordan"
        )
    if np.all(np.imag(w) == 0) and np.all(np.imag(V) == 0):
        V = np.real(V)
    P = np.linalg.inv(V)
    return float(np.max(np.abs(w))), P


def alpha(A=None, P=None, spec=None, *, rho=0.0, T=None, max_exact_dim=16) -> SpectralSummary:
    """Amplification constant ``alpha(A)`` and its ingredients.

    Pass ``(P, spec)`` for matrices built from a Jordan spec; with ``A``
    alone the matrix must be diagonalisable (eigenvector condition number at
    most 1e8), and ``P`` is the inverse eigenvector matrix.
    """
    if spec is not None:
        if P is None:
            raise ArgumentError("a Jordan spec must come with its transform P")
        P = np.asarray(P)
        radius, l_star = spec.spectral_radius, spec.l_star
    elif A is not None:
        A = np.asarray(A, dtype=float)
        radius, P = _diagonal_transform(A)
        l_star = 1
    else:
        raise ArgumentError("need A, or P together with a Jordan spec")
    regime = classify_regime(radius, rho, T)
    inv_norm, exact = op_norm_inf_to_2(np.linalg.inv(P), max_exact_dim)
    xi = inv_norm * op_norm_inf(P)
    f_value = f_lambda(l_star, radius) if regime == STABLE else math.exp(rho + 1.0)
    return SpectralSummary(float(radius), int(l_star), float(xi), exact, float(f_value),
                           float(xi * f_value), regime, float(rho), T)


def truncation_level(sigma_sq, d, M, T, delta):
    """``b_T(delta) = sqrt(2 sigma^2 log(2 d M T / delta))``."""
    if not 0 < delta < 1:
        raise ArgumentError(f"delta must be in (0, 1), got {delta}")
    return math.sqrt(2.0 * sigma_sq * math.log(2.0 * d * M * T / delta))


def state_norm_bound(summary, b_bar, t):
    """Envelope on ``||x(t)||_2``: ``alpha b`` (stable) or ``alpha b t^{l*}`` (near unit)."""
    if summary.regime == STABLE:
        return summary.alpha * b_bar
    return summary.alpha * b_bar * float(t) ** summary.l_star


# --- covariance envelopes -------------------------------------------------

@dataclass(frozen=True)
class CovarianceRow:
    m: int
    lmin: float
    lmax: float
    lower_theory: float
    upper_theory: float
    kappa_m: float
    lower_held: bool
    upper_held: bool
    alpha: float
    regime: str


@dataclass(frozen=True)
class CovarianceReport:
    rows: tuple
    lambda_lower: float
    lambda_upper: float
    kappa: float
    kappa_infty: float
    T: int
    delta: float
    rho: float
    above_floor: bool

    def to_dict(self):
        return {
            "T": self.T,
            "delta": self.delta,
            "rho": self.rho,
            "above_floor": self.above_floor,
            "lambda_lower": self.lambda_lower,
            "lambda_upper": self.lambda_upper,
            "kappa": self.kappa,
            "kappa_infty": self.kappa_infty,
            "systems": [r.__dict__ for r in self.rows],
        }

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "lmin", "lmax", "lower_theory", "upper_theory", "kappa_m",
                        "lower_held", "upper_held"])
            for r in self.rows:
                w.writerow([r.m] + [_io.fmt_float(v) for v in
                                    (r.lmin, r.lmax, r.lower_theory, r.upper_theory, r.kappa_m)]
                           + [int(r.lower_held), int(r.upper_held)])
        return path


def _ratio(num, den):
    if den > 0:
        return num / den
    return math.inf if num > 0 else math.nan


def covariance_report(bundle, ensemble, noise=None, delta=0.1, rho=0.0, *, t0_floor=None,
                      max_exact_dim=16) -> CovarianceReport:
    """Sample covariances of every system against their theoretical envelopes.

    ``delta`` is the covariance confidence level; the truncation level is
    taken at ``delta / 3``. ``above_floor`` records whether ``T`` clears the
    burn-in floor (default ``50 d``) below which event frequencies are not
    meaningful.
    """
    noise = noise or bundle.noise
    if ensemble.M != bundle.M or ensemble.d != bundle.d:
        raise ArgumentError("ensemble and bundle disagree on (M, d)")
    T, d, M = bundle.T, bundle.d, bundle.M
    X = bundle.regressors()
    Sig = np.einsum("mti,mtj->mij", X, X)
    b_T = truncation_level(noise.sigma_sq, d, M, T, delta / 3.0)
    lower = noise.lambda_min * T / 4.0
    rows = []
    for m in range(M):
        meta = ensemble.jordan_for(m)
        if meta is not None:
            summ = alpha(P=meta[0], spec=meta[1], rho=rho, T=T, max_exact_dim=max_exact_dim)
        else:
            summ = alpha(ensemble.A[m], rho=rho, T=T, max_exact_dim=max_exact_dim)
        b_bar = b_T + float(np.max(np.abs(bundle.trajectories[m].states[0])))
        if summ.regime == STABLE:
            upper = summ.alpha ** 2 * b_bar ** 2 * T
        else:
            upper = summ.alpha ** 2 * b_bar ** 2 * float(T) ** (2 * summ.l_star + 1)
        w = np.linalg.eigvalsh(Sig[m])
        lmin, lmax = float(w[0]), float(w[-1])
        rows.append(CovarianceRow(
            m=m, lmin=lmin, lmax=lmax, lower_theory=lower, upper_theory=upper,
            kappa_m=_ratio(upper, lower),
            lower_held=bool(lower > 0 and lmin >= lower),
            upper_held=bool(lmax <= upper),
            alpha=summ.alpha, regime=summ.regime,
        ))
    lam_upper = max(r.upper_theory for r in rows)
    lam_lower = min(r.lower_theory for r in rows)
    floor = 50 * d if t0_floor is None else t0_floor
    return CovarianceReport(
        rows=tuple(rows),
        lambda_lower=lam_lower,
        lambda_upper=lam_upper,
        kappa=max(r.kappa_m for r in rows),
        kappa_infty=_ratio(lam_upper, lam_lower),
        T=T, delta=float(delta), rho=float(rho), above_floor=T >= floor,
    )


# --- estimation error -----------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    per_system_fro_sq: np.ndarray
    mean: float
    method: str = ""


def estimation_error(A_hat, ensemble, method="") -> ErrorReport:
    """Per-system ``||A_hat_m - A_m||_F^2`` against the true (possibly misspecified) ``A_m``."""
    A_hat = np.asarray(getattr(A_hat, "A_hat", A_hat), dtype=float)
    if A_hat.shape != ensemble.A.shape:
        raise ArgumentError(f"estimates have shape {A_hat.shape}, truth has {ensemble.A.shape}")
    diff = A_hat - ensemble.A
    per = np.einsum("mij,mij->m", diff, diff)
    return ErrorReport(per, float(np.mean(per)), method)


# --- noise events ---------------------------------------------------------

@dataclass(frozen=True)
class NoiseEvents:
    """Outcome of the three noise events for one bundle."""

    bdd: bool
    eta: bool
    Z: bool
    max_abs_noise: float
    truncation_level: float
    z_fro_sq: float
    z_threshold: float
    eta_extremes: tuple = field(default=())


def noise_event_check(bundle, delta) -> NoiseEvents:
    """Evaluate the truncation, noise-covariance and total-magnitude events.

    * bdd: ``max_{t,m} ||eta_m(t)||_inf <= sqrt(2 sigma^2 log(2 d M T / delta))``
    * eta: ``(3/4) lambda_min(C) I <= (1/T) sum_t eta eta' <= (5/4) lambda_max(C) I``
      for every system
    * Z: ``sum_{m,t} ||eta_m(t)||^2 <= M T tr(C) + log(2 / delta)``
    """
    if not bundle.has_noise:
        raise NoiseUnavailableError("bundle was simulated without retaining its noise")
    noise = bundle.noise
    T, d, M = bundle.T, bundle.d, bundle.M
    E = np.stack([tr.noise for tr in bundle.trajectories])
    level = truncation_level(noise.sigma_sq, d, M, T, delta)
    max_abs = float(np.max(np.abs(E)))
    cov = np.einsum("mti,mtj->mij", E, E) / T
    w = np.linalg.eigvalsh(cov)
    lo, hi = 0.75 * noise.lambda_min, 1.25 * noise.lambda_max
    tol = 1e-12 * max(1.0, hi)
    eta_ok = bool(np.all(w[:, 0] >= lo - tol) and np.all(w[:, -1] <= hi + tol))
    z_sq = float(np.sum(E * E))
    z_thr = M * T * float(np.trace(noise.C)) + math.log(2.0 / delta)
    return NoiseEvents(
        bdd=max_abs <= level,
        eta=eta_ok,
        Z=z_sq <= z_thr,
        max_abs_noise=max_abs,
        truncation_level=level,
        z_fro_sq=z_sq,
        z_threshold=z_thr,
        eta_extremes=(float(w[:, 0].min()), float(w[:, -1].max())),
    )


def event_frequencies(results):
    """Empirical frequency of each event over a list of :class:`NoiseEvents`."""
    n = len(results)
    if n == 0:
        raise ArgumentError("need at least one replicate")
    return {
        "bdd": sum(r.bdd for r in results) / n,
        "eta": sum(r.eta for r in results) / n,
        "Z": sum(r.Z for r in results) / n,
        "replicates": n,
    }


def noise_event_frequencies(ensemble, T, noise, delta, replicates, seed):
    """Simulate ``replicates`` fresh bundles and report event frequencies."""
    from ._rng import derive_seed
    from .dynamics import simulate_bundle

    results = [
        noise_event_check(simulate_bundle(ensemble, T, noise, seed=derive_seed(seed, "replicate", r)), delta)
        for r in range(replicates)
    ]
    return event_frequencies(results)


def save_report(report, path):
    """Write a report as JSON, or as CSV rows when ``path`` ends in ``.csv``."""
    path = Path(path)
    if path.suffix == ".csv" and isinstance(report, CovarianceReport):
        return report.write_csv(path)
    obj = report.to_dict() if hasattr(report, "to_dict") else dict(report.__dict__)
    return _io.dump(obj, path)
