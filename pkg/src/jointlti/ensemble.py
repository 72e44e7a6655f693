"""Families of transition matrices built from a shared basis.

A system ensemble holds ``k`` basis matrices ``W_i`` (each ``d x d``), a
``k x M`` coefficient matrix ``B`` and, optionally, per-system deviations
``D_m``. The transition matrix of system ``m`` is

    A_m = sum_i B[i, m] * W_i + D_m.

Generators are seed-deterministic and draw per-system sub-streams, so growing
``M`` leaves the first systems untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from . import _io
from ._rng import stream
from .errors import ArgumentError, DegenerateSystemError


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_count(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def spectral_radius(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


@dataclass(frozen=True)
class SharedBasis:
    """``k`` real ``d x d`` matrices stacked as an array of shape ``(k, d, d)``."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 3 or W.shape[0] < 1 or W.shape[1] < 1 or W.shape[1] != W.shape[2]:
            raise ArgumentError(f"basis must have shape (k, d, d) with k, d >= 1, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ArgumentError("basis matrices must have finite entries")
        object.__setattr__(self, "W", _frozen(W))

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficient matrix ``B`` of shape ``(k, M)``; column ``m`` is ``beta_m``."""

    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
            raise ArgumentError(f"coefficients must have shape (k, M) with k, M >= 1, got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ArgumentError("coefficients must be finite")
        object.__setattr__(self, "B", _frozen(B))

    @property
    def k(self) -> int:
        return self.B.shape[0]

    @property
    def M(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class MisspecificationSet:
    """Per-system deviations ``D_m`` from the shared-basis model."""

    D: np.ndarray
    per_system_fro_sq: np.ndarray = field(init=False)
    total_fro_sq: float = field(init=False)

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        if D.ndim != 3 or D.shape[1] != D.shape[2] or D.shape[0] < 1:
            raise ArgumentError(f"misspecification must have shape (M, d, d), got {D.shape}")
        if not np.all(np.isfinite(D)):
            raise ArgumentError("misspecification matrices must be finite")
        per = np.einsum("mij,mij->m", D, D)
        object.__setattr__(self, "D", _frozen(D))
        object.__setattr__(self, "per_system_fro_sq", _frozen(per))
        object.__setattr__(self, "total_fro_sq", float(np.sum(per)))

    @property
    def M(self) -> int:
        return self.D.shape[0]

    @property
    def d(self) -> int:
        return self.D.shape[1]

    @property
    def affected(self) -> np.ndarray:
        return self.per_system_fro_sq > 0


@dataclass(frozen=True)
class JordanSpec:
    """Real Jordan structure: ``blocks`` is a sequence of ``(eigenvalue, size)``.

    ``conditioning`` bounds the condition number of the similarity transform
    drawn by :func:`build_from_jordan`.
    """

    blocks: tuple
    conditioning: float = 1.0

    def __post_init__(self):
        blocks = tuple((float(lam), int(size)) for lam, size in self.blocks)
        if not blocks:
            raise ArgumentError("a Jordan spec needs at least one block")
        for lam, size in blocks:
            if size < 1:
                raise ArgumentError(f"Jordan block sizes must be positive, got {size}")
            if not np.isfinite(lam):
                raise ArgumentError(f"Jordan eigenvalues must be finite, got {lam}")
        if not np.isfinite(self.conditioning):
            raise ArgumentError("conditioning must be finite")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "conditioning", float(self.conditioning))

    @classmethod
    def uniform(cls, d, block_size, eigenvalue, conditioning=1.0):
        """``d // block_size`` equal blocks, plus one remainder block if needed."""
        d = _check_count("d", d)
        block_size = _check_count("block_size", block_size)
        if block_size > d:
            raise ArgumentError(f"block size {block_size} exceeds dimension {d}")
        sizes = [block_size] * (d // block_size)
        if d % block_size:
            sizes.append(d % block_size)
        return cls(tuple((eigenvalue, s) for s in sizes), conditioning)

    @property
    def d(self) -> int:
        return sum(size for _, size in self.blocks)

    @property
    def l_star(self) -> int:
        return max(size for _, size in self.blocks)

    @property
    def spectral_radius(self) -> float:
        return max(abs(lam) for lam, _ in self.blocks)

    @property
    def leading_block_size(self) -> int:
        """Largest block among the eigenvalues of maximal modulus."""
        r = self.spectral_radius
        return max(size for lam, size in self.blocks if abs(lam) == r)

    def jordan_matrix(self) -> np.ndarray:
        parts = []
        for lam, size in self.blocks:
            J = lam * np.eye(size) + np.eye(size, k=1)
            parts.append(J)
        return scipy.linalg.block_diag(*parts)

    def to_dict(self):
        return {"blocks": [[lam, size] for lam, size in self.blocks], "conditioning": self.conditioning}

    @classmethod
    def from_dict(cls, obj):
        return cls(tuple((lam, size) for lam, size in obj["blocks"]), obj.get("conditioning", 1.0))


@dataclass(frozen=True)
class SystemEnsemble:
    """Shared basis, coefficients, optional deviations and the derived ``A_m``.

    ``jordan`` optionally carries ``(P, JordanSpec)`` per system for matrices
    built by :func:`build_from_jordan`; diagnostics use it instead of a
    numerical Jordan decomposition.
    """

    basis: SharedBasis
    coefficients: CoefficientSet
    misspec: Optional[MisspecificationSet] = None
    rho_slack: float = 0.0
    T_nominal: Optional[int] = None
    spectral_control: bool = False
    jordan: Optional[tuple] = None
    provenance: dict = field(default_factory=dict)
    A: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.basis.k != self.coefficients.k:
            raise ArgumentError(
                f"basis has k={self.basis.k} matrices but coefficients have {self.coefficients.k} rows"
            )
        if self.misspec is not None and (
            self.misspec.M != self.coefficients.M or self.misspec.d != self.basis.d
        ):
            raise ArgumentError(
                f"misspecification shape {self.misspec.D.shape} does not match "
                f"M={self.coefficients.M}, d={self.basis.d}"
            )
        if self.rho_slack < 0:
            raise ArgumentError(f"rho_slack must be >= 0, got {self.rho_slack}")
        if self.jordan is not None:
            jordan = tuple(self.jordan)
            if len(jordan) != self.coefficients.M:
                raise ArgumentError("jordan metadata must have one entry per system")
            object.__setattr__(self, "jordan", jordan)
        A = _combine(self.basis.W, self.coefficients.B)
        if self.misspec is not None:
            A = A + self.misspec.D
        object.__setattr__(self, "A", _frozen(A))

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def M(self) -> int:
        return self.coefficients.M

    def spectral_radii(self) -> np.ndarray:
        return np.array([spectral_radius(A) for A in self.A])

    def jordan_for(self, m):
        if self.jordan is None:
            return None
        return self.jordan[m]

    def recomposition_error(self) -> float:
        """Largest relative Frobenius gap between stored and recomputed ``A_m``."""
        W, B = self.basis.W, self.coefficients.B
        worst = 0.0
        for m in range(self.M):
            ref = np.zeros((self.d, self.d))
            for i in range(self.k):
                ref += B[i, m] * W[i]
            if self.misspec is not None:
                ref += self.misspec.D[m]
            gap = np.linalg.norm(self.A[m] - ref) / (1.0 + np.linalg.norm(self.A[m]))
            worst = max(worst, gap)
        return worst


def _combine(W, B):
    return np.einsum("im,iab->mab", B, W)


def generate_shared_basis(k, d, seed) -> SharedBasis:
    """Draw ``k`` basis matrices with i.i.d. standard-normal entries."""
    k = _check_count("k", k)
    d = _check_count("d", d)
    rng = stream(seed, "basis")
    return SharedBasis(rng.standard_normal((k, d, d)))


def sample_coefficients(k, M, seed) -> CoefficientSet:
    """Draw ``beta_m`` i.i.d. standard normal, one sub-stream per system."""
    k = _check_count("k", k)
    M = _check_count("M", M)
    B = np.empty((k, M))
    for m in range(M):
        B[:, m] = stream(seed, "coefficients", m).standard_normal(k)
    return CoefficientSet(B)


def sample_radius_targets(M, lo, hi, seed) -> np.ndarray:
    """One spectral-radius target per system, uniform on ``[lo, hi]``."""
    M = _check_count("M", M)
    if not 0 < lo <= hi:
        raise ArgumentError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    return np.array([stream(seed, "radius", m).uniform(lo, hi) for m in range(M)])


def compose_systems(basis, coeffs, misspec=None, *, rho_slack=0.0, T_nominal=None,
                    provenance=None) -> SystemEnsemble:
    return SystemEnsemble(
        basis=basis,
        coefficients=coeffs,
        misspec=misspec,
        rho_slack=rho_slack,
        T_nominal=T_nominal,
        provenance=dict(provenance or {}),
    )


def regauge(basis, coeffs, G):
    """Apply the gauge ``(W, B) -> (W G^{-1}, G B)``; the ``A_m`` are unchanged."""
    G = np.asarray(G, dtype=float)
    if G.shape != (basis.k, basis.k):
        raise ArgumentError(f"gauge must be {basis.k}x{basis.k}, got {G.shape}")
    Ginv = np.linalg.inv(G)
    W_new = np.einsum("iab,ij->jab", basis.W, Ginv)
    return SharedBasis(W_new), CoefficientSet(G @ coeffs.B)


def rescale_to_radius(ensemble, targets, T_nominal=None) -> SystemEnsemble:
    """Scale each ``beta_m`` so that ``A_m`` has spectral radius ``targets[m]``.

    Scaling the coefficients rather than ``A_m`` keeps every system inside the
    span of the shared basis.
    """
    if ensemble.misspec is not None:
        raise ArgumentError("rescale before injecting misspecification")
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if targets.size != ensemble.M:
        raise ArgumentError(f"need {ensemble.M} radius targets, got {targets.size}")
    if np.any(targets < 0) or not np.all(np.isfinite(targets)):
        raise ArgumentError("radius targets must be finite and non-negative")
    B = np.array(ensemble.coefficients.B, copy=True)
    for m, A in enumerate(ensemble.A):
        r = spectral_radius(A)
        if r < 1e-12:
            raise DegenerateSystemError(f"system {m} has spectral radius {r:.3g}; cannot rescale")
        B[:, m] *= targets[m] / r
    return SystemEnsemble(
        basis=ensemble.basis,
        coefficients=CoefficientSet(B),
        misspec=None,
        rho_slack=ensemble.rho_slack,
        T_nominal=T_nominal if T_nominal is not None else ensemble.T_nominal,
        spectral_control=True,
        jordan=ensemble.jordan,
        provenance=dict(ensemble.provenance),
    )


def inject_misspecification(ensemble, misspec) -> SystemEnsemble:
    return SystemEnsemble(
        basis=ensemble.basis,
        coefficients=ensemble.coefficients,
        misspec=misspec,
        rho_slack=ensemble.rho_slack,
        T_nominal=ensemble.T_nominal,
        spectral_control=ensemble.spectral_control,
        jordan=None,
        provenance=dict(ensemble.provenance),
    )


def random_orthogonal(d, rng):
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    # sign fix makes Q Haar distributed
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def build_from_jordan(spec, seed=0, transform=None):
    """Return ``(A, P)`` with ``A = P^{-1} Lambda P``.

    ``transform=None`` draws ``P = Q diag(s)`` with ``Q`` Haar-orthogonal and
    ``s`` geometrically spaced on ``[1, spec.conditioning]``, so
    ``cond(P) = spec.conditioning``. ``transform="identity"`` uses ``P = I``;
    an explicit invertible array is used as given.
    """
    if spec.conditioning < 1:
        raise ArgumentError(f"conditioning must be >= 1, got {spec.conditioning}")
    d = spec.d
    Lam = spec.jordan_matrix()
    if transform is None:
        rng = stream(seed, "jordan")
        Q = random_orthogonal(d, rng)
        s = np.geomspace(1.0, spec.conditioning, d) if d > 1 else np.ones(1)
        P = Q * s
    elif isinstance(transform, str):
        if transform != "identity":
            raise ArgumentError(f"unknown transform {transform!r}")
        P = np.eye(d)
    else:
        P = np.asarray(transform, dtype=float)
        if P.shape != (d, d):
            raise ArgumentError(f"transform must be {d}x{d}, got {P.shape}")
    A = np.linalg.solve(P, Lam @ P)
    return A, P


def sample_misspecification(d, M, a, fro_sq_target, seed) -> MisspecificationSet:
    """Gaussian deviations hitting each system independently with probability ``M**-a``.

    Entries have standard deviation ``sqrt(fro_sq_target) / d`` so that
    ``E ||D_m||_F^2 = fro_sq_target`` for an affected system.
    """
    d = _check_count("d", d)
    M = _check_count("M", M)
    if not a >= 0:
        raise ArgumentError(f"exponent a must be >= 0, got {a}")
    if not fro_sq_target > 0:
        raise ArgumentError(f"fro_sq_target must be > 0, got {fro_sq_target}")
    prob = float(M) ** (-float(a))
    std = np.sqrt(fro_sq_target) / d
    D = np.zeros((M, d, d))
    for m in range(M):
        rng = stream(seed, "misspec", m)
        hit = rng.random() < prob
        draw = rng.standard_normal((d, d))
        if hit:
            D[m] = std * draw
    return MisspecificationSet(D)


def ensemble_from_transitions(A_list, jordan=None, *, rho_slack=0.0, T_nominal=None,
                              provenance=None) -> SystemEnsemble:
    """Wrap arbitrary matrices as an ensemble with ``W = A`` and ``B = I``."""
    A = np.asarray(A_list, dtype=float)
    if A.ndim == 2:
        A = A[None]
    M = A.shape[0]
    return SystemEnsemble(
        basis=SharedBasis(A),
        coefficients=CoefficientSet(np.eye(M)),
        rho_slack=rho_slack,
        T_nominal=T_nominal,
        jordan=None if jordan is None else tuple(jordan),
        provenance=dict(provenance or {}),
    )


def generate_ensemble(d, k, M, seed, *, regime="stable", radius_lo=0.7, radius_hi=0.9,
                      T_nominal=None, rho_slack=0.0, misspec=None) -> SystemEnsemble:
    """Basis, coefficients, spectral rescaling and optional deviations in one call.

    ``regime`` is ``"stable"`` (radii uniform on ``[radius_lo, radius_hi]``),
    ``"unit_root"`` (every radius exactly 1) or ``None`` (no rescaling).
    ``misspec`` is ``None`` or ``(a, fro_sq_target)``.
    """
    basis = generate_shared_basis(k, d, seed)
    coeffs = sample_coefficients(k, M, seed)
    prov = {"seed": int(seed), "regime": regime}
    ens = compose_systems(basis, coeffs, rho_slack=rho_slack, T_nominal=T_nominal, provenance=prov)
    if regime == "stable":
        targets = sample_radius_targets(M, radius_lo, radius_hi, seed)
        prov.update(radius_lo=float(radius_lo), radius_hi=float(radius_hi))
        ens = rescale_to_radius(ens, targets, T_nominal)
    elif regime == "unit_root":
        ens = rescale_to_radius(ens, np.ones(M), T_nominal)
    elif regime is not None:
        raise ArgumentError(f"unknown regime {regime!r}")
    if misspec is not None:
        a, fro_sq = misspec
        prov.update(misspec_a=float(a), misspec_fro_sq=float(fro_sq))
        ens = inject_misspecification(ens, sample_misspecification(d, M, a, fro_sq, seed))
    object.__setattr__(ens, "provenance", prov)
    return ens


# --- serialisation -------------------------------------------------------

def ensemble_to_dict(ens) -> dict:
    jordan = None
    if ens.jordan is not None:
        jordan = [
            None if item is None else {"P": item[0], **item[1].to_dict()}
            for item in ens.jordan
        ]
    return {
        "k": ens.k,
        "d": ens.d,
        "M": ens.M,
        "rho_slack": ens.rho_slack,
        "T_nominal": ens.T_nominal,
        "spectral_control": ens.spectral_control,
        "W": ens.basis.W,
        "B": ens.coefficients.B,
        "D": None if ens.misspec is None else ens.misspec.D,
        "jordan": jordan,
        "seed_provenance": ens.provenance,
    }


def ensemble_from_dict(obj) -> SystemEnsemble:
    k, d, M = int(obj["k"]), int(obj["d"]), int(obj["M"])
    W = _io.as_array(obj["W"]).reshape(k, d, d)
    B = _io.as_array(obj["B"]).reshape(k, M)
    misspec = None
    if obj.get("D") is not None:
        misspec = MisspecificationSet(_io.as_array(obj["D"]).reshape(M, d, d))
    jordan = None
    if obj.get("jordan") is not None:
        jordan = tuple(
            None if item is None
            else (_io.as_array(item["P"]).reshape(d, d), JordanSpec.from_dict(item))
            for item in obj["jordan"]
        )
    return SystemEnsemble(
        basis=SharedBasis(W),
        coefficients=CoefficientSet(B),
        misspec=misspec,
        rho_slack=float(obj.get("rho_slack", 0.0)),
        T_nominal=obj.get("T_nominal"),
        spectral_control=bool(obj.get("spectral_control", False)),
        jordan=jordan,
        provenance=dict(obj.get("seed_provenance") or {}),
    )


def save_ensemble(ens, path):
    return _io.dump(ensemble_to_dict(ens), path)


def load_ensemble(path) -> SystemEnsemble:
    return ensemble_from_dict(_io.load(path))
