"""Core domain types.

The central object is ObliqueMatrix: an n-by-k matrix with nonnegative
entries and unit Euclidean norm in every column. The feasible set of the
original problem (orthogonal AND nonnegative) is the subset of these
whose columns have pairwise disjoint supports.

Construction is validating: make_oblique refuses anything that is not
already on the manifold (no silent normalization), so the array you read
back is bit-identical to the one you passed in.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from .errors import BadShape, NegativeEntry, NonUnitColumn, ZeroColumn

# Column norms must match 1 to this absolute tolerance.
COL_NORM_TOL = 1e-12
# Entries with magnitude <= this count as structural zeros.
SUPPORT_ZERO_TOL = 1e-10


def _as_float_matrix(data, name="matrix"):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise BadShape(f"{name} must be 2-d, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise BadShape(f"{name} contains non-finite entries")
    return arr


@dataclasses.dataclass(frozen=True)
class ObliqueMatrix:
    """Validated point on the nonnegative oblique manifold.

    Attributes:
        data: read-only (n, k) float array, entries >= 0, unit columns.
        n, k: dimensions, n >= k >= 1.
    """

    data: np.ndarray
    n: int
    k: int

    def copy_data(self) -> np.ndarray:
        return self.data.copy()


def make_oblique(data, *, copy: bool = True) -> ObliqueMatrix:
    """Validate and wrap a matrix as a point on the nonnegative oblique manifold.

    Raises:
        BadShape: not 2-d, n < k, k < 1, or non-finite entries.
        NegativeEntry: any strictly negative entry.
        NonUnitColumn: any column norm off 1 by more than COL_NORM_TOL.
    """
    arr = _as_float_matrix(data)
    n, k = arr.shape
    if k < 1 or n < k:
        raise BadShape(f"need n >= k >= 1, got shape ({n}, {k})")
    if (arr < 0).any():
        i, j = np.argwhere(arr < 0)[0]
        raise NegativeEntry(f"entry ({i}, {j}) is negative: {arr[i, j]!r}")
    norms = np.linalg.norm(arr, axis=0)
    bad = np.abs(norms - 1.0) > COL_NORM_TOL
    if bad.any():
        j = int(np.argmax(bad))
        raise NonUnitColumn(f"column {j} has norm {norms[j]!r}")
    if copy:
        arr = arr.copy()
    arr.setflags(write=False)
    return ObliqueMatrix(data=arr, n=n, k=k)


def oblique_data(X) -> np.ndarray:
    """Accept an ObliqueMatrix or a raw array; return the ndarray view."""
    if isinstance(X, ObliqueMatrix):
        return X.data
    return np.asarray(X, dtype=float)


@dataclasses.dataclass(frozen=True)
class PenaltyContext:
    """Fixed data of the orthogonality functional: the coupling matrix V.

    V is k-by-r with unit Frobenius norm and every entry of V V^T strictly
    positive; then ||X V||_F >= 1 on the manifold with equality exactly on
    the orthogonal nonnegative points. The default V = ones(k,1)/sqrt(k)
    gives V V^T = (1/k) * ones.

    Attributes:
        n, k: problem dimensions.
        V: (k, r) coupling matrix, read-only.
        vvt: cached V @ V.T, read-only.
        omega_min, omega_max: min/max entry of vvt.
    """

    n: int
    k: int
    V: np.ndarray
    vvt: np.ndarray
    omega_min: float
    omega_max: float


def make_context(n: int, k: int, V=None) -> PenaltyContext:
    """Build a PenaltyContext, defaulting V to ones(k,1)/sqrt(k).

    Raises:
        BadShape: V not (k, r) or ||V||_F != 1 within COL_NORM_TOL.
        ZeroColumn: some entry of V V^T is not strictly positive.
    """
    if k < 1 or n < k:
        raise BadShape(f"need n >= k >= 1, got n={n}, k={k}")
    if V is None:
        V = np.full((k, 1), 1.0 / np.sqrt(k))
    V = _as_float_matrix(V, "V")
    if V.shape[0] != k:
        raise BadShape(f"V must have {k} rows, got {V.shape[0]}")
    fro = np.linalg.norm(V)
    if abs(fro - 1.0) > COL_NORM_TOL:
        raise BadShape(f"V must have unit Frobenius norm, got {fro!r}")
    vvt = V @ V.T
    omega_min = float(vvt.min())
    omega_max = float(vvt.max())
    if omega_min <= 0:
        raise ZeroColumn("V V^T must be entrywise positive")
    V = V.copy()
    V.setflags(write=False)
    vvt.setflags(write=False)
    return PenaltyContext(n=n, k=k, V=V, vvt=vvt,
                          omega_min=omega_min, omega_max=omega_max)


@dataclasses.dataclass(frozen=True)
class PenaltyParams:
    """Parameters (sigma, p, q, eps) of the penalty term sigma*(zeta_q + eps)^p.

    Invariants: sigma > 0, p > 0, q > 0, eps >= 0, and eps == 0 when p >= 1
    (the smoothing offset only exists for the nonsmooth p < 1 family).
    """

    sigma: float
    p: float = 1.0
    q: float = 2.0
    eps: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0):
            raise BadShape(f"sigma must be positive, got {self.sigma!r}")
        if not (self.p > 0):
            raise BadShape(f"p must be positive, got {self.p!r}")
        if not (self.q > 0):
            raise BadShape(f"q must be positive, got {self.q!r}")
        if self.eps < 0:
            raise BadShape(f"eps must be nonnegative, got {self.eps!r}")
        if self.p >= 1 and self.eps != 0:
            raise BadShape("eps must be 0 when p >= 1")

    def with_sigma(self, sigma: float) -> "PenaltyParams":
        return dataclasses.replace(self, sigma=sigma)


@dataclasses.dataclass(frozen=True)
class SupportPattern:
    """Zero/nonzero classification of a matrix at a fixed tolerance.

    Boolean masks, all shape (n, k):
        supp: |X_ij| > tol.
        zero_rowlive: zeros sitting in a row that has some nonzero.
        zero_rowdead: zeros sitting in an all-zero row.

    The three masks partition the index set. Stationarity checks need the
    split because sign conditions on the Euclidean gradient apply only on
    all-zero rows.
    """

    supp: np.ndarray
    zero_rowlive: np.ndarray
    zero_rowdead: np.ndarray
    tol: float


def support_pattern(X, tol: float = SUPPORT_ZERO_TOL) -> SupportPattern:
    """Classify entries of X into support / row-live zeros / row-dead zeros."""
    arr = oblique_data(X)
    if arr.ndim != 2:
        raise BadShape("support_pattern needs a matrix")
    supp = np.abs(arr) > tol
    row_live = supp.any(axis=1)
    zero = ~supp
    zero_rowlive = zero & row_live[:, None]
    zero_rowdead = zero & ~row_live[:, None]
    for m in (supp, zero_rowlive, zero_rowdead):
        m.setflags(write=False)
    return SupportPattern(supp=supp, zero_rowlive=zero_rowlive,
                          zero_rowdead=zero_rowdead, tol=tol)


class Objective:
    """Smooth objective f on n-by-k matrices.

    Subclasses implement value/grad (Euclidean) and, if a second-order
    subsolver is to be used, hess_apply. The refine_* hooks describe the
    structure the support-restricted postprocessing step can exploit:

        refine_kind == "linear":          f decreases with <refine_linear_C(), X>
                                          increasing (f = const - <C, X> on the
                                          feasible set).
        refine_kind == "quadratic-form":  f = const - tr(X^T M X) on the feasible
                                          set, M PSD, accessed through principal
                                          submatrices refine_quadratic_submatrix(idx).
        refine_kind == "generic":         no structure; projected descent is used.
    """

    refine_kind: str = "generic"

    def value(self, X: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_apply(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def refine_linear_C(self) -> np.ndarray:
        raise NotImplementedError

    def refine_quadratic_submatrix(self, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclasses.dataclass(frozen=True)
class DriverConfig:
    """Outer-loop configuration for the exact-penalty driver.

    Fields:
        sigma0: initial penalty weight.
        gamma2: penalty growth factor (> 1), used when gamma2_rule is None.
        gamma2_rule: optional callable mapping ||X V||_F^2 of the current
            iterate to a growth factor (> 1); overrides gamma2.
        gamma1: smoothing decay factor; with eps0 = 0 the offset stays 0.
        eta: inner-tolerance decay factor in (0, 1].
        eps0: initial smoothing offset (only for p < 1).
        eps_grad0: initial inner stationarity tolerance.
        eps_grad_min: floor for the inner tolerance.
        tol_feas: outer stop on ||X V||_F^2 - 1.
        t_max: maximum outer iterations.
        zeta_switch: subsolver switch threshold; first-order steps while
            ||X V||_F^2 - 1 exceeds it, second-order once at or below.
        force_solver: override the switch with "gp", "gp-fixed" or "newton".
        fixed_alpha: step size for the "gp-fixed" solver.
        p, q: penalty exponents.
        max_inner: per-outer-iteration inner iteration cap.
        do_postprocess: run rounding refinement on the final point.
        anchor: feasible-fallback policy. "result" reruns the inner solve
            from the fallback whenever the warm-started run ends worse than
            the fallback, and accepts the rerun; "start" resets the warm
            start before solving whenever the start compares worse.
        rng_seed: seed for any randomness the driver itself introduces.
    """

    sigma0: float = 1e-2
    gamma2: float = 5.0
    gamma2_rule: Optional[Callable[[float], float]] = None
    gamma1: float = 0.0
    eta: float = 0.8
    eps0: float = 0.0
    eps_grad0: float = 1e-3
    eps_grad_min: float = 1e-7
    tol_feas: float = 1e-8
    t_max: int = 300
    zeta_switch: float = 0.0
    force_solver: Optional[str] = None
    fixed_alpha: float = 0.99
    p: float = 1.0
    q: float = 2.0
    max_inner: int = 1000
    do_postprocess: bool = True
    anchor: str = "result"
    rng_seed: int = 0

    def __post_init__(self):
        if self.gamma2 <= 1:
            raise BadShape(f"gamma2 must exceed 1, got {self.gamma2!r}")
        if not (0 < self.eta <= 1):
            raise BadShape(f"eta must lie in (0, 1], got {self.eta!r}")
        if self.gamma1 < 0:
            raise BadShape("gamma1 must be nonnegative")
        if self.sigma0 <= 0 or self.eps_grad0 <= 0 or self.tol_feas <= 0:
            raise BadShape("sigma0, eps_grad0 and tol_feas must be positive")
        if self.t_max < 1 or self.max_inner < 1:
            raise BadShape("t_max and max_inner must be at least 1")
        if self.force_solver not in (None, "gp", "gp-fixed", "newton"):
            raise BadShape(f"unknown force_solver {self.force_solver!r}")
        if self.anchor not in ("result", "start"):
            raise BadShape(f"unknown anchor policy {self.anchor!r}")


@dataclasses.dataclass
class SolveReport:
    """Outcome of a driver run.

    history holds one dict per outer iteration (sigma, inner iterations,
    residuals, descent check); flags collects non-fatal solver conditions.
    extra carries problem-specific results (gap, resi, metrics ...).
    """

    final: Optional[np.ndarray] = None
    objective: float = np.nan
    zeta: float = np.nan
    kkt_residual: float = np.nan
    feasibility: float = np.nan
    outer_iterations: int = 0
    inner_iterations: int = 0
    seconds: float = 0.0
    termination: str = "unknown"
    history: list = dataclasses.field(default_factory=list)
    flags: list = dataclasses.field(default_factory=list)
    extra: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "objective": float(self.objective),
            "zeta": float(self.zeta),
            "kkt_residual": float(self.kkt_residual),
            "feasibility": float(self.feasibility),
            "outer_iterations": int(self.outer_iterations),
            "inner_iterations": int(self.inner_iterations),
            "seconds": float(self.seconds),
            "termination": self.termination,
            "flags": list(self.flags),
        }
        # matrices stay on the report object for programmatic use; the
        # serializable dict carries scalars and small lists only
        d.update({k: v for k, v in self.extra.items()
                  if not isinstance(v, np.ndarray)})
        return d
