"""Application problems: nearest feasible point, orthogonal NMF, K-indicators.

Each problem ships its smooth objective (Euclidean value/grad/Hessian),
an instance generator with a known ground truth where one exists, the
quality metrics used in the experiments, and a solve_* entry point that
wires the objective into the exact-penalty driver with the problem's
preset.
"""
from __future__ import annotations

import dataclasses
import time
from typing import Optional

import numpy as np

from . import rounding
from .driver import (ep4orth_solve, feasible_init, onmf_preset, postprocess,
                     projection_preset)
from .errors import (BadLabels, BadShape, DimensionMismatch, NotFeasible,
                     SingularGram, ZeroColumn)
from .manifold import project_oblique_plus, project_orthogonal_group
from .penalty import PenalizedObjective
from .rounding import feasibility_violation
from .subsolvers import _project_ob_plus_raw
from .types import (DriverConfig, Objective, PenaltyContext, SolveReport,
                    make_context, make_oblique, oblique_data)


# ---------------------------------------------------------------------------
# objectives


class LinearObjective(Objective):
    """f(X) = <C, X>."""

    refine_kind = "linear"

    def __init__(self, C):
        self.C = np.asarray(C, dtype=float)

    def value(self, X):
        return float(np.tensordot(self.C, X))

    def grad(self, X):
        return self.C

    def hess_apply(self, X, D):
        return np.zeros_like(np.asarray(D, dtype=float))

    def refine_linear_C(self):
        # f decreases as <(-C), X> increases
        return -self.C


class TargetDistanceObjective(Objective):
    """f(X) = ||X - C||_F^2, the nearest-feasible-point objective."""

    refine_kind = "linear"

    def __init__(self, C):
        self.C = np.asarray(C, dtype=float)

    def value(self, X):
        R = X - self.C
        return float(np.tensordot(R, R))

    def grad(self, X):
        return 2.0 * (X - self.C)

    def hess_apply(self, X, D):
        return 2.0 * np.asarray(D, dtype=float)

    def refine_linear_C(self):
        # on unit-column X, f = k - 2<C, X> + ||C||^2
        return self.C


class ScaledLinearPenalty(Objective):
    """Inner model -(1/sigma) <C, X> + (1/2) ||X V||_F^2.

    An affine rescaling of the exact penalty for objectives that are linear
    on the manifold; its gradient is 1-Lipschitz, so a fixed projected
    step below 1 descends without a line search.
    """

    def __init__(self, C, ctx: PenaltyContext, sigma: float):
        self.C = np.asarray(C, dtype=float)
        self.ctx = ctx
        self.sigma = float(sigma)

    def value(self, X):
        XV = X @ self.ctx.V
        return (-float(np.tensordot(self.C, X)) / self.sigma
                + 0.5 * float(np.tensordot(XV, XV)))

    def grad(self, X):
        return X @ self.ctx.vvt - self.C / self.sigma

    def hess_apply(self, X, D):
        return np.asarray(D, dtype=float) @ self.ctx.vvt


class OnmfQuadObjective(Objective):
    """f(X) = ||A - X Y^T||_F^2 for a fixed nonnegative Y (quadratic in X)."""

    refine_kind = "quadratic-form"

    def __init__(self, A, Y):
        self.A = np.asarray(A, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        if self.A.shape[1] != self.Y.shape[0]:
            raise DimensionMismatch(
                f"A has {self.A.shape[1]} columns but Y has {self.Y.shape[0]} rows")
        self._yty = self.Y.T @ self.Y
        self._ay = self.A @ self.Y
        self._a_sq = float(np.tensordot(self.A, self.A))

    def value(self, X):
        return (self._a_sq - 2.0 * float(np.tensordot(self._ay, X))
                + float(np.tensordot(X @ self._yty, X)))

    def grad(self, X):
        return 2.0 * (X @ self._yty - self._ay)

    def hess_apply(self, X, D):
        return 2.0 * (np.asarray(D, dtype=float) @ self._yty)

    def refine_quadratic_submatrix(self, idx):
        As = self.A[idx, :]
        return As @ As.T


class OpnmfObjective(Objective):
    """Projective factorization objective f(X) = ||A - X X^T A||_F^2.

    Quartic in X. All products keep the n-by-r data matrix on the outside,
    so no n-by-n intermediate is ever formed.
    """

    refine_kind = "quadratic-form"

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)

    def _wx(self, Z):
        return self.A @ (self.A.T @ Z)

    def value(self, X):
        R = self.A - X @ (X.T @ self.A)
        return float(np.tensordot(R, R))

    def grad(self, X):
        WX = self._wx(X)
        return 2.0 * (-2.0 * WX + WX @ (X.T @ X) + X @ (X.T @ WX))

    def hess_apply(self, X, D):
        D = np.asarray(D, dtype=float)
        WX = self._wx(X)
        WD = self._wx(D)
        XtX = X.T @ X
        cross = D.T @ X
        return 2.0 * (-2.0 * WD + WD @ XtX + WX @ (cross + cross.T)
                      + D @ (X.T @ WX) + X @ (D.T @ WX + X.T @ WD))

    def refine_quadratic_submatrix(self, idx):
        As = self.A[idx, :]
        return As @ As.T


# ---------------------------------------------------------------------------
# shared generator piece


def _random_feasible(n: int, k: int, rng) -> np.ndarray:
    """Random exactly-feasible matrix: rows assigned to columns uniformly
    (resampled until no column is empty), positive magnitudes, unit columns."""
    if n < k or k < 1:
        raise BadShape(f"need n >= k >= 1, got n={n}, k={k}")
    while True:
        assign = rng.integers(0, k, size=n)
        if np.unique(assign).size == k:
            break
    B = np.zeros((n, k))
    B[np.arange(n), assign] = 1.0 - rng.random(n)  # uniform on (0, 1]
    return B / np.linalg.norm(B, axis=0)


# ---------------------------------------------------------------------------
# nearest feasible point


@dataclasses.dataclass(frozen=True)
class ProjectionInstance:
    """Nearest-point instance C = X_star @ L.T with planted solution X_star.

    hypothesis_ok records whether the sampled L satisfies the strict
    diagonal-dominance condition L_ii L_jj > max(L_ij, L_ji, 0)^2 that
    certifies X_star as the unique projection of C.
    """

    C: np.ndarray
    X_star: np.ndarray
    L: np.ndarray
    xi: float
    seed: int
    hypothesis_ok: bool


def _uniqueness_hypothesis(L: np.ndarray) -> bool:
    k = L.shape[0]
    d = np.diag(L)
    if (d <= 0).any():
        return False
    M = np.maximum(np.maximum(L, L.T), 0.0) ** 2
    prod = np.outer(d, d)
    off = ~np.eye(k, dtype=bool)
    return bool((prod[off] > M[off]).all())


def gen_projection(n: int, k: int, xi: float, seed: int) -> ProjectionInstance:
    """Sample a nearest-point instance with planted solution.

    X_star is a random feasible matrix re-scaled entrywise (magnitudes in
    [1, 2) before normalization); L has diagonal d in [0.5, 3.5) and
    off-diagonal xi * sqrt(d_i d_j) * uniform(0,1). For xi < 1 the
    uniqueness condition holds deterministically, at xi = 1 almost surely.
    """
    if xi < 0:
        raise BadShape(f"xi must be nonnegative, got {xi!r}")
    rng = np.random.default_rng(np.random.Philox(seed))
    B = _random_feasible(n, k, rng)
    Xs = (B > 0) * (1.0 + rng.random((n, k)))
    Xs = Xs / np.linalg.norm(Xs, axis=0)
    d = 0.5 + 3.0 * rng.random(k)
    L = xi * np.sqrt(np.outer(d, d)) * rng.random((k, k))
    np.fill_diagonal(L, d)
    C = Xs @ L.T
    return ProjectionInstance(C=C, X_star=Xs, L=L, xi=float(xi), seed=seed,
                              hypothesis_ok=_uniqueness_hypothesis(L))


def gap(X, X_star, C) -> float:
    """Relative optimality gap ||X - C|| / ||X_star - C|| - 1 (0 at optimum)."""
    X = oblique_data(X)
    den = float(np.linalg.norm(np.asarray(X_star, float) - np.asarray(C, float)))
    if den == 0:
        raise ZeroColumn("reference solution coincides with the target")
    return float(np.linalg.norm(X - np.asarray(C, float))) / den - 1.0


def solve_projection(C, cfg: Optional[DriverConfig] = None,
                     X_star=None) -> SolveReport:
    """Nearest feasible point to C via the exact-penalty driver.

    Uses the projection preset: fixed-step projected gradient on the
    rescaled linear model, start and anchor at round(project(C)).
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise BadShape("C must be a matrix")
    n, k = C.shape
    ctx = make_context(n, k)
    cfg = cfg if cfg is not None else projection_preset()
    f = TargetDistanceObjective(C)
    X_feas = feasible_init(ctx, hint=C)

    def factory(X, params):
        return ScaledLinearPenalty(C, ctx, params.sigma)

    report = ep4orth_solve(f, ctx, cfg, X_feas=X_feas,
                           inner_factory=factory)
    if X_star is not None:
        report.extra["gap"] = gap(report.final, X_star, C)
    return report


# ---------------------------------------------------------------------------
# orthogonal nonnegative matrix factorization


@dataclasses.dataclass(frozen=True)
class OnmfInstance:
    """Synthetic factorization instance A ~ B C with feasible B and noise xi."""

    A: np.ndarray
    k: int
    labels: np.ndarray
    B: np.ndarray
    xi: float
    seed: int


def gen_onmf(n: int, r: int, k: int, xi: float, seed: int) -> OnmfInstance:
    """A = normalize(B @ C) + xi * D / ||D||_F with B feasible, C, D uniform."""
    if xi < 0:
        raise BadShape(f"xi must be nonnegative, got {xi!r}")
    rng = np.random.default_rng(np.random.Philox(seed))
    B = _random_feasible(n, k, rng)
    labels = np.argmax(B, axis=1)
    C = rng.random((k, r))
    D = rng.random((n, r))
    A = B @ C
    A = A / np.linalg.norm(A)
    if xi > 0:
        A = A + (xi / np.linalg.norm(D)) * D
    return OnmfInstance(A=A, k=k, labels=labels, B=B, xi=float(xi), seed=seed)


def drop_degenerate(A: np.ndarray) -> np.ndarray:
    """Remove all-zero rows and columns (data loaded from files may have them)."""
    A = np.asarray(A, dtype=float)
    A = A[np.abs(A).sum(axis=1) > 0, :]
    A = A[:, np.abs(A).sum(axis=0) > 0]
    if A.size == 0:
        raise BadShape("matrix is entirely zero")
    return A


def svd_init(A: np.ndarray, k: int):
    """Start point from the magnitudes of the top-k left singular vectors."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not (1 <= k <= min(A.shape)):
        raise BadShape(f"need 1 <= k <= min(A.shape), got k={k}")
    U, _, _ = np.linalg.svd(A, full_matrices=False)
    return project_oblique_plus(np.abs(U[:, :k]))


def onmf_gauss_newton_Y(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Nonnegative least-squares-style update Y = max(A^T X (X^T X)^{-1}, 0).

    The Gram matrix is regularized by 1e-12 I on the first failure;
    SingularGram is raised if it still cannot be factored.
    """
    A = np.asarray(A, dtype=float)
    X = oblique_data(X)
    gram = X.T @ X
    rhs = (A.T @ X).T  # k x r
    try:
        Y0 = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        try:
            Y0 = np.linalg.solve(gram + 1e-12 * np.eye(gram.shape[0]), rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularGram("Gram matrix singular even after regularization") from exc
    return np.maximum(Y0.T, 0.0)


def resi(A: np.ndarray, X) -> float:
    """Projective residual ||A - X X^T A||_F at a feasible X.

    Raises NotFeasible when X is not feasible to 1e-8.
    """
    A = np.asarray(A, dtype=float)
    Xd = oblique_data(X)
    if feasibility_violation(Xd) > 1e-8:
        raise NotFeasible("resi is only meaningful at feasible points")
    return float(np.linalg.norm(A - Xd @ (Xd.T @ A)))


def solve_onmf(A: np.ndarray, k: int, cfg: Optional[DriverConfig] = None,
               variant: str = "gn", hyperspectral: bool = False) -> SolveReport:
    """Orthogonal NMF through the exact-penalty driver.

    variant "gn": each outer iteration refits Y by the clipped normal
    equations and minimizes the resulting quadratic-in-X penalty.
    variant "direct": minimizes the quartic projective objective itself.
    Reported objective and resi refer to the projective residual at the
    final feasible point.
    """
    if variant not in ("gn", "direct"):
        raise BadShape(f"unknown variant {variant!r}")
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ctx = make_context(n, k)
    cfg = cfg if cfg is not None else onmf_preset(hyperspectral=hyperspectral)
    f_true = OpnmfObjective(A)
    X0 = svd_init(A, k)
    X_feas = rounding.round(X0.data)

    factory = None
    if variant == "gn":
        def factory(X, params):
            Y = onmf_gauss_newton_Y(A, X.data)
            return PenalizedObjective(OnmfQuadObjective(A, Y), ctx, params)

    report = ep4orth_solve(f_true, ctx, cfg, X0=X0, X_feas=X_feas,
                           inner_factory=factory)
    report.extra["resi"] = resi(A, report.final)
    return report


# ---------------------------------------------------------------------------
# clustering metrics


def _contingency(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.ndim != 1 or pred.shape != true.shape or pred.size == 0:
        raise BadLabels("labels must be equal-length nonempty vectors")
    if not (np.issubdtype(pred.dtype, np.integer)
            and np.issubdtype(true.dtype, np.integer)):
        raise BadLabels("labels must be integers")
    if pred.min() < 0 or true.min() < 0:
        raise BadLabels("labels must be nonnegative")
    kp = int(pred.max()) + 1
    kt = int(true.max()) + 1
    table = np.zeros((kt, kp))
    np.add.at(table, (true, pred), 1.0)
    return table


def _entropy_bits(p):
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def clustering_metrics(pred, true, k: Optional[int] = None) -> dict:
    """Purity, normalized entropy and NMI of a predicted clustering.

    Entropy is normalized by log2(k) (k defaults to the number of

    predicted clusters); NMI uses max(H(pred), H(true)) and is 0 when
    either entropy vanishes. All three lie in [0, 1].
    """
    table = _contingency(pred, true)
    n = table.sum()
    if k is None:
        k = table.shape[1]
    purity = float(table.max(axis=0).sum() / n)
    cluster_sizes = table.sum(axis=0)
    ent = 0.0
    if k > 1:
        for j in range(table.shape[1]):
            col = table[:, j]
            pos = col > 0
            if pos.any():
                ent += float((col[pos] * np.log2(col[pos] / cluster_sizes[j])).sum())
        ent = -ent / (n * np.log2(k))
    h_true = _entropy_bits(table.sum(axis=1) / n)
    h_pred = _entropy_bits(cluster_sizes / n)
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij > 0:
                mi += (nij / n) * np.log2(
                    n * nij / (table[i].sum() * cluster_sizes[j]))
    hmax = max(h_true, h_pred)
    nmi = float(mi / hmax) if hmax > 0 else 0.0
    return {"purity": purity, "entropy": float(ent), "nmi": nmi}


def sad(Y_true, Y_hat) -> float:
    """Mean spectral angle (radians) between matched columns.

    Columns are matched greedily by smallest angle (adequate at the tested
    sizes and deterministic). Raises ZeroColumn on any zero column.
    """
    Yt = np.asarray(Y_true, dtype=float)
    Yh = np.asarray(Y_hat, dtype=float)
    if Yt.shape != Yh.shape or Yt.ndim != 2:
        raise BadShape(f"need matching matrices, got {Yt.shape} and {Yh.shape}")
    nt = np.linalg.norm(Yt, axis=0)
    nh = np.linalg.norm(Yh, axis=0)
    if (nt == 0).any() or (nh == 0).any():
        raise ZeroColumn("zero column in spectral-angle input")
    cos = np.clip((Yt / nt).T @ (Yh / nh), -1.0, 1.0)
    ang = np.arccos(cos)
    k = ang.shape[0]
    rows = set(range(k))
    cols = set(range(k))
    total = 0.0
    for _ in range(k):
        best = None
        for i in rows:
            for j in cols:
                if best is None or ang[i, j] < best[0]:
                    best = (ang[i, j], i, j)
        total += best[0]
        rows.discard(best[1])
        cols.discard(best[2])
    return float(total / k)


# ---------------------------------------------------------------------------
# K-indicators clustering


@dataclasses.dataclass(frozen=True)
class KindicatorsInstance:
    """Orthonormal feature matrix U with planted cluster labels."""

    U: np.ndarray
    labels: np.ndarray
    k: int
    noise: float
    seed: int


def gen_kindicators(n: int, k: int, noise: float, seed: int) -> KindicatorsInstance:
    """U = orth(0/1 indicator + noise * gaussian), labels planted.

    The perturbation is scaled against the unit entries of the raw
    membership matrix, so noise is a relative corruption level: at
    noise = 0.1 every row still points clearly at its planted column.
    """
    rng = np.random.default_rng(np.random.Philox(seed))
    while True:
        labels = rng.integers(0, k, size=n)
        if np.unique(labels).size == k:
            break
    F = np.zeros((n, k))
    F[np.arange(n), labels] = 1.0
    M = F + noise * rng.standard_normal((n, k))
    Q, R = np.linalg.qr(M)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    U = Q * signs
    return KindicatorsInstance(U=U, labels=labels, k=k, noise=float(noise),
                               seed=seed)


def kindicators_solve(U: np.ndarray, *, sigma0: float = 10.0,
                      gamma2: float = 10.0, eta: float = 0.5,
                      tol_feas: float = 0.1, eps_grad0: float = 1e-3,
                      eps_grad_min: float = 1e-7, t_max: int = 60,
                      max_inner: int = 500,
                      do_postprocess: bool = True) -> SolveReport:
    """Cluster by alternating exactly-feasible updates of (X, Y).

    Y is the orthogonal Procrustes factor of U^T X; X takes a projected
    gradient step on the rescaled linear model with a Barzilai-Borwein
    step capped at 10k. Both blocks stay exactly on their constraint sets
    at every iteration (tracked in extra["max_iterate_dev"]). Labels come
    from the row-argmax of the rounded final point.
    """
    t0 = time.perf_counter()
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] < U.shape[1]:
        raise BadShape("U must be n x k with n >= k")
    n, k = U.shape
    orth_dev = float(np.linalg.norm(U.T @ U - np.eye(k)))
    if orth_dev > 1e-8:
        raise BadShape(f"U columns must be orthonormal, deviation {orth_dev!r}")
    ctx = make_context(n, k)

    def h_val(X, Y, sigma):
        XV = X @ ctx.V
        return (-float(np.tensordot(U @ Y, X)) / sigma
                + 0.5 * float(np.tensordot(XV, XV)))

    X = project_oblique_plus(U).data
    Xf = rounding.round(X).data
    Yf_cache = {}
    sigma = sigma0
    eg = eps_grad0
    max_dev = 0.0
    total_inner = 0
    term = "max-outer"
    report = SolveReport()
    alpha_cap = 10.0 * k
    zeta2 = float(np.linalg.norm(X @ ctx.V) ** 2) - 1.0
    for t in range(t_max):
        Y = project_orthogonal_group(U.T @ X)
        if sigma not in Yf_cache:
            Yf_cache[sigma] = project_orthogonal_group(U.T @ Xf)
        anchored = False
        if h_val(X, Y, sigma) > h_val(Xf, Yf_cache[sigma], sigma):
            X, Y = Xf.copy(), Yf_cache[sigma]
            anchored = True
        Xp = Gp = None
        it = 0
        step = np.inf
        while it < max_inner:
            it += 1
            Y = project_orthogonal_group(U.T @ X)
            G = X @ ctx.vvt - (U @ Y) / sigma
            if Xp is None:
                alpha = 1.0
            else:
                S = X - Xp
                Z = G - Gp
                den = abs(float(np.tensordot(S, Z)))
                alpha = float(np.tensordot(S, S)) / den if den > 0 else alpha_cap
            alpha = min(max(alpha, 1e-10), alpha_cap)
            Xn = _project_ob_plus_raw(X - alpha * G)
            dev = float(np.abs(np.linalg.norm(Xn, axis=0) - 1.0).max())
            devY = float(np.linalg.norm(Y.T @ Y - np.eye(k)))
            max_dev = max(max_dev, dev, devY)
            step = float(np.linalg.norm(Xn - X))
            Xp, Gp = X, G
            X = Xn
            if step <= eg:
                break
        total_inner += it
        zeta2 = float(np.linalg.norm(X @ ctx.V) ** 2) - 1.0
        report.history.append({"t": t, "sigma": sigma, "eps_grad": eg,
                               "inner_iterations": it, "zeta2": zeta2,
                               "anchored": anchored, "step": step})
        if zeta2 <= tol_feas:
            term = "feasibility-tol"
            break
        sigma *= gamma2
        eg = max(eta * eg, eps_grad_min)

    Y = project_orthogonal_group(U.T @ X)
    # two-block stationarity of the unscaled penalty at the pre-rounding pair
    GX = 2.0 * (X - U @ Y) + 2.0 * sigma * (X @ ctx.vvt)
    rgX = GX - X * np.einsum("ij,ij->j", X, GX)
    res_x = float(np.linalg.norm(np.minimum(X, rgX)))
    GY = 2.0 * (Y - U.T @ X)
    res_y = float(np.linalg.norm(Y - project_orthogonal_group(Y - GY)))
    XR = rounding.round(X)
    labels = np.argmax(XR.data, axis=1)
    Xfinal = XR
    if do_postprocess:
        Xfinal = postprocess(XR, TargetDistanceObjective(U @ Y))
    report.final = Xfinal.data
    report.objective = float(np.linalg.norm(U @ Y - Xfinal.data) ** 2)
    report.zeta = zeta2
    report.kkt_residual = max(res_x, res_y)
    report.feasibility = feasibility_violation(Xfinal.data)
    report.outer_iterations = len(report.history)
    report.inner_iterations = total_inner
    report.termination = term
    report.seconds = time.perf_counter() - t0
    report.extra["labels"] = labels
    report.extra["Y"] = Y
    report.extra["max_iterate_dev"] = max_dev
    report.extra["X_preround"] = X
    return report
