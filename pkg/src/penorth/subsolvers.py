"""Inner solvers for the penalty subproblems.

Two families:

* gradient_projection_solve: projected gradient on the nonnegative oblique
  manifold, either with a Barzilai-Borwein step and a nonmonotone
  (max-window) line search, or with a fixed step for objectives whose
  gradient is 1-Lipschitz.

* newton_solve: trust-region-like second-order method. Each iteration
  builds a quadratic model with proximal weight tau, obtains a direction
  from a semismooth-Newton solve of the model's first-order system over
  the per-column affine slices, validates an angle condition against the
  projected steepest-descent direction, screens trial points against a
  guaranteed model-decrease bound, and accepts by actual/predicted ratio.

The per-column projection project_delta (onto {z : x^T z = 1, z >= 0}) is
the geometric workhorse shared by the tangent-cone projection and the
semismooth Newton solver.
"""
from __future__ import annotations

import dataclasses
import inspect
from collections import deque
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (BadShape, InfeasibleSupport, NegativeEntry, SolverError,
                     SubsolverFailure)
from .manifold import riemannian_grad
from .types import Objective, ObliqueMatrix, make_oblique, SUPPORT_ZERO_TOL

_GMRES_TOL_KW = "rtol" if "rtol" in inspect.signature(gmres).parameters else "tol"


def _gmres(op, rhs, rtol, maxiter):
    kwargs = {_GMRES_TOL_KW: rtol, "atol": 0.0, "maxiter": maxiter}
    return gmres(op, rhs, **kwargs)


def _project_ob_plus_raw(C: np.ndarray) -> np.ndarray:
    """project_oblique_plus without the wrapping/validation, for hot loops."""
    pos = np.maximum(C, 0.0)
    peak = pos.max(axis=0)
    ok = peak > 0
    out = np.empty_like(pos)
    if ok.any():
        scaled = pos[:, ok] / peak[ok]  # avoids under/overflow in the norm
        out[:, ok] = scaled / np.linalg.norm(scaled, axis=0)
    if not ok.all():
        for j in np.nonzero(~ok)[0]:
            e = np.zeros(C.shape[0])
            e[int(np.argmax(C[:, j]))] = 1.0
            out[:, j] = e
    return out


def project_delta(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Project c onto the slice {z : x^T z = 1, z >= 0} for nonnegative x.

    Entries where x_i = 0 decouple and project to max(c_i, 0). On the
    support the unique multiplier comes from a descending scan over the
    breakpoints c_i/x_i.

    Raises InfeasibleSupport when x has no positive entry (empty slice),
    NegativeEntry when x has a negative one.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.ndim != 1 or x.shape != c.shape:
        raise BadShape(f"need matching vectors, got {x.shape} and {c.shape}")
    if (x < 0).any():
        raise NegativeEntry("slice anchor has a negative entry")
    supp = x > 0
    if not supp.any():
        raise InfeasibleSupport("anchor has no positive entry")
    z = np.zeros_like(c)
    off = ~supp
    z[off] = np.maximum(c[off], 0.0)
    xs = x[supp]
    cs = c[supp]
    order = np.argsort(-(cs / xs), kind="stable")
    xo = xs[order]
    co = cs[order]
    bo = co / xo
    cum_xc = np.cumsum(xo * co)
    cum_xx = np.cumsum(xo * xo)
    lam = (cum_xc - 1.0) / cum_xx
    lam_star = lam[-1]
    for m in range(len(bo)):
        if m == len(bo) - 1 or lam[m] >= bo[m + 1]:
            lam_star = lam[m]
            break
    z[supp] = np.maximum(cs - lam_star * xs, 0.0)
    return z


def project_delta_cols(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Columnwise project_delta: z_j solves min ||z - c_j|| over x_j^T z = 1, z >= 0."""
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    if X.shape != C.shape or X.ndim != 2:
        raise BadShape(f"need matching matrices, got {X.shape} and {C.shape}")
    out = np.empty_like(C)
    for j in range(X.shape[1]):
        out[:, j] = project_delta(X[:, j], C[:, j])
    return out


@dataclasses.dataclass(frozen=True)
class GPConfig:
    """Projected-gradient solver knobs.

    fixed_alpha set => constant step, no line search (valid when the
    objective gradient is L-Lipschitz with L*alpha < 1). Otherwise BB step
    clipped to [bb_floor, bb_cap] (and alpha_cap when given) with a
    nonmonotone Armijo test against the max of the last `window` values.
    """

    max_iter: int = 1000
    step_tol: float = 1e-8
    fixed_alpha: Optional[float] = None
    bb_floor: float = 1e-10
    bb_cap: float = 1e10
    alpha_cap: Optional[float] = None
    window: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20


@dataclasses.dataclass(frozen=True)
class NewtonConfig:
    """Second-order solver knobs.

    eta1/eta2 are the accept/expand thresholds on the actual-to-predicted
    ratio; beta0 < beta1 <= beta2 scale the proximal weight tau down/keep/up.
    c1 is the angle-condition constant for semismooth-Newton directions
    (the projected-gradient fallback has c1 = 1 by construction), c2 the
    model-decrease constant. kappa_hat0 seeds the running curvature
    estimate, doubled whenever a direction or trial check fails.
    """

    max_iter: int = 200
    tol: float = 1e-8
    step_tol: Optional[float] = None
    tau0: float = 1.0
    eta1: float = 0.01
    eta2: float = 0.9
    beta0: float = 0.98
    beta1: float = 1.0
    beta2: float = 1.3
    c1: float = 0.1
    c2: float = 0.5
    kappa_hat0: float = 10.0
    kappa_cap: float = 1e12
    qp_tol: float = 1e-8
    qp_max_iter: int = 50


@dataclasses.dataclass
class InnerReport:
    """What a subsolver did: iterations, final value, residuals, flags."""

    iterations: int = 0
    final_value: float = np.nan
    step_norm: float = np.nan
    kkt_residual: float = np.nan
    converged: bool = False
    flags: list = dataclasses.field(default_factory=list)
    trials: list = dataclasses.field(default_factory=list)


def gradient_projection_solve(h: Objective, X0: ObliqueMatrix,
                              cfg: GPConfig = GPConfig()) -> tuple:
    """Minimize h over the nonnegative oblique manifold by projected gradient.

    Stops when the projected step norm drops to cfg.step_tol. Returns
    (ObliqueMatrix, InnerReport); the final value never exceeds h(X0)
    (best-iterate safeguard). A failed nonmonotone line search sets the
    "LineSearchFailure" flag and returns the best iterate seen.
    """
    X = X0.data.copy()
    fX = float(h.value(X))
    G = np.asarray(h.grad(X), dtype=float)
    hist = deque([fX], maxlen=cfg.window)
    best_X, best_f = X, fX
    flags = []
    Xp = Gp = None
    step = np.inf
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        if cfg.fixed_alpha is not None:
            alpha = cfg.fixed_alpha
            Xn = _project_ob_plus_raw(X - alpha * G)
            fn = float(h.value(Xn))
        else:
            if Xp is None:
                alpha = 1.0 / (np.linalg.norm(G) + 1e-16)
            else:
                S = X - Xp
                Z = G - Gp
                den = abs(float(np.tensordot(S, Z)))
                alpha = float(np.tensordot(S, S)) / den if den > 0 else cfg.bb_cap
            alpha = min(max(alpha, cfg.bb_floor), cfg.bb_cap)
            if cfg.alpha_cap is not None:
                alpha = min(alpha, cfg.alpha_cap)
            fmax = max(hist)
            ok = False
            for _ in range(cfg.max_backtracks + 1):
                Xn = _project_ob_plus_raw(X - alpha * G)
                diff = Xn - X
                fn = float(h.value(Xn))
                if fn <= fmax - cfg.armijo * float(np.tensordot(diff, diff)):
                    ok = True
                    break
                alpha *= cfg.backtrack
            if not ok:
                flags.append("LineSearchFailure")
                break
        step = float(np.linalg.norm(Xn - X))
        Xp, Gp = X, G
        X, fX = Xn, fn
        G = np.asarray(h.grad(X), dtype=float)
        hist.append(fX)
        if fX < best_f:
            best_X, best_f = X, fX
        if step <= cfg.step_tol:
            converged = True
            break
    if fX > best_f:
        X, fX = best_X, best_f
        G = np.asarray(h.grad(X), dtype=float)
    kkt = float(np.linalg.norm(np.minimum(X, riemannian_grad(X, G))))
    rep = InnerReport(iterations=it, final_value=fX, step_norm=step,
                      kkt_residual=kkt, converged=converged, flags=flags)
    return make_oblique(X), rep


def solve_qp_subproblem(X: ObliqueMatrix, grad_m: np.ndarray,
                        hess_m_apply: Callable[[np.ndarray], np.ndarray],
                        alpha: float, tol: float = 1e-8, max_iter: int = 50,
                        zero_tol: float = SUPPORT_ZERO_TOL) -> tuple:
    """Solve min <grad_m, D> + (1/2) <D, hess_m[D]> over the tangent cone
    T(X) = {D : x_j^T d_j = 0, x_j + d_j >= 0} by semismooth Newton.

    Works in the shifted variable Z = X + D over the per-column slices
    {z : x_j^T z = 1, z >= 0} and drives the projected fixed-point residual
        F(Z) = Z - proj(Z - alpha * (grad_m + hess_m[Z - X]))
    to ||F|| <= tol. Newton steps use the projection's generalized
    (support-masked) Jacobian and a matrix-free Krylov solve; steps that do
    not cut the residual by 10 percent fall back to the fixed-point map.

    Returns (D, info) with D exactly in T(X). info["converged"] is False
    with "MaxIterReached" in info["flags"] when the budget runs out;
    callers validate directions independently, so this is not fatal.
    """
    Xd = X.data
    n, k = Xd.shape
    grad_m = np.asarray(grad_m, dtype=float)

    def fixed_point(Z):
        Gm = grad_m + hess_m_apply(Z - Xd)
        return project_delta_cols(Xd, Z - alpha * Gm)

    Z = fixed_point(Xd)  # one projected-gradient step from D = 0
    flags = []
    info = {"converged": False, "residual": np.inf, "iterations": 0, "flags": flags}
    for it in range(1, max_iter + 1):
        PC = fixed_point(Z)
        # convergence is certified at the projected point, which lies in the
        # slices exactly and is what we return
        resP = float(np.linalg.norm(PC - fixed_point(PC)))
        if resP <= tol:
            info.update(converged=True, residual=resP, iterations=it)
            return PC - Xd, info
        F = Z - PC
        nF = float(np.linalg.norm(F))
        active = PC > zero_tol
        xa = Xd * active
        den = np.einsum("ij,ij->j", Xd, xa)
        safe_den = np.where(den > 1e-16, den, 1.0)

        def jac_apply(hvec):
            H = hvec.reshape(n, k)
            W = H - alpha * hess_m_apply(H)
            Wa = W * active
            scale = np.where(den > 1e-16,
                             np.einsum("ij,ij->j", Xd, Wa) / safe_den, 0.0)
            return (H - (Wa - xa * scale)).ravel()

        op = LinearOperator((n * k, n * k), matvec=jac_apply)
        sol, code = _gmres(op, -F.ravel(), rtol=min(0.1, max(nF, 1e-14)),
                           maxiter=200)
        stepped = False
        if code == 0 and np.isfinite(sol).all():
            H = sol.reshape(n, k)
            t = 1.0
            for _ in range(11):
                Zt = Z + t * H
                nFt = float(np.linalg.norm(Zt - fixed_point(Zt)))
                if nFt <= 0.9 * nF:
                    Z = Zt
                    stepped = True
                    break
                t *= 0.5
        if not stepped:
            Z = PC  # fixed-point fallback step
    PC = fixed_point(Z)
    flags.append("MaxIterReached")
    info.update(converged=False,
                residual=float(np.linalg.norm(PC - fixed_point(PC))),
                iterations=max_iter)
    return PC - Xd, info


def newton_solve(h: Objective, X0: ObliqueMatrix,
                 cfg: NewtonConfig = NewtonConfig()) -> tuple:
    """Second-order solve of min h over the nonnegative oblique manifold.

    Iterates until the stationarity residual ||min(X, rgrad h)||_F falls to
    cfg.tol. Monotone: only trials with sufficient actual decrease are
    accepted, so the final value never exceeds h(X0). The report's
    `trials` list records, for every screened trial, the model value, the
    guaranteed-decrease bound it was checked against, and the accept/reject
    outcome.
    """
    from .manifold import project_tangent_T  # deferred: manifold imports us too

    X = X0.data.copy()
    fX = float(h.value(X))
    tau = cfg.tau0
    kappa = cfg.kappa_hat0
    flags = []
    trials = []
    res = np.inf
    step = np.inf
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        G = np.asarray(h.grad(X), dtype=float)
        radial = np.einsum("ij,ij->j", X, G)
        rg = G - X * radial
        res = float(np.linalg.norm(np.minimum(X, rg)))
        if res <= cfg.tol:
            converged = True
            break
        Xob = make_oblique(X)
        pg = project_tangent_T(Xob, -rg).data
        npg = float(np.linalg.norm(pg))
        if npg <= 1e-14:
            converged = True  # no feasible first-order descent direction left
            break

        def hess_r(W):
            # Riemannian Hessian formula extended linearly off the tangent
            # space; the semismooth solver needs a linear operator on all
            # of R^{n x k}
            return np.asarray(h.hess_apply(X, W), dtype=float) - W * radial

        # -- direction: semismooth Newton, angle-validated ------------------
        D = None
        c1_eff = cfg.c1
        used = "ssn"
        while True:
            alpha_qp = 1.0 / (kappa + tau)
            tau_now = tau
            try:
                Dc, _ = solve_qp_subproblem(
                    Xob, rg, lambda W: hess_r(W) + tau_now * W, alpha_qp,
                    tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
            except SolverError:
                Dc = None
            if Dc is not None:
                nD = float(np.linalg.norm(Dc))
                if nD > 0 and float(np.tensordot(rg, Dc)) <= -cfg.c1 * npg * nD:
                    D = Dc
                    break
            kappa *= 2.0
            tau *= cfg.beta2
            if kappa > cfg.kappa_cap:
                flags.append("CurvatureEstimateExhausted")
                D = pg
                c1_eff = 1.0
                used = "pg"
                break

        # -- trial point screened against the model-decrease bound ----------
        def m_val(Y):
            Dm = Y - X
            return (float(np.tensordot(G, Dm))
                    + 0.5 * float(np.tensordot(Dm, h.hess_apply(X, Dm)))
                    + 0.5 * tau * float(np.tensordot(Dm, Dm)))

        a_eff = 2.0 * c1_eff ** 2 * cfg.c2 * (1.0 - cfg.c2)
        nD = float(np.linalg.norm(D))
        # achievable decreases smaller than rounding error in h itself are
        # not evidence of a bad curvature estimate; stop instead of
        # escalating kappa forever on noise
        noise_floor = 16.0 * np.finfo(float).eps * (1.0 + abs(fX))
        Y = None
        mY = np.nan
        bound = np.nan
        at_noise_floor = False
        while True:
            bound = -a_eff / (kappa + tau) * npg * npg
            alpha_l = 2.0 * c1_eff * (1.0 - cfg.c2) * npg / ((kappa + tau) * nD)
            cands = [_project_ob_plus_raw(X + D),
                     _project_ob_plus_raw(X + alpha_l * D)]
            mvals = [m_val(Yc) for Yc in cands]
            i = int(np.argmin(mvals))
            Yc, mc = cands[i], mvals[i]
            if abs(mc) <= noise_floor:
                flags.append("ModelAtNoiseFloor")
                at_noise_floor = True
                break
            if mc <= bound:
                Y, mY = Yc, mc
                break
            kappa *= 2.0
            if kappa > cfg.kappa_cap:
                flags.append("CurvatureEstimateExhausted")
                break
        if at_noise_floor:
            break
        if Y is None:
            tau *= cfg.beta2  # no certified trial; tighten the model and retry
            trials.append({"iter": it, "model": None, "bound": bound,
                           "direction": used, "rho": None, "accepted": False,
                           "satisfied": False, "tau": tau, "kappa": kappa})
            continue

        fY = float(h.value(Y))
        rho = (fY - fX) / mY
        accepted = rho >= cfg.eta1
        trials.append({"iter": it, "model": mY, "bound": bound,
                       "direction": used, "rho": rho, "accepted": accepted,
                       "satisfied": True, "tau": tau, "kappa": kappa})
        if accepted:
            step = float(np.linalg.norm(Y - X))
            X, fX = Y, fY
        if rho >= cfg.eta2:
            tau = cfg.beta0 * tau
        elif rho >= cfg.eta1:
            tau = cfg.beta1 * tau
        else:
            tau = cfg.beta2 * tau
        tau = min(max(tau, 1e-12), 1e14)
        if accepted and cfg.step_tol is not None and step <= cfg.step_tol:
            break
    else:
        flags.append("MaxIterReached")
    if not converged and it >= cfg.max_iter and "MaxIterReached" not in flags:
        flags.append("MaxIterReached")
    G = np.asarray(h.grad(X), dtype=float)
    res = float(np.linalg.norm(np.minimum(X, riemannian_grad(X, G))))
    rep = InnerReport(iterations=it, final_value=fX, step_norm=step,
                      kkt_residual=res, converged=converged or res <= cfg.tol,
                      flags=flags, trials=trials)
    return make_oblique(X), rep
