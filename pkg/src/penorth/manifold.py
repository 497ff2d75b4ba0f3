"""Geometry of the nonnegative oblique manifold.

Columns live on the unit sphere intersected with the nonnegative orthant.
Riemannian quantities below treat the oblique manifold (product of
spheres) as an embedded submanifold with the Euclidean metric; the
nonnegativity constraint is handled by the projections, not the metric.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import BadShape, NotTangent
from .types import ObliqueMatrix, make_oblique, oblique_data

# Tangency tolerances: strict when constructing, looser when consuming.
TANGENT_BUILD_TOL = 1e-10
TANGENT_CHECK_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class TangentDirection:
    """Direction D with x_j^T d_j = 0 for every column of the base point."""

    data: np.ndarray
    base: ObliqueMatrix


def make_tangent(X: ObliqueMatrix, D, tol: float = TANGENT_BUILD_TOL) -> TangentDirection:
    D = np.asarray(D, dtype=float)
    if D.shape != X.data.shape:
        raise BadShape(f"direction shape {D.shape} != base shape {X.data.shape}")
    err = np.abs(np.einsum("ij,ij->j", X.data, D)).max()
    if err > tol:
        raise NotTangent(f"max |x_j^T d_j| = {err!r} exceeds {tol!r}")
    D = D.copy()
    D.setflags(write=False)
    return TangentDirection(data=D, base=X)


def project_oblique_plus(C) -> ObliqueMatrix:
    """Project columnwise onto the nonnegative unit sphere.

    Each column: clip negatives to zero, normalize. A column whose positive
    part vanishes projects to the coordinate vector at its largest entry
    (smallest index on ties), which is a valid closest point.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise BadShape("project_oblique_plus needs a matrix")
    pos = np.maximum(C, 0.0)
    peak = pos.max(axis=0)
    out = np.empty_like(pos)
    ok = peak > 0
    if ok.any():
        # peak-scale first: squaring tiny or huge entries directly would
        # underflow or overflow and denormalize the column
        scaled = pos[:, ok] / peak[ok]
        out[:, ok] = scaled / np.linalg.norm(scaled, axis=0)
    if not ok.all():
        for j in np.nonzero(~ok)[0]:
            e = np.zeros(C.shape[0])
            e[int(np.argmax(C[:, j]))] = 1.0
            out[:, j] = e
    return make_oblique(out, copy=False)


def riemannian_grad(X, G) -> np.ndarray:
    """Tangent-space projection of a Euclidean gradient G at X.

    grad = G - X * Diag(X^T G), columnwise removal of the radial component.
    """
    Xd = oblique_data(X)
    G = np.asarray(G, dtype=float)
    if G.shape != Xd.shape:
        raise BadShape(f"gradient shape {G.shape} != point shape {Xd.shape}")
    radial = np.einsum("ij,ij->j", Xd, G)
    return G - Xd * radial


def riemannian_hess_apply(X, G, HD, D) -> np.ndarray:
    """Riemannian Hessian-vector product from Euclidean derivatives.

    For tangent D: Hess[D] = HD - D * Diag(X^T G), with HD the Euclidean
    Hessian applied to D and G the Euclidean gradient at X.

    Raises NotTangent when D is not tangent at X (tolerance 1e-8).
    """
    Xd = oblique_data(X)
    Dd = D.data if isinstance(D, TangentDirection) else np.asarray(D, dtype=float)
    if Dd.shape != Xd.shape:
        raise BadShape(f"direction shape {Dd.shape} != point shape {Xd.shape}")
    err = np.abs(np.einsum("ij,ij->j", Xd, Dd)).max()
    if err > TANGENT_CHECK_TOL:
        raise NotTangent(f"max |x_j^T d_j| = {err!r} exceeds {TANGENT_CHECK_TOL!r}")
    radial = np.einsum("ij,ij->j", Xd, np.asarray(G, dtype=float))
    return np.asarray(HD, dtype=float) - Dd * radial


def project_tangent_T(X: ObliqueMatrix, D) -> TangentDirection:
    """Project D onto T(X) = {D : x_j^T d_j = 0, x_j + d_j >= 0 columnwise}.

    Uses the translation identity: the projection equals the projection of
    x_j + d_j onto the slice {z : x_j^T z = 1, z >= 0}, minus x_j.
    """
    from .subsolvers import project_delta  # local import avoids a cycle

    D = np.asarray(D, dtype=float)
    if D.shape != X.data.shape:
        raise BadShape(f"direction shape {D.shape} != base shape {X.data.shape}")
    out = np.empty_like(D)
    for j in range(X.k):
        out[:, j] = project_delta(X.data[:, j], X.data[:, j] + D[:, j]) - X.data[:, j]
    # exact arithmetic gives x^T out_j = x^T z - 1 = 0; tiny float residue remains
    return make_tangent(X, out, tol=TANGENT_BUILD_TOL)


def project_orthogonal_group(M) -> np.ndarray:
    """Closest orthogonal matrix in Frobenius norm: polar factor U W^T.

    Deterministic tie-breaking: singular values sorted descending (LAPACK
    default) and each left singular vector's largest-magnitude entry made
    positive, with the matching sign flip applied to the right vectors.
    M = 0 returns the identity.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise BadShape("project_orthogonal_group needs a square matrix")
    if not np.isfinite(M).all():
        raise BadShape("matrix contains non-finite entries")
    if not M.any():
        return np.eye(M.shape[0])
    U, _, Wt = np.linalg.svd(M)
    pick = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pick, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    Wt = Wt * signs[:, None]
    return U @ Wt
