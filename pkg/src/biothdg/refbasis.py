"""Reference-element bases, quadrature rules and affine maps.

The reference triangle is ``{(x, y): x, y >= 0, x + y <= 1}`` and the
reference edge is ``[0, 1]``.  Element spaces use the orthonormal
Dubiner (collapsed-coordinate Jacobi) basis, facet spaces the shifted
orthonormal Legendre basis.  Both are hierarchical: the first
``dim(P_l)`` functions span ``P_l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, factorial

import numpy as np
from scipy.special import eval_jacobi, gammaln, roots_jacobi, roots_legendre

#: Largest exactness degree served by the collapsed Gauss rules.
MAX_QUADRATURE_DEGREE = 60
#: Relative error allowed when a rule integrates a monomial within its degree.
EXACTNESS_TOL = 1e-13
#: Max-entry deviation of a basis Gram matrix from the identity.
ORTHONORMALITY_TOL = 1e-12
#: Central-difference step and allowed deviation for basis gradients.
FD_STEP = 1e-6
FD_GRADIENT_TOL = 1e-5


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def triangle_quadrature(degree: int) -> QuadratureRule:
    """Conical-product Gauss rule exact for total degree ``degree``.

    Gauss-Legendre in the collapsed direction times Gauss-Jacobi(1, 0)
    in the other; every weight is positive.
    """
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"no triangle rule of exactness {degree} "
                         f"(maximum {MAX_QUADRATURE_DEGREE})")
    m = max(1, ceil((degree + 1) / 2))
    s, ws = roots_legendre(m)
    r, wr = roots_jacobi(m, 1.0, 0.0)
    xi = 0.5 * (s + 1.0)
    eta = 0.5 * (r + 1.0)
    X, E = np.meshgrid(xi, eta, indexing="ij")
    W = np.outer(0.5 * ws, 0.25 * wr)
    pts = np.column_stack([(X * (1.0 - E)).ravel(), E.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


def edge_quadrature(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[0, 1]``; ``m`` points are exact to ``2m - 1``."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"no edge rule of exactness {degree} "
                         f"(maximum {MAX_QUADRATURE_DEGREE})")
    m = max(1, ceil((degree + 1) / 2))
    s, ws = roots_legendre(m)
    return QuadratureRule(0.5 * (s + 1.0), 0.5 * ws, degree)


def _jacobi_normalized(n, alpha, beta, x):
    # orthonormal w.r.t. (1-x)^alpha (1+x)^beta on [-1, 1]
    log_gamma = ((alpha + beta + 1) * np.log(2.0) - np.log(2 * n + alpha + beta + 1)
                 + gammaln(n + alpha + 1) + gammaln(n + beta + 1)
                 - gammaln(n + alpha + beta + 1) - gammaln(n + 1))
    return eval_jacobi(n, alpha, beta, x) / np.exp(0.5 * log_gamma)


def _jacobi_normalized_deriv(n, alpha, beta, x):
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1.0)) * _jacobi_normalized(
        n - 1, alpha + 1, beta + 1, x)


def triangle_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def _collapsed(points):
    r = 2.0 * points[:, 0] - 1.0
    s = 2.0 * points[:, 1] - 1.0
    a = np.empty_like(r)
    top = np.isclose(s, 1.0, rtol=0.0, atol=1e-14)
    a[~top] = 2.0 * (1.0 + r[~top]) / (1.0 - s[~top]) - 1.0
    a[top] = -1.0
    return a, s


class TriangleBasis:
    """Orthonormal basis of ``P_k`` on the reference triangle.

    Functions are ordered by total degree, so ``tabulate(x)[:, :triangle_dim(l)]``
    spans ``P_l`` for every ``l <= k``.
    """

    def __init__(self, k: int):
        if k < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = k
        self.indices = [(i, d - i) for d in range(k + 1) for i in range(d + 1)]

    @property
    def dim(self) -> int:
        return triangle_dim(self.degree)

    def tabulate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        a, b = _collapsed(points)
        out = np.empty((len(points), self.dim))
        for col, (i, j) in enumerate(self.indices):
            h1 = _jacobi_normalized(i, 0, 0, a)
            h2 = _jacobi_normalized(j, 2 * i + 1, 0, b)
            # the factor 2 rescales orthonormality from the biunit triangle
            out[:, col] = 2.0 * np.sqrt(2.0) * h1 * h2 * (1.0 - b) ** i
        return out

    def tabulate_grad(self, points: np.ndarray) -> np.ndarray:
        """Gradients with respect to reference coordinates, shape ``(npts, dim, 2)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        a, b = _collapsed(points)
        out = np.empty((len(points), self.dim, 2))
        for col, (i, j) in enumerate(self.indices):
            fa = _jacobi_normalized(i, 0, 0, a)
            dfa = _jacobi_normalized_deriv(i, 0, 0, a)
            gb = _jacobi_normalized(j, 2 * i + 1, 0, b)
            dgb = _jacobi_normalized_deriv(j, 2 * i + 1, 0, b)
            half = 0.5 * (1.0 - b)
            ddr = dfa * gb
            dds = dfa * gb * 0.5 * (1.0 + a)
            if i > 0:
                ddr = ddr * half ** (i - 1)
                dds = dds * half ** (i - 1)
            tmp = dgb * half ** i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * half ** (i - 1)
            dds = dds + fa * tmp
            scale = 2.0 ** (i + 0.5)
            # d/dx = 2 d/dr, and the same factor 2 normalisation as in tabulate
            out[:, col, 0] = 4.0 * scale * ddr
            out[:, col, 1] = 4.0 * scale * dds
        return out


class EdgeBasis:
    """Orthonormal shifted Legendre basis of ``P_k`` on ``[0, 1]``."""

    def __init__(self, k: int):
        if k < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = k

    @property
    def dim(self) -> int:
        return self.degree + 1

    def tabulate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = 2.0 * t - 1.0
        return np.stack([np.sqrt(2 * n + 1.0) * eval_jacobi(n, 0, 0, x)
                         for n in range(self.dim)], axis=-1)


def lobatto_nodes(k: int) -> np.ndarray:
    """Gauss-Lobatto nodes on ``[0, 1]`` in increasing order (``k + 1`` of them)."""
    if k < 1:
        raise ValueError("Lobatto nodes need k >= 1")
    if k == 1:
        return np.array([0.0, 1.0])
    inner = np.sort(np.polynomial.legendre.Legendre.basis(k).deriv().roots().real)
    return np.concatenate([[0.0], 0.5 * (inner + 1.0), [1.0]])


class LagrangeEdgeBasis:
    """Nodal basis of ``P_k`` on ``[0, 1]`` at the Lobatto nodes."""

    def __init__(self, k: int):
        self.degree = k
        self.nodes = lobatto_nodes(k)

    @property
    def dim(self) -> int:
        return self.degree + 1

    def tabulate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        nodes = self.nodes
        out = np.ones(t.shape[:-1] + (len(nodes),))
        for j, xj in enumerate(nodes):
            for m, xm in enumerate(nodes):
                if m != j:
                    out[..., j] *= (t[..., 0] - xm) / (xj - xm)
        return out


#: Local edge ``e`` of a triangle runs from local vertex ``e`` to ``(e + 1) % 3``.
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def reference_edge_points(t: np.ndarray) -> np.ndarray:
    """Reference-triangle coordinates of edge parameters ``t``, shape ``(3, len(t), 2)``."""
    t = np.asarray(t, dtype=float)
    out = np.empty((3, len(t), 2))
    for e, (a, b) in enumerate(LOCAL_EDGES):
        va, vb = REFERENCE_VERTICES[a], REFERENCE_VERTICES[b]
        out[e] = va + t[:, None] * (vb - va)
    return out


@dataclass(frozen=True)
class AffineMap:
    jacobian: np.ndarray
    inverse_jacobian: np.ndarray
    det: float
    origin: np.ndarray

    def __call__(self, ref_points):
        return self.origin + np.asarray(ref_points) @ self.jacobian.T

    def physical_gradients(self, ref_grads):
        """Map reference gradients ``(..., 2)`` to physical ones."""
        return ref_grads @ self.inverse_jacobian


def affine_map(cell_vertices) -> AffineMap:
    """Affine map from the reference triangle onto a cell given by its 3 vertices."""
    v = np.asarray(cell_vertices, dtype=float)
    J = np.column_stack([v[1] - v[0], v[2] - v[0]])
    det = float(np.linalg.det(J))
    if not det > 0.0:
        raise ValueError(f"degenerate or negatively oriented cell (det={det:g})")
    return AffineMap(J, np.linalg.inv(J), det, v[0].copy())


def affine_maps(cell_vertices: np.ndarray):
    """Vectorised :func:`affine_map` for an ``(nc, 3, 2)`` array.

    Returns ``(jacobian, inverse_jacobian, det)`` with shapes
    ``(nc, 2, 2)``, ``(nc, 2, 2)``, ``(nc,)``.
    """
    v = np.asarray(cell_vertices, dtype=float)
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0.0):
        bad = int(np.argmin(det))
        raise ValueError(f"cell {bad} is degenerate or negatively oriented (det={det[bad]:g})")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return J, inv, det


def self_check(max_k: int = 4, max_degree: int = 12, seed: int = 0) -> dict:
    """Worst deviations of the quadrature rules and bases, with pass flags.

    Checks monomial exactness of the triangle and edge rules up to
    ``max_degree``, orthonormality of both bases up to ``max_k`` and
    analytic gradients against central differences at random interior
    points.
    """
    exact = 0.0
    for d in range(max_degree + 1):
        q, e = triangle_quadrature(d), edge_quadrature(d)
        for a in range(d + 1):
            for b in range(d + 1 - a):
                ref = factorial(a) * factorial(b) / factorial(a + b + 2)
                val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
                exact = max(exact, abs(val - ref) / ref)
            exact = max(exact, abs(np.sum(e.weights * e.points ** a) * (a + 1) - 1.0))
    ortho, fd_err = 0.0, 0.0
    pts = 0.05 + 0.45 * np.random.default_rng(seed).random((20, 2))
    for k in range(max_k + 1):
        q = triangle_quadrature(2 * k)
        phi = TriangleBasis(k).tabulate(q.points)
        ortho = max(ortho, np.abs(phi.T @ (q.weights[:, None] * phi) - np.eye(phi.shape[1])).max())
        qe = edge_quadrature(2 * k)
        chi = EdgeBasis(k).tabulate(qe.points)
        ortho = max(ortho, np.abs(chi.T @ (qe.weights[:, None] * chi) - np.eye(k + 1)).max())
        basis = TriangleBasis(k)
        grad = basis.tabulate_grad(pts)
        for d in range(2):
            step = np.zeros(2)
            step[d] = FD_STEP
            fd = (basis.tabulate(pts + step) - basis.tabulate(pts - step)) / (2 * FD_STEP)
            fd_err = max(fd_err, np.abs(fd - grad[:, :, d]).max())
    return {"exactness": (float(exact), bool(exact <= EXACTNESS_TOL)),
            "orthonormality": (float(ortho), bool(ortho <= ORTHONORMALITY_TOL)),
            "gradient_fd": (float(fd_err), bool(fd_err <= FD_GRADIENT_TOL))}
