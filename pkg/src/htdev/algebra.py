"""Step-two stratified Lie algebras and the linear-algebra kernel built on them.

An algebra is stored as a dense structure tensor ``c`` of shape ``(m, m, p)``
with ``[X_j, X_k] = sum_a c[j, k, a] T_a``.  The horizontal basis ``X_1..X_m``
is always orthonormal.  Indices are 0-based throughout the Python API.

Matrix convention for Kaplan's operator: entry ``(r, k)`` of ``J_T`` is
``g_h(J_T X_k, X_r)``.  Any other skew convention gives the same ``J_T^2``,
the same norms and the same deviation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

RANK_RTOL = 1e-9
ANTISYM_ATOL = 1e-12


class AlgebraError(ValueError):
    """Raised when a structure tensor or metric violates its invariants."""


def rank_tolerance(svals) -> float:
    """Singular values below this count as zero."""
    svals = np.asarray(svals, dtype=float)
    top = float(svals.max()) if svals.size else 0.0
    return RANK_RTOL * max(top, 1.0)


def numerical_rank(a) -> int:
    s = np.linalg.svd(np.atleast_2d(np.asarray(a, dtype=float)), compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > rank_tolerance(s)))


def pair_list(m: int) -> list[tuple[int, int]]:
    """Pairs ``j < k`` in lexicographic order."""
    return list(combinations(range(m), 2))


def structure_matrix(c) -> np.ndarray:
    """The C(m,2) x p matrix whose rows are ``c[j, k, :]`` over pairs j < k."""
    c = np.asarray(c, dtype=float)
    m = c.shape[0]
    if m < 2:
        return np.zeros((0, c.shape[2]))
    j, k = np.triu_indices(m, 1)
    return c[j, k, :]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    reason: str = ""
    offending: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_algebra(c, m: int | None = None, p: int | None = None) -> ValidationReport:
    """Check shape, antisymmetry and the bracket-generating condition.

    Raises :class:`AlgebraError` on a shape mismatch (an input error); every
    other violation is reported, naming the first offending entry.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 3 or c.shape[0] != c.shape[1]:
        raise AlgebraError(f"structure tensor must have shape (m, m, p), got {c.shape}")
    if m is not None and c.shape[0] != m or p is not None and c.shape[2] != p:
        raise AlgebraError(f"structure tensor shape {c.shape} does not match m={m}, p={p}")
    m, p = c.shape[0], c.shape[2]
    if m < 2:
        return ValidationReport(False, "rank m must be at least 2")
    if p < 1:
        return ValidationReport(False, "vertical dimension p must be at least 1")
    if not np.all(np.isfinite(c)):
        return ValidationReport(False, "structure tensor has non-finite entries")
    scale = max(float(np.abs(c).max()), 1.0)
    bad = np.argwhere(np.abs(c + c.transpose(1, 0, 2)) > ANTISYM_ATOL * scale)
    if bad.size:
        j, k, a = (int(v) for v in bad[0])
        return ValidationReport(
            False,
            f"antisymmetry violated at (j={j}, k={k}, alpha={a}): "
            f"c[j,k]={c[j, k, a]!r}, c[k,j]={c[k, j, a]!r}",
            (j, k, a),
        )
    r = numerical_rank(structure_matrix(c))
    if r < p:
        return ValidationReport(False, f"not bracket-generating: rank {r} < p={p}", (r, p))
    return ValidationReport(True)


@dataclass(frozen=True, eq=False)
class StepTwoAlgebra:
    """Step-two algebra ``v1 + v2`` with an orthonormal horizontal basis."""

    c: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        c = np.array(self.c, dtype=float, copy=True)
        report = validate_algebra(c)
        if not report:
            raise AlgebraError(report.reason)
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def p(self) -> int:
        return self.c.shape[2]

    @classmethod
    def from_brackets(cls, m: int, p: int, brackets, name: str = "") -> "StepTwoAlgebra":
        """Build from ``{(j, k): coeffs}`` or an iterable of ``(j, k, coeffs)``, j != k."""
        items = brackets.items() if isinstance(brackets, dict) else (((j, k), v) for j, k, v in brackets)
        c = np.zeros((m, m, p))
        for (j, k), coeffs in items:
            coeffs = np.asarray(coeffs, dtype=float).reshape(p)
            c[j, k] += coeffs
            c[k, j] -= coeffs
        return cls(c, name=name)

    @classmethod
    def from_horizontal_gram(cls, c, gram, name: str = "") -> "StepTwoAlgebra":
        """Normalize a tensor given in a basis with horizontal Gram matrix ``gram``.

        The new basis ``X' = X L^{-T}`` (``gram = L L^T``) is orthonormal.
        """
        c = np.asarray(c, dtype=float)
        L = np.linalg.cholesky(np.asarray(gram, dtype=float))
        Linv = np.linalg.inv(L)
        return cls(np.einsum("aj,bk,jkr->abr", Linv, Linv, c), name=name)

    def structure_matrix(self) -> np.ndarray:
        return structure_matrix(self.c)

    def bracket(self, u, v) -> np.ndarray:
        """Vertical coordinates of ``[U, V]`` for horizontal coordinate vectors."""
        return np.einsum("j,k,jka->a", np.asarray(u, float), np.asarray(v, float), self.c)

    def form(self, w) -> np.ndarray:
        """The 2-form ``(U, V) -> w . [U, V]`` as an m x m skew matrix."""
        return self.c @ np.asarray(w, dtype=float)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<StepTwoAlgebra{label} m={self.m} p={self.p}>"


def _check_vertical(G: StepTwoAlgebra, Q, t=None):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (G.p, G.p):
        raise AlgebraError(f"vertical Gram matrix must be {G.p}x{G.p}, got {Q.shape}")
    if t is None:
        return Q
    t = np.asarray(t, dtype=float)
    if t.shape != (G.p,):
        raise AlgebraError(f"vertical vector must have length {G.p}, got {t.shape}")
    return Q, t


@dataclass(frozen=True)
class VerticalMetric:
    """Positive-definite Gram matrix ``Q[a, b] = g_v(T_a, T_b)``."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, copy=True)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise AlgebraError(f"Gram matrix must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise AlgebraError("Gram matrix is not symmetric")
        Q = (Q + Q.T) / 2
        ev = np.linalg.eigvalsh(Q)
        if ev[0] <= rank_tolerance(np.abs(ev)):
            raise AlgebraError(
                "vertical metric is not positive definite; use the semimetric path"
            )
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def p(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class VerticalSemimetric:
    """Positive-semidefinite Gram matrix; ``rank`` is the numerical rank."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, copy=True)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise AlgebraError(f"Gram matrix must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise AlgebraError("Gram matrix is not symmetric")
        Q = (Q + Q.T) / 2
        ev = np.linalg.eigvalsh(Q)
        if ev[0] < -rank_tolerance(np.abs(ev)):
            raise AlgebraError(f"semimetric has a negative eigenvalue {ev[0]:.3e}")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def rank(self) -> int:
        ev = np.linalg.eigvalsh(self.Q)
        return int(np.sum(ev > rank_tolerance(np.abs(ev))))

    def factor(self) -> np.ndarray:
        """p x r factor ``F`` with ``Q = F F^T`` over the positive eigenvalues."""
        ev, U = np.linalg.eigh(self.Q)
        keep = ev > rank_tolerance(np.abs(ev))
        return U[:, keep] * np.sqrt(ev[keep])


def gram(Q) -> np.ndarray:
    """Raw Gram matrix from a metric, semimetric or plain array."""
    return np.asarray(getattr(Q, "Q", Q), dtype=float)


@dataclass(frozen=True)
class SkewOperator:
    J: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class AdjointMatrix:
    B: np.ndarray
    x: np.ndarray


def j_basis(G: StepTwoAlgebra) -> np.ndarray:
    """Stack ``E[a]`` with ``J(t) = sum_a (Q t)_a E[a]``; shape (p, m, m)."""
    # E[a][r, k] = c[k, r, a] = -c[r, k, a]
    return -np.moveaxis(G.c, 2, 0)


def j_matrix(G: StepTwoAlgebra, Q, t) -> SkewOperator:
    """Matrix of ``J_T`` in the horizontal basis; entry (r, k) = g_h(J_T X_k, X_r)."""
    Q, t = _check_vertical(G, gram(Q), t)
    w = Q @ t
    J = np.einsum("kra,a->rk", G.c, w)
    return SkewOperator(J, t.copy())


def ad_matrix(G: StepTwoAlgebra, x) -> AdjointMatrix:
    """``B[a, k] = sum_j x_j c[j, k, a]``, the matrix of ``ad_X: v1 -> v2``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (G.m,):
        raise AlgebraError(f"horizontal vector must have length {G.m}, got {x.shape}")
    return AdjointMatrix(np.einsum("j,jka->ak", x, G.c), x.copy())


@dataclass(frozen=True)
class MatrixNorms:
    hs: float
    op: float
    min_sv: float
    min_nonzero_sv: float

    def __iter__(self):
        return iter((self.hs, self.op, self.min_sv, self.min_nonzero_sv))


def matrix_norms(M) -> MatrixNorms:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0:
        return MatrixNorms(0.0, 0.0, 0.0, 0.0)
    nz = s[s > rank_tolerance(s)]
    return MatrixNorms(
        float(np.sqrt(np.sum(M * M))),
        float(s[0]),
        float(s[-1]),
        float(nz[-1]) if nz.size else 0.0,
    )


def defect(G: StepTwoAlgebra, Q, t) -> float:
    """``||J(t)^2 + (t^T Q t) Id||_HS``; homogeneous of degree 2 in ``t``."""
    Qm = gram(Q)
    J = j_matrix(G, Qm, t).J
    t = np.asarray(t, dtype=float)
    D = J @ J + float(t @ Qm @ t) * np.eye(G.m)
    return float(np.sqrt(np.sum(D * D)))


def _row_space(A) -> np.ndarray:
    A = np.atleast_2d(A)
    _, s, vt = np.linalg.svd(A)
    r = int(np.sum(s > rank_tolerance(s))) if s.size else 0
    return vt[:r].T.copy()


def _column_space(A) -> np.ndarray:
    A = np.atleast_2d(A)
    u, s, _ = np.linalg.svd(A)
    r = int(np.sum(s > rank_tolerance(s))) if s.size else 0
    return u[:, :r].copy()


def kernel_complement(G: StepTwoAlgebra, x) -> np.ndarray:
    """Orthonormal basis (columns) of ``Ker(ad_X)^perp`` in v1."""
    return _row_space(ad_matrix(G, x).B)


def j_image(G: StepTwoAlgebra, Q, x) -> np.ndarray:
    """Orthonormal basis (columns) of ``{J_T X : T in v2}``."""
    Qm = _check_vertical(G, gram(Q))
    x = np.asarray(x, dtype=float)
    cols = np.stack([j_matrix(G, Qm, e).J @ x for e in np.eye(G.p)], axis=1)
    return _column_space(cols)
