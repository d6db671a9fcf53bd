"""Stratified submersions onto Heisenberg targets and the degenerating
vertical metrics built from them.

A map is stored by its layer matrices: ``F1`` (m' x m) on the first layer and
``F2`` (p' x p) on the second, both in orthonormal horizontal / given vertical
coordinates of source and target.  For a target ``K`` with structure tensor
``c'``, the homomorphism condition reads

    F2 c[j, k, :] = c'(F1 X_j, F1 X_k)    for all j, k.

Onto ``H^1`` this says that the 2-form ``w -> w . [., .]`` with ``w = F2`` is
the decomposable form ``a ^ b`` built from the two rows of ``F1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import least_squares

from .algebra import (
    AlgebraError,
    StepTwoAlgebra,
    VerticalMetric,
    gram,
    numerical_rank,
    pair_list,
    rank_tolerance,
)
from .deviation import SolverOptions, deviation_given_metric
from .zoo import free_step2, heisenberg

RESIDUAL_TOL = 1e-10


class SubmersionError(AlgebraError):
    """No submersion with the requested properties could be built."""


def _gram_schmidt(vectors, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize columns in order, dropping (near) dependent ones."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    basis: list[np.ndarray] = []
    scale = max(float(np.abs(vectors).max(initial=0.0)), 1.0)
    for v in vectors.T:
        w = v.copy()
        for _ in range(2):  # twice is enough
            for b in basis:
                w -= (b @ w) * b
        n = np.linalg.norm(w)
        if n > tol * scale:
            basis.append(w / n)
    if not basis:
        return np.zeros((vectors.shape[0], 0))
    return np.stack(basis, axis=1)


def _null_basis(A) -> np.ndarray:
    """Orthonormal basis of Ker(A), Gram-Schmidt over the standard basis."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[1]
    P = np.eye(n) - np.linalg.pinv(A) @ A
    return _gram_schmidt(P)


def _bracket_span(G: StepTwoAlgebra, W) -> np.ndarray:
    """Orthonormal basis of ``[W, W]`` inside v2."""
    W = np.asarray(W, dtype=float)
    cols = [G.bracket(W[:, i], W[:, j]) for i in range(W.shape[1]) for j in range(i + 1, W.shape[1])]
    if not cols:
        return np.zeros((G.p, 0))
    return _gram_schmidt(np.stack(cols, axis=1))


@dataclass(frozen=True)
class SubmersionMap:
    """Layer matrices of a stratified map ``G -> K`` plus its splittings.

    Bases are stored as columns: ``W_basis``/``V_basis`` in v1 coordinates,
    ``W2_basis``/``V2_basis`` in v2 coordinates.
    """

    F1: np.ndarray
    F2: np.ndarray
    target: StepTwoAlgebra
    W_basis: np.ndarray
    V_basis: np.ndarray
    W2_basis: np.ndarray
    V2_basis: np.ndarray
    pair: tuple[int, int] | None = None
    note: str = field(default="", compare=False)

    @classmethod
    def from_layers(cls, G: StepTwoAlgebra, F1, F2, target: StepTwoAlgebra,
                    pair=None, note: str = "") -> "SubmersionMap":
        F1 = np.atleast_2d(np.asarray(F1, dtype=float))
        F2 = np.atleast_2d(np.asarray(F2, dtype=float))
        if F1.shape != (target.m, G.m) or F2.shape != (target.p, G.p):
            raise AlgebraError(
                f"layer shapes {F1.shape}, {F2.shape} do not fit "
                f"({target.m}, {G.m}) and ({target.p}, {G.p})"
            )
        V = _null_basis(F1)
        W = _gram_schmidt(F1.T)
        W2 = _bracket_span(G, W)
        V2 = _null_basis(F2)
        return cls(F1, F2, target, W, V, W2, V2, pair, note)


@dataclass(frozen=True)
class ConditionCheck:
    passed: bool
    residual: float
    detail: str


@dataclass(frozen=True)
class SubmersionReport:
    homomorphism: ConditionCheck
    surjective: ConditionCheck
    isometry: ConditionCheck
    isomorphism_w2: ConditionCheck
    direct_sum: ConditionCheck

    @property
    def conditions(self) -> dict[str, ConditionCheck]:
        return {
            "1": self.homomorphism,
            "2": self.surjective,
            "3": self.isometry,
            "4": self.isomorphism_w2,
        }

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.conditions.items() if not c.passed]


def verify_submersion(F: SubmersionMap, G: StepTwoAlgebra) -> SubmersionReport:
    """Check the four defining conditions of a sub-Riemannian submersion."""
    K = F.target
    F1, F2 = F.F1, F.F2
    lhs = np.einsum("ba,jka->jkb", F2, G.c)
    rhs = np.einsum("uj,vk,uvb->jkb", F1, F1, K.c)
    res1 = float(np.abs(lhs - rhs).max(initial=0.0))
    c1 = ConditionCheck(res1 <= RESIDUAL_TOL, res1, "max |F2 [X_j,X_k] - [F1 X_j, F1 X_k]|")

    r1, r2 = numerical_rank(F1), numerical_rank(F2)
    c2 = ConditionCheck(
        r1 == K.m and r2 == K.p,
        float(K.m - r1 + K.p - r2),
        f"rank F1 = {r1} of {K.m}, rank F2 = {r2} of {K.p}",
    )

    # W is recomputed from F1 so a stale basis cannot hide a failure
    W = _gram_schmidt(F1.T)
    sv = np.linalg.svd(F1 @ W, compute_uv=False) if W.size else np.zeros(0)
    res3 = float(np.abs(sv - 1.0).max(initial=0.0)) if sv.size else np.inf
    c3 = ConditionCheck(
        sv.size == K.m and res3 <= RESIDUAL_TOL,
        res3,
        f"singular values of F1 on W: {np.array2string(sv, precision=12)}",
    )

    W2 = _bracket_span(G, W)
    dW2 = W2.shape[1]
    rW2 = numerical_rank(F2 @ W2) if dW2 else 0
    c4 = ConditionCheck(
        dW2 == K.p and rW2 == dW2,
        float(abs(dW2 - K.p) + (dW2 - rW2)),
        f"dim W2 = {dW2}, dim w2 = {K.p}, rank F2|W2 = {rW2}",
    )

    V2 = _null_basis(F2)
    stacked = np.hstack([V2, W2])
    rs = numerical_rank(stacked) if stacked.size else 0
    c5 = ConditionCheck(
        V2.shape[1] + dW2 == G.p and rs == G.p,
        float(abs(V2.shape[1] + dW2 - G.p) + (G.p - rs)),
        f"dim V2 + dim W2 = {V2.shape[1]} + {dW2}, rank = {rs}, p = {G.p}",
    )
    return SubmersionReport(c1, c2, c3, c4, c5)


def _decomposable_split(A, first=None):
    """``A = sigma (a b^T - b a^T)`` for a skew rank-2 ``A``; returns (a, b, sigma)."""
    U, s, _ = np.linalg.svd(A)
    sigma = float(s[0])
    a = U[:, :2] @ (U[:, :2].T @ first) if first is not None else U[:, 0]
    a = a / np.linalg.norm(a)
    b = -A @ a / sigma
    return a, b, sigma


def _from_form(G: StepTwoAlgebra, w, first=None, pair=None, note="") -> SubmersionMap:
    a, b, sigma = _decomposable_split(G.form(w), first)
    return SubmersionMap.from_layers(G, np.stack([a, b]), (np.asarray(w) / sigma)[None, :],
                                     heisenberg(1), pair=pair, note=note)


def _pair_candidate(G: StepTwoAlgebra, j: int, k: int) -> SubmersionMap:
    pairs = pair_list(G.m)
    C = G.structure_matrix()
    idx = pairs.index((min(j, k), max(j, k)))
    if np.linalg.norm(C[idx]) <= rank_tolerance(np.linalg.svd(C, compute_uv=False)):
        raise SubmersionError(f"pair ({j}, {k}) does not generate: [X_j, X_k] = 0")
    # d solves C d = e_(jk) whenever e_(jk) lies in the range of C
    d = np.linalg.pinv(C)[:, idx]
    if j > k:
        d = -d
    F1 = np.zeros((2, G.m))
    F1[0, j] = F1[1, k] = 1.0
    return SubmersionMap.from_layers(G, F1, d[None, :], heisenberg(1), pair=(j, k),
                                     note="coordinate pair")


def _search_decomposable(G: StepTwoAlgebra, n_starts: int = 32, seed: int = 0):
    """Find ``w`` whose 2-form has rank 2, or None.

    Rank <= 2 means every 4 x 4 principal Pfaffian vanishes (the Plucker
    relations), a system of quadrics in ``w``; we solve it by
    Levenberg-Marquardt with the normalization ``|w| = 1`` as an extra row.
    """
    m, p = G.m, G.p
    if m < 4:
        return np.eye(p)[0]  # every 2-form on R^3 is decomposable
    quads = np.array(list(combinations(range(m), 4)))
    i, j, k, l = quads.T
    c = G.c

    def resid(w):
        A = c @ w
        pf = A[i, j] * A[k, l] - A[i, k] * A[j, l] + A[i, l] * A[j, k]
        return np.append(pf, w @ w - 1.0)

    def jac(w):
        A = c @ w
        rows = (c[i, j] * A[k, l, None] + A[i, j, None] * c[k, l]
                - c[i, k] * A[j, l, None] - A[i, k, None] * c[j, l]
                + c[i, l] * A[j, k, None] + A[i, l, None] * c[j, k])
        return np.vstack([rows, 2.0 * w])

    rng = np.random.default_rng(seed)
    starts = np.vstack([np.eye(p), rng.standard_normal((n_starts, p))])
    method = "lm" if len(quads) + 1 >= p else "trf"
    for w0 in starts:
        out = least_squares(resid, w0 / np.linalg.norm(w0), jac=jac, method=method,
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
        w = out.x / np.linalg.norm(out.x)
        s = np.linalg.svd(G.form(w), compute_uv=False)
        if s[0] > 0 and s[2] <= 1e-12 * s[0]:
            return w
    return None


def build_submersion_to_h1(G: StepTwoAlgebra, j="auto", k="auto") -> SubmersionMap:
    """Submersion ``G -> H^1`` sending ``X_j -> U``, ``X_k -> V`` (0-based).

    With an explicit pair the second layer is ``F2 = pinv(C)[:, (j,k)]``, which
    works exactly when the unit vector of that pair lies in the range of the
    structure matrix ``C``.  With ``"auto"`` the pairs are tried in
    lexicographic order; if none works, any decomposable form in the span of
    the structure forms is searched for.  Raises :class:`SubmersionError`
    when no verified map is found.
    """
    if (j == "auto") != (k == "auto"):
        raise AlgebraError("give both pair indices or neither")
    if j != "auto":
        j, k = int(j), int(k)
        if not (0 <= j < G.m and 0 <= k < G.m) or j == k:
            raise AlgebraError(f"invalid pair ({j}, {k}) for m={G.m}")
        F = _pair_candidate(G, j, k)
        rep = verify_submersion(F, G)
        if not rep.ok:
            raise SubmersionError(
                f"pair ({j}, {k}): conditions {rep.failed()} fail; the pair's unit "
                f"vector is not in the range of the structure matrix "
                f"(residual {rep.homomorphism.residual:.3e})"
            )
        return F

    C = G.structure_matrix()
    tol = rank_tolerance(np.linalg.svd(C, compute_uv=False))
    for a, b in pair_list(G.m):
        if np.linalg.norm(C[pair_list(G.m).index((a, b))]) <= tol:
            continue
        F = _pair_candidate(G, a, b)
        if verify_submersion(F, G).ok:
            return F

    w = _search_decomposable(G)
    if w is not None:
        F = _from_form(G, w, note="decomposable form search")
        if verify_submersion(F, G).ok:
            return F
    raise SubmersionError(
        f"{G.name or 'algebra'}: no rank-2 form in the span of the structure forms; "
        "no submersion onto H^1 exists"
    )


def counterexample_f22n_to_hn(n: int) -> tuple[SubmersionMap, SubmersionReport, StepTwoAlgebra]:
    """The map ``F_{2,2n} -> H^n``: ``X_j -> U_j``, ``X_{n+j} -> V_j``, ``T_{j,n+j} -> Z``.

    It is a surjective homomorphism and an isometry, but ``[W, W]`` is all of
    v2, so the second-layer isomorphism condition fails.
    """
    if n < 2:
        raise AlgebraError(f"counterexample needs n >= 2, got {n}")
    G = free_step2(2 * n)
    F1 = np.eye(2 * n)
    F2 = np.zeros((1, G.p))
    pairs = pair_list(2 * n)
    for j in range(n):
        F2[0, pairs.index((j, n + j))] = 1.0
    F = SubmersionMap.from_layers(G, F1, F2, heisenberg(n), note="F_2,2n -> H^n")
    return F, verify_submersion(F, G), G


def epsilon_metric(F: SubmersionMap, Qtarget, QV2, eps: float) -> np.ndarray:
    """``eps^2 g_V2 (+) F^* g_target`` on ``v2 = V2 (+) W2``, in the T basis."""
    if not eps > 0:
        raise AlgebraError(f"eps must be positive, got {eps}")
    V2, W2 = F.V2_basis, F.W2_basis
    p = V2.shape[0]
    if V2.shape[1] + W2.shape[1] != p:
        raise AlgebraError("V2 and W2 do not split v2")
    Qt = VerticalMetric(gram(Qtarget)).Q
    Qv = np.atleast_2d(gram(QV2)) if V2.shape[1] else np.zeros((0, 0))
    if V2.shape[1]:
        Qv = VerticalMetric(Qv).Q
    FW = F.F2 @ W2
    D = np.zeros((p, p))
    nv = V2.shape[1]
    D[:nv, :nv] = eps**2 * Qv
    D[nv:, nv:] = FW.T @ Qt @ FW
    Binv = np.linalg.inv(np.hstack([V2, W2]))
    Q = Binv.T @ D @ Binv
    return (Q + Q.T) / 2


def bound_via_submersion(G: StepTwoAlgebra, eps_list, pair=("auto", "auto"),
                         opts: SolverOptions | None = None) -> list[tuple[float, float]]:
    """``(eps, delta(G, g_eps))`` along the degenerating family of a submersion onto H^1."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise AlgebraError("eps values must be positive")
    F = build_submersion_to_h1(G, *pair)
    nv = F.V2_basis.shape[1]
    out = []
    for eps in eps_list:
        Q = epsilon_metric(F, np.eye(1), np.eye(nv), eps)
        out.append((eps, deviation_given_metric(G, Q, opts).value))
    return out
