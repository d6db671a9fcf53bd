"""Approximate and algebraic H-type certificates.

For a unit horizontal ``x`` let ``B(x)`` be the p x m matrix of ``ad_X`` and
``Q = L L^T`` the vertical metric.  The singular values of ``L^T B(x)`` are
the bi-Lipschitz constants of ``ad_X`` restricted to ``Ker(ad_X)^perp``.

Everything reduces to optimizing ``|form(L v) x|`` over pairs of unit vectors,
since ``B(x)^T w = -form(w) x``.  For fixed ``v`` the best ``x`` is an
eigenvector of ``form^T form`` and for fixed ``x`` the best ``v`` is one of
``M M^T`` with ``M = L^T B(x)``, so we alternate exact eigen-steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import (
    AlgebraError,
    StepTwoAlgebra,
    VerticalMetric,
    ad_matrix,
    gram,
    numerical_rank,
    rank_tolerance,
)
from .deviation import DeviationResult, SolverOptions, deviation_given_metric
from .sphere import sphere_starts


@dataclass(frozen=True)
class RigidityOptions:
    n_starts: int = 16
    n_samples: int = 256
    max_iter: int = 200
    seed: int = 0


@dataclass(frozen=True)
class RigidityReport:
    A: float
    B: float
    witness_X_A: np.ndarray
    witness_X_B: np.ndarray
    algebraic_htype: bool
    min_pth_sv: float
    threshold: float
    generic_rank: int
    rank_deficient: bool
    delta_used: float | None = None
    reason: str = ""


def _cholesky(G: StepTwoAlgebra, Q) -> np.ndarray:
    Qm = VerticalMetric(gram(Q)).Q
    if Qm.shape != (G.p, G.p):
        raise AlgebraError(f"vertical metric must be {G.p}x{G.p}, got {Qm.shape}")
    return np.linalg.cholesky(Qm)


def _M(G, L, x):
    # L^T B(x): singular values are the ad_X constants in the metric Q
    return L.T @ ad_matrix(G, x).B


def _sv(G, L, x, i) -> float:
    """``i``-th largest singular value (0-based) of ``L^T B(x)``."""
    s = np.linalg.svd(_M(G, L, x), compute_uv=False)
    return float(s[i]) if i < s.size else 0.0


def generic_rank(G: StepTwoAlgebra, seed: int = 0, trials: int = 3) -> int:
    """Rank of ``ad_X`` at a generic X (max over a few random draws)."""
    rng = np.random.default_rng(seed)
    return max(numerical_rank(ad_matrix(G, x).B) for x in rng.standard_normal((trials, G.m)))


def _alternate(G, L, x, minimize: bool, iters: int):
    """Alternating eigen-steps for ``min/max |form(L v) x|`` over unit x, v."""
    p = G.p
    pick = 0 if minimize else -1
    x = x / np.linalg.norm(x)
    val = None
    for _ in range(iters):
        M = _M(G, L, x)
        _, vecs = np.linalg.eigh(M @ M.T)
        v = vecs[:, pick]
        A = G.form(L @ v)
        ev2, xs = np.linalg.eigh(A.T @ A)
        x_new = xs[:, pick]
        new = math.sqrt(max(ev2[pick], 0.0))
        if val is not None and abs(new - val) <= 1e-14 * max(val, 1.0):
            x, val = x_new, new
            break
        x, val = x_new, new
    return x, _sv(G, L, x, p - 1 if minimize else 0)


def _subgradient_min(G, L, x, idx: int, iters: int):
    """Projected subgradient descent on ``sigma_idx(L^T B(x))``; keeps the best."""
    x = x / np.linalg.norm(x)
    Bj = np.einsum("jka->jak", G.c)  # B(x) = sum_j x_j Bj[j]
    best_x, best = x, _sv(G, L, x, idx)
    step = 0.25
    for it in range(iters):
        U, s, Vt = np.linalg.svd(_M(G, L, x))
        if idx >= s.size:
            break
        u, v = U[:, idx], Vt[idx]
        g = np.einsum("a,jak,k->j", L @ u, Bj, v)
        g -= (g @ x) * x
        gn = np.linalg.norm(g)
        if gn < 1e-14:
            break
        x = x - step / math.sqrt(it + 1) * g / gn
        x /= np.linalg.norm(x)
        val = _sv(G, L, x, idx)
        if val < best:
            best_x, best = x, val
    return best_x, best


def _probe_points(m: int, n: int, seed: int) -> np.ndarray:
    # a prefix of a single seeded stream, so larger n only adds points
    if n <= 0:
        return np.zeros((0, m))
    z = np.random.default_rng([seed, 1]).standard_normal((n, m))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _start_points(m: int, n: int, seed: int) -> np.ndarray:
    return sphere_starts(m, n, seed + 7919)


def _extreme_sv(G, L, idx: int, minimize: bool, opts: RigidityOptions):
    """Optimize ``sigma_idx`` over the unit sphere: starts + probes."""
    p = G.p
    best_x, best = None, None
    better = (lambda a, b: a < b) if minimize else (lambda a, b: a > b)
    for x in _probe_points(G.m, opts.n_samples, opts.seed):
        val = _sv(G, L, x, idx)
        if best is None or better(val, best):
            best_x, best = x, val
    exact = idx == (p - 1 if minimize else 0)
    for x in _start_points(G.m, opts.n_starts, opts.seed):
        if exact:
            x, val = _alternate(G, L, x, minimize, opts.max_iter)
        else:
            x, val = _subgradient_min(G, L, x, idx, opts.max_iter)
        if best is None or better(val, best):
            best_x, best = x, val
    return best_x, float(best)


def _algebraic(G: StepTwoAlgebra, opts: RigidityOptions):
    if G.p > G.m - 1:
        return False, 0.0, None, f"p = {G.p} > m - 1 = {G.m - 1}: X lies in Ker(ad_X)"
    x, val = _extreme_sv(G, np.eye(G.p), G.p - 1, True, opts)
    tol = rank_tolerance(np.linalg.svd(ad_matrix(G, x).B, compute_uv=False))
    ok = val > tol
    reason = "" if ok else f"ad_X has rank < p at the witness (sigma_p = {val:.3e})"
    return bool(ok), val, x, reason


def is_algebraic_htype(G: StepTwoAlgebra, opts: RigidityOptions | None = None):
    """``(flag, min_pth_sv, witness, reason)``: is ``ad_X`` onto v2 for all X != 0?

    A numerical certificate at the resolution given by ``opts``, not a proof.
    """
    return _algebraic(G, opts or RigidityOptions())


def approx_htype_constants(G: StepTwoAlgebra, Q, opts: RigidityOptions | None = None) -> RigidityReport:
    """Worst bi-Lipschitz constants ``A <= B`` of ``ad_X`` on ``Ker(ad_X)^perp``.

    ``A`` tracks the ``r``-th singular value, ``r`` the generic rank of
    ``ad_X``, so a drop of rank anywhere drives ``A`` to zero and sets
    ``rank_deficient``.
    """
    opts = opts or RigidityOptions()
    L = _cholesky(G, Q)
    r = generic_rank(G, opts.seed)
    xA, A = _extreme_sv(G, L, r - 1, True, opts)
    xB, B = _extreme_sv(G, L, 0, False, opts)
    tol = rank_tolerance([B])
    flag, min_pth, _, reason = _algebraic(G, opts)
    return RigidityReport(
        A=A,
        B=B,
        witness_X_A=xA,
        witness_X_B=xB,
        algebraic_htype=flag,
        min_pth_sv=min_pth,
        threshold=1.0 / math.sqrt(G.m),
        generic_rank=r,
        rank_deficient=r < G.p or A <= tol,
        reason=reason,
    )


@dataclass(frozen=True)
class RigidityCheck:
    report: RigidityReport
    delta: DeviationResult
    lower_ok: bool
    upper_ok: bool
    lower_margin: float
    upper_margin: float
    below_threshold: bool
    implication_ok: bool | None
    tol: float


def rigidity_check(G: StepTwoAlgebra, Q, opts: RigidityOptions | None = None,
                   inner: SolverOptions | None = None) -> RigidityCheck:
    """``A^2 >= 1 - sqrt(m) delta`` and ``B^2 <= 1 + sqrt(m) delta`` at ``delta = delta(G, Q)``.

    Also records whether ``delta < 1/sqrt(m)`` and, if so, whether the
    algebraic H-type certificate holds.  The tolerance adds the inner
    solver's gradient norm as slack.
    """
    opts = opts or RigidityOptions()
    dres = deviation_given_metric(G, Q, inner)
    rep = approx_htype_constants(G, Q, opts)
    d = dres.value
    sm = math.sqrt(G.m)
    tol = 1e-6 + sm * dres.grad_norm
    lower = rep.A**2 - (1.0 - sm * d)
    upper = (1.0 + sm * d) - rep.B**2
    below = d < 1.0 / sm - tol
    rep = RigidityReport(**{**rep.__dict__, "delta_used": d})
    return RigidityCheck(
        report=rep,
        delta=dres,
        lower_ok=lower >= -tol,
        upper_ok=upper >= -tol,
        lower_margin=lower,
        upper_margin=upper,
        below_threshold=below,
        implication_ok=(rep.algebraic_htype if below else None),
        tol=tol,
    )
