"""H-type deviation: the sphere maximization for a fixed vertical metric, the
semimetric extension, the outer search over metrics, and the product-group
lemma quantities."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .algebra import (
    AlgebraError,
    StepTwoAlgebra,
    VerticalMetric,
    VerticalSemimetric,
    gram,
    j_matrix,
    rank_tolerance,
)
from .sphere import QuarticObjective, maximize_on_sphere, sphere_starts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    n_starts: int = 32
    max_iter: int = 500
    tol: float = 1e-9
    seed: int = 0


@dataclass(frozen=True)
class OuterOptions:
    outer_iters: int = 400
    restarts: int = 3
    tol: float = 1e-6
    seed: int = 0
    inner: SolverOptions = field(default_factory=SolverOptions)
    # inner step budget while searching; the final candidates get the full one
    search_iter: int = 100
    search_starts: int = 8
    finalists: int = 3


@dataclass(frozen=True)
class DeviationResult:
    value: float
    witness_t: np.ndarray
    n_starts: int
    converged: bool
    seed: int
    grad_norm: float = 0.0
    iterations: int = 0


def deviation_from_witness(G: StepTwoAlgebra, Q, t) -> float:
    """``(1/sqrt(m)) ||J(t)^2 + Id||_HS`` evaluated directly."""
    J = j_matrix(G, gram(Q), t).J
    D = J @ J + np.eye(G.m)
    return float(np.sqrt(np.sum(D * D) / G.m))


def _canonical_sign(u):
    nz = np.flatnonzero(np.abs(u) > 1e-12)
    return -u if nz.size and u[nz[0]] < 0 else u


def _sphere_deviation(G, Qm, factor, opts: SolverOptions, extra_t=None) -> DeviationResult:
    """Shared path: ``w = Q t = factor @ u`` with ``u`` on the unit sphere."""
    r = factor.shape[1]
    obj = QuarticObjective(G, factor)
    starts = sphere_starts(r, opts.n_starts, opts.seed)
    if extra_t is not None:
        extra = np.atleast_2d(np.asarray(extra_t, dtype=float)) @ factor
        extra = extra[np.linalg.norm(extra, axis=1) > 1e-12]
        if extra.size:
            starts = np.vstack([extra, starts])
    res = maximize_on_sphere(obj, starts, max_iter=opts.max_iter, tol=opts.tol)
    u = _canonical_sign(res.u)
    # t = pinv(factor)^T u, so Q t = factor u and t^T Q t = |u|^2 = 1
    t = np.linalg.pinv(factor).T @ u
    value = deviation_from_witness(G, Qm, t)
    converged = res.grad_norm <= opts.tol * max(res.f, 1.0)
    return DeviationResult(
        value=value,
        witness_t=t,
        n_starts=len(starts),
        converged=bool(converged),
        seed=opts.seed,
        grad_norm=res.grad_norm,
        iterations=res.iterations,
    )


def deviation_given_metric(G: StepTwoAlgebra, Q, opts: SolverOptions | None = None,
                           extra_t=None) -> DeviationResult:
    """``delta(G, g_v)``: sup over ``t^T Q t = 1`` of the normalized HS defect.

    With ``Q = L L^T`` and ``t = L^{-T} u`` the constraint set is the unit
    sphere in ``u``.  ``extra_t`` adds warm-start directions (vertical vectors).
    """
    opts = opts or SolverOptions()
    Qm = gram(Q)
    if Qm.shape != (G.p, G.p):
        raise AlgebraError(f"vertical metric must be {G.p}x{G.p}, got {Qm.shape}")
    try:
        VerticalMetric(Qm)
    except AlgebraError as exc:
        raise AlgebraError(f"{exc}; call deviation_given_semimetric for degenerate Q") from None
    L = np.linalg.cholesky((Qm + Qm.T) / 2)
    return _sphere_deviation(G, Qm, L, opts, extra_t)


def deviation_given_semimetric(G: StepTwoAlgebra, Q, opts: SolverOptions | None = None,
                               extra_t=None) -> DeviationResult:
    """Deviation for a PSD Gram matrix, taken over ``{t : t^T Q t = 1}``.

    ``J(t)`` depends only on ``Q t``, so the problem reduces to the unit sphere
    of the positive eigenspace.
    """
    opts = opts or SolverOptions()
    Qm = gram(Q)
    if Qm.shape != (G.p, G.p):
        raise AlgebraError(f"vertical semimetric must be {G.p}x{G.p}, got {Qm.shape}")
    sm = VerticalSemimetric(Qm)
    if sm.rank == 0:
        raise AlgebraError("null semimetric: the unit set {t : t^T Q t = 1} is empty")
    return _sphere_deviation(G, sm.Q, sm.factor(), opts, extra_t)


@dataclass(frozen=True)
class MetricSearchResult:
    value: float
    Q_best: np.ndarray
    inner: DeviationResult
    trace: tuple[float, ...]
    evaluations: int
    converged: bool


def _theta_to_chol(theta, p):
    L = np.zeros((p, p))
    L[np.tril_indices(p)] = theta
    d = np.arange(p)
    L[d, d] = np.exp(np.clip(L[d, d], -30.0, 30.0))
    return L


def _chol_to_theta(Q):
    L = np.linalg.cholesky(Q)
    L[np.diag_indices_from(L)] = np.log(np.diag(L))
    return L[np.tril_indices(Q.shape[0])].copy()


def trace_normalized_metric(G: StepTwoAlgebra) -> np.ndarray | None:
    """``m * Gamma^{-1}`` with ``Gamma_ab = sum_jk c_jk^a c_jk^b``.

    This is the only candidate compatible with ``tr J_T^2 = -m |T|^2``, the
    trace of the H-type identity.
    """
    Gamma = np.einsum("jka,jkb->ab", G.c, G.c)
    try:
        Q = G.m * np.linalg.inv(Gamma)
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        return None
    return (Q + Q.T) / 2


def optimize_metric(G: StepTwoAlgebra, opts: OuterOptions | None = None,
                    initial_metrics=(), family=None) -> MetricSearchResult:
    """Upper bound for ``delta(G)`` by minimizing ``Q -> delta(G, Q)``.

    ``Q = L L^T`` with ``L`` lower triangular, positive diagonal stored as
    logs; this quotients the orthogonal gauge ``M -> M A^{-1}``.  The outer
    objective is a max, hence nonsmooth, so a Nelder-Mead simplex is used,
    restarted ``opts.restarts`` times from the incumbent.
    """
    opts = opts or OuterOptions()
    p = G.p
    candidates = [np.eye(p), 0.25 * np.eye(p), 4.0 * np.eye(p)]
    if family is not None:
        Qf = family.optimal_metric()
        if Qf is not None and Qf.shape == (p, p):
            candidates.append(Qf)
    tn = trace_normalized_metric(G)
    if tn is not None:
        candidates.append(tn)
    candidates.extend(gram(Q) for Q in initial_metrics)

    search_opts = replace(opts.inner, max_iter=min(opts.inner.max_iter, opts.search_iter),
                          n_starts=min(opts.inner.n_starts, opts.search_starts))
    best = {"value": np.inf, "theta": None, "res": None}
    pool: list[tuple[float, np.ndarray]] = []
    trace: list[float] = []
    n_eval = 0

    def remember(value, theta):
        pool.append((value, theta))
        pool.sort(key=lambda e: e[0])
        del pool[opts.finalists:]

    def evaluate(theta):
        nonlocal n_eval
        n_eval += 1
        L = _theta_to_chol(theta, p)
        Q = L @ L.T
        warm = None if best["res"] is None else best["res"].witness_t
        try:
            res = deviation_given_metric(G, Q, search_opts, extra_t=warm)
        except (AlgebraError, np.linalg.LinAlgError):
            return np.inf
        if res.value < best["value"]:
            theta = np.array(theta, dtype=float)
            best.update(value=res.value, theta=theta, res=res)
            remember(res.value, theta)
        trace.append(best["value"])
        return res.value

    for Q in candidates:
        evaluate(_chol_to_theta(Q))
        if best["value"] <= 1e-12:
            break

    nm_ok = True
    dim = p * (p + 1) // 2
    h = 0.25
    for restart in range(opts.restarts):
        if best["value"] <= 1e-12:
            break
        x0 = best["theta"]
        simplex = np.vstack([x0, x0 + h * np.eye(dim)])
        before = best["value"]
        out = minimize(
            evaluate,
            x0,
            method="Nelder-Mead",
            options=dict(
                maxiter=opts.outer_iters,
                xatol=opts.tol,
                fatol=opts.tol,
                adaptive=dim > 4,
                initial_simplex=simplex,
            ),
        )
        # a restart that cannot improve on its start also counts as converged
        nm_ok = bool(out.success) or before - best["value"] <= opts.tol
        log.debug("restart %d: %.10g -> %.10g (%d evals)", restart, before, best["value"], out.nfev)
        h *= 0.5

    # search values may be slight underestimates; re-solve the finalists fully
    final = None
    for _, theta in pool:
        L = _theta_to_chol(theta, p)
        Q = L @ L.T
        res = deviation_given_metric(G, Q, opts.inner, extra_t=best["res"].witness_t)
        if final is None or res.value < final[0].value:
            final = (res, Q)
    inner, Q_best = final
    return MetricSearchResult(
        value=inner.value,
        Q_best=Q_best,
        inner=inner,
        trace=tuple(trace),
        evaluations=n_eval,
        converged=nm_ok and inner.converged,
    )


@dataclass(frozen=True)
class ProductLemmaStats:
    kvec: np.ndarray
    M: np.ndarray
    u: np.ndarray
    F: float
    G2: float
    G4: float
    B: np.ndarray


def product_lemma_stats(kvec, M, u) -> ProductLemmaStats:
    """``G_q = sum_i k_i (M u)_i^q``, ``F = 1 - (2/n) G_2 + (1/n) G_4``, ``B = M^T K M``."""
    k = np.asarray(kvec, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    u = np.asarray(u, dtype=float)
    if np.any(k <= 0):
        raise AlgebraError("kvec entries must be positive")
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= rank_tolerance(s):
        raise AlgebraError("M is singular")
    n = k.sum()
    Mu = M @ u
    G2 = float(np.sum(k * Mu**2))
    G4 = float(np.sum(k * Mu**4))
    F = 1.0 - 2.0 * G2 / n + G4 / n
    B = M.T @ np.diag(k) @ M
    return ProductLemmaStats(k, M, u, F, G2, G4, B)
