"""Maximization of ``u -> ||K(u)^2 + Id||_HS^2`` over the unit sphere.

``K(u) = sum_b u_b A_b`` is a linear family of skew m x m matrices, so the
objective is an even quartic polynomial in ``u``.  Two evaluators share one
interface: a precomputed quartic-form tensor (fast for small ``r``) and a
direct matrix evaluator.  The ascent is batched over all starts.
"""
from __future__ import annotations

import functools
import itertools
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .algebra import StepTwoAlgebra, j_basis

TENSOR_MAX_P = 30
ROUNDOFF = 64 * np.finfo(float).eps

_base_cache: "weakref.WeakKeyDictionary[StepTwoAlgebra, tuple]" = weakref.WeakKeyDictionary()


def _base_forms(G: StepTwoAlgebra):
    """Symmetrized ``tr(E_a E_b E_c E_d)`` and ``tr(E_a E_b)`` for the J basis."""
    hit = _base_cache.get(G)
    if hit is not None:
        return hit
    E = j_basis(G)
    P2 = np.einsum("aij,bji->ab", E, E)
    EE = np.einsum("aij,bjk->abik", E, E)
    T4 = np.einsum("abik,cdki->abcd", EE, EE)
    T4 = sum(np.transpose(T4, perm) for perm in itertools.permutations(range(4))) / 24.0
    _base_cache[G] = (T4, P2)
    return T4, P2


class QuarticObjective:
    """``f(u) = tr(K^4) + 2 tr(K^2) + m`` for ``K(u) = sum_b u_b A_b``."""

    def __init__(self, G: StepTwoAlgebra, factor, backend: str | None = None):
        F = np.asarray(factor, dtype=float)
        self.m = G.m
        self.r = F.shape[1]
        if backend is None:
            backend = "tensor" if G.p <= TENSOR_MAX_P else "matrix"
        self.backend = backend
        if backend == "tensor":
            T4, P2 = _base_forms(G)
            T = T4
            for _ in range(4):
                # contracts the leading index and appends the new one
                T = np.tensordot(T, F, axes=([0], [0]))
            self.T4 = np.ascontiguousarray(T)
            self.P2 = F.T @ P2 @ F
        elif backend == "matrix":
            self.A = np.einsum("ab,aij->bij", F, j_basis(G))
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def value_grad(self, U):
        """Values (S,) and Euclidean gradients (S, r) for a batch of rows."""
        U = np.atleast_2d(U)
        if self.backend == "tensor":
            r, S = self.r, U.shape[0]
            X = (self.T4.reshape(r ** 3, r) @ U.T).reshape(r * r, r, S)
            Y = np.einsum("pks,sk->ps", X, U).reshape(r, r, S)
            Tuuu = np.einsum("iks,sk->si", Y, U)
            PU = U @ self.P2
            f = np.einsum("si,si->s", Tuuu, U) + 2.0 * np.einsum("si,si->s", PU, U) + self.m
            return f, 4.0 * Tuuu + 4.0 * PU
        K = np.einsum("sb,bij->sij", U, self.A)
        M = K @ K + np.eye(self.m)
        f = np.einsum("sij,sij->s", M, M)
        g = 4.0 * np.einsum("sij,bji->sb", M @ K, self.A)
        return f, g

    def hessian(self, u):
        u = np.asarray(u, dtype=float)
        if self.backend == "tensor":
            r = self.r
            Tuu = ((self.T4.reshape(r ** 3, r) @ u).reshape(r * r, r) @ u).reshape(r, r)
            return 12.0 * Tuu + 4.0 * self.P2
        K = np.einsum("b,bij->ij", u, self.A)
        M = K @ K + np.eye(self.m)
        AK = np.einsum("bij,jk->bik", self.A, K)
        KA = np.einsum("ij,bjk->bik", K, self.A)
        S = AK + KA  # d(K^2)/du_b
        # H_ab = 4 tr((S_b K + M A_b) A_a)
        X = np.einsum("bij,jk->bik", S, K) + np.einsum("ij,bjk->bik", M, self.A)
        H = 4.0 * np.einsum("bij,aji->ab", X, self.A)
        return (H + H.T) / 2


def sphere_starts(r: int, n: int, seed: int) -> np.ndarray:
    """Coordinate directions followed by ``n`` scrambled Halton points on S^{r-1}."""
    return _sphere_starts(r, n, seed).copy()


@functools.lru_cache(maxsize=256)
def _sphere_starts(r, n, seed):
    pts = [np.eye(r)]
    if n > 0 and r > 1:
        h = qmc.Halton(d=r, scramble=True, seed=np.random.default_rng(seed)).random(n)
        z = norm.ppf(np.clip(h, 1e-12, 1 - 1e-12))
        pts.append(z / np.linalg.norm(z, axis=1, keepdims=True))
    return np.vstack(pts)


def _normalize(U):
    return U / np.linalg.norm(U, axis=-1, keepdims=True)


def _tangent_grad(U, g):
    return g - np.sum(g * U, axis=-1, keepdims=True) * U


@dataclass
class AscentResult:
    u: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    index: int
    all_f: np.ndarray


def _ascend(obj, U, f, g, idx, n_iter, tol):
    """Backtracking projected gradient ascent on rows ``idx`` (in place)."""
    G = _tangent_grad(U, g)
    gn = np.linalg.norm(G, axis=1)
    step = 0.5 / np.maximum(gn, 1.0)
    active = np.zeros(len(U), dtype=bool)
    active[idx] = gn[idx] > tol * np.maximum(f[idx], 1.0)
    it = 0
    for it in range(1, n_iter + 1):
        if not active.any():
            break
        sel = np.flatnonzero(active)
        trial = _normalize(U[sel] + step[sel, None] * G[sel])
        ft, gt = obj.value_grad(trial)
        Gt = _tangent_grad(trial, gt)
        gnt = np.linalg.norm(Gt, axis=1)
        ok = ft >= f[sel] + 1e-4 * step[sel] * gn[sel] ** 2
        # below roundoff in f, progress is judged by the gradient instead
        flat = np.abs(ft - f[sel]) <= ROUNDOFF * np.maximum(np.abs(f[sel]), 1.0)
        ok |= flat & (gnt < gn[sel])
        acc, rej = sel[ok], sel[~ok]
        U[acc], f[acc], g[acc] = trial[ok], ft[ok], gt[ok]
        G[acc], gn[acc] = Gt[ok], gnt[ok]
        step[acc] *= 2.0
        step[rej] *= 0.5
        active[acc] = gn[acc] > tol * np.maximum(f[acc], 1.0)
        active[rej] = step[rej] > 1e-16
    return gn, it


def maximize_on_sphere(obj: QuarticObjective, starts, max_iter: int = 500,
                       tol: float = 1e-9, screen_iter: int = 30,
                       keep: int = 4) -> AscentResult:
    """Multistart ascent on the sphere.

    Every start gets ``screen_iter`` backtracking gradient steps; the ``keep``
    best are then refined by saddle-free Newton iterations (at most
    ``max_iter`` steps in total per candidate).  Ties among final values are
    broken by start order.
    """
    U = _normalize(np.array(starts, dtype=float))
    f, g = obj.value_grad(U)
    if obj.r == 1:
        i = int(np.argmax(f))
        return AscentResult(np.sign(U[i]) * np.ones(1), float(f[i]), 0.0, 0, i, f)

    gn, it1 = _ascend(obj, U, f, g, np.arange(len(U)), min(screen_iter, max_iter), tol)
    order = np.sort(np.argsort(-f, kind="stable")[:keep])
    it2 = 0
    for i in order:
        u, fi, gi, its = _newton_polish(obj, U[i], float(f[i]), tol, max(max_iter - it1, 1))
        U[i], f[i], gn[i] = u, fi, gi
        it2 = max(it2, its)

    fmax = f[order].max()
    i = int(next(j for j in order if f[j] >= fmax - 1e-12 * max(fmax, 1.0)))
    return AscentResult(U[i].copy(), float(f[i]), float(gn[i]), it1 + it2, i, f)


def _tangent_basis(u):
    # orthonormal basis of the tangent space u^perp (Householder reflection)
    r = u.size
    v = u.copy()
    v[0] += 1.0 if u[0] >= 0 else -1.0
    H = np.eye(r) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def _newton_polish(obj: QuarticObjective, u, f, tol, max_steps: int = 50):
    """Saddle-free Riemannian Newton ascent with backtracking.

    The tangent Hessian is replaced by ``-|H|`` (eigenvalues flipped negative),
    so every step is an ascent direction; near a nondegenerate maximum this
    is plain Newton.  Returns ``(u, f, tangent grad norm, steps)``.
    """
    _, g = obj.value_grad(u[None])
    g = g[0]
    gt = _tangent_grad(u, g)
    gn = float(np.linalg.norm(gt))
    steps = 0
    for steps in range(1, max_steps + 1):
        if gn <= tol * max(f, 1.0):
            steps -= 1
            break
        basis = _tangent_basis(u)
        H = obj.hessian(u) - float(u @ g) * np.eye(obj.r)
        lam, V = np.linalg.eigh(basis.T @ H @ basis)
        mu = max(np.abs(lam).max(), 1.0) * 1e-10
        gr = basis.T @ gt
        d = basis @ (V @ ((V.T @ gr) / np.maximum(np.abs(lam), mu)))
        dn = np.linalg.norm(d)
        if dn > 1.0:
            d /= dn
        accepted = False
        scale = 1.0
        for _ in range(40):
            cand = _normalize(u + scale * d)
            fc, gc = obj.value_grad(cand[None])
            gtc = _tangent_grad(cand, gc[0])
            gnc = float(np.linalg.norm(gtc))
            flat = abs(fc[0] - f) <= ROUNDOFF * max(abs(f), 1.0)
            if fc[0] >= f + 1e-4 * scale * float(gt @ d) or flat and gnc < gn:
                u, f, g, gt, gn = cand, float(fc[0]), gc[0], gtc, gnc
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
    return u, f, gn, steps
