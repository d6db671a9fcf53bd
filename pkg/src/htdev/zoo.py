"""Named group families and their closed-form deviations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import AlgebraError, StepTwoAlgebra, numerical_rank, structure_matrix

PAPER = "PAPER"
DERIVED = "DERIVED"

FAMILY_TAGS = (
    "heisenberg",
    "anisotropic",
    "free",
    "quaternionic",
    "product",
    "product_with_euclidean",
    "random",
)


def heisenberg(k: int) -> StepTwoAlgebra:
    """``H^k`` in basis order (X_1..X_k, Y_1..Y_k) with ``[X_j, Y_j] = T``."""
    if k < 1:
        raise AlgebraError(f"heisenberg needs k >= 1, got {k}")
    c = np.zeros((2 * k, 2 * k, 1))
    for j in range(k):
        c[j, k + j, 0] = 1.0
        c[k + j, j, 0] = -1.0
    return StepTwoAlgebra(c, name=f"H^{k}")


def anisotropic_heisenberg(b) -> StepTwoAlgebra:
    b = np.asarray(b, dtype=float).ravel()
    if b.size < 1 or np.any(b <= 0):
        raise AlgebraError("anisotropic weights must be a nonempty positive vector")
    n = b.size
    c = np.zeros((2 * n, 2 * n, 1))
    for j, bj in enumerate(b):
        c[j, n + j, 0] = bj
        c[n + j, j, 0] = -bj
    return StepTwoAlgebra(c, name=f"H^{n}(b)")


def free_step2(m: int) -> StepTwoAlgebra:
    """Free step-two algebra of rank m; vertical basis ``T_jk`` in pair order."""
    if m < 2:
        raise AlgebraError(f"free_step2 needs m >= 2, got {m}")
    pairs = [(j, k) for j in range(m) for k in range(j + 1, m)]
    c = np.zeros((m, m, len(pairs)))
    for a, (j, k) in enumerate(pairs):
        c[j, k, a] = 1.0
        c[k, j, a] = -1.0
    return StepTwoAlgebra(c, name=f"F_2,{m}")


def quaternionic_h1() -> StepTwoAlgebra:
    """First quaternionic Heisenberg algebra, v1 basis (X, Z, Y, W), v2 basis (S, T, U).

    Brackets follow left multiplication by i, j, k on (1, i, j, k) = (X, Y, Z, W):
    ``[X,Y] = [Z,W] = S``, ``[X,Z] = [W,Y] = T``, ``[X,W] = [Y,Z] = U``.
    With these signs the three J operators anticommute, so ``Q = Id`` is H-type.
    """
    X, Z, Y, W = range(4)
    S, T, U = range(3)
    brackets = {
        (X, Y): S, (Z, W): S,
        (X, Z): T, (W, Y): T,
        (X, W): U, (Y, Z): U,
    }
    c = np.zeros((4, 4, 3))
    for (j, k), a in brackets.items():
        c[j, k, a] = 1.0
        c[k, j, a] = -1.0
    return StepTwoAlgebra(c, name="H^1_K")


def product(factors) -> StepTwoAlgebra:
    """Block direct sum: horizontal bases concatenated, then vertical bases."""
    factors = list(factors)
    if not factors:
        raise AlgebraError("product of an empty list")
    m = sum(f.m for f in factors)
    p = sum(f.p for f in factors)
    c = np.zeros((m, m, p))
    i = a = 0
    for f in factors:
        c[i:i + f.m, i:i + f.m, a:a + f.p] = f.c
        i += f.m
        a += f.p
    return StepTwoAlgebra(c, name=" x ".join(f.name or "?" for f in factors))


def with_euclidean_factor(G: StepTwoAlgebra, nu: int) -> StepTwoAlgebra:
    """Append ``nu`` horizontal directions with all-zero brackets."""
    if nu < 0:
        raise AlgebraError(f"nu must be nonnegative, got {nu}")
    c = np.zeros((G.m + nu, G.m + nu, G.p))
    c[:G.m, :G.m] = G.c
    name = f"{G.name} x R^{nu}" if nu else G.name
    return StepTwoAlgebra(c, name=name)


def random_algebra(m: int, p: int, seed: int, max_tries: int = 100) -> StepTwoAlgebra:
    """Gaussian structure constants per pair, redrawn until bracket-generating."""
    npairs = m * (m - 1) // 2
    if m < 2 or not 1 <= p <= npairs:
        raise AlgebraError(f"need m >= 2 and 1 <= p <= {npairs}, got m={m}, p={p}")
    rng = np.random.default_rng(seed)
    j, k = np.triu_indices(m, 1)
    for _ in range(max_tries):
        c = np.zeros((m, m, p))
        c[j, k, :] = rng.standard_normal((npairs, p))
        c[k, j, :] = -c[j, k, :]
        if numerical_rank(structure_matrix(c)) == p:
            return StepTwoAlgebra(c, name=f"random({m},{p},{seed})")
    raise AlgebraError(f"no bracket-generating draw after {max_tries} tries")


@dataclass(frozen=True)
class FamilyDescriptor:
    """A named family plus its parameters.

    Compact text form, as used on the command line::

        heisenberg:3   anisotropic:1,2   free:4   quaternionic
        product:1,2,2  product_with_euclidean:1,1:2   random:5,3,7
    """

    tag: str
    k: int | None = None
    b: tuple[float, ...] | None = None
    m: int | None = None
    klist: tuple[int, ...] | None = None
    nu: int = 0
    p: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.tag not in FAMILY_TAGS:
            raise AlgebraError(f"unknown family {self.tag!r}; expected one of {FAMILY_TAGS}")
        if self.klist is not None:
            kl = tuple(int(v) for v in self.klist)
            if not kl or min(kl) < 1:
                raise AlgebraError("k-list must be nonempty positive integers")
            if list(kl) != sorted(kl):
                raise AlgebraError(f"k-list must be sorted ascending, got {kl}")
            object.__setattr__(self, "klist", kl)
        if self.b is not None:
            object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        need = {
            "heisenberg": ("k",),
            "anisotropic": ("b",),
            "free": ("m",),
            "product": ("klist",),
            "product_with_euclidean": ("klist",),
            "random": ("m", "p", "seed"),
        }.get(self.tag, ())
        for name in need:
            if getattr(self, name) is None:
                raise AlgebraError(f"family {self.tag!r} requires parameter {name!r}")
        if self.nu < 0:
            raise AlgebraError("nu must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "FamilyDescriptor":
        tag, _, rest = text.strip().partition(":")
        tag = tag.strip().lower()
        parts = rest.split(":") if rest else []

        def ints(s):
            return tuple(int(v) for v in s.split(",") if v.strip())

        try:
            if tag == "heisenberg":
                return cls(tag, k=int(parts[0]))
            if tag == "anisotropic":
                return cls(tag, b=tuple(float(v) for v in parts[0].split(",")))
            if tag == "free":
                return cls(tag, m=int(parts[0]))
            if tag == "quaternionic":
                return cls(tag)
            if tag == "product":
                return cls(tag, klist=ints(parts[0]))
            if tag == "product_with_euclidean":
                return cls(tag, klist=ints(parts[0]), nu=int(parts[1]) if len(parts) > 1 else 0)
            if tag == "random":
                m, p, seed = ints(parts[0])
                return cls(tag, m=m, p=p, seed=seed)
        except (IndexError, ValueError) as exc:
            raise AlgebraError(f"cannot parse family spec {text!r}: {exc}") from None
        raise AlgebraError(f"unknown family {tag!r} in {text!r}")

    def to_text(self) -> str:
        def join(vs):
            return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vs)

        if self.tag == "heisenberg":
            return f"heisenberg:{self.k}"
        if self.tag == "anisotropic":
            return f"anisotropic:{join(self.b)}"
        if self.tag == "free":
            return f"free:{self.m}"
        if self.tag == "quaternionic":
            return "quaternionic"
        if self.tag == "product":
            return f"product:{join(self.klist)}"
        if self.tag == "product_with_euclidean":
            return f"product_with_euclidean:{join(self.klist)}:{self.nu}"
        return f"random:{self.m},{self.p},{self.seed}"

    def build(self) -> StepTwoAlgebra:
        if self.tag == "heisenberg":
            return heisenberg(self.k)
        if self.tag == "anisotropic":
            return anisotropic_heisenberg(self.b)
        if self.tag == "free":
            return free_step2(self.m)
        if self.tag == "quaternionic":
            return quaternionic_h1()
        if self.tag == "random":
            return random_algebra(self.m, self.p, self.seed)
        G = product([heisenberg(k) for k in self.klist])
        if self.tag == "product_with_euclidean":
            G = with_euclidean_factor(G, self.nu)
        return G

    def optimal_metric(self) -> np.ndarray | None:
        """Known minimizing vertical Gram matrix, or None."""
        if self.tag in ("heisenberg", "free", "quaternionic"):
            p = self.build().p if self.tag != "heisenberg" else 1
            return np.eye(p)
        if self.tag == "anisotropic":
            b = np.asarray(self.b)
            return np.array([[np.sum(b**2) / np.sum(b**4)]])
        if self.tag in ("product", "product_with_euclidean"):
            k = np.asarray(self.klist, dtype=float)
            # Q = M M^T with M = diag(1, sqrt(k1/k2), ...)
            return np.diag(k[0] / k)
        return None


def closed_form_delta(d: FamilyDescriptor) -> tuple[float, str]:
    """Closed-form ``delta(G)`` with its provenance tag."""
    if d.tag == "heisenberg":
        return 0.0, PAPER
    if d.tag == "quaternionic":
        return 0.0, PAPER
    if d.tag == "free":
        return math.sqrt((d.m - 2) / d.m), PAPER
    if d.tag == "product" or d.tag == "product_with_euclidean" and d.nu == 0:
        n = sum(d.klist)
        return math.sqrt(1.0 - d.klist[0] / n), PAPER
    if d.tag == "product_with_euclidean":
        n = sum(d.klist)
        return math.sqrt(1.0 - 2 * d.klist[0] / (2 * n + d.nu)), DERIVED
    if d.tag == "anisotropic":
        b = np.asarray(d.b)
        n = b.size
        val = 1.0 - np.sum(b**2) ** 2 / (n * np.sum(b**4))
        return math.sqrt(max(val, 0.0)), DERIVED
    raise AlgebraError(f"no closed form for family {d.tag!r}")
