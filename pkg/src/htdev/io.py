"""Group definition files and result documents (JSON).

Indices in files are 1-based; the in-memory API is 0-based.  A group file
looks like::

    {"m": 2, "p": 1,
     "brackets": [{"j": 1, "k": 2, "coeffs": [1.0]}],
     "vertical_metric": [[1.0]]}

or names a family instead of listing brackets: ``{"family": "free:3"}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algebra import AlgebraError, StepTwoAlgebra, ValidationReport, VerticalSemimetric, validate_algebra
from .zoo import FamilyDescriptor

SIG_DIGITS = 15


class GroupFileError(ValueError):
    """Malformed document: bad JSON, missing fields, wrong shapes."""


@dataclass(frozen=True)
class GroupFile:
    m: int | None = None
    p: int | None = None
    brackets: tuple | None = None  # ((j, k, (coeffs...)), ...), 1-based
    vertical_metric: tuple | None = None
    family: str | None = None

    # ---- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, doc) -> "GroupFile":
        if not isinstance(doc, dict):
            raise GroupFileError("group file must be a JSON object")
        unknown = set(doc) - {"m", "p", "brackets", "vertical_metric", "family"}
        if unknown:
            raise GroupFileError(f"unknown fields: {sorted(unknown)}")
        fam = doc.get("family")
        has_brackets = "brackets" in doc
        if fam is not None and has_brackets:
            raise GroupFileError("'family' and 'brackets' are mutually exclusive")
        if fam is None and not has_brackets:
            raise GroupFileError("need either 'brackets' (with m, p) or 'family'")
        if fam is not None:
            if not isinstance(fam, str):
                raise GroupFileError("'family' must be a compact spec string such as 'free:3'")
            try:
                FamilyDescriptor.parse(fam)
            except AlgebraError as exc:
                raise GroupFileError(str(exc)) from None
            m = doc.get("m")
            p = doc.get("p")
            brackets = None
        else:
            m, p = doc.get("m"), doc.get("p")
            if not isinstance(m, int) or not isinstance(p, int) or isinstance(m, bool) or isinstance(p, bool):
                raise GroupFileError("'m' and 'p' must be integers")
            if m < 2 or p < 1:
                raise GroupFileError(f"need m >= 2 and p >= 1, got m={m}, p={p}")
            raw = doc["brackets"]
            if not isinstance(raw, list):
                raise GroupFileError("'brackets' must be a list")
            recs = []
            for i, rec in enumerate(raw):
                if not isinstance(rec, dict) or set(rec) != {"j", "k", "coeffs"}:
                    raise GroupFileError(f"bracket record {i} must have exactly j, k, coeffs")
                j, k, co = rec["j"], rec["k"], rec["coeffs"]
                if not all(isinstance(v, int) and not isinstance(v, bool) for v in (j, k)):
                    raise GroupFileError(f"bracket record {i}: j and k must be integers")
                if not (1 <= j <= m and 1 <= k <= m):
                    raise GroupFileError(f"bracket record {i}: index out of range 1..{m}")
                if not isinstance(co, list) or len(co) != p or not all(_is_number(v) for v in co):
                    raise GroupFileError(f"bracket record {i}: coeffs must be a list of {p} numbers")
                recs.append((j, k, tuple(float(v) for v in co)))
            brackets = tuple(recs)
        Q = doc.get("vertical_metric")
        if Q is not None:
            try:
                Qa = np.asarray(Q, dtype=float)
            except (TypeError, ValueError):
                raise GroupFileError("'vertical_metric' must be a numeric matrix") from None
            if Qa.ndim != 2 or Qa.shape[0] != Qa.shape[1]:
                raise GroupFileError("'vertical_metric' must be a square matrix")
            if p is not None and Qa.shape[0] != p:
                raise GroupFileError(f"'vertical_metric' must be {p}x{p}")
            Q = tuple(tuple(float(v) for v in row) for row in Qa)
        return cls(m=m, p=p, brackets=brackets, vertical_metric=Q, family=fam)

    @classmethod
    def loads(cls, text: str) -> "GroupFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GroupFileError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "GroupFile":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise GroupFileError(f"cannot read {path}: {exc}") from None
        return cls.loads(text)

    @classmethod
    def from_algebra(cls, G: StepTwoAlgebra, Q=None) -> "GroupFile":
        recs = []
        for j in range(G.m):
            for k in range(j + 1, G.m):
                co = G.c[j, k]
                if np.any(co != 0):
                    recs.append((j + 1, k + 1, tuple(float(v) for v in co)))
        Qt = None if Q is None else tuple(tuple(float(v) for v in row) for row in np.asarray(Q, float))
        return cls(m=G.m, p=G.p, brackets=tuple(recs), vertical_metric=Qt)

    # ---- output ---------------------------------------------------------
    def to_dict(self) -> dict:
        doc: dict = {}
        if self.family is not None:
            doc["family"] = self.family
            if self.m is not None:
                doc["m"] = self.m
            if self.p is not None:
                doc["p"] = self.p
        else:
            doc["m"], doc["p"] = self.m, self.p
            doc["brackets"] = [{"j": j, "k": k, "coeffs": list(co)} for j, k, co in self.brackets]
        if self.vertical_metric is not None:
            doc["vertical_metric"] = [list(r) for r in self.vertical_metric]
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    # ---- semantics ------------------------------------------------------
    def tensor(self) -> np.ndarray:
        """Raw structure tensor, without validation.

        A record ``(j, k)`` sets ``c[j, k]``; the mirror entry ``c[k, j]`` is
        filled with the negative unless the file lists it too.
        """
        if self.family is not None:
            return FamilyDescriptor.parse(self.family).build().c.copy()
        c = np.zeros((self.m, self.m, self.p))
        given = set()
        for j, k, co in self.brackets:
            if (j, k) in given:
                raise GroupFileError(f"duplicate bracket record ({j}, {k})")
            given.add((j, k))
            c[j - 1, k - 1] = co
        for j, k, co in self.brackets:
            if (k, j) not in given and j != k:
                c[k - 1, j - 1] = -np.asarray(co)
        return c

    def validate(self) -> ValidationReport:
        c = self.tensor()
        rep = validate_algebra(c)
        if rep and self.vertical_metric is not None:
            try:
                VerticalSemimetric(np.asarray(self.vertical_metric))
            except AlgebraError as exc:
                return ValidationReport(False, f"vertical_metric: {exc}")
        if not rep and rep.offending is not None and "antisymmetry" in rep.reason:
            j, k, a = rep.offending
            return ValidationReport(
                False,
                f"antisymmetry violated at (j={j + 1}, k={k + 1}, alpha={a + 1}) (1-based)",
                (j + 1, k + 1, a + 1),
            )
        return rep

    def algebra(self) -> StepTwoAlgebra:
        if self.family is not None:
            return FamilyDescriptor.parse(self.family).build()
        return StepTwoAlgebra(self.tensor())

    def descriptor(self) -> FamilyDescriptor | None:
        return None if self.family is None else FamilyDescriptor.parse(self.family)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    """Round to ``digits`` significant decimal digits."""
    return float(f"{x:.{digits}g}")


def to_jsonable(obj):
    """Recursively convert numpy data; floats rounded to 15 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return round_sig(x)
    return obj


def dump_result(result: dict, path=None) -> str:
    text = json.dumps(to_jsonable(result), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
