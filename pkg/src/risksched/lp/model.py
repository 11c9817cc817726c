"""Sparse LP/MILP container with a canonical, diff-stable text form.

Canonical text grammar (one record per line, whitespace-separated, floats
via repr, infinities as inf/-inf):

    lpcanon 1
    sense {min|max}
    var <name> <lower> <upper> <kind>
    con <relation> <rhs> <cname> <vname>:<coef> ...
    obj <constant> <vname>:<coef> ...
    end

Variables are sorted by name, every term list is sorted by variable name
with duplicates merged, and constraint records are sorted lexicographically,
so structurally equal models serialize to identical bytes.  Unnamed
constraints serialize their name as `-`.  Names may not contain whitespace
or `:`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "KIND_CONTINUOUS",
    "KIND_BINARY",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "RELATIONS",
    "MalformedModel",
    "VariableRef",
    "Constraint",
    "LpModel",
    "Solution",
    "canonical_dump",
    "parse_model",
    "write_lp_format",
]

KIND_CONTINUOUS = "continuous"
KIND_BINARY = "binary"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

RELATIONS = ("<=", "=", ">=")

_NAME_RE = re.compile(r"^[^\s:]+$")


class MalformedModel(ValueError):
    """Structural violation in a model under construction or solve."""


@dataclass(frozen=True)
class VariableRef:
    index: int
    name: str
    lower: float
    upper: float
    kind: str = KIND_CONTINUOUS


@dataclass(frozen=True)
class Constraint:
    terms: tuple[tuple[int, float], ...]
    relation: str
    rhs: float
    name: str = ""


TermsLike = Mapping[int, float] | Mapping["VariableRef", float] | Iterable[tuple]


class LpModel:
    """Linear program with bounded continuous and binary variables."""

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variables: list[VariableRef] = []
        self.constraints: list[Constraint] = []
        self.objective_terms: tuple[tuple[int, float], ...] = ()
        self.objective_constant: float = 0.0
        self.sense: str = "min"
        self._by_name: dict[str, int] = {}

    # -- construction -------------------------------------------------

    def add_variable(
        self,
        name: str,
        lower: float = 0.0,
        upper: float = math.inf,
        kind: str = KIND_CONTINUOUS,
    ) -> VariableRef:
        if not _NAME_RE.match(name or ""):
            raise MalformedModel(f"bad variable name {name!r}")
        if name in self._by_name:
            raise MalformedModel(f"duplicate variable name {name!r}")
        lower, upper = float(lower), float(upper)
        if math.isnan(lower) or math.isnan(upper):
            raise MalformedModel(f"NaN bound on {name!r}")
        if lower > upper:
            raise MalformedModel(f"lower {lower} > upper {upper} on {name!r}")
        if kind not in (KIND_CONTINUOUS, KIND_BINARY):
            raise MalformedModel(f"unknown kind {kind!r}")
        if kind == KIND_BINARY and not (0.0 <= lower and upper <= 1.0):
            raise MalformedModel(f"binary {name!r} must live inside [0, 1]")
        ref = VariableRef(len(self.variables), name, lower, upper, kind)
        self.variables.append(ref)
        self._by_name[name] = ref.index
        return ref

    def _canon_terms(self, terms: TermsLike) -> tuple[tuple[int, float], ...]:
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[int, float] = {}
        for key, coef in items:
            idx = key.index if isinstance(key, VariableRef) else int(key)
            if not 0 <= idx < len(self.variables):
                raise MalformedModel(f"variable index {idx} out of range")
            coef = float(coef)
            if not math.isfinite(coef):
                raise MalformedModel(f"non-finite coefficient on index {idx}")
            merged[idx] = merged.get(idx, 0.0) + coef
        return tuple(sorted((i, c) for i, c in merged.items() if c != 0.0))

    def add_constraint(
        self, terms: TermsLike, relation: str, rhs: float, name: str = ""
    ) -> int:
        if relation not in RELATIONS:
            raise MalformedModel(f"unknown relation {relation!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise MalformedModel("constraint rhs must be finite")
        if name and not _NAME_RE.match(name):
            raise MalformedModel(f"bad constraint name {name!r}")
        self.constraints.append(Constraint(self._canon_terms(terms), relation, rhs, name))
        return len(self.constraints) - 1

    def set_objective(self, terms: TermsLike, constant: float = 0.0, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise MalformedModel(f"unknown sense {sense!r}")
        constant = float(constant)
        if not math.isfinite(constant):
            raise MalformedModel("objective constant must be finite")
        self.objective_terms = self._canon_terms(terms)
        self.objective_constant = constant
        self.sense = sense

    # -- access --------------------------------------------------------

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def variable(self, name: str) -> VariableRef:
        return self.variables[self._by_name[name]]

    def has_binaries(self) -> bool:
        return any(v.kind == KIND_BINARY for v in self.variables)

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        return lo, hi

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_variables)
        for i, coef in self.objective_terms:
            c[i] = coef
        return c

    def matrix_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, data) triplets of the constraint matrix."""
        rows: list[int] = []
        cols: list[int] = []
        data: list[float] = []
        for r, con in enumerate(self.constraints):
            for i, coef in con.terms:
                rows.append(r)
                cols.append(i)
                data.append(coef)
        return (
            np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(data, dtype=float),
        )

    def rhs_vector(self) -> np.ndarray:
        return np.array([c.rhs for c in self.constraints], dtype=float)

    def clone_with_bounds(self, overrides: Mapping[int, tuple[float, float]]) -> "LpModel":
        """Copy with selected variable bounds replaced."""
        out = LpModel(self.name)
        for v in self.variables:
            lo, hi = overrides.get(v.index, (v.lower, v.upper))
            out.add_variable(v.name, lo, hi, v.kind)
        out.constraints = list(self.constraints)
        out.objective_terms = self.objective_terms
        out.objective_constant = self.objective_constant
        out.sense = self.sense
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LpModel):
            return NotImplemented
        return canonical_dump(self) == canonical_dump(other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"LpModel({self.name!r}, vars={self.n_variables}, "
            f"cons={self.n_constraints}, sense={self.sense})"
        )


@dataclass
class Solution:
    """Solve outcome; infeasible/unbounded are data, never exceptions."""

    status: str
    objective: float | None = None
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0

    def value(self, ref: VariableRef) -> float:
        if self.x is None:
            raise ValueError(f"no point available for status {self.status!r}")
        return float(self.x[ref.index])


# -- canonical text form ----------------------------------------------


def _fnum(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


def canonical_dump(model: LpModel) -> str:
    """Deterministic serialization; equal models yield identical bytes."""
    order = sorted(range(model.n_variables), key=lambda i: model.variables[i].name)
    lines = ["lpcanon 1", f"sense {model.sense}"]
    for i in order:
        v = model.variables[i]
        lines.append(f"var {v.name} {_fnum(v.lower)} {_fnum(v.upper)} {v.kind}")

    def term_text(terms: tuple[tuple[int, float], ...]) -> str:
        named = sorted(
            (model.variables[i].name, coef) for i, coef in terms if coef != 0.0
        )
        return " ".join(f"{n}:{_fnum(c)}" for n, c in named)

    con_lines = []
    for con in model.constraints:
        cname = con.name or "-"
        con_lines.append(
            f"con {con.relation} {_fnum(con.rhs)} {cname} {term_text(con.terms)}".rstrip()
        )
    lines.extend(sorted(con_lines))
    lines.append(f"obj {_fnum(model.objective_constant)} {term_text(model.objective_terms)}".rstrip())
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> LpModel:
    """Parse the canonical form back into a model."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["lpcanon", "1"]:
        raise MalformedModel("missing lpcanon 1 header")
    if lines[-1].strip() != "end":
        raise MalformedModel("missing end record")
    model = LpModel()
    sense = "min"
    pending_obj: tuple[float, list[tuple[str, float]]] | None = None
    cons: list[tuple[str, float, str, list[tuple[str, float]]]] = []

    def parse_terms(tokens: Sequence[str]) -> list[tuple[str, float]]:
        out = []
        for tok in tokens:
            name, _, coef = tok.rpartition(":")
            if not name:
                raise MalformedModel(f"bad term {tok!r}")
            out.append((name, float(coef)))
        return out

    for ln in lines[1:-1]:
        parts = ln.split()
        tag = parts[0]
        if tag == "sense":
            sense = parts[1]
        elif tag == "var":
            name, lo, hi, kind = parts[1], float(parts[2]), float(parts[3]), parts[4]
            model.add_variable(name, lo, hi, kind)
        elif tag == "con":
            relation, rhs, cname = parts[1], float(parts[2]), parts[3]
            cons.append((relation, rhs, "" if cname == "-" else cname, parse_terms(parts[4:])))
        elif tag == "obj":
            pending_obj = (float(parts[1]), parse_terms(parts[2:]))
        else:
            raise MalformedModel(f"unknown record {tag!r}")
    for relation, rhs, cname, named in cons:
        model.add_constraint(
            {model.variable(n).index: c for n, c in named}, relation, rhs, cname
        )
    if pending_obj is not None:
        const, named = pending_obj
        model.set_objective(
            {model.variable(n).index: c for n, c in named}, const, sense
        )
    else:
        model.sense = sense
    return model


def write_lp_format(model: LpModel) -> str:
    """Export in the industry-standard LP text format for cross-checks.

    The objective constant is emitted as a comment; LP format has no slot
    for it.
    """
    def term_text(terms: tuple[tuple[int, float], ...]) -> str:
        if not terms:
            return "0 " + model.variables[0].name if model.variables else "0"
        bits = []
        for i, coef in terms:
            sign = "-" if coef < 0 else "+"
            bits.append(f"{sign} {abs(coef)!r} {model.variables[i].name}")
        text = " ".join(bits)
        return text[2:] if text.startswith("+ ") else text

    out = [f"\\ objective constant: {model.objective_constant!r}"]
    out.append("Minimize" if model.sense == "min" else "Maximize")
    out.append(f" obj: {term_text(model.objective_terms)}")
    out.append("Subject To")
    for r, con in enumerate(model.constraints):
        cname = con.name or f"c{r}"
        out.append(f" {cname}: {term_text(con.terms)} {con.relation} {con.rhs!r}")
    out.append("Bounds")
    for v in model.variables:
        lo = "-inf" if v.lower == -math.inf else repr(v.lower)
        hi = "+inf" if v.upper == math.inf else repr(v.upper)
        out.append(f" {lo} <= {v.name} <= {hi}")
    binaries = [v.name for v in model.variables if v.kind == KIND_BINARY]
    if binaries:
        out.append("Binary")
        out.extend(f" {name}" for name in binaries)
    out.append("End")
    return "\n".join(out) + "\n"
