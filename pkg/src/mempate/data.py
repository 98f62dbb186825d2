"""Observed-data containers, CSV ingestion, design matrices and outcome scaling.

A :class:`Dataset` stores one row per participant in column arrays: outcome
``y``, treatment ``a``, optional compliance ``c``, a source label and a
covariate matrix ``X``.  Exactly one source is the primary source; the
remaining (supplemental) sources keep their declaration order, which fixes
their bit position in exchangeability patterns.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataError, DegenerateOutcomeError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})

TREATMENT = "A"
COMPLIANCE = "C"


class Row(NamedTuple):
    y: float
    a: int
    c: int | None
    source: str
    x: tuple


@dataclass(frozen=True)
class Schema:
    """Column bindings for :func:`load_dataset`.

    ``supplemental`` optionally fixes the order of supplemental sources;
    when omitted they are ordered by first appearance in the file.
    """

    outcome: str
    treatment: str
    source: str
    primary: str
    covariates: tuple[str, ...]
    compliance: str | None = None
    supplemental: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.supplemental is not None:
            object.__setattr__(self, "supplemental", tuple(self.supplemental))


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    a: np.ndarray
    source: np.ndarray
    X: np.ndarray
    sources: tuple[str, ...]
    covariate_names: tuple[str, ...]
    c: np.ndarray | None = None
    n_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        a = np.ascontiguousarray(self.a, dtype=np.int8)
        src = np.asarray(self.source, dtype=object)
        n = y.shape[0]
        X = np.ascontiguousarray(self.X, dtype=float).reshape(n, -1)
        names = tuple(self.covariate_names)
        sources = tuple(self.sources)
        if X.shape[1] != len(names):
            raise DataError(f"X has {X.shape[1]} columns but {len(names)} covariate names were given")
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        if names and (TREATMENT in names or COMPLIANCE in names):
            raise DataError(f"covariate names {TREATMENT!r} and {COMPLIANCE!r} are reserved")
        if a.shape != (n,) or src.shape != (n,):
            raise DataError("y, a and source must have equal length")
        if not sources or len(set(sources)) != len(sources):
            raise DataError("sources must be a non-empty list of distinct labels")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise DataError("dataset contains missing or non-finite values")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("treatment must be 0/1")
        c = None
        if self.c is not None:
            c = np.ascontiguousarray(self.c, dtype=np.int8)
            if c.shape != (n,) or not np.all((c == 0) | (c == 1)):
                raise DataError("compliance must be a 0/1 vector of length n")
            c.setflags(write=False)
        known = set(sources)
        unknown = sorted({s for s in src if s not in known})
        if unknown:
            raise DataError(f"rows carry undeclared source labels {unknown}")
        for s in sources:
            mask = src == s
            if not mask.any():
                raise DataError(f"declared source {s!r} has no rows")
            n_treated = int(a[mask].sum())
            if n_treated == 0 or n_treated == mask.sum():
                raise DataError(f"source {s!r} lacks both arms (needs >= 1 treated and >= 1 control row)")
        for arr in (y, a, X):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "covariate_names", names)

    @property
    def primary(self) -> str:
        return self.sources[0]

    @property
    def supplemental(self) -> tuple[str, ...]:
        return self.sources[1:]

    @property
    def H(self) -> int:
        return len(self.sources) - 1

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def has_compliance(self) -> bool:
        return self.c is not None

    def source_index(self, labels: str | Iterable[str]) -> np.ndarray:
        """Row indices (in file order) belonging to ``labels``."""
        if isinstance(labels, str):
            labels = (labels,)
        labels = tuple(labels)
        for s in labels:
            if s not in self.sources:
                raise DataError(f"unknown source {s!r}")
        return np.flatnonzero(np.isin(self.source, labels))

    def n_by_source(self) -> dict[str, int]:
        return {s: int(np.sum(self.source == s)) for s in self.sources}

    def row(self, i: int) -> Row:
        c = None if self.c is None else int(self.c[i])
        return Row(float(self.y[i]), int(self.a[i]), c, str(self.source[i]), tuple(self.X[i].tolist()))

    @property
    def rows(self) -> list[Row]:
        return [self.row(i) for i in range(self.n)]

    def replace_outcome(self, y: np.ndarray) -> "Dataset":
        return Dataset(y=y, a=self.a, source=self.source, X=self.X, sources=self.sources,
                       covariate_names=self.covariate_names, c=self.c)

    def equals(self, other: "Dataset") -> bool:
        if not isinstance(other, Dataset):
            return False
        if (self.sources, self.covariate_names) != (other.sources, other.covariate_names):
            return False
        if (self.c is None) != (other.c is None):
            return False
        same = (np.array_equal(self.y, other.y) and np.array_equal(self.a, other.a)
                and np.array_equal(self.X, other.X) and np.array_equal(self.source, other.source))
        return same and (self.c is None or np.array_equal(self.c, other.c))


def from_rows(rows: Sequence[Row], sources: Sequence[str], covariate_names: Sequence[str]) -> Dataset:
    has_c = bool(rows) and rows[0].c is not None
    return Dataset(
        y=np.array([r.y for r in rows], dtype=float),
        a=np.array([r.a for r in rows]),
        c=np.array([r.c for r in rows]) if has_c else None,
        source=np.array([r.source for r in rows], dtype=object),
        X=np.array([r.x for r in rows], dtype=float).reshape(len(rows), len(covariate_names)),
        sources=tuple(sources),
        covariate_names=tuple(covariate_names),
    )


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_real(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(token)
    return value


def _parse_binary(token: str) -> int:
    value = float(token)
    if value not in (0.0, 1.0):
        raise DataError(f"value {token!r} is not 0/1")
    return int(value)


def load_dataset(path, schema: Schema, *, delimiter: str = ",", strict: bool = True) -> Dataset:
    """Read a CSV file into a validated :class:`Dataset`.

    In strict mode (default) any missing or unparseable field raises a
    :class:`DataError` listing the offending rows; with ``strict=False`` such
    rows are dropped and counted in ``Dataset.n_dropped``.  Non-binary
    treatment or compliance values are always an error.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file {str(path)!r} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        required = [schema.outcome, schema.treatment, schema.source, *schema.covariates]
        if schema.compliance is not None:
            required.append(schema.compliance)
        missing_cols = [c for c in required if c not in header]
        if missing_cols:
            raise DataError(f"{path}: missing column(s) {', '.join(repr(c) for c in missing_cols)}")
        col = {name: header.index(name) for name in required}

        ys, as_, cs, srcs, xs = [], [], [], [], []
        problems = []
        for rowno, fields in enumerate(reader, start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                problems.append(f"row {rowno}: expected {len(header)} fields, found {len(fields)}")
                continue

            def get(name):
                return fields[col[name]].strip()

            bad = [name for name in required if get(name).lower() in MISSING_TOKENS]
            if bad:
                problems.append(f"row {rowno}: missing value in column(s) {', '.join(repr(b) for b in bad)}")
                continue
            try:
                a = _parse_binary(get(schema.treatment))
            except DataError as e:
                raise DataError(f"{path}: row {rowno}, column {schema.treatment!r}: {e}") from None
            except ValueError:
                problems.append(f"row {rowno}: column {schema.treatment!r} is not numeric")
                continue
            c = None
            if schema.compliance is not None:
                try:
                    c = _parse_binary(get(schema.compliance))
                except DataError as e:
                    raise DataError(f"{path}: row {rowno}, column {schema.compliance!r}: {e}") from None
                except ValueError:
                    problems.append(f"row {rowno}: column {schema.compliance!r} is not numeric")
                    continue
            try:
                y = _parse_real(get(schema.outcome))
                x = [_parse_real(get(name)) for name in schema.covariates]
            except ValueError:
                problems.append(f"row {rowno}: unparseable numeric field")
                continue
            ys.append(y)
            as_.append(a)
            cs.append(c)
            srcs.append(get(schema.source))
            xs.append(x)

    if problems and strict:
        shown = "; ".join(problems[:10])
        more = f" (and {len(problems) - 10} more)" if len(problems) > 10 else ""
        raise DataError(f"{path}: {len(problems)} invalid row(s): {shown}{more}")
    if problems:
        log.warning("%s: dropped %d row(s) with missing or unparseable values", path, len(problems))

    present = list(dict.fromkeys(srcs))
    if schema.primary not in present:
        raise DataError(f"{path}: primary label {schema.primary!r} absent from column {schema.source!r}")
    if schema.supplemental is not None:
        extra = [s for s in present if s != schema.primary and s not in schema.supplemental]
        if extra:
            raise DataError(f"{path}: source labels {extra} not declared as supplemental")
        supplemental = [s for s in schema.supplemental if s != schema.primary]
    else:
        supplemental = [s for s in present if s != schema.primary]

    try:
        return Dataset(
            y=np.array(ys, dtype=float),
            a=np.array(as_, dtype=np.int8),
            c=np.array(cs, dtype=np.int8) if schema.compliance is not None else None,
            source=np.array(srcs, dtype=object),
            X=np.array(xs, dtype=float).reshape(len(ys), len(schema.covariates)),
            sources=(schema.primary, *supplemental),
            covariate_names=schema.covariates,
            n_dropped=len(problems),
        )
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_dataset(data: Dataset, path, schema: Schema, *, delimiter: str = ",") -> None:
    """Write ``data`` so that :func:`load_dataset` with ``schema`` reads it back identically."""
    header = [schema.source, schema.outcome, schema.treatment]
    if data.has_compliance:
        if schema.compliance is None:
            raise DataError("schema has no compliance column but the dataset carries compliance")
        header.append(schema.compliance)
    header.extend(schema.covariates)
    if tuple(schema.covariates) != data.covariate_names:
        raise DataError("schema covariates do not match the dataset")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(header)
        for i in range(data.n):
            out = [data.source[i], repr(float(data.y[i])), int(data.a[i])]
            if data.has_compliance:
                out.append(int(data.c[i]))
            out.extend(repr(float(v)) for v in data.X[i])
            w.writerow(out)


# ---------------------------------------------------------------------------
# Design matrices

ROLE_INTERCEPT = "intercept"
ROLE_TREATMENT = "treatment"
ROLE_COMPLIANCE = "compliance"
ROLE_COVARIATE = "covariate"
ROLE_TREATMENT_X = "interaction(treatment×covariate)"
ROLE_COMPLIANCE_X = "interaction(compliance×covariate)"


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    column_roles: tuple[str, ...]
    column_names: tuple[str, ...]
    treatment_col: int
    compliance_col: int | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[1] != len(self.column_roles):
            raise DataError("column_roles length must equal the number of columns")
        if self.column_roles.count(ROLE_TREATMENT) != 1:
            raise DataError("a design matrix has exactly one treatment column")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DesignBuilder:
    """Maps (treatment, compliance, covariates) rows to a fixed column layout.

    The layout is ``[intercept], A, [C], covariate terms..., interaction
    terms...`` in the order the terms were declared.  Interaction columns
    are recomputed from whatever treatment/compliance values are supplied,
    which is what counterfactual evaluation relies on.
    """

    covariate_names: tuple[str, ...]
    terms: tuple[tuple[str, str], ...]
    include_compliance: bool = False
    intercept: bool = True

    @property
    def column_names(self) -> tuple[str, ...]:
        names = ["(Intercept)"] if self.intercept else []
        names.append(TREATMENT)
        if self.include_compliance:
            names.append(COMPLIANCE)
        for kind, cov in self.terms:
            names.append(cov if kind == ROLE_COVARIATE else f"{TREATMENT if kind == ROLE_TREATMENT_X else COMPLIANCE}:{cov}")
        return tuple(names)

    @property
    def column_roles(self) -> tuple[str, ...]:
        roles = [ROLE_INTERCEPT] if self.intercept else []
        roles.append(ROLE_TREATMENT)
        if self.include_compliance:
            roles.append(ROLE_COMPLIANCE)
        roles.extend(kind for kind, _ in self.terms)
        return tuple(roles)

    @property
    def d(self) -> int:
        return len(self.column_roles)

    @property
    def treatment_col(self) -> int:
        return 1 if self.intercept else 0

    @property
    def compliance_col(self) -> int | None:
        return self.treatment_col + 1 if self.include_compliance else None

    def build(self, data: Dataset, index: np.ndarray | None = None, *,
              treatment: int | None = None, compliance: int | None = None) -> DesignMatrix:
        """Design rows for ``data`` (optionally a row subset).

        ``treatment`` / ``compliance`` override the observed indicators for
        every row, e.g. ``treatment=1, compliance=1`` for the treated,
        compliant counterfactual.
        """
        if tuple(data.covariate_names) != self.covariate_names:
            raise DataError("dataset covariates do not match the design layout")
        idx = slice(None) if index is None else np.asarray(index)
        X = data.X[idx]
        n = X.shape[0]
        a = data.a[idx].astype(float) if treatment is None else np.full(n, float(treatment))
        c = None
        if self.include_compliance:
            if compliance is not None:
                c = np.full(n, float(compliance))
            elif data.c is None:
                raise DataError("compliance terms require a compliance column")
            else:
                c = data.c[idx].astype(float)
        cols = [np.ones(n)] if self.intercept else []
        cols.append(a)
        if c is not None:
            cols.append(c)
        pos = {name: j for j, name in enumerate(self.covariate_names)}
        for kind, cov in self.terms:
            x = X[:, pos[cov]]
            if kind == ROLE_COVARIATE:
                cols.append(x)
            elif kind == ROLE_TREATMENT_X:
                cols.append(a * x)
            else:
                cols.append(c * x)
        values = np.column_stack(cols) if cols else np.empty((n, 0))
        return DesignMatrix(values, self.column_roles, self.column_names,
                            self.treatment_col, self.compliance_col)


@dataclass(frozen=True, eq=False)
class DesignSet:
    builder: DesignBuilder
    by_source: dict

    def pooled(self, data: Dataset, labels: Iterable[str]) -> DesignMatrix:
        return self.builder.build(data, data.source_index(labels))


def parse_formula(formula: Iterable[str], covariate_names: Sequence[str]) -> tuple[tuple[tuple[str, str], ...], bool]:
    """Resolve term strings into ``(role, covariate)`` pairs.

    Accepted terms: a covariate name, ``A:name`` / ``name:A`` (treatment
    interaction), ``C:name`` / ``name:C`` (compliance interaction) and the
    bare tokens ``A`` and ``C``.  Returns the terms and whether compliance
    was referenced.
    """
    known = set(covariate_names)
    terms = []
    uses_c = False
    for raw in formula:
        term = raw.strip().replace("*", ":").replace("×", ":")
        if not term:
            continue
        if term == TREATMENT:
            continue
        if term == COMPLIANCE:
            uses_c = True
            continue
        parts = [t.strip() for t in term.split(":")]
        if len(parts) == 1:
            entry = (ROLE_COVARIATE, parts[0])
        elif len(parts) == 2 and TREATMENT in parts:
            entry = (ROLE_TREATMENT_X, parts[1] if parts[0] == TREATMENT else parts[0])
        elif len(parts) == 2 and COMPLIANCE in parts:
            entry = (ROLE_COMPLIANCE_X, parts[1] if parts[0] == COMPLIANCE else parts[0])
            uses_c = True
        else:
            raise DataError(f"unsupported formula term {raw!r}")
        if entry[1] not in known:
            raise DataError(f"formula references unknown covariate {entry[1]!r}")
        if entry in terms:
            raise DataError(f"duplicate formula term {raw!r}")
        terms.append(entry)
    return tuple(terms), uses_c


def design_builder(covariate_names: Sequence[str], formula: Iterable[str] | None = None, *,
                   include_compliance: bool = False, intercept: bool = True) -> DesignBuilder:
    if formula is None:
        formula = list(covariate_names)
    terms, uses_c = parse_formula(formula, covariate_names)
    return DesignBuilder(tuple(covariate_names), terms, include_compliance or uses_c, intercept)


def build_design(data: Dataset, formula: Iterable[str] | None = None, include_compliance: bool = False,
                 *, intercept: bool = True) -> DesignSet:
    """Per-source design matrices with an identical column layout."""
    builder = design_builder(data.covariate_names, formula,
                             include_compliance=include_compliance, intercept=intercept)
    if builder.include_compliance and not data.has_compliance:
        raise DataError("compliance terms require a compliance column")
    by_source = {s: builder.build(data, data.source_index(s)) for s in data.sources}
    return DesignSet(builder, by_source)


def predictor_builder(data: Dataset, include_compliance: bool = False) -> DesignBuilder:
    """Intercept-free layout ``A, [C], X`` used by the tree ensemble."""
    return design_builder(data.covariate_names, include_compliance=include_compliance, intercept=False)


# ---------------------------------------------------------------------------
# Outcome standardization


@dataclass(frozen=True)
class OutcomeTransform:
    shift: float
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DataError("scale must be strictly positive")

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift


IDENTITY = OutcomeTransform(0.0, 1.0)


def standardize_outcome(y) -> tuple[np.ndarray, OutcomeTransform]:
    """Shift and scale ``y`` to sample mean 0 and range 1."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise DataError("standardize_outcome needs at least two values")
    lo, hi = y.min(), y.max()
    if not hi > lo:
        raise DegenerateOutcomeError("outcome has zero range; cannot standardize")
    t = OutcomeTransform(float(y.mean()), float(hi - lo))
    return t.forward(y), t
