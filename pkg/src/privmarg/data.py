"""Binary databases, marginal and disjunction queries, and file ingestion."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DataFormatError(ValueError):
    """Malformed database or query file."""


def check_binary_array(X, name: str = "X") -> np.ndarray:
    """Validate a 2-D 0/1 matrix and return it as uint8."""
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=1, ensure_min_features=1)
    if not np.all((X == 0) | (X == 1)):
        raise ValueError(f"{name} must contain only 0/1 entries")
    return X.astype(np.uint8)


@dataclass(frozen=True)
class Database:
    bits: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        bits = check_binary_array(self.bits, "database")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        cols = tuple(self.columns) or tuple(f"a{i + 1}" for i in range(bits.shape[1]))
        if len(cols) != bits.shape[1]:
            raise ValueError(f"{len(cols)} column names for {bits.shape[1]} columns")
        if len(set(cols)) != len(cols):
            raise ValueError("column names must be distinct")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def d(self) -> int:
        return self.bits.shape[1]

    def column_index(self, ref) -> int:
        """Resolve a column name or 1-based index to a 0-based index."""
        if isinstance(ref, str):
            try:
                return self.columns.index(ref)
            except ValueError:
                raise DataFormatError(f"unknown column {ref!r}") from None
        if isinstance(ref, bool) or not isinstance(ref, int):
            raise DataFormatError(f"column reference {ref!r} is neither a name nor an index")
        if not 1 <= ref <= self.d:
            raise DataFormatError(f"column index {ref} outside 1..{self.d}")
        return ref - 1


@dataclass(frozen=True)
class MarginalQuery:
    """Fraction of rows with x_j = pattern_j for every j in attrs (0-based)."""

    attrs: tuple[int, ...]
    pattern: tuple[int, ...]

    def __post_init__(self):
        attrs = tuple(int(a) for a in self.attrs)
        pattern = tuple(int(t) for t in self.pattern)
        if len(set(attrs)) != len(attrs):
            raise ValueError("marginal attributes must be distinct")
        if len(pattern) != len(attrs):
            raise ValueError("pattern length must equal number of attributes")
        if any(t not in (0, 1) for t in pattern):
            raise ValueError("pattern entries must be 0/1")
        if any(a < 0 for a in attrs):
            raise ValueError("attribute indices must be non-negative")
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "pattern", pattern)

    @property
    def arity(self) -> int:
        return len(self.attrs)

    def validate(self, d: int, k: int | None = None) -> None:
        if any(a >= d for a in self.attrs):
            raise ValueError(f"attribute index outside 0..{d - 1}")
        if k is not None and self.arity > k:
            raise ValueError(f"marginal of arity {self.arity} exceeds k={k}")


@dataclass(frozen=True)
class DisjunctionIndex:
    """+1/-1 vector whose -1 entries select the attributes of a monotone OR."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int8)
        if y.ndim != 1 or not np.all((y == 1) | (y == -1)):
            raise ValueError("index must be a 1-D +1/-1 vector")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_attrs(cls, d: int, attrs: Iterable[int]) -> "DisjunctionIndex":
        y = np.ones(d, dtype=np.int8)
        attrs = list(attrs)
        if any(not 0 <= a < d for a in attrs):
            raise ValueError(f"attribute outside 0..{d - 1}")
        y[attrs] = -1
        return cls(y)

    @property
    def d(self) -> int:
        return len(self.y)

    @property
    def weight(self) -> int:
        return int((self.y == -1).sum())

    def selected(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.y == -1))

    def check_ball(self, k: int) -> None:
        if self.weight > k:
            raise ValueError(f"index selects {self.weight} attributes, more than k={k}")


@dataclass(frozen=True)
class Query:
    id: str
    kind: str
    attrs: tuple[int, ...]
    pattern: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("marginal", "disjunction"):
            raise ValueError(f"unknown query type {self.kind!r}")
        if self.kind == "marginal":
            MarginalQuery(self.attrs, self.pattern)

    @property
    def arity(self) -> int:
        return len(self.attrs)

    def as_marginal(self) -> MarginalQuery:
        return MarginalQuery(self.attrs, self.pattern)


@dataclass
class QuerySequence:
    queries: list[Query] = field(default_factory=list)

    def __post_init__(self):
        if not self.queries:
            raise ValueError("query sequence is empty")

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    @property
    def max_arity(self) -> int:
        return max(q.arity for q in self.queries)


def _index_vector(y, d: int) -> np.ndarray:
    if isinstance(y, DisjunctionIndex):
        y = y.y
    y = np.asarray(y)
    if y.shape != (d,):
        raise ValueError(f"index has shape {y.shape}, database has {d} columns")
    return y


def true_answer_disjunction(D: Database, y) -> float:
    """Fraction of rows with some x_i = 1 among the attributes selected by y."""
    sel = np.flatnonzero(_index_vector(y, D.d) == -1)
    if sel.size == 0:
        return 0.0
    return float(D.bits[:, sel].any(axis=1).mean())


def record_disjunction(x, y) -> float:
    """f_x(y): 1 if the record has a selected attribute set, else 0."""
    x = np.asarray(x)
    y = _index_vector(y, len(x))
    return float(np.any((x == 1) & (y == -1)))


def true_answer_marginal(D: Database, q: MarginalQuery) -> float:
    q.validate(D.d)
    if not q.attrs:
        return 1.0
    cols = D.bits[:, list(q.attrs)]
    return float(np.all(cols == np.asarray(q.pattern, dtype=np.uint8), axis=1).mean())


def extend_with_complements(D: Database) -> Database:
    """Append column d+i = 1 - column i."""
    bits = np.hstack([D.bits, 1 - D.bits])
    return Database(bits, D.columns + tuple(f"not_{c}" for c in D.columns))


def marginal_to_disjunction(q: MarginalQuery, d: int, k: int | None = None) -> DisjunctionIndex:
    """Index over the 2d extended columns with marginal(q) = 1 - disjunction(y).

    The conjunction of x_j = t_j fails exactly when some complementary literal
    holds: x_j = 1 (column j) when t_j = 0, or x_j = 0 (column d + j) when t_j = 1.
    """
    q.validate(d, k)
    positions = [j if t == 0 else d + j for j, t in zip(q.attrs, q.pattern)]
    return DisjunctionIndex.from_attrs(2 * d, positions)


def query_index(query: Query, d: int, k: int | None = None) -> tuple[DisjunctionIndex, bool]:
    """Extended-database index for a query and whether the answer is 1 - disjunction."""
    if query.kind == "marginal":
        return marginal_to_disjunction(query.as_marginal(), d, k), True
    if k is not None and query.arity > k:
        raise ValueError(f"disjunction of arity {query.arity} exceeds k={k}")
    return DisjunctionIndex.from_attrs(2 * d, query.attrs), False


def true_answer(D: Database, query: Query) -> float:
    if query.kind == "marginal":
        return true_answer_marginal(D, query.as_marginal())
    return true_answer_disjunction(D, DisjunctionIndex.from_attrs(D.d, query.attrs))


def count_marginals(d: int, k: int) -> int:
    return sum(math.comb(d, j) * 2 ** j for j in range(min(k, d) + 1))


def all_marginals(d: int, k: int) -> list[Query]:
    """Every marginal of arity <= k: by arity, then attributes, then pattern."""
    out = []
    for j in range(min(k, d) + 1):
        for attrs in itertools.combinations(range(d), j):
            for pattern in itertools.product((0, 1), repeat=j):
                name = "m:" + ",".join(f"{a + 1}={t}" for a, t in zip(attrs, pattern))
                out.append(Query(name, "marginal", attrs, pattern))
    return out


class ComplementExtender(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`extend_with_complements` for 0/1 matrices."""

    def fit(self, X, y=None):
        X = check_binary_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_binary_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return np.hstack([X, 1 - X])


def load_csv(path) -> Database:
    """Header line of column names, then one 0/1 row per line."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            cells = [cell.strip() for cell in row]
            bad = [c for c in cells if c not in ("0", "1")]
            if bad:
                raise DataFormatError(f"{path}:{lineno}: non-binary cell {bad[0]!r}")
            rows.append([int(c) for c in cells])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return Database(np.array(rows, dtype=np.uint8), tuple(header))


def parse_query(obj: dict, D: Database, lineno: int | None = None) -> Query:
    where = f"line {lineno}: " if lineno is not None else ""
    if not isinstance(obj, dict):
        raise DataFormatError(f"{where}query must be a JSON object")
    try:
        qid = str(obj["id"])
        refs = obj["attrs"]
    except KeyError as exc:
        raise DataFormatError(f"{where}missing field {exc.args[0]!r}") from None
    if not isinstance(refs, list):
        raise DataFormatError(f"{where}attrs must be a list")
    attrs = tuple(D.column_index(r) for r in refs)
    kind = obj.get("type", "marginal")
    if kind == "disjunction":
        return Query(qid, "disjunction", attrs)
    if kind != "marginal":
        raise DataFormatError(f"{where}unknown query type {kind!r}")
    pattern = obj.get("pattern")
    if pattern is None:
        pattern = [1] * len(attrs)
    try:
        return Query(qid, "marginal", attrs, tuple(pattern))
    except (ValueError, TypeError) as exc:
        raise DataFormatError(f"{where}{exc}") from None


def iter_queries_jsonl(lines: Iterable[str], D: Database):
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        yield parse_query(obj, D, lineno)


def load_queries_jsonl(path, D: Database) -> QuerySequence:
    with Path(path).open() as fh:
        return QuerySequence(list(iter_queries_jsonl(fh, D)))


def query_to_json(query: Query, columns: Sequence[str] | None = None) -> dict:
    refs = [columns[a] if columns else a + 1 for a in query.attrs]
    out = {"id": query.id, "attrs": refs}
    if query.kind == "marginal":
        out["pattern"] = list(query.pattern)
    else:
        out["type"] = "disjunction"
    return out
