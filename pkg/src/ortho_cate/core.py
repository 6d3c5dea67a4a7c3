"""Domain types, CSV ingestion and fold assignment."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    InconsistentOutcomes,
    InvalidK,
    InvalidSpec,
    LengthMismatch,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
)

if TYPE_CHECKING:
    from .dgp import DgpParams


@dataclass(frozen=True)
class Dataset:
    """Observed triples ``(y, a, x)`` plus the conditioning subset ``V`` of ``x``.

    Parameters
    ----------
    y : ndarray of shape (n,)
        Outcomes.
    a : ndarray of shape (n,)
        Binary treatment indicators (stored as ``int8``).
    x : ndarray of shape (n, d_x)
        Confounders.
    v_columns : tuple of int, optional
        Column indices of ``x`` forming the conditioning set ``V``; all
        columns when omitted.
    feature_names : tuple of str, optional
        Names of the columns of ``x``; defaults to ``x1..xd``.
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    v_columns: tuple | None = None
    feature_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        a_raw = np.asarray(self.a)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if n < 1:
            raise LengthMismatch("dataset must contain at least one observation")
        if a_raw.reshape(-1).shape[0] != n or x.shape[0] != n:
            raise LengthMismatch(
                f"inconsistent lengths: y={n}, a={a_raw.size}, x rows={x.shape[0]}"
            )
        a_float = a_raw.reshape(-1).astype(float)
        bad = np.flatnonzero((a_float != 0.0) & (a_float != 1.0))
        if bad.size:
            raise NonBinaryTreatment(
                f"treatment must be 0/1; row {int(bad[0])} has a={a_raw.reshape(-1)[bad[0]]!r}"
            )
        for name, arr in (("y", y), ("x", x)):
            if not np.all(np.isfinite(arr)):
                idx = np.argwhere(~np.isfinite(arr))[0]
                raise NonFiniteValue(f"non-finite value in {name} at index {tuple(int(i) for i in idx)}")
        d = x.shape[1]
        v_columns = tuple(range(d)) if not self.v_columns else tuple(int(c) for c in self.v_columns)
        if len(set(v_columns)) != len(v_columns):
            raise InvalidSpec(f"v_columns must be distinct, got {v_columns}")
        for c in v_columns:
            if not 0 <= c < d:
                raise MissingColumn(f"v column index {c} out of range for {d} features")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise LengthMismatch(f"{len(names)} feature names for {d} columns")
        y.setflags(write=False)
        a = a_float.astype(np.int8)
        a.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v_columns", v_columns)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_v(self) -> int:
        return len(self.v_columns)

    @property
    def v(self) -> np.ndarray:
        """The conditioning features ``x[:, v_columns]``."""
        return self.x[:, list(self.v_columns)]

    @property
    def v_is_x(self) -> bool:
        return self.v_columns == tuple(range(self.d_x))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.a[rows], self.x[rows], self.v_columns, self.feature_names)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of ``n`` observations into ``K`` folds."""

    fold_of: np.ndarray
    K: int
    seed: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        fold_of.setflags(write=False)
        object.__setattr__(self, "fold_of", fold_of)

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def indices(self, k: int) -> np.ndarray:
        """Row indices of fold ``k`` ("part B")."""
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> np.ndarray:
        """Row indices outside fold ``k`` ("part A")."""
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)


@dataclass(frozen=True)
class SyntheticDataset:
    """A :class:`Dataset` together with its ground truth.

    ``mu0``/``mu1`` are the true conditional outcome means ``E(Y | X, A=a)``,
    i.e. the oracle values of the outcome nuisances.
    """

    data: Dataset
    pi0: np.ndarray
    tau: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    setup_id: int
    params: "DgpParams"
    mu0: np.ndarray = field(default=None)
    mu1: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.data.n
        for name in ("pi0", "tau", "y0", "y1", "mu0", "mu1"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float).reshape(-1)
            if arr.shape[0] != n:
                raise LengthMismatch(f"{name} has length {arr.shape[0]}, expected {n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all((self.pi0 > 0) & (self.pi0 < 1)):
            raise NonFiniteValue("true propensities must lie strictly inside (0, 1)")
        a = self.data.a
        if not np.array_equal(self.data.y, np.where(a == 1, self.y1, self.y0)):
            raise InconsistentOutcomes("consistency violated: y != a*y1 + (1-a)*y0")

    def subset(self, rows) -> "SyntheticDataset":
        rows = np.asarray(rows)
        pick = lambda arr: None if arr is None else arr[rows]  # noqa: E731
        return SyntheticDataset(
            self.data.subset(rows), self.pi0[rows], self.tau[rows], self.y0[rows],
            self.y1[rows], self.setup_id, self.params, pick(self.mu0), pick(self.mu1),
        )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonFiniteValue(f"row {row}, column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def dataset_from_csv(path, v_names: Sequence[str] | None = None) -> Dataset:
    """Read a dataset from a CSV file with header ``y,a,<features...>``.

    Parameters
    ----------
    path : path-like
        CSV file (comma-delimited, UTF-8).
    v_names : sequence of str, optional
        Feature columns forming ``V``. ``None`` means all features.

    Raises
    ------
    MissingColumn, NonBinaryTreatment, NonFiniteValue
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, no header row") from None
        for required in ("y", "a"):
            if required not in header:
                raise MissingColumn(f"{path}: required column {required!r} not in header {header}")
        features = [h for h in header if h not in ("y", "a")]
        if not features:
            raise MissingColumn(f"{path}: no feature columns besides y and a")
        iy, ia = header.index("y"), header.index("a")
        ix = [header.index(f) for f in features]
        ys, as_, xs = [], [], []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise MissingColumn(f"row {lineno}: expected {len(header)} fields, got {len(rec)}")
            ys.append(_parse_float(rec[iy], lineno, "y"))
            a_val = _parse_float(rec[ia], lineno, "a")
            if a_val not in (0.0, 1.0):
                raise NonBinaryTreatment(f"row {lineno}, column 'a': value {rec[ia]!r} is not 0/1")
            as_.append(a_val)
            xs.append([_parse_float(rec[j], lineno, header[j]) for j in ix])
    if not ys:
        raise MissingColumn(f"{path}: no data rows")
    if v_names is None:
        v_columns = tuple(range(len(features)))
    else:
        v_columns = []
        for name in v_names:
            if name not in features:
                raise MissingColumn(f"V column {name!r} not among features {features}")
            v_columns.append(features.index(name))
    return Dataset(np.array(ys), np.array(as_), np.array(xs), tuple(v_columns), tuple(features))


def dataset_to_csv(data: Dataset, path) -> None:
    """Write ``data`` as ``y,a,<features>`` with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "a", *data.feature_names])
        for i in range(data.n):
            w.writerow([f"{data.y[i]:.17g}", int(data.a[i]), *(f"{v:.17g}" for v in data.x[i])])


def synthetic_to_csv(sd: SyntheticDataset, path) -> None:
    """Write a synthetic dataset with columns ``y,a,x1..xd,pi0,tau,y0,y1``."""
    data = sd.data
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "a", *data.feature_names, "pi0", "tau", "y0", "y1"])
        for i in range(data.n):
            w.writerow([
                f"{data.y[i]:.17g}", int(data.a[i]), *(f"{v:.17g}" for v in data.x[i]),
                f"{sd.pi0[i]:.17g}", f"{sd.tau[i]:.17g}", f"{sd.y0[i]:.17g}", f"{sd.y1[i]:.17g}",
            ])


def folds_to_csv(folds: FoldAssignment, path) -> None:
    """Dump a fold assignment as a single ``fold`` column, one row per observation."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fold\n")
        fh.writelines(f"{int(k)}\n" for k in folds.fold_of)


# ---------------------------------------------------------------------------
# Fold assignment
# ---------------------------------------------------------------------------

def _check_k(n: int, K: int) -> None:
    if K < 2 or K > n:
        raise InvalidK(f"need 2 <= K <= n, got K={K}, n={n}")


def kfold_assign(n: int, K: int, seed: int) -> FoldAssignment:
    """Shuffle ``0..n-1`` and deal the shuffled indices round-robin into ``K`` folds.

    The first ``n % K`` folds receive one extra element. Output depends only
    on ``(n, K, seed)``.
    """
    _check_k(n, K)
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    return FoldAssignment(fold_of, K, seed)


def stratified_kfold_assign(a, K: int, seed: int) -> FoldAssignment:
    """Like :func:`kfold_assign`, but each arm of ``a`` is spread evenly over folds.

    Treated rows (shuffled) are dealt first, then untreated rows, continuing
    the same round-robin sequence, so overall fold sizes still differ by at
    most one and follow the earliest-folds-absorb-extras rule.
    """
    a = np.asarray(a).reshape(-1)
    n = a.shape[0]
    _check_k(n, K)
    rng = np.random.default_rng(seed)
    treated = np.flatnonzero(a == 1)
    control = np.flatnonzero(a != 1)
    order = np.concatenate([rng.permutation(treated), rng.permutation(control)])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    return FoldAssignment(fold_of, K, seed)


# ---------------------------------------------------------------------------
# Config-string helper shared by the weight and learner parsers
# ---------------------------------------------------------------------------

_BRACED = re.compile(r"^\s*([A-Za-z][\w-]*)\s*(?:\{(.*)\})?\s*$")


def parse_braced(text: str) -> tuple[str, list[tuple[str | None, str]]]:
    """Split ``name{k1=v1,k2=v2}`` into ``("name", [("k1", "v1"), ("k2", "v2")])``.

    Positional values (``name{0.1,50}``) come back with key ``None``.
    """
    m = _BRACED.match(text)
    if not m:
        raise InvalidSpec(f"cannot parse {text!r}")
    name, body = m.group(1).lower(), m.group(2)
    items: list[tuple[str | None, str]] = []
    if body is not None and body.strip():
        for part in body.split(","):
            part = part.strip()
            if not part:
                raise InvalidSpec(f"empty argument in {text!r}")
            if "=" in part:
                k, v = part.split("=", 1)
                items.append((k.strip().lower(), v.strip()))
            else:
                items.append((None, part))
    return name, items


def split_top_level(text: str) -> list[str]:
    """Split a comma-separated list, ignoring commas inside braces."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur).strip())
    return parts
