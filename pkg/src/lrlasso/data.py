"""
Compositional datasets and the log-space designs derived from them.

Feature indices are 0-based throughout the package; a ratio ``(j, k)``
with ``j < k`` stands for the feature ``log(x_j / x_k)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import DegenerateColumnError, DomainError, ParseError

FAMILIES = ("gaussian", "binomial")
ONE_NAME = "_one"


@dataclass(frozen=True)
class Dataset:
    """
    Positive feature matrix with a response.

    Parameters
    ----------
    X : ndarray, shape (n, p)
        Strictly positive raw intensities.
    y : ndarray, shape (n,)
        Response; must be 0/1 when ``family == "binomial"``.
    feature_names : tuple of str
    group_ids : ndarray of labels, optional
        Used for blocked cross-validation.
    family : {"gaussian", "binomial"}
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    group_ids: Optional[np.ndarray] = None
    family: str = "gaussian"

    def __post_init__(self):
        # private copies: freezing must not touch the caller's arrays
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise DomainError("X must be a 2-d matrix")
        n, p = X.shape
        if n < 2 or p < 2:
            raise DomainError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DomainError(f"y has length {y.shape[0]}, X has {n} rows")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DomainError("X and y must be finite")
        bad = np.argwhere(X <= 0)
        if bad.size:
            i, j = bad[0]
            raise DomainError(f"non-positive feature value {X[i, j]!r} at row {i}, column {j}")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DomainError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DomainError("duplicate feature names")
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.family == "binomial" and not np.all((y == 0) | (y == 1)):
            raise DomainError("binomial response must be 0/1")
        groups = self.group_ids
        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape[0] != n:
                raise DomainError("group_ids length does not match n")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "group_ids", groups)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        g = None if self.group_ids is None else self.group_ids[rows]
        return replace(self, X=self.X[rows], y=self.y[rows], group_ids=g)


@dataclass(frozen=True)
class LogDesign:
    """
    Elementwise log of a positive matrix, optionally centered and scaled.

    ``W`` holds the transformed matrix; ``raw()`` undoes the transform.
    """

    W: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray
    centered: bool
    scaled: bool
    feature_names: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]

    def raw(self) -> np.ndarray:
        """Uncentered, unscaled log features."""
        W = self.W
        if self.scaled:
            W = W * self.column_sds
        if self.centered:
            W = W + self.column_means
        return W

    def transform(self, logX: np.ndarray) -> np.ndarray:
        """Apply this design's centering/scaling to new raw log rows."""
        Z = np.asarray(logX, dtype=float)
        if self.centered:
            Z = Z - self.column_means
        if self.scaled:
            Z = Z / self.column_sds
        return Z


def log_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if np.any(X <= 0):
        raise DomainError("log of non-positive value")
    return np.log(X)


def design_from_logs(L: np.ndarray, center: bool = True, scale: bool = False,
                     feature_names: Sequence[str] = ()) -> LogDesign:
    """Build a :class:`LogDesign` from an already log-transformed matrix."""
    L = np.asarray(L, dtype=float)
    means = L.mean(axis=0)
    sds = L.std(axis=0, ddof=1) if L.shape[0] > 1 else np.zeros(L.shape[1])
    W = L - means if center else L.copy()
    if scale:
        tiny = sds <= 1e-12 * (1.0 + np.abs(means))
        if np.any(tiny):
            j = int(np.flatnonzero(tiny)[0])
            raise DegenerateColumnError(f"column {j} is constant; cannot scale")
        W = W / sds
    W.setflags(write=False)
    return LogDesign(W=W, column_means=means, column_sds=sds, centered=center,
                     scaled=scale, feature_names=tuple(feature_names))


def log_design(d: Dataset, center: bool = True, scale: bool = False) -> LogDesign:
    """Elementwise log of ``d.X``; means/sds are kept for back-transformation."""
    return design_from_logs(np.log(d.X), center=center, scale=scale,
                            feature_names=d.feature_names)


def pair_index(q: int, support: Optional[Sequence[int]] = None) -> list:
    """Lexicographically sorted ``(j, k)`` pairs, ``j < k``."""
    idx = range(q) if support is None else sorted(set(int(s) for s in support))
    return list(combinations(idx, 2))


def expand_ratios(d, support: Optional[Sequence[int]] = None):
    """
    Enumerate log-ratio columns ``W[:, j] - W[:, k]`` for all ``j < k``.

    Parameters
    ----------
    d : LogDesign or ndarray
    support : iterable of int, optional
        Restrict the expansion to pairs inside this feature set.

    Returns
    -------
    Z : ndarray, shape (n, C(q, 2))
    pairs : list of (j, k)
    """
    W = d.W if isinstance(d, LogDesign) else np.asarray(d, dtype=float)
    p = W.shape[1]
    if support is not None:
        for s in support:
            if not 0 <= int(s) < p:
                raise IndexError(f"support index {s} out of range for p={p}")
    pairs = pair_index(p, support)
    if not pairs:
        return np.empty((W.shape[0], 0)), pairs
    j = np.fromiter((a for a, _ in pairs), dtype=int, count=len(pairs))
    k = np.fromiter((b for _, b in pairs), dtype=int, count=len(pairs))
    return W[:, j] - W[:, k], pairs


def augment_ones(d: Dataset) -> Dataset:
    """Append a constant feature ``_one`` so ratios against it are plain logs."""
    if ONE_NAME in d.feature_names:
        raise DomainError(f"dataset already has a feature named {ONE_NAME!r}")
    X = np.hstack([d.X, np.ones((d.n, 1))])
    return replace(d, X=X, feature_names=d.feature_names + (ONE_NAME,))


def load_csv(path, response_column: str, group_column: Optional[str] = None,
             pseudocount: float = 0.0, family: str = "gaussian") -> Dataset:
    """
    Read a dataset from CSV with a header row.

    Every column other than the response and group columns is a feature.
    ``pseudocount`` is added to every feature cell before validation.
    """
    if pseudocount < 0:
        raise DomainError("pseudocount must be nonnegative")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if response_column not in header:
            raise ParseError(f"{path}: response column {response_column!r} not in header")
        if group_column is not None and group_column not in header:
            raise ParseError(f"{path}: group column {group_column!r} not in header")
        resp_at = header.index(response_column)
        grp_at = header.index(group_column) if group_column is not None else None
        feat_at = [i for i in range(len(header)) if i not in (resp_at, grp_at)]
        X, y, groups = [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {rowno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for i in feat_at + [resp_at]:
                cell = row[i].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {rowno}, column {header[i]!r}: "
                                     f"non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rowno}, column {header[i]!r}: non-finite value")
                vals.append(v)
            feats = vals[:-1]
            for i, v in zip(feat_at, feats):
                if v < 0:
                    raise DomainError(f"{path}: row {rowno}, column {header[i]!r}: negative value {v}")
                if v + pseudocount <= 0:
                    raise DomainError(f"{path}: row {rowno}, column {header[i]!r}: value {v} "
                                      f"is not positive after pseudocount {pseudocount}")
            X.append([v + pseudocount for v in feats])
            y.append(vals[-1])
            if grp_at is not None:
                groups.append(row[grp_at].strip())
    if not X:
        raise ParseError(f"{path}: no data rows")
    return Dataset(X=np.array(X), y=np.array(y),
                   feature_names=tuple(header[i] for i in feat_at),
                   group_ids=np.array(groups) if grp_at is not None else None,
                   family=family)


def write_csv(d: Dataset, path, response_column: str = "y",
              group_column: Optional[str] = None) -> None:
    """Write ``d`` so that :func:`load_csv` reads it back exactly."""
    header = list(d.feature_names) + [response_column]
    if group_column is not None:
        if d.group_ids is None:
            raise DomainError("dataset has no group ids to write")
        header.append(group_column)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(d.n):
            row = [repr(float(v)) for v in d.X[i]] + [repr(float(d.y[i]))]
            if group_column is not None:
                row.append(str(d.group_ids[i]))
            w.writerow(row)
