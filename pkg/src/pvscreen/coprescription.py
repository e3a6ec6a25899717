"""Drug-level correlation matrices built from co-prescription counts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METHODS = ("conditional", "pearson", "tetrachoric", "identity")


class UndefinedSimilarityError(ValueError):
    """A pairwise similarity is undefined because a marginal count is degenerate."""


@dataclass(frozen=True)
class CoprescriptionTable:
    """Symmetric co-use counts.

    ``pair_counts[i, i]`` is the number of patients on drug ``i`` and
    ``pair_counts[i, j]`` the number on both ``i`` and ``j``.
    """

    n_total: int
    pair_counts: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.pair_counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("pair_counts must be a square matrix")
        if not np.array_equal(c, c.T):
            raise ValueError("pair_counts must be symmetric")
        if np.any(c < 0):
            raise ValueError("pair_counts must be nonnegative")
        diag = np.diag(c)
        if np.any(diag > self.n_total):
            raise ValueError("a per-drug count exceeds n_total")
        if np.any(c > np.minimum.outer(diag, diag)):
            raise ValueError("a pair count exceeds one of its marginal counts")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "pair_counts", c)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"drug{i}" for i in range(len(c))))

    @property
    def n_drugs(self) -> int:
        return self.pair_counts.shape[0]

    def cells(self, i: int, j: int) -> tuple[int, int, int, int]:
        """2x2 cells (both, i only, j only, neither) for drugs ``i`` and ``j``."""
        c = self.pair_counts
        nij, ni, nj = int(c[i, j]), int(c[i, i]), int(c[j, j])
        return nij, ni - nij, nj - nij, int(self.n_total) - ni - nj + nij


@dataclass(frozen=True)
class DrugCovariance:
    matrix: np.ndarray
    method: str
    repaired: bool = False
    min_eig_raw: float = float("nan")
    min_eig: float = float("nan")
    labels: tuple[str, ...] = ()

    @property
    def n_drugs(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n: int, labels=()) -> DrugCovariance:
        return cls(np.eye(n), "identity", False, 1.0, 1.0, tuple(labels))


def conditional_similarity(n_ab, n_a, n_b) -> float:
    """Average of P(B|A) and P(A|B)."""
    if n_a <= 0 or n_b <= 0:
        raise UndefinedSimilarityError("conditional similarity needs positive marginal counts")
    if n_ab > min(n_a, n_b):
        raise ValueError("n_ab exceeds a marginal count")
    return 0.5 * (n_ab / n_a + n_ab / n_b)


def pearson_binary(n, n_a, n_b, n_ab) -> float:
    """Phi coefficient of the two prescription indicators."""
    if not (0 < n_a < n and 0 < n_b < n):
        raise UndefinedSimilarityError("Pearson correlation needs 0 < n_a, n_b < n")
    pa, pb, pab = n_a / n, n_b / n, n_ab / n
    return (pab - pa * pb) / math.sqrt(pa * (1 - pa) * pb * (1 - pb))


def tetrachoric_approx(a, b, c, d) -> float:
    """Cosine approximation ``cos(pi / (1 + sqrt(ad/bc)))`` to the tetrachoric correlation.

    Zero cells follow the limits of the formula: ``bc = 0 < ad`` gives 1,
    ``ad = 0 < bc`` gives -1 and ``ad = bc = 0`` gives 0.
    """
    if min(a, b, c, d) < 0:
        raise ValueError("cell counts must be nonnegative")
    ad, bc = float(a) * float(d), float(b) * float(c)
    if bc == 0.0:
        return 1.0 if ad > 0 else 0.0
    if ad == 0.0:
        return -1.0
    return math.cos(math.pi / (1.0 + math.sqrt(ad / bc)))


def _pairwise(table: CoprescriptionTable, method: str) -> np.ndarray:
    c = table.pair_counts.astype(float)
    n = float(table.n_total)
    na = np.diag(c)[:, None]
    nb = np.diag(c)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        if method == "conditional":
            out = 0.5 * (c / na + c / nb)
            undefined = (na <= 0) | (nb <= 0)
        elif method == "pearson":
            pa, pb = na / n, nb / n
            out = (c / n - pa * pb) / np.sqrt(pa * (1 - pa) * pb * (1 - pb))
            undefined = (na <= 0) | (na >= n) | (nb <= 0) | (nb >= n)
        elif method == "tetrachoric":
            ad = c * (n - na - nb + c)
            bc = (na - c) * (nb - c)
            out = np.cos(np.pi / (1.0 + np.sqrt(ad / bc)))
            out = np.where(bc == 0, np.where(ad > 0, 1.0, 0.0), out)
            out = np.where((ad == 0) & (bc > 0), -1.0, out)
            undefined = np.zeros_like(c, dtype=bool)
        else:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    out = np.where(undefined, 0.0, out)
    np.fill_diagonal(out, 1.0)
    return out


def nearest_pd(m, eps_pd: float = 1e-6, max_iter: int = 100) -> np.ndarray:
    """Nearest symmetric positive definite correlation matrix by eigenvalue clipping.

    Eigenvalues below ``eps_pd`` are raised to ``eps_pd`` and the result is
    rescaled to unit diagonal. Rescaling can push the smallest eigenvalue back
    under ``eps_pd``, so the clip/rescale pair is repeated until it is stable;
    a matrix that already satisfies the floor is returned unchanged, which
    makes the map idempotent.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("nearest_pd: matrix has non-finite entries")
    x = 0.5 * (m + m.T)
    floor = eps_pd * (1.0 - 1e-6)
    for _ in range(max_iter):
        w, v = np.linalg.eigh(x)
        if w[0] >= floor:
            break
        x = (v * np.maximum(w, eps_pd)) @ v.T
        s = 1.0 / np.sqrt(np.diag(x))
        x = x * s[:, None] * s[None, :]
        x = 0.5 * (x + x.T)
        np.fill_diagonal(x, 1.0)
    return x


def min_eigenvalue(m) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + np.asarray(m).T))[0])


def build_sigma_d(table: CoprescriptionTable | None, method: str, eps_pd: float = 1e-6,
                  n_drugs: int | None = None) -> DrugCovariance:
    """Drug correlation matrix from co-prescription counts.

    Pairs whose similarity is undefined (degenerate marginals) are set to 0.
    ``method="identity"`` ignores the counts; ``n_drugs`` may then replace
    the table.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if eps_pd <= 0:
        raise ValueError("eps_pd must be positive")
    if table is None:
        if method != "identity" or not n_drugs:
            raise ValueError("a co-prescription table is required for method " + method)
        return DrugCovariance.identity(n_drugs)
    if table.n_drugs == 0:
        raise ValueError("empty co-prescription table")
    if method == "identity":
        return DrugCovariance.identity(table.n_drugs, table.labels)
    raw = _pairwise(table, method)
    raw_min = min_eigenvalue(raw)
    repaired = raw_min < eps_pd
    mat = nearest_pd(raw, eps_pd) if repaired else raw
    return DrugCovariance(mat, method, repaired, raw_min, min_eigenvalue(mat), table.labels)


def read_coprescription(path, n_total) -> CoprescriptionTable:
    """Square count matrix with a header row and a leading label column."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    labels = tuple(h.strip() for h in rows[0][1:])
    body = rows[1:]
    if len(body) != len(labels):
        raise ValueError(f"{path}: matrix is not square")
    counts = np.array([[int(float(x)) for x in r[1:]] for r in body], dtype=np.int64)
    return CoprescriptionTable(int(n_total), counts, labels)


def read_n_total(path) -> int:
    return int(Path(path).read_text().strip().split()[0])


def matrix_csv_text(matrix, labels) -> str:
    """Dense CSV with a header row/label column, 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(labels))
    for lab, row in zip(labels, np.asarray(matrix)):
        w.writerow([lab] + [format(float(x), ".17g") for x in row])
    return buf.getvalue()


def write_matrix_csv(matrix, labels, path) -> None:
    Path(path).write_text(matrix_csv_text(matrix, labels), encoding="utf-8")


def read_matrix_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    labels = tuple(h.strip() for h in rows[0][1:])
    mat = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    if mat.shape != (len(labels), len(labels)):
        raise ValueError(f"{path}: matrix is not square")
    return mat, labels
