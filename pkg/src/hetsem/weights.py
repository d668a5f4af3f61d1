"""Spatial weight matrices: construction, validation, and transforms.

A weight matrix W encodes the neighbour relation among n spatial units:
w_ij > 0 when unit j is a neighbour of unit i and w_ii = 0 always.  Row
standardization divides each row by its sum, which makes the spatial lag
Wx a neighbourhood average and bounds the spectrum of W in [-1, 1] so
that I - lam*W is invertible for every |lam| < 1.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

from .errors import ParseError

# Largest n for which the full spectrum is computed densely.  Above this
# limit determinant work should go through the sparse LU path instead.
DENSE_EIGEN_LIMIT = 2048

_ROW_SUM_TOL = 1e-12

__all__ = [
    "WeightMatrix",
    "build_rook_grid",
    "row_standardize",
    "load_weights",
    "eigenvalues",
    "DENSE_EIGEN_LIMIT",
]


class WeightMatrix:
    """An n x n spatial weight matrix with cached spectral information.

    Parameters
    ----------
    matrix : array_like or scipy sparse matrix, shape (n, n)
        Nonnegative weights with a zero diagonal.
    row_standardized : bool
        Declare that every row already sums to one.  Checked on entry.

    Notes
    -----
    Instances are treated as immutable; the eigenvalue cache is the only
    mutable state and is guarded by a lock so shared use from worker
    threads is safe.
    """

    def __init__(self, matrix, row_standardized: bool = False):
        m = sp.csr_matrix(matrix, dtype=float)
        m.eliminate_zeros()
        m.sum_duplicates()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {m.shape}")
        if m.shape[0] < 2:
            raise ValueError("weight matrix needs at least two units")
        if not np.all(np.isfinite(m.data)):
            raise ValueError("weight matrix contains non-finite entries")
        if m.data.size and m.data.min() < 0:
            bad = int(np.argmin(m.data))
            raise ValueError(f"negative weight {m.data[bad]!r} in weight matrix")
        diag = m.diagonal()
        if np.any(diag != 0):
            unit = int(np.nonzero(diag)[0][0])
            raise ValueError(f"self-neighbour (nonzero diagonal) at unit {unit}")
        if row_standardized:
            sums = np.asarray(m.sum(axis=1)).ravel()
            off = np.abs(sums - 1.0)
            if off.max() > _ROW_SUM_TOL:
                unit = int(np.argmax(off))
                raise ValueError(
                    f"row {unit} sums to {sums[unit]!r}, not 1; "
                    "matrix is not row-standardized"
                )
        self._matrix = m
        self.row_standardized = bool(row_standardized)
        self._sym_scale: np.ndarray | None = None
        self._eigenvalues: np.ndarray | None = None
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self._matrix.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._matrix

    @property
    def nnz(self) -> int:
        return self._matrix.nnz

    def toarray(self) -> np.ndarray:
        return self._matrix.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._matrix.sum(axis=1)).ravel()

    def lag(self, x: np.ndarray) -> np.ndarray:
        """Spatial lag W @ x."""
        return self._matrix @ x

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        d = self._matrix - self._matrix.T
        return d.nnz == 0 or np.abs(d.data).max() <= tol

    def eigenvalues(self, max_dense: int = DENSE_EIGEN_LIMIT) -> np.ndarray:
        """Full spectrum of W, computed once and cached.

        Raises ValueError when n exceeds ``max_dense``; large problems
        should use LU-based determinants rather than the spectrum.
        """
        with self._lock:
            if self._eigenvalues is None:
                if self.n > max_dense:
                    raise ValueError(
                        f"n={self.n} exceeds dense eigenvalue limit {max_dense}; "
                        "use the LU log-determinant path"
                    )
                self._eigenvalues = self._compute_eigenvalues()
            return self._eigenvalues

    def _compute_eigenvalues(self) -> np.ndarray:
        dense = self._matrix.toarray()
        if self._sym_scale is not None:
            # W = D^{-1} A with A symmetric shares its spectrum with the
            # symmetric matrix D^{-1/2} A D^{-1/2}, so a Hermitian solver
            # applies and the eigenvalues are exactly real.
            s = self._sym_scale
            sym = dense * (s[:, None] / s[None, :])
            return np.sort(np.linalg.eigvalsh(sym))
        if self.is_symmetric():
            return np.sort(np.linalg.eigvalsh(dense))
        vals = np.linalg.eigvals(dense)
        scale = max(1.0, np.abs(vals).max())
        if np.abs(vals.imag).max() > 1e-8 * scale:
            raise ValueError(
                "weight matrix has complex eigenvalues; the eigenvalue "
                "log-determinant device does not apply"
            )
        return np.sort(vals.real)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        tag = "row-standardized" if self.row_standardized else "raw"
        return f"WeightMatrix(n={self.n}, nnz={self.nnz}, {tag})"


def build_rook_grid(rows: int, cols: int) -> WeightMatrix:
    """Binary rook contiguity on a ``rows`` x ``cols`` lattice.

    Units are numbered row-major; unit r*cols + c neighbours the cells
    directly above, below, left, and right of (r, c).  The result is
    symmetric and not yet row-standardized.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    if rows * cols < 2:
        raise ValueError("grid needs at least two units")
    src = []
    dst = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                src.append(i)
                dst.append(i + 1)
            if r + 1 < rows:
                src.append(i)
                dst.append(i + cols)
    src = np.asarray(src)
    dst = np.asarray(dst)
    row = np.concatenate([src, dst])
    col = np.concatenate([dst, src])
    data = np.ones(row.size)
    n = rows * cols
    return WeightMatrix(sp.coo_matrix((data, (row, col)), shape=(n, n)))


def row_standardize(w: WeightMatrix) -> WeightMatrix:
    """Divide each row of W by its sum.

    Idempotent: an already standardized matrix is returned unchanged.
    Raises ValueError when some unit has no neighbours, naming the unit.
    """
    sums = w.row_sums()
    if np.abs(sums - 1.0).max() <= _ROW_SUM_TOL:
        if w.row_standardized:
            return w
        out = WeightMatrix(w.matrix, row_standardized=True)
        out._sym_scale = w._sym_scale
        return out
    if sums.min() <= 0:
        unit = int(np.argmin(sums))
        raise ValueError(f"unit {unit} has no neighbours; cannot row-standardize")
    inv = sp.diags(1.0 / sums)
    out = WeightMatrix(inv @ w.matrix, row_standardized=True)
    if w.is_symmetric():
        # Remember the scaling that links W to a symmetric matrix; the
        # eigenvalue routine exploits it.
        out._sym_scale = np.sqrt(sums)
    return out


def eigenvalues(w: WeightMatrix, max_dense: int = DENSE_EIGEN_LIMIT) -> np.ndarray:
    """Spectrum of ``w``; see :meth:`WeightMatrix.eigenvalues`."""
    return w.eigenvalues(max_dense=max_dense)


def load_weights(path, format: str = "edges") -> WeightMatrix:
    """Read a weight matrix from a CSV file.

    Two layouts are supported.  ``edges`` expects one ``i,j,w`` triple
    per line with 0-based unit indices; n is inferred from the largest
    index.  ``dense`` expects an n x n array of floats, one row per
    line.  Malformed input raises ParseError naming the offending line.
    The row_standardized flag is inferred from the row sums.
    """
    if format == "edges":
        w = _load_edges(path)
    elif format == "dense":
        w = _load_dense(path)
    else:
        raise ParseError(f"unknown weights format {format!r}; use 'edges' or 'dense'")
    sums = w.row_sums()
    if np.abs(sums - 1.0).max() <= _ROW_SUM_TOL:
        return WeightMatrix(w.matrix, row_standardized=True)
    return w


def _iter_csv_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            yield lineno, line.split(",")


def _load_edges(path) -> WeightMatrix:
    src, dst, val = [], [], []
    seen: set[tuple[int, int]] = set()
    for lineno, parts in _iter_csv_lines(path):
        if len(parts) != 3:
            raise ParseError(
                f"{path}:{lineno}: expected 'i,j,w', got {len(parts)} fields"
            )
        try:
            i = int(parts[0])
            j = int(parts[1])
            v = float(parts[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if i < 0 or j < 0:
            raise ParseError(f"{path}:{lineno}: negative unit index")
        if i == j:
            raise ParseError(f"{path}:{lineno}: self-neighbour at unit {i}")
        if v < 0:
            raise ParseError(f"{path}:{lineno}: negative weight {v!r}")
        if not np.isfinite(v):
            raise ParseError(f"{path}:{lineno}: non-finite weight {parts[2]!r}")
        if (i, j) in seen:
            raise ParseError(f"{path}:{lineno}: duplicate edge ({i}, {j})")
        seen.add((i, j))
        src.append(i)
        dst.append(j)
        val.append(v)
    if not src:
        raise ParseError(f"{path}: no edges found")
    n = max(max(src), max(dst)) + 1
    try:
        return WeightMatrix(sp.coo_matrix((val, (src, dst)), shape=(n, n)))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _load_dense(path) -> WeightMatrix:
    rows = []
    first_len = None
    for lineno, parts in _iter_csv_lines(path):
        if first_len is None:
            first_len = len(parts)
        elif len(parts) != first_len:
            raise ParseError(
                f"{path}:{lineno}: expected {first_len} columns, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: empty weights file")
    mat = np.asarray(rows)
    if mat.shape[0] != mat.shape[1]:
        raise ParseError(
            f"{path}: dense weights must be square, got {mat.shape[0]} rows "
            f"of {mat.shape[1]} columns"
        )
    try:
        return WeightMatrix(mat)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
