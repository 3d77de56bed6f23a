"""Tile low-rank approximation of covariance matrices.

Diagonal tiles are kept dense.  Each off-diagonal tile in the lower triangle
is replaced by a truncated SVD U V' with the smallest rank whose Frobenius
error does not exceed eps (absolute by default, or eps * |tile|_F in relative
mode).  Likelihoods are evaluated on the recomposed dense matrix, so the
approximation affects results exactly as it would in a tile solver while
the factorization itself stays dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covmat import CovMatrix, DEFAULT_NB, LocationSet, NotPositiveDefiniteError, assemble
from .likelihood import Bounds, FitResult, fit, loglik

DEFAULT_EPS = 1e-7


class NumericallySingularError(NotPositiveDefiniteError):
    """The recomposed approximation is not positive definite."""


@dataclass(frozen=True)
class TileInfo:
    row: int
    col: int
    rows: int
    cols: int
    rank: int
    error: float
    norm: float


@dataclass
class TlrMatrix:
    n: int
    nb: int
    eps: float
    relative: bool
    diag: list
    factors: dict
    tiles: list

    @property
    def ntiles(self) -> int:
        return len(self.diag)

    def ranks(self) -> np.ndarray:
        return np.array([t.rank for t in self.tiles], dtype=int)

    def stored_scalars(self) -> int:
        dense = sum(d.size for d in self.diag)
        return dense + sum(t.rank * (t.rows + t.cols) for t in self.tiles)

    def dense_scalars(self) -> int:
        """Same symmetric storage without compression: diagonal and lower tiles."""
        return sum(d.size for d in self.diag) + sum(t.rows * t.cols for t in self.tiles)

    def decompress(self) -> np.ndarray:
        out = np.empty((self.n, self.n))
        nb = self.nb
        for i, d in enumerate(self.diag):
            s = slice(i * nb, i * nb + d.shape[0])
            out[s, s] = d
        for t in self.tiles:
            rs = slice(t.row * nb, t.row * nb + t.rows)
            cs = slice(t.col * nb, t.col * nb + t.cols)
            U, V = self.factors[(t.row, t.col)]
            block = U @ V.T if t.rank else np.zeros((t.rows, t.cols))
            out[rs, cs] = block
            out[cs, rs] = block.T
        return out


def _truncate(block: np.ndarray, eps: float, relative: bool):
    U, s, Vt = np.linalg.svd(block, full_matrices=False)
    norm = float(np.sqrt(np.sum(s * s)))
    tol = eps * norm if relative else eps
    # tail[k] = Frobenius error when keeping the first k singular triplets
    tail = np.sqrt(np.append(np.cumsum((s * s)[::-1])[::-1], 0.0))
    k = int(np.argmax(tail <= tol))
    return U[:, :k] * s[:k], Vt[:k].T, k, float(tail[k]), norm


def compress(cov, nb: int = DEFAULT_NB, eps: float = DEFAULT_EPS,
             relative: bool = False) -> TlrMatrix:
    """Tile low-rank compression of a symmetric matrix (ragged last tile allowed)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = cov.data if isinstance(cov, CovMatrix) else np.asarray(cov, dtype=float)
    n = a.shape[0]
    nt = (n + nb - 1) // nb
    edges = [(i * nb, min(n, (i + 1) * nb)) for i in range(nt)]
    diag = [a[lo:hi, lo:hi].copy() for lo, hi in edges]
    factors = {}
    tiles = []
    for i in range(nt):
        for j in range(i):
            (r0, r1), (c0, c1) = edges[i], edges[j]
            U, V, k, err, norm = _truncate(a[r0:r1, c0:c1], eps, relative)
            factors[(i, j)] = (U, V)
            tiles.append(TileInfo(i, j, r1 - r0, c1 - c0, k, err, norm))
    return TlrMatrix(n, nb, eps, relative, diag, factors, tiles)


def tlr_loglik(tlr: TlrMatrix, z) -> float:
    """Log-likelihood on the recomposed approximation."""
    try:
        return loglik(tlr.decompress(), z)
    except NotPositiveDefiniteError as exc:
        raise NumericallySingularError(
            exc.minor, f"tile low-rank approximation with eps={tlr.eps:g} is numerically singular"
        ) from None


def tlr_builder(nb: int = DEFAULT_NB, eps: float = DEFAULT_EPS, relative: bool = False):
    def build(locs: LocationSet, params):
        return compress(assemble(locs, params), nb, eps, relative).decompress()
    return build


def tlr_fit(locs: LocationSet, z, variant, bounds: Bounds | None = None, eps: float = DEFAULT_EPS,
            nb: int = DEFAULT_NB, relative: bool = False, **kw) -> FitResult:
    """Maximum likelihood with the likelihood evaluated under compression.

    Same optimizer and stopping rule as :func:`maternlab.likelihood.fit`;
    candidate points whose approximation is not positive definite are
    rejected and counted in ``pd_failures``.
    """
    return fit(locs, z, variant, bounds, cov_builder=tlr_builder(nb, eps, relative), **kw)


def report_rows(tlr: TlrMatrix):
    """Rows for the compression report: one per compressed tile."""
    for t in tlr.tiles:
        yield {"tile_row": t.row, "tile_col": t.col, "rows": t.rows, "cols": t.cols,
               "rank": t.rank, "error": t.error, "tile_norm": t.norm,
               "stored": t.rank * (t.rows + t.cols)}
