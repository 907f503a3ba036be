"""Degenerate-PSD linear algebra.

Spectral decompositions, PSD projection, spectral flooring, symmetric square
roots, pseudo-inverse Mahalanobis geometry, log-spectral distances and vech
packing. Everything here is dense and dimension-limited (~512); all values
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.linalg

from .errors import BadLength, DimMismatch, NotPsd

__all__ = [
    "SymMatrix",
    "FlooredPsd",
    "psd_project",
    "spectral_floor",
    "sym_sqrt",
    "mahalanobis",
    "mahalanobis_pinv",
    "log_spectral_dist",
    "vech",
    "unvech",
]

# Relative eigenvalue cutoff for Moore-Penrose pseudo-inverses.
PINV_CUTOFF = 1e-12


class SymMatrix:
    """Dense symmetric d x d matrix with a lazily cached eigendecomposition.

    The input is symmetrized on construction so ``entries[i, j] == entries[j, i]``
    holds exactly. Eigenvalues are sorted ascending; eigenvectors are the
    matching orthonormal columns.
    """

    __slots__ = ("entries", "dim", "_eig", "_eig_lock")

    def __init__(self, entries) -> None:
        a = np.asarray(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimMismatch(f"expected square matrix, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self.entries = a
        self.dim = a.shape[0]
        self._eig = None
        self._eig_lock = threading.Lock()

    @property
    def eig(self):
        """(eigenvalues ascending, orthonormal eigenvector columns)."""
        if self._eig is None:
            with self._eig_lock:
                if self._eig is None:
                    w, q = np.linalg.eigh(self.entries)
                    w.setflags(write=False)
                    q.setflags(write=False)
                    self._eig = (w, q)
        return self._eig

    @property
    def eigenvalues(self):
        return self.eig[0]

    @property
    def eigenvectors(self):
        return self.eig[1]

    def min_eig(self) -> float:
        return float(self.eigenvalues[0])

    def __repr__(self) -> str:
        return f"SymMatrix(dim={self.dim})"


class FlooredPsd:
    """Spectrally floored PSD matrix with cached inverse, sqrt and logdet.

    Negative eigenvalues of ``base`` are clamped to zero first, then every
    eigenvalue is raised to at least ``epsilon``, so the floored matrix
    satisfies ``A_eps >= eps * I`` and ``det A_eps >= eps**d``.
    """

    __slots__ = (
        "base",
        "epsilon",
        "floored_eigs",
        "matrix",
        "logdet",
        "inv",
        "sqrt",
        "inv_sqrt",
        "iso",
        "_eigvecs",
    )

    def __init__(self, base: SymMatrix, epsilon: float) -> None:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.base = base
        self.epsilon = float(epsilon)
        w, q = base.eig
        fw = np.maximum(np.maximum(w, 0.0), self.epsilon)
        fw.setflags(write=False)
        self.floored_eigs = fw
        self._eigvecs = q
        self.matrix = (q * fw) @ q.T
        self.logdet = float(np.sum(np.log(fw)))
        self.inv = (q / fw) @ q.T
        self.sqrt = (q * np.sqrt(fw)) @ q.T
        self.inv_sqrt = (q / np.sqrt(fw)) @ q.T
        for m in (self.matrix, self.inv, self.sqrt, self.inv_sqrt):
            m.setflags(write=False)
        # scalar shortcut for isotropic floors (hot path at large d)
        self.iso = float(fw[0]) if fw[-1] - fw[0] <= 1e-15 * fw[-1] else None

    @property
    def dim(self) -> int:
        return self.base.dim

    def quad(self, v) -> float:
        """Quadratic form v^T A_eps^{-1} v."""
        v = np.asarray(v, dtype=float)
        if self.iso is not None:
            return float(v @ v) / self.iso
        return float(v @ self.inv @ v)

    def __repr__(self) -> str:
        return f"FlooredPsd(dim={self.dim}, eps={self.epsilon:g})"


def psd_project(m: SymMatrix) -> SymMatrix:
    """Frobenius-nearest PSD matrix: clamp negative eigenvalues to zero."""
    w, q = m.eig
    if w[0] >= 0.0:
        return m
    wp = np.maximum(w, 0.0)
    return SymMatrix((q * wp) @ q.T)


def spectral_floor(m: SymMatrix, eps: float) -> FlooredPsd:
    """Floor eigenvalues at ``eps`` after clamping negatives to zero."""
    return FlooredPsd(m, eps)


def sym_sqrt(m: SymMatrix) -> SymMatrix:
    """Canonical symmetric PSD square root F with F @ F == m.

    Raises NotPsd when the spectrum dips below -1e-6 relative to the
    spectral norm; tiny negative eigenvalues are clamped to zero.
    """
    w, q = m.eig
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w[0] < -1e-6 * scale:
        raise NotPsd(f"min eigenvalue {w[0]:g} below tolerance")
    wp = np.maximum(w, 0.0)
    return SymMatrix((q * np.sqrt(wp)) @ q.T)


def mahalanobis(v, g: FlooredPsd) -> float:
    """sqrt(v^T g.inv v) in the floored metric."""
    v = np.asarray(v, dtype=float)
    if v.shape != (g.dim,):
        raise DimMismatch(f"vector shape {v.shape} vs dim {g.dim}")
    return float(np.sqrt(max(g.quad(v), 0.0)))


def mahalanobis_pinv(v, m: SymMatrix) -> float:
    """Mahalanobis norm in the Moore-Penrose pseudo-inverse of ``m``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (m.dim,):
        raise DimMismatch(f"vector shape {v.shape} vs dim {m.dim}")
    w, q = m.eig
    cut = PINV_CUTOFF * max(float(w.max(initial=0.0)), 0.0)
    inv_w = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    c = q.T @ v
    return float(np.sqrt(max(np.sum(inv_w * c * c), 0.0)))


def log_spectral_dist(a: FlooredPsd, b: FlooredPsd) -> float:
    """Operator norm of log(a^{-1/2} b a^{-1/2}).

    Equals the max |log lambda| over generalized eigenvalues of (b, a);
    symmetric in its arguments and zero iff a == b.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"dims {a.dim} vs {b.dim}")
    w = scipy.linalg.eigvalsh(b.matrix, a.matrix)
    w = np.maximum(w, 1e-300)
    return float(np.max(np.abs(np.log(w))))


def vech(m: SymMatrix):
    """Column-major lower-triangle packing of a symmetric matrix."""
    a = m.entries
    d = m.dim
    out = np.empty(d * (d + 1) // 2)
    k = 0
    for j in range(d):
        n = d - j
        out[k : k + n] = a[j:, j]
        k += n
    return out


def unvech(row) -> SymMatrix:
    """Inverse of :func:`vech`; raises BadLength on non-triangular lengths."""
    row = np.asarray(row, dtype=float)
    n = row.size
    d = int((np.sqrt(8 * n + 1) - 1) / 2 + 0.5)
    if d * (d + 1) // 2 != n:
        raise BadLength(f"length {n} is not a triangular number")
    a = np.zeros((d, d))
    k = 0
    for j in range(d):
        m = d - j
        a[j:, j] = row[k : k + m]
        a[j, j:] = row[k : k + m]
        k += m
    return SymMatrix(a)


def vech_dim(d: int) -> int:
    return d * (d + 1) // 2
