"""Real-linear operators on pair states U = (u, conj u).

Every operator here acts on the stored component's coefficient vector
(FFT order, flattened) as

    L w = Z @ w + C @ cr(w),        cr(w)_j = conj(w_{-j}),

i.e. Z is the complex-linear block and C the conjugate-coupling block
(the action of the (1,2) entry of the 2x2 matrix operator on the second
pair component).  The implied second row is the conjugate mirror
(tilde(C), tilde(Z)), so composition, transposition and apply_full are
valid only for pair-preserving ("mirror") operators -- those commuting
with the conjugation symmetry, like i*A or the frozen generators.  A
first-row representation of an anti-mirror operator (A itself, E) still
applies correctly to pair states via apply(), but must be multiplied by i
before composing.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def conj_reflect(grid, w):
    """cr(w): coefficients of conj of the field with coefficients w."""
    return np.conj(w[grid.reflect_perm_flat])


def _tilde(grid, M):
    """tilde(M) = P conj(M) P with P the j -> -j permutation."""
    p = grid.reflect_perm_flat
    return M[p][:, p].conj()


class PairOp:
    """Sparse real-linear pair operator (Z, C)."""

    def __init__(self, grid, Z, C=None):
        self.grid = grid
        self.Z = sp.csr_matrix(Z)
        self.C = sp.csr_matrix(C) if C is not None and _nnz(C) else None

    @classmethod
    def identity(cls, grid):
        return cls(grid, sp.identity(grid.size, dtype=complex, format="csr"))

    @classmethod
    def zero(cls, grid):
        n = grid.size
        return cls(grid, sp.csr_matrix((n, n), dtype=complex))

    def apply(self, w):
        out = self.Z @ w
        if self.C is not None:
            out = out + self.C @ conj_reflect(self.grid, w)
        return out

    def apply_full(self, w1, w2):
        """Action of the full 2x2 operator on an arbitrary (w1, w2) pair."""
        g = self.grid
        C = self.C if self.C is not None else sp.csr_matrix((g.size, g.size), dtype=complex)
        top = self.Z @ w1 + C @ w2
        bot = _tilde(g, C) @ w1 + _tilde(g, self.Z) @ w2
        return top, bot

    def compose(self, other):
        """self o other."""
        g = self.grid
        Z1, C1, Z2, C2 = self.Z, self.C, other.Z, other.C
        Z = Z1 @ Z2
        C = None
        if C2 is not None:
            C = Z1 @ C2
        if C1 is not None:
            if C2 is not None:
                Z = Z + C1 @ _tilde(g, C2)
            t = C1 @ _tilde(g, Z2)
            C = t if C is None else C + t
        return PairOp(g, Z, C)

    def transpose_pairing(self):
        """Transpose with respect to the real pairing 2 Re <u,v>."""
        g = self.grid
        Zt = self.Z.conj().T.tocsr()
        Ct = None
        if self.C is not None:
            p = g.reflect_perm_flat
            Ct = self.C.T.tocsr()[p][:, p]
        return PairOp(g, Zt, Ct)

    def __add__(self, other):
        C = None
        if self.C is not None or other.C is not None:
            a = self.C if self.C is not None else 0
            b = other.C if other.C is not None else 0
            C = a + b
        return PairOp(self.grid, self.Z + other.Z, C)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        C = None if self.C is None else scalar * self.C
        return PairOp(self.grid, scalar * self.Z, C)

    def is_complex_linear(self):
        return self.C is None


class DiagonalOp:
    """Fourier-multiplier pair operator (diagonal Z, no conjugate coupling)."""

    def __init__(self, grid, multiplier):
        self.grid = grid
        self.d = np.asarray(multiplier, dtype=complex).ravel()

    def apply(self, w):
        return self.d * w

    def transpose_pairing(self):
        # real-pairing transpose of a complex-linear operator is the complex
        # adjoint, i.e. the conjugate multiplier
        return DiagonalOp(self.grid, np.conj(self.d))

    def is_complex_linear(self):
        return True


def _nnz(M):
    try:
        return M.nnz
    except AttributeError:
        return np.count_nonzero(M)
