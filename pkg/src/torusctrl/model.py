"""Quasi-linear NLS model: coefficient symbols, the paralinearized operator,
the full nonlinear right-hand side, and the frozen linearization with its
bounded remainder.

The scalar equation is

    i u_t + Lap u + g1'(|u|^2) Lap(g1(|u|^2)) u + g2(|u|^2) u = chi_T phi_om f,

solved for u_t.  The quasi-linear term is always computed in the expanded
product form

    g1'^2 [ u^2 Lap(cu) + |u|^2 Lap(u) + 2 u grad(u).grad(cu) ]
        + g1' g1'' u |grad(rho)|^2,      rho = |u|^2,  cu = conj(u),

with grad(rho) = u grad(cu) + cu grad(u); the frozen linearization is the
slot-split of exactly these products (one factor per multilinear term takes
the increment, the highest-derivative one, gradient pairs split conjugate
symmetrically), so frozen(U, U) reproduces the nonlinear RHS to rounding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .pairops import PairOp, conj_reflect
from .paradiff import (CutoffProfile, SymbolTerm, TorusSymbol, banded_matrix,
                       xi_abs2, xi_component, xi_const)
from .spectral import PairState, SpectralField, TorusGrid, pair_sobolev_norm


@dataclass(frozen=True)
class Nonlinearity:
    """Polynomial g1, g2 with zero constant term: coefficients of rho^1, rho^2, ..."""

    g1: tuple
    g2: tuple

    def __post_init__(self):
        object.__setattr__(self, "g1", tuple(float(c) for c in self.g1))
        object.__setattr__(self, "g2", tuple(float(c) for c in self.g2))

    @property
    def is_linear(self):
        return not any(self.g1) and not any(self.g2)

    def g1_val(self, rho):
        # g1(rho) = sum_{k>=1} c_k rho^k, coefficients stored from power 1
        return _polyval(self.g1, rho) * np.asarray(rho, dtype=float)

    def g1_prime(self, rho):
        return _polyval(tuple((k + 1) * c for k, c in enumerate(self.g1)), rho)

    def g1_second(self, rho):
        return _polyval(tuple((k + 2) * (k + 1) * c for k, c in enumerate(self.g1[1:])), rho)

    def g2_val(self, rho):
        return _polyval(self.g2, rho) * np.asarray(rho, dtype=float)


def _polyval(coeffs_ascending, rho):
    """sum_k coeffs[k] rho^k, Horner."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for c in reversed(coeffs_ascending):
        out = out * rho + c
    return out


@dataclass
class CoefficientSet:
    """All frozen-state coefficient fields, sampled on the grid (values space)."""

    grid: TorusGrid
    a2: np.ndarray          # g1'^2 |u|^2, real >= 0
    b2: np.ndarray          # g1'^2 u^2, complex
    a1: list                # d real arrays, g1'^2 Im(u conj(du_l))
    lam: np.ndarray         # sqrt(1 + 2 a2) >= 1
    s1: np.ndarray          # diagonalizer entries, real
    s2: np.ndarray          # complex
    g2rho: np.ndarray       # g2(|u|^2), real
    # frozen first-order coefficients of the expanded nonlinearity:
    e1: list                # d complex arrays, coefficient of d_l w
    f1: list                # d complex arrays, coefficient of d_l conj(w)


def compute_coefficients(U: PairState, nl: Nonlinearity) -> CoefficientSet:
    grid = U.grid
    u = U.u.values()
    rho = np.abs(u) ** 2
    gp = nl.g1_prime(rho)
    gpp = nl.g1_second(rho)
    gp2 = gp * gp

    du = [grid.values_from_coeffs(grid.derivative_coeffs(U.u.coeffs, a)) for a in range(grid.dim)]
    a2 = gp2 * rho
    b2 = gp2 * u * u
    a1 = [gp2 * np.imag(u * np.conj(d)) for d in du]
    lam = np.sqrt(1.0 + 2.0 * a2)
    denom = np.sqrt(2.0 * lam * (1.0 + a2 + lam))
    s1 = (1.0 + a2 + lam) / denom
    s2 = -b2 / denom
    g2rho = nl.g2_val(rho)

    drho = [u * np.conj(d) + np.conj(u) * d for d in du]  # real, = grad(|u|^2)
    e1 = [gp2 * u * np.conj(d) + gp * gpp * u * np.conj(u) * dr for d, dr in zip(du, drho)]
    f1 = [gp2 * u * d + gp * gpp * u * u * dr for d, dr in zip(du, drho)]
    return CoefficientSet(grid, a2, b2, a1, lam, s1, s2, g2rho, e1, f1)


def structure_matrices(coeffs: CoefficientSet):
    """Pointwise 2x2 matrices E, A2 = [[1+a2, b2],[conj b2, 1+a2]] (tests)."""
    E = np.diag([1.0, -1.0])
    a2, b2 = coeffs.a2, coeffs.b2
    A2 = np.empty(coeffs.grid.shape + (2, 2), dtype=complex)
    A2[..., 0, 0] = 1.0 + a2
    A2[..., 0, 1] = b2
    A2[..., 1, 0] = np.conj(b2)
    A2[..., 1, 1] = 1.0 + a2
    return E, A2


def s_matrix(coeffs: CoefficientSet):
    """Pointwise S and S^{-1} from the diagonalizer entries (tests)."""
    s1, s2 = coeffs.s1, coeffs.s2
    S = np.empty(coeffs.grid.shape + (2, 2), dtype=complex)
    S[..., 0, 0] = s1
    S[..., 0, 1] = s2
    S[..., 1, 0] = np.conj(s2)
    S[..., 1, 1] = s1
    Sinv = np.empty_like(S)
    Sinv[..., 0, 0] = s1
    Sinv[..., 0, 1] = -s2
    Sinv[..., 1, 0] = -np.conj(s2)
    Sinv[..., 1, 1] = s1
    return S, Sinv


# ---------------------------------------------------------------------------
# the paralinearized operator A(U)


DEFAULT_PRUNE = 1e-14


def a_symbols(coeffs: CoefficientSet, prune=DEFAULT_PRUNE):
    """Symbols (1+a2)|xi|^2, a1.xi and b2|xi|^2 of the operator A(U)."""
    grid = coeffs.grid
    d = grid.dim
    p = TorusSymbol(grid, [
        SymbolTerm(None, xi_abs2(d)),
        SymbolTerm(grid.coeffs_from_values(coeffs.a2), xi_abs2(d)),
    ], order=2.0, is_real=True).prune(prune)
    r = TorusSymbol(grid, [
        SymbolTerm(grid.coeffs_from_values(coeffs.a1[a]), xi_component(d, a))
        for a in range(d)
    ], order=1.0, is_real=True).prune(prune)
    q = TorusSymbol(grid, [
        SymbolTerm(grid.coeffs_from_values(coeffs.b2), xi_abs2(d)),
    ], order=2.0).prune(prune)
    return p, r, q


def assemble_A(U: PairState, nl: Nonlinearity, cutoff: CutoffProfile,
               smallness_gate=1e-2, prune=DEFAULT_PRUNE) -> PairOp:
    """The operator A(U) = -(E Op^BW(A2|xi|^2) + Op^BW(diag(a1.xi))) as a PairOp.

    The stored blocks act on the first pair component:
        (A W)_1 = -Op(p) w - Op(r) w - Op(q) cr(w).
    """
    _warn_smallness(U, smallness_gate)
    coeffs = compute_coefficients(U, nl)
    return assemble_A_from_coeffs(coeffs, cutoff, prune)


def assemble_A_from_coeffs(coeffs: CoefficientSet, cutoff: CutoffProfile,
                           prune=DEFAULT_PRUNE) -> PairOp:
    grid = coeffs.grid
    p, r, q = a_symbols(coeffs, prune)
    Mp, _ = banded_matrix(p, cutoff)
    Mr, _ = banded_matrix(r, cutoff)
    Mq, _ = banded_matrix(q, cutoff)
    return PairOp(grid, -(Mp + Mr), -Mq)


def _warn_smallness(U: PairState, gate):
    if gate is None:
        return
    s0 = U.grid.dim / 2.0 + 2.5
    nrm = pair_sobolev_norm(U, s0)
    if nrm > gate * (1.0 + 1e-9):
        warnings.warn(f"frozen state above smallness gate: ||U||_H^{s0} = {nrm:.3e} > {gate:.1e}",
                      stacklevel=3)


# ---------------------------------------------------------------------------
# nonlinear right-hand side


def dealias_mask(grid: TorusGrid):
    """2/3-rule mask on the dual lattice (per-axis |j| <= N/3)."""
    mask = np.ones(grid.shape, dtype=bool)
    for f in grid.freqs:
        mask &= np.abs(f) <= grid.n / 3.0
    return mask


def nonlinear_term_coeffs(u_hat, grid: TorusGrid, nl: Nonlinearity, dealias=True):
    """Coefficients of N2(u) = g1' Lap(g1) u + g2 u in expanded product form."""
    u = grid.values_from_coeffs(u_hat)
    rho = np.abs(u) ** 2
    gp = nl.g1_prime(rho)
    gpp = nl.g1_second(rho)
    du = [grid.values_from_coeffs(grid.derivative_coeffs(u_hat, a)) for a in range(grid.dim)]
    lap_u = grid.values_from_coeffs(grid.laplacian_coeffs(u_hat))
    grad2 = sum(d * np.conj(d) for d in du)                       # |grad u|^2, real
    drho = [u * np.conj(d) + np.conj(u) * d for d in du]
    drho2 = sum(dr * dr for dr in drho)                           # |grad rho|^2, real

    quasi = gp * gp * (u * u * np.conj(lap_u) + rho * lap_u + 2.0 * u * grad2) \
        + gp * gpp * u * drho2
    nterm = quasi + nl.g2_val(rho) * u
    nhat = grid.coeffs_from_values(nterm)
    if dealias:
        nhat = np.where(dealias_mask(grid), nhat, 0.0)
    return nhat


def full_nonlinear_rhs(u: SpectralField, nl: Nonlinearity, F: SpectralField = None,
                       chi_t: float = 0.0, phi: np.ndarray = None,
                       dealias=True, sign=1.0) -> SpectralField:
    """du/dt = sign * [ i(Lap u + N2(u)) - i chi_t phi F ] (coefficients)."""
    grid = u.grid
    rhs = 1j * (grid.laplacian_coeffs(u.coeffs)
                + nonlinear_term_coeffs(u.coeffs, grid, nl, dealias))
    if F is not None and chi_t != 0.0:
        fv = grid.values_from_coeffs(F.coeffs)
        src = chi_t * (phi if phi is not None else 1.0) * fv
        rhs = rhs - 1j * grid.coeffs_from_values(src)
    return SpectralField(grid, sign * rhs)


# ---------------------------------------------------------------------------
# frozen linearization and remainder


def frozen_symbol_terms(coeffs: CoefficientSet):
    """Multiplication-form terms of the frozen operator L(U) w (without the i).

    Returns (z_terms, c_terms): lists of (coeff values or None, xi) acting on
    w and on conj(w) respectively, quantized at the input frequency
    (composition of multiplication and Fourier multipliers, not Weyl).
    """
    grid = coeffs.grid
    d = grid.dim
    neg_abs2 = xi_abs2(d).scaled(-1.0)                    # Lap <-> -|xi|^2
    i_comp = [xi_component(d, a).scaled(1j) for a in range(d)]  # d_l <-> i xi_l
    z_terms = [(None, neg_abs2), (coeffs.a2, neg_abs2), (coeffs.g2rho, xi_const(d))]
    z_terms += [(coeffs.e1[a], i_comp[a]) for a in range(d)]
    c_terms = [(coeffs.b2, neg_abs2)]
    c_terms += [(coeffs.f1[a], i_comp[a]) for a in range(d)]
    return z_terms, c_terms


def _mult_matrix(grid, terms, prune):
    sym = TorusSymbol(grid, [
        SymbolTerm(None if c is None else grid.coeffs_from_values(c), xi)
        for c, xi in terms
    ]).prune(prune)
    # wrapped: the exact matrix of c(x) * (multiplier w), a grid product
    M, _ = banded_matrix(sym, cutoff=None, eval_at="input", wrap=True)
    return M


def assemble_frozen(U: PairState, nl: Nonlinearity, smallness_gate=1e-2,
                    prune=DEFAULT_PRUNE) -> PairOp:
    """The frozen linear generator: frozen_rhs(U, W) = i L(U) W as a PairOp.

    This equals i A(U) + R(U) by construction of the remainder.
    """
    _warn_smallness(U, smallness_gate)
    return assemble_frozen_from_coeffs(compute_coefficients(U, nl), prune)


def assemble_frozen_from_coeffs(coeffs: CoefficientSet, prune=DEFAULT_PRUNE) -> PairOp:
    grid = coeffs.grid
    z_terms, c_terms = frozen_symbol_terms(coeffs)
    Mz = _mult_matrix(grid, z_terms, prune)
    Mc = _mult_matrix(grid, c_terms, prune)
    return PairOp(grid, 1j * Mz, 1j * Mc)


def frozen_linear_rhs(U_frozen: PairState, W: PairState, nl: Nonlinearity,
                      smallness_gate=1e-2) -> PairState:
    """Linear-in-W frozen RHS; frozen_linear_rhs(U, U) == full_nonlinear_rhs(u)."""
    _warn_smallness(U_frozen, smallness_gate)
    coeffs = compute_coefficients(U_frozen, nl)
    grid = coeffs.grid
    w_hat = W.u.coeffs
    cw_hat = grid.conj_coeffs(w_hat)

    def mult_apply(terms, what):
        out = np.zeros(grid.shape, dtype=complex)
        for c, xi in terms:
            ximesh = xi([f.astype(float) for f in grid.freqs])
            dw = grid.values_from_coeffs(ximesh * what)
            out += grid.coeffs_from_values(dw if c is None else c * dw)
        return out

    z_terms, c_terms = frozen_symbol_terms(coeffs)
    rhs = 1j * (mult_apply(z_terms, w_hat) + mult_apply(c_terms, cw_hat))
    return PairState(SpectralField(grid, rhs))


def remainder_apply(U_frozen: PairState, W: PairState, nl: Nonlinearity,
                    cutoff: CutoffProfile, smallness_gate=1e-2) -> PairState:
    """R(U) W = frozen_linear_rhs(U, W) - i A(U) W."""
    frozen = frozen_linear_rhs(U_frozen, W, nl, smallness_gate)
    A = assemble_A(U_frozen, nl, cutoff, smallness_gate=None)
    iAw = 1j * A.apply(W.u.coeffs.ravel())
    grid = U_frozen.grid
    return PairState(SpectralField(grid, frozen.u.coeffs - iAw.reshape(grid.shape)))


def remainder_pairop(coeffs: CoefficientSet, cutoff: CutoffProfile,
                     prune=DEFAULT_PRUNE) -> PairOp:
    """R(U) as an assembled PairOp (frozen minus i A)."""
    frozen = assemble_frozen_from_coeffs(coeffs, prune)
    A = assemble_A_from_coeffs(coeffs, cutoff, prune)
    return frozen + (-1j) * A
