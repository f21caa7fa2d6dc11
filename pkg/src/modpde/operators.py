"""Multilinear spectral operators weighted by oscillatory phase integrals.

Every operator here is a direct sum over frequency tuples on the
truncated band |n| <= N.  For the quadratic-nonlinearity equations
(KdV, BO, ILW, dNLS) the two standing sums are the bilinear driver

    X_{t,r}(f1, f2)(n) = m(n) * sum_{n = n1+n2, nj != 0}
        Phi_{t,r}(Xi(n, n1, n2)) f1(n1) f2(n2),

with m(n) = i*n (KdV/BO/ILW) or n (dNLS), and the trilinear operator
obtained from it by one integration by parts in time,

    NF_{t,r}(f1, f2, f3)(n) = -2 m~(n) * sum_{n = n1+n2+n3, nj != 0, n12 != 0}
        n12 * Phi_{t,r}(Xi(n, n12, n3)) * exp(i Xi(n12, n1, n2) w(r))
        * f1(n1) f2(n2) f3(n3),

with m~(n) = n (KdV/BO/ILW) or i*n (dNLS) and n12 = n1 + n2.  The
resonance function Xi is the dispersion mismatch -phi(n) + phi(n1) +
phi(n2).  For the cubic NLS family the analogous objects are the
non-resonant trilinear driver, the pointwise resonant product, and two
quintic operators produced by substituting the equation back into the
trilinear time integral.

Interaction frequencies (n12 and the alternating partial sums) may leave
the band; Xi and the gauge phases always use their exact integer values,
only input/output frequencies are band-limited.  Tuple index tables and
the phase integrals over each table's resonance values are cached on the
context: Xi repeats heavily on the lattice, so one vectorized phase
evaluation per requested time serves every tuple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modulation import CumulativePhase, ModulationPath
from .spectral import (
    DispersionSymbol,
    EquationKind,
    SpectralField,
    default_symbol,
    dispersion_values,
)

__all__ = [
    "OperatorContext",
    "resonance_quadratic",
    "resonance_cubic_nls",
    "bilinear_driver",
    "trilinear_normal_form",
    "trilinear_nonresonant_nls",
    "resonant_cubic",
    "quintic_nn",
    "quintic_nr",
    "QUINTIC_MODE_LIMIT",
]

# Direct quintuple sums scale like N^4 in memory; larger bands need a
# different evaluation strategy than tuple tables.
QUINTIC_MODE_LIMIT = 16

_QUADRATIC = (EquationKind.KDV, EquationKind.BO, EquationKind.ILW, EquationKind.DNLS)


def resonance_quadratic(symbol: DispersionSymbol, n: int, n1: int, n2: int) -> float:
    """Dispersion mismatch -phi(n) + phi(n1) + phi(n2)."""
    v = dispersion_values(symbol, np.asarray([n, n1, n2], dtype=float))
    return float(-v[0] + v[1] + v[2])


def resonance_cubic_nls(n: int, n1: int, n2: int, n3: int) -> int:
    """n^2 - n1^2 + n2^2 - n3^2 (equals 2(n-n1)(n-n3) when n = n1-n2+n3)."""
    return n * n - n1 * n1 + n2 * n2 - n3 * n3


@dataclass(eq=False)
class _TupleTable:
    """Index arrays for one direct frequency sum.

    ``slots[k][j]`` is the band position of the k-th input's frequency in
    tuple j (conjugated when ``conj[k]``); ``xi_phi`` the phase-integral
    argument, ``xi_gauge`` the optional exp(i * sign * xi * w(r)) argument,
    ``pref`` a per-tuple scalar factor and ``out_mult`` the per-mode factor
    applied after accumulation.
    """

    out_idx: np.ndarray
    slots: tuple
    conj: tuple
    xi_phi: np.ndarray
    pref: np.ndarray | float
    out_mult: np.ndarray
    xi_gauge: np.ndarray | None = None
    gauge_sign: float = 1.0
    phi_unique: np.ndarray = None
    phi_inv: np.ndarray = None
    gauge_unique: np.ndarray = None
    gauge_inv: np.ndarray = None

    def __post_init__(self):
        self.phi_unique, self.phi_inv = np.unique(self.xi_phi, return_inverse=True)
        if self.xi_gauge is not None:
            self.gauge_unique, self.gauge_inv = np.unique(self.xi_gauge, return_inverse=True)


@dataclass(eq=False)
class OperatorContext:
    """Bundles the modulation path, dispersion symbol and band shared by
    every operator evaluation, plus tuple-table and phase caches.

    Treat as immutable after construction; caches are internal.
    """

    equation: EquationKind
    path: ModulationPath
    max_mode: int
    symbol: DispersionSymbol | None = None
    _tables: dict = field(default_factory=dict, repr=False)
    _phase: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.equation = EquationKind(self.equation)
        if self.max_mode < 1:
            raise ValueError("max_mode must be >= 1")
        if self.symbol is None:
            raise ValueError("symbol required; use OperatorContext.create")
        expected = {
            EquationKind.KDV: "kdv",
            EquationKind.BO: "bo",
            EquationKind.ILW: "ilw",
            EquationKind.DNLS: "schrodinger",
            EquationKind.NLS: "schrodinger",
        }[self.equation]
        if self.symbol.kind != expected:
            raise ValueError(
                f"symbol kind {self.symbol.kind!r} does not match equation {self.equation.value!r}"
            )

    @classmethod
    def create(cls, equation, path, max_mode, depth=None):
        equation = EquationKind(equation)
        return cls(equation, path, max_mode, default_symbol(equation, depth))

    # -- table access ----------------------------------------------------

    def table(self, name: str) -> _TupleTable:
        got = self._tables.get(name)
        if got is None:
            got = _BUILDERS[name](self)
            self._tables[name] = got
        return got

    def phases(self, name: str) -> CumulativePhase:
        got = self._phase.get(name)
        if got is None:
            got = CumulativePhase(self.path, self.table(name).phi_unique)
            self._phase[name] = got
        return got

    def w_at(self, t: float) -> float:
        return float(self.path.value_at(t))

    def zero_field(self, mean_zero=True, real_valued=False) -> SpectralField:
        return SpectralField.zeros(self.max_mode, mean_zero=mean_zero, real_valued=real_valued)


# ----------------------------------------------------------------------
# table builders

def _nonzero_modes(N):
    return np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])


def _build_bilinear(ctx: OperatorContext) -> _TupleTable:
    N = ctx.max_mode
    ms = _nonzero_modes(N)
    n1, n2 = np.meshgrid(ms, ms, indexing="ij")
    n1 = n1.ravel()
    n2 = n2.ravel()
    n = n1 + n2
    keep = (np.abs(n) <= N) & (n != 0)
    n, n1, n2 = n[keep], n1[keep], n2[keep]
    phi = lambda k: dispersion_values(ctx.symbol, k)
    xi = -phi(n) + phi(n1) + phi(n2)
    modes = np.arange(-N, N + 1)
    if ctx.equation is EquationKind.DNLS:
        out_mult = modes.astype(np.complex128)
    else:
        out_mult = 1j * modes.astype(np.complex128)
    return _TupleTable(out_idx=n + N, slots=(n1 + N, n2 + N), conj=(False, False),
                       xi_phi=xi, pref=1.0, out_mult=out_mult)


def _build_trilinear(ctx: OperatorContext) -> _TupleTable:
    N = ctx.max_mode
    ms = _nonzero_modes(N)
    n1, n2, n3 = np.meshgrid(ms, ms, ms, indexing="ij")
    n1, n2, n3 = n1.ravel(), n2.ravel(), n3.ravel()
    n = n1 + n2 + n3
    n12 = n1 + n2
    keep = (np.abs(n) <= N) & (n != 0) & (n12 != 0)
    n, n1, n2, n3, n12 = n[keep], n1[keep], n2[keep], n3[keep], n12[keep]
    phi = lambda k: dispersion_values(ctx.symbol, k)
    xi_phi = -phi(n) + phi(n12) + phi(n3)
    xi_gauge = -phi(n12) + phi(n1) + phi(n2)
    modes = np.arange(-N, N + 1)
    # the per-mode factor is 2 m(n) m(n12) / (-2 n12) with m the driver
    # multiplier: n for KdV/BO/ILW (m = i n), -n for dNLS (m = n)
    if ctx.equation is EquationKind.DNLS:
        out_mult = -modes.astype(np.complex128)
    else:
        out_mult = modes.astype(np.complex128)
    return _TupleTable(out_idx=n + N, slots=(n1 + N, n2 + N, n3 + N),
                       conj=(False, False, False), xi_phi=xi_phi,
                       pref=-2.0 * n12.astype(float), out_mult=out_mult,
                       xi_gauge=xi_gauge, gauge_sign=1.0)


def _build_nls_trilinear(ctx: OperatorContext) -> _TupleTable:
    N = ctx.max_mode
    ms = np.arange(-N, N + 1)
    n1, n2, n3 = np.meshgrid(ms, ms, ms, indexing="ij")
    n1, n2, n3 = n1.ravel(), n2.ravel(), n3.ravel()
    n = n1 - n2 + n3
    keep = (np.abs(n) <= N) & (n != n1) & (n != n3)
    n, n1, n2, n3 = n[keep], n1[keep], n2[keep], n3[keep]
    xi = n * n - n1 * n1 + n2 * n2 - n3 * n3
    out_mult = np.full(2 * N + 1, -1j, dtype=np.complex128)
    return _TupleTable(out_idx=n + N, slots=(n1 + N, n2 + N, n3 + N),
                       conj=(False, True, False), xi_phi=xi.astype(float),
                       pref=1.0, out_mult=out_mult)


def _check_quintic_band(N):
    if N > QUINTIC_MODE_LIMIT:
        raise ValueError(
            f"quintic operators are limited to max_mode <= {QUINTIC_MODE_LIMIT} "
            f"(direct quintuple sums); got {N}"
        )


def _build_quintic_nn(ctx: OperatorContext):
    """Both terms of the quintic operator with the off-diagonal (doubly
    substituted) frequency; term II carries the conjugate gauge phase."""
    N = ctx.max_mode
    _check_quintic_band(N)
    ms = np.arange(-N, N + 1)
    ones = np.full(2 * N + 1, 1.0, dtype=np.complex128)
    parts = {1: [], 2: []}
    g2, g3, g4, g5 = np.meshgrid(ms, ms, ms, ms, indexing="ij")
    g2, g3, g4, g5 = g2.ravel(), g3.ravel(), g4.ravel(), g5.ravel()
    for v1 in ms:
        n1 = np.full(g2.shape, v1)
        n = n1 - g2 + g3 - g4 + g5
        inband = np.abs(n) <= N
        # term I: substituted block m = n1 - n2 + n3
        m = n1 - g2 + g3
        keep = inband & (n != m) & (n != g5) & (m != n1) & (m != g3)
        parts[1].append((n[keep], n1[keep], g2[keep], g3[keep], g4[keep], g5[keep], m[keep]))
        # term II: substituted block m2 = n2 - n3 + n4
        m2 = g2 - g3 + g4
        keep = inband & (n != n1) & (n != g5) & (m2 != g2) & (m2 != g4)
        parts[2].append((n[keep], n1[keep], g2[keep], g3[keep], g4[keep], g5[keep], m2[keep]))

    def _concat(chunks):
        return [np.concatenate([c[j] for c in chunks]) for j in range(7)]

    n, n1, n2, n3, n4, n5, m = _concat(parts[1])
    term1 = _TupleTable(
        out_idx=n + N, slots=(n1 + N, n2 + N, n3 + N, n4 + N, n5 + N),
        conj=(False, True, False, True, False),
        xi_phi=(n * n - m * m + n4 * n4 - n5 * n5).astype(float),
        pref=-2.0, out_mult=ones,
        xi_gauge=(m * m - n1 * n1 + n2 * n2 - n3 * n3).astype(float), gauge_sign=1.0)
    n, n1, n2, n3, n4, n5, m2 = _concat(parts[2])
    term2 = _TupleTable(
        out_idx=n + N, slots=(n1 + N, n2 + N, n3 + N, n4 + N, n5 + N),
        conj=(False, True, False, True, False),
        xi_phi=(n * n - n1 * n1 + m2 * m2 - n5 * n5).astype(float),
        pref=1.0, out_mult=ones,
        xi_gauge=(m2 * m2 - n2 * n2 + n3 * n3 - n4 * n4).astype(float), gauge_sign=-1.0)
    return (term1, term2)


def _build_quintic_nr(ctx: OperatorContext):
    """Both terms of the quintic operator with a pointwise resonant block:
    three slots share one frequency (n1 in term 1, n2 in term 2)."""
    N = ctx.max_mode
    _check_quintic_band(N)
    ms = np.arange(-N, N + 1)
    ones = np.full(2 * N + 1, 1.0, dtype=np.complex128)
    a, b, c = np.meshgrid(ms, ms, ms, indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()
    # term 1: frequencies (n1, n4, n5) = (a, b, c), n = n1 - n4 + n5
    n = a - b + c
    keep = (np.abs(n) <= N) & (n != a) & (n != c)
    n1, n4, n5, n0 = a[keep], b[keep], c[keep], n[keep]
    term1 = _TupleTable(
        out_idx=n0 + N, slots=(n1 + N, n1 + N, n1 + N, n4 + N, n5 + N),
        conj=(False, True, False, True, False),
        xi_phi=(n0 * n0 - n1 * n1 + n4 * n4 - n5 * n5).astype(float),
        pref=2.0, out_mult=ones)
    # term 2: frequencies (n1, n2, n5) = (a, b, c), n = n1 - n2 + n5
    n = a - b + c
    keep = (np.abs(n) <= N) & (n != a) & (n != c)
    n1, n2, n5, n0 = a[keep], b[keep], c[keep], n[keep]
    term2 = _TupleTable(
        out_idx=n0 + N, slots=(n1 + N, n2 + N, n2 + N, n2 + N, n5 + N),
        conj=(False, True, False, True, False),
        xi_phi=(n0 * n0 - n1 * n1 + n2 * n2 - n5 * n5).astype(float),
        pref=-1.0, out_mult=ones)
    return (term1, term2)


_BUILDERS = {
    "bilinear": _build_bilinear,
    "trilinear": _build_trilinear,
    "nls_trilinear": _build_nls_trilinear,
    "quintic_nn": _build_quintic_nn,
    "quintic_nr": _build_quintic_nr,
}


# ----------------------------------------------------------------------
# evaluation

def _accumulate(table: _TupleTable, vals: np.ndarray, n_out: int) -> np.ndarray:
    re = np.bincount(table.out_idx, weights=vals.real, minlength=n_out)
    im = np.bincount(table.out_idx, weights=vals.imag, minlength=n_out)
    return (re + 1j * im) * table.out_mult


def _slot_product(table: _TupleTable, fields) -> np.ndarray:
    prod = None
    for idx, cj, f in zip(table.slots, table.conj, fields):
        arr = f.coeffs[idx]
        if cj:
            arr = arr.conj()
        prod = arr if prod is None else prod * arr
    return prod


def _phases_for(ctx: OperatorContext, name: str):
    """One phase cache per term of the named table."""
    tables = ctx.table(name)
    if isinstance(tables, _TupleTable):
        tables = (tables,)
    out = []
    for k, table in enumerate(tables):
        key = name if len(tables) == 1 else f"{name}#{k}"
        got = ctx._phase.get(key)
        if got is None:
            got = CumulativePhase(ctx.path, table.phi_unique)
            ctx._phase[key] = got
        out.append(got)
    return tuple(out)


def _evaluate(ctx: OperatorContext, name: str, r: float, t: float, fields,
              phi_by_table=None) -> np.ndarray:
    """Accumulated coefficients of one tabled operator at (r, t)."""
    tables = ctx.table(name)
    if isinstance(tables, _TupleTable):
        tables = (tables,)
    if phi_by_table is None:
        phi_by_table = [cache.pair(r, t) for cache in _phases_for(ctx, name)]
    out = np.zeros(2 * ctx.max_mode + 1, dtype=np.complex128)
    w_r = None
    for table, phi_u in zip(tables, phi_by_table):
        vals = phi_u[table.phi_inv]
        if table.xi_gauge is not None:
            if w_r is None:
                w_r = ctx.w_at(r)
            gauge_u = np.exp(1j * table.gauge_sign * table.gauge_unique * w_r)
            vals = vals * gauge_u[table.gauge_inv]
        vals = vals * table.pref * _slot_product(table, fields)
        out += _accumulate(table, vals, out.size)
    return out


def _check_times(ctx: OperatorContext, r: float, t: float):
    if not (0.0 <= r <= t <= ctx.path.horizon * (1 + 1e-12)):
        raise ValueError("need 0 <= r <= t <= path horizon")


def _check_field(ctx: OperatorContext, f: SpectralField, mean_zero_required: bool):
    if f.max_mode != ctx.max_mode:
        raise ValueError("field max_mode does not match context")
    if mean_zero_required and not f.mean_zero:
        raise ValueError("operator requires mean-zero input fields")


def _real_output(ctx: OperatorContext, fields) -> bool:
    return ctx.equation in (EquationKind.KDV, EquationKind.BO, EquationKind.ILW) \
        and all(f.real_valued for f in fields)


def bilinear_driver(ctx: OperatorContext, r: float, t: float,
                    f1: SpectralField, f2: SpectralField) -> SpectralField:
    """Time-integrated quadratic interaction of the modulated flow.

    Only defined for the quadratic-nonlinearity equations; inputs must be
    mean-zero and the output is mean-zero (the n = 0 multiplier vanishes).
    """
    if ctx.equation not in _QUADRATIC:
        raise ValueError("bilinear driver is defined for kdv/bo/ilw/dnls")
    _check_times(ctx, r, t)
    for f in (f1, f2):
        _check_field(ctx, f, mean_zero_required=True)
    rv = _real_output(ctx, (f1, f2))
    if r == t:
        return ctx.zero_field(real_valued=rv)
    coeffs = _evaluate(ctx, "bilinear", r, t, (f1, f2))
    return SpectralField(ctx.max_mode, coeffs, mean_zero=True, real_valued=rv)


def trilinear_normal_form(ctx: OperatorContext, r: float, t: float,
                          f1: SpectralField, f2: SpectralField,
                          f3: SpectralField) -> SpectralField:
    """Cubic term produced by one integration by parts in time: the pair
    interaction (n1, n2) is frozen at its value at the left endpoint r
    through the gauge phase exp(i Xi(n12, n1, n2) w(r))."""
    if ctx.equation not in _QUADRATIC:
        raise ValueError("trilinear normal form is defined for kdv/bo/ilw/dnls")
    _check_times(ctx, r, t)
    for f in (f1, f2, f3):
        _check_field(ctx, f, mean_zero_required=True)
    rv = _real_output(ctx, (f1, f2, f3))
    if r == t:
        return ctx.zero_field(real_valued=rv)
    coeffs = _evaluate(ctx, "trilinear", r, t, (f1, f2, f3))
    return SpectralField(ctx.max_mode, coeffs, mean_zero=True, real_valued=rv)


def trilinear_nonresonant_nls(ctx: OperatorContext, r: float, t: float,
                              f1: SpectralField, f2: SpectralField,
                              f3: SpectralField) -> SpectralField:
    """Non-resonant cubic driver of the renormalized modulated NLS: the
    alternating sum n = n1 - n2 + n3 restricted to n != n1, n3, with the
    second slot conjugated."""
    if ctx.equation is not EquationKind.NLS:
        raise ValueError("non-resonant trilinear driver is defined for nls")
    _check_times(ctx, r, t)
    for f in (f1, f2, f3):
        _check_field(ctx, f, mean_zero_required=False)
    if r == t:
        return ctx.zero_field(mean_zero=False)
    coeffs = _evaluate(ctx, "nls_trilinear", r, t, (f1, f2, f3))
    return SpectralField(ctx.max_mode, coeffs, mean_zero=False)


def resonant_cubic(f1: SpectralField, f2: SpectralField, f3: SpectralField) -> SpectralField:
    """Pointwise doubly resonant product: output(n) = i f1(n) conj(f2(n)) f3(n)."""
    if not (f1.max_mode == f2.max_mode == f3.max_mode):
        raise ValueError("mismatched max_mode")
    coeffs = 1j * f1.coeffs * f2.coeffs.conj() * f3.coeffs
    return SpectralField(f1.max_mode, coeffs,
                         mean_zero=f1.mean_zero and f2.mean_zero and f3.mean_zero)


def quintic_nn(ctx: OperatorContext, r: float, t: float, f1, f2, f3, f4, f5) -> SpectralField:
    """Quintic term from substituting the non-resonant cubic nonlinearity
    into the trilinear time integral (two mirrored terms)."""
    if ctx.equation is not EquationKind.NLS:
        raise ValueError("quintic operators are defined for nls")
    _check_times(ctx, r, t)
    fields = (f1, f2, f3, f4, f5)
    for f in fields:
        _check_field(ctx, f, mean_zero_required=False)
    if r == t:
        return ctx.zero_field(mean_zero=False)
    coeffs = _evaluate(ctx, "quintic_nn", r, t, fields)
    return SpectralField(ctx.max_mode, coeffs, mean_zero=False)


def quintic_nr(ctx: OperatorContext, r: float, t: float, f1, f2, f3, f4, f5) -> SpectralField:
    """Quintic term from substituting the doubly resonant product into the
    trilinear time integral; equals the slot-wise composition of the
    non-resonant driver with the pointwise product."""
    if ctx.equation is not EquationKind.NLS:
        raise ValueError("quintic operators are defined for nls")
    _check_times(ctx, r, t)
    fields = (f1, f2, f3, f4, f5)
    for f in fields:
        _check_field(ctx, f, mean_zero_required=False)
    if r == t:
        return ctx.zero_field(mean_zero=False)
    coeffs = _evaluate(ctx, "quintic_nr", r, t, fields)
    return SpectralField(ctx.max_mode, coeffs, mean_zero=False)
