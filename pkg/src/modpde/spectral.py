"""Truncated Fourier representation of fields on the circle.

A field is stored by its complex Fourier coefficients c_n on the band
|n| <= N (index i in the coefficient array corresponds to mode n = i - N).
The circle carries the normalized Lebesgue measure, so Parseval reads
``sum |c_n|^2 = L2 norm squared`` with no 2*pi factors.

Each supported equation has a real dispersion symbol phi(n); the modulated
linear propagator at modulation value w multiplies c_n by exp(i*w*phi(n)).
Symbols:

    kdv          phi(n) = n^3
    bo           phi(n) = |n| n
    ilw(delta)   phi(n) = n^2 coth(delta*n) - n/delta   (0 at n = 0)
    schrodinger  phi(n) = -n^2

The first three are odd, so the propagator commutes with complex
conjugation of the physical field; the Schrodinger symbol is even and
does not.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EquationKind",
    "DispersionSymbol",
    "SpectralField",
    "default_symbol",
    "dispersion_value",
    "dispersion_values",
    "propagator_apply",
    "sobolev_norm",
    "random_field",
    "save_field",
    "load_field",
]

# Tolerance for validating the Hermitian-symmetry flag on construction.
# Driver outputs satisfy c_{-n} = conj(c_n) only to accumulated round-off.
_HERMITIAN_TOL = 1e-8
_MEAN_TOL = 1e-10


class EquationKind(str, enum.Enum):
    KDV = "kdv"
    BO = "bo"
    ILW = "ilw"
    DNLS = "dnls"
    NLS = "nls"


@dataclass(frozen=True)
class DispersionSymbol:
    """Real Fourier multiplier phi(n) selecting the linear dispersion."""

    kind: str
    depth: float | None = None

    def __post_init__(self):
        if self.kind not in ("kdv", "bo", "ilw", "schrodinger"):
            raise ValueError(f"unknown dispersion kind {self.kind!r}")
        if self.kind == "ilw":
            if self.depth is None or not (self.depth > 0):
                raise ValueError("ilw symbol requires depth > 0")
        elif self.depth is not None:
            raise ValueError(f"{self.kind} symbol takes no depth parameter")

    def values(self, n):
        return dispersion_values(self, n)


def default_symbol(equation: EquationKind, depth: float | None = None) -> DispersionSymbol:
    """Symbol matching an equation kind (dNLS and cubic NLS share -n^2)."""
    equation = EquationKind(equation)
    if equation is EquationKind.KDV:
        return DispersionSymbol("kdv")
    if equation is EquationKind.BO:
        return DispersionSymbol("bo")
    if equation is EquationKind.ILW:
        return DispersionSymbol("ilw", depth=depth)
    return DispersionSymbol("schrodinger")


def _coth_minus_inv(x):
    """coth(x) - 1/x, stable near 0 and for large |x| (odd in x)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 5e-2
    xs = x[small]
    # coth(x) - 1/x = x/3 - x^3/45 + 2 x^5/945 + O(x^7)
    out[small] = xs / 3.0 - xs**3 / 45.0 + 2.0 * xs**5 / 945.0
    xl = x[~small]
    big = np.abs(xl) > 350.0
    safe = np.where(big, 1.0, xl)
    with np.errstate(over="ignore"):
        direct = 1.0 + 2.0 / np.expm1(2.0 * safe) - 1.0 / safe
    out[~small] = np.where(big, np.sign(xl) - 1.0 / xl, direct)
    return out


def dispersion_values(symbol: DispersionSymbol, n) -> np.ndarray:
    """Vectorized phi(n) for integer modes n."""
    n = np.asarray(n, dtype=float)
    if symbol.kind == "kdv":
        return n**3
    if symbol.kind == "bo":
        return np.abs(n) * n
    if symbol.kind == "schrodinger":
        return -(n**2)
    # ILW: n^2 coth(delta n) - n/delta == n^2 (coth(delta n) - 1/(delta n))
    out = np.zeros_like(n)
    nz = n != 0
    out[nz] = n[nz] ** 2 * _coth_minus_inv(symbol.depth * n[nz])
    return out


def dispersion_value(symbol: DispersionSymbol, n: int) -> float:
    return float(dispersion_values(symbol, np.asarray([n]))[0])


@dataclass(frozen=True)
class SpectralField:
    """Complex Fourier coefficients on the band |n| <= max_mode.

    ``coeffs[i]`` is the coefficient of mode ``n = i - max_mode``.  The
    ``mean_zero`` flag pins c_0 = 0 (the zero mode is excluded from the
    quadratic-equation dynamics); ``real_valued`` states the Hermitian
    symmetry c_{-n} = conj(c_n).  Both are validated on construction,
    the latter up to accumulated round-off.
    """

    max_mode: int
    coeffs: np.ndarray
    mean_zero: bool = False
    real_valued: bool = False

    def __post_init__(self):
        if self.max_mode < 1:
            raise ValueError("max_mode must be >= 1")
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.max_mode + 1,):
            raise ValueError(
                f"expected {2 * self.max_mode + 1} coefficients, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c.view(float))):
            raise ValueError("non-finite coefficient")
        scale = max(1.0, float(np.abs(c).max()))
        if self.mean_zero and abs(c[self.max_mode]) > _MEAN_TOL * scale:
            raise ValueError("mean_zero field has nonzero c_0")
        if self.real_valued:
            asym = np.abs(c[::-1].conj() - c).max()
            if asym > _HERMITIAN_TOL * scale:
                raise ValueError("real_valued field violates c_{-n} = conj(c_n)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # -- basic queries -------------------------------------------------

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.max_mode, self.max_mode + 1)

    def coeff(self, n: int) -> complex:
        if abs(n) > self.max_mode:
            return 0.0 + 0.0j
        return complex(self.coeffs[n + self.max_mode])

    def mean(self) -> complex:
        return complex(self.coeffs[self.max_mode])

    def sobolev_norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)

    # -- constructors ---------------------------------------------------

    @classmethod
    def zeros(cls, max_mode: int, mean_zero: bool = False, real_valued: bool = False):
        return cls(max_mode, np.zeros(2 * max_mode + 1, dtype=np.complex128),
                   mean_zero=mean_zero, real_valued=real_valued)

    @classmethod
    def from_modes(cls, max_mode: int, entries: dict, mean_zero: bool = False,
                   real_valued: bool = False):
        c = np.zeros(2 * max_mode + 1, dtype=np.complex128)
        for n, v in entries.items():
            if abs(n) > max_mode:
                raise ValueError(f"mode {n} outside band")
            c[n + max_mode] = v
        return cls(max_mode, c, mean_zero=mean_zero, real_valued=real_valued)

    def with_coeffs(self, coeffs, mean_zero=None, real_valued=None):
        return SpectralField(
            self.max_mode, coeffs,
            mean_zero=self.mean_zero if mean_zero is None else mean_zero,
            real_valued=self.real_valued if real_valued is None else real_valued,
        )

    # -- arithmetic (same band; flags intersect) ------------------------

    def _check_band(self, other):
        if self.max_mode != other.max_mode:
            raise ValueError("mismatched max_mode")

    def __add__(self, other):
        self._check_band(other)
        return SpectralField(self.max_mode, self.coeffs + other.coeffs,
                             mean_zero=self.mean_zero and other.mean_zero,
                             real_valued=self.real_valued and other.real_valued)

    def __sub__(self, other):
        self._check_band(other)
        return SpectralField(self.max_mode, self.coeffs - other.coeffs,
                             mean_zero=self.mean_zero and other.mean_zero,
                             real_valued=self.real_valued and other.real_valued)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        return SpectralField(self.max_mode, self.coeffs * scalar,
                             mean_zero=self.mean_zero,
                             real_valued=self.real_valued and scalar.imag == 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)


def sobolev_norm(field: SpectralField, s: float) -> float:
    """H^s norm: (sum <n>^{2s} |c_n|^2)^{1/2} with <n> = (1+n^2)^{1/2}."""
    w = (1.0 + field.modes.astype(float) ** 2) ** s
    return math.sqrt(float(np.sum(w * np.abs(field.coeffs) ** 2)))


def propagator_apply(field: SpectralField, symbol: DispersionSymbol,
                     w_value: float, inverse: bool = False) -> SpectralField:
    """Apply the modulated propagator: c_n -> exp(+-i w phi(n)) c_n.

    A unimodular multiplier, hence an isometry on every H^s.  Preserves
    mean_zero always and real_valued when phi is odd.
    """
    phi = dispersion_values(symbol, field.modes)
    sign = -1.0 if inverse else 1.0
    mult = np.exp(1j * sign * w_value * phi)
    keeps_reality = field.real_valued and (symbol.kind != "schrodinger" or w_value == 0.0)
    return SpectralField(field.max_mode, field.coeffs * mult,
                         mean_zero=field.mean_zero, real_valued=keeps_reality)


def random_field(max_mode: int, profile: str = "white", seed: int = 0,
                 mean_zero: bool = False, real_valued: bool = False,
                 alpha: float = 1.0, mode: int = 1) -> SpectralField:
    """Deterministic test fields: 'white', 'power-law' (|c_n| = <n>^-alpha
    with uniform random phases) or 'single-mode'.

    Randomness comes from a counter-based Philox stream keyed by ``seed``,
    so equal arguments give bit-identical fields.
    """
    N = max_mode
    c = np.zeros(2 * N + 1, dtype=np.complex128)
    if profile == "single-mode":
        if not (1 <= abs(mode) <= N) and not (mode == 0 and not mean_zero):
            raise ValueError("single-mode index outside band")
        if real_valued and mode != 0:
            c[mode + N] = 0.5
            c[-mode + N] = 0.5
        else:
            c[mode + N] = 1.0
        return SpectralField(N, c, mean_zero=mean_zero, real_valued=real_valued)

    rng = np.random.Generator(np.random.Philox(seed))
    ns = np.arange(1, N + 1)
    if profile == "white":
        g = rng.standard_normal(4 * N + 2)
        mag_pos = np.hypot(g[0:N], g[N:2 * N]) / math.sqrt(2.0)
        mag_neg = np.hypot(g[2 * N:3 * N], g[3 * N:4 * N]) / math.sqrt(2.0)
        amp0 = abs(g[4 * N])
    elif profile == "power-law":
        mag_pos = (1.0 + ns.astype(float) ** 2) ** (-alpha / 2.0)
        mag_neg = mag_pos.copy()
        amp0 = 1.0
    else:
        raise ValueError(f"unknown profile {profile!r}")

    ph_pos = rng.uniform(0.0, 2.0 * math.pi, N)
    ph_neg = rng.uniform(0.0, 2.0 * math.pi, N)
    ph0 = rng.uniform(0.0, 2.0 * math.pi)
    c[N + 1:] = mag_pos * np.exp(1j * ph_pos)
    if real_valued:
        c[:N] = (c[N + 1:].conj())[::-1]
        c[N] = amp0 * math.cos(ph0)
    else:
        c[:N] = (mag_neg * np.exp(1j * ph_neg))[::-1]
        c[N] = amp0 * np.exp(1j * ph0)
    if mean_zero:
        c[N] = 0.0
    return SpectralField(N, c, mean_zero=mean_zero, real_valued=real_valued)


# -- text import/export ------------------------------------------------
# Rows: n, Re c_n, Im c_n.  Header: "# specfield v1 N=<max_mode> flags=<mz,rv>"

def _flags_token(field: SpectralField) -> str:
    parts = []
    if field.mean_zero:
        parts.append("mz")
    if field.real_valued:
        parts.append("rv")
    return ",".join(parts)


def save_field(field: SpectralField, path) -> None:
    lines = [f"# specfield v1 N={field.max_mode} flags={_flags_token(field)}"]
    for n, cv in zip(field.modes, field.coeffs):
        lines.append(f"{n} {cv.real:.17g} {cv.imag:.17g}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path) -> SpectralField:
    with open(path) as fh:
        header = fh.readline().strip()
        body = fh.read().split()
    tokens = header.split()
    if len(tokens) < 4 or tokens[:2] != ["#", "specfield"] or tokens[2] != "v1":
        raise ValueError(f"bad field header: {header!r}")
    meta = dict(tok.split("=", 1) for tok in tokens[3:])
    N = int(meta["N"])
    flags = set(filter(None, meta.get("flags", "").split(",")))
    vals = np.asarray(body, dtype=float).reshape(-1, 3)
    c = np.zeros(2 * N + 1, dtype=np.complex128)
    for n, re, im in vals:
        c[int(n) + N] = re + 1j * im
    return SpectralField(N, c, mean_zero="mz" in flags, real_valued="rv" in flags)
