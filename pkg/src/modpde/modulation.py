"""Rough modulation paths and their oscillatory phase integrals.

A modulation is a continuous real function w on [0, T] with w(0) = 0,
stored here as uniform samples with piecewise-linear interpolation.  All
dispersive averaging enters through the phase integral

    Phi_{t,r}(a) = integral_r^t exp(i a w(t')) dt',

which is evaluated in closed form on every linear segment: if the phase
a*w is linear with increment z = i*a*slope*dx over a piece of length dx,
the piece contributes exp(i a w(x0)) * dx * (e^z - 1)/z.  The ratio
(e^z - 1)/z switches to a 4-term Taylor expansion for |z| < 1e-6 to
avoid cancellation, so the result is accurate to round-off for every a.

The averaging quality of a path is quantified by the weighted supremum

    sup_{a} sup_{r<t} <a>^rho |Phi_{t,r}(a)| / (t-r)^gamma,

estimated on a logarithmic a-grid and a uniform (r, t) grid.  Since w is
real, |Phi(-a)| = |Phi(a)|, so scanning a >= 0 covers the sign-symmetric
grid exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModulationPath",
    "IrregularityEstimate",
    "generate_fbm",
    "from_samples",
    "linear_path",
    "phase_integral",
    "irregularity_norm",
    "estimate_rho",
    "save_path",
    "load_path",
]

# switch to the Taylor branch of (e^z - 1)/z below this |z|
_TAYLOR_SWITCH = 1e-6

# fixed lower end of the logarithmic a-grid; keeping it independent of
# a_max makes grids nested as a_max grows (monotone estimator)
_A_GRID_FLOOR = 1e-2


@dataclass(frozen=True)
class ModulationPath:
    """Uniform samples w_0..w_M of a modulation on [0, horizon], w_0 = 0."""

    horizon: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("need at least 2 samples")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite sample")
        if v[0] != 0.0:
            raise ValueError("path must satisfy w(0) = 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def sample_count(self) -> int:
        return self.values.size

    @property
    def segment_count(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.values.size)

    @property
    def spacing(self) -> float:
        return self.horizon / self.segment_count

    def value_at(self, t):
        """Piecewise-linear interpolant of the samples."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError("time outside [0, horizon]")
        return np.interp(np.clip(t, 0.0, self.horizon), self.times, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.spacing


def from_samples(values, horizon: float) -> ModulationPath:
    """Build a path from raw samples, shifting so that w(0) = 0."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite sample")
    return ModulationPath(horizon, v - v[0])


def linear_path(horizon: float, slope: float = 1.0, sample_count: int = 2) -> ModulationPath:
    """The smooth reference w(t) = slope * t."""
    t = np.linspace(0.0, horizon, sample_count)
    return ModulationPath(horizon, slope * t)


# ----------------------------------------------------------------------
# fractional Brownian motion

def _fgn_autocov(hurst: float, lags: np.ndarray) -> np.ndarray:
    k = np.abs(lags).astype(float)
    return 0.5 * ((k + 1) ** (2 * hurst) + np.abs(k - 1) ** (2 * hurst) - 2 * k ** (2 * hurst))


def generate_fbm(hurst: float, horizon: float, sample_count: int, seed: int) -> ModulationPath:
    """Sample a fractional Brownian path with w(0) = 0.

    Increments over the node spacing dt have variance dt^(2H) exactly.
    Synthesis uses circulant embedding of the fractional Gaussian noise
    covariance (spectral method); when the embedding is not nonnegative
    definite, or for very short paths, it falls back to an exact
    Cholesky factorization.  The generator is a seeded counter-based
    Philox stream, so results are reproducible bit-for-bit.
    """
    if not (0.0 < hurst < 1.0):
        raise ValueError("hurst must lie in (0, 1)")
    if not (horizon > 0):
        raise ValueError("horizon must be positive")
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")

    m = sample_count - 1
    rng = np.random.Generator(np.random.Philox(seed))
    fgn = None
    if m >= 8:
        cov = _fgn_autocov(hurst, np.arange(m + 1))
        circ = np.concatenate([cov[:m], cov[m:m + 1], cov[1:m][::-1]])
        lam = np.fft.fft(circ).real
        if lam.min() > -1e-12 * max(1.0, lam.max()):
            lam = np.clip(lam, 0.0, None)
            z = np.zeros(2 * m, dtype=np.complex128)
            g = rng.standard_normal(2 * m)
            z[0] = g[0]
            z[m] = g[1]
            z[1:m] = (g[2:m + 1] + 1j * g[m + 1:2 * m]) / math.sqrt(2.0)
            z[m + 1:] = z[1:m][::-1].conj()
            fgn = math.sqrt(2 * m) * np.fft.ifft(np.sqrt(lam) * z).real[:m]
    if fgn is None:
        cov = _fgn_autocov(hurst, np.subtract.outer(np.arange(m), np.arange(m)))
        chol = np.linalg.cholesky(cov + 1e-14 * np.eye(m))
        fgn = chol @ rng.standard_normal(m)

    dt = horizon / m
    w = np.concatenate([[0.0], np.cumsum(fgn)]) * dt**hurst
    return ModulationPath(horizon, w)


# ----------------------------------------------------------------------
# phase integral

def _expm1_over(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the Taylor branch near 0."""
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty_like(z)
    small = np.abs(z) < _TAYLOR_SWITCH
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0 + zs * zs * zs / 24.0
    zl = z[~small]
    out[~small] = np.expm1(zl) / zl
    return out


def _pieces(path: ModulationPath, r: float, t: float):
    """Break [r, t] at interior path nodes; return piece endpoints,
    starting values w(x0) and slopes."""
    times = path.times
    k_lo = int(np.searchsorted(times, r, side="right"))
    k_hi = int(np.searchsorted(times, t, side="left"))
    inner = times[k_lo:k_hi]
    x0 = np.concatenate([[r], inner])
    x1 = np.concatenate([inner, [t]])
    seg = np.clip(np.searchsorted(times, x0, side="right") - 1, 0, path.segment_count - 1)
    slopes = path.slopes()[seg]
    w0 = path.values[seg] + slopes * (x0 - times[seg])
    return x0, x1, w0, slopes


def _phase_pieces(a, dx, w0, slopes):
    """Sum of closed-form piece integrals; a scalar or 1-D, broadcast
    against the piece arrays."""
    a = np.asarray(a, dtype=float)
    scalar = a.ndim == 0
    a2 = a.reshape(-1, 1)
    z = 1j * a2 * (slopes * dx)
    vals = np.exp(1j * a2 * w0) * dx * _expm1_over(z)
    out = vals.sum(axis=1)
    return out[0] if scalar else out


def phase_integral(path: ModulationPath, r: float, t: float, a):
    """Phi_{t,r}(a) = integral_r^t exp(i a w(t')) dt' on the interpolant.

    ``a`` may be a scalar or a 1-D array.  Exact per linear segment up
    to round-off; requires 0 <= r <= t <= horizon.
    """
    if not (0.0 <= r <= t <= path.horizon * (1 + 1e-12)):
        raise ValueError("need 0 <= r <= t <= horizon")
    if r == t:
        a = np.asarray(a, dtype=float)
        return 0.0 + 0.0j if a.ndim == 0 else np.zeros(a.shape, dtype=np.complex128)
    x0, x1, w0, slopes = _pieces(path, r, t)
    return _phase_pieces(a, x1 - x0, w0, slopes)


class CumulativePhase:
    """Phi_{s,0}(a) for a fixed vector of frequencies a, for many s.

    Per-segment closed forms are accumulated once into a node table;
    a query at arbitrary s adds the partial piece of the containing
    segment.  Queries are cached per time, so differences C(t) - C(r)
    give Phi_{t,r} with exact additivity across splits.
    """

    def __init__(self, path: ModulationPath, a_values: np.ndarray):
        self.path = path
        self.a = np.asarray(a_values, dtype=float)
        dx = path.spacing
        slopes = path.slopes()
        w0 = path.values[:-1]
        a2 = self.a.reshape(-1, 1)
        vals = np.exp(1j * a2 * w0) * dx * _expm1_over(1j * a2 * (slopes * dx))
        table = np.zeros((self.a.size, path.sample_count), dtype=np.complex128)
        np.cumsum(vals, axis=1, out=table[:, 1:])
        self._table = table
        self._cache: dict[float, np.ndarray] = {}

    def from_zero(self, s: float) -> np.ndarray:
        got = self._cache.get(s)
        if got is not None:
            return got
        path = self.path
        if not (0.0 <= s <= path.horizon * (1 + 1e-12)):
            raise ValueError("time outside [0, horizon]")
        k = min(int(s / path.spacing), path.segment_count - 1)
        t_k = k * path.spacing
        out = self._table[:, k]
        dx = s - t_k
        if dx > 0.0:
            slope = (path.values[k + 1] - path.values[k]) / path.spacing
            partial = _phase_pieces(self.a, np.asarray([dx]), np.asarray([path.values[k]]),
                                    np.asarray([slope]))
            out = out + partial
        self._cache[s] = out
        return out

    def pair(self, r: float, t: float) -> np.ndarray:
        return self.from_zero(t) - self.from_zero(r)


# ----------------------------------------------------------------------
# irregularity estimation

@dataclass(frozen=True)
class IrregularityEstimate:
    """Grid supremum of <a>^rho |Phi_{t,r}(a)| / (t-r)^gamma.

    ``a_grid_size`` is the number of logarithmic grid points per decade
    (the grid is sign-symmetric by conjugation and always includes
    a = 0); ``time_grid_size`` the number of uniform (r, t) nodes.  The
    estimator is a restriction of the defining supremum to the probed
    grid, hence a lower bound, monotone under grid refinement.
    """

    rho: float
    gamma: float
    norm_estimate: float
    a_max: float
    time_grid_size: int
    a_grid_size: int


def _log_a_grid(a_max: float, per_decade: int) -> np.ndarray:
    """Positive grid {10^(k/per_decade)} between the fixed floor and a_max."""
    k_lo = math.ceil(per_decade * math.log10(_A_GRID_FLOOR) - 1e-9)
    k_hi = math.floor(per_decade * math.log10(a_max) + 1e-9)
    if k_hi < k_lo:
        return np.asarray([a_max])
    return 10.0 ** (np.arange(k_lo, k_hi + 1) / per_decade)


def _sup_ratio_per_a(path: ModulationPath, a_grid: np.ndarray, gamma: float,
                     time_grid_size: int) -> np.ndarray:
    """g[i] = sup over grid pairs r < t of |Phi_{t,r}(a_i)| / (t-r)^gamma."""
    cum = CumulativePhase(path, a_grid)
    tg = np.linspace(0.0, path.horizon, time_grid_size)
    table = np.stack([cum.from_zero(s) for s in tg], axis=1)
    best = np.zeros(a_grid.size)
    for j in range(1, time_grid_size):
        diffs = np.abs(table[:, j:j + 1] - table[:, :j])
        dt = (tg[j] - tg[:j]) ** gamma
        best = np.maximum(best, (diffs / dt).max(axis=1))
    return best


def irregularity_norm(path: ModulationPath, rho: float, gamma: float, a_max: float,
                      a_grid_size: int = 64, time_grid_size: int = 129) -> IrregularityEstimate:
    """Estimate the (rho, gamma) phase-averaging norm on probe grids."""
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    if not (a_max > 0):
        raise ValueError("a_max must be positive")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if a_grid_size < 1 or time_grid_size < 2:
        raise ValueError("degenerate probe grid")
    a_grid = np.concatenate([[0.0], _log_a_grid(a_max, a_grid_size)])
    g = _sup_ratio_per_a(path, a_grid, gamma, time_grid_size)
    weighted = (1.0 + a_grid**2) ** (rho / 2.0) * g
    return IrregularityEstimate(rho=rho, gamma=gamma,
                                norm_estimate=float(weighted.max()),
                                a_max=a_max, time_grid_size=time_grid_size,
                                a_grid_size=a_grid_size)


def estimate_rho(path: ModulationPath, gamma: float, a_max: float,
                 a_grid_size: int = 16, time_grid_size: int = 65) -> float:
    """Fitted decay exponent of sup_{r,t} |Phi|/(t-r)^gamma against <a>.

    Log-log least squares over the grid cells with a >= 1 (below that
    <a> is flat and carries no slope information).  Clamped to >= 0.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    if not (a_max > 0):
        raise ValueError("a_max must be positive")
    a_grid = _log_a_grid(a_max, a_grid_size)
    a_grid = a_grid[a_grid >= 1.0]
    if a_grid.size < 4:
        raise ValueError("need at least 4 a-cells with a >= 1 for the fit")
    g = _sup_ratio_per_a(path, a_grid, gamma, time_grid_size)
    if np.any(g <= 0.0):
        return 0.0
    x = np.log((1.0 + a_grid**2) ** 0.5)
    slope = np.polyfit(x, np.log(g), 1)[0]
    return max(0.0, -float(slope))


# ----------------------------------------------------------------------
# text import/export: "# modpath v1 T=<horizon>", rows "time value"

def save_path(path: ModulationPath, file) -> None:
    lines = [f"# modpath v1 T={path.horizon:.17g}"]
    for tk, wk in zip(path.times, path.values):
        lines.append(f"{tk:.17g} {wk:.17g}")
    with open(file, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_path(file) -> ModulationPath:
    with open(file) as fh:
        header = fh.readline().strip()
        body = fh.read().split()
    tokens = header.split()
    if len(tokens) != 4 or tokens[:2] != ["#", "modpath"] or tokens[2] != "v1":
        raise ValueError(f"bad path header: {header!r}")
    horizon = float(tokens[3].split("=", 1)[1])
    vals = np.asarray(body, dtype=float).reshape(-1, 2)
    return from_samples(vals[:, 1], horizon)
