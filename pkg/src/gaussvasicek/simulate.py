"""Exact Gaussian noise paths and pathwise solutions of the linear SDE.

Noise paths are drawn by Cholesky factorization of the covariance matrix on
a uniform grid.  Replication ``r`` of seed ``s`` always uses the Philox
stream ``SeedSequence(s, spawn_key=(0, r))``, and work is cut into fixed
chunks that run with single-threaded BLAS, so results do not depend on how
many worker threads are used.

The SDE ``dX = theta (mu + X) dt + dG`` with ``X_0 = 0`` is solved through

    X_t = mu (e^{theta t} - 1) + G_t + theta ∫_0^t e^{theta (t-s)} G_s ds,

with the Riemann integral updated incrementally on the grid.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter
from threadpoolctl import threadpool_limits

from .exceptions import NotPSDError, OverflowGuardError, ValidationError
from .kernels import Kernel, cov_matrix

CHUNK = 64
THREADS_ENV = "GAUSS_VASICEK_THREADS"
JITTER_LADDER = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
EXP_GUARD = 700.0
SCHEMES = ("trapezoid", "midpoint", "euler")


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = i T / n`` for ``i = 0..n``."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (isinstance(self.t_end, (int, float)) and math.isfinite(self.t_end) and self.t_end > 0):
            raise ValidationError(f"grid end T must be positive and finite, got {self.t_end!r}")
        if isinstance(self.n_steps, bool) or int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValidationError(f"grid needs n >= 2 steps, got {self.n_steps!r}")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class GridPath:
    """Values of a process at the points of a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_steps + 1,):
            raise ValidationError(f"expected {self.grid.n_steps + 1} values, got shape {v.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __eq__(self, other):
        return (isinstance(other, GridPath) and self.grid == other.grid
                and np.array_equal(self.values, other.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,value\n")
        for t, x in zip(self.times, self.values):
            buf.write(f"{t:.17g},{x:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridPath":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["t", "value"]:
            raise ValidationError("path CSV must start with header 't,value'")
        try:
            data = np.array([[float(a), float(b)] for a, b in rows[1:] if (a, b)], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"malformed path CSV: {exc}") from None
        if data.shape[0] < 3:
            raise ValidationError("path CSV needs at least 3 rows")
        t = data[:, 0]
        grid = Grid(float(t[-1]), data.shape[0] - 1)
        if t[0] != 0 or not np.allclose(t, grid.times, rtol=1e-12, atol=1e-12 * grid.t_end):
            raise ValidationError("path CSV times must form a uniform grid from 0")
        return cls(grid, data[:, 1])


@dataclass(frozen=True)
class SdeParams:
    """Drift parameters of ``dX = theta (mu + X) dt + dG``."""

    theta: float
    mu: float = 0.0

    def __post_init__(self):
        for name in ("theta", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def alpha(self) -> float:
        return self.theta * self.mu


# -- threading ----------------------------------------------------------------

def worker_count() -> int:
    """Worker threads: ``GAUSS_VASICEK_THREADS`` or the number of CPUs."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def map_chunks(func: Callable[[int, int], object], n_items: int, threads: int | None = None):
    """Apply ``func(start, stop)`` to fixed chunks of ``range(n_items)`` in order."""
    bounds = [(lo, min(lo + CHUNK, n_items)) for lo in range(0, n_items, CHUNK)]
    threads = worker_count() if threads is None else threads
    with threadpool_limits(1):
        if threads <= 1 or len(bounds) <= 1:
            return [func(lo, hi) for lo, hi in bounds]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda b: func(*b), bounds))


def replication_rng(seed: int, replication: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, int(replication)))
    return np.random.Generator(np.random.Philox(ss))


# -- noise ----------------------------------------------------------------------

@lru_cache(maxsize=16)
def cholesky_factor(kernel: Kernel, grid: Grid) -> np.ndarray:
    """Lower Cholesky factor of the covariance at ``grid.times[1:]``.

    A diagonal jitter ``eps * max(diag)`` is added only if the plain
    factorization fails, escalating through ``JITTER_LADDER``.

    Raises
    ------
    NotPSDError
        If every jitter level fails.
    """
    C = cov_matrix(kernel, grid.times[1:])
    scale = float(np.max(np.diag(C)))
    eye = np.eye(C.shape[0])
    for eps in (0.0,) + JITTER_LADDER:
        try:
            L = np.linalg.cholesky(C + eps * scale * eye if eps else C)
        except np.linalg.LinAlgError:
            continue
        L.setflags(write=False)
        return L
    lam = float(np.linalg.eigvalsh(C)[0])
    raise NotPSDError(
        f"covariance of {kernel} on {grid.n_steps} points is not positive definite "
        f"(minimum eigenvalue {lam:.3e})", min_eigenvalue=lam)


def _draw(L, seed, start, stop):
    n = L.shape[0]
    Z = np.empty((n, stop - start))
    for j, r in enumerate(range(start, stop)):
        Z[:, j] = replication_rng(seed, r).standard_normal(n)
    out = np.zeros((stop - start, n + 1))
    out[:, 1:] = (L @ Z).T
    return out


def _aligned_draw(L, seed, start, stop):
    """Rows ``start..stop-1`` computed from ``CHUNK``-aligned blocks.

    Every replication is produced by the same matrix product no matter how
    the caller slices the range, so single draws equal batch rows bitwise.
    """
    rows = []
    lo = (start // CHUNK) * CHUNK
    while lo < stop:
        block = _draw(L, seed, lo, lo + CHUNK)
        rows.append(block[max(start - lo, 0):min(stop - lo, CHUNK)])
        lo += CHUNK
    return np.vstack(rows)


def gaussian_path(kernel: Kernel, grid: Grid, seed: int, replication: int = 0) -> GridPath:
    """One exact sample of the noise on ``grid`` (``G_0 = 0``).

    Identical to row ``replication`` of :func:`gaussian_paths` for the same seed.
    """
    L = cholesky_factor(kernel, grid)
    with threadpool_limits(1):
        values = _aligned_draw(L, seed, replication, replication + 1)[0]
    return GridPath(grid, values)


def gaussian_paths(kernel: Kernel, grid: Grid, seed: int, n_paths: int, *,
                   start: int = 0, threads: int | None = None) -> np.ndarray:
    """Replications ``start .. start + n_paths - 1`` as rows of an array."""
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    L = cholesky_factor(kernel, grid)
    if start % CHUNK:
        with threadpool_limits(1):
            return _aligned_draw(L, seed, start, start + n_paths)
    parts = map_chunks(lambda lo, hi: _aligned_draw(L, seed, start + lo, start + hi),
                       n_paths, threads)
    return np.vstack(parts)


# -- linear SDE --------------------------------------------------------------------

def solve_linear_sde(theta: float, mu: float, noise: np.ndarray, t_end: float,
                     scheme: str = "trapezoid") -> np.ndarray:
    """Solve the SDE for each row of ``noise`` (shape ``(m, n+1)`` or ``(n+1,)``).

    Raises
    ------
    OverflowGuardError
        If ``|theta| T > 700``.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if abs(theta) * t_end > EXP_GUARD:
        raise OverflowGuardError(f"|theta| T = {abs(theta) * t_end:g} exceeds {EXP_GUARD:g}")
    G = np.asarray(noise, dtype=float)
    n = G.shape[-1] - 1
    dt = t_end / n
    t = np.arange(n + 1) * dt
    drift = mu * np.expm1(theta * t)
    if scheme == "euler":
        # increment-sum form: X_{i+1} = (1 + theta dt) X_i + theta mu dt + dG_i
        inc = np.zeros_like(G)
        inc[..., 1:] = theta * mu * dt + np.diff(G, axis=-1)
        return lfilter([1.0], [1.0, -(1.0 + theta * dt)], inc, axis=-1)
    a = math.exp(theta * dt)
    src = np.zeros_like(G)
    if scheme == "trapezoid":
        src[..., 1:] = 0.5 * dt * (a * G[..., :-1] + G[..., 1:])
    else:
        src[..., 1:] = dt * math.exp(0.5 * theta * dt) * 0.5 * (G[..., :-1] + G[..., 1:])
    integral = lfilter([1.0], [1.0, -a], src, axis=-1)
    return drift + G + theta * integral


def linear_sde_path(params: SdeParams, noise: GridPath, scheme: str = "trapezoid") -> GridPath:
    """Pathwise solution of ``dX = theta (mu + X) dt + dG``, ``X_0 = 0``.

    ``mu = 0`` gives the OU path; ``theta -> -theta`` with ``mu = 0`` gives
    ``ζ_t = ∫ e^{-theta (t-s)} dG_s``.
    """
    if noise.values[0] != 0:
        raise ValidationError("noise path must start at 0")
    x = solve_linear_sde(params.theta, params.mu, noise.values, noise.grid.t_end, scheme)
    return GridPath(noise.grid, x)


def zeta_path(theta: float, noise: GridPath, scheme: str = "trapezoid") -> GridPath:
    """``ζ_t = ∫_0^t e^{-theta (t-s)} dG_s`` on the grid."""
    return linear_sde_path(SdeParams(-theta, 0.0), noise, scheme)


def paths_from(values: np.ndarray, grid: Grid) -> Sequence[GridPath]:
    return [GridPath(grid, row) for row in np.atleast_2d(values)]
