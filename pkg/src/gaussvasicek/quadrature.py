"""Composite Gauss-Legendre rules with geometric grading at panel ends.

The integrands met in this package have algebraic endpoint singularities
of the form ``x^a`` with ``a > -1`` (and often ``a`` close to ``-1`` for
small Hurst indices).  A reference rule on ``[0, 1]`` is built from
``2**level`` uniform panels; the two outermost panels are additionally
split geometrically toward the interval end so that every layer sees a
smooth integrand.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import NonConvergence

GL_ORDER = 12
# geometric layers need a higher order: on a layer with end ratio 1/0.15 an
# x^(e-1) integrand converges like 2.27^(-2 order)
GRADED_ORDER = 20
GRADING_RATIO = 0.15
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-14
MAX_LEVEL = 14


@lru_cache(maxsize=None)
def gauss_legendre(order: int = GL_ORDER):
    """Nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


# innermost layer kept above ~1e-290 of the panel width, clear of underflow
MAX_LAYERS = int(290 * math.log(10.0) / math.log(1.0 / GRADING_RATIO))


def layers_for(exponent: float, level: int = 0) -> int:
    """Number of geometric layers needed for an ``x^(exponent-1)`` singularity.

    The untreated innermost layer of width ``d`` contributes roughly
    ``d**exponent``; the layer count keeps that below ``1e-13``.

    Raises
    ------
    NonConvergence
        If that needs layers below the double-precision range, which happens
        for exponents under about 0.045.
    """
    if not exponent > 0:
        raise NonConvergence(f"grading exponent must be positive, got {exponent}")
    exponent = min(exponent, 1.0)
    base = int(math.ceil(13.0 * math.log(10.0) / (exponent * math.log(1.0 / GRADING_RATIO))))
    if base > MAX_LAYERS:
        raise NonConvergence(
            f"an x^{exponent - 1:.3g} singularity needs {base} geometric layers, more than "
            f"the {MAX_LAYERS} that stay within double precision")
    return min(base + 2 * level, MAX_LAYERS)


def _graded_panel(width, layers, toward_left):
    """Rule on ``[0, width]`` graded geometrically toward 0 (or ``width``).

    Returns ``(nodes, complements, weights)`` with ``complements`` equal to
    ``width - nodes`` computed without cancellation.
    """
    x, w = gauss_legendre(GRADED_ORDER)
    edges = width * GRADING_RATIO ** np.arange(layers + 1)
    edges = np.append(edges, 0.0)[::-1]
    lo, hi = edges[:-1], edges[1:]
    h = (hi - lo)[:, None]
    near = (lo[:, None] + h * x[None, :]).ravel()
    far = ((width - hi)[:, None] + h * (1.0 - x)[None, :]).ravel()
    weights = (h * w[None, :]).ravel()
    if toward_left:
        return near, far, weights
    return far, near, weights


@lru_cache(maxsize=256)
def graded_rule(level: int, layers: int, left: bool = True, right: bool = True):
    """Reference rule on ``[0, 1]`` graded toward the requested ends.

    Returns read-only ``(nodes, complements, weights)`` where
    ``complements = 1 - nodes`` is accurate near 1.
    """
    x, w = gauss_legendre()
    panels = 2 ** level
    h = 1.0 / panels
    nodes, comps, weights = [], [], []

    def add(offset, width, n, c, ww):
        nodes.append(offset + n)
        # distance to 1: (1 - panel end) + distance to the panel end
        comps.append((1.0 - offset - width) + c)
        weights.append(ww)

    for k in range(panels):
        lo = k * h
        grade_l = left and k == 0
        grade_r = right and k == panels - 1
        if grade_l and grade_r:
            add(lo, 0.5 * h, *_graded_panel(0.5 * h, layers, True))
            add(lo + 0.5 * h, 0.5 * h, *_graded_panel(0.5 * h, layers, False))
        elif grade_l or grade_r:
            add(lo, h, *_graded_panel(h, layers, grade_l))
        else:
            add(lo, h, h * x, h * (1.0 - x), h * w)
    out = tuple(np.concatenate(a) for a in (nodes, comps, weights))
    for a in out:
        a.setflags(write=False)
    return out


class Rule(NamedTuple):
    """Quadrature nodes with their sub-interval ends and accurate offsets."""

    x: np.ndarray
    w: np.ndarray
    left: np.ndarray    # sub-interval start for each node
    right: np.ndarray   # sub-interval end for each node
    dl: np.ndarray      # x - left
    dr: np.ndarray      # right - x

    def offset(self, y):
        """``x - y`` without cancellation when ``y`` is a sub-interval end."""
        return np.where(self.left == y, self.dl,
                        np.where(self.right == y, -self.dr, self.x - y))


def split_rule(breaks, level: int, layers: int, panel_length: float = 1.0) -> Rule:
    """Rule for ``∫`` over ``[breaks[0], breaks[-1]]`` split at every break.

    Each sub-interval receives its own graded rule; sub-intervals longer than
    ``panel_length`` get proportionally more uniform panels.
    """
    breaks = np.unique(np.asarray(breaks, dtype=float))
    parts = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        length = b - a
        if length <= 0:
            continue
        extra = max(0, int(math.ceil(math.log2(max(length / panel_length, 1.0)))))
        n, c, w = graded_rule(level + extra, layers)
        parts.append((a + length * n, length * w, np.full(n.size, a), np.full(n.size, b),
                      length * n, length * c))
    if not parts:
        return Rule(*(np.empty(0) for _ in range(6)))
    return Rule(*(np.concatenate(col) for col in zip(*parts)))


def refine(estimate: Callable[[int], float], *, rtol: float = DEFAULT_RTOL,
           atol: float = DEFAULT_ATOL, start: int = 0,
           max_level: int = MAX_LEVEL, what: str = "integral") -> float:
    """Evaluate ``estimate(level)`` on increasing levels until two agree.

    Raises
    ------
    NonConvergence
        If no two successive levels agree within ``max(rtol*|v|, atol)``.
    """
    prev = estimate(start)
    change = float("inf")
    for level in range(start + 1, max_level + 1):
        cur = estimate(level)
        if not np.isfinite(cur):
            raise NonConvergence(f"{what}: non-finite value at level {level}")
        change = abs(cur - prev)
        if change <= max(rtol * abs(cur), atol):
            return float(cur)
        prev = cur
    raise NonConvergence(
        f"{what}: no convergence after {max_level} levels "
        f"(last change {change:.3e})"
    )
