"""Covariance families of the driving Gaussian noise.

Seven self-similar families plus the fractional Brownian motion reference
kernel.  Every family is described by an immutable :class:`Kernel`; the
module-level functions evaluate the covariance, the first derivative in
``t`` viewed as a function of ``s`` (split into a continuous part and a
single atom on the diagonal), the mixed second-derivative density and the
limit constants that govern the estimators' asymptotics.

Families that carry an fBm component (``EX5``, ``EX6``, ``EX7``) expose the
*difference* with the fBm derivative, because only that difference is of
bounded variation in ``s`` when ``H < 1/2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple

import numpy as np

from .exceptions import DomainError, ValidationError


class Family(str, enum.Enum):
    EX1 = "ex1"
    EX2 = "ex2"
    EX3 = "ex3"
    EX4 = "ex4"
    EX5 = "ex5"
    EX6 = "ex6"
    EX7 = "ex7"
    FBM = "fbm"


class TypeClass(str, enum.Enum):
    """Regularity class of the derivative ``s -> dR(s, t)/dt``.

    T1: absolutely continuous.  T2: absolutely continuous plus one atom at
    ``s = t``.  T3: absolutely continuous after subtracting the fBm
    derivative.  T4: a single atom after subtracting the fBm derivative.
    """

    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"


_TYPE = {
    Family.EX1: TypeClass.T1,
    Family.EX2: TypeClass.T1,
    Family.EX3: TypeClass.T2,
    Family.EX4: TypeClass.T2,
    Family.EX5: TypeClass.T3,
    Family.EX6: TypeClass.T3,
    Family.EX7: TypeClass.T4,
}

_FIELDS = {
    Family.EX1: ("H",),
    Family.EX2: ("Hp", "K"),
    Family.EX3: ("H",),
    Family.EX4: ("H",),
    Family.EX5: ("Hp", "K"),
    Family.EX6: ("H", "a", "b"),
    Family.EX7: ("H",),
    Family.FBM: ("H",),
}

_RANGE_TEXT = {
    Family.EX1: "ex1 requires H ∈ (0,½)∪(½,1)",
    Family.EX2: "ex2 requires H' ∈ (0,1) and K ∈ (0,1)",
    Family.EX3: "ex3 requires H ∈ (0,½)",
    Family.EX4: "ex4 requires H ∈ (0,½)",
    Family.EX5: "ex5 requires H' ∈ (0,1), K ∈ (0,2) and H'K ∈ (0,1)",
    Family.EX6: "ex6 requires H ∈ (0,1) and (a,b) ≠ (0,0)",
    Family.EX7: "ex7 requires H ∈ (0,½)",
    Family.FBM: "fbm requires H ∈ (0,1)",
}

# Ex1 has two covariance branches; H = 1/2 is excluded.
_HALF_EXCLUSION = 1e-9


def _open(x, lo, hi):
    return x is not None and math.isfinite(x) and lo < x < hi


@dataclass(frozen=True)
class Kernel:
    """A validated covariance family.

    Parameters
    ----------
    family : Family or str
        One of ``ex1`` ... ``ex7`` or ``fbm``.
    H, Hp, K, a, b : float, optional
        Family parameters.  ``ex2`` and ``ex5`` take ``Hp`` (H') and ``K``;
        ``ex6`` takes ``H``, ``a`` and ``b``; every other family takes ``H``.
    """

    family: Family
    H: float | None = None
    Hp: float | None = None
    K: float | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            raise ValidationError(f"unknown kernel family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        needed = _FIELDS[fam]
        for name in ("H", "Hp", "K", "a", "b"):
            value = getattr(self, name)
            if name in needed:
                if value is None:
                    raise ValidationError(f"{fam.value} requires field {name!r}")
                object.__setattr__(self, name, float(value))
            elif value is not None:
                raise ValidationError(f"{fam.value} does not take field {name!r}")
        if not self._valid():
            raise ValidationError(_RANGE_TEXT[fam])

    def _valid(self) -> bool:
        fam, H = self.family, self.H
        if fam is Family.EX1:
            return _open(H, 0, 1) and abs(H - 0.5) >= _HALF_EXCLUSION
        if fam in (Family.EX3, Family.EX4, Family.EX7):
            return _open(H, 0, 0.5)
        if fam is Family.EX2:
            return _open(self.Hp, 0, 1) and _open(self.K, 0, 1)
        if fam is Family.EX5:
            return (_open(self.Hp, 0, 1) and _open(self.K, 0, 2)
                    and _open(self.Hp * self.K, 0, 1))
        if fam is Family.EX6:
            finite = all(math.isfinite(v) for v in (self.a, self.b))
            return _open(H, 0, 1) and finite and (self.a, self.b) != (0.0, 0.0)
        return _open(H, 0, 1)

    @property
    def hurst(self) -> float:
        """Effective self-similarity exponent (``H'K`` for ex2/ex5)."""
        if self.family in (Family.EX2, Family.EX5):
            return self.Hp * self.K
        return self.H

    @property
    def type_class(self) -> TypeClass | None:
        return classify(self)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family.value}
        for name in _FIELDS[self.family]:
            out[name] = getattr(self, name)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Kernel":
        if not isinstance(data, Mapping) or "family" not in data:
            raise ValidationError("kernel parameters need a 'family' field")
        extra = set(data) - {"family", "H", "Hp", "K", "a", "b"}
        if extra:
            raise ValidationError(f"unknown kernel fields: {sorted(extra)}")
        return cls(**dict(data))

    def __str__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in self.to_dict().items() if k != "family")
        return f"{self.family.value}({args})"


class NBVEval(NamedTuple):
    """Evaluation of the normalized BV function ``s -> dR(s, t)/dt``.

    ``value`` is the right-continuous value at ``s``; the single atom (if any)
    sits at ``jump_at = t`` and has mass ``jump_size``.
    """

    value: float
    jump_at: float | None
    jump_size: float


class LimitConstants(NamedTuple):
    beta: float
    lambda2: float
    sigmaG2: float
    hurst: float
    lambda2_table: float
    lambda2_mismatch: bool


def classify(kernel: Kernel) -> TypeClass | None:
    """Return the T1-T4 class of ``kernel``; ``None`` for the fBm reference."""
    return _TYPE.get(kernel.family)


def _as_arrays(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return s, t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _ex6_coeffs(kernel):
    a, b = kernel.a, kernel.b
    den = a * a + b * b
    return (a + b) ** 2 / (2 * den), a * b / den


def fbm_cov(H, s, t):
    """Covariance of fBm with Hurst index ``H``."""
    s, t = _as_arrays(s, t)
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


def fbm_dt(H, s, t, diff=None):
    """``dR^B(s, t)/dt = H [t^{2H-1} - |t-s|^{2H-1} sgn(t-s)]`` for ``t > 0``.

    ``diff`` optionally supplies ``t - s`` computed more accurately than
    the plain subtraction.
    """
    s, t = _as_arrays(s, t)
    d = t - s if diff is None else np.asarray(diff, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        sing = np.where(d == 0, 0.0, np.abs(d) ** (2 * H - 1) * np.sign(d))
        return H * (t ** (2 * H - 1) - sing)


def _cov(kernel: Kernel, s, t):
    fam = kernel.family
    H = kernel.hurst
    two_h = 2 * H
    if fam is Family.EX1:
        r = 0.5 * (t ** two_h + s ** two_h - (t + s) ** two_h)
        return r if H < 0.5 else -r
    if fam is Family.EX2:
        hp2 = 2 * kernel.Hp
        return t ** two_h + s ** two_h - (t ** hp2 + s ** hp2) ** kernel.K
    if fam is Family.EX3:
        return 0.5 * ((t + s) ** two_h - np.maximum(s, t) ** two_h)
    if fam is Family.EX4:
        return math.gamma(1 - two_h) * np.minimum(s, t) ** two_h
    if fam is Family.EX5:
        hp2 = 2 * kernel.Hp
        return ((s ** hp2 + t ** hp2) ** kernel.K
                - 0.5 * ((t + s) ** two_h + np.abs(t - s) ** two_h))
    if fam is Family.EX6:
        A, B = _ex6_coeffs(kernel)
        return (A * (s ** two_h + t ** two_h) - B * (s + t) ** two_h
                - 0.5 * np.abs(t - s) ** two_h)
    if fam is Family.EX7:
        return 0.5 * (np.maximum(s, t) ** two_h - np.abs(t - s) ** two_h)
    return fbm_cov(H, s, t)


def cov(kernel: Kernel, s, t):
    """Covariance ``R(s, t) = E[G_s G_t]`` (broadcasts over arrays)."""
    s, t = _as_arrays(s, t)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("covariance is defined for s, t >= 0")
    # G_0 = 0 exactly, not just up to cancellation error
    return _out(np.where((s == 0) | (t == 0), 0.0, _cov(kernel, s, t)))


def cov_matrix(kernel: Kernel, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return np.asarray(cov(kernel, times[:, None], times[None, :]))


def dt_parts(kernel: Kernel, s, t):
    """Continuous part and diagonal atom of ``s -> dR(s, t)/dt``.

    Returns ``(cont, jump)`` with ``cont`` broadcast over ``(s, t)`` and
    ``jump`` over ``t``.  For T3/T4 families both refer to the difference
    with the fBm derivative.  The full right-continuous value at ``s`` is
    ``cont + jump * (s >= t)``.  Requires ``t > 0``.
    """
    s, t = _as_arrays(s, t)
    fam = kernel.family
    H = kernel.hurst
    p = 2 * H - 1
    zero = np.zeros(np.broadcast(s, t).shape)
    no_jump = np.zeros(t.shape)
    if fam is Family.EX1:
        c = H * (t ** p - (t + s) ** p)
        return (c if H < 0.5 else -c), no_jump
    if fam is Family.EX2:
        hp2 = 2 * kernel.Hp
        K = kernel.K
        c = (2 * H * t ** p
             - hp2 * K * t ** (hp2 - 1) * (t ** hp2 + s ** hp2) ** (K - 1))
        return c, no_jump
    if fam is Family.EX3:
        return H * (t + s) ** p - H * t ** p + zero, H * t ** p
    if fam is Family.EX4:
        return zero, 2 * H * math.gamma(1 - 2 * H) * t ** p
    if fam is Family.EX5:
        hp2 = 2 * kernel.Hp
        c = H * (2 * (s ** hp2 + t ** hp2) ** (kernel.K - 1) * t ** (hp2 - 1)
                 - (t + s) ** p - t ** p)
        return c, no_jump
    if fam is Family.EX6:
        _, B = _ex6_coeffs(kernel)
        return 2 * H * B * (t ** p - (t + s) ** p) + zero, no_jump
    if fam is Family.EX7:
        return zero, -H * t ** p
    return fbm_dt(H, s, t), no_jump


def dcov_dt(kernel: Kernel, s: float, t: float) -> NBVEval:
    """Evaluate the NBV derivative ``s -> dR(s, t)/dt`` at one point.

    For T3/T4 families this is the difference with the fBm derivative.
    """
    if t <= 0:
        raise DomainError("dR/dt is defined only for t > 0")
    if s < 0:
        raise DomainError("s must be non-negative")
    cont, jump = dt_parts(kernel, s, t)
    jump = float(jump)
    value = float(cont) + (jump if s >= t else 0.0)
    if jump == 0.0:
        return NBVEval(value, None, 0.0)
    return NBVEval(value, float(t), jump)


def _density(kernel: Kernel, s, t):
    fam = kernel.family
    H = kernel.hurst
    q = 2 * H - 2
    zero = np.zeros(np.broadcast(s, t).shape)
    if fam is Family.EX1:
        return H * abs(2 * H - 1) * (t + s) ** q
    if fam is Family.EX2:
        Hp, K = kernel.Hp, kernel.K
        return ((2 * Hp) ** 2 * K * (1 - K) * (t * s) ** (2 * Hp - 1)
                * (t ** (2 * Hp) + s ** (2 * Hp)) ** (K - 2))
    if fam is Family.EX3:
        return H * (2 * H - 1) * (t + s) ** q
    if fam in (Family.EX4, Family.EX7):
        return zero
    if fam is Family.EX5:
        Hp, K = kernel.Hp, kernel.K
        return H * (4 * Hp * (K - 1) * (s ** (2 * Hp) + t ** (2 * Hp)) ** (K - 2)
                    * (t * s) ** (2 * Hp - 1) - (2 * H - 1) * (s + t) ** q)
    if fam is Family.EX6:
        _, B = _ex6_coeffs(kernel)
        return -2 * H * (2 * H - 1) * B * (t + s) ** q + zero
    with np.errstate(divide="ignore"):
        return H * (2 * H - 1) * np.abs(t - s) ** q


def density(kernel: Kernel, s, t):
    """Density of the continuous part of ``d_s dR(s, t)/dt``.

    T1: the mixed derivative of ``R``; T3: that of ``R - R^B``; T2/T4: the
    density of the continuous part (zero for ex4 and ex7).  For the fBm
    reference it is ``H(2H-1)|t-s|^{2H-2}``.
    """
    s, t = _as_arrays(s, t)
    if np.any(s <= 0) or np.any(t <= 0):
        raise DomainError("density is evaluated only for s, t > 0")
    return _out(_density(kernel, s, t))


def diagonal_weight(kernel: Kernel, t):
    """Mass of the diagonal atom: the weight of ``∫ f g w dt`` in <f, g>."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("diagonal weight is defined for t > 0")
    if kernel.family not in (Family.EX3, Family.EX4, Family.EX7):
        return _out(np.zeros(t.shape))
    return _out(dt_parts(kernel, 0.0, t)[1])


def envelope_constant(kernel: Kernel) -> float:
    """Constant ``C`` with ``|density(s, t)| <= C (ts)^{H-1}`` on (0, inf)^2."""
    fam = kernel.family
    H = kernel.hurst
    if fam is Family.FBM:
        raise DomainError("the fBm density has no (ts)^{H-1} envelope")
    c1 = c2 = 0.0
    K = 0.0
    if fam in (Family.EX1, Family.EX3):
        c1 = H * abs(2 * H - 1)
    elif fam is Family.EX2:
        K = kernel.K
        c2 = (2 * kernel.Hp) ** 2 * K * (1 - K)
    elif fam is Family.EX5:
        K = kernel.K
        c1 = H * abs(2 * H - 1)
        c2 = 4 * kernel.Hp ** 2 * K * abs(K - 1)
    elif fam is Family.EX6:
        c1 = 2 * H * abs(2 * H - 1) * abs(_ex6_coeffs(kernel)[1])
    return c1 * 2.0 ** (2 * H - 2) + c2 * 2.0 ** (K - 2)


def _lambda2_table(kernel: Kernel) -> float:
    fam = kernel.family
    H = kernel.hurst
    if fam in (Family.EX1, Family.EX3):
        return abs(1 - 2 ** (2 * H - 1))
    if fam is Family.EX2:
        return 2 - 2 ** kernel.K
    if fam is Family.EX4:
        return math.gamma(1 - 2 * H)
    if fam is Family.EX5:
        return 2 ** kernel.K - 2 ** (2 * H - 1)
    if fam is Family.EX6:
        a, b = kernel.a, kernel.b
        return ((a + b) ** 2 - 2 ** (2 * H) * a * b) / (a * a + b * b)
    if fam is Family.EX7:
        return 0.5
    return 1.0


def _beta(kernel: Kernel) -> float:
    H = kernel.hurst
    cls = classify(kernel)
    if cls is TypeClass.T1:
        return 1 - H
    if cls is TypeClass.T2:
        return 0.5 - H
    return 0.0


def _sigma_g2(kernel: Kernel, theta: float) -> float:
    fam = kernel.family
    H = kernel.hurst
    if fam is Family.EX1:
        return H * abs(2 * H - 1) * 2 ** (2 * H - 2) / theta ** 2
    if fam is Family.EX2:
        return 2 ** kernel.K * kernel.K * (1 - kernel.K) * kernel.Hp ** 2 / theta ** 2
    if fam is Family.EX3:
        return H / (2 * theta)
    if fam is Family.EX4:
        return H * math.gamma(1 - 2 * H) / theta
    return theta ** (-2 * H) * H * math.gamma(2 * H)


def limit_constants(kernel: Kernel, theta: float) -> LimitConstants:
    """Rate exponent and limit constants for drift ``theta > 0``.

    ``lambda2`` is the directly evaluated ``R(1, 1)``, which by
    self-similarity equals ``R(t, t) / t^{2H}`` for every ``t``.  The
    tabulated value is returned alongside; ``lambda2_mismatch`` is set when
    the two differ by more than ``1e-12`` (this happens for ex3).
    """
    if not (theta > 0 and math.isfinite(theta)):
        raise DomainError("theta must be a positive finite number")
    direct = float(_cov(kernel, np.float64(1.0), np.float64(1.0)))
    table = _lambda2_table(kernel)
    return LimitConstants(
        beta=_beta(kernel),
        lambda2=direct,
        sigmaG2=_sigma_g2(kernel, theta),
        hurst=kernel.hurst,
        lambda2_table=table,
        lambda2_mismatch=abs(direct - table) > 1e-12,
    )


def catalog() -> list[Kernel]:
    """One representative kernel per family, as used by the CLI listing."""
    return [
        Kernel(Family.EX1, H=0.3),
        Kernel(Family.EX2, Hp=0.5, K=0.5),
        Kernel(Family.EX3, H=0.25),
        Kernel(Family.EX4, H=0.25),
        Kernel(Family.EX5, Hp=0.5, K=0.5),
        Kernel(Family.EX6, H=0.4, a=1.0, b=2.0),
        Kernel(Family.EX7, H=0.25),
    ]
