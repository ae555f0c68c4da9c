"""Limit constants by quadrature and Monte Carlo checks of the limit laws.

Quadrature side: the second moment of ``ζ_t = ∫_0^t e^{-θ(t-s)} dG_s``, the
constant ``σ_∞² = E[(∫_0^∞ e^{-θs} G_s ds)²]``, the structure-function
ratio and the covariance decay sequences.

Monte Carlo side: normalized estimation errors are compared, by two-sample
Kolmogorov-Smirnov tests and quartile summaries, with samples from the
theoretical limit laws

* ``T^β e^{θT}(θ̂ - θ) -> N2 / N3`` with ``N2 ~ N(0, 4θ²σ_G²)`` and
  ``N3 ~ N(μ, θ²σ_∞²)``,
* ``T^{1-H}(μ̂ - μ) -> N(0, λ²/θ²)``,
* ``T^β e^{θT}(θ̃ - θ) -> (2σ_G/σ_∞) × standard Cauchy`` for the OU model.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels as kn
from .exceptions import DomainError, ExperimentInvalid, NonConvergence, ValidationError
from .estimate import ou_statistics, scaled_theta_error, vasicek_statistics
from .kernels import Kernel, limit_constants
from .quadrature import graded_rule, layers_for, refine, split_rule
from .rkhs import exp_window, indicator, inner_product
from .simulate import Grid, gaussian_paths, map_chunks, replication_rng, solve_linear_sde
from .validation import check_int, check_real

KS_C_1PCT = 1.628
THETA_T_CAP = 40.0
DEGENERATE_LIMIT = 0.01
IQR_TOLERANCE = 0.15
LAW_OVERSAMPLING = 10


# -- quadrature constants -------------------------------------------------------

def zeta_second_moment(kernel: Kernel, theta: float, t: float) -> float:
    """``E[ζ_t²] = <h, h>`` with ``h(s) = e^{-θ(t-s)} 1_{[0,t)}(s)``."""
    theta = check_real(theta, "theta", positive=True)
    if not (t > 0):
        raise DomainError("t must be positive")
    h = exp_window(theta, t)
    return inner_product(kernel, h, h)


def _exp_weighted_cov(kernel, theta, L, level):
    """``2 ∫_0^L e^{-θt} ∫_0^t e^{-θs} R(s, t) ds dt`` at one quadrature level."""
    expo = min(2 * kernel.hurst + 1, 1.0)
    layers = layers_for(expo, level)
    rule = split_rule([0.0, L], level, layers, panel_length=1.0 / theta)
    t, w = rule.x, rule.w
    xr, _, wr = graded_rule(level, layers)
    s = t[:, None] * xr[None, :]
    inner = np.sum(t[:, None] * wr[None, :] * np.exp(-theta * s) * kn._cov(kernel, s, t[:, None]),
                   axis=1)
    return 2.0 * float(np.sum(w * np.exp(-theta * t) * inner))


def sigma_infinity(kernel: Kernel, theta: float, *, rtol: float = 1e-10,
                   truncation: float | None = None) -> float:
    """``σ_∞² = ∫∫_{[0,∞)²} e^{-θ(s+t)} R(s, t) ds dt`` by truncated quadrature.

    The truncation ``L`` grows from ``10/θ`` by factors of 1.5 until the tail
    bound ``e^{-θL} L^{H+1}`` drops below ``1e-10`` of the running value.

    Raises
    ------
    NonConvergence
        If no truncation up to ``1000/θ`` satisfies the tail bound.
    """
    theta = check_real(theta, "theta", positive=True)
    H = kernel.hurst

    def at(L):
        return refine(lambda lv: _exp_weighted_cov(kernel, theta, L, lv), rtol=rtol,
                      atol=1e-300, what="sigma_infinity")

    if truncation is not None:
        return at(check_real(truncation, "truncation", positive=True))
    L = 10.0 / theta
    while L <= 1000.0 / theta:
        value = at(L)
        if math.exp(-theta * L) * L ** (H + 1) < 1e-10 * abs(value):
            return value
        L *= 1.5
    raise NonConvergence("sigma_infinity: truncation ladder exhausted")


def structure_ratio(kernel: Kernel, T: float, n: int) -> float:
    """Max over grid pairs of ``E[(G_s - G_t)²] / |s - t|^{2H}`` on ``iT/n``."""
    T = check_real(T, "T", positive=True)
    n = check_int(n, "n", minimum=16)
    t = np.arange(n + 1) * (T / n)
    C = kn.cov_matrix(kernel, t)
    d = np.diag(C)
    i, j = np.triu_indices(n + 1, k=1)
    num = d[i] + d[j] - 2 * C[i, j]
    return float(np.max(num / np.abs(t[j] - t[i]) ** (2 * kernel.hurst)))


@dataclass(frozen=True)
class DecaySeries:
    t: tuple
    cov_ratio: tuple        # E[G_s G_t] / t^H
    zeta_cross: tuple       # E[G_s ζ_t]
    zeta_diag: tuple        # E[G_t ζ_t] / t^H
    decreasing: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _decreasing_tail(seq) -> bool:
    k = math.ceil(len(seq) / 2) + 1
    tail = np.abs(np.asarray(seq[-k:], dtype=float))
    return bool(np.all(np.diff(tail) < 0)) if tail.size > 1 else True


def covariance_decay(kernel: Kernel, theta: float, s: float,
                     t_list: Sequence[float]) -> DecaySeries:
    """Decay sequences of covariances with the noise and with ``ζ``.

    The ``decreasing`` flags report whether each magnitude decreases over
    the upper half (plus one point) of ``t_list``.
    """
    theta = check_real(theta, "theta", positive=True)
    s = check_real(s, "s", nonnegative=True)
    t = np.asarray([check_real(x, "t", positive=True) for x in t_list])
    if t.size == 0 or np.any(np.diff(t) <= 0):
        raise ValidationError("t_list must be non-empty and strictly increasing")
    if s > 0 and t[0] <= 2 * s:
        raise ValidationError("t_list must start beyond 2 s")
    H = kernel.hurst
    if s == 0:
        zeros = tuple(0.0 for _ in t)
        seqs = (zeros, zeros)
    else:
        g_s = indicator(0.0, s)
        seqs = (
            tuple(kn.cov(kernel, s, x) / x ** H for x in t),
            tuple(inner_product(kernel, g_s, exp_window(theta, x)) for x in t),
        )
    diag = tuple(inner_product(kernel, indicator(0.0, x), exp_window(theta, x)) / x ** H
                 for x in t)
    flags = {name: _decreasing_tail(seq) for name, seq in
             zip(("cov_ratio", "zeta_cross", "zeta_diag"), seqs + (diag,))}
    return DecaySeries(tuple(t.tolist()), seqs[0], seqs[1], diag, flags)


# -- theoretical laws -------------------------------------------------------------

@dataclass(frozen=True)
class TheoreticalLaw:
    """Limit law: ``normal``, ``ratio`` (N2/N3) or ``cauchy`` (scaled)."""

    kind: str
    params: tuple

    @classmethod
    def normal(cls, mean: float, variance: float) -> "TheoreticalLaw":
        check_real(variance, "variance", positive=True)
        return cls("normal", (float(mean), float(variance)))

    @classmethod
    def ratio(cls, theta: float, mu: float, sigma_g2: float, sigma_inf2: float) -> "TheoreticalLaw":
        check_real(sigma_g2, "sigmaG2", positive=True)
        check_real(sigma_inf2, "sigma_inf2", positive=True)
        return cls("ratio", (float(theta), float(mu), float(sigma_g2), float(sigma_inf2)))

    @classmethod
    def cauchy(cls, scale: float) -> "TheoreticalLaw":
        check_real(scale, "scale", positive=True)
        return cls("cauchy", (float(scale),))

    @property
    def heavy_tailed(self) -> bool:
        return self.kind in ("ratio", "cauchy")

    def iqr(self) -> float | None:
        if self.kind == "normal":
            return 2 * stats.norm.ppf(0.75) * math.sqrt(self.params[1])
        if self.kind == "cauchy":
            return 2 * self.params[0]
        return None

    def to_dict(self) -> dict:
        names = {"normal": ("mean", "variance"),
                 "ratio": ("theta", "mu", "sigmaG2", "sigma_inf2"),
                 "cauchy": ("scale",)}[self.kind]
        return {"kind": self.kind, **dict(zip(names, self.params))}


def theoretical_law_sample(law: TheoreticalLaw, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """``n`` i.i.d. draws from ``law`` (Philox stream ``(seed, (1, stream))``)."""
    n = check_int(n, "n", minimum=1)
    rng = replication_rng(seed, stream, stream=1)
    if law.kind == "normal":
        mean, var = law.params
        return mean + math.sqrt(var) * rng.standard_normal(n)
    if law.kind == "cauchy":
        return law.params[0] * np.tan(np.pi * (rng.random(n) - 0.5))
    theta, mu, sg2, si2 = law.params
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = n - filled
        n2 = 2 * abs(theta) * math.sqrt(sg2) * rng.standard_normal(m)
        n3 = mu + abs(theta) * math.sqrt(si2) * rng.standard_normal(m)
        keep = np.abs(n3) >= 1e-300
        k = int(keep.sum())
        out[filled:filled + k] = n2[keep] / n3[keep]
        filled += k
    return out


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and the asymptotic 1% critical value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValidationError("both samples must be non-empty")
    stat = float(stats.ks_2samp(a, b).statistic)
    n, m = a.size, b.size
    return stat, KS_C_1PCT * math.sqrt((n + m) / (n * m))


# -- Monte Carlo experiments -------------------------------------------------------

TARGETS = {"vasicek": ("theta", "mu", "alpha"), "ou": ("theta_ou",)}


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo experiment settings.

    ``model="vasicek"`` estimates ``(theta, alpha, mu)`` and normalizes with
    the joint limit law; ``model="ou"`` sets ``mu = 0`` and uses the
    Cauchy limit of the OU estimator.
    """

    kernel: Kernel
    theta: float
    mu: float = 0.0
    T: float = 10.0
    n: int = 2000
    replications: int = 1000
    seed: int = 42
    model: str = "vasicek"
    targets: tuple | None = None
    scheme: str = "trapezoid"

    def __post_init__(self):
        theta = check_real(self.theta, "theta", positive=True)
        T = check_real(self.T, "T", positive=True)
        check_real(self.mu, "mu")
        if theta * T > THETA_T_CAP:
            raise ValidationError(f"theta*T = {theta * T:g} exceeds the cap {THETA_T_CAP:g}")
        check_int(self.n, "n", minimum=2)
        check_int(self.replications, "replications", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        if self.model not in TARGETS:
            raise ValidationError(f"model must be one of {sorted(TARGETS)}")
        if self.model == "ou" and self.mu != 0:
            raise ValidationError("the OU model has mu = 0")
        targets = tuple(self.targets) if self.targets else TARGETS[self.model]
        bad = [t for t in targets if t not in TARGETS[self.model]]
        if bad:
            raise ValidationError(f"unknown targets {bad} for model {self.model!r}")
        object.__setattr__(self, "targets", targets)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(), "theta": self.theta, "mu": self.mu,
            "T": self.T, "n": self.n, "replications": self.replications,
            "seed": self.seed, "model": self.model, "targets": list(self.targets),
            "scheme": self.scheme,
        }


@dataclass(frozen=True)
class TargetSummary:
    n: int
    q1: float
    median: float
    q3: float
    ks: float
    threshold: float
    ks_pass: bool
    law: dict
    law_q1: float
    law_median: float
    law_q3: float
    iqr_ratio: float
    iqr_pass: bool | None
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass(frozen=True)
class MCReport:
    config: dict
    constants: dict
    targets: dict
    degenerate: tuple
    rank_correlation: float | None
    seeds: dict
    samples: dict = field(repr=False, compare=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "constants": self.constants,
            "targets": {k: v.to_dict() for k, v in self.targets.items()},
            "degenerate": list(self.degenerate),
            "rank_correlation": self.rank_correlation,
            "seeds": self.seeds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def samples_csv(self) -> str:
        lines = ["replication,target,value"]
        for name in sorted(self.samples):
            reps, vals = self.samples[name]
            lines.extend(f"{r},{name},{v:.17g}" for r, v in zip(reps, vals))
        return "\n".join(lines) + "\n"


def _quartiles(x):
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return float(q1), float(med), float(q3)


def _summarize(sample, law, seed, stream):
    ref = theoretical_law_sample(law, LAW_OVERSAMPLING * sample.size, seed, stream)
    ks, thr = ks_two_sample(sample, ref)
    q1, med, q3 = _quartiles(sample)
    l1, lm, l3 = _quartiles(ref)
    exact_iqr = law.iqr()
    law_iqr = exact_iqr if exact_iqr is not None else l3 - l1
    iqr_ratio = (q3 - q1) / law_iqr
    iqr_pass = abs(iqr_ratio - 1) <= IQR_TOLERANCE if law.heavy_tailed else None
    passed = ks < thr and (iqr_pass is not False)
    return TargetSummary(sample.size, q1, med, q3, ks, thr, ks < thr, law.to_dict(),
                         l1, lm, l3, float(iqr_ratio), iqr_pass, bool(passed))


def _laws(cfg: MCConfig):
    lc = limit_constants(cfg.kernel, cfg.theta)
    sigma_inf2 = sigma_infinity(cfg.kernel, cfg.theta)
    theta = cfg.theta
    laws = {
        "theta": TheoreticalLaw.ratio(theta, cfg.mu, lc.sigmaG2, sigma_inf2),
        "mu": TheoreticalLaw.normal(0.0, lc.lambda2 / theta ** 2),
        "alpha": TheoreticalLaw.normal(0.0, lc.lambda2),
        "theta_ou": TheoreticalLaw.cauchy(2 * math.sqrt(lc.sigmaG2 / sigma_inf2)),
    }
    constants = {"beta": lc.beta, "lambda2": lc.lambda2, "sigmaG2": lc.sigmaG2,
                 "sigma_inf2": sigma_inf2, "hurst": lc.hurst,
                 "cauchy_scale": laws["theta_ou"].params[0]}
    return laws, constants, lc


def _replicate(cfg: MCConfig, lc, grid: Grid, lo: int, hi: int):
    G = gaussian_paths(cfg.kernel, grid, cfg.seed, hi - lo, start=lo, threads=1)
    T = cfg.T
    out = {}
    if cfg.model == "vasicek":
        X = solve_linear_sde(cfg.theta, cfg.mu, G, T, cfg.scheme)
        theta_hat, alpha_hat, _, bad = vasicek_statistics(X, T)
        bad = bad | (theta_hat == 0)
        th = np.where(bad, cfg.theta, theta_hat)
        out["theta"] = np.where(bad, np.nan, scaled_theta_error(th, cfg.theta, lc.beta, T)[0])
        rate = T ** (1 - lc.hurst)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_hat = alpha_hat / th
        out["mu"] = np.where(bad, np.nan, rate * (mu_hat - cfg.mu))
        out["alpha"] = np.where(bad, np.nan, rate * (alpha_hat - cfg.theta * cfg.mu))
    else:
        Y = solve_linear_sde(cfg.theta, 0.0, G, T, cfg.scheme)
        est, bad = ou_statistics(Y, T)
        th = np.where(bad, cfg.theta, est)
        out["theta_ou"] = np.where(bad, np.nan, scaled_theta_error(th, cfg.theta, lc.beta, T)[0])
    return out, bad


def mc_experiment(config: MCConfig, *, threads: int | None = None,
                  keep_samples: bool = True) -> MCReport:
    """Simulate, estimate, normalize and compare with the limit laws.

    Raises
    ------
    ExperimentInvalid
        If more than 1% of the replications give degenerate estimates.
    """
    cfg = config
    laws, constants, lc = _laws(cfg)
    grid = Grid(cfg.T, cfg.n)
    N = cfg.replications
    parts = map_chunks(lambda lo, hi: _replicate(cfg, lc, grid, lo, hi), N, threads)
    bad = np.concatenate([p[1] for p in parts])
    degenerate = tuple(int(i) for i in np.flatnonzero(bad))
    if len(degenerate) > DEGENERATE_LIMIT * N:
        raise ExperimentInvalid(
            f"{len(degenerate)} of {N} replications gave degenerate estimates")
    ok = ~bad
    reps = np.flatnonzero(ok)
    summaries, samples = {}, {}
    for k, name in enumerate(cfg.targets):
        values = np.concatenate([p[0][name] for p in parts])[ok]
        summaries[name] = _summarize(values, laws[name], cfg.seed, k)
        if keep_samples:
            samples[name] = (reps, values)
    rank = None
    if cfg.model == "vasicek" and ok.sum() > 2:
        th = np.concatenate([p[0]["theta"] for p in parts])[ok]
        mu = np.concatenate([p[0]["mu"] for p in parts])[ok]
        rank = float(stats.spearmanr(th, mu).statistic)
    seeds = {"seed": cfg.seed, "noise_streams": "SeedSequence(seed, spawn_key=(0, r))",
             "law_streams": {name: k for k, name in enumerate(cfg.targets)}}
    return MCReport(cfg.to_dict(), constants, summaries, degenerate, rank, seeds, samples)
