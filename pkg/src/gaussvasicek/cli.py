"""Command-line interface: ``gauss-vasicek <subcommand> [options]``.

Exit codes: 0 success, 1 a verification gate failed, 2 invalid input,
3 numerical failure, 64 unknown subcommand.  Every run prints the resolved
seed on stderr.  Files are written through a temporary file and renamed,
so a failing run never leaves partial output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotics import (TARGETS, MCConfig, covariance_decay, mc_experiment,
                          zeta_second_moment)
from .estimate import VasicekEstimate, lse_ou, lse_vasicek
from .exceptions import (DegenerateDenominatorError, DomainError, IoError, MuUndefinedError,
                         NUMERICAL_ERRORS, SharedJumpError, ValidationError)
from .kernels import Family, Kernel, catalog, cov, limit_constants
from .rkhs import oracle_check
from .simulate import SCHEMES, Grid, GridPath, SdeParams, gaussian_path, linear_sde_path, zeta_path
from .validation import check_int, check_real

EXIT_OK, EXIT_GATE, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 3, 64
DEFAULT_SEED = 42
INPUT_ERRORS = (ValidationError, DomainError, SharedJumpError, IoError)
COMPUTE_ERRORS = NUMERICAL_ERRORS + (DegenerateDenominatorError, MuUndefinedError)

# parameter sets used by the verification subcommands
VERIFY_KERNELS = (
    Kernel(Family.EX1, H=0.3),
    Kernel(Family.EX1, H=0.75),
    Kernel(Family.EX2, Hp=0.5, K=0.5),
    Kernel(Family.EX3, H=0.25),
    Kernel(Family.EX4, H=0.25),
    Kernel(Family.EX5, Hp=0.5, K=0.5),
    Kernel(Family.EX5, Hp=0.5, K=1.5),
    Kernel(Family.EX6, H=0.4, a=1.0, b=2.0),
    Kernel(Family.EX7, H=0.25),
)
SELF_SIMILARITY_TIMES = (0.5, 1.0, 2.0, 7.0)


# -- configuration ----------------------------------------------------------------

_TOP_KEYS = {"kernel", "theta", "mu", "experiment", "output"}
_EXPERIMENT_KEYS = {"T", "n", "replications", "seed", "targets", "model", "scheme"}
_OUTPUT_KEYS = {"report", "samples"}


@dataclass(frozen=True)
class Config:
    """Validated experiment configuration with defaults filled in."""

    kernel: Kernel
    theta: float
    mu: float = 0.0
    T: float = 10.0
    n: int = 2000
    replications: int = 1000
    seed: int = DEFAULT_SEED
    model: str = "vasicek"
    targets: tuple = ()
    scheme: str = "trapezoid"
    output: dict = field(default_factory=dict)

    def to_mc(self) -> MCConfig:
        return MCConfig(self.kernel, self.theta, self.mu, self.T, self.n, self.replications,
                        self.seed, self.model, self.targets or None, self.scheme)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "theta": self.theta,
            "mu": self.mu,
            "experiment": {"T": self.T, "n": self.n, "replications": self.replications,
                           "seed": self.seed, "model": self.model,
                           "targets": list(self.targets), "scheme": self.scheme},
            "output": dict(self.output),
        }


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ValidationError(f"{where} must be a JSON object")
    extra = set(block) - allowed
    if extra:
        raise ValidationError(f"unknown {where} fields: {sorted(extra)}")


def config_from_dict(data: dict) -> Config:
    _check_keys(data, _TOP_KEYS, "config")
    for key in ("kernel", "theta"):
        if key not in data:
            raise ValidationError(f"config needs field {key!r}")
    kernel = Kernel.from_dict(data["kernel"])
    exp = data.get("experiment", {})
    _check_keys(exp, _EXPERIMENT_KEYS, "experiment")
    out = data.get("output", {})
    _check_keys(out, _OUTPUT_KEYS, "output")
    for key, value in out.items():
        if not isinstance(value, str):
            raise ValidationError(f"output.{key} must be a path string")
    model = exp.get("model", "vasicek")
    if model not in TARGETS:
        raise ValidationError(f"experiment.model must be one of {sorted(TARGETS)}")
    if exp.get("scheme", "trapezoid") not in SCHEMES:
        raise ValidationError(f"experiment.scheme must be one of {list(SCHEMES)}")
    cfg = Config(
        kernel=kernel,
        theta=check_real(data["theta"], "theta", positive=True),
        mu=check_real(data.get("mu", 0.0), "mu"),
        T=check_real(exp.get("T", 10.0), "experiment.T", positive=True),
        n=check_int(exp.get("n", 2000), "experiment.n", minimum=2),
        replications=check_int(exp.get("replications", 1000), "experiment.replications",
                               minimum=1),
        seed=check_int(exp.get("seed", DEFAULT_SEED), "experiment.seed"),
        model=model,
        targets=tuple(exp.get("targets") or TARGETS[model]),
        scheme=exp.get("scheme", "trapezoid"),
        output=dict(out),
    )
    cfg.to_mc()  # cross-field checks (theta*T cap, targets, OU mu)
    return cfg


def load_config(path: str) -> Config:
    """Read and validate a JSON configuration file.

    Raises
    ------
    IoError
        If the file cannot be read.
    ValidationError
        If the JSON is malformed or a field is out of range.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path!r}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r} is not valid JSON: {exc}") from None
    return config_from_dict(data)


# -- output helpers ----------------------------------------------------------------

def _stage(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    except OSError as exc:
        raise IoError(f"cannot write to {directory!r}: {exc.strerror or exc}") from None
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except BaseException:
        os.unlink(tmp)
        raise
    return tmp


def write_all(items) -> None:
    """Write ``(text, path)`` pairs; ``path=None`` goes to stdout.

    Every file is staged in a temporary file next to its target first and
    renamed only once all of them exist, so a failure leaves no output.
    """
    staged = []
    try:
        for text, path in items:
            if path:
                staged.append((_stage(path, text), path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for i, (tmp, path) in enumerate(staged):
        try:
            os.replace(tmp, path)
        except OSError as exc:
            for rest, _ in staged[i:]:
                os.unlink(rest)
            raise IoError(f"cannot write {path!r}: {exc.strerror or exc}") from None
    for text, path in items:
        if not path:
            sys.stdout.write(text)


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    write_all([(text, path)])


def _emit(text: str, path: str | None) -> None:
    write_all([(text, path)])


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc.strerror or exc}") from None


# -- kernel selection --------------------------------------------------------------

def _add_kernel_args(p):
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", help="kernel as JSON, e.g. '{\"family\": \"ex7\", \"H\": 0.25}'")
    g.add_argument("--family", choices=[f.value for f in Family])
    for name in ("H", "Hp", "K", "a", "b"):
        g.add_argument(f"--{name}", type=float)


def _explicit_params(args) -> dict:
    return {k: getattr(args, k) for k in ("H", "Hp", "K", "a", "b") if getattr(args, k) is not None}


def _kernel(args) -> Kernel:
    if args.kernel:
        try:
            params = json.loads(args.kernel)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--kernel is not valid JSON: {exc}") from None
        return Kernel.from_dict(params)
    if not args.family:
        raise ValidationError("give --kernel JSON or --family with its parameters")
    return Kernel(args.family, **_explicit_params(args))


def _verify_kernels(args) -> list[Kernel]:
    """The verification parameter sets, optionally narrowed by family or overridden."""
    if args.kernel or (args.family and _explicit_params(args)):
        return [_kernel(args)]
    if args.family:
        return [k for k in VERIFY_KERNELS if k.family.value == args.family] or [
            next(k for k in catalog() if k.family.value == args.family)]
    return list(VERIFY_KERNELS)


# -- subcommands ---------------------------------------------------------------------

def cmd_kernels(args) -> int:
    theta = check_real(args.theta, "theta", positive=True)
    rows = []
    for k in catalog():
        lc = limit_constants(k, theta)
        rows.append({
            "family": k.family.value, "kernel": k.to_dict(),
            "type_class": k.type_class.value if k.type_class else None,
            "hurst": lc.hurst, "beta": lc.beta, "lambda2": lc.lambda2,
            "lambda2_table": lc.lambda2_table, "lambda2_mismatch": lc.lambda2_mismatch,
            "sigmaG2": lc.sigmaG2, "theta": theta,
        })
    if args.json:
        _emit(_json(rows), args.out)
        return EXIT_OK
    head = f"{'kernel':<24}{'class':>6}{'H':>8}{'beta':>8}{'lambda2':>12}{'sigmaG2':>12}"
    lines = [head]
    for r, k in zip(rows, catalog()):
        flag = " *" if r["lambda2_mismatch"] else ""
        lines.append(f"{str(k):<24}{r['type_class'] or '-':>6}{r['hurst']:>8.4g}"
                     f"{r['beta']:>8.4g}{r['lambda2']:>12.6g}{r['sigmaG2']:>12.6g}{flag}")
    if any(r["lambda2_mismatch"] for r in rows):
        lines.append("* lambda2 = R(1,1) differs from the tabulated value")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    kernel = _kernel(args)
    grid = Grid(check_real(args.T, "T", positive=True), check_int(args.n, "n", minimum=2))
    noise = gaussian_path(kernel, grid, args.seed, check_int(args.replication, "replication"))
    if args.model == "noise":
        path = noise
    elif args.model == "zeta":
        path = zeta_path(check_real(args.theta, "theta", positive=True), noise, args.scheme)
    else:
        mu = 0.0 if args.model == "ou" else check_real(args.mu, "mu")
        path = linear_sde_path(SdeParams(check_real(args.theta, "theta"), mu), noise, args.scheme)
    _emit(path.to_csv(), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    path = GridPath.from_csv(_read_text(args.path))
    if args.model == "ou":
        text = f"T,n,theta_hat\n{path.grid.t_end:.17g},{path.grid.n_steps},{lse_ou(path):.17g}\n"
    else:
        text = VasicekEstimate.CSV_HEADER + "\n" + lse_vasicek(path).to_csv_row() + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _histogram_csv(report, bins: int) -> str:
    lines = ["target,left,right,count"]
    for name in sorted(report.samples):
        values = report.samples[name][1]
        lo, hi = np.quantile(values, [0.01, 0.99])
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        lines.extend(f"{name},{a:.17g},{b:.17g},{c}"
                     for a, b, c in zip(edges[:-1], edges[1:], counts))
    return "\n".join(lines) + "\n"


def cmd_mc(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        data = cfg.to_dict()
    else:
        data = {"kernel": _kernel(args).to_dict(), "theta": args.theta, "mu": args.mu,
                "experiment": {}}
    exp = data["experiment"]
    for key, value in (("T", args.T), ("n", args.n), ("replications", args.replications),
                       ("seed", args.seed_override), ("model", args.model)):
        if value is not None:
            exp[key] = value
    cfg = config_from_dict(data)
    _print_seed(cfg.seed)
    report = mc_experiment(cfg.to_mc(), threads=args.threads)
    out = args.out or cfg.output.get("report")
    samples = args.samples or cfg.output.get("samples")
    # all outputs are rendered before any is written
    texts = [(_json(report.to_dict()), out)]
    if samples:
        texts.append((report.samples_csv(), samples))
    if args.hist:
        texts.append((_histogram_csv(report, args.bins), args.hist))
    write_all(texts)
    return EXIT_OK


def _times(values, name):
    t = [check_real(x, name, positive=True) for x in values]
    if not t or any(b <= a for a, b in zip(t, t[1:])):
        raise ValidationError(f"{name} must be a non-empty increasing list")
    return t


def _monotone_decrease(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def cmd_verify_constants(args) -> int:
    theta = check_real(args.theta, "theta", positive=True)
    t_list = _times(args.t, "--t")
    results, ok = [], True
    for k in _verify_kernels(args):
        lc = limit_constants(k, theta)
        H = lc.hurst
        ratios = [cov(k, x, x) / x ** (2 * H) for x in SELF_SIMILARITY_TIMES]
        spread = max(ratios) - min(ratios)
        moments = [zeta_second_moment(k, theta, x) for x in t_list]
        scaled = [x ** (2 * lc.beta) * m for x, m in zip(t_list, moments)]
        rel = [abs(v - lc.sigmaG2) / abs(lc.sigmaG2) for v in scaled]
        entry = {
            "kernel": k.to_dict(), "theta": theta,
            "self_similarity_spread": spread, "self_similarity_pass": spread <= 1e-10,
            "lambda2": lc.lambda2, "lambda2_table": lc.lambda2_table,
            "lambda2_table_error": abs(lc.lambda2 - lc.lambda2_table),
            "lambda2_mismatch_reported": lc.lambda2_mismatch,
            "sigmaG2": lc.sigmaG2, "t": t_list, "scaled_moment": scaled,
            "relative_error": rel,
            "sigma_pass": _monotone_decrease(rel) and rel[-1] <= args.tol,
        }
        ok &= entry["self_similarity_pass"] and entry["sigma_pass"]
        results.append(entry)
    _emit(_json({"pass": ok, "results": results}), args.out)
    return EXIT_OK if ok else EXIT_GATE


def cmd_verify_innerproduct(args) -> int:
    trials = check_int(args.trials, "trials", minimum=1)
    T = check_real(args.T, "T", positive=True)
    tol = check_real(args.tol, "tol", positive=True)
    results = []
    for k in _verify_kernels(args):
        res = oracle_check(k, trials, args.seed, t_end=T, tol=tol)
        results.append({"kernel": k.to_dict(), **res.to_dict()})
    ok = all(r["pass"] for r in results)
    _emit(_json({"pass": ok, "seed": args.seed, "results": results}), args.out)
    return EXIT_OK if ok else EXIT_GATE


def cmd_decay(args) -> int:
    theta = check_real(args.theta, "theta", positive=True)
    results = []
    for k in _verify_kernels(args):
        series = covariance_decay(k, theta, args.s, _times(args.t, "--t"))
        results.append({"kernel": k.to_dict(), "theta": theta, "s": args.s,
                        **series.to_dict()})
    ok = all(all(r["decreasing"].values()) for r in results)
    _emit(_json({"pass": ok, "results": results}), args.out)
    return EXIT_OK if ok else EXIT_GATE


# -- parser and dispatch -------------------------------------------------------------

COMMANDS = {
    "kernels": cmd_kernels,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "verify-constants": cmd_verify_constants,
    "verify-innerproduct": cmd_verify_innerproduct,
    "decay": cmd_decay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gauss-vasicek",
        description="Gaussian noise kernels, RKHS inner products, simulation and "
                    "least-squares drift estimation.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default 42)")
        p.add_argument("--out", help="output file (default: stdout)")
        return p

    p = add("kernels", "list the families and their limit constants")
    p.add_argument("--json", action="store_true")
    p.add_argument("--theta", type=float, default=1.0)

    p = add("simulate", "simulate a noise, Vasicek, OU or zeta path as CSV")
    _add_kernel_args(p)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--model", choices=("noise", "vasicek", "ou", "zeta"), default="vasicek")
    p.add_argument("--scheme", choices=SCHEMES, default="trapezoid")
    p.add_argument("--replication", type=int, default=0)

    p = add("estimate", "least-squares estimates from a path CSV")
    p.add_argument("--path", required=True)
    p.add_argument("--model", choices=("vasicek", "ou"), default="vasicek")

    p = add("mc", "Monte Carlo comparison with the limit laws")
    _add_kernel_args(p)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--T", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--model", choices=sorted(TARGETS))
    p.add_argument("--samples", help="CSV of normalized errors")
    p.add_argument("--hist", help="CSV of histogram bins per target")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--threads", type=int)

    p = add("verify-constants", "self-similarity, lambda2 table and sigmaG2 convergence")
    _add_kernel_args(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--t", type=float, nargs="+", default=[10.0, 20.0, 40.0])
    p.add_argument("--tol", type=float, default=0.10)

    p = add("verify-innerproduct", "inner products against the increment oracle")
    _add_kernel_args(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=1e-6)

    p = add("decay", "decay sequences of noise and zeta covariances")
    _add_kernel_args(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--t", type=float, nargs="+", default=[8.0, 16.0, 32.0])
    return parser


def _print_seed(seed) -> None:
    print(f"seed: {seed}", file=sys.stderr)


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv or (argv[0] not in COMMANDS and argv[0] not in ("-h", "--help")):
        parser.print_usage(sys.stderr)
        if argv:
            print(f"gauss-vasicek: unknown subcommand {argv[0]!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    # `mc` takes its seed from the config unless --seed is given explicitly
    explicit = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    args.seed_override = args.seed if explicit else None
    if args.command != "mc":
        _print_seed(args.seed)
    try:
        if args.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {args.seed}")
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except COMPUTE_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
