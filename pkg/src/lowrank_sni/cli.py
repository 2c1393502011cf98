"""Command-line driver: ``approx``, ``complete`` and ``bench``.

Exit codes: 0 converged, 2 stopped at the iteration cap, 1 runtime error
(I/O, format, rank collapse), 64 invalid usage.

Every command writes a JSON report and, where applicable, a CSV trace into
``--out``. Wall-clock timings go to a separate ``timing.json`` so that the
report and trace are byte-for-byte reproducible.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import power_iteration, randomized_svd
from .completion import ObservationSet, predict_entries, sni_complete
from .datasets import (
    FormatError,
    RatingsFileSpec,
    SyntheticSpec,
    gapped_spectrum,
    load_ratings,
    make_synthetic,
    read_observations,
    relative_error,
    split,
    truncated_svd,
)
from .integrators import (
    COMPLETION_COLUMNS,
    FULL_COLUMNS,
    Mode,
    SolverConfig,
    dlra_run,
    dense_residual,
    full_observation_monitor,
    sni_run,
)
from .manifold import random_factors
from .matcore import RankDeficient

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
EXIT_USAGE = 64

METHODS = ("sni", "dlra", "power", "rsvd")
# Row order of the comparison table.
TABLE_ORDER = (("dlra", "DLRA"), ("rsvd", "RSVD"), ("power", "power"), ("sni", "SNI"))

logger = logging.getLogger("lowrank_sni")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunReport:
    method: str
    config: dict
    metrics: dict
    iterations: int
    converged: bool
    stop_reason: str
    trace_file: str
    wall_time: float = field(default=0.0)

    def to_json(self):
        # wall_time is written to timing.json instead.
        body = {
            "method": self.method,
            "config": self.config,
            "metrics": self.metrics,
            "iterations": self.iterations,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "trace_file": self.trace_file,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def init_seed(seed):
    """Seed for the solver's random start, independent of the problem seed."""
    return [seed, 1]


def parse_spectrum(text, m, n, rank):
    """``gapped`` (default), ``exact`` or an explicit comma-separated list."""
    size = min(m, n)
    if text in (None, "gapped"):
        return gapped_spectrum(size, rank)
    if text == "exact":
        return np.linspace(10.0, 1.0, rank)
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse spectrum {text!r}") from None
    if values.size < rank or values.size > size:
        raise UsageError(f"spectrum needs between {rank} and {size} values")
    return values


def parse_clamp(text):
    if text is None:
        return None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--clamp expects 'lo,hi', got {text!r}") from None
    if not lo < hi:
        raise UsageError("--clamp needs lo < hi")
    return (lo, hi)


def _write_outputs(out, report, trace_text, timing):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if trace_text is not None:
        (out / "trace.csv").write_text(trace_text)
    (out / "report.json").write_text(report.to_json())
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")


def _check_common(args):
    if args.rank < 1:
        raise UsageError("--rank must be >= 1")
    if not 0.0 < args.tol < 1.0:
        raise UsageError("--tol must lie in (0, 1)")
    if args.max_iters is not None and args.max_iters < 1:
        raise UsageError("--max-iters must be >= 1")


def solve_approx(method, M, rank, seed, cfg, oversample=10, power_iters=1, record=True, power_sweeps=None):
    """Run one approximation method on ``M``; returns an ``SvdResult``."""
    monitor = full_observation_monitor(M) if record else None
    f0 = random_factors(M.shape[0], M.shape[1], rank, init_seed(seed))
    if method == "sni":
        return sni_run(dense_residual(M), f0, cfg, monitor=monitor)
    if method == "dlra":
        return dlra_run(dense_residual(M), f0, cfg, monitor=monitor)
    if method == "power":
        if power_sweeps is not None:
            return power_iteration(M, rank, power_sweeps, V0=f0.V, monitor=monitor)
        return power_iteration(M, rank, cfg.max_iterations, V0=f0.V, tol=cfg.tol, monitor=monitor)
    if method == "rsvd":
        return randomized_svd(M, rank, oversample=oversample, power=power_iters, seed=[seed, 2])
    raise UsageError(f"unknown method {method!r}")


def cmd_approx(args):
    _check_common(args)
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    if args.rank > min(args.m, args.n):
        raise UsageError("--rank exceeds min(m, n)")
    if args.method == "rsvd" and args.rank + args.oversample > min(args.m, args.n):
        raise UsageError("--rank + --oversample exceeds min(m, n)")
    spectrum = parse_spectrum(args.spectrum, args.m, args.n, args.rank)
    cfg = SolverConfig(
        rank=args.rank,
        tol=args.tol,
        max_iterations=args.max_iters or 300,
        seed=args.seed,
        stepsize=args.stepsize,
    )
    problem = make_synthetic(SyntheticSpec(args.m, args.n, spectrum, seed=args.seed))
    Ur, sr, Vr = truncated_svd(problem.M, args.rank)
    M_r = (Ur * sr) @ Vr.T

    start = time.perf_counter()
    result = solve_approx(
        args.method, problem.M, args.rank, args.seed, cfg,
        oversample=args.oversample, power_iters=args.power_iters,
    )
    wall = time.perf_counter() - start

    metrics = {
        "relative_error": relative_error(result.matrix(), M_r),
        "singular_value_error": float(np.max(np.abs(result.D - sr))),
    }
    trace_file = str(Path(args.out) / "trace.csv")
    report = RunReport(
        method=args.method,
        config={
            "m": args.m, "n": args.n, "rank": args.rank,
            "spectrum": args.spectrum or "gapped", "seed": args.seed,
            "tol": args.tol, "max_iters": cfg.max_iterations, "stepsize": args.stepsize,
            "oversample": args.oversample, "power_iters": args.power_iters,
        },
        metrics=metrics,
        iterations=result.iterations,
        converged=result.converged,
        stop_reason=result.stop_reason,
        trace_file=trace_file,
        wall_time=wall,
    )
    timing = {"wall_time": wall, "iteration_elapsed": [rec.elapsed for rec in result.trace.records]}
    _write_outputs(args.out, report, result.trace.to_csv(FULL_COLUMNS), timing)
    print(f"{args.method}: relative error {metrics['relative_error']:.3e} "
          f"after {result.iterations} iterations ({result.stop_reason})")
    return EXIT_OK if result.converged else EXIT_MAX_ITER


def _bias_baseline(obs, damping=10.0, sweeps=10):
    """Global mean plus damped row and column offsets fitted to ``obs``."""
    mu = float(obs.values.mean())
    row_n = np.bincount(obs.rows, minlength=obs.m) + damping
    col_n = np.bincount(obs.cols, minlength=obs.n) + damping
    bu = np.zeros(obs.m)
    bi = np.zeros(obs.n)
    for _ in range(sweeps):
        bu = np.bincount(obs.rows, obs.values - mu - bi[obs.cols], minlength=obs.m) / row_n
        bi = np.bincount(obs.cols, obs.values - mu - bu[obs.rows], minlength=obs.n) / col_n
    return mu, bu, bi


def _center(obs, center):
    """Return the offsets subtracted from ``obs`` as ``(mu, row, col)``."""
    if center == "none":
        return 0.0, np.zeros(obs.m), np.zeros(obs.n)
    if center == "mean":
        return float(obs.values.mean()), np.zeros(obs.m), np.zeros(obs.n)
    return _bias_baseline(obs)


def _shift(obs, offsets, sign):
    mu, bu, bi = offsets
    values = obs.values + sign * (mu + bu[obs.rows] + bi[obs.cols])
    return ObservationSet(obs.m, obs.n, obs.rows, obs.cols, values)


def cmd_complete(args):
    _check_common(args)
    if (args.train is None) == (args.ratings is None):
        raise UsageError("give exactly one of --train or --ratings")
    if not 0.0 < args.test_fraction < 1.0:
        raise UsageError("--test-fraction must lie in (0, 1)")
    clamp = parse_clamp(args.clamp)
    delimiter = {"tab": "\t", "::": "::", "comma": ","}.get(args.delimiter, args.delimiter)

    if args.ratings is not None:
        data = load_ratings(RatingsFileSpec(args.ratings, delimiter=delimiter))
        obs = data.observations
        if data.malformed_lines:
            print(f"warning: skipped {len(data.malformed_lines)} malformed lines "
                  f"(first at line {data.malformed_lines[0]})", file=sys.stderr)
        center = "bias" if args.center == "auto" else args.center
        max_iters = args.max_iters or 10
    else:
        obs = read_observations(args.train)
        center = "none" if args.center == "auto" else args.center
        max_iters = args.max_iters or 300
    if args.rank > min(obs.m, obs.n):
        raise UsageError("--rank exceeds the matrix dimensions")

    train, test = split(obs, args.test_fraction, args.seed)
    if len(test) == 0:
        raise UsageError("the split left no test entries")
    offsets = _center(train, center)
    cfg = SolverConfig(rank=args.rank, tol=args.tol, max_iterations=max_iters,
                       seed=args.seed, mode=Mode.PARTIAL)
    f0 = random_factors(obs.m, obs.n, args.rank, init_seed(args.seed))

    start = time.perf_counter()
    result = sni_complete(_shift(train, offsets, -1.0), f0, cfg)
    wall = time.perf_counter() - start

    mu, bu, bi = offsets
    pred = predict_entries(result.factors, test.rows, test.cols) + mu + bu[test.rows] + bi[test.cols]
    if clamp is not None:
        pred = np.clip(pred, *clamp)
    rmse = float(np.sqrt(np.mean((pred - test.values) ** 2)))

    final_f1 = float(result.trace.records[-1].error)
    trace_file = str(Path(args.out) / "trace.csv")
    report = RunReport(
        method="sni",
        config={
            "source": args.ratings or args.train, "rank": args.rank, "seed": args.seed,
            "test_fraction": args.test_fraction, "tol": args.tol, "max_iters": max_iters,
            "clamp": list(clamp) if clamp else None, "center": center,
            "m": obs.m, "n": obs.n, "train_count": len(train), "test_count": len(test),
        },
        metrics={"test_rmse": rmse, "train_f1": final_f1},
        iterations=result.iterations,
        converged=result.converged,
        stop_reason=result.stop_reason,
        trace_file=trace_file,
        wall_time=wall,
    )
    timing = {"wall_time": wall, "iteration_elapsed": [rec.elapsed for rec in result.trace.records]}
    _write_outputs(args.out, report, result.trace.to_csv(COMPLETION_COLUMNS), timing)
    print(f"sni: test RMSE {rmse:.4f} on {len(test)} entries after {result.iterations} iterations")
    return EXIT_OK if result.converged else EXIT_MAX_ITER


def parse_problem(text):
    try:
        m, n, r = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--problem expects MxNxR, got {text!r}") from None
    if not (1 <= r <= min(m, n)):
        raise UsageError(f"invalid problem {text!r}")
    return m, n, r


def run_bench(methods, problems, trials, seed, cfg_kwargs, oversample=10, power_iters=1):
    """Mean relative errors per (method, problem) plus per-trial rows.

    Power iteration gets the number of sweeps SNI used in the same trial
    when SNI is among the methods; each sweep and each SNI iteration cost two
    m x n x r products.
    """
    per_trial = []
    means = {}
    for (m, n, r) in problems:
        errors = {meth: [] for meth in methods}
        for t in range(trials):
            s = seed + t
            problem = make_synthetic(SyntheticSpec(m, n, gapped_spectrum(min(m, n), r), seed=s))
            Ur, sr, Vr = truncated_svd(problem.M, r)
            M_r = (Ur * sr) @ Vr.T
            cfg = SolverConfig(rank=r, seed=s, **cfg_kwargs)
            sweeps = None
            for meth in sorted(methods, key=lambda x: x != "sni"):
                res = solve_approx(meth, problem.M, r, s, cfg, oversample=oversample,
                                   power_iters=power_iters, record=False,
                                   power_sweeps=sweeps if meth == "power" else None)
                if meth == "sni":
                    sweeps = res.iterations
                err = relative_error(res.matrix(), M_r)
                errors[meth].append(err)
                per_trial.append((f"{m}x{n}x{r}", t, s, meth, err, res.iterations))
        for meth in methods:
            means[(meth, (m, n, r))] = float(np.mean(errors[meth]))
    return means, per_trial


def cmd_bench(args):
    methods = [x.strip().lower() for x in args.methods.split(",") if x.strip()]
    unknown = [x for x in methods if x not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    problems = [parse_problem(p) for p in (args.problem or ["500x400x20"])]
    cfg_kwargs = {"tol": args.tol, "max_iterations": args.max_iters or 300, "stepsize": args.stepsize}
    try:
        SolverConfig(rank=1, **cfg_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    start = time.perf_counter()
    means, per_trial = run_bench(methods, problems, args.trials, args.seed, cfg_kwargs,
                                 oversample=args.oversample, power_iters=args.power_iters)
    wall = time.perf_counter() - start

    labels = [f"{chr(ord('A') + k)}:({m},{n},{r})" for k, (m, n, r) in enumerate(problems)]
    lines = [",".join(["method"] + labels)]
    for key, name in TABLE_ORDER:
        if key in methods:
            lines.append(",".join([name] + [f"{means[(key, p)]:.6e}" for p in problems]))
    table = "\n".join(lines) + "\n"
    trial_lines = ["problem,trial,seed,method,relative_error,iterations"]
    trial_lines += [f"{p},{t},{s},{meth},{err!r},{it}" for p, t, s, meth, err, it in per_trial]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(table)
    (out / "bench_trials.csv").write_text("\n".join(trial_lines) + "\n")
    report = {
        "methods": methods,
        "problems": [list(p) for p in problems],
        "trials": args.trials,
        "seed": args.seed,
        "mean_relative_error": {
            name: {lab: means[(key, p)] for lab, p in zip(labels, problems)}
            for key, name in TABLE_ORDER if key in methods
        },
        "table_file": str(out / "bench.csv"),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_time": wall}, indent=2) + "\n")
    sys.stdout.write(table)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="lowrank-sni", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def solver_flags(p, default_rank=None):
        p.add_argument("--rank", type=int, required=default_rank is None, default=default_rank)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=1.0 - 1e-12)
        p.add_argument("--max-iters", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("approx", help="best rank-r approximation of a synthetic matrix")
    p.add_argument("--method", default="sni")
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--spectrum", default=None,
                   help="'gapped' (default), 'exact', or comma-separated singular values")
    p.add_argument("--stepsize", type=float, default=1e-3)
    p.add_argument("--oversample", type=int, default=10)
    p.add_argument("--power-iters", type=int, default=1)
    solver_flags(p)
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("complete", help="matrix completion on a ratings or observation file")
    p.add_argument("--train", help="canonical observation file ('m n count' header)")
    p.add_argument("--ratings", help="user/item/rating[/timestamp] file")
    p.add_argument("--delimiter", default="tab", help="'tab', '::', 'comma' or a literal string")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--clamp", default=None, help="lo,hi range for predictions")
    p.add_argument("--center", choices=("auto", "none", "mean", "bias"), default="auto")
    solver_flags(p, default_rank=10)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("bench", help="compare methods on synthetic matrices")
    p.add_argument("--methods", default="sni,power,rsvd,dlra")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--problem", action="append", help="MxNxR, may be repeated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1.0 - 1e-12)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--stepsize", type=float, default=1e-3)
    p.add_argument("--oversample", type=int, default=10)
    p.add_argument("--power-iters", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lowrank-sni: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"lowrank-sni: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_ERROR
    except (FormatError, RankDeficient, OSError, ValueError) as exc:
        print(f"lowrank-sni: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
