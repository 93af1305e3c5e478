"""``releqf`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or malformed input), 3 numeric failure (loss of positivity or a
logarithm too close to pi).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from . import io as rio
from .config import AppConfig, load_config
from .ekf import ExtendedKalmanFilter
from .eqf import EquivariantFilter
from .errors import ConfigError, DegenerateDirections, LogFormatError, LostPositivity, NearPiSingularity
from .liegroup import random_rotation
from .model import ManifoldState, Measurement, ReferenceDirections, SystemInput, observability_rank
from .sim import (
    RunLog,
    generate_scenario,
    metrics,
    monte_carlo,
    normalize_direction,
    run_filter,
    run_streams,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("releqf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _info(args) -> object:
    # summaries go to stderr when the data itself goes to stdout
    return sys.stderr if args.output in (None, "-") else sys.stdout


def make_filters(cfg: AppConfig):
    refs = cfg.scenario.refs
    eqf = EquivariantFilter(refs, cfg.filter.gains(), **cfg.filter.options())
    e = cfg.ekf
    ekf = ExtendedKalmanFilter(refs, M=e.m * np.eye(12), N=np.eye(6) / e.k_n, P0=e.p0 * np.eye(12))
    return eqf, ekf


def _print_metrics(out, rl: RunLog, conv: float) -> None:
    try:
        m = metrics(rl, conv)
    except ValueError as exc:
        print(f"{rl.filter_name}: no metrics ({exc})", file=out)
        return
    r, p, y = m.euler_error_deg
    print(
        f"{rl.filter_name}: convergence_time={m.convergence_time:.3f} s "
        f"attitude_error={m.attitude_error:.6f} rate_error={m.rate_error:.6f} rad/s "
        f"({m.rate_error_deg:.4f} deg/s, {100 * m.relative_rate_error:.3f} %) "
        f"euler_zyx_error_deg roll={r:.4f} pitch={p:.4f} yaw={y:.4f}",
        file=out,
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    scen = generate_scenario(cfg.scenario)
    eqf, _ = make_filters(cfg)
    rl = run_filter(scen, eqf)
    with _open_out(args.output) as out:
        rio.write_runlog(out, rl)
    if args.export_log:
        with open(args.export_log, "w", newline="") as fh:
            rio.write_sensor_log(fh, scen.streams)
    _print_metrics(_info(args), rl, cfg.convergence_time)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config)
    if args.n < 1:
        raise UsageError("n must be at least 1")
    workers = args.workers if args.workers is not None else cfg.mc_workers
    stats = monte_carlo(
        cfg.scenario,
        args.n,
        cfg.filter.gains(),
        time_limit=cfg.mc_time_limit,
        convergence_window=cfg.convergence_time,
        workers=workers,
        filter_options=cfg.filter.options(),
    )
    with _open_out(args.output) as out:
        rio.write_montecarlo(out, stats, cfg.mc_time_limit)
    print(
        f"success_rate={stats.success_rate:.4f} ({stats.n_runs - stats.n_failures}/{stats.n_runs}) "
        f"mean_attitude_error={stats.mean_attitude_error:.6f} "
        f"mean_rate_error={stats.mean_rate_error:.6f}",
        file=_info(args),
    )
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = load_config(args.config)
    streams = rio.read_sensor_log(args.log)
    if not streams.gyro and not streams.directions:
        raise LogFormatError("log holds no gyro or direction records")
    if not streams.directions:
        log.warning("no direction records: prediction only, the Riccati trace grows without bound")
    iterations = args.iterations if args.iterations is not None else cfg.scenario.update_iterations
    if iterations < 1:
        raise UsageError("iterations must be at least 1")
    eqf, _ = make_filters(cfg)
    rl = run_streams(eqf, streams, iterations)
    with _open_out(args.output) as out:
        rio.write_runlog(out, rl)
    if rl.has_truth:
        _print_metrics(_info(args), rl, cfg.convergence_time)
    return EXIT_OK


def cmd_compare_ekf(args) -> int:
    cfg = load_config(args.config)
    scen = generate_scenario(cfg.scenario)
    eqf, ekf = make_filters(cfg)
    logs = [run_filter(scen, eqf), run_filter(scen, ekf)]
    with _open_out(args.output) as out:
        rio.write_paired_runlog(out, logs)
    info = _info(args)
    for rl in logs:
        _print_metrics(info, rl, cfg.convergence_time)
    return EXIT_OK


def _parse_vec(text: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}") from None


def cmd_observability(args) -> int:
    if args.n_lie < 2:
        raise UsageError("n-lie must be at least 2")
    cfg = load_config(args.config)
    refs = cfg.scenario.refs
    if args.d1 is not None or args.d2 is not None:
        d1 = _parse_vec(args.d1) if args.d1 is not None else refs.d1_ring
        d2 = _parse_vec(args.d2) if args.d2 is not None else refs.d2_ring
        refs = ReferenceDirections.normalized(d1, d2)
    rng = np.random.default_rng(args.seed)
    R = random_rotation(rng)
    x = ManifoldState(R, rng.uniform(-1.5, 1.5, 3))
    inp = SystemInput(rng.uniform(-1.5, 1.5, 3))
    res = observability_rank(x, inp, refs, expanded=args.expanded, n_lie=args.n_lie)
    print(f"expanded: {'yes' if args.expanded else 'no'}")
    print(f"n_lie: {args.n_lie}")
    print(f"rank: {res.rank} / 12")
    if res.rank < 12:
        axis = R.T @ (refs.normal / np.linalg.norm(refs.normal))
        print(f"null_space_dim: {12 - res.rank}")
        for k in range(res.null_basis.shape[1]):
            print("null_vector_%d: %s" % (k, " ".join(f"{v:+.6f}" for v in res.null_basis[:, k])))
        print(
            "unobservable_axis_body (R^T (d1_ring x d2_ring)): "
            + " ".join(f"{v:+.6f}" for v in axis)
        )
        print(f"max_principal_angle_to_unobservable_subspace_rad: {res.null_angle:.3e}")
    return EXIT_OK


def bench_filter(cfg: AppConfig, steps: int, warmup: int = 1000) -> dict[str, np.ndarray]:
    """Per-call wall time (ns) of predict and update on simulated data.

    Sensor records of a 20 s scenario are cycled; the estimate is carried
    across the wrap-around.
    """
    sc = cfg.scenario
    scen = generate_scenario(replace(sc, duration=min(sc.duration, 20.0)))
    eqf, _ = make_filters(cfg)
    gyro, dirs = scen.streams.gyro, scen.streams.directions
    ys = [Measurement(normalize_direction(d.d1), normalize_direction(d.d2), d.t) for d in dirs]
    dt_p = 1.0 / sc.predict_rate
    dt_u = 1.0 / sc.measure_rate / sc.update_iterations
    its = sc.update_iterations
    t_pred = np.empty(steps, dtype=np.int64)
    t_upd = np.empty(steps, dtype=np.int64)
    clock = time.perf_counter_ns
    for k in range(-warmup, steps):
        u = gyro[k % len(gyro)].u
        y = ys[k % len(ys)]
        t0 = clock()
        eqf.predict(u, dt_p)
        t1 = clock()
        eqf.update(y, dt_u, its)
        t2 = clock()
        if k >= 0:
            t_pred[k] = t1 - t0
            t_upd[k] = t2 - t1
    return {"predict": t_pred, "update": t_upd}


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    steps = args.steps if args.steps is not None else cfg.bench_steps
    if steps < 1:
        raise UsageError("steps must be at least 1")
    times = bench_filter(cfg, steps, cfg.bench_warmup)
    with _open_out(args.output) as out:
        out.write("step,n,median_us,p99_us,mean_us\n")
        for name, ns in times.items():
            us = ns / 1000.0
            out.write(
                f"{name},{len(us)},{np.median(us):.3f},{np.percentile(us, 99):.3f},{np.mean(us):.3f}\n"
            )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="releqf", description="Relative attitude equivariant filter tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("simulate", cmd_simulate, "run the EqF on one simulated scenario, write a RunLog CSV")
    sp.add_argument("-c", "--config")
    sp.add_argument("-o", "--output", help="CSV path, '-' for stdout")
    sp.add_argument("--export-log", help="also write the scenario's sensor log here")

    sp = add("montecarlo", cmd_montecarlo, "seeded Monte Carlo campaign")
    sp.add_argument("-c", "--config")
    sp.add_argument("-n", type=int, default=1000, help="number of runs (default 1000)")
    sp.add_argument("-o", "--output")
    sp.add_argument("--workers", type=int, help="worker processes")

    sp = add("replay", cmd_replay, "run the EqF over a recorded sensor log")
    sp.add_argument("log")
    sp.add_argument("-c", "--config")
    sp.add_argument("-o", "--output")
    sp.add_argument("--iterations", type=int, help="update iterations per direction sample")

    sp = add("observability", cmd_observability, "rank of the observability co-distribution")
    sp.add_argument("--expanded", action="store_true", help="add orthonormality as fictitious outputs")
    sp.add_argument("--n-lie", type=int, default=2, help="highest Lie derivative order (default 2)")
    sp.add_argument("--seed", type=int, default=0, help="seed of the random generic state")
    sp.add_argument("--d1", help="reference direction 1, e.g. 1,0,0")
    sp.add_argument("--d2", help="reference direction 2")
    sp.add_argument("-c", "--config")

    sp = add("bench", cmd_bench, "time prediction and update steps, CSV output")
    sp.add_argument("-c", "--config")
    sp.add_argument("--steps", type=int, help="timed steps (default 100000)")
    sp.add_argument("-o", "--output")

    sp = add("compare-ekf", cmd_compare_ekf, "EqF and EKF on one scenario, paired RunLog CSV")
    sp.add_argument("-c", "--config")
    sp.add_argument("-o", "--output")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"releqf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LostPositivity, NearPiSingularity) as exc:
        print(f"releqf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LogFormatError, DegenerateDirections, OSError) as exc:
        print(f"releqf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
