"""Text formats: RunLog CSV, Monte Carlo CSV and the sensor log.

Timestamps are written with 9 fractional digits and every other value with
17 significant digits, so that floats survive a write/read round trip
unchanged.

Sensor log, one record per line (``#`` starts a comment)::

    gyro,t,ux,uy,uz
    dir,t,d1x,d1y,d1z,d2x,d2y,d2z
    truth,t,R11,R12,R13,R21,R22,R23,R31,R32,R33,wx,wy,wz

Timestamps must be non-decreasing within each stream. Direction vectors are
kept as written; the filter normalises them on use.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import LogFormatError
from .sim import DirectionRecord, GyroRecord, MonteCarloStats, RunLog, SensorStreams, TruthRecord

log = logging.getLogger("releqf")

NORM_WARN_TOL = 1e-3
SENSOR_LOG_HEADER = "# releqf sensor log v1"

_MAT = [f"{i}{j}" for i in range(1, 4) for j in range(1, 4)]
_XYZ = ["x", "y", "z"]


def fmt_time(t: float) -> str:
    return f"{t:.9f}"


def fmt(v: float) -> str:
    return f"{v:.17g}"


def _join(values: Iterable[float]) -> str:
    return ",".join(fmt(float(v)) for v in values)


def runlog_header(with_truth: bool = True) -> list[str]:
    cols = ["t"] + [f"Rhat_{m}" for m in _MAT] + [f"omegahat_{a}" for a in _XYZ]
    if with_truth:
        cols += [f"R_{m}" for m in _MAT] + [f"omega_{a}" for a in _XYZ]
        cols += ["err_Q", "err_q"]
    cols += [f"deltaQ_{a}" for a in _XYZ] + [f"deltaq_{a}" for a in _XYZ]
    return cols


def write_runlog(out: IO[str], rl: RunLog, with_truth: bool | None = None) -> None:
    """Write ``rl`` as CSV. Truth columns are dropped when the log has none."""
    if with_truth is None:
        with_truth = rl.has_truth
    out.write(",".join(runlog_header(with_truth)) + "\n")
    out.writelines(_runlog_rows(rl, with_truth, []))


def _runlog_rows(rl: RunLog, with_truth: bool, prefix: list[str]):
    for k in range(len(rl.t)):
        parts = prefix + [fmt_time(rl.t[k]), _join(rl.R_hat[k].ravel()), _join(rl.omega_hat[k])]
        if with_truth:
            parts += [
                _join(rl.R[k].ravel()),
                _join(rl.omega[k]),
                fmt(rl.err_Q[k]),
                fmt(rl.err_q[k]),
            ]
        parts += [_join(rl.delta_Q[k]), _join(rl.delta_q[k])]
        yield ",".join(parts) + "\n"


def write_paired_runlog(out: IO[str], logs: list[RunLog]) -> None:
    """Several logs of one scenario in one CSV with a leading ``filter`` column."""
    with_truth = all(rl.has_truth for rl in logs)
    out.write(",".join(["filter"] + runlog_header(with_truth)) + "\n")
    for rl in logs:
        out.writelines(_runlog_rows(rl, with_truth, [rl.filter_name]))


def read_runlog(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a RunLog CSV keyed by header name."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return cols


def write_montecarlo(out: IO[str], stats: MonteCarloStats, time_limit: float) -> None:
    """Per-run rows, then a ``# aggregate`` block of ``key,value`` lines."""
    out.write("run,seed,success,convergence_time,attitude_error,rate_error\n")
    for i, (seed, tc, att, rate) in enumerate(
        zip(stats.seeds, stats.convergence_times, stats.per_run_attitude_error, stats.per_run_rate_error)
    ):
        ok = int(tc < time_limit)
        tc_s = fmt_time(tc) if math.isfinite(tc) else "inf"
        out.write(f"{i},{seed},{ok},{tc_s},{fmt(att)},{fmt(rate)}\n")
    out.write("# aggregate\n")
    out.write(f"n_runs,{stats.n_runs}\n")
    out.write(f"n_failures,{stats.n_failures}\n")
    out.write(f"success_rate,{fmt(stats.success_rate)}\n")
    out.write(f"mean_attitude_error,{fmt(stats.mean_attitude_error)}\n")
    out.write(f"mean_rate_error,{fmt(stats.mean_rate_error)}\n")
    out.write(f"failures_excluded,{int(stats.failures_excluded)}\n")


# --------------------------------------------------------------------------
# sensor log


def write_sensor_log(out: IO[str], streams: SensorStreams, include_truth: bool = True) -> None:
    """Records sorted by time; at equal times gyro, then directions, then truth."""
    records = []
    for r in streams.gyro:
        records.append((r.t, 0, f"gyro,{fmt_time(r.t)},{_join(r.u)}\n"))
    for r in streams.directions:
        records.append((r.t, 1, f"dir,{fmt_time(r.t)},{_join(r.d1)},{_join(r.d2)}\n"))
    if include_truth:
        for r in streams.truth:
            records.append((r.t, 2, f"truth,{fmt_time(r.t)},{_join(np.ravel(r.R))},{_join(r.omega)}\n"))
    records.sort(key=lambda rec: (rec[0], rec[1]))
    out.write(SENSOR_LOG_HEADER + "\n")
    out.writelines(rec[2] for rec in records)


_FIELDS = {"gyro": 3, "dir": 6, "truth": 12}


def parse_sensor_log(lines: Iterable[str]) -> SensorStreams:
    gyro: list[GyroRecord] = []
    dirs: list[DirectionRecord] = []
    truth: list[TruthRecord] = []
    last_t = {"gyro": -math.inf, "dir": -math.inf, "truth": -math.inf}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        kind = parts[0]
        if kind not in _FIELDS:
            raise LogFormatError(f"unknown record type {kind!r}", lineno)
        if len(parts) != _FIELDS[kind] + 2:
            raise LogFormatError(
                f"{kind} record needs {_FIELDS[kind] + 1} values, got {len(parts) - 1}", lineno
            )
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise LogFormatError("non-numeric field", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise LogFormatError("non-finite value", lineno)
        t = vals[0]
        if t < last_t[kind]:
            raise LogFormatError(
                f"{kind} timestamp {parts[1]} is earlier than the previous {kind} record", lineno
            )
        last_t[kind] = t
        v = np.array(vals[1:])
        if kind == "gyro":
            gyro.append(GyroRecord(t, v))
        elif kind == "dir":
            d1, d2 = v[:3], v[3:]
            for name, d in (("d1", d1), ("d2", d2)):
                n = float(np.linalg.norm(d))
                if n == 0.0:
                    raise LogFormatError(f"{name} has zero length", lineno)
                if abs(n - 1.0) > NORM_WARN_TOL:
                    log.warning("line %d: %s norm %.6f deviates from 1, normalising", lineno, name, n)
            dirs.append(DirectionRecord(t, d1, d2))
        else:
            truth.append(TruthRecord(t, v[:9].reshape(3, 3), v[9:]))
    return SensorStreams(gyro, dirs, truth)


def read_sensor_log(path: str | Path) -> SensorStreams:
    with open(path) as fh:
        return parse_sensor_log(fh)
