"""Scenario generation, closed-loop runs, Monte Carlo campaigns and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .eqf import EquivariantFilter, GainConfig
from .liegroup import random_rotation, so3_exp
from .model import (
    ManifoldState,
    Measurement,
    ReferenceDirections,
    apply_noise,
    measure,
)

TIME_DECIMALS = 9


def quantize_time(t: float) -> float:
    """Round to nanoseconds so that timestamps survive a text round trip."""
    return round(t, TIME_DECIMALS)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 10.0
    predict_rate: float = 100.0
    measure_rate: float = 100.0
    update_iterations: int = 1
    sigma_theta: float = 0.1
    refs: ReferenceDirections = field(default_factory=ReferenceDirections.default)
    omega_T_range: float = 1.5
    u_range: float = 1.5

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not (self.predict_rate > 0 and self.measure_rate > 0):
            raise ValueError("rates must be positive")
        if self.update_iterations < 1:
            raise ValueError("update_iterations must be >= 1")
        if self.sigma_theta < 0:
            raise ValueError("sigma_theta must be non-negative")
        if self.omega_T_range < 0 or self.u_range < 0:
            raise ValueError("sampling ranges must be non-negative")


class GyroRecord(NamedTuple):
    t: float
    u: np.ndarray


class DirectionRecord(NamedTuple):
    t: float
    d1: np.ndarray
    d2: np.ndarray


class TruthRecord(NamedTuple):
    t: float
    R: np.ndarray
    omega: np.ndarray


@dataclass
class SensorStreams:
    """Timestamped gyro, direction and (optional) truth streams."""

    gyro: list[GyroRecord]
    directions: list[DirectionRecord]
    truth: list[TruthRecord] = field(default_factory=list)


@dataclass
class Scenario:
    config: ScenarioConfig
    R_T0: np.ndarray
    R_C0: np.ndarray
    omega_T: np.ndarray
    u: np.ndarray
    streams: SensorStreams

    @property
    def initial_truth(self) -> ManifoldState:
        t0 = self.streams.truth[0]
        return ManifoldState(t0.R, t0.omega)


def _grid(rate: float, duration: float, start: int) -> list[float]:
    n = int(math.floor(duration * rate + 1e-9))
    return [quantize_time(k / rate) for k in range(start, n + 1)]


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Random initial attitudes and constant rates, with ``a = v = w = 0``.

    Gyro samples sit on the prediction grid ``k / predict_rate`` (k >= 0);
    direction samples on ``j / measure_rate`` (j >= 1). Truth is recorded on
    the prediction grid.
    """
    rng = np.random.default_rng(cfg.seed)
    R_T0 = random_rotation(rng)
    R_C0 = random_rotation(rng)
    omega_T = rng.uniform(-cfg.omega_T_range, cfg.omega_T_range, 3)
    u = rng.uniform(-cfg.u_range, cfg.u_range, 3)

    R0 = R_T0.T @ R_C0
    x = ManifoldState(R0, R0.T @ omega_T)

    ticks = _grid(cfg.predict_rate, cfg.duration, 0)
    meas_times = _grid(cfg.measure_rate, cfg.duration, 1)
    tick_set = set(ticks)
    meas_set = set(meas_times)
    times = sorted(tick_set | meas_set)

    gyro = []
    directions = []
    truth = []
    # the chaser-rate factors of the truth step depend only on dt; on a
    # uniform grid they are computed once (same arithmetic as integrate_truth)
    steps: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    t_prev = times[0]
    for t in times:
        if t > t_prev:
            dt = t - t_prev
            if dt not in steps:
                steps[dt] = (so3_exp(dt * u), so3_exp(-dt * u))
            E_u, E_mu = steps[dt]
            x = ManifoldState(x.R @ so3_exp(-dt * x.omega) @ E_u, E_mu @ x.omega)
            t_prev = t
        if t in meas_set:
            m = apply_noise(measure(x, cfg.refs, t), cfg.sigma_theta, rng)
            directions.append(DirectionRecord(t, m.d1, m.d2))
        if t in tick_set:
            gyro.append(GyroRecord(t, u))
            truth.append(TruthRecord(t, x.R, x.omega))
    return Scenario(cfg, R_T0, R_C0, omega_T, u, SensorStreams(gyro, directions, truth))


# --------------------------------------------------------------------------
# closed loop


class Filter(Protocol):
    name: str

    def predict(self, u, dt: float) -> None: ...

    def update(self, y: Measurement, dt_update: float, iterations: int = 1) -> None: ...

    def estimate(self) -> ManifoldState: ...

    def correction_vectors(self) -> tuple[np.ndarray, np.ndarray]: ...

    def sigma_trace(self) -> float: ...


@dataclass
class RunLog:
    """Per-prediction-tick time series. Truth arrays are NaN when unknown."""

    t: np.ndarray
    R_hat: np.ndarray
    omega_hat: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    err_Q: np.ndarray
    err_q: np.ndarray
    delta_Q: np.ndarray
    delta_q: np.ndarray
    sigma_trace: np.ndarray
    filter_name: str = "eqf"

    @property
    def has_truth(self) -> bool:
        return bool(np.any(np.isfinite(self.err_Q)))


def normalize_direction(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return d / math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])


def run_streams(
    filt: Filter,
    streams: SensorStreams,
    update_iterations: int = 1,
    update_period: float | None = None,
) -> RunLog:
    """Merge the streams by timestamp and drive ``filt``.

    At each distinct timestamp the filter first predicts up to it with the
    most recent gyro sample (zero-order hold; zero before the first one),
    then applies every direction sample stamped at that time, then latches
    new gyro samples. A log row is emitted for every gyro timestamp.

    The nominal update period is ``update_period`` when given, otherwise the
    gap since the previous direction sample (or the start time).
    """
    gyro, dirs, truth = streams.gyro, streams.directions, streams.truth
    if not gyro and not dirs:
        raise ValueError("no sensor records")
    starts = [s[0].t for s in (gyro, dirs) if s]
    t_filter = min(starts)
    t_last_meas = t_filter
    u = np.zeros(3)
    gi = di = ti = 0
    n_g, n_d, n_t = len(gyro), len(dirs), len(truth)
    truth_now: TruthRecord | None = None

    rows_t, rows_Rh, rows_wh, rows_R, rows_w = [], [], [], [], []
    rows_eQ, rows_eq, rows_dQ, rows_dq, rows_tr = [], [], [], [], []
    nan9 = np.full((3, 3), np.nan)
    nan3 = np.full(3, np.nan)
    I3 = np.eye(3)

    while gi < n_g or di < n_d:
        t = min(gyro[gi].t if gi < n_g else math.inf, dirs[di].t if di < n_d else math.inf)
        if t > t_filter:
            filt.predict(u, t - t_filter)
            t_filter = t
        while di < n_d and dirs[di].t == t:
            rec = dirs[di]
            y = Measurement(normalize_direction(rec.d1), normalize_direction(rec.d2), t)
            period = update_period if update_period is not None else t - t_last_meas
            if period > 0.0:
                filt.update(y, period / update_iterations, update_iterations)
            t_last_meas = t
            di += 1
        logged = False
        while gi < n_g and gyro[gi].t == t:
            u = np.asarray(gyro[gi].u, dtype=float)
            gi += 1
            logged = True
        if not logged:
            continue
        while ti < n_t and truth[ti].t <= t:
            truth_now = truth[ti]
            ti += 1
        est = filt.estimate()
        dQ, dq = filt.correction_vectors()
        rows_t.append(t)
        rows_Rh.append(est.R)
        rows_wh.append(est.omega)
        if truth_now is not None:
            rows_R.append(truth_now.R)
            rows_w.append(truth_now.omega)
            # Frobenius norms of the group error (Q R_hat^T, R (omega_hat - omega))
            dQ_err = (truth_now.R @ est.R.T - I3).ravel()
            dq_err = est.omega - truth_now.omega
            rows_eQ.append(math.sqrt(dQ_err @ dQ_err))
            rows_eq.append(math.sqrt(dq_err @ dq_err))
        else:
            rows_R.append(nan9)
            rows_w.append(nan3)
            rows_eQ.append(math.nan)
            rows_eq.append(math.nan)
        rows_dQ.append(dQ)
        rows_dq.append(dq)
        rows_tr.append(filt.sigma_trace())

    return RunLog(
        t=np.array(rows_t),
        R_hat=np.array(rows_Rh).reshape(-1, 3, 3),
        omega_hat=np.array(rows_wh).reshape(-1, 3),
        R=np.array(rows_R).reshape(-1, 3, 3),
        omega=np.array(rows_w).reshape(-1, 3),
        err_Q=np.array(rows_eQ),
        err_q=np.array(rows_eq),
        delta_Q=np.array(rows_dQ).reshape(-1, 3),
        delta_q=np.array(rows_dq).reshape(-1, 3),
        sigma_trace=np.array(rows_tr),
        filter_name=getattr(filt, "name", "filter"),
    )


def make_eqf(cfg: ScenarioConfig, gains: GainConfig | None = None, **options) -> EquivariantFilter:
    return EquivariantFilter(cfg.refs, gains if gains is not None else GainConfig(), **options)


def run_filter(scenario: Scenario, filt: Filter | None = None, gains: GainConfig | None = None) -> RunLog:
    """Closed-loop run of ``filt`` (default: a fresh EqF) over ``scenario``."""
    if filt is None:
        filt = make_eqf(scenario.config, gains)
    return run_streams(filt, scenario.streams, scenario.config.update_iterations)


# --------------------------------------------------------------------------
# metrics and Monte Carlo


SUCCESS_THRESHOLD_Q = 0.1
SUCCESS_THRESHOLD_QVEC = 0.1
SUCCESS_TIME_LIMIT = 10.0
DEFAULT_CONVERGENCE_TIME = 4.0


def convergence_time(
    log: RunLog,
    threshold_Q: float = SUCCESS_THRESHOLD_Q,
    threshold_q: float = SUCCESS_THRESHOLD_QVEC,
) -> float:
    """Earliest logged time from which both errors stay below threshold.

    Returns ``inf`` when the errors are above threshold at the final sample.
    """
    ok = (log.err_Q < threshold_Q) & (log.err_q < threshold_q)
    if ok.size == 0 or not ok[-1]:
        return math.inf
    bad = np.nonzero(~ok)[0]
    return float(log.t[0] if bad.size == 0 else log.t[bad[-1] + 1])


def is_success(log: RunLog, time_limit: float = SUCCESS_TIME_LIMIT) -> bool:
    return convergence_time(log) < time_limit


def euler_zyx(R: np.ndarray) -> np.ndarray:
    """``(roll, pitch, yaw)`` with ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    return np.array([math.atan2(R[2, 1], R[2, 2]), pitch, math.atan2(R[1, 0], R[0, 0])])


class RunMetrics(NamedTuple):
    attitude_error: float
    rate_error: float
    rate_error_deg: float
    relative_rate_error: float
    euler_error_deg: np.ndarray
    convergence_time: float


def metrics(log: RunLog, convergence_time_s: float = DEFAULT_CONVERGENCE_TIME) -> RunMetrics:
    """Post-convergence means over ``t > convergence_time_s``.

    Euler errors are the mean absolute ZYX angles of ``R_hat^T R``, in
    degrees; the relative rate error is ``mean |omega_hat - omega|`` over
    ``mean |omega|``.
    """
    if not log.has_truth:
        raise ValueError("log carries no truth")
    mask = (log.t > convergence_time_s) & np.isfinite(log.err_Q)
    if not np.any(mask):
        raise ValueError("no samples after the convergence time")
    att = float(np.mean(log.err_Q[mask]))
    rate = float(np.mean(log.err_q[mask]))
    omega_norm = float(np.mean(np.linalg.norm(log.omega[mask], axis=1)))
    rel = rate / omega_norm if omega_norm > 0 else math.nan
    eul = np.mean(
        [np.abs(euler_zyx(Rh.T @ R)) for Rh, R in zip(log.R_hat[mask], log.R[mask])], axis=0
    )
    return RunMetrics(att, rate, math.degrees(rate), rel, np.degrees(eul), convergence_time(log))


@dataclass
class MonteCarloStats:
    n_runs: int
    n_failures: int
    success_rate: float
    mean_attitude_error: float
    mean_rate_error: float
    convergence_times: list[float]
    seeds: list[int]
    per_run_attitude_error: list[float]
    per_run_rate_error: list[float]
    failures_excluded: bool = True


def derive_seeds(master_seed: int, n_runs: int) -> list[int]:
    """Independent per-run seeds; run ``i`` does not depend on ``n_runs``."""
    children = np.random.SeedSequence(master_seed).spawn(n_runs)
    return [int(c.generate_state(1, np.uint32)[0]) for c in children]


class _RunResult(NamedTuple):
    seed: int
    conv_time: float
    attitude_error: float
    rate_error: float


def _single_run(args) -> _RunResult:
    cfg, gains, options, conv_window = args
    scen = generate_scenario(cfg)
    log = run_filter(scen, make_eqf(cfg, gains, **options))
    mask = log.t > conv_window
    return _RunResult(
        cfg.seed,
        convergence_time(log),
        float(np.mean(log.err_Q[mask])),
        float(np.mean(log.err_q[mask])),
    )


def monte_carlo(
    cfg: ScenarioConfig,
    n_runs: int,
    gains: GainConfig | None = None,
    *,
    time_limit: float = SUCCESS_TIME_LIMIT,
    convergence_window: float = DEFAULT_CONVERGENCE_TIME,
    workers: int = 1,
    filter_options: dict | None = None,
) -> MonteCarloStats:
    """Seeded campaign; ``cfg.seed`` is the master seed.

    A run succeeds when both group errors stay below their thresholds from
    some time earlier than ``time_limit`` until the end of the run.
    Post-convergence means average over successful runs only.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    gains = gains if gains is not None else GainConfig()
    options = dict(filter_options or {})
    seeds = derive_seeds(cfg.seed, n_runs)
    jobs = [(replace(cfg, seed=s), gains, options, convergence_window) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_single_run, jobs, chunksize=8))
    else:
        results = [_single_run(j) for j in jobs]
    return aggregate(results, time_limit)


def aggregate(results: Sequence[_RunResult], time_limit: float = SUCCESS_TIME_LIMIT) -> MonteCarloStats:
    ok = [r for r in results if r.conv_time < time_limit]
    n = len(results)
    n_fail = n - len(ok)
    att = math.fsum(r.attitude_error for r in ok) / len(ok) if ok else math.nan
    rate = math.fsum(r.rate_error for r in ok) / len(ok) if ok else math.nan
    return MonteCarloStats(
        n_runs=n,
        n_failures=n_fail,
        success_rate=1.0 - n_fail / n,
        mean_attitude_error=att,
        mean_rate_error=rate,
        convergence_times=[r.conv_time for r in results],
        seeds=[r.seed for r in results],
        per_run_attitude_error=[r.attitude_error for r in results],
        per_run_rate_error=[r.rate_error for r in results],
    )


def transform_streams(streams: SensorStreams, G: np.ndarray) -> SensorStreams:
    """Re-express the target frame by a fixed rotation ``G`` (``R -> G R``).

    Directions, gyro and rates in the chaser frame are unchanged; only the
    truth attitude changes, so filters must be given ``G d_ring`` as refs.
    """
    truth = [TruthRecord(r.t, G @ r.R, r.omega) for r in streams.truth]
    return SensorStreams(list(streams.gyro), list(streams.directions), truth)

