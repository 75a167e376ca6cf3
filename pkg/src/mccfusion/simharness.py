"""Closed-loop episodes and Monte-Carlo RMSE statistics.

One episode runs, for every step ``k``::

    availability -> sensor frame -> selection E_k and LQ gain
    -> control from x_{k|k-1} -> filter step -> integral update -> plant step

Every random stream of a run is derived from ``(master_seed, run_index)``
only, so different filters see the same process noise, sensor noise and
arrival pattern for a given run index.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .control import (E_UWB, GainCache, LqWeights, build_selection_matrix, bumpless_integral,
                      control_law, integral_update)
from .errors import EpisodeAborted, InvalidParameterError, NumericalError
from .filters import FilterState, MccConfig, NoiseCovariances, init_filter, kf_step, mcckf_step
from .model import (POS, QuadrotorParams, build_continuous_model, discretize,
                    step_linear_plant, step_nonlinear_plant)
from .sensors import AnchorSet, SensorNoise, SensorSuite, default_anchors, sample_availability

FILTERS = ("kf", "mcckf", "mcckf2")
FILTER_LABELS = {"kf": "Kalman Filter", "mcckf": "MCC-KF", "mcckf2": "MCC-KF-2"}
SCENARIO_AVAILABILITY = {1: (1.0, 1.0), 2: (0.1, 0.1)}
DEFAULT_WAYPOINTS = ((0.0, 0.0, 1.0), (13.0, 0.0, 1.0), (13.0, 3.0, 1.0), (0.0, 3.0, 1.0))


@dataclass(frozen=True)
class ProcessNoise:
    """Per-step standard deviations of the additive plant noise ``w``."""

    position: float = 1e-3
    attitude: float = 1e-4
    velocity: float = 3e-3
    rate: float = 1e-3

    def cov(self) -> np.ndarray:
        return np.diag(np.repeat([self.position, self.attitude, self.velocity, self.rate], 3) ** 2)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that determines one closed-loop episode.

    ``truth_noise_scale`` multiplies the noise actually injected into the
    plant, the sensors and the initial estimate; the filters keep their
    nominal covariances. Setting it to 0 gives a noiseless run.
    """

    scenario: int = 1
    filter: str = "mcckf"
    p_uwb: Optional[float] = None
    p_cam: Optional[float] = None
    steps: int = 6000
    burn_in: int = 200
    seed: int = 0
    plant: str = "nonlinear"
    quad: QuadrotorParams = field(default_factory=QuadrotorParams)
    noise: SensorNoise = field(default_factory=SensorNoise)
    process: ProcessNoise = field(default_factory=ProcessNoise)
    anchors: AnchorSet = field(default_factory=default_anchors)
    weights: LqWeights = field(default_factory=LqWeights.from_diagonals)
    mcc: MccConfig = field(default_factory=MccConfig)
    waypoints: Tuple[Tuple[float, float, float], ...] = DEFAULT_WAYPOINTS
    speed: float = 0.6
    p0: float = 0.1
    init_error_std: float = 0.01
    kf_strategy: Optional[str] = None
    truth_noise_scale: float = 1.0
    track_covariance: bool = True

    def __post_init__(self):
        if self.scenario not in SCENARIO_AVAILABILITY:
            raise InvalidParameterError(f"scenario must be 1 or 2, got {self.scenario!r}")
        if self.filter not in FILTERS:
            raise InvalidParameterError(f"unknown filter {self.filter!r}")
        if self.plant not in ("nonlinear", "linear"):
            raise InvalidParameterError(f"plant must be 'nonlinear' or 'linear', got {self.plant!r}")
        if self.steps < 1 or not 0 <= self.burn_in < self.steps:
            raise InvalidParameterError("need steps >= 1 and 0 <= burn_in < steps")
        for name in ("p_uwb", "p_cam"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")
        if self.speed <= 0 or self.p0 <= 0 or self.truth_noise_scale < 0 or self.init_error_std < 0:
            raise InvalidParameterError("speed and p0 must be positive, truth_noise_scale and init_error_std >= 0")

    @property
    def availability(self) -> Tuple[float, float]:
        p_uwb, p_cam = SCENARIO_AVAILABILITY[self.scenario]
        return (p_uwb if self.p_uwb is None else self.p_uwb,
                p_cam if self.p_cam is None else self.p_cam)

    def covariances(self) -> NoiseCovariances:
        return NoiseCovariances(W=self.process.cov(), V=self.noise.nominal_cov())


@dataclass
class EpisodeLog:
    """Index-aligned per-step records of one episode.

    ``estimate`` is the a-priori estimate ``x_{k|k-1}`` of the true state
    ``truth[k]`` (augmented, 15 columns); ``control`` is the absolute input.
    ``cov_psd[k]`` certifies that the covariance produced at step ``k`` has
    smallest eigenvalue >= -1e-8 (Cholesky of ``P + 1e-8 I`` succeeded).
    """

    truth: np.ndarray
    reference: np.ndarray
    estimate: np.ndarray
    estimate_filtered: np.ndarray
    mask: np.ndarray
    control: np.ndarray
    integral: np.ndarray
    kernel_ratio: np.ndarray
    cov_psd: np.ndarray
    cov_asymmetry: np.ndarray
    clamped: int = 0
    multilateration_failures: int = 0

    def __len__(self):
        return self.truth.shape[0]


def generate_trajectory(waypoints, speed: float, h: float) -> np.ndarray:
    """Constant-speed piecewise-linear path sampled every ``h`` seconds.

    Returns an ``(M, 3)`` array starting at the first waypoint and ending
    exactly at the last one.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 3 or wp.shape[0] < 2:
        raise InvalidParameterError("need at least two 3D waypoints")
    if not speed > 0 or not h > 0:
        raise InvalidParameterError("speed and h must be positive")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if np.any(seg <= 1e-12):
        raise InvalidParameterError("consecutive waypoints coincide")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    ds = speed * h
    n = int(np.floor(cum[-1] / ds + 1e-9))
    s = np.arange(n + 1) * ds
    if cum[-1] - s[-1] > 1e-9 * max(1.0, cum[-1]):
        s = np.append(s, cum[-1])
    s[-1] = min(s[-1], cum[-1])
    return np.column_stack([np.interp(s, cum, wp[:, j]) for j in range(3)])


def rmse(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.size == 0:
        raise InvalidParameterError(f"rmse needs equal non-empty inputs, got {est.shape} and {truth.shape}")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def summarize(values) -> Dict[str, float]:
    """Mean, median and quartiles (linear interpolation between order statistics)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidParameterError("cannot summarize an empty sequence")
    p25, med, p75 = np.percentile(v, [25, 50, 75], method="linear")
    return {"mean": float(np.mean(v)), "median": float(med), "p25": float(p25), "p75": float(p75)}


def run_seeds(master_seed: int, run_index: int) -> dict:
    """Independent seed sequences for every random stream of one run."""
    children = np.random.SeedSequence([int(master_seed), int(run_index)]).spawn(6)
    names = ("availability", "imu", "uwb", "camera", "process", "initial")
    return dict(zip(names, children))


def run_episode(cfg: ScenarioConfig, run_index: int = 0) -> EpisodeLog:
    """Simulate one seeded closed-loop episode.

    Raises
    ------
    EpisodeAborted
        If the filter hits a singular or non-finite matrix.
    """
    params = cfg.quad
    dmodel = discretize(build_continuous_model(params), params.dt)
    gains = GainCache(dmodel, cfg.weights)
    cov = cfg.covariances()
    hover = params.hover_input()
    ref_path = generate_trajectory(cfg.waypoints, cfg.speed, params.dt)
    p_uwb, p_cam = cfg.availability
    scale = cfg.truth_noise_scale

    seeds = run_seeds(cfg.seed, run_index)
    avail_rng = np.random.default_rng(seeds["availability"])
    proc_rng = np.random.default_rng(seeds["process"])
    init_rng = np.random.default_rng(seeds["initial"])
    noise = cfg.noise if scale == 1.0 else _scaled_noise(cfg.noise, scale)
    suite = SensorSuite(noise, cfg.anchors, (seeds["imu"], seeds["uwb"], seeds["camera"]))
    w_std = np.sqrt(np.diag(cfg.process.cov())) * scale

    N = cfg.steps
    x = np.zeros(12)
    x[POS] = ref_path[0]
    E = E_UWB.copy()
    aug, gain = gains.get(E)
    integ = bumpless_integral(gain, x)
    x0_hat = np.concatenate([x, integ]) + scale * cfg.init_error_std * init_rng.standard_normal(15)
    fstate = init_filter(x0_hat, cfg.p0, aug.Cbar)
    y_hold = aug.Cbar @ np.concatenate([x, integ])

    log = EpisodeLog(truth=np.empty((N, 12)), reference=np.empty((N, 3)),
                     estimate=np.empty((N, 15)), estimate_filtered=np.empty((N, 15)),
                     mask=np.empty((N, 2), dtype=bool), control=np.empty((N, 4)),
                     integral=np.empty((N, 3)), kernel_ratio=np.full(N, np.nan),
                     cov_psd=np.ones(N, dtype=bool), cov_asymmetry=np.zeros(N))
    psd_shift = 1e-8 * np.eye(15)

    strategy = "previous" if cfg.filter == "mcckf" else "expected"
    mcc = cfg.mcc if cfg.mcc.strategy == strategy else replace(cfg.mcc, strategy=strategy)

    for k in range(N):
        r = ref_path[min(k, len(ref_path) - 1)]
        mask = sample_availability(p_uwb, p_cam, avail_rng)
        frame = suite.measure(x, mask, k)
        mask = frame.mask  # a failed UWB fix is reported as unavailable
        E = build_selection_matrix(mask, E)
        aug, gain = gains.get(E)

        u = control_law(gain, fstate.x, integ, hover)
        du = u - hover

        log.truth[k] = x
        log.reference[k] = r
        log.estimate[k] = fstate.x
        log.mask[k] = (mask.uwb, mask.cam)
        log.control[k] = u
        log.integral[k] = integ

        try:
            if cfg.filter == "kf":
                fstate = kf_step(fstate, aug, du, frame, cov, r=r, strategy=cfg.kf_strategy)
            else:
                fstate = mcckf_step(fstate, aug, du, frame, cov, mcc, r=r)
        except NumericalError as err:
            raise EpisodeAborted(str(err), k, {"filter": cfg.filter, "P": fstate.P}) from err

        log.estimate_filtered[k] = fstate.x_filt
        if "kernel_ratio" in fstate.diag:
            log.kernel_ratio[k] = fstate.diag["kernel_ratio"]
            log.clamped += int(fstate.diag["clamped"])
        if cfg.track_covariance:
            P = fstate.P
            try:
                np.linalg.cholesky(P + psd_shift)
            except np.linalg.LinAlgError:
                log.cov_psd[k] = False
            log.cov_asymmetry[k] = np.max(np.abs(P - P.T))
        if not np.all(np.isfinite(fstate.x)):
            raise EpisodeAborted("non-finite state estimate", k, {"filter": cfg.filter})

        live = frame.row_mask
        y_hold = np.where(live, frame.y, y_hold)
        integ = integral_update(integ, r, y_hold, E)

        w = w_std * proc_rng.standard_normal(12)
        if cfg.plant == "nonlinear":
            x = step_nonlinear_plant(x, u, params, w)
        else:
            x = step_linear_plant(x, du, dmodel, w)

    log.multilateration_failures = suite.multilateration_failures
    return log


def _scaled_noise(noise: SensorNoise, scale: float) -> SensorNoise:
    return replace(noise, imu_sigma=noise.imu_sigma * scale,
                   uwb_range_sigma=noise.uwb_range_sigma * scale,
                   uwb_position_sigma=noise.uwb_position_sigma * scale,
                   camera_sigma=noise.camera_sigma * scale)


def episode_rmse(log: EpisodeLog, burn_in: int) -> Tuple[float, float]:
    """x and y position RMSE of the a-priori estimate after ``burn_in`` steps."""
    est = log.estimate[burn_in:, 0:2]
    tru = log.truth[burn_in:, 0:2]
    return rmse(est[:, 0], tru[:, 0]), rmse(est[:, 1], tru[:, 1])


@dataclass
class StatsTable:
    """Per-filter, per-axis RMSE summaries over Monte-Carlo runs.

    ``stats[filter][axis]`` is the :func:`summarize` dict; ``values`` keeps
    the per-run RMSEs, ``failures`` the aborted runs as ``(run, message)``.
    ``covariance`` holds, per filter and completed run, the number of steps
    whose covariance failed the PSD check and the largest asymmetry seen.
    """

    scenario: int
    filters: List[str]
    stats: Dict[str, Dict[str, Dict[str, float]]]
    values: Dict[str, Dict[str, List[float]]]
    runs: int
    failures: Dict[str, List[Tuple[int, str]]] = field(default_factory=dict)
    logs: Dict[str, EpisodeLog] = field(default_factory=dict)
    covariance: Dict[str, List[Tuple[int, float]]] = field(default_factory=dict)

    def mean(self, filt: str, axis: str) -> float:
        return self.stats[filt][axis]["mean"]

    def improvement(self, better: str, worse: str, axis: str) -> float:
        """Relative reduction of the mean RMSE of ``better`` over ``worse``."""
        return 1.0 - self.mean(better, axis) / self.mean(worse, axis)

    @property
    def failure_count(self) -> int:
        return sum(len(v) for v in self.failures.values())


def _run_one(args):
    cfg, run_index, keep = args
    try:
        log = run_episode(cfg, run_index)
    except EpisodeAborted as err:
        return cfg.filter, run_index, None, str(err), None, None
    health = (int(np.count_nonzero(~log.cov_psd)), float(log.cov_asymmetry.max()))
    return (cfg.filter, run_index, episode_rmse(log, cfg.burn_in), None,
            (log if keep else None), health)


def run_monte_carlo(cfg: ScenarioConfig, filters: Sequence[str] = ("kf", "mcckf"),
                    n_runs: int = 20, keep_logs: bool = False, workers: int = 1) -> StatsTable:
    """Run ``n_runs`` paired episodes per filter and summarise x/y RMSE.

    ``cfg.seed`` is the master seed; run ``j`` of every filter uses the
    streams derived from ``(cfg.seed, j)``. With ``keep_logs`` the logs of
    run 0 are attached to the table. Aborted episodes are excluded from the
    statistics and listed in ``failures``.
    """
    if n_runs < 1:
        raise InvalidParameterError("n_runs must be at least 1")
    filters = list(filters)
    if not filters or any(f not in FILTERS for f in filters):
        raise InvalidParameterError(f"filters must be a non-empty subset of {FILTERS}")
    jobs = [(replace(cfg, filter=f), j, keep_logs and j == 0) for f in filters for j in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    values = {f: {"x": [], "y": []} for f in filters}
    failures = {f: [] for f in filters}
    logs = {}
    covariance = {f: [] for f in filters}
    for filt, j, res, err, log, health in results:
        if err is not None:
            failures[filt].append((j, err))
            continue
        values[filt]["x"].append(res[0])
        values[filt]["y"].append(res[1])
        covariance[filt].append(health)
        if log is not None:
            logs[filt] = log
    stats = {f: {axis: summarize(values[f][axis]) for axis in ("x", "y")}
             for f in filters if values[f]["x"]}
    return StatsTable(scenario=cfg.scenario, filters=filters, stats=stats, values=values,
                      runs=n_runs, failures={f: v for f, v in failures.items() if v}, logs=logs,
                      covariance=covariance)
