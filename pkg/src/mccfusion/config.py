"""Plain-text run configuration.

The file format is flat ``key = value`` lines with optional ``[section]``
headers and ``#`` comments. A key inside ``[mcc]`` such as ``sigma`` is
the same as the dotted top-level key ``mcc.sigma``::

    # scenario 2 with a wider kernel
    scenario = 2
    runs = 20

    [mcc]
    sigma = 8

Every key, with its default and unit, is listed in :data:`KEYS`. Unknown
keys and values that break a constraint raise :class:`ConfigError`,
which names the key and the line.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Tuple

from .control import LqWeights
from .errors import ConfigError
from .filters import MccConfig
from .model import QuadrotorParams
from .sensors import AnchorSet, SensorNoise, default_anchors
from .simharness import DEFAULT_WAYPOINTS, FILTERS, ProcessNoise, ScenarioConfig

_Q = QuadrotorParams()
_N = SensorNoise()
_P = ProcessNoise()
_M = MccConfig()
_S = ScenarioConfig()

# key -> (default shown in --help, unit, parser)
KEYS = {
    "scenario": (1, "-", "int"),
    "filters": ("kf,mcckf", "-", "filters"),
    "seed": (0, "-", "int"),
    "runs": (20, "-", "int"),
    "steps": (_S.steps, "steps", "int"),
    "burn_in": (_S.burn_in, "steps", "int"),
    "plant": (_S.plant, "nonlinear|linear", "str"),
    "p_uwb": ("preset", "probability", "float"),
    "p_cam": ("preset", "probability", "float"),
    "quad.mass": (_Q.mass, "kg", "float"),
    "quad.gravity": (_Q.gravity, "m/s^2", "float"),
    "quad.ixx": (_Q.ixx, "kg m^2", "float"),
    "quad.iyy": (_Q.iyy, "kg m^2", "float"),
    "quad.izz": (_Q.izz, "kg m^2", "float"),
    "quad.dt": (_Q.dt, "s", "float"),
    "imu.sigma": (_N.imu_sigma, "rad", "float"),
    "uwb.mode": (_N.uwb_mode, "ranged|direct", "str"),
    "uwb.range_sigma": (_N.uwb_range_sigma, "m", "float"),
    "uwb.position_sigma": (_N.uwb_position_sigma, "m", "float"),
    "uwb.anchors_lower": ("-1.5,-1,0", "m", "vec3"),
    "uwb.anchors_upper": ("14.5,4,4", "m", "vec3"),
    "camera.sigma": (_N.camera_sigma, "m", "float"),
    "camera.outlier_prob": (_N.camera_outlier_prob, "probability", "float"),
    "camera.outlier_scale": (_N.camera_outlier_scale, "variance factor", "float"),
    "process.position": (_P.position, "m per step", "float"),
    "process.attitude": (_P.attitude, "rad per step", "float"),
    "process.velocity": (_P.velocity, "m/s per step", "float"),
    "process.rate": (_P.rate, "rad/s per step", "float"),
    "lq.position": (1.0, "weight", "float"),
    "lq.attitude": (1.0, "weight", "float"),
    "lq.velocity": (0.1, "weight", "float"),
    "lq.rate": (0.1, "weight", "float"),
    "lq.integral": (0.1, "weight", "float"),
    "lq.r": ("1,1000,1000,1000", "weight (thrust, tau_x, tau_y, tau_z)", "vec4"),
    "mcc.sigma": (_M.sigma, "whitened innovation units", "float"),
    "mcc.floor": (_M.floor, "-", "float"),
    "filter.p0": (_S.p0, "initial covariance scale", "float"),
    "filter.init_error_std": (_S.init_error_std, "m, rad", "float"),
    "trajectory.speed": (_S.speed, "m/s", "float"),
    "trajectory.waypoints": ("0,0,1; 13,0,1; 13,3,1; 0,3,1", "m", "path"),
}


@dataclass(frozen=True)
class RunConfig:
    """A scenario template plus the Monte-Carlo settings around it."""

    scenario: ScenarioConfig
    filters: Tuple[str, ...] = ("kf", "mcckf")
    runs: int = 20


def _floats(text, n=None):
    vals = tuple(float(t) for t in text.split(","))
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return vals


def _parse_value(kind, text):
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "str":
        return text
    if kind == "vec3":
        return _floats(text, 3)
    if kind == "vec4":
        return _floats(text, 4)
    if kind == "path":
        return tuple(_floats(p, 3) for p in text.split(";") if p.strip())
    if kind == "filters":
        names = tuple(t.strip() for t in text.split(",") if t.strip())
        bad = [n for n in names if n not in FILTERS]
        if not names or bad:
            raise ValueError(f"filters must be a non-empty subset of {','.join(FILTERS)}")
        return names
    raise AssertionError(kind)


def read_entries(text: str, source: str = "<config>"):
    """Split config text into ``{key: (raw value, line number)}``."""
    entries = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"malformed section header {raw.strip()!r} in {source}",
                                  key=None, line=lineno)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' in {source}", key=None, line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"empty key in {source}", key=None, line=lineno)
        key = f"{section}.{key}" if section else key
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in entries:
            raise ConfigError(f"duplicate key (first set on line {entries[key][1]})",
                              key=key, line=lineno)
        entries[key] = (value, lineno)
    return entries


def build_config(entries) -> RunConfig:
    """Turn parsed entries into a validated :class:`RunConfig`."""
    values = {}
    for key, (text, lineno) in entries.items():
        try:
            values[key] = _parse_value(KEYS[key][2], text)
        except ValueError as err:
            raise ConfigError(f"cannot parse {text!r}: {err}", key=key, line=lineno) from None

    def get(key, default):
        return values.get(key, default)

    def checked(keys, build):
        # attribute constraint failures to the first offending key present
        try:
            return build()
        except ValueError as err:
            present = [k for k in keys if k in entries]
            key = present[0] if len(present) == 1 else (present[0] if present else None)
            line = entries[key][1] if key else None
            raise ConfigError(str(err), key=key, line=line) from None

    quad = checked([k for k in KEYS if k.startswith("quad.")], lambda: QuadrotorParams(
        mass=get("quad.mass", _Q.mass), gravity=get("quad.gravity", _Q.gravity),
        ixx=get("quad.ixx", _Q.ixx), iyy=get("quad.iyy", _Q.iyy), izz=get("quad.izz", _Q.izz),
        dt=get("quad.dt", _Q.dt)))
    for key in ("imu.sigma", "uwb.range_sigma", "uwb.position_sigma", "camera.sigma",
                "camera.outlier_scale", "process.position", "process.attitude",
                "process.velocity", "process.rate"):
        if key in values and not values[key] >= 0:
            raise ConfigError(f"must be non-negative, got {values[key]}", key=key,
                              line=entries[key][1])
    noise_keys = [k for k in KEYS if k.split(".")[0] in ("imu", "uwb", "camera")]
    noise = checked(noise_keys, lambda: SensorNoise(
        imu_sigma=get("imu.sigma", _N.imu_sigma),
        uwb_range_sigma=get("uwb.range_sigma", _N.uwb_range_sigma),
        uwb_position_sigma=get("uwb.position_sigma", _N.uwb_position_sigma),
        camera_sigma=get("camera.sigma", _N.camera_sigma),
        camera_outlier_prob=get("camera.outlier_prob", _N.camera_outlier_prob),
        camera_outlier_scale=get("camera.outlier_scale", _N.camera_outlier_scale),
        uwb_mode=get("uwb.mode", _N.uwb_mode)))
    # build the noise models once so p_out / kappa violations surface here
    checked(["camera.outlier_prob", "camera.outlier_scale", "camera.sigma"], noise.camera_model)
    anchors = default_anchors()
    if "uwb.anchors_lower" in values or "uwb.anchors_upper" in values:
        anchors = checked(["uwb.anchors_lower", "uwb.anchors_upper"], lambda: AnchorSet.box(
            get("uwb.anchors_lower", (-1.5, -1.0, 0.0)), get("uwb.anchors_upper", (14.5, 4.0, 4.0))))
    process = ProcessNoise(position=get("process.position", _P.position),
                           attitude=get("process.attitude", _P.attitude),
                           velocity=get("process.velocity", _P.velocity),
                           rate=get("process.rate", _P.rate))
    weights = checked([k for k in KEYS if k.startswith("lq.")], lambda: LqWeights.from_diagonals(
        position=get("lq.position", 1.0), attitude=get("lq.attitude", 1.0),
        velocity=get("lq.velocity", 0.1), rate=get("lq.rate", 0.1),
        integral=get("lq.integral", 0.1), r=get("lq.r", (1.0, 1000.0, 1000.0, 1000.0))))
    mcc = checked(["mcc.sigma", "mcc.floor"], lambda: MccConfig(
        sigma=get("mcc.sigma", _M.sigma), floor=get("mcc.floor", _M.floor)))

    scenario_keys = ["scenario", "steps", "burn_in", "plant", "p_uwb", "p_cam", "seed",
                     "filter.p0", "filter.init_error_std", "trajectory.speed"]
    scenario = checked(scenario_keys, lambda: ScenarioConfig(
        scenario=get("scenario", 1), steps=get("steps", _S.steps), burn_in=get("burn_in", _S.burn_in),
        seed=get("seed", 0), plant=get("plant", _S.plant), p_uwb=get("p_uwb", None),
        p_cam=get("p_cam", None), quad=quad, noise=noise, process=process, anchors=anchors,
        weights=weights, mcc=mcc, waypoints=get("trajectory.waypoints", DEFAULT_WAYPOINTS),
        speed=get("trajectory.speed", _S.speed), p0=get("filter.p0", _S.p0),
        init_error_std=get("filter.init_error_std", _S.init_error_std)))
    if "seed" in values and values["seed"] < 0:
        raise ConfigError("seed must be non-negative", key="seed", line=entries["seed"][1])
    runs = get("runs", 20)
    if runs < 1:
        raise ConfigError("runs must be at least 1", key="runs", line=entries["runs"][1])
    return RunConfig(scenario=scenario, filters=get("filters", ("kf", "mcckf")), runs=runs)


def parse_config(path) -> RunConfig:
    """Read a config file; an empty file yields every documented default."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    return build_config(read_entries(text, str(path)))


def with_overrides(cfg: RunConfig, scenario=None, filters=None, seed=None, runs=None) -> RunConfig:
    """Apply command-line overrides on top of a parsed config."""
    sc = cfg.scenario
    if scenario is not None:
        sc = replace(sc, scenario=scenario)
    if seed is not None:
        sc = replace(sc, seed=seed)
    return RunConfig(scenario=sc, filters=tuple(filters) if filters else cfg.filters,
                     runs=cfg.runs if runs is None else runs)


def describe_keys() -> str:
    """One line per key: name, default and unit (used by ``--help``)."""
    width = max(len(k) for k in KEYS)
    return "\n".join(f"  {k:<{width}}  default {d!s:<10} [{u}]" for k, (d, u, _) in KEYS.items())
