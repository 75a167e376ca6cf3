"""Simulated IMU, UWB and camera measurements.

Each sensor perturbs the true state with draws from a :class:`NoiseModel`.
Camera noise is the designated outlier source: a contaminated Gaussian
``(1 - p_out) N(0, S) + p_out N(0, kappa S)``.

UWB is simulated at the ranging level: one noisy range per anchor, then a
Gauss-Newton multilateration turns the ranges into a position fix. The
``direct`` mode skips ranging and perturbs the true position instead.

The stacked measurement is ``[uwb xyz, camera xyz, roll pitch yaw]``.
Blocks whose sensor did not report are stored as NaN and flagged in the
mask, so a stray read propagates NaN instead of a plausible zero.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConvergenceError, GeometryError, InconsistencyError, InvalidParameterError
from .model import ATT, POS, wrap_angle

UWB_ROWS = slice(0, 3)
CAM_ROWS = slice(3, 6)
IMU_ROWS = slice(6, 9)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian or contaminated-Gaussian noise.

    Parameters
    ----------
    cov : array_like
        Base covariance ``S`` (square, symmetric PSD). A scalar is read as a
        1x1 covariance.
    kind : {"gaussian", "contaminated"}
    p_out : float
        Probability a draw comes from the inflated component.
    kappa : float
        Covariance inflation of the outlier component, ``>= 1``.
    """

    cov: np.ndarray
    kind: str = "gaussian"
    p_out: float = 0.0
    kappa: float = 1.0
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise InvalidParameterError(f"covariance must be square, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, atol=1e-12):
            raise InvalidParameterError("covariance must be finite and symmetric")
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-12 * max(1.0, abs(evals).max()):
            raise InvalidParameterError("covariance is not positive semi-definite")
        if self.kind not in ("gaussian", "contaminated"):
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.p_out <= 1.0:
            raise InvalidParameterError(f"p_out must lie in [0, 1], got {self.p_out}")
        if not self.kappa >= 1.0:
            raise InvalidParameterError(f"kappa must be >= 1, got {self.kappa}")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", evecs * np.sqrt(np.clip(evals, 0.0, None)))

    @classmethod
    def isotropic(cls, sigma, dim, **kw):
        return cls(cov=np.eye(dim) * float(sigma) ** 2, **kw)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @property
    def effective_cov(self) -> np.ndarray:
        """Covariance of the full mixture."""
        if self.kind == "gaussian":
            return self.cov
        return self.cov * ((1.0 - self.p_out) + self.p_out * self.kappa)


def sample_noise(model: NoiseModel, rng: np.random.Generator, count: Optional[int] = None):
    """Draw one noise vector (or ``count`` of them, stacked row-wise).

    The number of variates consumed per draw does not depend on the
    outcome, so streams stay aligned across paired runs.
    """
    if count is None:
        z = model._factor @ rng.standard_normal(model.dim)
        if rng.random() < model.p_out and model.kind == "contaminated":
            z *= np.sqrt(model.kappa)
        return z
    z = rng.standard_normal((int(count), model.dim)) @ model._factor.T
    u = rng.random(int(count))
    if model.kind == "contaminated" and model.p_out > 0.0:
        z[u < model.p_out] *= np.sqrt(model.kappa)
    return z


class AvailabilityMask(NamedTuple):
    uwb: bool
    cam: bool
    imu: bool = True


def sample_availability(p_uwb: float, p_cam: float, rng: np.random.Generator) -> AvailabilityMask:
    """Independent Bernoulli arrivals for UWB and camera; the IMU always reports."""
    u = rng.random(2)
    return AvailabilityMask(uwb=bool(u[0] < p_uwb), cam=bool(u[1] < p_cam), imu=True)


@dataclass(frozen=True)
class AnchorSet:
    """UWB anchor positions, one row per anchor (m, ENU)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 4:
            raise InvalidParameterError("need at least 4 anchors with 3 coordinates each")
        if np.linalg.matrix_rank(pos - pos.mean(axis=0)) < 3:
            raise GeometryError("anchors are coplanar; 3D multilateration is ill-posed")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def box(cls, lower, upper):
        """Eight anchors at the corners of an axis-aligned box."""
        lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        corners = [[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]]
                   for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        return cls(np.array(corners))


def default_anchors() -> AnchorSet:
    """16 m x 5 m x 4 m box enclosing the default rectangular trajectory."""
    return AnchorSet.box((-1.5, -1.0, 0.0), (14.5, 4.0, 4.0))


def range_uwb(state, anchors: AnchorSet, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Noisy tag-to-anchor distances, clamped at zero."""
    d = np.linalg.norm(anchors.positions - np.asarray(state)[POS], axis=1)
    d = d + sample_noise(noise, rng, count=len(anchors))[:, 0]
    return np.maximum(d, 0.0)


def _solve_sym3(M, b):
    """Solve a 3x3 symmetric PSD system by the adjugate, rejecting near-singular ones."""
    (a, b_, c), (_, d, e), (_, _, f) = M.tolist()
    c00 = d * f - e * e
    c01 = c * e - b_ * f
    c02 = b_ * e - c * d
    det = a * c00 + b_ * c01 + c * c02
    tr = a + d + f
    if not tr > 0 or det <= 1e-12 * (tr / 3.0) ** 3:
        raise GeometryError("singular normal equations in multilateration")
    c11 = a * f - c * c
    c12 = b_ * c - a * e
    c22 = a * d - b_ * b_
    x, y, z = b.tolist()
    return np.array([c00 * x + c01 * y + c02 * z,
                     c01 * x + c11 * y + c12 * z,
                     c02 * x + c12 * y + c22 * z]) / det


def multilaterate(ranges, anchors: AnchorSet, guess, tol: float = 1e-9, max_iter: int = 50) -> np.ndarray:
    """Gauss-Newton fit of ``min_p sum_i (|p - a_i| - r_i)^2``.

    Raises
    ------
    GeometryError
        If the normal equations are singular at some iterate.
    ConvergenceError
        If the step norm is still above ``tol`` after ``max_iter``
        iterations. The last iterate is attached as ``err.last``.
    """
    a = anchors.positions
    r = np.asarray(ranges, dtype=float)
    if r.shape != (a.shape[0],):
        raise InvalidParameterError(f"expected {a.shape[0]} ranges, got shape {r.shape}")
    p = np.array(guess, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InvalidParameterError("guess must be a finite 3-vector")

    step_norm = np.inf
    for _ in range(max_iter):
        diff = p - a
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # a tag sitting on an anchor contributes no direction
        J = diff / np.maximum(dist, 1e-12)[:, None]
        step = _solve_sym3(J.T @ J, J.T @ (r - dist))
        p = p + step
        step_norm = math.sqrt(step @ step)
        if step_norm < tol:
            return p
    raise ConvergenceError(
        f"multilateration did not converge in {max_iter} iterations (last step {step_norm:.3g})",
        last=p, iterations=max_iter, residual=step_norm)


def measure_imu(state, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    return wrap_angle(np.asarray(state)[ATT] + sample_noise(noise, rng))


def measure_camera(state, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    return np.asarray(state)[POS] + sample_noise(noise, rng)


@dataclass(frozen=True)
class MeasurementFrame:
    """Stacked 9-vector with per-sensor availability.

    Read blocks through :meth:`block`, which refuses unavailable sensors.
    """

    y: np.ndarray
    mask: AvailabilityMask
    k: int = 0

    def block(self, sensor: str) -> np.ndarray:
        rows = {"uwb": UWB_ROWS, "cam": CAM_ROWS, "imu": IMU_ROWS}[sensor]
        if not getattr(self.mask, sensor):
            raise InconsistencyError(f"{sensor} block is unavailable at step {self.k}")
        return self.y[rows]

    @cached_property
    def row_mask(self) -> np.ndarray:
        """Boolean 9-vector, True where the row carries a live measurement."""
        m = self.mask
        return np.array([m.uwb] * 3 + [m.cam] * 3 + [m.imu] * 3, dtype=bool)


def assemble_frame(imu, uwb_pos, cam_pos, mask: AvailabilityMask, k: int = 0) -> MeasurementFrame:
    """Stack ``[uwb, camera, imu]`` blocks, NaN-filling unavailable ones."""
    y = np.full(9, np.nan)
    for name, rows, value in (("uwb", UWB_ROWS, uwb_pos), ("cam", CAM_ROWS, cam_pos),
                              ("imu", IMU_ROWS, imu)):
        if getattr(mask, name):
            if value is None:
                raise InconsistencyError(f"{name} flagged available at step {k} but no value given")
            y[rows] = value
    return MeasurementFrame(y=y, mask=mask, k=k)


@dataclass(frozen=True)
class SensorNoise:
    """Noise settings for the three sensors (standard deviations in SI units)."""

    imu_sigma: float = 0.01
    uwb_range_sigma: float = 0.05
    uwb_position_sigma: float = 0.05
    camera_sigma: float = 0.02
    camera_outlier_prob: float = 0.05
    camera_outlier_scale: float = 100.0
    uwb_mode: str = "ranged"

    def __post_init__(self):
        if self.uwb_mode not in ("ranged", "direct"):
            raise InvalidParameterError(f"uwb_mode must be 'ranged' or 'direct', got {self.uwb_mode!r}")

    def imu_model(self):
        return NoiseModel.isotropic(self.imu_sigma, 3)

    def range_model(self):
        return NoiseModel.isotropic(self.uwb_range_sigma, 1)

    def uwb_position_model(self):
        return NoiseModel.isotropic(self.uwb_position_sigma, 3)

    def camera_model(self):
        return NoiseModel.isotropic(self.camera_sigma, 3, kind="contaminated",
                                    p_out=self.camera_outlier_prob,
                                    kappa=self.camera_outlier_scale)

    def nominal_cov(self) -> np.ndarray:
        """Gaussian measurement covariance ``V`` assumed by the filters."""
        return np.diag(np.repeat([self.uwb_position_sigma ** 2, self.camera_sigma ** 2,
                                  self.imu_sigma ** 2], 3))


class SensorSuite:
    """All three sensors with one independent random stream each.

    A suite is single-owner; build one per episode. A UWB fix that fails
    to converge or hits degenerate geometry is dropped: the frame reports
    the UWB block as unavailable for that step.
    """

    fix_tol = 1e-7  # metres; far below the ranging noise

    def __init__(self, noise: SensorNoise, anchors: AnchorSet, seeds):
        imu_seed, uwb_seed, cam_seed = seeds
        self.noise = noise
        self.anchors = anchors
        self.imu_rng = np.random.default_rng(imu_seed)
        self.uwb_rng = np.random.default_rng(uwb_seed)
        self.cam_rng = np.random.default_rng(cam_seed)
        self._imu = noise.imu_model()
        self._range = noise.range_model()
        self._uwb_pos = noise.uwb_position_model()
        self._cam = noise.camera_model()
        self._last_fix = None
        self.multilateration_failures = 0

    def measure(self, state, mask: AvailabilityMask, k: int = 0) -> MeasurementFrame:
        # every sensor draws each step so streams stay aligned regardless of the mask
        imu = measure_imu(state, self._imu, self.imu_rng)
        cam = measure_camera(state, self._cam, self.cam_rng)
        if self.noise.uwb_mode == "direct":
            uwb = np.asarray(state)[POS] + sample_noise(self._uwb_pos, self.uwb_rng)
        else:
            ranges = range_uwb(state, self.anchors, self._range, self.uwb_rng)
            uwb = self._fix(ranges) if mask.uwb else None
            if uwb is None and mask.uwb:
                mask = mask._replace(uwb=False)
        return assemble_frame(imu, uwb, cam, mask, k)

    def _fix(self, ranges):
        """Multilaterate, or return None (and count it) when no fix is possible."""
        guess = self._last_fix if self._last_fix is not None else self.anchors.positions.mean(axis=0)
        try:
            p = multilaterate(ranges, self.anchors, guess, tol=self.fix_tol)
        except (ConvergenceError, GeometryError):
            self.multilateration_failures += 1
            self._last_fix = None
            return None
        self._last_fix = p
        return p
