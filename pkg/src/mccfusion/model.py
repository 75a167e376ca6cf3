"""Quadrotor parameters, nonlinear plant and linearised state-space models.

State vector layout (length 12, ENU world frame)::

    x[0:3]   = [x, y, z]          position          (m)
    x[3:6]   = [phi, theta, psi]  Euler angles      (rad)
    x[6:9]   = [vx, vy, vz]       linear velocity   (m/s)
    x[9:12]  = [p, q, r]          Euler-angle rates (rad/s)

Control vector layout (length 4)::

    u = [f_T, tau_x, tau_y, tau_z]   thrust (N), torques (N m)

Measurement vector layout (length 9)::

    y = [x_uwb, y_uwb, z_uwb, x_cam, y_cam, z_cam, phi, theta, psi]

The linear model is written about hover, so the input it expects is the
deviation ``u - hover_input(params)``.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError

N_STATE = 12
N_INPUT = 4
N_OUTPUT = 9

POS = slice(0, 3)
ATT = slice(3, 6)
VEL = slice(6, 9)
RATE = slice(9, 12)


@dataclass(frozen=True)
class QuadrotorParams:
    """Rigid-body parameters and sampling period.

    Defaults are DJI M100-class values; ``dt`` is the control-loop
    interval in seconds.
    """

    mass: float = 2.355
    gravity: float = 9.81
    ixx: float = 0.033
    iyy: float = 0.033
    izz: float = 0.055
    dt: float = 0.01

    def __post_init__(self):
        for name in ("mass", "gravity", "ixx", "iyy", "izz", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value!r}")

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity

    def hover_input(self) -> np.ndarray:
        """Return ``(m g, 0, 0, 0)``, the input that holds a level hover."""
        return np.array([self.hover_thrust, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ContinuousModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class DiscreteModel:
    Phi: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    h: float


def output_matrix() -> np.ndarray:
    """9x12 map from state to ``[uwb position, camera position, attitude]``."""
    C = np.zeros((N_OUTPUT, N_STATE))
    C[0:3, POS] = np.eye(3)
    C[3:6, POS] = np.eye(3)
    C[6:9, ATT] = np.eye(3)
    return C


def build_continuous_model(params: QuadrotorParams) -> ContinuousModel:
    """Small-angle linearisation of the Newton-Euler equations about hover.

    Encodes ``xdd = g theta``, ``ydd = -g phi``, ``zdd = f_T/m`` and
    ``phidd, thetadd, psidd = tau / I`` with the kinematic chains
    position <- velocity and angle <- rate.
    """
    if not isinstance(params, QuadrotorParams):
        raise InvalidParameterError("params must be a QuadrotorParams instance")
    A = np.zeros((N_STATE, N_STATE))
    A[POS, VEL] = np.eye(3)
    A[ATT, RATE] = np.eye(3)
    A[6, 4] = params.gravity
    A[7, 3] = -params.gravity

    B = np.zeros((N_STATE, N_INPUT))
    B[8, 0] = 1.0 / params.mass
    B[9, 1] = 1.0 / params.ixx
    B[10, 2] = 1.0 / params.iyy
    B[11, 3] = 1.0 / params.izz
    return ContinuousModel(A=A, B=B, C=output_matrix())


def discretize(cont: ContinuousModel, h: float) -> DiscreteModel:
    """Zero-order-hold discretisation ``Phi = e^{Ah}``, ``Gamma = int_0^h e^{As} ds B``.

    When ``A`` is nilpotent (the quadrotor model has ``A^4 = 0``) the
    exponential series terminates and is summed exactly. Otherwise the
    block-matrix exponential is used.
    """
    h = float(h)
    if not math.isfinite(h) or h < 0:
        raise InvalidParameterError(f"sampling period must be non-negative, got {h!r}")
    A = np.asarray(cont.A, dtype=float)
    B = np.asarray(cont.B, dtype=float)
    n, m = B.shape

    powers = [np.eye(n)]
    while len(powers) <= n and np.any(powers[-1]):
        powers.append(powers[-1] @ A)

    if not np.any(powers[-1]):
        Phi = np.zeros((n, n))
        Psi = np.zeros((n, n))
        for j, Aj in enumerate(powers[:-1]):
            Phi += Aj * h**j / math.factorial(j)
            Psi += Aj * h ** (j + 1) / math.factorial(j + 1)
        Gamma = Psi @ B
    else:
        M = np.zeros((n + m, n + m))
        M[:n, :n] = A * h
        M[:n, n:] = B * h
        eM = scipy.linalg.expm(M)
        Phi, Gamma = eM[:n, :n], eM[:n, n:]
    return DiscreteModel(Phi=Phi, Gamma=Gamma, C=np.array(cont.C, dtype=float), h=h)


def wrap_angle(a):
    """Wrap angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def _derivative(s, f, tx, ty, tz, m, g, ixx, iyy, izz):
    phi, theta, psi = s[3], s[4], s[5]
    p, q, r = s[9], s[10], s[11]
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    a = f / m
    d = np.empty(12)
    d[0:3] = s[6:9]
    d[3:6] = s[9:12]
    d[6] = a * (cphi * sth * cpsi + spsi * sphi)
    d[7] = a * (cphi * sth * spsi - cpsi * sphi)
    d[8] = a * cphi * cth - g
    d[9] = (iyy - izz) / ixx * q * r + tx / ixx
    d[10] = (izz - ixx) / iyy * p * r + ty / iyy
    d[11] = (ixx - iyy) / izz * p * q + tz / izz
    return d


def nonlinear_derivative(state, u, params: QuadrotorParams) -> np.ndarray:
    """Time derivative of the full nonlinear equations of motion."""
    f, tx, ty, tz = (float(v) for v in u)
    return _derivative(np.asarray(state, dtype=float), f, tx, ty, tz, params.mass,
                       params.gravity, params.ixx, params.iyy, params.izz)


def step_nonlinear_plant(state, u, params: QuadrotorParams, w=None) -> np.ndarray:
    """Advance the nonlinear plant one period ``params.dt`` with classic RK4.

    ``u`` is held constant over the step. Process noise ``w`` (12-vector)
    is added after integration and the Euler angles are re-wrapped.
    """
    s = np.asarray(state, dtype=float)
    f, tx, ty, tz = (float(v) for v in u)
    args = (f, tx, ty, tz, params.mass, params.gravity, params.ixx, params.iyy, params.izz)
    h = params.dt
    k1 = _derivative(s, *args)
    k2 = _derivative(s + 0.5 * h * k1, *args)
    k3 = _derivative(s + 0.5 * h * k2, *args)
    k4 = _derivative(s + h * k3, *args)
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if w is not None:
        out += w
    out[ATT] = wrap_angle(out[ATT])
    return out


def step_linear_plant(state, du, model: DiscreteModel, w=None) -> np.ndarray:
    """``x_{k+1} = Phi x_k + Gamma du_k + w_k`` with ``du`` the deviation from hover."""
    out = model.Phi @ np.asarray(state, dtype=float) + model.Gamma @ np.asarray(du, dtype=float)
    if w is not None:
        out += w
    return out
