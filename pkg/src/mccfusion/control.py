"""LQ-servo trajectory tracking on the integral-augmented model.

The augmented state is ``xbar = [x; i]`` where the integral state obeys
``i_{k+1} = i_k + r_k - E y_k`` and ``E`` (3x9) picks which position
source (UWB or camera) is being regulated. The augmented model is::

    xbar_{k+1} = Phibar xbar_k + Gammabar u_k + Ebar [w_k; v_k] + Ibar r_k
    y_k        = Cbar xbar_k + v_k

with ``Phibar = [[Phi, 0], [-E C, I]]``, ``Gammabar = [Gamma; 0]``,
``Ebar = [[I, 0], [0, -E]]``, ``Ibar = [0; I]`` and ``Cbar = [C, 0]``.
"""

from dataclasses import dataclass, field
import threading
from typing import Optional

import numpy as np

from .errors import ConvergenceError, InvalidParameterError, NumericalError
from .model import N_INPUT, N_OUTPUT, N_STATE, DiscreteModel
from .sensors import AvailabilityMask

N_INT = 3
N_AUG = N_STATE + N_INT

E_UWB = np.hstack([np.eye(3), np.zeros((3, 3)), np.zeros((3, 3))])
E_CAM = np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 3))])


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    Phi: np.ndarray      # 15x15
    Gamma: np.ndarray    # 15x4
    Ebar: np.ndarray     # 15x21, maps [w; v]
    Ibar: np.ndarray     # 15x3, maps the reference
    Cbar: np.ndarray     # 9x15
    E: np.ndarray        # 3x9


@dataclass(frozen=True)
class LqWeights:
    """Stage weights ``Q`` (15x15, PSD) and ``R`` (4x4, PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidParameterError("Q must be symmetric positive semi-definite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise InvalidParameterError("R must be symmetric positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def from_diagonals(cls, position=1.0, attitude=1.0, velocity=0.1, rate=0.1,
                       integral=0.1, r=(1.0, 1000.0, 1000.0, 1000.0)):
        q = np.repeat([position, attitude, velocity, rate, integral], 3)
        return cls(Q=np.diag(q), R=np.diag(np.asarray(r, dtype=float)))


@dataclass(frozen=True)
class LqGain:
    L: np.ndarray    # 4x15
    S: np.ndarray    # 15x15
    spectral_radius: float = field(default=np.nan)

    @property
    def Lx(self):
        return self.L[:, :N_STATE]

    @property
    def Li(self):
        return self.L[:, N_STATE:]


def build_selection_matrix(mask: AvailabilityMask, previous: Optional[np.ndarray] = None) -> np.ndarray:
    """Pick the position source for the integrator.

    UWB wins when present, then the camera. With neither, the previous
    selection is kept (UWB if there is none).
    """
    if mask.uwb:
        return E_UWB.copy()
    if mask.cam:
        return E_CAM.copy()
    return (E_UWB if previous is None else previous).copy()


def augment(model: DiscreteModel, E) -> AugmentedModel:
    E = np.asarray(E, dtype=float)
    n, m = model.Gamma.shape
    p = model.C.shape[0]
    if E.shape != (N_INT, p) or n != N_STATE or m != N_INPUT or p != N_OUTPUT:
        raise InvalidParameterError("inconsistent model / selection dimensions")
    Phi = np.zeros((N_AUG, N_AUG))
    Phi[:n, :n] = model.Phi
    Phi[n:, :n] = -E @ model.C
    Phi[n:, n:] = np.eye(N_INT)
    Gamma = np.vstack([model.Gamma, np.zeros((N_INT, m))])
    Ebar = np.zeros((N_AUG, n + p))
    Ebar[:n, :n] = np.eye(n)
    Ebar[n:, n:] = -E
    Ibar = np.vstack([np.zeros((n, N_INT)), np.eye(N_INT)])
    Cbar = np.hstack([model.C, np.zeros((p, N_INT))])
    return AugmentedModel(Phi=Phi, Gamma=Gamma, Ebar=Ebar, Ibar=Ibar, Cbar=Cbar, E=E)


def _riccati_rhs(S, Phi, Gamma, Q, R):
    GtS = Gamma.T @ S
    return Q + Phi.T @ S @ Phi - (Phi.T @ GtS.T) @ np.linalg.solve(GtS @ Gamma + R, GtS @ Phi)


def _unstable_modes(Phi, tol=1e-9):
    lam = np.linalg.eigvals(Phi)
    lam = lam[np.abs(lam) >= 1.0 - tol]
    # eigenvalues of a defective matrix scatter by ~eps^(1/k); merge close ones
    out = []
    for v in lam:
        if all(abs(v - w) > 1e-4 for w in out):
            out.append(v)
    return out


def is_stabilizable(Phi, Gamma) -> bool:
    """PBH test at every eigenvalue on or outside the unit circle."""
    n = Phi.shape[0]
    return all(np.linalg.matrix_rank(np.hstack([lam * np.eye(n) - Phi, Gamma]), tol=1e-9) == n
               for lam in _unstable_modes(Phi))


def is_detectable(Phi, Qhalf) -> bool:
    return is_stabilizable(Phi.T, Qhalf.T)


def solve_dare(Phi, Gamma, Q, R, tol: float = 1e-9, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon DARE by fixed-point Riccati iteration from ``S = Q``.

    Iterates ``S <- Q + Phi' S Phi - Phi' S G (G' S G + R)^-1 G' S Phi``
    until the elementwise max change drops below ``tol``.
    """
    Phi, Gamma, Q, R = (np.asarray(a, dtype=float) for a in (Phi, Gamma, Q, R))
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    LqWeights(Q, R)
    if not is_stabilizable(Phi, Gamma):
        raise InvalidParameterError("(Phi, Gamma) is not stabilizable")
    evals, evecs = np.linalg.eigh(Q)
    Qhalf = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    if not is_detectable(Phi, Qhalf):
        raise InvalidParameterError("(Phi, Q^1/2) is not detectable")

    S = Q.copy()
    delta = np.inf
    for it in range(1, max_iter + 1):
        S_next = _riccati_rhs(S, Phi, Gamma, Q, R)
        S_next = 0.5 * (S_next + S_next.T)
        delta = float(np.max(np.abs(S_next - S)))
        S = S_next
        if not np.isfinite(delta):
            break
        if delta < tol:
            return S
    raise ConvergenceError(
        f"DARE iteration did not converge after {it} iterations (last change {delta:.3g})",
        last=S, iterations=it, residual=delta)


def dare_residual(S, Phi, Gamma, Q, R) -> float:
    return float(np.max(np.abs(S - _riccati_rhs(S, Phi, Gamma, Q, R))))


def lq_gain(S, Phi, Gamma, R) -> LqGain:
    """``L = (G' S G + R)^-1 G' S Phi`` plus the closed-loop spectral radius."""
    GtS = Gamma.T @ S
    try:
        L = np.linalg.solve(GtS @ Gamma + R, GtS @ Phi)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"cannot invert G'SG + R: {err}") from err
    rho = float(np.max(np.abs(np.linalg.eigvals(Phi - Gamma @ L))))
    return LqGain(L=L, S=S, spectral_radius=rho)


def integral_update(i, r, y, E) -> np.ndarray:
    """``i + r - E y``."""
    return np.asarray(i, dtype=float) + np.asarray(r, dtype=float) - np.asarray(E) @ np.asarray(y)


def bumpless_integral(gain: LqGain, x) -> np.ndarray:
    """Integral state that makes ``control_law`` return hover at ``x``.

    Least-squares solution of ``Li i = -Lx x``. Starting the servo from
    this value avoids the drop a zero integrator causes when the vehicle
    starts away from the origin.
    """
    x = np.asarray(x, dtype=float)[:N_STATE]
    i, *_ = np.linalg.lstsq(gain.Li, -gain.Lx @ x, rcond=None)
    return i


def control_law(gain: LqGain, x_hat, i, hover) -> np.ndarray:
    """``u = hover - Lx x_hat - Li i`` with thrust clamped at zero.

    ``x_hat`` is the 12-dim a-priori plant estimate; extra (integral)
    entries are ignored so a 15-dim filter state can be passed directly.
    """
    x = np.asarray(x_hat, dtype=float)[:N_STATE]
    u = np.asarray(hover, dtype=float) - gain.Lx @ x - gain.Li @ np.asarray(i, dtype=float)
    u[0] = max(u[0], 0.0)
    return u


class GainCache:
    """LQ gains keyed on the selection matrix ``E``.

    ``Phibar`` depends on ``E``, so a gain is solved once per distinct
    selection and reused afterwards.
    """

    def __init__(self, model: DiscreteModel, weights: LqWeights, tol=1e-9, max_iter=100_000):
        self.model = model
        self.weights = weights
        self.tol = tol
        self.max_iter = max_iter
        self._lock = threading.Lock()
        self._entries = {}

    def get(self, E):
        key = np.asarray(E, dtype=float).tobytes()
        entry = self._entries.get(key)
        if entry is None:
            with self._lock:
                entry = self._entries.get(key)
                if entry is None:
                    aug = augment(self.model, E)
                    S = _cached_dare(aug.Phi, aug.Gamma, self.weights.Q, self.weights.R,
                                     self.tol, self.max_iter)
                    entry = (aug, lq_gain(S, aug.Phi, aug.Gamma, self.weights.R))
                    self._entries[key] = entry
        return entry

    def __len__(self):
        return len(self._entries)


_DARE_MEMO = {}
_DARE_LOCK = threading.Lock()


def _cached_dare(Phi, Gamma, Q, R, tol, max_iter):
    # identical problems recur across every episode of a Monte-Carlo batch
    key = tuple(np.ascontiguousarray(a).tobytes() for a in (Phi, Gamma, Q, R)) + (tol, max_iter)
    with _DARE_LOCK:
        S = _DARE_MEMO.get(key)
    if S is None:
        S = solve_dare(Phi, Gamma, Q, R, tol=tol, max_iter=max_iter)
        with _DARE_LOCK:
            if len(_DARE_MEMO) > 64:
                _DARE_MEMO.clear()
            _DARE_MEMO[key] = S
    return S
