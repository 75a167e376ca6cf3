"""Kalman filter and maximum-correntropy Kalman filter (MCC-KF).

Both filters run on the integral-augmented model of :mod:`mccfusion.control`
in one-step-predictor form: they carry ``x_{k|k-1}`` and ``P_{k|k-1}`` and
produce ``x_{k+1|k}``. The augmented process noise ``Ebar [w; v]`` is
correlated with the measurement noise ``v`` through the integral states, so
the gain carries the cross term ``Ebar V12`` with ``V12 = [0; V]``.

Missing measurements
--------------------
``kf_step`` drops the rows of unavailable sensors by default. It also
accepts an imputation strategy, which is how it serves as an oracle for
``mcckf_step`` (identical imputation, kernel size -> infinity).

``mcckf_step`` always imputes the full 9-vector:

``"previous"``
    reuse the last value reported by that sensor
``"expected"``
    substitute the predicted measurement, zeroing that block's innovation
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.linalg

from .control import N_AUG, AugmentedModel
from .errors import InvalidParameterError, NumericalError
from .sensors import CAM_ROWS, IMU_ROWS, UWB_ROWS, MeasurementFrame

STRATEGIES = ("previous", "expected")


@dataclass(frozen=True, eq=False)
class NoiseCovariances:
    """Process covariance ``W`` (12x12) and measurement covariance ``V`` (9x9)."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if W.shape != (12, 12) or V.shape != (9, 9):
            raise InvalidParameterError("W must be 12x12 and V 9x9")
        if np.linalg.eigvalsh(0.5 * (W + W.T)).min() < -1e-12:
            raise InvalidParameterError("W must be positive semi-definite")
        if np.linalg.eigvalsh(0.5 * (V + V.T)).min() <= 0:
            raise InvalidParameterError("V must be positive definite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)

    @property
    def V1(self):
        """Covariance of the stacked noise ``[w; v]`` (21x21)."""
        return scipy.linalg.block_diag(self.W, self.V)

    @property
    def V12(self):
        """Cross covariance ``E{[w; v] v'} = [0; V]`` (21x9)."""
        return np.vstack([np.zeros((12, 9)), self.V])

    @property
    def V2(self):
        return self.V


@dataclass(frozen=True)
class MccConfig:
    sigma: float = 5.0
    strategy: str = "previous"
    floor: float = 1e-12

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"kernel size sigma must be positive, got {self.sigma}")
        if not self.floor > 0:
            raise InvalidParameterError(f"kernel floor must be positive, got {self.floor}")
        if self.strategy not in STRATEGIES:
            raise InvalidParameterError(f"unknown imputation strategy {self.strategy!r}")


@dataclass(frozen=True)
class FilterState:
    """Filter memory between steps.

    Attributes
    ----------
    x, P
        A-priori estimate ``x_{k|k-1}`` (15) and its covariance.
    y_prev
        Last imputed measurement vector (9), used by the ``previous``
        strategy.
    k
        Index of the step that ``x`` predicts.
    correction
        Prediction residual of the previous step. For the MCC-KF it is
        ``x - (Phi x_filt + Gamma u_prev + Ibar r_prev)`` and feeds the
        kernel denominator; for the KF it is the whole measurement
        correction ``x - (Phi x_prev + Gamma u_prev + Ibar r_prev)``.
    x_filt
        A-posteriori estimate of the previous step, ``x_{k-1|k-1}``.
    diag
        Per-step diagnostics of the step that produced this state.
    """

    x: np.ndarray
    P: np.ndarray
    y_prev: np.ndarray
    k: int = 0
    correction: Optional[np.ndarray] = None
    x_filt: Optional[np.ndarray] = None
    diag: dict = field(default_factory=dict)


def init_filter(x0, P0, Cbar) -> FilterState:
    x0 = np.asarray(x0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    if P0.ndim == 0:
        P0 = float(P0) * np.eye(x0.size)
    return FilterState(x=x0.copy(), P=P0.copy(), y_prev=np.asarray(Cbar) @ x0, k=0,
                       correction=np.zeros_like(x0))


def gaussian_kernel(d_sq, sigma):
    """``exp(-d_sq / (2 sigma^2))`` for a squared (weighted) distance."""
    return np.exp(-np.asarray(d_sq, dtype=float) / (2.0 * float(sigma) ** 2))


def impute(frame: MeasurementFrame, state: FilterState, H, strategy: str) -> np.ndarray:
    """Fill unavailable sensor blocks of ``frame.y``.

    Available blocks pass through unchanged. The caller stores the result
    as the next ``y_prev``.
    """
    if strategy not in STRATEGIES:
        raise InvalidParameterError(f"unknown imputation strategy {strategy!r}")
    y = frame.y.copy()
    missing = ~frame.row_mask
    if missing.any():
        if strategy == "previous":
            fill = state.y_prev
        else:
            fill = np.asarray(H) @ state.x
        y[missing] = fill[missing]
    return y


@lru_cache(maxsize=32)
def _constants(model: AugmentedModel, cov: NoiseCovariances):
    """Step-invariant products for one (model, covariances) pair."""
    Ebar = model.Ebar
    Qa = Ebar @ cov.V1 @ Ebar.T
    M = Ebar @ cov.V12
    return Qa, M, np.linalg.inv(cov.V2)


def _weighted_sq(v, M):
    try:
        return float(v @ np.linalg.solve(M, v))
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"singular weighting matrix: {err}") from err


def _check_psd(P, k):
    if not np.all(np.isfinite(P)):
        raise NumericalError(f"non-finite covariance after step {k}")


def kf_step(state: FilterState, model: AugmentedModel, u, frame: MeasurementFrame,
            cov: NoiseCovariances, r=None, strategy: Optional[str] = None) -> FilterState:
    """One Kalman step for the correlated-noise augmented model.

    Measurement update on the rows that are available (or on the full
    imputed vector when ``strategy`` is given), then a time update that
    adds back the part of the process noise explained by the innovation.
    """
    H = model.Cbar
    if strategy is None:
        rows = frame.row_mask
        y_full = frame.y
        y_prev = np.where(rows, frame.y, state.y_prev)
    else:
        y_full = impute(frame, state, H, strategy)
        rows = np.ones(9, dtype=bool)
        y_prev = y_full

    x, P = state.x, state.P
    Phi, Gam = model.Phi, model.Gamma
    r = np.zeros(model.Ibar.shape[1]) if r is None else np.asarray(r, dtype=float)
    Qa, M_full, _ = _constants(model, cov)
    x_pred = Phi @ x + Gam @ np.asarray(u, dtype=float) + model.Ibar @ r

    if not rows.any():
        P_next = Phi @ P @ Phi.T + Qa
        P_next = 0.5 * (P_next + P_next.T)
        _check_psd(P_next, state.k)
        return FilterState(x=x_pred, P=P_next, y_prev=y_prev, k=state.k + 1,
                           correction=np.zeros_like(x), x_filt=x.copy(),
                           diag={"rows": 0})

    if rows.all():
        Hs, Vs, M = H, cov.V2, M_full
        innov = y_full - H @ x
    else:
        Hs = H[rows]
        Vs = cov.V2[np.ix_(rows, rows)]
        M = M_full[:, rows]
        innov = y_full[rows] - Hs @ x
    S = Hs @ P @ Hs.T + Vs
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"innovation covariance is singular at step {state.k}") from err

    # measurement update (Joseph form)
    Kf = P @ Hs.T @ Sinv
    x_f = x + Kf @ innov
    IKH = np.eye(x.size) - Kf @ Hs
    P_f = IKH @ P @ IKH.T + Kf @ Vs @ Kf.T

    # time update, with the innovation-correlated share of the process noise
    MSinv = M @ Sinv
    x_next = Phi @ x_f + Gam @ np.asarray(u, dtype=float) + model.Ibar @ r + MSinv @ innov
    cross = Phi @ Kf @ M.T
    P_next = Phi @ P_f @ Phi.T + Qa - MSinv @ M.T - cross - cross.T
    P_next = 0.5 * (P_next + P_next.T)
    _check_psd(P_next, state.k)
    return FilterState(x=x_next, P=P_next, y_prev=y_prev, k=state.k + 1,
                       correction=x_next - x_pred, x_filt=x_f,
                       diag={"rows": int(rows.sum()), "innovation": innov})


def mcckf_step(state: FilterState, model: AugmentedModel, u, frame: MeasurementFrame,
               cov: NoiseCovariances, mcc: MccConfig = MccConfig(), r=None) -> FilterState:
    """One MCC-KF step.

    The gain is built with the covariance scaled by the kernel ratio::

        c = G(|y - H x|_{V2^-1}) / max(G(|residual|_{P^-1}), floor)
        K = (Phi P c H' + Ebar V12) (H P c H' + V2)^-1
        x_next = Phi x + Gamma u + Ibar r + K (y - H x)

    The numerator sees the full imputed measurement vector, which is
    where the two strategies differ. ``H`` in the gain and covariance is
    the measurement matrix of this step, i.e. the rows of sensors that
    actually reported, so imputed values never count as information.
    ``residual`` is the previous step's prediction residual
    ``x_{k|k-1} - (Phi x_{k-1|k-1} + Gamma u + Ibar r)``. The covariance is
    the error covariance of the estimator at the gain actually applied.
    """
    H = model.Cbar
    y = impute(frame, state, H, mcc.strategy)
    x, P = state.x, state.P
    Phi = model.Phi
    Qa, M_full, V2inv = _constants(model, cov)
    u = np.asarray(u, dtype=float)
    r = np.zeros(model.Ibar.shape[1]) if r is None else np.asarray(r, dtype=float)

    innov_full = y - H @ x
    num = float(gaussian_kernel(innov_full @ V2inv @ innov_full, mcc.sigma))
    res = state.correction if state.correction is not None else np.zeros_like(x)
    den = float(gaussian_kernel(_weighted_sq(res, P), mcc.sigma)) if res.any() else 1.0
    clamped = den < mcc.floor
    c = num / max(den, mcc.floor)

    rows = frame.row_mask
    if rows.all():
        Hs, V2, M, innov = H, cov.V2, M_full, innov_full
    else:
        Hs = H[rows]
        V2 = cov.V2[np.ix_(rows, rows)]
        M = M_full[:, rows]
        innov = innov_full[rows]
    PHt = P @ Hs.T
    HPHt = Hs @ PHt
    PhiPHt = Phi @ PHt
    try:
        Sc_inv = np.linalg.inv(c * HPHt + V2)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"H P H' + V2 is singular at step {state.k}") from err
    K = (c * PhiPHt + M) @ Sc_inv

    x_pred = Phi @ x + model.Gamma @ u + model.Ibar @ r
    x_next = x_pred + K @ innov
    x_f = x + c * (PHt @ (Sc_inv @ innov))
    # prediction residual against the filtered estimate; the Phi-part of
    # the gain cancels, leaving the noise-correlation share M Sc^-1 innov
    residual = x_next - (Phi @ x_f + model.Gamma @ u + model.Ibar @ r)

    # error covariance [I, -K] J [I, -K]' of the joint prediction/innovation
    # covariance J, evaluated at the gain actually applied
    cross = (PhiPHt + M) @ K.T
    P_next = Phi @ P @ Phi.T + Qa - cross - cross.T + K @ (HPHt + V2) @ K.T
    P_next = 0.5 * (P_next + P_next.T)
    _check_psd(P_next, state.k)

    return FilterState(x=x_next, P=P_next, y_prev=y, k=state.k + 1, correction=residual,
                       x_filt=x_f,
                       diag={"kernel_num": num, "kernel_den": den, "kernel_ratio": c,
                             "clamped": clamped, "gain": K, "rows": int(rows.sum()),
                             "innovation": innov_full})
