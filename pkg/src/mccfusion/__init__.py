"""Closed-loop quadrotor simulation with MCC-KF multisensor fusion.

The package is organised by subsystem:

``model``
    physical parameters, nonlinear plant, linearised and discretised models
``sensors``
    IMU, UWB ranging/multilateration and camera measurement simulation
``control``
    integral-augmented model, DARE solver and LQ-servo control law
``filters``
    intermittent-measurement Kalman filter and MCC-KF
``simharness``
    reference trajectories, closed-loop episodes and Monte-Carlo statistics
``config`` / ``cli``
    configuration file parsing and the command-line entry point
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    EpisodeAborted,
    GeometryError,
    InconsistencyError,
    InvalidParameterError,
    NumericalError,
)
from .model import (
    ContinuousModel,
    DiscreteModel,
    QuadrotorParams,
    build_continuous_model,
    discretize,
    step_linear_plant,
    step_nonlinear_plant,
)
from .control import (
    AugmentedModel,
    LqGain,
    LqWeights,
    GainCache,
    augment,
    build_selection_matrix,
    bumpless_integral,
    control_law,
    integral_update,
    lq_gain,
    solve_dare,
)
from .sensors import (
    AnchorSet,
    AvailabilityMask,
    MeasurementFrame,
    NoiseModel,
    SensorNoise,
    SensorSuite,
    assemble_frame,
    measure_camera,
    measure_imu,
    multilaterate,
    range_uwb,
    sample_availability,
    sample_noise,
)
from .filters import (
    FilterState,
    MccConfig,
    NoiseCovariances,
    gaussian_kernel,
    impute,
    init_filter,
    kf_step,
    mcckf_step,
)
from .simharness import (
    EpisodeLog,
    ProcessNoise,
    ScenarioConfig,
    StatsTable,
    generate_trajectory,
    rmse,
    run_episode,
    run_monte_carlo,
    summarize,
)
from .config import RunConfig, parse_config

__version__ = "0.1.0"
