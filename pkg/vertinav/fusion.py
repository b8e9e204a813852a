"""Strapdown INS and 15-state error-state Kalman filter in a flat-earth ENU frame.

Error state ``[dp, dv, dtheta, db_a, db_g]`` with ``dx = true - estimate``
and a nav-frame attitude error ``C_true = Exp(dtheta) C_est``.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import chi2

from vertinav.errors import ContractViolation, InsufficientDataError
from vertinav.models import FusionConfig
from vertinav.rotations import (
    attitude_error,
    euler_to_quat,
    first_order_increment,
    quat_multiply,
    quat_normalize,
    quat_to_dcm,
    rotvec_to_quat,
    skew,
    so3_log,
)

logger = logging.getLogger(__name__)

GRAVITY = 9.80665
GRAVITY_NAV = np.array([0.0, 0.0, -GRAVITY])
STATE_DIM = 15

# 15x15 error-state covariance over [dp, dv, dtheta, dba, dbg]
ErrorStateCov = np.ndarray

POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)


def _vector3(v):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError("expected a 3-vector")
    return arr


class NavState(BaseModel):
    """Navigation solution: ENU position/velocity, body-to-nav attitude and IMU biases."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray = Field(..., description="Body-to-nav quaternion [w, x, y, z]")
    accel_bias: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    @field_validator("position", "velocity", "accel_bias", "gyro_bias", mode="before")
    @classmethod
    def validate_vector(cls, v):
        """Three finite components."""
        arr = _vector3(v)
        if not np.all(np.isfinite(arr)):
            raise ValueError("state vector must be finite")
        return arr

    @field_validator("attitude", mode="before")
    @classmethod
    def validate_attitude(cls, v):
        """Unit quaternion."""
        q = np.asarray(v, dtype=float)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("attitude must be a unit quaternion")
        return q

    @property
    def dcm(self) -> np.ndarray:
        return quat_to_dcm(self.attitude)


class ImuSample(BaseModel):
    """One IMU interval: mean specific force and angular rate in the body frame."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    specific_force: np.ndarray
    angular_rate: np.ndarray
    dt: float
    t: float = 0.0

    @field_validator("specific_force", "angular_rate", mode="before")
    @classmethod
    def validate_vector(cls, v):
        """Three components."""
        return _vector3(v)

    @field_validator("dt")
    @classmethod
    def validate_dt(cls, v):
        """Interval must lie in (0, 0.1] s."""
        if not 0.0 < v <= 0.1:
            raise ValueError("dt must lie in (0, 0.1] s")
        return v


class ImuNoise(BaseModel):
    """Continuous-time IMU noise parameters."""
    accel_noise_density: float = Field(default=0.005, ge=0)
    gyro_noise_density: float = Field(default=2e-4, ge=0)
    accel_bias_rw: float = Field(default=1e-5, ge=0)
    gyro_bias_rw: float = Field(default=1e-6, ge=0)


class InnovationReport(BaseModel):
    """Outcome of one measurement update."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str
    time: float = 0.0
    innovation: np.ndarray
    nis: float
    threshold: float
    accepted: bool


def check_covariance(cov: np.ndarray, name: str = "covariance") -> None:
    """Raise ContractViolation unless ``cov`` is symmetric PSD."""
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-15):
        raise ContractViolation(f"{name} must be finite and symmetric")
    trace = float(np.trace(cov))
    if float(np.min(np.linalg.eigvalsh(cov))) < -1e-12 * max(abs(trace), 1e-300):
        raise ContractViolation(f"{name} is not positive semi-definite")


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def strapdown_propagate(state: NavState, imu: ImuSample) -> NavState:
    """Integrate one IMU interval.

    Attitude uses a first-order quaternion update with the bias-corrected
    rate, velocity the rotated bias-corrected specific force plus gravity,
    and position the trapezoidal rule.
    """
    dt = imu.dt
    rate = imu.angular_rate - state.gyro_bias
    force = imu.specific_force - state.accel_bias

    c_old = quat_to_dcm(state.attitude)
    attitude = quat_normalize(quat_multiply(state.attitude, first_order_increment(rate, dt)))
    velocity = state.velocity + (c_old @ force + GRAVITY_NAV) * dt
    position = state.position + 0.5 * (state.velocity + velocity) * dt
    return state.model_copy(update={
        "position": position,
        "velocity": velocity,
        "attitude": attitude,
        "time": state.time + dt,
    })


def error_dynamics(state: NavState, imu: ImuSample) -> np.ndarray:
    """Continuous-time error-state matrix ``A``."""
    c = state.dcm
    f_nav = c @ (imu.specific_force - state.accel_bias)
    a = np.zeros((STATE_DIM, STATE_DIM))
    a[POS, VEL] = np.eye(3)
    a[VEL, ATT] = -skew(f_nav)
    a[VEL, BA] = -c
    a[ATT, BG] = -c
    return a


def process_noise(noise: ImuNoise, dt: float) -> np.ndarray:
    """Discrete process noise for one interval."""
    q = np.zeros(STATE_DIM)
    q[VEL] = noise.accel_noise_density**2 * dt
    q[ATT] = noise.gyro_noise_density**2 * dt
    q[BA] = noise.accel_bias_rw**2 * dt
    q[BG] = noise.gyro_bias_rw**2 * dt
    return np.diag(q)


def ekf_predict(cov: ErrorStateCov, state: NavState, imu: ImuSample, noise: ImuNoise) -> ErrorStateCov:
    """Propagate the error covariance over one IMU interval: ``F P F^T + Q``."""
    f = np.eye(STATE_DIM) + error_dynamics(state, imu) * imu.dt
    return _symmetrize(f @ cov @ f.T + process_noise(noise, imu.dt))


def inject_error(state: NavState, dx: np.ndarray) -> NavState:
    """Fold an error-state estimate into the nominal state."""
    attitude = quat_normalize(quat_multiply(rotvec_to_quat(dx[ATT]), state.attitude))
    return state.model_copy(update={
        "position": state.position + dx[POS],
        "velocity": state.velocity + dx[VEL],
        "attitude": attitude,
        "accel_bias": state.accel_bias + dx[BA],
        "gyro_bias": state.gyro_bias + dx[BG],
    })


def _gate_threshold(gate_probability: float, dof: int) -> float:
    return float(chi2.ppf(1.0 - gate_probability, dof))


def _update(
    kind: str,
    state: NavState,
    cov: np.ndarray,
    innovation: np.ndarray,
    h: np.ndarray,
    r: np.ndarray,
    gate_probability: float,
) -> Tuple[NavState, ErrorStateCov, InnovationReport]:
    finite = ~np.isinf(np.diag(r))
    if not np.all(finite):
        off = r[np.ix_(finite, ~finite)]
        if np.any(off != 0):
            raise ContractViolation(f"{kind}: infinite variances must be uncorrelated")
        innovation, h, r = innovation[finite], h[finite], r[np.ix_(finite, finite)]
    check_covariance(r, f"{kind} measurement covariance")

    dof = int(innovation.size)
    if dof == 0:
        return state, cov, InnovationReport(
            kind=kind, time=state.time, innovation=innovation, nis=0.0, threshold=0.0, accepted=False
        )

    s = _symmetrize(h @ cov @ h.T + r)
    nis = float(innovation @ np.linalg.solve(s, innovation))
    threshold = _gate_threshold(gate_probability, dof)
    if nis > threshold:
        logger.warning(f"{kind} update rejected at t={state.time:.2f} s: NIS {nis:.2f} > {threshold:.2f}")
        return state, cov, InnovationReport(
            kind=kind, time=state.time, innovation=innovation, nis=nis, threshold=threshold, accepted=False
        )

    k = np.linalg.solve(s, h @ cov).T
    dx = k @ innovation
    i_kh = np.eye(STATE_DIM) - k @ h
    cov = _symmetrize(i_kh @ cov @ i_kh.T + k @ r @ k.T)
    return inject_error(state, dx), cov, InnovationReport(
        kind=kind, time=state.time, innovation=innovation, nis=nis, threshold=threshold, accepted=True
    )


def _position_h() -> np.ndarray:
    h = np.zeros((3, STATE_DIM))
    h[:, POS] = np.eye(3)
    return h


def ekf_update_position(
    state: NavState,
    cov: np.ndarray,
    meas,
    r: np.ndarray,
    gate_probability: float = 1e-3,
) -> Tuple[NavState, ErrorStateCov, InnovationReport]:
    """ENU position update (3-dof gate)."""
    innovation = np.asarray(meas, dtype=float) - state.position
    return _update("position", state, cov, innovation, _position_h(), np.asarray(r, dtype=float), gate_probability)


def ekf_update_altitude(
    state: NavState,
    cov: np.ndarray,
    baro_alt: float,
    sigma: float,
    gate_probability: float = 1e-3,
) -> Tuple[NavState, ErrorStateCov, InnovationReport]:
    """Scalar update of the up component (1-dof gate)."""
    if not sigma > 0:
        raise ContractViolation(f"altitude sigma must be positive, got {sigma}")
    h = np.zeros((1, STATE_DIM))
    h[0, 2] = 1.0
    innovation = np.array([baro_alt - state.position[2]])
    return _update("altitude", state, cov, innovation, h, np.array([[sigma * sigma]]), gate_probability)


def ekf_update_pose(
    state: NavState,
    cov: np.ndarray,
    position,
    attitude_dcm: np.ndarray,
    pose_cov: np.ndarray,
    gate_probability: float = 1e-3,
) -> Tuple[NavState, ErrorStateCov, InnovationReport]:
    """Joint position and small-angle attitude update (6-dof gate).

    Args:
        position: Measured ENU position of the body
        attitude_dcm: Measured body-to-nav rotation
        pose_cov: 6x6 covariance [position, nav-frame small angle]
    """
    innovation = np.concatenate([
        np.asarray(position, dtype=float) - state.position,
        so3_log(np.asarray(attitude_dcm) @ state.dcm.T),
    ])
    h = np.zeros((6, STATE_DIM))
    h[0:3, POS] = np.eye(3)
    h[3:6, ATT] = np.eye(3)
    return _update("pose", state, cov, innovation, h, np.asarray(pose_cov, dtype=float), gate_probability)


def coarse_level(specific_forces: Sequence) -> Tuple[float, float]:
    """Roll and pitch [rad] from averaged stationary accelerometer samples."""
    forces = np.asarray(specific_forces, dtype=float).reshape(-1, 3)
    if forces.shape[0] == 0:
        raise InsufficientDataError("coarse levelling needs at least one sample")
    fx, fy, fz = forces.mean(axis=0)
    roll = math.atan2(fy, fz)
    pitch = math.atan2(-fx, math.hypot(fy, fz))
    return roll, pitch


def nees(true_state: NavState, est_state: NavState, cov: ErrorStateCov) -> float:
    """Normalised estimation error squared over position, velocity and attitude (9 dof)."""
    err = np.concatenate([
        true_state.position - est_state.position,
        true_state.velocity - est_state.velocity,
        attitude_error(true_state.dcm, est_state.dcm),
    ])
    return float(err @ np.linalg.solve(cov[:9, :9], err))


def initial_covariance(position_cov: np.ndarray, config: FusionConfig) -> ErrorStateCov:
    """Initial error covariance from a position fix and configured sigmas."""
    p = np.zeros((STATE_DIM, STATE_DIM))
    p[POS, POS] = position_cov
    p[VEL, VEL] = np.eye(3) * config.init_velocity_sigma**2
    tilt = math.radians(config.init_tilt_sigma_deg) ** 2
    yaw = math.radians(config.init_yaw_sigma_deg) ** 2
    p[ATT, ATT] = np.diag([tilt, tilt, yaw])
    p[BA, BA] = np.eye(3) * config.init_accel_bias_sigma**2
    p[BG, BG] = np.eye(3) * config.init_gyro_bias_sigma**2
    return p


class NavigationFilter:
    """Single-owner error-state filter.

    Collects stationary accelerometer samples for levelling until the first
    accepted GNSS fix initialises it; afterwards every IMU sample propagates
    and every measurement updates the solution.
    """

    def __init__(self, config: Optional[FusionConfig] = None, noise: Optional[ImuNoise] = None):
        self.config = config or FusionConfig()
        self.noise = noise or ImuNoise(
            accel_noise_density=self.config.accel_noise_density,
            gyro_noise_density=self.config.gyro_noise_density,
            accel_bias_rw=self.config.accel_bias_rw,
            gyro_bias_rw=self.config.gyro_bias_rw,
        )
        self.state: Optional[NavState] = None
        self.cov: Optional[np.ndarray] = None
        self.events: List[InnovationReport] = []
        self._leveling: List[np.ndarray] = []

    @property
    def initialized(self) -> bool:
        return self.state is not None

    @property
    def leveling_ready(self) -> bool:
        return len(self._leveling) >= self.config.leveling_samples

    def add_leveling_sample(self, imu: ImuSample) -> None:
        """Keep the most recent stationary samples for coarse levelling."""
        self._leveling.append(np.asarray(imu.specific_force))
        if len(self._leveling) > self.config.leveling_samples:
            self._leveling.pop(0)

    def initialize(self, position, position_cov: np.ndarray, t: float, heading: float = 0.0) -> NavState:
        """Start the filter at a GNSS fix.

        Args:
            position: ENU position of the fix
            position_cov: 3x3 ENU covariance of the fix
            t: Time of the fix
            heading: Configured ENU yaw [rad]
        """
        if self._leveling:
            roll, pitch = coarse_level(self._leveling)
        else:
            roll = pitch = 0.0
        self.state = NavState(
            position=position,
            velocity=np.zeros(3),
            attitude=euler_to_quat(roll, pitch, heading),
            time=t,
        )
        self.cov = initial_covariance(np.asarray(position_cov, dtype=float), self.config)
        logger.info(
            f"Filter initialised at t={t:.2f} s: roll {math.degrees(roll):.2f} deg, "
            f"pitch {math.degrees(pitch):.2f} deg, yaw {math.degrees(heading):.2f} deg"
        )
        return self.state

    def reset(self, state: NavState, cov: ErrorStateCov) -> None:
        """Start from a given state and error covariance."""
        check_covariance(cov, "initial covariance")
        self.state = state
        self.cov = np.asarray(cov, dtype=float)

    def predict(self, imu: ImuSample) -> NavState:
        self.cov = ekf_predict(self.cov, self.state, imu, self.noise)
        self.state = strapdown_propagate(self.state, imu)
        return self.state

    def _record(self, report: InnovationReport) -> bool:
        if not report.accepted and report.innovation.size:
            self.events.append(report)
        return report.accepted

    def update_position(self, meas, r: np.ndarray) -> bool:
        self.state, self.cov, report = ekf_update_position(
            self.state, self.cov, meas, r, self.config.gate_probability
        )
        return self._record(report)

    def update_altitude(self, altitude: float, sigma: float) -> bool:
        self.state, self.cov, report = ekf_update_altitude(
            self.state, self.cov, altitude, sigma, self.config.gate_probability
        )
        return self._record(report)

    def update_pose(self, position, attitude_dcm: np.ndarray, pose_cov: np.ndarray) -> bool:
        self.state, self.cov, report = ekf_update_pose(
            self.state, self.cov, position, attitude_dcm, pose_cov, self.config.gate_probability
        )
        return self._record(report)

    def position_covariance(self) -> np.ndarray:
        return self.cov[POS, POS]
