"""Unit tests for the strapdown INS and error-state filter."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from vertinav.errors import ContractViolation, InsufficientDataError
from vertinav.fusion import (
    GRAVITY,
    ImuNoise,
    ImuSample,
    NavigationFilter,
    NavState,
    check_covariance,
    coarse_level,
    ekf_predict,
    ekf_update_altitude,
    ekf_update_pose,
    ekf_update_position,
    initial_covariance,
    inject_error,
    nees,
    strapdown_propagate,
)
from vertinav.models import FusionConfig
from vertinav.rotations import attitude_error, euler_to_quat, quat_to_dcm, quat_to_euler


@pytest.fixture
def level_state():
    """Stationary level state at the origin facing east."""
    return NavState(position=np.zeros(3), velocity=np.zeros(3), attitude=[1.0, 0.0, 0.0, 0.0])


@pytest.fixture
def cov():
    """Initial covariance of a 1 m position fix."""
    return initial_covariance(np.eye(3), FusionConfig())


def hover_imu(dt=0.01, force=(0.0, 0.0, GRAVITY), rate=(0.0, 0.0, 0.0)):
    return ImuSample(specific_force=list(force), angular_rate=list(rate), dt=dt)


class TestStrapdown:
    """Tests for strapdown mechanisation."""

    def test_stationary_stays_put(self, level_state):
        """Test a level vehicle sensing gravity does not move."""
        state = level_state
        for _ in range(100):
            state = strapdown_propagate(state, hover_imu())
        assert np.allclose(state.position, 0.0)
        assert np.allclose(state.velocity, 0.0)
        assert state.time == pytest.approx(1.0)

    def test_constant_acceleration(self, level_state):
        """Test trapezoidal integration of a constant acceleration is exact."""
        state = level_state
        for _ in range(100):
            state = strapdown_propagate(state, hover_imu(force=(1.0, 0.0, GRAVITY)))
        assert state.velocity[0] == pytest.approx(1.0)
        assert state.position[0] == pytest.approx(0.5)

    def test_yaw_rate(self, level_state):
        """Test a constant yaw rate integrates to the expected heading."""
        state = level_state
        for _ in range(1000):
            state = strapdown_propagate(state, hover_imu(rate=(0.0, 0.0, 0.1)))
        _, _, yaw = quat_to_euler(state.attitude)
        assert yaw == pytest.approx(1.0, abs=1e-3)
        assert np.linalg.norm(state.attitude) == pytest.approx(1.0)

    def test_bias_removed(self, level_state):
        """Test the estimated accelerometer bias is subtracted."""
        state = level_state.model_copy(update={"accel_bias": np.array([0.2, 0.0, 0.0])})
        state = strapdown_propagate(state, hover_imu(force=(0.2, 0.0, GRAVITY)))
        assert np.allclose(state.velocity, 0.0)


class TestValidation:
    """Tests for state and sample checks."""

    def test_non_unit_quaternion(self):
        """Test the attitude must be a unit quaternion."""
        with pytest.raises(ValidationError):
            NavState(position=np.zeros(3), velocity=np.zeros(3), attitude=[2.0, 0.0, 0.0, 0.0])

    def test_long_interval(self):
        """Test IMU intervals beyond 0.1 s are refused."""
        with pytest.raises(ValidationError):
            hover_imu(dt=0.2)

    def test_asymmetric_covariance(self):
        """Test an asymmetric covariance is refused."""
        bad = np.eye(3)
        bad[0, 2] = 1e-3
        with pytest.raises(ContractViolation):
            check_covariance(bad)


class TestKalmanFilter:
    """Tests for prediction and measurement updates."""

    def test_predict_grows_position(self, level_state, cov):
        """Test prediction increases the position variance and stays PSD."""
        grown = ekf_predict(cov, level_state, hover_imu(dt=0.1), ImuNoise())
        assert grown[0, 0] > cov[0, 0]
        check_covariance(grown)

    def test_predict_matches_sampled_errors(self, cov):
        """Test predicted covariance against errors pushed through the strapdown equations."""
        rng = np.random.default_rng(21)
        noise = ImuNoise()
        dt, steps, runs = 0.1, 10, 3000
        imu = hover_imu(dt=dt, force=(0.8, -0.3, GRAVITY), rate=(0.0, 0.0, 0.05))
        nominal = NavState(position=np.zeros(3), velocity=[2.0, 0.0, 0.0], attitude=euler_to_quat(0.0, 0.0, 0.4))

        truths = [inject_error(nominal, dx) for dx in rng.multivariate_normal(np.zeros(15), cov, size=runs)]
        predicted = cov
        for _ in range(steps):
            predicted = ekf_predict(predicted, nominal, imu, noise)
            nominal = strapdown_propagate(nominal, imu)
            propagated = []
            for truth in truths:
                noisy = hover_imu(
                    dt=dt,
                    force=imu.specific_force - rng.normal(0.0, noise.accel_noise_density / math.sqrt(dt), 3),
                    rate=imu.angular_rate - rng.normal(0.0, noise.gyro_noise_density / math.sqrt(dt), 3),
                )
                moved = strapdown_propagate(truth, noisy)
                propagated.append(moved.model_copy(update={
                    "accel_bias": moved.accel_bias + rng.normal(0.0, noise.accel_bias_rw * math.sqrt(dt), 3),
                    "gyro_bias": moved.gyro_bias + rng.normal(0.0, noise.gyro_bias_rw * math.sqrt(dt), 3),
                }))
            truths = propagated

        errors = np.array([
            np.concatenate([t.position - nominal.position, t.velocity - nominal.velocity,
                            attitude_error(t.dcm, nominal.dcm)])
            for t in truths
        ])
        sampled = np.cov(errors, rowvar=False)
        scale = np.sqrt(np.diag(predicted[:9, :9]))
        mismatch = (sampled - predicted[:9, :9]) / np.outer(scale, scale)
        assert np.max(np.abs(mismatch)) < 0.15
        # the tilt error must have fed the velocity error
        assert np.max(np.abs(predicted[3:6, 6:9])) > 0.0

    def test_position_update(self, level_state, cov):
        """Test a position fix pulls the state and shrinks the covariance."""
        state, updated, report = ekf_update_position(level_state, cov, [0.5, 0.0, 0.0], np.eye(3) * 0.25)
        assert report.accepted
        assert 0.0 < state.position[0] < 0.5
        assert updated[0, 0] < cov[0, 0]
        check_covariance(updated)

    def test_outlier_rejected(self, level_state, cov):
        """Test an inconsistent fix fails the innovation gate."""
        state, updated, report = ekf_update_position(level_state, cov, [100.0, 0.0, 0.0], np.eye(3))
        assert not report.accepted
        assert report.nis > report.threshold
        assert state is level_state
        assert np.array_equal(updated, cov)

    def test_infinite_variance_component_skipped(self, level_state, cov):
        """Test an axis with infinite variance is left out of the update."""
        r = np.diag([1.0, 1.0, np.inf])
        state, _, report = ekf_update_position(level_state, cov, [0.5, 0.5, 50.0], r)
        assert report.accepted
        assert report.innovation.size == 2
        assert state.position[2] == 0.0

    def test_altitude_sigma(self, level_state, cov):
        """Test a non-positive altitude sigma is refused."""
        with pytest.raises(ContractViolation):
            ekf_update_altitude(level_state, cov, 1.0, 0.0)

    def test_altitude_update(self, level_state, cov):
        """Test a barometric altitude moves only the up axis by position."""
        state, _, report = ekf_update_altitude(level_state, cov, 1.0, 0.5)
        assert report.accepted
        assert state.position[2] > 0.0
        assert state.position[0] == pytest.approx(0.0)

    def test_pose_update_corrects_heading(self, level_state, cov):
        """Test a precise attitude measurement corrects the yaw."""
        measured = quat_to_dcm(euler_to_quat(0.0, 0.0, 0.01))
        pose_cov = np.diag([0.01, 0.01, 0.01, 1e-6, 1e-6, 1e-6])
        state, _, report = ekf_update_pose(level_state, cov, np.zeros(3), measured, pose_cov)
        assert report.accepted
        _, _, yaw = quat_to_euler(state.attitude)
        assert yaw == pytest.approx(0.01, abs=1e-3)

    def test_nees_zero_at_truth(self, level_state, cov):
        """Test NEES vanishes when estimate and truth coincide."""
        assert nees(level_state, level_state, cov) == pytest.approx(0.0)


class TestCoarseLevel:
    """Tests for accelerometer levelling."""

    def test_roll_pitch(self):
        """Test roll and pitch are recovered from gravity."""
        roll, pitch = math.radians(3.0), math.radians(-2.0)
        f = GRAVITY * np.array([-math.sin(pitch), math.sin(roll) * math.cos(pitch), math.cos(roll) * math.cos(pitch)])
        got = coarse_level([f] * 10)
        assert got == pytest.approx((roll, pitch))

    def test_no_samples(self):
        """Test levelling needs data."""
        with pytest.raises(InsufficientDataError):
            coarse_level([])


class TestNavigationFilter:
    """Tests for the filter owner object."""

    def test_levelling_then_initialise(self):
        """Test stationary samples set the initial tilt."""
        nav = NavigationFilter(FusionConfig(leveling_samples=5))
        roll = math.radians(2.0)
        force = GRAVITY * np.array([0.0, math.sin(roll), math.cos(roll)])
        for _ in range(7):
            nav.add_leveling_sample(hover_imu(force=force))
        assert nav.leveling_ready
        state = nav.initialize(np.zeros(3), np.eye(3), t=1.0, heading=math.pi / 2)
        got_roll, _, yaw = quat_to_euler(state.attitude)
        assert got_roll == pytest.approx(roll)
        assert yaw == pytest.approx(math.pi / 2)
        assert nav.initialized

    def test_rejections_recorded(self):
        """Test rejected updates are kept as events."""
        nav = NavigationFilter()
        nav.initialize(np.zeros(3), np.eye(3), t=0.0)
        assert not nav.update_position([200.0, 0.0, 0.0], np.eye(3))
        assert len(nav.events) == 1
        assert nav.events[0].kind == "position"
        assert nav.position_covariance().shape == (3, 3)
