"""Unit tests for coordinate frames and rotation helpers."""

import math

import numpy as np
import pytest

from vertinav.geodesy import WGS84_A, enu_to_ecef_rotation, geodetic_to_ecef
from vertinav.rotations import (
    angle_between,
    attitude_error,
    dcm_to_quat,
    euler_to_quat,
    first_order_increment,
    heading_from_vector,
    quat_multiply,
    quat_normalize,
    quat_to_dcm,
    quat_to_euler,
    rotvec_to_quat,
    skew,
    so3_exp,
    so3_log,
)


class TestGeodesy:
    """Tests for WGS-84 and ENU conversions."""

    def test_equator_prime_meridian(self):
        """Test the equatorial radius on the x axis."""
        assert np.allclose(geodetic_to_ecef(0.0, 0.0, 0.0), [WGS84_A, 0.0, 0.0])

    def test_rotation_orthonormal(self):
        """Test the ENU axes form a right-handed orthonormal basis."""
        r = enu_to_ecef_rotation(51.855, 11.418)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-15)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_round_trip(self, frame):
        """Test ENU to ECEF and back is exact to rounding."""
        enu = np.array([120.0, -40.0, 30.5])
        assert np.allclose(frame.to_enu(frame.to_ecef(enu)), enu, atol=1e-8)

    def test_up_is_height(self, frame):
        """Test a point straight up has the expected ellipsoidal height offset."""
        above = geodetic_to_ecef(frame.lat_deg, frame.lon_deg, frame.height + 100.0)
        assert np.allclose(frame.to_enu(above), [0.0, 0.0, 100.0], atol=1e-8)

    def test_covariance_rotation(self, frame):
        """Test covariances rotate with the axes."""
        enu = np.diag([1.0, 2.0, 3.0])
        r = frame.r_enu_to_ecef
        assert np.allclose(frame.covariance_to_enu(r @ enu @ r.T), enu)


class TestRotations:
    """Tests for quaternion and SO(3) helpers."""

    def test_skew_cross_product(self):
        """Test [a x] b equals a x b."""
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -1.1])
        assert np.allclose(skew(a) @ b, np.cross(a, b))

    def test_quaternion_product_matches_dcm(self):
        """Test the Hamilton product composes rotations."""
        p = rotvec_to_quat([0.1, -0.2, 0.3])
        q = rotvec_to_quat([-0.4, 0.05, 0.2])
        assert np.allclose(quat_to_dcm(quat_multiply(p, q)), quat_to_dcm(p) @ quat_to_dcm(q))

    def test_dcm_round_trip(self):
        """Test DCM and quaternion conversions invert each other."""
        q = euler_to_quat(0.1, -0.05, 2.0)
        assert np.allclose(dcm_to_quat(quat_to_dcm(q)), q)

    def test_euler_round_trip(self):
        """Test roll, pitch and yaw are recovered."""
        roll, pitch, yaw = quat_to_euler(euler_to_quat(0.1, -0.05, 2.0))
        assert (roll, pitch, yaw) == pytest.approx((0.1, -0.05, 2.0))

    def test_yaw_rotates_east_to_north(self):
        """Test a quarter-turn yaw maps body x onto north."""
        c = quat_to_dcm(euler_to_quat(0.0, 0.0, math.pi / 2))
        assert np.allclose(c @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])

    def test_normalize_sign(self):
        """Test the scalar part is made non-negative."""
        q = quat_normalize([-2.0, 0.0, 0.0, 0.0])
        assert np.allclose(q, [1.0, 0.0, 0.0, 0.0])

    def test_exp_log(self):
        """Test the SO(3) exponential and logarithm invert each other."""
        phi = np.array([0.02, -0.01, 0.3])
        assert np.allclose(so3_log(so3_exp(phi)), phi)

    def test_attitude_error_left(self):
        """Test the error is applied on the left of the estimate."""
        c_est = quat_to_dcm(euler_to_quat(0.1, 0.2, 0.3))
        phi = np.array([0.01, 0.0, -0.02])
        assert np.allclose(attitude_error(so3_exp(phi) @ c_est, c_est), phi)
        assert angle_between(so3_exp(phi) @ c_est, c_est) == pytest.approx(np.linalg.norm(phi))

    def test_first_order_increment(self):
        """Test the increment carries half the rotation angle."""
        assert np.allclose(first_order_increment([0.2, 0.0, 0.0], 0.5), [1.0, 0.05, 0.0, 0.0])

    def test_heading(self):
        """Test headings count counter-clockwise from east."""
        assert heading_from_vector(0.0, 1.0) == pytest.approx(math.pi / 2)
