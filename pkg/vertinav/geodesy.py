"""WGS-84 and local tangent-plane (ENU) coordinate helpers."""

import math
from typing import Tuple

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def geodetic_to_ecef(lat_deg: float, lon_deg: float, height: float) -> np.ndarray:
    """WGS-84 geodetic coordinates to ECEF [m]."""
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array([
        (n + height) * math.cos(lat) * math.cos(lon),
        (n + height) * math.cos(lat) * math.sin(lon),
        (n * (1.0 - WGS84_E2) + height) * sin_lat,
    ])


def enu_to_ecef_rotation(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Rotation whose columns are the east, north and up axes in ECEF."""
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, -sl * co, cl * co],
        [co, -sl * so, cl * so],
        [0.0, cl, sl],
    ])


class LocalFrame:
    """Tangent-plane ENU frame anchored at a geodetic reference point.

    ENU and ECEF are related by a rigid rotation and offset, so mapping a
    point back and forth is exact up to rounding.
    """

    def __init__(self, lat_deg: float, lon_deg: float, height: float):
        self.lat_deg = lat_deg
        self.lon_deg = lon_deg
        self.height = height
        self.origin_ecef = geodetic_to_ecef(lat_deg, lon_deg, height)
        self.r_enu_to_ecef = enu_to_ecef_rotation(lat_deg, lon_deg)

    def to_ecef(self, enu) -> np.ndarray:
        return self.origin_ecef + self.r_enu_to_ecef @ np.asarray(enu, dtype=float)

    def to_enu(self, ecef) -> np.ndarray:
        return self.r_enu_to_ecef.T @ (np.asarray(ecef, dtype=float) - self.origin_ecef)

    def vector_to_enu(self, vec) -> np.ndarray:
        return self.r_enu_to_ecef.T @ np.asarray(vec, dtype=float)

    def covariance_to_enu(self, cov_ecef: np.ndarray) -> np.ndarray:
        """Rotate a 3x3 ECEF covariance into ENU."""
        r = self.r_enu_to_ecef
        return r.T @ cov_ecef @ r

    def azimuth_elevation(self, receiver_enu, target_ecef) -> Tuple[float, float]:
        """Azimuth and elevation [deg] of an ECEF point seen from an ENU position."""
        los = self.vector_to_enu(np.asarray(target_ecef) - self.to_ecef(receiver_enu))
        az = math.degrees(math.atan2(los[0], los[1])) % 360.0
        el = math.degrees(math.atan2(los[2], math.hypot(los[0], los[1])))
        return az, el
