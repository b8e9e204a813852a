"""Marker-based camera pose estimation.

Pinhole camera without distortion. A pose is the camera centre ``C`` in
world (ENU) coordinates and the camera-to-world rotation ``R_wc``; a world
point projects through ``x_c = R_wc^T (P - C)``. Attitude perturbations are
world-frame small angles applied on the left, ``R_wc <- Exp(dphi) R_wc``,
the same convention the navigation filter uses.
"""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from vertinav.errors import (
    BehindCameraError,
    ConvergenceFailureError,
    InsufficientObservationsError,
    NoDetectionError,
    UnobservableParameterError,
)
from vertinav.models import MarkerSpec, VisionConfig
from vertinav.rotations import skew, so3_exp

logger = logging.getLogger(__name__)

# Camera x -> body x, camera y -> body -y, optical axis -> body down.
R_BODY_CAMERA = np.diag([1.0, -1.0, -1.0])

MAX_ITERATIONS = 50
STEP_TOLERANCE = 1e-10
CONVERGED_STEP = 1e-4
MAX_HALVINGS = 20

LARGE_MARKER_SIDE = 0.785
SMALL_MARKER_SIDE = 0.048
DEFAULT_FAMILY = "tag25h9"

# Small markers embedded in the large landing marker, offsets from its centre [m].
SMALL_MARKER_OFFSETS = {
    0: (0.0, 0.0),
    1: (0.12, 0.0),
    2: (-0.12, 0.0),
    3: (0.0, 0.25),
    4: (0.0, -0.25),
}


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class CameraIntrinsics(_ArrayModel):
    """Pinhole intrinsics with their uncertainty."""
    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    image_size: Tuple[int, int] = (640, 480)
    intrinsic_cov: np.ndarray = Field(default_factory=lambda: np.zeros((4, 4)))

    @field_validator("intrinsic_cov", mode="before")
    @classmethod
    def validate_cov(cls, v):
        """4x4 over (fx, fy, cx, cy)."""
        arr = np.asarray(v, dtype=float)
        if arr.shape != (4, 4):
            raise ValueError("intrinsic_cov must be 4x4")
        return arr

    @classmethod
    def from_config(cls, config: VisionConfig) -> "CameraIntrinsics":
        return cls(
            fx=config.fx, fy=config.fy, cx=config.cx, cy=config.cy,
            image_size=(config.width, config.height),
            intrinsic_cov=np.diag(np.square(config.intrinsic_sigma)),
        )

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def with_vector(self, k: Sequence[float]) -> "CameraIntrinsics":
        return self.model_copy(update={"fx": float(k[0]), "fy": float(k[1]), "cx": float(k[2]), "cy": float(k[3])})

    def in_image(self, pixel) -> bool:
        w, h = self.image_size
        return 0.0 <= pixel[0] < w and 0.0 <= pixel[1] < h


class MarkerDefinition(_ArrayModel):
    """Marker map entry with world corner coordinates."""
    id: int
    side_length: float = Field(..., gt=0)
    corner_positions_world: np.ndarray
    family: str = DEFAULT_FAMILY

    @field_validator("corner_positions_world", mode="before")
    @classmethod
    def validate_corners(cls, v):
        """Four 3D corners."""
        arr = np.asarray(v, dtype=float)
        if arr.shape != (4, 3):
            raise ValueError("corner_positions_world must be 4x3")
        return arr

    @property
    def center(self) -> np.ndarray:
        return self.corner_positions_world.mean(axis=0)


class CornerObservation(_ArrayModel):
    """Detected marker corner in pixels."""
    marker_id: int
    corner_index: int = Field(..., ge=0, le=3)
    pixel: np.ndarray
    sigma_px: float = Field(default=0.5, gt=0)
    t: float = 0.0

    @field_validator("pixel", mode="before")
    @classmethod
    def validate_pixel(cls, v):
        """Two pixel coordinates."""
        arr = np.asarray(v, dtype=float)
        if arr.shape != (2,):
            raise ValueError("pixel must have two coordinates")
        return arr


class PoseEstimate(_ArrayModel):
    """Camera pose from marker corners."""
    position: np.ndarray = Field(..., description="Camera centre in world coordinates [m]")
    rotation: np.ndarray = Field(..., description="World-to-camera rotation")
    covariance: np.ndarray = Field(..., description="6x6 over [position, world-frame small angle]")
    reprojection_rms: float
    initial_rms: float = 0.0
    iterations: int = 0
    marker_ids: List[int] = Field(default_factory=list)
    intrinsic_sensitivity: Optional[np.ndarray] = Field(
        default=None, description="6x4 derivative of the pose with respect to (fx, fy, cx, cy)"
    )

    @property
    def camera_to_world(self) -> np.ndarray:
        return self.rotation.T


class CalibrationErrorEstimate(_ArrayModel):
    """Intrinsic error recovered from reconstruction residuals."""
    delta: np.ndarray = Field(..., description="Error of the assumed (fx, fy, cx, cy)")
    covariance: np.ndarray
    corrected: CameraIntrinsics
    residual_rms: float


# ---------------------------------------------------------------------------
# Marker maps
# ---------------------------------------------------------------------------

def marker_from_map_row(
    marker_id: int,
    side_m: float,
    cx: float,
    cy: float,
    cz: float = 0.0,
    yaw_deg: float = 0.0,
    family: str = DEFAULT_FAMILY,
) -> MarkerDefinition:
    """Marker whose corners run counter-clockwise seen from above, starting at (-s/2, -s/2)."""
    h = side_m / 2.0
    local = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    yaw = math.radians(yaw_deg)
    rot = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
    xy = local @ rot.T + np.array([cx, cy])
    corners = np.column_stack([xy, np.full(4, cz)])
    return MarkerDefinition(id=marker_id, side_length=side_m, corner_positions_world=corners, family=family)


def markers_from_specs(specs: Iterable[MarkerSpec]) -> Dict[int, MarkerDefinition]:
    return {
        s.id: marker_from_map_row(s.id, s.side_m, s.cx, s.cy, s.cz, s.yaw_deg, s.family)
        for s in specs
    }


def default_marker_layout(vertiport_a: Sequence[float], vertiport_b: Sequence[float]) -> Dict[int, MarkerDefinition]:
    """Large markers 11 (at A) and 21 (at B) with five small markers inside marker 21."""
    ax, ay, az = vertiport_a
    bx, by, bz = vertiport_b
    markers = {
        11: marker_from_map_row(11, LARGE_MARKER_SIDE, ax, ay, az),
        21: marker_from_map_row(21, LARGE_MARKER_SIDE, bx, by, bz),
    }
    for marker_id, (dx, dy) in SMALL_MARKER_OFFSETS.items():
        markers[marker_id] = marker_from_map_row(marker_id, SMALL_MARKER_SIDE, bx + dx, by + dy, bz)
    return markers


def calibration_layout(side_m: float = 0.3) -> Dict[int, MarkerDefinition]:
    """Seven ground markers (ids 21-27) spread for intrinsic calibration checks."""
    centres = [(0.0, 0.0), (1.5, 0.0), (-1.5, 0.0), (0.0, 1.2), (0.0, -1.2), (1.2, 1.0), (-1.2, -1.0)]
    return {
        21 + i: marker_from_map_row(21 + i, side_m, x, y, 0.0, yaw_deg=15.0 * i)
        for i, (x, y) in enumerate(centres)
    }


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def camera_point(point, position, r_wc: np.ndarray) -> np.ndarray:
    return r_wc.T @ (np.asarray(point, dtype=float) - np.asarray(position, dtype=float))


def project_point(point, position, r_wc: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixel of a world point.

    Raises:
        BehindCameraError: Non-positive depth
    """
    x, y, z = camera_point(point, position, r_wc)
    if not z > 0:
        raise BehindCameraError(f"point at depth {z:.3f} m lies behind the camera")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy])


def projection_jacobian(point, position, r_wc: np.ndarray, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel derivatives with respect to the pose and the intrinsics.

    Returns:
        (2x6 over [C, dphi], 2x4 over [fx, fy, cx, cy])
    """
    d = np.asarray(point, dtype=float) - np.asarray(position, dtype=float)
    x, y, z = r_wc.T @ d
    if not z > 0:
        raise BehindCameraError(f"point at depth {z:.3f} m lies behind the camera")
    fx, fy = intrinsics.fx, intrinsics.fy
    d_pix_d_xc = np.array([
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ])
    d_xc_d_c = -r_wc.T
    d_xc_d_phi = r_wc.T @ skew(d)
    j_pose = d_pix_d_xc @ np.hstack([d_xc_d_c, d_xc_d_phi])
    j_k = np.array([
        [x / z, 0.0, 1.0, 0.0],
        [0.0, y / z, 0.0, 1.0],
    ])
    return j_pose, j_k


# ---------------------------------------------------------------------------
# Pose estimation
# ---------------------------------------------------------------------------

def _correspondences(corners: Sequence[CornerObservation], markers: Mapping[int, MarkerDefinition]):
    world, pixels, sigmas, ids = [], [], [], []
    for c in corners:
        marker = markers.get(c.marker_id)
        if marker is None:
            logger.debug(f"Corner of unknown marker {c.marker_id} ignored")
            continue
        world.append(marker.corner_positions_world[c.corner_index])
        pixels.append(c.pixel)
        sigmas.append(c.sigma_px)
        if c.marker_id not in ids:
            ids.append(c.marker_id)
    return np.array(world), np.array(pixels), np.array(sigmas), ids


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    rows = []
    for (a, b), (x, y) in zip(src, dst):
        rows.append([a, b, 1.0, 0.0, 0.0, 0.0, -x * a, -x * b, -x])
        rows.append([0.0, 0.0, 0.0, a, b, 1.0, -y * a, -y * b, -y])
    _, _, vt = np.linalg.svd(np.array(rows))
    return vt[-1].reshape(3, 3)


def _initial_pose(world: np.ndarray, pixels: np.ndarray, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Camera centre and R_wc from a plane-to-image homography."""
    origin = world.mean(axis=0)
    centred = world - origin
    _, s, vt = np.linalg.svd(centred)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise InsufficientObservationsError("corner points are collinear")
    e1, e2 = vt[0], vt[1]
    basis = np.column_stack([e1, e2, np.cross(e1, e2)])
    plane = centred @ basis[:, :2]

    normalized = np.column_stack([
        (pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
        (pixels[:, 1] - intrinsics.cy) / intrinsics.fy,
    ])
    h = _homography_dlt(plane, normalized)
    scale = 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    h = h * scale
    # two sign solutions; keep the one with the plane in front of the camera
    if h[2, 2] < 0:
        h = -h
    r1, r2, t = h[:, 0], h[:, 1], h[:, 2]
    r = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(r)
    r_cp = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt

    r_cw = r_cp @ basis.T
    position = origin - r_cw.T @ t
    return position, r_cw.T


def _reprojection(world, pixels, position, r_wc, intrinsics):
    predicted = np.array([project_point(p, position, r_wc, intrinsics) for p in world])
    return (pixels - predicted).ravel()


def _stacked_jacobians(world, position, r_wc, intrinsics):
    j_pose, j_k = [], []
    for p in world:
        jp, jk = projection_jacobian(p, position, r_wc, intrinsics)
        j_pose.append(jp)
        j_k.append(jk)
    return np.vstack(j_pose), np.vstack(j_k)


def estimate_pose(
    corners: Sequence[CornerObservation],
    markers: Mapping[int, MarkerDefinition],
    intrinsics: CameraIntrinsics,
) -> PoseEstimate:
    """Camera pose minimising the weighted reprojection error.

    Starts from a plane homography, then runs Gauss-Newton with step halving
    until the step falls below 1e-10 or 50 iterations pass.

    Args:
        corners: Corner observations of one frame
        markers: Marker map by id
        intrinsics: Camera intrinsics

    Returns:
        PoseEstimate with covariance (J^T W J)^-1 and the intrinsic sensitivity

    Raises:
        InsufficientObservationsError: Fewer than four usable corners or collinear corners
        ConvergenceFailureError: Optimisation diverged or stalled
    """
    world, pixels, sigmas, ids = _correspondences(corners, markers)
    if len(world) < 4:
        raise InsufficientObservationsError(f"need at least 4 corners, got {len(world)}")

    position, r_wc = _initial_pose(world, pixels, intrinsics)
    weights = np.repeat(1.0 / sigmas**2, 2)

    try:
        residual = _reprojection(world, pixels, position, r_wc, intrinsics)
    except BehindCameraError as e:
        raise ConvergenceFailureError(f"initial pose places corners behind the camera: {e}") from e
    cost = float(residual @ (weights * residual))
    initial_rms = math.sqrt(float(np.mean(residual**2)))

    step_norm = np.inf
    iteration = 0
    for iteration in range(1, MAX_ITERATIONS + 1):
        j_pose, _ = _stacked_jacobians(world, position, r_wc, intrinsics)
        normal = j_pose.T @ (weights[:, None] * j_pose)
        step = np.linalg.solve(normal, j_pose.T @ (weights * residual))
        if not np.all(np.isfinite(step)):
            raise ConvergenceFailureError("Gauss-Newton step is not finite")

        scale = 1.0
        for _ in range(MAX_HALVINGS):
            candidate_pos = position + scale * step[:3]
            candidate_rot = so3_exp(scale * step[3:]) @ r_wc
            try:
                candidate_res = _reprojection(world, pixels, candidate_pos, candidate_rot, intrinsics)
            except BehindCameraError:
                scale *= 0.5
                continue
            candidate_cost = float(candidate_res @ (weights * candidate_res))
            if candidate_cost <= cost:
                break
            scale *= 0.5
        else:
            # no descent possible: already at the optimum within rounding
            step_norm = 0.0
            break

        position, r_wc, residual, cost = candidate_pos, candidate_rot, candidate_res, candidate_cost
        step_norm = float(np.linalg.norm(scale * step))
        if step_norm < STEP_TOLERANCE:
            break

    if not np.isfinite(cost) or step_norm > CONVERGED_STEP:
        raise ConvergenceFailureError(
            f"pose did not converge after {iteration} iterations (last step {step_norm:.2e})"
        )

    j_pose, j_k = _stacked_jacobians(world, position, r_wc, intrinsics)
    normal = j_pose.T @ (weights[:, None] * j_pose)
    covariance = np.linalg.inv(normal)
    covariance = 0.5 * (covariance + covariance.T)
    sensitivity = -covariance @ j_pose.T @ (weights[:, None] * j_k)

    return PoseEstimate(
        position=position,
        rotation=r_wc.T,
        covariance=covariance,
        reprojection_rms=math.sqrt(float(np.mean(residual**2))),
        initial_rms=initial_rms,
        iterations=iteration,
        marker_ids=ids,
        intrinsic_sensitivity=sensitivity,
    )


def propagate_intrinsics_to_position(pose: PoseEstimate, intrinsic_cov: np.ndarray) -> np.ndarray:
    """Pose covariance inflated by intrinsic uncertainty, ``P + S K S^T``."""
    intrinsic_cov = np.asarray(intrinsic_cov, dtype=float)
    if pose.intrinsic_sensitivity is None:
        return pose.covariance.copy()
    s = pose.intrinsic_sensitivity
    total = pose.covariance + s @ intrinsic_cov @ s.T
    return 0.5 * (total + total.T)


def select_marker_scale(
    detections: Mapping[int, Sequence[CornerObservation]],
    markers: Mapping[int, MarkerDefinition],
    altitude_hint: Optional[float] = None,
    large_min_side: float = 0.5,
    small_ceiling: float = 5.0,
) -> List[CornerObservation]:
    """Pick the corner set for pose estimation.

    Complete large markers win outright and are never mixed with small
    ones. Otherwise complete small markers are pooled, provided the altitude
    hint is below the small-marker ceiling.

    Raises:
        NoDetectionError: No complete usable marker
    """
    def complete(marker_id):
        return len({c.corner_index for c in detections.get(marker_id, ())}) == 4

    large = [m for m in detections if m in markers and markers[m].side_length >= large_min_side and complete(m)]
    if large:
        return [c for m in sorted(large) for c in detections[m]]

    if altitude_hint is None or altitude_hint <= small_ceiling:
        small = [m for m in detections if m in markers and markers[m].side_length < large_min_side and complete(m)]
        if small:
            return [c for m in sorted(small) for c in detections[m]]

    raise NoDetectionError("no complete marker in view")


def group_by_marker(corners: Iterable[CornerObservation]) -> Dict[int, List[CornerObservation]]:
    grouped: Dict[int, List[CornerObservation]] = {}
    for c in corners:
        grouped.setdefault(c.marker_id, []).append(c)
    return grouped


def body_pose_from_camera(pose: PoseEstimate) -> Tuple[np.ndarray, np.ndarray]:
    """Vehicle position and body-to-nav rotation for the fixed downward camera."""
    r_nb = pose.camera_to_world @ R_BODY_CAMERA.T
    return pose.position.copy(), r_nb


def camera_rotation_from_body(r_nb: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation of the downward camera for a body attitude."""
    return r_nb @ R_BODY_CAMERA


# ---------------------------------------------------------------------------
# Calibration error back-propagation
# ---------------------------------------------------------------------------

def reconstruct_on_plane(
    pixels: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: PoseEstimate,
    plane_height: float = 0.0,
) -> np.ndarray:
    """Intersect pixel rays with the horizontal plane ``z = plane_height``.

    Raises:
        BehindCameraError: A ray does not reach the plane in front of the camera
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    rays_c = np.column_stack([
        (pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
        (pixels[:, 1] - intrinsics.cy) / intrinsics.fy,
        np.ones(len(pixels)),
    ])
    rays_w = rays_c @ pose.camera_to_world.T
    scale = (plane_height - pose.position[2]) / rays_w[:, 2]
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise BehindCameraError("pixel ray does not hit the plane in front of the camera")
    return pose.position + scale[:, None] * rays_w


def _reconstruction_jacobian(pixels, intrinsics, pose, plane_height, step=1e-6):
    base = reconstruct_on_plane(pixels, intrinsics, pose, plane_height)[:, :2].ravel()
    k = intrinsics.vector
    jac = np.zeros((base.size, 4))
    for i in range(4):
        dk = np.zeros(4)
        dk[i] = step * max(abs(k[i]), 1.0)
        plus = reconstruct_on_plane(pixels, intrinsics.with_vector(k + dk), pose, plane_height)[:, :2].ravel()
        minus = reconstruct_on_plane(pixels, intrinsics.with_vector(k - dk), pose, plane_height)[:, :2].ravel()
        jac[:, i] = (plus - minus) / (2.0 * dk[i])
    return base, jac


def backprop_calibration_error(
    reconstructed: np.ndarray,
    truth: np.ndarray,
    marker_ids: Sequence[int],
    intrinsics: CameraIntrinsics,
    pose: PoseEstimate,
    plane_height: float = 0.0,
    max_iterations: int = 10,
) -> CalibrationErrorEstimate:
    """Fit the intrinsic error that explains plane reconstruction residuals.

    The pixels behind ``reconstructed`` are recovered by projecting it with
    the assumed intrinsics; the intrinsics are then adjusted by iterated
    linearised least squares until reconstructing those pixels lands on
    ``truth``.

    Args:
        reconstructed: Nx3 corners reconstructed with ``intrinsics``
        truth: Nx3 surveyed corners
        marker_ids: Marker id of each row
        intrinsics: Intrinsics used for the reconstruction
        pose: Camera pose used for the reconstruction
        plane_height: Height of the marker plane

    Returns:
        CalibrationErrorEstimate; ``delta`` is assumed minus fitted intrinsics

    Raises:
        InsufficientObservationsError: Fewer than six correspondences or fewer
            than two distinct markers
        UnobservableParameterError: Sensitivity matrix rank deficient
    """
    reconstructed = np.asarray(reconstructed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if reconstructed.shape != truth.shape or reconstructed.ndim != 2 or reconstructed.shape[1] != 3:
        raise InsufficientObservationsError("reconstructed and truth must both be Nx3")
    if len(truth) < 6:
        raise InsufficientObservationsError(f"need at least 6 correspondences, got {len(truth)}")
    marker_ids = np.asarray(marker_ids)
    if marker_ids.shape != (len(truth),):
        raise InsufficientObservationsError(f"need one marker id per correspondence, got {marker_ids.size} for {len(truth)}")
    if np.unique(marker_ids).size < 2:
        raise InsufficientObservationsError("correspondences must come from at least 2 markers")

    r_wc = pose.camera_to_world
    pixels = np.array([project_point(p, pose.position, r_wc, intrinsics) for p in reconstructed])
    target = truth[:, :2].ravel()

    k = intrinsics.vector.copy()
    jac = None
    residual = np.zeros_like(target)
    for _ in range(max_iterations):
        current = intrinsics.with_vector(k)
        base, jac = _reconstruction_jacobian(pixels, current, pose, plane_height)
        residual = target - base
        col_scale = np.linalg.norm(jac, axis=0)
        if np.any(col_scale <= 1e-9 * col_scale.max()) or np.linalg.cond(jac / col_scale) > 1e10:
            raise UnobservableParameterError("reconstruction is insensitive to some intrinsic parameter")
        step, *_ = np.linalg.lstsq(jac, residual, rcond=None)
        k = k + step
        if np.linalg.norm(step) < 1e-9 * np.linalg.norm(k):
            break

    current = intrinsics.with_vector(k)
    base = reconstruct_on_plane(pixels, current, pose, plane_height)[:, :2].ravel()
    residual = target - base
    dof = residual.size - 4
    variance = float(residual @ residual) / dof if dof > 0 else 0.0
    covariance = variance * np.linalg.inv(jac.T @ jac)
    delta = intrinsics.vector - k
    logger.info(
        f"Calibration back-propagation: dfx {delta[0]:.3f}, dfy {delta[1]:.3f}, "
        f"dcx {delta[2]:.3f}, dcy {delta[3]:.3f} px"
    )
    return CalibrationErrorEstimate(
        delta=delta,
        covariance=0.5 * (covariance + covariance.T),
        corrected=current.model_copy(update={"intrinsic_cov": 0.5 * (covariance + covariance.T)}),
        residual_rms=math.sqrt(float(np.mean(residual**2))) if residual.size else 0.0,
    )
