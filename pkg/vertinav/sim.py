"""Deterministic vertiport-to-vertiport flight simulator and the estimation chain.

The simulator flies a rest-to-rest approach from vertiport A to vertiport B,
synthesises every sensor stream from the truth and injects faults. The same
:func:`estimate` chain runs on simulated logs and on logs replayed from disk.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import chi2

from vertinav.atmosphere import (
    BaroAltimeter,
    GroundWeatherFeed,
    calibrate_bias,
    pressure_from_altitude,
)
from vertinav.errors import (
    BehindCameraError,
    ConfigError,
    ContractViolation,
    ConvergenceFailureError,
    DegenerateGeometryError,
    DivergenceError,
    DomainError,
    InfeasibleScenarioError,
    InsufficientDataError,
    NoDetectionError,
    StaleCorrectionError,
    UnobservableParameterError,
)
from vertinav.fusion import (
    GRAVITY_NAV,
    ImuSample,
    NavigationFilter,
    NavState,
    initial_covariance,
    inject_error,
    nees,
)
from vertinav.geodesy import LocalFrame
from vertinav.gnss import (
    CmcChannelMonitor,
    CorrectionMessage,
    SatelliteObservation,
    band_power_rfi_monitor,
    compute_corrections,
    data_edit,
    enu_covariance,
    protection_levels,
    residual_test,
    synthetic_constellation,
    wls_position,
)
from vertinav.integrity import allocate_budget, check_alert_limits, fused_protection_levels
from vertinav.logs import OUTPUT_SCHEMAS, SCHEMAS, SensorLogs
from vertinav.models import (
    BaroCalibration,
    FaultInjection,
    FaultType,
    GroundWeatherSample,
    IntegrityState,
    MonteCarloReport,
    RunSummary,
    ScenarioConfig,
    VertinavConfig,
)
from vertinav.requirements import requirement_set_for
from vertinav.rotations import euler_to_quat, heading_from_vector, quat_to_dcm, quat_to_euler
from vertinav.vision import (
    CameraIntrinsics,
    CornerObservation,
    MarkerDefinition,
    body_pose_from_camera,
    camera_rotation_from_body,
    default_marker_layout,
    estimate_pose,
    group_by_marker,
    marker_from_map_row,
    markers_from_specs,
    propagate_intrinsics_to_position,
    select_marker_scale,
)

logger = logging.getLogger(__name__)

STREAM_IDS = {
    "imu": 1,
    "gnss": 2,
    "reference": 3,
    "baro": 4,
    "ground": 5,
    "camera": 6,
    "spectrum": 7,
    "common": 8,
    "ambiguity": 9,
    "consistency": 10,
}

L1_WAVELENGTH = 0.190293672798365
NOMINAL_BAND_POWER = 1.0
BAND_POWER_SIGMA = 0.05
NOMINAL_PIXEL_SIGMA = 0.5
TIME_EPS = 1e-9

# Same-time events: propagate first, then GNSS (may initialise), then aiding, then output.
PRIORITY = {"imu": 0, "gnss": 1, "baro": 2, "camera": 3, "output": 4}

DETECTION_KINDS = {
    "exclusion", "rfi", "residual", "alert",
    "rejected-position", "rejected-altitude", "rejected-pose",
}


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


class FlightPhase(BaseModel):
    """Named interval of the trajectory."""
    name: str
    start: float
    end: float
    start_position: List[float]
    end_position: List[float]


class TruthTrajectory(_ArrayModel):
    """True vehicle motion sampled at the IMU rate."""
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    yaw: float = Field(..., description="Constant ENU yaw of the body [rad]")
    phases: List[FlightPhase] = Field(default_factory=list)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def attitude_dcm(self) -> np.ndarray:
        return quat_to_dcm(euler_to_quat(0.0, 0.0, self.yaw))

    def phase(self, name: str) -> FlightPhase:
        for p in self.phases:
            if p.name == name:
                return p
        raise KeyError(name)

    def sample(self, times: np.ndarray) -> np.ndarray:
        """Positions at ``times`` by linear interpolation (exact on the grid)."""
        return np.column_stack([np.interp(times, self.t, self.position[:, i]) for i in range(3)])

    def to_frame(self) -> pd.DataFrame:
        n = len(self.t)
        return pd.DataFrame({
            "t": self.t,
            "e": self.position[:, 0], "n": self.position[:, 1], "u": self.position[:, 2],
            "ve": self.velocity[:, 0], "vn": self.velocity[:, 1], "vu": self.velocity[:, 2],
            "roll": np.zeros(n), "pitch": np.zeros(n), "yaw": np.full(n, self.yaw),
        })


class IntegrityEvent(BaseModel):
    """Something the chain detected or rejected."""
    t: float
    kind: str
    detail: str = ""


class RunRecord(_ArrayModel):
    """Everything one run of the estimation chain produced."""
    fused: pd.DataFrame
    integrity: pd.DataFrame
    gnss_pl: pd.DataFrame
    events: List[IntegrityEvent] = Field(default_factory=list)
    calibration: Optional[BaroCalibration] = None
    vision_updates: int = 0
    pe_pl: Optional[pd.DataFrame] = None
    summary: Optional[RunSummary] = None
    logs: Optional[SensorLogs] = None


def stream_generator(seed: int, run: int, stream: str) -> np.random.Generator:
    """Counter-based generator for one sensor stream of one run."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, run, STREAM_IDS[stream]])))


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------

class _Segment:
    """Straight rest-to-rest move with a trapezoidal speed profile."""

    def __init__(self, name: str, start: float, p0, p1, v_max: float, a_max: float, dwell: float = 0.0):
        self.name = name
        self.start = start
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        delta = self.p1 - self.p0
        self.length = float(np.linalg.norm(delta))
        self.direction = delta / self.length if self.length > 0 else np.zeros(3)
        self.a_max = a_max
        if self.length == 0.0:
            self.t_acc = self.t_cruise = self.v_peak = 0.0
            self.duration = dwell
            return
        t_acc = v_max / a_max
        if a_max * t_acc * t_acc >= self.length:
            t_acc = math.sqrt(self.length / a_max)
            self.v_peak = a_max * t_acc
            self.t_cruise = 0.0
        else:
            self.v_peak = v_max
            self.t_cruise = (self.length - a_max * t_acc * t_acc) / v_max
        self.t_acc = t_acc
        self.duration = 2.0 * t_acc + self.t_cruise

    @property
    def end(self) -> float:
        return self.start + self.duration

    def evaluate(self, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Position and velocity at times ``tau`` since the segment start."""
        if self.length == 0.0:
            return np.tile(self.p1, (tau.size, 1)), np.zeros((tau.size, 3))
        a, ta, tc = self.a_max, self.t_acc, self.t_cruise
        remaining = np.maximum(self.duration - tau, 0.0)
        s = np.select(
            [tau < ta, tau < ta + tc],
            [0.5 * a * tau**2, 0.5 * a * ta * ta + self.v_peak * (tau - ta)],
            self.length - 0.5 * a * remaining**2,
        )
        v = np.select([tau < ta, tau < ta + tc], [a * tau, np.full_like(tau, self.v_peak)], a * remaining)
        position = self.p0 + s[:, None] * self.direction
        velocity = v[:, None] * self.direction
        done = tau >= self.duration
        position[done] = self.p1
        velocity[done] = 0.0
        return position, velocity


def generate_approach_trajectory(config: VertinavConfig) -> TruthTrajectory:
    """Climb at A, cruise, descend along the funnel slope, hover over B and land.

    Raises:
        InfeasibleScenarioError: Vertiports closer than the descent footprint
    """
    scenario = config.scenario
    geom = config.requirements.geometry
    a = np.asarray(scenario.vertiport_a, dtype=float)
    b = np.asarray(scenario.vertiport_b, dtype=float)
    horizontal = b[:2] - a[:2]
    distance = float(np.linalg.norm(horizontal))
    footprint = geom.d_max
    if distance <= 0.0 or distance < footprint:
        raise InfeasibleScenarioError(
            f"vertiports are {distance:.2f} m apart, the descent footprint needs {footprint:.2f} m"
        )
    u = np.append(horizontal / distance, 0.0)
    up = np.array([0.0, 0.0, 1.0])

    climb_top = a + geom.to_hover_height * up
    descent_start = b + geom.to_hover_height * up - footprint * u
    hover_point = b + geom.low_hover_height * up

    plan = [
        ("pre-flight", a, a, scenario.pre_flight_rest),
        ("climb", a, climb_top, 0.0),
        ("cruise", climb_top, descent_start, 0.0),
        ("descent", descent_start, hover_point, 0.0),
        ("hover", hover_point, hover_point, scenario.hover_duration),
        ("landing", hover_point, b, 0.0),
        ("post-landing", b, b, scenario.post_landing_rest),
    ]
    segments: List[_Segment] = []
    clock = 0.0
    for name, p0, p1, dwell in plan:
        segment = _Segment(name, clock, p0, p1, scenario.v_max, scenario.a_max, dwell)
        segments.append(segment)
        clock = segment.end

    rate = scenario.rates.imu
    n = int(math.ceil(clock * rate - TIME_EPS))
    t = np.arange(n + 1) / rate
    position = np.tile(a, (t.size, 1))
    velocity = np.zeros((t.size, 3))
    for segment in segments:
        mask = t >= segment.start
        position[mask], velocity[mask] = segment.evaluate(t[mask] - segment.start)

    yaw = heading_from_vector(u[0], u[1])
    phases = [
        FlightPhase(name=s.name, start=s.start, end=s.end,
                    start_position=s.p0.tolist(), end_position=s.p1.tolist())
        for s in segments
    ]
    logger.info(f"Trajectory: {distance:.1f} m between vertiports, {clock:.2f} s, {t.size} samples")
    return TruthTrajectory(t=t, position=position, velocity=velocity, yaw=yaw, phases=phases)


# ---------------------------------------------------------------------------
# Sensor synthesis
# ---------------------------------------------------------------------------

def local_frame(config: VertinavConfig) -> LocalFrame:
    g = config.gnss
    return LocalFrame(g.reference_latitude_deg, g.reference_longitude_deg, g.reference_height_m)


def satellite_positions(scenario: ScenarioConfig, frame: LocalFrame) -> Dict[str, np.ndarray]:
    """ECEF positions of the configured satellites."""
    sats: Dict[str, np.ndarray] = {}
    for spec in scenario.satellites:
        if spec.ecef is not None:
            sats[spec.sat_id] = np.asarray(spec.ecef, dtype=float)
        else:
            sats.update(synthetic_constellation(frame, [(spec.sat_id, spec.azimuth_deg, spec.elevation_deg)]))
    return sats


def marker_map(config: VertinavConfig) -> Dict[int, MarkerDefinition]:
    """Configured markers, or the default landing-pad layout."""
    scenario = config.scenario
    if scenario.markers:
        return markers_from_specs(scenario.markers)
    return default_marker_layout(scenario.vertiport_a, scenario.vertiport_b)


def _marker_table(markers: Dict[int, MarkerDefinition]) -> pd.DataFrame:
    rows = []
    for marker_id, m in sorted(markers.items()):
        edge = m.corner_positions_world[1] - m.corner_positions_world[0]
        rows.append({
            "id": marker_id,
            "side_m": m.side_length,
            "cx": float(m.center[0]),
            "cy": float(m.center[1]),
            "cz": float(m.center[2]),
            "yaw_deg": math.degrees(math.atan2(edge[1], edge[0])),
        })
    return pd.DataFrame(rows, columns=SCHEMAS["markers"].columns)


def markers_from_table(df: pd.DataFrame) -> Dict[int, MarkerDefinition]:
    return {
        int(r.id): marker_from_map_row(int(r.id), r.side_m, r.cx, r.cy, r.cz, r.yaw_deg)
        for r in df.itertuples(index=False)
    }


def _epoch_times(duration: float, rate: float) -> np.ndarray:
    n = int(math.floor(duration * rate + TIME_EPS))
    return np.arange(n + 1) / rate


def _synthesize_imu(truth: TruthTrajectory, scenario: ScenarioConfig, rng: np.random.Generator) -> pd.DataFrame:
    noise = scenario.noise
    dt = np.diff(truth.t)
    accel = np.diff(truth.velocity, axis=0) / dt[:, None]
    c_nb = truth.attitude_dcm
    force = (accel - GRAVITY_NAV) @ c_nb
    rate = np.zeros_like(force)
    white_f = rng.standard_normal(force.shape) * (noise.accel_noise_density / np.sqrt(dt))[:, None]
    white_w = rng.standard_normal(rate.shape) * (noise.gyro_noise_density / np.sqrt(dt))[:, None]
    force = force + np.asarray(noise.accel_bias) + white_f
    rate = rate + np.asarray(noise.gyro_bias) + white_w
    return pd.DataFrame({
        "t": truth.t[1:],
        "fx": force[:, 0], "fy": force[:, 1], "fz": force[:, 2],
        "wx": rate[:, 0], "wy": rate[:, 1], "wz": rate[:, 2],
    })


def _synthesize_gnss(
    truth: TruthTrajectory,
    config: VertinavConfig,
    seed: int,
    run: int,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    scenario, noise = config.scenario, config.scenario.noise
    frame = local_frame(config)
    sats = satellite_positions(scenario, frame)
    sat_ids = list(sats)
    times = _epoch_times(truth.duration, scenario.rates.gnss)
    receiver = truth.sample(times)

    rng_rover = stream_generator(seed, run, "gnss")
    rng_ref = stream_generator(seed, run, "reference")
    rng_common = stream_generator(seed, run, "common")
    rng_amb = stream_generator(seed, run, "ambiguity")

    n_sat = len(sat_ids)
    common = rng_common.standard_normal(n_sat) * noise.common_error_sigma
    ambiguity_rover = rng_amb.integers(-100, 100, size=n_sat) * L1_WAVELENGTH
    ambiguity_ref = rng_amb.integers(-100, 100, size=n_sat) * L1_WAVELENGTH

    dt = 1.0 / scenario.rates.gnss
    phi = math.exp(-dt / noise.multipath_tau)
    multipath = rng_rover.standard_normal(n_sat) * noise.multipath_sigma

    cn0 = {}
    for sat_id, pos in sats.items():
        _, el = frame.azimuth_elevation(np.zeros(3), pos)
        cn0[sat_id] = noise.cn0_horizon + (noise.cn0_zenith - noise.cn0_horizon) * math.sin(math.radians(max(el, 0.0)))

    ref_ecef = frame.to_ecef(config.gnss.reference_station_enu)
    ref_monitor = CmcChannelMonitor(config.gnss.cmc_threshold, config.gnss.cmc_window)
    obs_rows, corr_rows = [], []
    for k, t in enumerate(times):
        if k > 0:
            multipath = phi * multipath + math.sqrt(1.0 - phi * phi) * noise.multipath_sigma * rng_rover.standard_normal(n_sat)
        white = rng_rover.standard_normal(n_sat) * noise.pr_white_sigma
        carrier_noise = rng_rover.standard_normal(n_sat) * noise.carrier_sigma
        ref_white = rng_ref.standard_normal(n_sat) * noise.reference_pr_sigma
        ref_carrier_noise = rng_ref.standard_normal(n_sat) * noise.carrier_sigma

        rx_ecef = frame.to_ecef(receiver[k])
        clock = noise.rover_clock_bias + noise.rover_clock_drift * t
        ref_obs = []
        for j, sat_id in enumerate(sat_ids):
            sat = sats[sat_id]
            rho = float(np.linalg.norm(sat - rx_ecef))
            pr = rho + clock + common[j] + multipath[j] + white[j]
            cp = rho + clock + common[j] + ambiguity_rover[j] + carrier_noise[j]
            obs_rows.append({
                "t": t, "sat_id": sat_id, "sx": sat[0], "sy": sat[1], "sz": sat[2],
                "pr": pr, "cp": cp, "cn0": cn0[sat_id], "lli": 0,
            })
            rho_ref = float(np.linalg.norm(sat - ref_ecef))
            ref_pr = rho_ref + noise.reference_clock_bias + common[j] + ref_white[j]
            ref_cp = rho_ref + noise.reference_clock_bias + common[j] + ambiguity_ref[j] + ref_carrier_noise[j]
            ref_obs.append(SatelliteObservation(
                sat_id=sat_id, sat_position=sat, pseudorange=ref_pr, carrier_phase_range=ref_cp, cn0=cn0[sat_id],
            ))

        usable = {o.sat_id: not ref_monitor.update(o, t) for o in ref_obs}
        message = compute_corrections(ref_ecef, ref_obs, usable, epoch=t)
        for sat_id in sat_ids:
            ok = message.integrity_flags[sat_id]
            corr_rows.append({"t": t, "sat_id": sat_id, "prc": message.prc.get(sat_id, 0.0), "usable": int(ok)})

    return (
        pd.DataFrame(obs_rows, columns=SCHEMAS["gnss_obs"].columns),
        pd.DataFrame(corr_rows, columns=SCHEMAS["corrections"].columns),
    )


def _ground_sample(scenario: ScenarioConfig, t: float) -> GroundWeatherSample:
    gw = scenario.ground_weather
    return GroundWeatherSample(
        pressure=gw.pressure + gw.pressure_drift * t,
        temperature=gw.temperature,
        station_geodetic_altitude=gw.station_geodetic_altitude,
        timestamp=t,
    )


def _synthesize_baro(
    truth: TruthTrajectory,
    config: VertinavConfig,
    seed: int,
    run: int,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    scenario, noise = config.scenario, config.scenario.noise
    height = config.gnss.reference_height_m

    times = _epoch_times(truth.duration, scenario.rates.baro)
    rng = stream_generator(seed, run, "baro")
    altitudes = height + truth.sample(times)[:, 2]
    white = rng.standard_normal(times.size) * noise.baro_sigma_pa
    pressures = [
        pressure_from_altitude(float(h), _ground_sample(scenario, float(t))) + noise.baro_bias_pa + w
        for t, h, w in zip(times, altitudes, white)
    ]
    baro = pd.DataFrame({"t": times, "pressure_pa": pressures})

    ground_times = _epoch_times(truth.duration, scenario.rates.ground)
    raw = np.array([_ground_sample(scenario, float(t)).pressure for t in ground_times])
    resolution = noise.ground_pressure_resolution
    reported = np.round(raw / resolution) * resolution if resolution > 0 else raw
    ground = pd.DataFrame({
        "timestamp": ground_times,
        "pressure_pa": reported,
        "temperature_k": np.full(ground_times.size, scenario.ground_weather.temperature),
    })
    return baro, ground


def _synthesize_corners(
    truth: TruthTrajectory,
    config: VertinavConfig,
    markers: Dict[int, MarkerDefinition],
    rng: np.random.Generator,
) -> pd.DataFrame:
    scenario, vision = config.scenario, config.vision
    intrinsics = CameraIntrinsics.from_config(vision)
    sigma = scenario.noise.pixel_sigma
    reported_sigma = sigma if sigma > 0 else NOMINAL_PIXEL_SIGMA
    r_wc = camera_rotation_from_body(truth.attitude_dcm)
    times = _epoch_times(truth.duration, scenario.rates.camera)
    positions = truth.sample(times)
    k = np.array([[intrinsics.fx, 0.0, intrinsics.cx], [0.0, intrinsics.fy, intrinsics.cy]])

    rows = []
    for t, camera in zip(times, positions):
        for marker_id, marker in sorted(markers.items()):
            points = (marker.corner_positions_world - camera) @ r_wc
            depth = points[:, 2]
            if np.any(depth < vision.min_depth):
                continue
            if marker.side_length * intrinsics.fx / depth.max() < vision.min_marker_pixels:
                continue
            pixels = (points / depth[:, None]) @ k.T
            if not all(intrinsics.in_image(p) for p in pixels):
                continue
            pixels = pixels + rng.standard_normal(pixels.shape) * sigma
            for corner, (u, v) in enumerate(pixels):
                rows.append({"t": t, "marker_id": marker_id, "corner": corner,
                             "u": u, "v": v, "sigma_px": reported_sigma})
    return pd.DataFrame(rows, columns=SCHEMAS["corners"].columns)


def _synthesize_spectrum(times: np.ndarray, bands: int, rng: np.random.Generator) -> pd.DataFrame:
    power = NOMINAL_BAND_POWER * np.exp(rng.standard_normal((times.size, bands)) * BAND_POWER_SIGMA)
    return pd.DataFrame({
        "t": np.repeat(times, bands),
        "band": np.tile(np.arange(bands), times.size),
        "power": power.ravel(),
    })


def synthesize_sensor_logs(truth: TruthTrajectory, config: VertinavConfig, run: int = 0) -> SensorLogs:
    """Sensor streams for a truth trajectory; every stream has its own seeded generator."""
    scenario = config.scenario
    seed = scenario.seed
    markers = marker_map(config)
    gnss_obs, corrections = _synthesize_gnss(truth, config, seed, run)
    baro, ground = _synthesize_baro(truth, config, seed, run)
    logs = SensorLogs(
        imu=_synthesize_imu(truth, scenario, stream_generator(seed, run, "imu")),
        gnss_obs=gnss_obs,
        corrections=corrections,
        baro=baro,
        ground_weather=ground,
        corners=_synthesize_corners(truth, config, markers, stream_generator(seed, run, "camera")),
        markers=_marker_table(markers),
        spectrum=_synthesize_spectrum(
            _epoch_times(truth.duration, scenario.rates.gnss),
            scenario.spectrum_bands,
            stream_generator(seed, run, "spectrum"),
        ),
        truth=truth.to_frame(),
    )
    logger.debug(
        f"Synthesised {len(logs.imu)} IMU, {len(logs.gnss_obs)} GNSS, {len(logs.baro)} baro "
        f"and {len(logs.corners)} corner rows"
    )
    return logs


def _gnss_epoch_interval(gnss_obs: pd.DataFrame) -> float:
    times = np.unique(gnss_obs["t"].to_numpy())
    if times.size < 2:
        return 1.0
    return float(np.median(np.diff(times)))


def inject_fault(logs: SensorLogs, fault: FaultInjection) -> SensorLogs:
    """Return a copy of ``logs`` with ``fault`` applied from its start time.

    A multipath ramp grows by ``magnitude`` metres per GNSS epoch.

    Raises:
        ConfigError: Fault lacks the fields its type needs
    """
    out = logs.copy_streams()

    def window(t: pd.Series) -> pd.Series:
        mask = t >= fault.start - TIME_EPS
        if fault.duration is not None:
            mask &= t < fault.start + fault.duration - TIME_EPS
        return mask

    kind = FaultType(fault.type)
    if kind in (FaultType.GNSS_BIAS, FaultType.GNSS_MULTIPATH_RAMP):
        if not fault.sat_ids:
            raise ConfigError(f"{kind.value} fault needs sat_ids")
        df = out.gnss_obs
        mask = window(df["t"]) & df["sat_id"].isin(fault.sat_ids)
        if kind == FaultType.GNSS_BIAS:
            df.loc[mask, "pr"] += fault.magnitude
        else:
            epochs = np.round((df.loc[mask, "t"] - fault.start) / _gnss_epoch_interval(df))
            df.loc[mask, "pr"] += fault.magnitude * epochs
    elif kind == FaultType.BARO_BIAS_STEP:
        mask = window(out.baro["t"])
        out.baro.loc[mask, "pressure_pa"] += fault.magnitude
    elif kind == FaultType.IMU_BIAS_STEP:
        column = ("fx", "fy", "fz")[fault.axis]
        out.imu.loc[window(out.imu["t"]), column] += fault.magnitude
    elif kind == FaultType.MARKER_SWAP:
        if fault.marker_id is None or fault.target_marker_id is None:
            raise ConfigError("marker-swap fault needs marker_id and target_marker_id")
        df = out.corners
        mask = window(df["t"]) & (df["marker_id"] == fault.marker_id)
        df.loc[mask, "marker_id"] = fault.target_marker_id
    elif kind == FaultType.CORNER_OUTLIER:
        df = out.corners
        mask = window(df["t"]) & (df["corner"] == fault.corner)
        if fault.marker_id is not None:
            mask &= df["marker_id"] == fault.marker_id
        df.loc[mask, "u"] += fault.magnitude
    elif kind == FaultType.RFI_NARROWBAND:
        df = out.spectrum
        mask = window(df["t"]) & (df["band"] == fault.band)
        df.loc[mask, "power"] *= fault.magnitude
    else:
        raise ConfigError(f"unsupported fault type {fault.type}")
    logger.info(f"Injected {kind.value} fault at t={fault.start} s (magnitude {fault.magnitude})")
    return out


# ---------------------------------------------------------------------------
# Estimation chain
# ---------------------------------------------------------------------------

class EstimationChain:
    """Time-ordered processing of one log set.

    GNSS fixes initialise and update the filter, the ground-corrected
    barometer and marker poses aid it, and every output epoch gets fused
    protection levels checked against the alert limits. Subsystem failures
    become events and unavailable epochs; they never stop the run.
    """

    def __init__(self, logs: SensorLogs, config: VertinavConfig):
        self.logs = logs
        self.config = config
        self.frame = local_frame(config)
        self.requirements = requirement_set_for(config.requirements)
        allocations = allocate_budget(self.requirements.integrity_risk, config.integrity.weights)
        self.fusion_ir = allocations.get("nominal_fusion", self.requirements.integrity_risk)
        self.filter = NavigationFilter(config.fusion)
        self.cmc = CmcChannelMonitor(config.gnss.cmc_threshold, config.gnss.cmc_window)
        self.intrinsics = CameraIntrinsics.from_config(config.vision)
        self.markers = markers_from_table(logs.markers) if not logs.markers.empty else marker_map(config)
        self.reference_ecef = self.frame.to_ecef(config.gnss.reference_station_enu)

        a = np.asarray(config.scenario.vertiport_a, dtype=float)
        b = np.asarray(config.scenario.vertiport_b, dtype=float)
        if config.fusion.initial_heading_deg is not None:
            self.heading = math.radians(config.fusion.initial_heading_deg)
        else:
            self.heading = heading_from_vector(b[0] - a[0], b[1] - a[1])

        self.feed = GroundWeatherFeed(max_age=config.atmosphere.max_ground_age)
        station = config.scenario.ground_weather.station_geodetic_altitude
        for row in logs.ground_weather.itertuples(index=False):
            self.feed.add(GroundWeatherSample(
                pressure=row.pressure_pa, temperature=row.temperature_k,
                station_geodetic_altitude=station, timestamp=row.timestamp,
            ))
        self.calibration = self._calibrate()
        self.altimeter = BaroAltimeter(self.feed, self.calibration, config.atmosphere.pressure_sigma_pa)

        self.events: List[IntegrityEvent] = []
        self._pending: List[str] = []
        self._excluded: set = set()
        self._last_fix = self.frame.origin_ecef
        self._last_imu_t: Optional[float] = None
        self.vision_updates = 0
        self.position_updates = 0
        self.fused_rows: List[dict] = []
        self.integrity_rows: List[dict] = []
        self.gnss_rows: List[dict] = []

    def _event(self, t: float, kind: str, detail: str = "") -> None:
        self.events.append(IntegrityEvent(t=t, kind=kind, detail=detail))
        self._pending.append(f"{kind}: {detail}" if detail else kind)

    def _calibrate(self) -> BaroCalibration:
        """Barometer bias from the pre-flight rest against the ground station."""
        scenario = self.config.scenario
        window = self.logs.baro[self.logs.baro["t"] <= scenario.pre_flight_rest + TIME_EPS]
        airborne, ground = [], []
        temperature = scenario.ground_weather.temperature
        for row in window.itertuples(index=False):
            try:
                sample = self.feed.sample_at(row.t)
            except StaleCorrectionError:
                continue
            airborne.append(row.pressure_pa)
            ground.append(sample.pressure)
            temperature = sample.temperature
        offset = (
            self.config.gnss.reference_height_m + scenario.vertiport_a[2]
            - scenario.ground_weather.station_geodetic_altitude
        )
        try:
            return calibrate_bias(
                airborne, ground, co_located=(offset == 0.0), height_offset=offset,
                ground_temperature=temperature, epoch=scenario.pre_flight_rest,
            )
        except InsufficientDataError as e:
            logger.warning(f"Barometer calibration skipped: {e}")
            return BaroCalibration(bias=self.config.atmosphere.bias_pa, bias_sigma=0.0)

    # -- streams -----------------------------------------------------------

    def on_imu(self, row) -> None:
        dt = row.t - self._last_imu_t if self._last_imu_t is not None else 1.0 / self.config.scenario.rates.imu
        self._last_imu_t = row.t
        if not 0.0 < dt <= 0.1:
            logger.warning(f"IMU gap of {dt:.3f} s at t={row.t:.2f} s, sample skipped")
            self._event(row.t, "imu-gap", f"{dt:.3f} s")
            return
        sample = ImuSample(
            specific_force=[row.fx, row.fy, row.fz],
            angular_rate=[row.wx, row.wy, row.wz],
            dt=dt,
            t=row.t,
        )
        if self.filter.initialized:
            self.filter.predict(sample)
        else:
            self.filter.add_leveling_sample(sample)

    def on_gnss(self, t: float, rows: pd.DataFrame, corrections: Optional[pd.DataFrame],
                spectrum: Optional[pd.DataFrame]) -> None:
        gnss = self.config.gnss
        if gnss.monitors_enabled and spectrum is not None and not spectrum.empty:
            ordered = spectrum.sort_values("band")
            rfi = band_power_rfi_monitor(
                ordered["power"].to_numpy(),
                np.full(len(ordered), NOMINAL_BAND_POWER),
                gnss.rfi_ratio_threshold,
            )
            if rfi.detected:
                self._event(t, "rfi", f"bands {rfi.bands}")
                return

        obs = [
            SatelliteObservation(
                sat_id=r.sat_id, sat_position=[r.sx, r.sy, r.sz], pseudorange=r.pr,
                carrier_phase_range=r.cp, cn0=r.cn0, lock_indicator=(r.lli == 0),
                sigma_nominal=gnss.sigma_nominal,
            )
            for r in rows.itertuples(index=False)
        ]
        if gnss.monitors_enabled:
            for o in obs:
                if self.cmc.update(o, t) and o.sat_id not in self._excluded:
                    self._excluded.add(o.sat_id)
                    self._event(t, "exclusion", o.sat_id)
                elif o.sat_id in self._excluded and o.sat_id not in self.cmc.excluded():
                    self._excluded.discard(o.sat_id)
        edited, _ = data_edit(obs, gnss.cn0_mask, gnss.require_lock)
        kept = [o for o in edited if o.sat_id not in self._excluded]

        if corrections is None or corrections.empty:
            self._event(t, "gnss-unavailable", "no corrections")
            return
        message = CorrectionMessage(
            prc={r.sat_id: r.prc for r in corrections.itertuples(index=False) if r.usable},
            integrity_flags={r.sat_id: bool(r.usable) for r in corrections.itertuples(index=False)},
            reference_position=self.reference_ecef,
            epoch=t,
        )
        try:
            solution = wls_position(kept, message, initial=self._last_fix, max_iterations=gnss.max_iterations)
        except (InsufficientDataError, DegenerateGeometryError, DivergenceError) as e:
            self._event(t, "gnss-unavailable", str(e))
            return
        self._last_fix = solution.position

        if gnss.monitors_enabled and residual_test(solution, gnss.residual_pfa).fault_detected:
            self._event(t, "residual", f"{len(solution.used_sats)} satellites")
            return

        enu = self.frame.to_enu(solution.position)
        cov = enu_covariance(solution, self.frame)
        hpl, vpl = protection_levels(solution.covariance, gnss.pl_integrity_risk_h, self.frame, gnss.pl_integrity_risk_v)
        self.gnss_rows.append({
            "t": t, "e": enu[0], "n": enu[1], "u": enu[2], "hpl": hpl, "vpl": vpl, "sats": len(solution.used_sats),
        })

        if not self.filter.initialized:
            if self.filter.leveling_ready:
                self.filter.initialize(enu, cov, t, self.heading)
            return
        if self.filter.update_position(enu, cov):
            self.position_updates += 1
        else:
            self._event(t, "rejected-position")

    def on_baro(self, row) -> None:
        if not self.filter.initialized:
            return
        try:
            h, sigma = self.altimeter.altitude(row.pressure_pa, row.t)
        except (StaleCorrectionError, DomainError) as e:
            self._event(row.t, "baro-unavailable", str(e))
            return
        if not self.filter.update_altitude(h - self.frame.height, sigma):
            self._event(row.t, "rejected-altitude")

    def on_camera(self, t: float, rows: pd.DataFrame) -> None:
        if not self.filter.initialized:
            return
        vision = self.config.vision
        corners = [
            CornerObservation(marker_id=r.marker_id, corner_index=r.corner, pixel=[r.u, r.v], sigma_px=r.sigma_px, t=t)
            for r in rows.itertuples(index=False)
        ]
        plane = min(float(m.center[2]) for m in self.markers.values()) if self.markers else 0.0
        try:
            selected = select_marker_scale(
                group_by_marker(corners),
                self.markers,
                altitude_hint=float(self.filter.state.position[2]) - plane,
                large_min_side=vision.large_marker_min_side,
                small_ceiling=vision.small_marker_ceiling,
            )
            pose = estimate_pose(selected, self.markers, self.intrinsics)
        except (NoDetectionError, InsufficientDataError, ConvergenceFailureError,
                BehindCameraError, UnobservableParameterError, np.linalg.LinAlgError) as e:
            logger.debug(f"No vision pose at t={t:.2f} s: {e}")
            return

        cov = propagate_intrinsics_to_position(pose, self.intrinsics.intrinsic_cov)
        sigma = math.sqrt(float(np.linalg.eigvalsh(cov[:3, :3])[-1]))
        if sigma >= vision.max_position_sigma:
            logger.debug(f"Vision pose at t={t:.2f} s gated out: sigma {sigma:.2f} m")
            return
        position, r_nb = body_pose_from_camera(pose)
        if self.filter.update_pose(position, r_nb, cov):
            self.vision_updates += 1
        else:
            self._event(t, "rejected-pose", f"markers {pose.marker_ids}")

    def on_output(self, t: float) -> None:
        events, self._pending = self._pending, []
        if not self.filter.initialized:
            status = check_alert_limits(None, None, self.requirements, events)
        else:
            if self.position_updates < self.config.fusion.warmup_updates:
                hpl = vpl = None
            else:
                hpl, vpl = fused_protection_levels(self.filter.position_covariance(), self.fusion_ir, self.fusion_ir)
            status = check_alert_limits(hpl, vpl, self.requirements, events)
            state = self.filter.state
            roll, pitch, yaw = quat_to_euler(state.attitude)
            sigma = np.sqrt(np.diag(self.filter.position_covariance()))
            self.fused_rows.append({
                "t": t,
                "e": state.position[0], "n": state.position[1], "u": state.position[2],
                "ve": state.velocity[0], "vn": state.velocity[1], "vu": state.velocity[2],
                "roll": roll, "pitch": pitch, "yaw": yaw,
                "sigma_e": sigma[0], "sigma_n": sigma[1], "sigma_u": sigma[2],
            })
        if status.state == IntegrityState.ALERT:
            logger.warning(f"Integrity alert at t={t:.2f} s: {'; '.join(status.events)}")
            self.events.append(IntegrityEvent(t=t, kind="alert", detail="; ".join(status.events)))
        self.integrity_rows.append({
            "t": t, "hpl": status.hpl, "vpl": status.vpl, "hal": status.hal, "val": status.val,
            "state": status.state.value, "events": "; ".join(status.events),
        })

    # -- driver ------------------------------------------------------------

    def _schedule(self) -> List[tuple]:
        logs = self.logs
        queue: List[tuple] = []
        output_rate = self.config.fusion.output_rate_hz
        for i, row in enumerate(logs.imu.itertuples(index=False)):
            queue.append((row.t, PRIORITY["imu"], i, "imu", row))
            ticks = row.t * output_rate
            if abs(ticks - round(ticks)) < 1e-6:
                queue.append((row.t, PRIORITY["output"], i, "output", None))
        for i, (t, group) in enumerate(logs.gnss_obs.groupby("t", sort=True)):
            queue.append((t, PRIORITY["gnss"], i, "gnss", group))
        for i, row in enumerate(logs.baro.itertuples(index=False)):
            queue.append((row.t, PRIORITY["baro"], i, "baro", row))
        if not logs.corners.empty:
            for i, (t, group) in enumerate(logs.corners.groupby("t", sort=True)):
                queue.append((t, PRIORITY["camera"], i, "camera", group))
        queue.sort(key=lambda item: item[:3])
        return queue

    def run(self) -> RunRecord:
        corrections = dict(iter(self.logs.corrections.groupby("t"))) if not self.logs.corrections.empty else {}
        spectrum = dict(iter(self.logs.spectrum.groupby("t"))) if not self.logs.spectrum.empty else {}
        for t, _, _, kind, payload in self._schedule():
            if kind == "imu":
                self.on_imu(payload)
            elif kind == "gnss":
                self.on_gnss(t, payload, corrections.get(t), spectrum.get(t))
            elif kind == "baro":
                self.on_baro(payload)
            elif kind == "camera":
                self.on_camera(t, payload)
            else:
                self.on_output(t)

        if self.logs.corners.empty:
            logger.info("No camera stream: vision aiding unavailable")
        return RunRecord(
            fused=pd.DataFrame(self.fused_rows, columns=_columns("fused")),
            integrity=pd.DataFrame(self.integrity_rows, columns=_columns("integrity")),
            gnss_pl=pd.DataFrame(self.gnss_rows, columns=_columns("gnss_pl")),
            events=self.events,
            calibration=self.calibration,
            vision_updates=self.vision_updates,
        )


def _columns(name: str) -> List[str]:
    return OUTPUT_SCHEMAS[name].columns


def estimate(logs: SensorLogs, config: VertinavConfig) -> RunRecord:
    """Run the estimation chain on a log set (simulated or replayed)."""
    return EstimationChain(logs, config).run()


# ---------------------------------------------------------------------------
# Evaluation against truth
# ---------------------------------------------------------------------------

def rank_percentile(values, q: float = 0.95) -> Optional[float]:
    """Percentile by rank order (no interpolation); None for no values."""
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return None
    return float(np.quantile(arr, q, method="inverted_cdf"))


def _errors(table: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    merged = pd.merge_asof(
        table.sort_values("t"), truth[["t", "e", "n", "u"]].sort_values("t"),
        on="t", direction="nearest", tolerance=1e-6, suffixes=("", "_true"),
    )
    merged["hpe"] = np.hypot(merged["e"] - merged["e_true"], merged["n"] - merged["n_true"])
    merged["vpe"] = (merged["u"] - merged["u_true"]).abs()
    return merged


def alert_latencies(events: List[IntegrityEvent], faults: List[FaultInjection]) -> List[Optional[float]]:
    """Delay from each fault start to the first detection, None when undetected."""
    latencies: List[Optional[float]] = []
    for fault in faults:
        times = [e.t for e in events if e.kind in DETECTION_KINDS and e.t >= fault.start - TIME_EPS]
        latencies.append(min(times) - fault.start if times else None)
    return latencies


def evaluate_run(record: RunRecord, truth: pd.DataFrame, config: VertinavConfig, run: int = 0) -> RunRecord:
    """Attach PE-vs-PL data and a run summary computed against truth."""
    fused = _errors(record.fused, truth)
    pe_pl = fused[["t", "hpe", "vpe"]].merge(record.integrity[["t", "hpl", "vpl", "state"]], on="t", how="left")
    bounded = pe_pl["hpl"].notna()
    violations = int((bounded & ((pe_pl["hpe"] > pe_pl["hpl"]) | (pe_pl["vpe"] > pe_pl["vpl"]))).sum())

    gnss_violations = 0
    if not record.gnss_pl.empty:
        gnss = _errors(record.gnss_pl, truth)
        gnss_violations = int(((gnss["hpe"] > gnss["hpl"]) | (gnss["vpe"] > gnss["vpl"])).sum())

    states = record.integrity["state"]
    epochs = len(states)
    available = int((states == IntegrityState.AVAILABLE.value).sum())
    alerts = int((states == IntegrityState.ALERT.value).sum())

    faults = config.scenario.faults
    latencies = alert_latencies(record.events, faults)
    detected = [x for x in latencies if x is not None]
    tta = config.requirements.tta
    tta_met = all(x <= tta for x in detected) and not (None in latencies and violations > 0)

    summary = RunSummary(
        run=run,
        seed=config.scenario.seed,
        epochs=epochs,
        available_epochs=available,
        alert_epochs=alerts,
        availability=available / epochs if epochs else 0.0,
        hpe95=rank_percentile(fused["hpe"]),
        vpe95=rank_percentile(fused["vpe"]),
        max_hpl=float(pe_pl["hpl"].max()) if bounded.any() else None,
        max_vpl=float(pe_pl["vpl"].max()) if bounded.any() else None,
        pl_violations=violations,
        gnss_pl_violations=gnss_violations,
        excluded_satellites=len({e.detail for e in record.events if e.kind == "exclusion"}),
        max_alert_latency=max(detected) if detected else None,
        tta_met=tta_met,
        vision_available=record.vision_updates > 0,
    )
    return record.model_copy(update={"pe_pl": pe_pl, "summary": summary})


# ---------------------------------------------------------------------------
# Scenario and Monte Carlo
# ---------------------------------------------------------------------------

def simulate_logs(config: VertinavConfig, run: int = 0) -> Tuple[TruthTrajectory, SensorLogs]:
    """Truth and faulted sensor logs for one run.

    Raises:
        ConfigError: A fault starts after the end of the flight
    """
    truth = generate_approach_trajectory(config)
    logs = synthesize_sensor_logs(truth, config, run)
    for fault in config.scenario.faults:
        if fault.start > truth.duration:
            raise ConfigError(f"{fault.type.value} fault starts at {fault.start} s, after the flight ends")
        logs = inject_fault(logs, fault)
    return truth, logs


def run_scenario(config: VertinavConfig, run: int = 0) -> RunRecord:
    """Simulate, estimate and evaluate one run."""
    logger.info(f"Run {run} (seed {config.scenario.seed}) started")
    _, logs = simulate_logs(config, run)
    record = estimate(logs, config)
    record = evaluate_run(record, logs.truth, config, run)
    record = record.model_copy(update={"logs": logs})
    s = record.summary
    logger.info(
        f"Run {run} finished: availability {s.availability:.3f}, {s.alert_epochs} alert epochs, "
        f"{s.pl_violations} PL violations"
    )
    return record


def _run_for_monte_carlo(args: Tuple[VertinavConfig, int]) -> Tuple[RunSummary, np.ndarray, np.ndarray]:
    config, run = args
    record = run_scenario(config, run)
    pe = record.pe_pl
    return record.summary, pe["hpe"].to_numpy(), pe["vpe"].to_numpy()


def aggregate_runs(
    summaries: List[RunSummary],
    hpe: List[np.ndarray],
    vpe: List[np.ndarray],
) -> MonteCarloReport:
    """Pool per-run errors into rank percentiles and count violating runs."""
    pooled_h = np.concatenate(hpe) if hpe else np.array([])
    pooled_v = np.concatenate(vpe) if vpe else np.array([])
    return MonteCarloReport(
        runs=len(summaries),
        hpe95=rank_percentile(pooled_h),
        vpe95=rank_percentile(pooled_v),
        pl_violations=sum(1 for s in summaries if s.pl_violations > 0),
        alerts=sum(s.alert_epochs for s in summaries),
        availability=float(np.mean([s.availability for s in summaries])) if summaries else 0.0,
    )


def monte_carlo(
    config: VertinavConfig,
    n_runs: Optional[int] = None,
    workers: Optional[int] = None,
) -> Tuple[MonteCarloReport, List[RunSummary]]:
    """Independent seeded runs merged by run index.

    Returns:
        Aggregate report and the per-run summaries

    Raises:
        ContractViolation: ``n_runs`` below one
    """
    n_runs = config.monte_carlo.runs if n_runs is None else n_runs
    workers = workers or config.monte_carlo.workers
    if n_runs < 1:
        raise ContractViolation(f"monte carlo needs at least one run, got {n_runs}")
    jobs = [(config, run) for run in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_for_monte_carlo, jobs))
    else:
        results = [_run_for_monte_carlo(job) for job in jobs]
    results.sort(key=lambda r: r[0].run)

    summaries = [r[0] for r in results]
    report = aggregate_runs(summaries, [r[1] for r in results], [r[2] for r in results])
    logger.info(
        f"Monte Carlo over {n_runs} runs: availability {report.availability:.4f}, "
        f"{report.pl_violations} runs with PL violations"
    )
    return report, summaries


# ---------------------------------------------------------------------------
# Filter consistency
# ---------------------------------------------------------------------------

NEES_DOF = 9


def nees_envelope(n_runs: int, confidence: float = 0.95, dof: int = NEES_DOF) -> Tuple[float, float]:
    """Two-sided chi-square bounds of a NEES averaged over ``n_runs`` runs."""
    tail = 0.5 * (1.0 - confidence)
    lower, upper = chi2.ppf([tail, 1.0 - tail], dof * n_runs) / n_runs
    return float(lower), float(upper)


def _truth_state(truth: TruthTrajectory, k: int, accel_bias: np.ndarray, gyro_bias: np.ndarray) -> NavState:
    return NavState(
        position=truth.position[k],
        velocity=truth.velocity[k],
        attitude=euler_to_quat(0.0, 0.0, truth.yaw),
        accel_bias=accel_bias,
        gyro_bias=gyro_bias,
        time=float(truth.t[k]),
    )


def consistency_run(config: VertinavConfig, run: int = 0) -> pd.DataFrame:
    """NEES of the filter flying the approach from errors drawn from its own prior.

    The initial state error and the turn-on IMU biases are sampled from the
    filter's initial covariance, and position fixes at the GNSS rate carry
    white noise of ``gnss.sigma_nominal``, so a consistent filter averages a
    NEES of 9.

    Returns:
        Table with ``t`` and ``nees`` at every output epoch
    """
    scenario, fusion = config.scenario, config.fusion
    seed = scenario.seed
    rng = stream_generator(seed, run, "consistency")
    truth = generate_approach_trajectory(config)

    r = np.eye(3) * config.gnss.sigma_nominal**2
    p0 = initial_covariance(r, fusion)
    dx = rng.multivariate_normal(np.zeros(p0.shape[0]), p0)
    accel_bias, gyro_bias = dx[9:12], dx[12:15]
    noise = scenario.noise.model_copy(update={"accel_bias": accel_bias.tolist(), "gyro_bias": gyro_bias.tolist()})
    imu = _synthesize_imu(truth, scenario.model_copy(update={"noise": noise}), stream_generator(seed, run, "imu"))

    nav = NavigationFilter(fusion)
    nav.reset(inject_error(_truth_state(truth, 0, accel_bias, gyro_bias), -dx), p0)

    gnss_every = max(int(round(scenario.rates.imu / scenario.rates.gnss)), 1)
    output_every = max(int(round(scenario.rates.imu / fusion.output_rate_hz)), 1)
    rows = []
    for k, row in enumerate(imu.itertuples(index=False), start=1):
        nav.predict(ImuSample(
            specific_force=[row.fx, row.fy, row.fz],
            angular_rate=[row.wx, row.wy, row.wz],
            dt=row.t - truth.t[k - 1],
            t=row.t,
        ))
        if k % gnss_every == 0:
            nav.update_position(truth.position[k] + rng.normal(0.0, config.gnss.sigma_nominal, 3), r)
        if k % output_every == 0:
            rows.append({"t": row.t, "nees": nees(_truth_state(truth, k, accel_bias, gyro_bias), nav.state, nav.cov)})
    if nav.events:
        logger.debug(f"Consistency run {run}: {len(nav.events)} fixes gated out")
    return pd.DataFrame(rows, columns=["t", "nees"])


def _consistency_job(args: Tuple[VertinavConfig, int]) -> pd.DataFrame:
    config, run = args
    return consistency_run(config, run)


def nees_monte_carlo(
    config: VertinavConfig,
    n_runs: Optional[int] = None,
    workers: Optional[int] = None,
    confidence: float = 0.95,
) -> pd.DataFrame:
    """Run-averaged NEES per output epoch against its chi-square envelope.

    Returns:
        Table with ``t``, ``nees`` (mean over runs), ``lower``, ``upper`` and ``inside``

    Raises:
        ContractViolation: ``n_runs`` below one
    """
    n_runs = config.monte_carlo.runs if n_runs is None else n_runs
    workers = workers or config.monte_carlo.workers
    if n_runs < 1:
        raise ContractViolation(f"consistency check needs at least one run, got {n_runs}")
    jobs = [(config, run) for run in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(_consistency_job, jobs))
    else:
        tables = [_consistency_job(job) for job in jobs]

    averaged = pd.concat(tables).groupby("t", sort=True)["nees"].mean().reset_index()
    lower, upper = nees_envelope(n_runs, confidence)
    averaged["lower"] = lower
    averaged["upper"] = upper
    averaged["inside"] = averaged["nees"].between(lower, upper)
    logger.info(
        f"NEES over {n_runs} runs: mean {averaged['nees'].mean():.2f}, "
        f"{averaged['inside'].mean():.1%} of epochs inside [{lower:.2f}, {upper:.2f}]"
    )
    return averaged
