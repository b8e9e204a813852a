"""Pydantic models for configuration documents, requirements and reports."""

from __future__ import annotations

import math
from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class OperationUnit(str, Enum):
    """Exposure unit of an integrity-risk budget."""
    FLIGHT_HOUR = "flight-hour"
    APPROACH_LANDING = "approach-landing"


class RateUnit(str, Enum):
    """Unit of a fault-tree probability."""
    PER_HOUR = "per-hour"
    PER_OP = "per-op"


class NodeKind(str, Enum):
    """Fault-tree node kinds."""
    OR_GATE = "or-gate"
    LEAF = "leaf"


class OrGateMode(str, Enum):
    """OR-gate combination rule."""
    SUM = "sum"
    COMPLEMENT_PRODUCT = "complement-product"


class IntegrityState(str, Enum):
    """Per-epoch integrity state of the navigation solution."""
    AVAILABLE = "available"
    ALERT = "alert"
    UNAVAILABLE = "unavailable"


class FaultType(str, Enum):
    """Fault injections understood by the simulator."""
    GNSS_BIAS = "gnss-bias"
    GNSS_MULTIPATH_RAMP = "gnss-multipath-ramp"
    BARO_BIAS_STEP = "baro-bias-step"
    MARKER_SWAP = "marker-swap"
    CORNER_OUTLIER = "corner-outlier"
    IMU_BIAS_STEP = "imu-bias-step"
    RFI_NARROWBAND = "rfi-narrowband"


# ---------------------------------------------------------------------------
# Requirements
# ---------------------------------------------------------------------------

class VertiportGeometry(BaseModel):
    """Vertiport sizing inputs for requirement derivation."""
    d_max: float = Field(..., description="Largest D-value among operating vehicles [m]")
    rtodv_max: float = Field(default=0.0, description="Rejected take-off distance [m], 0 when unknown")
    fato_multiplier: float = Field(default=1.5, description="FATO size as a multiple of D")
    to_hover_height: float = Field(default=30.5, description="High hover (take-off area) height [m]")
    low_hover_height: float = Field(default=3.0, description="Low hover height above the FATO [m]")

    @field_validator("d_max")
    @classmethod
    def validate_d_max(cls, v):
        """D-value must be positive."""
        if not v > 0:
            raise ValueError("d_max must be positive")
        return v

    @field_validator("rtodv_max")
    @classmethod
    def validate_rtodv(cls, v):
        """RTODV cannot be negative."""
        if v < 0:
            raise ValueError("rtodv_max cannot be negative")
        return v

    @field_validator("fato_multiplier")
    @classmethod
    def validate_multiplier(cls, v):
        """FATO must be at least 1.5 D."""
        if v < 1.5:
            raise ValueError("fato_multiplier must be at least 1.5")
        return v

    @model_validator(mode="after")
    def validate_hover_heights(self):
        """Take-off hover must sit above the low hover, which sits above ground."""
        if self.low_hover_height < 0:
            raise ValueError("low_hover_height cannot be negative")
        if not self.to_hover_height > self.low_hover_height:
            raise ValueError("to_hover_height must exceed low_hover_height")
        return self


class RiskParams(BaseModel):
    """Risk inputs for requirement derivation."""
    p_out: float = Field(default=1e-6, description="Probability of finishing outside the FATO")
    integrity_risk: float = Field(default=1e-7, description="Integrity risk per operation")
    sigma_fte: float = Field(default=0.25, description="1-sigma flight technical error [m]")
    k95: float = Field(default=2.0, description="Factor converting 1-sigma to 95 % accuracy")

    @field_validator("p_out", "integrity_risk")
    @classmethod
    def validate_probability(cls, v):
        """Probabilities must lie strictly between 0 and 1."""
        if not 0.0 < v < 1.0:
            raise ValueError("probability must lie in (0, 1)")
        return v

    @field_validator("sigma_fte")
    @classmethod
    def validate_sigma_fte(cls, v):
        """FTE cannot be negative."""
        if v < 0:
            raise ValueError("sigma_fte cannot be negative")
        return v

    @field_validator("k95")
    @classmethod
    def validate_k95(cls, v):
        """Accuracy factor must be positive."""
        if not v > 0:
            raise ValueError("k95 must be positive")
        return v


class RequirementSet(BaseModel):
    """Navigation requirements for one operation phase."""
    model_config = ConfigDict(frozen=True)

    hpe95: float = Field(..., gt=0, description="Horizontal accuracy (95 %) [m]")
    vpe95: float = Field(..., gt=0, description="Vertical accuracy (95 %), stricter bound [m]")
    hal: float = Field(..., gt=0, description="Horizontal alert limit [m]")
    val: float = Field(..., gt=0, description="Vertical alert limit, stricter bound [m]")
    integrity_risk: float = Field(..., gt=0, description="Integrity risk per operation")
    tta: float = Field(..., gt=0, description="Time to alert [s]")
    continuity: float = Field(..., gt=0, description="Continuity risk per operation")
    availability: float = Field(..., gt=0, description="Required availability fraction")
    k95: float = Field(default=2.0, gt=0, description="95 % factor used for the accuracies")

    fato: Optional[float] = None
    wtsa: Optional[float] = None
    sigma_tse: Optional[float] = None
    sigma_nse_h: Optional[float] = None
    slope_deg: Optional[float] = None
    sigma_nse_v_slope: Optional[float] = None
    sigma_nse_v_hover: Optional[float] = None
    vpe95_slope: Optional[float] = None
    vpe95_hover: Optional[float] = None
    vpe95_hover_no_fte: Optional[float] = None
    val_slope: Optional[float] = None
    val_hover: Optional[float] = None

    @model_validator(mode="after")
    def validate_alert_limit_chain(self):
        """HAL and HPE95 must come from the same NSE sigma."""
        from vertinav.requirements import gaussian_two_sided_k

        expected = self.hpe95 / self.k95 * gaussian_two_sided_k(self.integrity_risk)
        if not math.isclose(self.hal, expected, rel_tol=1e-9):
            raise ValueError(
                f"hal {self.hal} inconsistent with hpe95/k95*k(IR) = {expected}"
            )
        return self


class RequirementReport(BaseModel):
    """Table-style summary across FATO sizing choices."""
    operation: str
    sets: Dict[str, RequirementSet]
    hpe95_range: tuple[float, float]
    vpe95_range: tuple[float, float]
    hal_range: tuple[float, float]
    val_range: tuple[float, float]
    integrity_risk: float
    tta: float
    continuity: float
    availability: float


# ---------------------------------------------------------------------------
# Atmosphere
# ---------------------------------------------------------------------------

class GroundWeatherSample(BaseModel):
    """One reading of the vertiport weather station."""
    model_config = ConfigDict(frozen=True)

    pressure: float = Field(..., description="Static pressure [Pa]")
    temperature: float = Field(..., description="Air temperature [K]")
    station_geodetic_altitude: float = Field(default=0.0, description="Station geodetic altitude [m]")
    timestamp: float = Field(default=0.0, description="Sample time [s]")

    @field_validator("pressure")
    @classmethod
    def validate_pressure(cls, v):
        """Pressure must be a plausible surface reading."""
        if not 50000.0 < v < 110000.0:
            raise ValueError("pressure must lie between 50000 and 110000 Pa")
        return v

    @field_validator("temperature")
    @classmethod
    def validate_temperature(cls, v):
        """Temperature must be a plausible surface reading."""
        if not 200.0 < v < 330.0:
            raise ValueError("temperature must lie between 200 and 330 K")
        return v


class BaroCalibration(BaseModel):
    """Airborne barometer bias relative to the ground station."""
    model_config = ConfigDict(frozen=True)

    bias: float = Field(..., description="Airborne minus ground pressure [Pa]")
    bias_sigma: float = Field(..., ge=0, description="Standard error of the bias [Pa]")
    epoch: float = Field(default=0.0, description="Calibration time [s]")
    samples: int = Field(default=0, ge=0)

    @field_validator("bias")
    @classmethod
    def validate_bias(cls, v):
        """Reject implausible offsets."""
        if abs(v) >= 2000.0:
            raise ValueError("barometer bias magnitude must stay below 2000 Pa")
        return v


# ---------------------------------------------------------------------------
# Integrity
# ---------------------------------------------------------------------------

class FaultTreeNode(BaseModel):
    """OR-gate fault tree node."""
    model_config = ConfigDict(frozen=True)

    name: str
    kind: NodeKind
    probability: Optional[float] = Field(default=None, description="Leaf probability per unit")
    children: List["FaultTreeNode"] = Field(default_factory=list)
    unit: RateUnit = RateUnit.PER_HOUR
    reported_probability: Optional[float] = Field(
        default=None, description="Published value of a gate, checked against the computed one"
    )
    authoritative: bool = Field(default=True, description="False for placeholder leaf values")

    @model_validator(mode="after")
    def validate_shape(self):
        """Leaves carry a probability, gates carry children."""
        if self.kind == NodeKind.LEAF:
            if self.probability is None:
                raise ValueError(f"leaf '{self.name}' needs a probability")
            if not 0.0 <= self.probability < 1.0:
                raise ValueError(f"leaf '{self.name}' probability must lie in [0, 1)")
            if self.children:
                raise ValueError(f"leaf '{self.name}' cannot have children")
        else:
            if not self.children:
                raise ValueError(f"gate '{self.name}' needs at least one child")
            if self.probability is not None:
                raise ValueError(f"gate '{self.name}' cannot carry its own probability")
        return self


class IntegrityStatus(BaseModel):
    """Alert-limit check result for one epoch."""
    hpl: Optional[float]
    vpl: Optional[float]
    hal: float
    val: float
    state: IntegrityState
    events: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Configuration document
# ---------------------------------------------------------------------------

class RequirementsConfig(BaseModel):
    """Requirement derivation inputs and the echoed operation values."""
    geometry: VertiportGeometry
    risk: RiskParams = Field(default_factory=RiskParams)
    multipliers: List[float] = Field(default_factory=lambda: [1.5, 2.0])
    operation: str = "Precision Approach (SAIL V - Certified)"
    tta: float = Field(default=3.0, gt=0)
    continuity: float = Field(default=1e-8, gt=0)
    availability: float = Field(default=0.9999, gt=0, le=1)

    @field_validator("multipliers")
    @classmethod
    def validate_multipliers(cls, v):
        """At least one FATO multiplier, none below 1.5."""
        if not v:
            raise ValueError("multipliers cannot be empty")
        if min(v) < 1.5:
            raise ValueError("FATO multipliers must be at least 1.5")
        return v


class AtmosphereConfig(BaseModel):
    """Barometric altitude processing."""
    max_ground_age: float = Field(default=60.0, gt=0, description="Ground sample staleness limit [s]")
    bias_pa: float = Field(default=0.0, description="Airborne barometer bias removed before conversion [Pa]")
    pressure_sigma_pa: float = Field(default=6.0, gt=0, description="Airborne pressure noise 1-sigma [Pa]")


class GnssConfig(BaseModel):
    """Differential GNSS processing."""
    reference_latitude_deg: float = 51.855
    reference_longitude_deg: float = 11.418
    reference_height_m: float = 190.0
    reference_station_enu: List[float] = Field(default_factory=lambda: [100.0, 0.0, 2.0])
    sigma_nominal: float = Field(default=1.0, gt=0)
    cn0_mask: float = 35.0
    require_lock: bool = True
    monitors_enabled: bool = True
    cmc_window: int = Field(default=20, ge=2)
    cmc_threshold: float = Field(default=0.5, gt=0, description="Detrended CMC rate threshold [m/epoch]")
    rfi_ratio_threshold: float = Field(default=10.0, gt=1)
    residual_pfa: float = Field(default=1e-5, gt=0, lt=1)
    pl_integrity_risk_h: float = Field(default=1e-7, gt=0, lt=1)
    pl_integrity_risk_v: float = Field(default=1e-7, gt=0, lt=1)
    max_iterations: int = Field(default=20, ge=1)


class FusionConfig(BaseModel):
    """Error-state filter tuning."""
    accel_noise_density: float = Field(default=0.005, ge=0, description="[m/s/sqrt(s)]")
    gyro_noise_density: float = Field(default=2e-4, ge=0, description="[rad/sqrt(s)]")
    accel_bias_rw: float = Field(default=1e-5, ge=0, description="[m/s^2/sqrt(s)]")
    gyro_bias_rw: float = Field(default=1e-6, ge=0, description="[rad/s/sqrt(s)]")
    init_velocity_sigma: float = Field(default=0.1, gt=0)
    init_tilt_sigma_deg: float = Field(default=1.0, gt=0)
    init_yaw_sigma_deg: float = Field(default=5.0, gt=0)
    init_accel_bias_sigma: float = Field(default=0.05, gt=0)
    init_gyro_bias_sigma: float = Field(default=1e-3, gt=0)
    initial_heading_deg: Optional[float] = None
    leveling_samples: int = Field(default=100, ge=1)
    gate_probability: float = Field(default=1e-3, gt=0, lt=1)
    output_rate_hz: float = Field(default=10.0, gt=0)
    warmup_updates: int = Field(default=5, ge=0, description="Accepted GNSS updates before integrity is declared")


class VisionConfig(BaseModel):
    """Camera model and marker processing."""
    fx: float = Field(default=600.0, gt=0)
    fy: float = Field(default=600.0, gt=0)
    cx: float = 320.0
    cy: float = 240.0
    width: int = Field(default=640, gt=0)
    height: int = Field(default=480, gt=0)
    intrinsic_sigma: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    max_position_sigma: float = Field(default=0.5, gt=0)
    large_marker_min_side: float = Field(default=0.5, gt=0)
    small_marker_ceiling: float = Field(default=5.0, gt=0)
    min_marker_pixels: float = Field(default=8.0, ge=0)
    min_depth: float = Field(default=0.1, gt=0)

    @field_validator("intrinsic_sigma")
    @classmethod
    def validate_intrinsic_sigma(cls, v):
        """One non-negative sigma per fx, fy, cx, cy."""
        if len(v) != 4 or any(s < 0 for s in v):
            raise ValueError("intrinsic_sigma needs four non-negative values")
        return v

    @model_validator(mode="after")
    def validate_principal_point(self):
        """Principal point must fall inside the image."""
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self


class IntegrityConfig(BaseModel):
    """Fault-tree evaluation and budget allocation."""
    mode: OrGateMode = OrGateMode.SUM
    weights: Dict[str, float] = Field(
        default_factory=lambda: {
            "nominal_fusion": 0.2, "gnss": 0.2, "baro": 0.2, "ins": 0.2, "vision": 0.2,
        }
    )
    trees: Dict[str, FaultTreeNode] = Field(default_factory=dict)


class SatelliteSpec(BaseModel):
    """Satellite given by azimuth/elevation at the reference or by ECEF position."""
    sat_id: str
    azimuth_deg: Optional[float] = None
    elevation_deg: Optional[float] = None
    ecef: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_position(self):
        """Exactly one way of placing the satellite."""
        has_azel = self.azimuth_deg is not None and self.elevation_deg is not None
        has_ecef = self.ecef is not None
        if has_azel == has_ecef:
            raise ValueError(f"satellite {self.sat_id}: give either azimuth/elevation or ecef")
        if has_ecef and len(self.ecef) != 3:
            raise ValueError(f"satellite {self.sat_id}: ecef needs three coordinates")
        if has_azel and not 0.0 < self.elevation_deg <= 90.0:
            raise ValueError(f"satellite {self.sat_id}: elevation must lie in (0, 90]")
        return self


class MarkerSpec(BaseModel):
    """Marker map row."""
    id: int
    side_m: float = Field(..., gt=0)
    cx: float
    cy: float
    cz: float = 0.0
    yaw_deg: float = 0.0
    family: str = "tag25h9"


class SensorNoise(BaseModel):
    """Truth-side sensor error model of the simulator."""
    accel_noise_density: float = Field(default=0.005, ge=0)
    gyro_noise_density: float = Field(default=2e-4, ge=0)
    accel_bias: List[float] = Field(default_factory=lambda: [0.02, -0.01, 0.015])
    gyro_bias: List[float] = Field(default_factory=lambda: [1e-4, -2e-4, 5e-5])
    pr_white_sigma: float = Field(default=0.05, ge=0)
    multipath_sigma: float = Field(default=0.1, ge=0)
    multipath_tau: float = Field(default=20.0, gt=0)
    carrier_sigma: float = Field(default=0.003, ge=0)
    reference_pr_sigma: float = Field(default=0.05, ge=0)
    common_error_sigma: float = Field(default=3.0, ge=0)
    rover_clock_bias: float = 30.0
    rover_clock_drift: float = 0.1
    reference_clock_bias: float = 50.0
    cn0_zenith: float = 50.0
    cn0_horizon: float = 38.0
    baro_sigma_pa: float = Field(default=6.0, ge=0)
    baro_bias_pa: float = 0.0
    ground_pressure_resolution: float = Field(default=1.0, ge=0)
    pixel_sigma: float = Field(default=0.5, ge=0)

    @field_validator("accel_bias", "gyro_bias")
    @classmethod
    def validate_triplet(cls, v):
        """Biases are three-axis."""
        if len(v) != 3:
            raise ValueError("bias needs three components")
        return v


class GroundWeatherConfig(BaseModel):
    """Weather at vertiport B, the ground-correction station."""
    pressure: float = 101325.0
    temperature: float = 288.15
    station_geodetic_altitude: float = 190.0
    pressure_drift: float = Field(default=0.0, description="[Pa/s]")


class RatesConfig(BaseModel):
    """Sensor output rates [Hz]."""
    imu: float = Field(default=100.0, gt=0)
    gnss: float = Field(default=5.0, gt=0)
    baro: float = Field(default=10.0, gt=0)
    camera: float = Field(default=10.0, gt=0)
    ground: float = Field(default=1.0, gt=0)


class FaultInjection(BaseModel):
    """One scheduled fault."""
    type: FaultType
    start: float = Field(..., ge=0)
    magnitude: float = 0.0
    duration: Optional[float] = Field(default=None, gt=0)
    sat_ids: List[str] = Field(default_factory=list)
    axis: int = Field(default=0, ge=0, le=2)
    marker_id: Optional[int] = None
    target_marker_id: Optional[int] = None
    corner: int = Field(default=0, ge=0, le=3)
    band: int = Field(default=0, ge=0)


class ScenarioConfig(BaseModel):
    """Declarative flight scenario."""
    vertiport_a: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    vertiport_b: List[float] = Field(default_factory=lambda: [300.0, 0.0, 0.0])
    v_max: float = Field(default=5.0, gt=0)
    a_max: float = Field(default=1.0, gt=0)
    pre_flight_rest: float = Field(default=5.0, ge=0)
    hover_duration: float = Field(default=3.0, ge=0)
    post_landing_rest: float = Field(default=2.0, ge=0)
    rates: RatesConfig = Field(default_factory=RatesConfig)
    noise: SensorNoise = Field(default_factory=SensorNoise)
    ground_weather: GroundWeatherConfig = Field(default_factory=GroundWeatherConfig)
    satellites: List[SatelliteSpec] = Field(default_factory=list)
    markers: List[MarkerSpec] = Field(default_factory=list)
    spectrum_bands: int = Field(default=16, ge=1)
    faults: List[FaultInjection] = Field(default_factory=list)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("vertiport_a", "vertiport_b")
    @classmethod
    def validate_vertiport(cls, v):
        """Vertiport positions are ENU triplets."""
        if len(v) != 3:
            raise ValueError("vertiport position needs three ENU coordinates")
        return v


class MonteCarloConfig(BaseModel):
    """Monte Carlo harness."""
    runs: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)


class VertinavConfig(BaseModel):
    """Complete configuration document."""
    schema_version: Literal[1] = SCHEMA_VERSION
    requirements: RequirementsConfig
    atmosphere: AtmosphereConfig = Field(default_factory=AtmosphereConfig)
    gnss: GnssConfig = Field(default_factory=GnssConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    vision: VisionConfig = Field(default_factory=VisionConfig)
    integrity: IntegrityConfig = Field(default_factory=IntegrityConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    monte_carlo: MonteCarloConfig = Field(default_factory=MonteCarloConfig)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class RunSummary(BaseModel):
    """Aggregate of one simulated or replayed run."""
    run: int
    seed: int
    epochs: int
    available_epochs: int
    alert_epochs: int
    availability: float
    hpe95: Optional[float] = None
    vpe95: Optional[float] = None
    max_hpl: Optional[float] = None
    max_vpl: Optional[float] = None
    pl_violations: int = 0
    gnss_pl_violations: int = 0
    excluded_satellites: int = 0
    max_alert_latency: Optional[float] = None
    tta_met: bool = True
    vision_available: bool = True


class MonteCarloReport(BaseModel):
    """Aggregate across Monte Carlo runs."""
    runs: int
    hpe95: Optional[float]
    vpe95: Optional[float]
    pl_violations: int
    alerts: int
    availability: float

    @model_validator(mode="after")
    def validate_counts(self):
        """Violating runs cannot outnumber runs."""
        if self.pl_violations > self.runs:
            raise ValueError("pl_violations cannot exceed runs")
        return self


class CliInvocation(BaseModel):
    """Parsed command line."""
    subcommand: Literal["derive-requirements", "simulate", "replay", "report", "fault-tree"]
    config: Optional[str] = None
    out: Optional[str] = None
    seed: Optional[int] = None
    runs: Optional[int] = None
    verbosity: int = 0
    paths: List[str] = Field(default_factory=list)
    fail_on_alert: bool = False
