"""Differential GNSS: data editing, local threat monitors, corrections, WLS and protection levels."""

import logging
import math
from collections import deque
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import chi2

from vertinav.errors import (
    ContractViolation,
    DegenerateGeometryError,
    DivergenceError,
    InsufficientDataError,
    InsufficientGeometryError,
)
from vertinav.geodesy import LocalFrame
from vertinav.requirements import gaussian_two_sided_k

logger = logging.getLogger(__name__)

EARTH_MEAN_RADIUS = 6371000.0
GNSS_ORBIT_HEIGHT = 20.2e6
MAX_CONDITION_NUMBER = 1e12


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SatelliteObservation(_ArrayModel):
    """Code and carrier observation of one satellite at one epoch."""
    sat_id: str
    sat_position: np.ndarray = Field(..., description="ECEF satellite position [m]")
    pseudorange: float = Field(..., description="Code pseudorange [m]")
    carrier_phase_range: float = Field(default=0.0, description="Carrier phase in meters")
    cn0: float = Field(default=45.0, description="Carrier-to-noise density [dB-Hz]")
    lock_indicator: bool = Field(default=True, description="False after loss of lock")
    sigma_nominal: float = Field(default=1.0, description="Nominal 1-sigma ranging error [m]")

    @field_validator("sat_position", mode="before")
    @classmethod
    def validate_position(cls, v):
        """ECEF position is a 3-vector."""
        arr = np.asarray(v, dtype=float)
        if arr.shape != (3,):
            raise ValueError("sat_position needs three ECEF coordinates")
        return arr

    @field_validator("pseudorange")
    @classmethod
    def validate_pseudorange(cls, v):
        """Pseudoranges of medium-orbit satellites exceed 1e7 m."""
        if not v > 1e7:
            raise ValueError("pseudorange must exceed 1e7 m")
        return v

    @field_validator("sigma_nominal")
    @classmethod
    def validate_sigma(cls, v):
        """Sigma must be positive."""
        if not v > 0:
            raise ValueError("sigma_nominal must be positive")
        return v


class CorrectionMessage(_ArrayModel):
    """Pseudorange corrections broadcast by the reference station."""
    prc: Dict[str, float]
    reference_position: np.ndarray
    epoch: float = 0.0
    integrity_flags: Dict[str, bool] = Field(default_factory=dict)

    def usable(self, sat_id: str) -> bool:
        return sat_id in self.prc and self.integrity_flags.get(sat_id, True)


class PositionSolution(_ArrayModel):
    """Weighted least-squares fix."""
    position: np.ndarray = Field(..., description="ECEF position [m]")
    clock_bias: float = Field(..., description="Receiver clock bias [m]")
    covariance: np.ndarray = Field(..., description="4x4 covariance of position and clock")
    hpl: Optional[float] = None
    vpl: Optional[float] = None
    used_sats: List[str] = Field(default_factory=list)
    residuals: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    iterations: int = 0


class EditReport(BaseModel):
    """Result of data editing."""
    removed: Dict[str, str] = Field(default_factory=dict)
    counts: Dict[str, int] = Field(default_factory=lambda: {"cn0": 0, "lli": 0})


class RfiDetection(BaseModel):
    """Band-power interference check result."""
    detected: bool
    bands: List[int] = Field(default_factory=list)
    max_ratio: float = 0.0


class ResidualTestResult(BaseModel):
    """Chi-square consistency check of WLS residuals."""
    statistic: float
    threshold: Optional[float]
    dof: int
    fault_detected: bool


def data_edit(
    obs: Sequence[SatelliteObservation],
    cn0_mask: float = 35.0,
    require_lock: bool = True,
) -> Tuple[List[SatelliteObservation], EditReport]:
    """Drop observations below the CN0 mask or flagged with loss of lock.

    Returns:
        Kept observations and a report of removal reasons
    """
    kept: List[SatelliteObservation] = []
    report = EditReport()
    for o in obs:
        if require_lock and not o.lock_indicator:
            report.removed[o.sat_id] = "lli"
            report.counts["lli"] += 1
        elif o.cn0 < cn0_mask:
            report.removed[o.sat_id] = "cn0"
            report.counts["cn0"] += 1
        else:
            kept.append(o)
    if report.removed:
        logger.debug(f"Data edit removed {report.removed}")
    return kept, report


def compute_corrections(
    ref_truth_position,
    obs: Sequence[SatelliteObservation],
    usable: Optional[Dict[str, bool]] = None,
    epoch: float = 0.0,
) -> CorrectionMessage:
    """Pseudorange corrections from a surveyed reference receiver.

    ``prc = pseudorange - |sat - ref|`` absorbs satellite clock, common
    atmospheric errors and the reference clock. Satellites the reference
    monitors flagged as unusable are listed in the integrity flags but get
    no correction.
    """
    ref = np.asarray(ref_truth_position, dtype=float)
    usable = usable or {}
    prc: Dict[str, float] = {}
    flags: Dict[str, bool] = {}
    for o in obs:
        ok = usable.get(o.sat_id, True)
        flags[o.sat_id] = ok
        if ok:
            prc[o.sat_id] = o.pseudorange - float(np.linalg.norm(o.sat_position - ref))
    return CorrectionMessage(prc=prc, reference_position=ref, epoch=epoch, integrity_flags=flags)


def _select(obs, corrections: Optional[CorrectionMessage]):
    sats, positions, ranges, sigmas = [], [], [], []
    for o in obs:
        if corrections is not None:
            if not corrections.usable(o.sat_id):
                continue
            pr = o.pseudorange - corrections.prc[o.sat_id]
        else:
            pr = o.pseudorange
        sats.append(o.sat_id)
        positions.append(o.sat_position)
        ranges.append(pr)
        sigmas.append(o.sigma_nominal)
    return sats, np.array(positions), np.array(ranges), np.array(sigmas)


def _geometry(positions: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    los = positions - x
    ranges = np.linalg.norm(los, axis=1)
    h = np.hstack([-los / ranges[:, None], np.ones((len(ranges), 1))])
    return h, ranges


def wls_position(
    obs: Sequence[SatelliteObservation],
    corrections: Optional[CorrectionMessage] = None,
    initial=None,
    max_iterations: int = 20,
    tolerance: float = 1e-4,
) -> PositionSolution:
    """Iterative weighted least-squares position and clock.

    Args:
        obs: Edited observations
        corrections: Differential corrections; satellites without a usable
            correction are skipped when given
        initial: ECEF starting point (origin when omitted)
        max_iterations: Iteration cap
        tolerance: Position step that ends the iteration [m]

    Returns:
        PositionSolution with covariance (H^T W H)^-1

    Raises:
        InsufficientGeometryError: Fewer than four satellites
        DegenerateGeometryError: Normal matrix condition above 1e12
        DivergenceError: No convergence within ``max_iterations``
    """
    sats, positions, pr, sigmas = _select(obs, corrections)
    if len(sats) < 4:
        raise InsufficientGeometryError(f"need at least 4 satellites, got {len(sats)}")

    w = 1.0 / sigmas**2
    x = np.zeros(3) if initial is None else np.array(initial, dtype=float)
    clock = 0.0

    for iteration in range(1, max_iterations + 1):
        h, ranges = _geometry(positions, x)
        normal = h.T @ (w[:, None] * h)
        if np.linalg.cond(normal) > MAX_CONDITION_NUMBER:
            raise DegenerateGeometryError(
                f"normal matrix condition number {np.linalg.cond(normal):.3e} exceeds {MAX_CONDITION_NUMBER:.0e}"
            )
        r = pr - (ranges + clock)
        dx = np.linalg.solve(normal, h.T @ (w * r))
        if not np.all(np.isfinite(dx)):
            raise DivergenceError("least-squares step is not finite")
        x = x + dx[:3]
        clock += dx[3]
        if np.linalg.norm(dx[:3]) < tolerance:
            break
    else:
        raise DivergenceError(f"no convergence within {max_iterations} iterations")

    h, ranges = _geometry(positions, x)
    normal = h.T @ (w[:, None] * h)
    covariance = np.linalg.inv(normal)
    covariance = 0.5 * (covariance + covariance.T)
    residuals = pr - (ranges + clock)
    return PositionSolution(
        position=x,
        clock_bias=float(clock),
        covariance=covariance,
        used_sats=sats,
        residuals=residuals,
        weights=w,
        iterations=iteration,
    )


def wls_gradient(solution: PositionSolution, obs: Sequence[SatelliteObservation],
                 corrections: Optional[CorrectionMessage] = None) -> np.ndarray:
    """``H^T W r`` at the solution, zero at the least-squares optimum."""
    sats, positions, pr, sigmas = _select(obs, corrections)
    h, ranges = _geometry(positions, solution.position)
    r = pr - (ranges + solution.clock_bias)
    return h.T @ (r / sigmas**2)


def _check_psd(cov: np.ndarray, name: str = "covariance") -> None:
    if not np.all(np.isfinite(cov)):
        raise ContractViolation(f"{name} contains non-finite entries")
    if not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-12):
        raise ContractViolation(f"{name} is not symmetric")
    trace = float(np.trace(cov))
    if np.min(np.linalg.eigvalsh(cov)) < -1e-9 * max(abs(trace), 1e-300):
        raise ContractViolation(f"{name} is not positive semi-definite")


def protection_levels(
    covariance: np.ndarray,
    integrity_risk_alloc: float,
    frame: Optional[LocalFrame] = None,
    integrity_risk_vertical: Optional[float] = None,
) -> Tuple[float, float]:
    """Fault-free protection levels from a position covariance.

    Args:
        covariance: 3x3 or 4x4 (position first) covariance, ECEF when
            ``frame`` is given, ENU otherwise
        integrity_risk_alloc: Horizontal integrity risk allocation
        frame: Local frame for the ECEF to ENU rotation
        integrity_risk_vertical: Vertical allocation (defaults to horizontal)

    Returns:
        (hpl, vpl) [m]

    Raises:
        ContractViolation: Covariance not symmetric PSD
    """
    cov = np.asarray(covariance, dtype=float)
    _check_psd(cov)
    pos = cov[:3, :3]
    enu = frame.covariance_to_enu(pos) if frame is not None else pos
    horizontal = np.linalg.eigvalsh(enu[:2, :2])
    ir_v = integrity_risk_alloc if integrity_risk_vertical is None else integrity_risk_vertical
    hpl = gaussian_two_sided_k(integrity_risk_alloc) * math.sqrt(max(float(horizontal[-1]), 0.0))
    vpl = gaussian_two_sided_k(ir_v) * math.sqrt(max(float(enu[2, 2]), 0.0))
    return hpl, vpl


def enu_covariance(solution: PositionSolution, frame: LocalFrame) -> np.ndarray:
    """3x3 ENU position covariance of a solution."""
    return frame.covariance_to_enu(solution.covariance[:3, :3])


def residual_test(
    solution: PositionSolution,
    pfa: float = 1e-5,
) -> ResidualTestResult:
    """Weighted sum of squared residuals against a chi-square threshold (n - 4 dof)."""
    if solution.residuals is None or solution.weights is None:
        raise ContractViolation("solution carries no residuals")
    dof = len(solution.residuals) - 4
    statistic = float(np.sum(solution.weights * solution.residuals**2))
    if dof <= 0:
        return ResidualTestResult(statistic=statistic, threshold=None, dof=dof, fault_detected=False)
    threshold = float(chi2.ppf(1.0 - pfa, dof))
    detected = statistic > threshold
    if detected:
        logger.warning(f"Residual test failed: {statistic:.2f} > {threshold:.2f} ({dof} dof)")
    return ResidualTestResult(statistic=statistic, threshold=threshold, dof=dof, fault_detected=detected)


def cmc_multipath_monitor(
    code: Sequence[float],
    carrier: Sequence[float],
    threshold: float = 0.5,
    window: int = 20,
) -> np.ndarray:
    """Flag epochs whose detrended code-minus-carrier rate exceeds ``threshold``.

    The moving mean over the last ``window`` epochs (current one included)
    removes the ambiguity and slow ionosphere. Epochs before ``window`` are
    never flagged.

    Raises:
        ContractViolation: Series lengths differ
        InsufficientDataError: Fewer epochs than ``window``
    """
    code = np.asarray(code, dtype=float)
    carrier = np.asarray(carrier, dtype=float)
    if code.shape != carrier.shape:
        raise ContractViolation("code and carrier series differ in length")
    if code.size < window:
        raise InsufficientDataError(f"need at least {window} epochs, got {code.size}")

    cmc = code - carrier
    flags = np.zeros(cmc.size, dtype=bool)
    means = sliding_window_view(cmc, window).mean(axis=1)
    detrended = cmc[window - 1:] - means
    rate = np.diff(detrended)
    flags[window:] = np.abs(rate) > threshold
    return flags


class _CmcChannel:
    def __init__(self, window: int):
        self.history: Deque[float] = deque(maxlen=window)
        self.previous: Optional[float] = None
        self.excluded = False


class CmcChannelMonitor:
    """Per-satellite code-minus-carrier monitor with latched exclusion.

    A flagged channel stays excluded until the receiver reports a loss of
    lock; re-acquisition starts the channel afresh. A channel with fewer than
    ``window`` epochs of history is not yet armed.
    """

    def __init__(self, threshold: float = 0.5, window: int = 20):
        self.threshold = threshold
        self.window = window
        self._channels: Dict[str, _CmcChannel] = {}

    def update(self, obs: SatelliteObservation, t: float = 0.0) -> bool:
        """Feed one observation; returns True while the channel is excluded."""
        channel = self._channels.get(obs.sat_id)
        if channel is None or not obs.lock_indicator:
            if channel is not None and channel.excluded:
                logger.info(f"{obs.sat_id}: loss of lock at t={t:.2f} s resets CMC exclusion")
            channel = _CmcChannel(self.window)
            self._channels[obs.sat_id] = channel

        channel.history.append(obs.pseudorange - obs.carrier_phase_range)
        if len(channel.history) < self.window:
            return channel.excluded

        values = np.array(channel.history)
        detrended = float(values[-1] - values.mean())
        if channel.previous is not None and not channel.excluded:
            if abs(detrended - channel.previous) > self.threshold:
                channel.excluded = True
                logger.warning(
                    f"{obs.sat_id}: CMC rate {detrended - channel.previous:.3f} m/epoch "
                    f"exceeds {self.threshold} at t={t:.2f} s, channel excluded"
                )
        channel.previous = detrended
        return channel.excluded

    def excluded(self) -> List[str]:
        return sorted(s for s, c in self._channels.items() if c.excluded)


def band_power_rfi_monitor(
    psd_sample: Sequence[float],
    nominal_psd: Sequence[float],
    ratio_threshold: float = 10.0,
) -> RfiDetection:
    """Compare received band powers with the nominal spectrum.

    Raises:
        ContractViolation: Vectors differ in length
    """
    psd = np.asarray(psd_sample, dtype=float)
    nominal = np.asarray(nominal_psd, dtype=float)
    if psd.shape != nominal.shape:
        raise ContractViolation(f"spectrum has {psd.size} bands, nominal has {nominal.size}")
    ratio = psd / nominal
    bands = [int(i) for i in np.flatnonzero(ratio > ratio_threshold)]
    if bands:
        logger.warning(f"RFI detected in bands {bands} (max ratio {ratio.max():.1f})")
    return RfiDetection(detected=bool(bands), bands=bands, max_ratio=float(ratio.max()) if ratio.size else 0.0)


def slant_range(elevation_deg: float, orbit_height: float = GNSS_ORBIT_HEIGHT,
                earth_radius: float = EARTH_MEAN_RADIUS) -> float:
    """Distance to a satellite at ``orbit_height`` seen at ``elevation_deg``."""
    el = math.radians(elevation_deg)
    r = earth_radius + orbit_height
    return math.sqrt(r * r - (earth_radius * math.cos(el)) ** 2) - earth_radius * math.sin(el)


def synthetic_constellation(
    frame: LocalFrame,
    azel: Sequence[Tuple[str, float, float]],
    orbit_height: float = GNSS_ORBIT_HEIGHT,
) -> Dict[str, np.ndarray]:
    """ECEF satellite points from (sat_id, azimuth, elevation) seen at the frame origin."""
    sats: Dict[str, np.ndarray] = {}
    for sat_id, az_deg, el_deg in azel:
        az, el = math.radians(az_deg), math.radians(el_deg)
        los_enu = np.array([math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])
        sats[sat_id] = frame.origin_ecef + frame.r_enu_to_ecef @ los_enu * slant_range(el_deg, orbit_height)
    return sats
