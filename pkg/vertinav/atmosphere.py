"""ISA pressure altitude, ground-corrected barometric altitude and bias calibration."""

import bisect
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from vertinav.errors import (
    ContractViolation,
    DomainError,
    InsufficientDataError,
    StaleCorrectionError,
    UnsupportedLayerError,
)
from vertinav.models import BaroCalibration, GroundWeatherSample

logger = logging.getLogger(__name__)


class IsaConstants(BaseModel):
    """International Standard Atmosphere constants (troposphere)."""
    model_config = ConfigDict(frozen=True)

    p0: float = 101325.0
    t0: float = 288.15
    lapse: float = 0.0065
    g0: float = 9.80665
    gas_const: float = 287.05287
    rho0: float = 1.225
    tropopause_pressure: float = 22632.06

    @property
    def exponent(self) -> float:
        """g0 / (R L), about 5.25588."""
        return self.g0 / (self.gas_const * self.lapse)

    @property
    def inverse_exponent(self) -> float:
        """R L / g0, about 0.190263."""
        return self.gas_const * self.lapse / self.g0


ISA = IsaConstants()

MAX_GROUND_OFFSET_PA = 5000.0
MIN_CALIBRATION_SAMPLES = 10


def pressure_altitude_qne(p: float, isa: IsaConstants = ISA) -> float:
    """Pressure altitude above the 1013.25 hPa isobar.

    Raises:
        UnsupportedLayerError: Pressure outside the troposphere
    """
    _check_troposphere(p, isa)
    return (isa.t0 / isa.lapse) * (1.0 - (p / isa.p0) ** isa.inverse_exponent)


def _check_troposphere(p: float, isa: IsaConstants) -> None:
    if not (math.isfinite(p) and p > isa.tropopause_pressure):
        raise UnsupportedLayerError(
            f"pressure {p} Pa lies outside the troposphere (> {isa.tropopause_pressure} Pa)"
        )


def ground_corrected_geodetic_altitude(
    p_air: float,
    ground: GroundWeatherSample,
    now: Optional[float] = None,
    max_age: float = 60.0,
    bias: float = 0.0,
    isa: IsaConstants = ISA,
) -> float:
    """Geodetic altitude from the isobar aligned with the vertiport surface.

    Uses the measured ground temperature, not the ISA MSL value.

    Args:
        p_air: Airborne static pressure [Pa]
        ground: Latest ground weather sample
        now: Current time; enables the staleness check when given
        max_age: Maximum ground sample age [s]
        bias: Airborne barometer bias removed before conversion [Pa]
        isa: Atmosphere constants

    Returns:
        Geodetic altitude [m]

    Raises:
        StaleCorrectionError: Ground sample older than ``max_age``
        DomainError: Airborne and ground pressures differ by more than 5000 Pa
    """
    if now is not None and now - ground.timestamp > max_age:
        raise StaleCorrectionError(
            f"ground sample from t={ground.timestamp} s is {now - ground.timestamp:.1f} s old "
            f"(max {max_age} s)"
        )
    p = p_air - bias
    _check_troposphere(p, isa)
    if abs(p - ground.pressure) > MAX_GROUND_OFFSET_PA:
        raise DomainError(
            f"airborne pressure {p} Pa is more than {MAX_GROUND_OFFSET_PA} Pa "
            f"from ground pressure {ground.pressure} Pa"
        )
    offset = (ground.temperature / isa.lapse) * (1.0 - (p / ground.pressure) ** isa.inverse_exponent)
    return ground.station_geodetic_altitude + offset


def pressure_from_altitude(h: float, ref: GroundWeatherSample, isa: IsaConstants = ISA) -> float:
    """Static pressure at geodetic altitude ``h`` above the reference station's isobar."""
    ratio = 1.0 - isa.lapse * (h - ref.station_geodetic_altitude) / ref.temperature
    if not ratio > 0:
        raise UnsupportedLayerError(f"altitude {h} m lies above the troposphere model")
    return ref.pressure * ratio ** isa.exponent


def pressure_offset_to_altitude(dp: float, isa: IsaConstants = ISA) -> float:
    """Altitude error of a pressure offset at ISA MSL density."""
    return dp / (isa.rho0 * isa.g0)


def qnh_rounding_error(p: float, isa: IsaConstants = ISA) -> Tuple[float, float, float]:
    """Error of a QNH/QFE setting rounded down to the whole hPa.

    Returns:
        (rounded setting [Pa], pressure error [Pa], altitude error [m])
    """
    setting = math.floor(p / 100.0) * 100.0
    dp = p - setting
    return setting, dp, pressure_offset_to_altitude(dp, isa)


def qfe_pressure_altitude(p_air: float, qfe: float, isa: IsaConstants = ISA) -> float:
    """Height above the field isobar using the ISA MSL temperature."""
    _check_troposphere(p_air, isa)
    return (isa.t0 / isa.lapse) * (1.0 - (p_air / qfe) ** isa.inverse_exponent)


def calibrate_bias(
    airborne: Sequence[float],
    ground: Sequence[float],
    co_located: bool = True,
    height_offset: float = 0.0,
    ground_temperature: float = ISA.t0,
    epoch: float = 0.0,
    isa: IsaConstants = ISA,
) -> BaroCalibration:
    """Estimate the airborne barometer bias against the ground station.

    The vehicle rests at a known height relative to the station. When the two
    sensors are not co-located the ground series is first moved to the
    vehicle height with the barometric formula.

    Args:
        airborne: Airborne pressures [Pa], time aligned with ``ground``
        ground: Ground station pressures [Pa]
        co_located: Sensors share the same height
        height_offset: Vehicle height above the station [m]
        ground_temperature: Station temperature [K]
        epoch: Calibration time stamp
        isa: Atmosphere constants

    Returns:
        BaroCalibration with mean bias and its standard error

    Raises:
        ContractViolation: Series lengths differ
        InsufficientDataError: Fewer than 10 aligned samples
    """
    air = np.asarray(airborne, dtype=float)
    gnd = np.asarray(ground, dtype=float)
    if air.shape != gnd.shape:
        raise ContractViolation(f"series lengths differ: {air.size} airborne vs {gnd.size} ground")
    if air.size < MIN_CALIBRATION_SAMPLES:
        raise InsufficientDataError(
            f"need at least {MIN_CALIBRATION_SAMPLES} aligned samples, got {air.size}"
        )

    if not co_located and height_offset != 0.0:
        gnd = gnd * (1.0 - isa.lapse * height_offset / ground_temperature) ** isa.exponent

    diff = air - gnd
    bias = float(np.mean(diff))
    bias_sigma = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
    calibration = BaroCalibration(bias=bias, bias_sigma=bias_sigma, epoch=epoch, samples=int(diff.size))
    logger.info(f"Barometer bias calibrated: {bias:.2f} Pa +/- {bias_sigma:.2f} Pa over {diff.size} samples")
    return calibration


def format_calibration_report(cal: BaroCalibration, isa: IsaConstants = ISA) -> str:
    """Text report of a barometer calibration."""
    return "\n".join([
        "Barometer calibration",
        f"  epoch:            {cal.epoch:.3f} s",
        f"  samples:          {cal.samples}",
        f"  bias:             {cal.bias:.2f} Pa",
        f"  bias sigma:       {cal.bias_sigma:.3f} Pa",
        f"  altitude effect:  {pressure_offset_to_altitude(cal.bias, isa):.2f} m at ISA MSL",
    ])


class GroundWeatherFeed:
    """Time-indexed ground weather samples from the vertiport station."""

    def __init__(self, samples: Iterable[GroundWeatherSample] = (), max_age: float = 60.0):
        self.max_age = max_age
        self._samples: List[GroundWeatherSample] = []
        self._times: List[float] = []
        for sample in samples:
            self.add(sample)

    def __len__(self) -> int:
        return len(self._samples)

    def add(self, sample: GroundWeatherSample) -> None:
        """Insert a sample keeping time order."""
        i = bisect.bisect_right(self._times, sample.timestamp)
        self._times.insert(i, sample.timestamp)
        self._samples.insert(i, sample)

    def sample_at(self, t: float) -> GroundWeatherSample:
        """Latest sample not newer than ``t``.

        Raises:
            StaleCorrectionError: No sample yet, or the latest is older than max_age
        """
        i = bisect.bisect_right(self._times, t)
        if i == 0:
            raise StaleCorrectionError(f"no ground sample at or before t={t} s")
        sample = self._samples[i - 1]
        if t - sample.timestamp > self.max_age:
            raise StaleCorrectionError(
                f"latest ground sample is {t - sample.timestamp:.1f} s old (max {self.max_age} s)"
            )
        return sample


class BaroAltimeter:
    """Airborne pressure to geodetic altitude with the ground correction applied."""

    def __init__(
        self,
        feed: GroundWeatherFeed,
        calibration: Optional[BaroCalibration] = None,
        pressure_sigma: float = 6.0,
        isa: IsaConstants = ISA,
    ):
        self.feed = feed
        self.calibration = calibration
        self.pressure_sigma = pressure_sigma
        self.isa = isa

    @property
    def bias(self) -> float:
        return self.calibration.bias if self.calibration is not None else 0.0

    def altitude(self, p_air: float, t: float) -> Tuple[float, float]:
        """Altitude and its 1-sigma at time ``t``.

        Returns:
            (altitude [m], sigma [m]); sigma is the pressure noise over rho g
            at the local density
        """
        ground = self.feed.sample_at(t)
        h = ground_corrected_geodetic_altitude(
            p_air, ground, now=t, max_age=self.feed.max_age, bias=self.bias, isa=self.isa
        )
        temperature = ground.temperature - self.isa.lapse * (h - ground.station_geodetic_altitude)
        density = (p_air - self.bias) / (self.isa.gas_const * temperature)
        sigma = math.hypot(self.pressure_sigma, self._bias_sigma) / (density * self.isa.g0)
        return h, sigma

    @property
    def _bias_sigma(self) -> float:
        return self.calibration.bias_sigma if self.calibration is not None else 0.0
