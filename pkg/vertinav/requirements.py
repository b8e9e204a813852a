"""Navigation requirement derivation from vertiport geometry and risk level.

The horizontal chain sizes the FATO, takes the wingtip-to-safety-area margin
as the tolerated total system error at ``p_out``, subtracts the flight
technical error and turns the remaining navigation error sigma into an
accuracy (``k95`` sigma) and an alert limit (``k(IR)`` sigma). The vertical
chain does the same twice: once along the approach slope and once at the low
hover, and the stricter of the two is kept.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import erfc, erfcinv

from vertinav.errors import DomainError, InfeasibleBudgetError, InfeasibleGeometryError
from vertinav.models import (
    OperationUnit,
    RequirementReport,
    RequirementSet,
    RiskParams,
    VertiportGeometry,
)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

# Published reference rows echoed next to the derived approach requirement.
ENROUTE_REFERENCE_ROWS = [
    {
        "operation": "Enroute (SAIL III)",
        "accuracy": "HPE: 3-8, VPE: 4-13",
        "integrity_risk": "1 - 1E-4/h",
        "alert_limits": "HAL: 25-27 (fixed wing), 10-14 (rotary); VAL: 12-22 (fixed wing), 7-23 (rotary)",
        "tta": "1-3",
        "continuity": "1 - 1E-4/h",
        "availability": "99.99",
    },
    {
        "operation": "Enroute (SAIL IV)",
        "accuracy": "HPE: 3-8, VPE: 4-13",
        "integrity_risk": "1 - 1E-5/h",
        "alert_limits": "HAL: 25-27 (fixed wing), 10-14 (rotary); VAL: 12-22 (fixed wing), 7-23 (rotary)",
        "tta": "1-3",
        "continuity": "1 - 1E-4/h",
        "availability": "99.99",
    },
]

REQUIREMENT_COLUMNS = [
    "operation", "accuracy", "integrity_risk", "alert_limits", "tta", "continuity", "availability",
]


def integrity_risk_budget(sail: int, per: OperationUnit = OperationUnit.APPROACH_LANDING) -> float:
    """Integrity risk allowed per operation unit for a SAIL level.

    Args:
        sail: SAIL level, 1 to 6
        per: Exposure unit the budget applies to (flight hour or approach)

    Returns:
        10^-(sail+1) per ``per``

    Raises:
        DomainError: SAIL outside 1..6
    """
    if isinstance(sail, bool) or not isinstance(sail, (int, np.integer)) or not 1 <= sail <= 6:
        raise DomainError(f"SAIL must be an integer between 1 and 6, got {sail!r}")
    OperationUnit(per)
    return 10.0 ** (-(int(sail) + 1))


def fato_size(geom: VertiportGeometry) -> float:
    """FATO dimension: the larger of multiplier x D and the rejected take-off distance."""
    return max(geom.fato_multiplier * geom.d_max, geom.rtodv_max)


def wtsa_margin(fato: float, d: float) -> float:
    """Wingtip-to-safety-area margin ``(fato - d) / 2``.

    Raises:
        InfeasibleGeometryError: FATO smaller than the vehicle
    """
    if fato < d:
        raise InfeasibleGeometryError(f"FATO {fato} m is smaller than the vehicle D-value {d} m")
    return (fato - d) / 2.0


def gaussian_two_sided_k(p: float) -> float:
    """Two-sided Gaussian factor ``k`` with ``P(|X| > k) = p`` for unit X.

    ``k = sqrt(2) * erfcinv(p)``; the scipy inverse seeds a Newton polish on
    ``erfc``, with a bracketed bisection when the seed is unusable.

    Raises:
        DomainError: ``p`` outside (0, 1]
    """
    if isinstance(p, bool) or not (isinstance(p, (int, float, np.integer, np.floating)) and 0.0 < p <= 1.0):
        raise DomainError(f"probability must lie in (0, 1], got {p!r}")
    if p == 1.0:
        return 0.0

    k = SQRT2 * float(erfcinv(p))
    if not math.isfinite(k) or k < 0:
        k = _bisect_k(p)

    for _ in range(8):
        f = float(erfc(k / SQRT2)) - p
        slope = -math.sqrt(2.0 / math.pi) * math.exp(-0.5 * k * k)
        if slope == 0.0:
            break
        step = f / slope
        k -= step
        if abs(step) <= 1e-15 * max(k, 1.0):
            break
    return k


def _bisect_k(p: float) -> float:
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if erfc(mid / SQRT2) > p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


def sigma_tse(wtsa: float, p_out: float) -> float:
    """Total system error sigma that keeps the vehicle inside the margin with probability 1 - p_out."""
    if not wtsa > 0:
        raise DomainError(f"margin must be positive, got {wtsa}")
    return wtsa / gaussian_two_sided_k(p_out)


def sigma_nse(sigma_tse: float, sigma_fte: float) -> float:
    """Navigation error sigma left once FTE is removed from TSE (PDE neglected).

    Raises:
        InfeasibleBudgetError: FTE consumes the whole TSE budget
    """
    if sigma_fte < 0:
        raise DomainError(f"sigma_fte cannot be negative, got {sigma_fte}")
    if sigma_fte >= sigma_tse:
        raise InfeasibleBudgetError(
            f"infeasible budget: sigma_fte {sigma_fte} m leaves no navigation error "
            f"within sigma_tse {sigma_tse} m"
        )
    return math.sqrt(sigma_tse * sigma_tse - sigma_fte * sigma_fte)


def slope_angle(geom: VertiportGeometry) -> float:
    """Approach slope in degrees from the take-off hover down to the low hover over one D."""
    rise = geom.to_hover_height - geom.low_hover_height
    run = 2.0 * geom.d_max - geom.d_max
    return math.degrees(math.atan2(rise, run))


def sigma_nse_vertical(sigma_nse_h: float, slope: float) -> float:
    """Vertical navigation error sigma implied by a horizontal one along the slope (degrees)."""
    if not 0.0 < slope < 90.0:
        raise DomainError(f"slope must lie in (0, 90) degrees, got {slope}")
    return sigma_nse_h * math.tan(math.radians(slope))


def _slope_tangent(geom: VertiportGeometry) -> float:
    return (geom.to_hover_height - geom.low_hover_height) / geom.d_max


def alert_limit(sigma_nse: float, integrity_risk: float) -> float:
    """Alert limit ``k(IR) * sigma``."""
    if sigma_nse < 0:
        raise DomainError(f"sigma cannot be negative, got {sigma_nse}")
    return gaussian_two_sided_k(integrity_risk) * sigma_nse


def derive_requirement_set(
    geom: VertiportGeometry,
    risk: RiskParams,
    tta: float = 3.0,
    continuity: float = 1e-8,
    availability: float = 0.9999,
) -> RequirementSet:
    """Chain the horizontal, slope and low-hover derivations into one requirement set.

    Args:
        geom: Vertiport geometry (FATO multiplier selects the sizing variant)
        risk: Exceedance risk, integrity risk, FTE and 95 % factor
        tta: Time to alert echoed into the set [s]
        continuity: Continuity risk echoed into the set
        availability: Availability echoed into the set

    Returns:
        RequirementSet with the stricter vertical bound as ``val``/``vpe95``

    Raises:
        InfeasibleBudgetError: FTE at or above the TSE sigma of any chain
        InfeasibleGeometryError: FATO smaller than the vehicle
    """
    fato = fato_size(geom)
    wtsa = wtsa_margin(fato, geom.d_max)
    tse_h = sigma_tse(wtsa, risk.p_out)
    nse_h = sigma_nse(tse_h, risk.sigma_fte)
    hal = alert_limit(nse_h, risk.integrity_risk)

    slope = slope_angle(geom)
    # tan(slope) straight from the height/distance ratio
    nse_v_slope = nse_h * _slope_tangent(geom)
    val_slope = alert_limit(nse_v_slope, risk.integrity_risk)

    tse_hover = sigma_tse(geom.low_hover_height, risk.p_out)
    nse_v_hover = sigma_nse(tse_hover, risk.sigma_fte)
    val_hover = alert_limit(nse_v_hover, risk.integrity_risk)

    vpe_slope = risk.k95 * nse_v_slope
    vpe_hover = risk.k95 * nse_v_hover

    result = RequirementSet(
        hpe95=risk.k95 * nse_h,
        vpe95=min(vpe_slope, vpe_hover),
        hal=hal,
        val=min(val_slope, val_hover),
        integrity_risk=risk.integrity_risk,
        tta=tta,
        continuity=continuity,
        availability=availability,
        k95=risk.k95,
        fato=fato,
        wtsa=wtsa,
        sigma_tse=tse_h,
        sigma_nse_h=nse_h,
        slope_deg=slope,
        sigma_nse_v_slope=nse_v_slope,
        sigma_nse_v_hover=nse_v_hover,
        vpe95_slope=vpe_slope,
        vpe95_hover=vpe_hover,
        vpe95_hover_no_fte=risk.k95 * tse_hover,
        val_slope=val_slope,
        val_hover=val_hover,
    )
    logger.debug(
        f"Derived requirements for D={geom.d_max} m x{geom.fato_multiplier}: "
        f"HAL {result.hal:.3f} m, VAL {result.val:.3f} m"
    )
    return result


def derive_requirement_report(
    geom: VertiportGeometry,
    risk: RiskParams,
    multipliers: Iterable[float] = (1.5, 2.0),
    operation: str = "Precision Approach (SAIL V - Certified)",
    tta: float = 3.0,
    continuity: float = 1e-8,
    availability: float = 0.9999,
) -> RequirementReport:
    """Derive one set per FATO multiplier and summarise them as table ranges.

    Horizontal ranges span the multipliers. Vertical ranges span the
    low-hover and slope bounds of the smallest FATO.
    """
    multipliers = sorted(set(float(m) for m in multipliers))
    if not multipliers:
        raise DomainError("at least one FATO multiplier is required")

    sets: Dict[str, RequirementSet] = {}
    for m in multipliers:
        variant = geom.model_copy(update={"fato_multiplier": m})
        sets[_multiplier_key(m)] = derive_requirement_set(variant, risk, tta, continuity, availability)

    base = sets[_multiplier_key(multipliers[0])]
    hpe = [s.hpe95 for s in sets.values()]
    hal = [s.hal for s in sets.values()]
    vpe_pair = sorted((base.vpe95_hover, base.vpe95_slope))
    val_pair = sorted((base.val_hover, base.val_slope))

    report = RequirementReport(
        operation=operation,
        sets=sets,
        hpe95_range=(min(hpe), max(hpe)),
        vpe95_range=(vpe_pair[0], vpe_pair[1]),
        hal_range=(min(hal), max(hal)),
        val_range=(val_pair[0], val_pair[1]),
        integrity_risk=risk.integrity_risk,
        tta=tta,
        continuity=continuity,
        availability=availability,
    )
    logger.info(
        f"Requirement report: HAL {report.hal_range[0]:.2f}-{report.hal_range[1]:.2f} m, "
        f"VAL {report.val_range[0]:.2f}-{report.val_range[1]:.2f} m"
    )
    return report


def _multiplier_key(m: float) -> str:
    return f"{m:g}D"


def requirement_rows(report: RequirementReport, include_enroute: bool = False) -> List[Dict[str, str]]:
    """Table rows (operation, accuracy, IR, HAL/VAL, TTA, continuity, availability)."""
    rows: List[Dict[str, str]] = []
    if include_enroute:
        rows.extend(dict(row) for row in ENROUTE_REFERENCE_ROWS)
    rows.append({
        "operation": report.operation,
        "accuracy": (
            f"HPE: {_fmt_range(report.hpe95_range)}, VPE: {_fmt_range(report.vpe95_range)}"
        ),
        "integrity_risk": f"1 - {report.integrity_risk:.0E}/op",
        "alert_limits": (
            f"HAL: {_fmt_range(report.hal_range)}; VAL: {_fmt_range(report.val_range)}"
        ),
        "tta": f"< {report.tta:g}",
        "continuity": f"1 - {report.continuity:.0E}/op",
        "availability": f"> {report.availability * 100:g}",
    })
    return rows


def _fmt_range(bounds: Tuple[float, float], digits: int = 2) -> str:
    lo, hi = bounds
    return f"{lo:.{digits}f}-{hi:.{digits}f}"


def format_requirement_table(report: RequirementReport, include_enroute: bool = False) -> str:
    """Render the requirement report as a text table with per-multiplier detail."""
    lines = [
        "Navigation requirements",
        "=" * 23,
    ]
    for row in requirement_rows(report, include_enroute):
        lines.append(f"{row['operation']}")
        lines.append(f"  Accuracy (95%) [m]: {row['accuracy']}")
        lines.append(f"  Integrity risk:     {row['integrity_risk']}")
        lines.append(f"  Alert limits [m]:   {row['alert_limits']}")
        lines.append(f"  TTA [s]:            {row['tta']}")
        lines.append(f"  Continuity:         {row['continuity']}")
        lines.append(f"  Availability [%]:   {row['availability']}")

    lines.append("")
    lines.append("Derivation detail")
    for key, s in report.sets.items():
        lines.append(
            f"  FATO {key}: FATO {s.fato:.2f} m, WTSA {s.wtsa:.2f} m, "
            f"sigma_TSE {s.sigma_tse:.4f} m, sigma_NSE {s.sigma_nse_h:.4f} m, "
            f"HPE95 {s.hpe95:.3f} m, HAL {s.hal:.3f} m"
        )
        lines.append(
            f"    slope {s.slope_deg:.2f} deg: sigma_v {s.sigma_nse_v_slope:.4f} m, "
            f"VPE95 {s.vpe95_slope:.3f} m, VAL {s.val_slope:.3f} m"
        )
        lines.append(
            f"    low hover: sigma_v {s.sigma_nse_v_hover:.4f} m, VPE95 {s.vpe95_hover:.3f} m "
            f"(without FTE {s.vpe95_hover_no_fte:.3f} m), VAL {s.val_hover:.3f} m"
        )
    return "\n".join(lines)


def requirement_set_for(config_requirements, multiplier: Optional[float] = None) -> RequirementSet:
    """Requirement set used for alert-limit checks: the smallest configured FATO."""
    m = multiplier if multiplier is not None else min(config_requirements.multipliers)
    geom = config_requirements.geometry.model_copy(update={"fato_multiplier": m})
    return derive_requirement_set(
        geom,
        config_requirements.risk,
        config_requirements.tta,
        config_requirements.continuity,
        config_requirements.availability,
    )
