"""Unit tests for requirement derivation."""

import math

import pytest
from pydantic import ValidationError

from vertinav.errors import DomainError, InfeasibleBudgetError, InfeasibleGeometryError
from vertinav.models import OperationUnit, RiskParams, VertiportGeometry
from vertinav.requirements import (
    alert_limit,
    derive_requirement_report,
    derive_requirement_set,
    fato_size,
    format_requirement_table,
    gaussian_two_sided_k,
    integrity_risk_budget,
    requirement_rows,
    sigma_nse,
    sigma_nse_vertical,
    sigma_tse,
    slope_angle,
    wtsa_margin,
)


class TestIntegrityRiskBudget:
    """Tests for the SAIL integrity risk budget."""

    @pytest.mark.parametrize("sail,expected", [(1, 1e-2), (3, 1e-4), (5, 1e-6), (6, 1e-7)])
    def test_budget_per_level(self, sail, expected):
        """Test 10^-(SAIL+1) per level."""
        assert integrity_risk_budget(sail) == pytest.approx(expected, rel=1e-12)

    def test_budget_per_flight_hour(self):
        """Test the budget does not depend on the exposure unit label."""
        assert integrity_risk_budget(5, OperationUnit.FLIGHT_HOUR) == integrity_risk_budget(5)

    @pytest.mark.parametrize("sail", [0, 7, 2.5, True, "5"])
    def test_out_of_range_sail(self, sail):
        """Test SAIL outside 1..6 is rejected."""
        with pytest.raises(DomainError) as exc:
            integrity_risk_budget(sail)
        assert "SAIL" in str(exc.value)


class TestGaussianFactor:
    """Tests for the two-sided Gaussian factor."""

    def test_reference_values(self):
        """Test k at the outage and integrity probabilities."""
        assert gaussian_two_sided_k(1e-6) == pytest.approx(4.891638, abs=1e-6)
        assert gaussian_two_sided_k(1e-7) == pytest.approx(5.326724, abs=1e-6)
        assert gaussian_two_sided_k(0.05) == pytest.approx(1.959964, abs=1e-6)

    def test_tail_probability_round_trip(self):
        """Test erfc(k/sqrt(2)) gives back p."""
        from scipy.special import erfc

        for p in (0.3, 1e-3, 1e-9, 1e-15):
            k = gaussian_two_sided_k(p)
            assert erfc(k / math.sqrt(2)) == pytest.approx(p, rel=1e-10)

    def test_probability_one(self):
        """Test p = 1 gives zero."""
        assert gaussian_two_sided_k(1.0) == 0.0

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
    def test_invalid_probability(self, p):
        """Test probabilities outside (0, 1] are rejected."""
        with pytest.raises(DomainError):
            gaussian_two_sided_k(p)

    @pytest.mark.parametrize("p", [True, False, "0.5"])
    def test_non_numeric_probability(self, p):
        """Test booleans and strings are not taken as probabilities."""
        with pytest.raises(DomainError):
            gaussian_two_sided_k(p)


class TestHorizontalChain:
    """Tests for FATO sizing, margins and sigma budgets."""

    def test_fato_and_margin(self, reference_geometry):
        """Test FATO 1.5 D and its wingtip margin."""
        fato = fato_size(reference_geometry)
        assert fato == pytest.approx(22.86)
        assert wtsa_margin(fato, reference_geometry.d_max) == pytest.approx(3.81)

    def test_rejected_take_off_distance_dominates(self):
        """Test a long RTODV sets the FATO size."""
        geom = VertiportGeometry(d_max=15.24, rtodv_max=40.0)
        assert fato_size(geom) == 40.0

    def test_fato_smaller_than_vehicle(self):
        """Test a FATO below D is infeasible."""
        with pytest.raises(InfeasibleGeometryError):
            wtsa_margin(10.0, 15.24)

    def test_nse_sigma(self):
        """Test TSE and NSE sigma for the minimum FATO."""
        tse = sigma_tse(3.81, 1e-6)
        assert tse == pytest.approx(0.77888, abs=1e-5)
        assert sigma_nse(tse, 0.25) == pytest.approx(0.7377, abs=5e-4)

    def test_fte_consumes_budget(self):
        """Test FTE at the TSE sigma is an infeasible budget."""
        with pytest.raises(InfeasibleBudgetError) as exc:
            sigma_nse(0.5, 0.5)
        assert "infeasible budget" in str(exc.value)

    def test_negative_margin(self):
        """Test a non-positive margin is rejected."""
        with pytest.raises(DomainError):
            sigma_tse(0.0, 1e-6)

    def test_alert_limit_scales_with_factor(self):
        """Test the alert limit is the two-sided factor times the sigma."""
        for ir in (1e-5, 1e-7, 1e-9):
            assert alert_limit(0.7377, ir) == pytest.approx(0.7377 * gaussian_two_sided_k(ir))
        assert alert_limit(0.7377, 1e-7) == pytest.approx(0.7377 * 5.326724, rel=1e-6)

    def test_negative_sigma_alert_limit(self):
        """Test a negative sigma is rejected."""
        with pytest.raises(DomainError):
            alert_limit(-1.0, 1e-7)


class TestSlope:
    """Tests for the approach slope."""

    def test_slope_angle(self, reference_geometry):
        """Test the 61 degree funnel slope."""
        assert slope_angle(reference_geometry) == pytest.approx(61.0, abs=0.1)

    def test_vertical_sigma(self):
        """Test vertical sigma along the slope."""
        assert sigma_nse_vertical(0.73767, 61.0) == pytest.approx(1.33, abs=0.01)

    @pytest.mark.parametrize("slope", [0.0, 90.0, 120.0])
    def test_slope_domain(self, slope):
        """Test slopes outside (0, 90) are rejected."""
        with pytest.raises(DomainError):
            sigma_nse_vertical(1.0, slope)


class TestDeriveRequirementSet:
    """Tests for the full requirement chain."""

    def test_minimum_fato_golden_numbers(self, reference_geometry, reference_risk):
        """Test the reference approach values for a 1.5 D FATO."""
        req = derive_requirement_set(reference_geometry, reference_risk)
        assert req.sigma_nse_h == pytest.approx(0.74, abs=0.005)
        assert req.hal == pytest.approx(3.929, abs=0.005)
        assert req.hpe95 == pytest.approx(1.475, abs=0.005)
        assert req.slope_deg == pytest.approx(61.0, abs=0.1)
        assert req.sigma_nse_v_slope == pytest.approx(1.3311, abs=0.001)
        assert req.val_slope == pytest.approx(7.09, abs=0.01)
        assert req.vpe95_slope == pytest.approx(2.662, abs=0.005)
        assert req.val_hover == pytest.approx(2.983, abs=0.005)
        assert req.vpe95_hover == pytest.approx(1.12, abs=0.005)
        assert req.vpe95_hover_no_fte == pytest.approx(1.2266, abs=0.001)

    def test_stricter_vertical_bound_kept(self, reference_geometry, reference_risk):
        """Test VAL and VPE95 take the low-hover bound."""
        req = derive_requirement_set(reference_geometry, reference_risk)
        assert req.val == req.val_hover
        assert req.vpe95 == req.vpe95_hover

    def test_two_d_fato(self, reference_risk):
        """Test the larger FATO relaxes HAL to about 8.2 m."""
        geom = VertiportGeometry(d_max=15.24, fato_multiplier=2.0)
        req = derive_requirement_set(geom, reference_risk)
        assert req.hal == pytest.approx(8.19, abs=0.01)
        assert req.hpe95 == pytest.approx(3.075, abs=0.005)

    def test_alert_limit_consistency(self, reference_geometry, reference_risk):
        """Test HAL equals HPE95 / k95 * k(IR)."""
        req = derive_requirement_set(reference_geometry, reference_risk)
        assert req.hal == pytest.approx(req.hpe95 / req.k95 * gaussian_two_sided_k(req.integrity_risk))

    def test_hal_grows_as_risk_tightens(self, reference_geometry, reference_risk):
        """Test a smaller integrity risk always gives a larger HAL."""
        risks = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9]
        hals = [
            derive_requirement_set(reference_geometry, reference_risk.model_copy(update={"integrity_risk": ir})).hal
            for ir in risks
        ]
        assert all(b > a for a, b in zip(hals, hals[1:]))
        for ir, hal in zip(risks, hals):
            req = derive_requirement_set(reference_geometry, reference_risk.model_copy(update={"integrity_risk": ir}))
            assert hal == pytest.approx(req.hpe95 / req.k95 * gaussian_two_sided_k(ir), rel=1e-12)

    def test_infeasible_fte(self, reference_geometry):
        """Test an FTE larger than the TSE sigma fails the chain."""
        with pytest.raises(InfeasibleBudgetError):
            derive_requirement_set(reference_geometry, RiskParams(sigma_fte=1.0))

    def test_echoed_fields(self, reference_geometry, reference_risk):
        """Test TTA, continuity and availability are echoed."""
        req = derive_requirement_set(reference_geometry, reference_risk, tta=2.0, continuity=1e-7, availability=0.999)
        assert (req.tta, req.continuity, req.availability) == (2.0, 1e-7, 0.999)


class TestRequirementReport:
    """Tests for the multi-FATO report and its table."""

    def test_ranges(self, reference_geometry, reference_risk):
        """Test table ranges across FATO sizes and vertical bounds."""
        report = derive_requirement_report(reference_geometry, reference_risk)
        assert set(report.sets) == {"1.5D", "2D"}
        assert report.hal_range[0] == pytest.approx(3.93, abs=0.01)
        assert report.hal_range[1] == pytest.approx(8.2, abs=0.05)
        assert report.val_range[0] == pytest.approx(2.98, abs=0.01)
        assert report.val_range[1] == pytest.approx(7.1, abs=0.05)

    def test_table_text(self, reference_geometry, reference_risk):
        """Test the rendered table lists the alert limits."""
        text = format_requirement_table(derive_requirement_report(reference_geometry, reference_risk))
        assert "HAL: 3.93-8.19" in text
        assert "VAL: 2.98-7.09" in text
        assert "Precision Approach" in text

    def test_enroute_rows(self, reference_geometry, reference_risk):
        """Test the reference enroute rows come first when requested."""
        rows = requirement_rows(derive_requirement_report(reference_geometry, reference_risk), include_enroute=True)
        assert len(rows) == 3
        assert rows[0]["operation"].startswith("Enroute")

    def test_empty_multipliers(self, reference_geometry, reference_risk):
        """Test an empty multiplier list is rejected."""
        with pytest.raises(DomainError):
            derive_requirement_report(reference_geometry, reference_risk, multipliers=[])


class TestGeometryValidation:
    """Tests for vertiport geometry validation."""

    def test_negative_d_max(self):
        """Test non-positive D-value is rejected."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=0.0)
        assert "d_max must be positive" in str(exc.value)

    def test_small_multiplier(self):
        """Test FATO multipliers below 1.5 are rejected."""
        with pytest.raises(ValidationError):
            VertiportGeometry(d_max=15.24, fato_multiplier=1.2)

    def test_hover_heights_order(self):
        """Test the take-off hover must sit above the low hover."""
        with pytest.raises(ValidationError):
            VertiportGeometry(d_max=15.24, to_hover_height=3.0, low_hover_height=3.0)
