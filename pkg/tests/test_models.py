"""Unit tests for Pydantic models."""

import pytest
from pydantic import ValidationError

from vertinav.models import (
    BaroCalibration,
    CliInvocation,
    FaultInjection,
    FaultTreeNode,
    FaultType,
    GroundWeatherSample,
    IntegrityConfig,
    IntegrityState,
    MarkerSpec,
    MonteCarloReport,
    NodeKind,
    RequirementsConfig,
    RequirementSet,
    RiskParams,
    SatelliteSpec,
    ScenarioConfig,
    SensorNoise,
    VertinavConfig,
    VertiportGeometry,
    VisionConfig,
)
from vertinav.requirements import gaussian_two_sided_k


class TestEnums:
    """Tests for string enums."""

    def test_fault_types(self):
        """Test fault type wire names."""
        assert FaultType.GNSS_BIAS.value == "gnss-bias"
        assert FaultType.RFI_NARROWBAND.value == "rfi-narrowband"
        assert len(FaultType) == 7

    def test_integrity_states(self):
        """Test integrity state values."""
        assert {s.value for s in IntegrityState} == {"available", "alert", "unavailable"}


class TestVertiportGeometry:
    """Tests for VertiportGeometry model."""

    def test_defaults(self):
        """Test default sizing inputs."""
        geom = VertiportGeometry(d_max=15.24)
        assert geom.fato_multiplier == 1.5
        assert geom.to_hover_height == 30.5
        assert geom.low_hover_height == 3.0

    @pytest.mark.parametrize("d_max", [0.0, -1.0])
    def test_d_max_positive(self, d_max):
        """Test the D-value must be positive."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=d_max)
        assert "d_max must be positive" in str(exc.value)

    def test_d_max_required(self):
        """Test the D-value has no default."""
        with pytest.raises(ValidationError):
            VertiportGeometry()

    def test_negative_rtodv(self):
        """Test RTODV cannot be negative."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=15.24, rtodv_max=-1.0)
        assert "rtodv_max cannot be negative" in str(exc.value)

    def test_small_multiplier(self):
        """Test FATO multipliers below 1.5 are rejected."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=15.24, fato_multiplier=1.2)
        assert "at least 1.5" in str(exc.value)

    def test_hover_order(self):
        """Test the take-off hover must sit above the low hover."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=15.24, to_hover_height=3.0, low_hover_height=3.0)
        assert "to_hover_height must exceed low_hover_height" in str(exc.value)

    def test_negative_low_hover(self):
        """Test the low hover cannot be below ground."""
        with pytest.raises(ValidationError) as exc:
            VertiportGeometry(d_max=15.24, low_hover_height=-0.5)
        assert "low_hover_height cannot be negative" in str(exc.value)


class TestRiskParams:
    """Tests for RiskParams model."""

    @pytest.mark.parametrize("field", ["p_out", "integrity_risk"])
    @pytest.mark.parametrize("value", [0.0, 1.0, -1e-7])
    def test_probability_bounds(self, field, value):
        """Test probabilities must lie strictly inside (0, 1)."""
        with pytest.raises(ValidationError) as exc:
            RiskParams(**{field: value})
        assert "probability must lie in (0, 1)" in str(exc.value)

    def test_zero_fte_allowed(self):
        """Test a perfect flight director is accepted."""
        assert RiskParams(sigma_fte=0.0).sigma_fte == 0.0

    def test_negative_fte(self):
        """Test FTE cannot be negative."""
        with pytest.raises(ValidationError) as exc:
            RiskParams(sigma_fte=-0.1)
        assert "sigma_fte cannot be negative" in str(exc.value)

    def test_k95_positive(self):
        """Test the accuracy factor must be positive."""
        with pytest.raises(ValidationError) as exc:
            RiskParams(k95=0.0)
        assert "k95 must be positive" in str(exc.value)


class TestRequirementSet:
    """Tests for RequirementSet model."""

    def _fields(self, hal):
        return dict(
            hpe95=1.5, vpe95=1.1, hal=hal, val=3.0, integrity_risk=1e-7,
            tta=3.0, continuity=1e-8, availability=0.9999,
        )

    def test_consistent_chain(self):
        """Test a HAL derived from the same sigma as HPE95 is accepted."""
        hal = 1.5 / 2.0 * gaussian_two_sided_k(1e-7)
        req = RequirementSet(**self._fields(hal))
        assert req.hal == pytest.approx(hal)

    def test_inconsistent_chain(self):
        """Test a HAL off the accuracy chain is rejected."""
        with pytest.raises(ValidationError) as exc:
            RequirementSet(**self._fields(10.0))
        assert "inconsistent" in str(exc.value)

    def test_frozen(self):
        """Test requirement sets are immutable."""
        req = RequirementSet(**self._fields(1.5 / 2.0 * gaussian_two_sided_k(1e-7)))
        with pytest.raises(ValidationError):
            req.hal = 1.0


class TestRequirementsConfig:
    """Tests for RequirementsConfig model."""

    def test_default_multipliers(self):
        """Test the two FATO sizing choices are the default."""
        cfg = RequirementsConfig(geometry=VertiportGeometry(d_max=15.24))
        assert cfg.multipliers == [1.5, 2.0]
        assert cfg.tta == 3.0

    def test_empty_multipliers(self):
        """Test at least one multiplier is needed."""
        with pytest.raises(ValidationError) as exc:
            RequirementsConfig(geometry={"d_max": 15.24}, multipliers=[])
        assert "multipliers cannot be empty" in str(exc.value)

    def test_small_multiplier(self):
        """Test multipliers below 1.5 are rejected."""
        with pytest.raises(ValidationError) as exc:
            RequirementsConfig(geometry={"d_max": 15.24}, multipliers=[1.0, 2.0])
        assert "at least 1.5" in str(exc.value)


class TestGroundWeatherSample:
    """Tests for GroundWeatherSample model."""

    def test_valid_sample(self):
        """Test a standard-atmosphere reading."""
        s = GroundWeatherSample(pressure=101325.0, temperature=288.15, station_geodetic_altitude=190.0)
        assert s.timestamp == 0.0

    @pytest.mark.parametrize("pressure", [40000.0, 120000.0])
    def test_implausible_pressure(self, pressure):
        """Test pressures outside the surface range are rejected."""
        with pytest.raises(ValidationError) as exc:
            GroundWeatherSample(pressure=pressure, temperature=288.15)
        assert "pressure must lie between" in str(exc.value)

    @pytest.mark.parametrize("temperature", [150.0, 340.0])
    def test_implausible_temperature(self, temperature):
        """Test temperatures outside the surface range are rejected."""
        with pytest.raises(ValidationError) as exc:
            GroundWeatherSample(pressure=101325.0, temperature=temperature)
        assert "temperature must lie between" in str(exc.value)


class TestBaroCalibration:
    """Tests for BaroCalibration model."""

    def test_large_bias(self):
        """Test implausible offsets are rejected."""
        with pytest.raises(ValidationError) as exc:
            BaroCalibration(bias=2500.0, bias_sigma=1.0)
        assert "below 2000 Pa" in str(exc.value)

    def test_negative_sigma(self):
        """Test the standard error cannot be negative."""
        with pytest.raises(ValidationError):
            BaroCalibration(bias=10.0, bias_sigma=-1.0)


class TestFaultTreeNode:
    """Tests for FaultTreeNode model."""

    def test_leaf(self):
        """Test a leaf with a probability."""
        leaf = FaultTreeNode(name="Sensor failure", kind=NodeKind.LEAF, probability=1e-5)
        assert leaf.authoritative
        assert leaf.children == []

    def test_leaf_without_probability(self):
        """Test a leaf needs a probability."""
        with pytest.raises(ValidationError) as exc:
            FaultTreeNode(name="Sensor failure", kind="leaf")
        assert "leaf 'Sensor failure' needs a probability" in str(exc.value)

    def test_leaf_probability_range(self):
        """Test leaf probabilities must lie in [0, 1)."""
        with pytest.raises(ValidationError) as exc:
            FaultTreeNode(name="x", kind="leaf", probability=1.0)
        assert "[0, 1)" in str(exc.value)

    def test_leaf_with_children(self):
        """Test a leaf cannot have children."""
        child = FaultTreeNode(name="c", kind="leaf", probability=0.1)
        with pytest.raises(ValidationError) as exc:
            FaultTreeNode(name="x", kind="leaf", probability=0.1, children=[child])
        assert "cannot have children" in str(exc.value)

    def test_empty_gate(self):
        """Test a gate needs children."""
        with pytest.raises(ValidationError) as exc:
            FaultTreeNode(name="Top", kind="or-gate")
        assert "gate 'Top' needs at least one child" in str(exc.value)

    def test_gate_with_probability(self):
        """Test a gate cannot carry its own probability."""
        child = FaultTreeNode(name="c", kind="leaf", probability=0.1)
        with pytest.raises(ValidationError) as exc:
            FaultTreeNode(name="Top", kind="or-gate", probability=0.1, children=[child])
        assert "cannot carry its own probability" in str(exc.value)

    def test_nested_from_mapping(self):
        """Test nested trees validate from plain dictionaries."""
        tree = FaultTreeNode.model_validate({
            "name": "Top", "kind": "or-gate",
            "children": [
                {"name": "a", "kind": "leaf", "probability": 1e-6},
                {"name": "b", "kind": "or-gate", "children": [
                    {"name": "c", "kind": "leaf", "probability": 2e-6, "unit": "per-op"},
                ]},
            ],
        })
        assert tree.children[1].children[0].unit.value == "per-op"


class TestSatelliteSpec:
    """Tests for SatelliteSpec model."""

    def test_azel(self):
        """Test a satellite placed by azimuth and elevation."""
        sat = SatelliteSpec(sat_id="G01", azimuth_deg=45.0, elevation_deg=60.0)
        assert sat.ecef is None

    def test_ecef(self):
        """Test a satellite placed by ECEF position."""
        sat = SatelliteSpec(sat_id="G01", ecef=[1.5e7, 1.0e7, 1.8e7])
        assert len(sat.ecef) == 3

    def test_neither(self):
        """Test a satellite needs a position."""
        with pytest.raises(ValidationError) as exc:
            SatelliteSpec(sat_id="G01")
        assert "give either azimuth/elevation or ecef" in str(exc.value)

    def test_both(self):
        """Test both placements at once are ambiguous."""
        with pytest.raises(ValidationError) as exc:
            SatelliteSpec(sat_id="G01", azimuth_deg=0.0, elevation_deg=45.0, ecef=[1.0, 2.0, 3.0])
        assert "give either azimuth/elevation or ecef" in str(exc.value)

    def test_short_ecef(self):
        """Test ECEF positions need three coordinates."""
        with pytest.raises(ValidationError) as exc:
            SatelliteSpec(sat_id="G01", ecef=[1.0, 2.0])
        assert "three coordinates" in str(exc.value)

    @pytest.mark.parametrize("elevation", [0.0, -5.0, 91.0])
    def test_elevation_range(self, elevation):
        """Test elevations outside (0, 90] are rejected."""
        with pytest.raises(ValidationError) as exc:
            SatelliteSpec(sat_id="G01", azimuth_deg=0.0, elevation_deg=elevation)
        assert "elevation must lie in (0, 90]" in str(exc.value)


class TestScenarioModels:
    """Tests for scenario, marker and fault models."""

    def test_marker_side(self):
        """Test marker sides must be positive."""
        with pytest.raises(ValidationError):
            MarkerSpec(id=0, side_m=0.0, cx=0.0, cy=0.0)

    def test_bias_triplet(self):
        """Test biases need three components."""
        with pytest.raises(ValidationError) as exc:
            SensorNoise(accel_bias=[0.0, 0.0])
        assert "three components" in str(exc.value)

    def test_vertiport_triplet(self):
        """Test vertiports are ENU triplets."""
        with pytest.raises(ValidationError) as exc:
            ScenarioConfig(vertiport_b=[60.0, 0.0])
        assert "three ENU coordinates" in str(exc.value)

    def test_negative_seed(self):
        """Test seeds cannot be negative."""
        with pytest.raises(ValidationError):
            ScenarioConfig(seed=-1)

    def test_fault_from_wire_name(self):
        """Test faults parse from their wire names."""
        fault = FaultInjection(type="baro-bias-step", start=40.0, magnitude=195.0)
        assert fault.type == FaultType.BARO_BIAS_STEP
        assert fault.duration is None

    @pytest.mark.parametrize("update", [
        {"axis": 3},
        {"corner": 4},
        {"duration": 0.0},
        {"start": -1.0},
    ])
    def test_fault_bounds(self, update):
        """Test fault fields are range-checked."""
        fields = {"type": "imu-bias-step", "start": 10.0}
        fields.update(update)
        with pytest.raises(ValidationError):
            FaultInjection(**fields)

    def test_unknown_fault(self):
        """Test unknown fault types are rejected."""
        with pytest.raises(ValidationError):
            FaultInjection(type="solar-flare", start=0.0)


class TestVisionConfig:
    """Tests for VisionConfig model."""

    def test_intrinsic_sigma_length(self):
        """Test four intrinsic sigmas are needed."""
        with pytest.raises(ValidationError) as exc:
            VisionConfig(intrinsic_sigma=[1.0, 1.0])
        assert "four non-negative values" in str(exc.value)

    def test_principal_point_outside(self):
        """Test the principal point must lie inside the image."""
        with pytest.raises(ValidationError) as exc:
            VisionConfig(cx=700.0)
        assert "principal point" in str(exc.value)


class TestConfigDocument:
    """Tests for the top-level configuration and report models."""

    def test_default_weights(self):
        """Test the budget is split evenly across the five contributors."""
        weights = IntegrityConfig().weights
        assert set(weights) == {"nominal_fusion", "gnss", "baro", "ins", "vision"}
        assert sum(weights.values()) == pytest.approx(1.0)

    def test_requirements_required(self):
        """Test a document without requirements is rejected."""
        with pytest.raises(ValidationError):
            VertinavConfig()

    def test_schema_version(self):
        """Test only schema version 1 is accepted."""
        with pytest.raises(ValidationError):
            VertinavConfig(schema_version=2, requirements={"geometry": {"d_max": 15.24}})

    def test_monte_carlo_counts(self):
        """Test violating runs cannot outnumber runs."""
        with pytest.raises(ValidationError) as exc:
            MonteCarloReport(runs=2, hpe95=1.0, vpe95=1.0, pl_violations=3, alerts=0, availability=1.0)
        assert "pl_violations cannot exceed runs" in str(exc.value)

    def test_cli_subcommand(self):
        """Test unknown subcommands are rejected."""
        assert CliInvocation(subcommand="simulate").paths == []
        with pytest.raises(ValidationError):
            CliInvocation(subcommand="fly")
