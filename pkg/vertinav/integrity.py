"""Fault-tree evaluation, integrity budget allocation and alert-limit checks."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from vertinav.errors import ConfigError, ContractViolation
from vertinav.gnss import protection_levels
from vertinav.models import (
    FaultTreeNode,
    IntegrityConfig,
    IntegrityState,
    IntegrityStatus,
    NodeKind,
    OrGateMode,
    RateUnit,
    RequirementSet,
)

logger = logging.getLogger(__name__)

SHIPPED_TREES_PATH = Path(__file__).with_name("fault_trees.json")
DISCREPANCY_TOLERANCE = 0.01
WEIGHT_TOLERANCE = 1e-12


class NodeResult(BaseModel):
    """Evaluated value of one fault-tree node."""
    name: str
    depth: int
    kind: NodeKind
    probability: float
    unit: RateUnit
    reported_probability: Optional[float] = None
    authoritative: bool = True


class FaultTreeReport(BaseModel):
    """Evaluated tree with per-node values and review notes."""
    root: str
    mode: OrGateMode
    unit: RateUnit
    top_probability: float
    nodes: List[NodeResult] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


def _tree_unit(root: FaultTreeNode) -> RateUnit:
    units = set()

    def walk(node: FaultTreeNode) -> None:
        units.add(node.unit)
        for child in node.children:
            walk(child)

    walk(root)
    if len(units) > 1:
        raise ContractViolation(
            f"fault tree '{root.name}' mixes units: {sorted(u.value for u in units)}"
        )
    return units.pop()


def _combine(values: List[float], mode: OrGateMode) -> float:
    if mode == OrGateMode.SUM:
        return math.fsum(values)
    return 1.0 - math.prod(1.0 - v for v in values)


def _evaluate(node: FaultTreeNode, mode: OrGateMode) -> float:
    if node.kind == NodeKind.LEAF:
        return float(node.probability)
    return _combine([_evaluate(c, mode) for c in node.children], mode)


def evaluate_fault_tree(root: FaultTreeNode, mode: OrGateMode = OrGateMode.SUM) -> float:
    """Top-event probability of an OR-gate tree.

    Sum mode is the rare-event approximation; complement-product gives
    ``1 - prod(1 - p)`` at every gate.

    Raises:
        ContractViolation: Units differ within the tree
    """
    _tree_unit(root)
    return _evaluate(root, OrGateMode(mode))


def evaluate_with_report(root: FaultTreeNode, mode: OrGateMode = OrGateMode.SUM) -> FaultTreeReport:
    """Evaluate a tree and collect per-node values and discrepancy notes."""
    unit = _tree_unit(root)
    mode = OrGateMode(mode)
    nodes: List[NodeResult] = []
    notes: List[str] = []

    def walk(node: FaultTreeNode, depth: int) -> float:
        index = len(nodes)
        nodes.append(None)
        if node.kind == NodeKind.LEAF:
            value = float(node.probability)
            if not node.authoritative:
                notes.append(f"'{node.name}' uses a placeholder value ({value:.3g}/{unit.value})")
        else:
            value = _combine([walk(c, depth + 1) for c in node.children], mode)
            reported = node.reported_probability
            if reported is not None and abs(value - reported) > DISCREPANCY_TOLERANCE * reported:
                notes.append(
                    f"'{node.name}' computes to {value:.3g}/{unit.value} "
                    f"but is reported as {reported:.3g}/{unit.value}"
                )
                logger.warning(f"Fault tree discrepancy at '{node.name}': {value:.3g} vs reported {reported:.3g}")
        nodes[index] = NodeResult(
            name=node.name,
            depth=depth,
            kind=node.kind,
            probability=value,
            unit=node.unit,
            reported_probability=node.reported_probability,
            authoritative=node.authoritative,
        )
        return value

    top = walk(root, 0)
    return FaultTreeReport(root=root.name, mode=mode, unit=unit, top_probability=top, nodes=nodes, notes=notes)


def format_fault_tree_report(report: FaultTreeReport) -> str:
    lines = [f"{report.root} ({report.mode.value}): {report.top_probability:.3g}/{report.unit.value}"]
    for node in report.nodes[1:]:
        marker = "*" if not node.authoritative else " "
        lines.append(f"{'  ' * node.depth}{marker}{node.name}: {node.probability:.3g}")
    if report.notes:
        lines.append("Notes:")
        lines.extend(f"  - {note}" for note in report.notes)
    return "\n".join(lines)


def _resolve(record: Any, library: Mapping[str, Any], seen: tuple = ()) -> Dict[str, Any]:
    if not isinstance(record, Mapping):
        raise ConfigError(f"fault tree record must be an object, got {type(record).__name__}")
    if "$ref" in record:
        name = record["$ref"]
        if name in seen:
            raise ConfigError(f"fault tree reference cycle through '{name}'")
        if name not in library:
            raise ConfigError(f"unknown fault tree reference '{name}'")
        return _resolve(library[name], library, seen + (name,))
    resolved = dict(record)
    resolved["children"] = [_resolve(c, library, seen) for c in record.get("children", [])]
    return resolved


def load_fault_tree(mapping: Mapping[str, Any], library: Optional[Mapping[str, Any]] = None) -> FaultTreeNode:
    """Build a tree from nested name/kind/probability records.

    Records of the form ``{"$ref": "name"}`` are replaced by the named entry
    of ``library``.

    Raises:
        ConfigError: Malformed record or invalid tree shape
    """
    resolved = _resolve(mapping, library or {})
    try:
        return FaultTreeNode.model_validate(resolved)
    except ValidationError as e:
        diagnostics = [
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        ]
        raise ConfigError(f"invalid fault tree '{mapping.get('name', '?')}'", diagnostics) from e


def shipped_fault_trees() -> Dict[str, FaultTreeNode]:
    """Navigation, GNSS, barometric and vision trees bundled with the package."""
    with open(SHIPPED_TREES_PATH, encoding="utf-8") as f:
        library = json.load(f)
    return {name: load_fault_tree(record, library) for name, record in library.items()}


def configured_fault_trees(config: IntegrityConfig) -> Dict[str, FaultTreeNode]:
    """Shipped trees overridden by trees given in the configuration."""
    trees = shipped_fault_trees()
    trees.update(config.trees)
    return trees


def allocate_budget(total_ir: float, weights: Mapping[str, float]) -> Dict[str, float]:
    """Split an integrity risk across subsystems.

    Raises:
        ContractViolation: Negative weight or weights not summing to one
    """
    if any(w < 0 for w in weights.values()):
        raise ContractViolation("allocation weights must be non-negative")
    total_weight = math.fsum(weights.values())
    if abs(total_weight - 1.0) > WEIGHT_TOLERANCE:
        raise ContractViolation(f"allocation weights sum to {total_weight!r}, expected 1")
    return {name: total_ir * w for name, w in weights.items()}


def check_alert_limits(
    hpl: Optional[float],
    vpl: Optional[float],
    requirements: RequirementSet,
    events: Optional[List[str]] = None,
) -> IntegrityStatus:
    """Compare protection levels with the alert limits.

    A protection level equal to its alert limit is still available.
    """
    events = list(events or [])
    hal, val = requirements.hal, requirements.val
    if hpl is None or vpl is None or not (math.isfinite(hpl) and math.isfinite(vpl)):
        state = IntegrityState.UNAVAILABLE
    elif hpl <= hal and vpl <= val:
        state = IntegrityState.AVAILABLE
    else:
        state = IntegrityState.ALERT
        if hpl > hal:
            events.append(f"HPL {hpl:.2f} m exceeds HAL {hal:.2f} m")
        if vpl > val:
            events.append(f"VPL {vpl:.2f} m exceeds VAL {val:.2f} m")
    return IntegrityStatus(hpl=hpl, vpl=vpl, hal=hal, val=val, state=state, events=events)


def fused_protection_levels(cov_enu: np.ndarray, ir_h: float, ir_v: Optional[float] = None):
    """Protection levels of the fused solution from its ENU position covariance."""
    return protection_levels(np.asarray(cov_enu, dtype=float)[:3, :3], ir_h, integrity_risk_vertical=ir_v)
