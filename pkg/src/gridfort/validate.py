"""Independent audit of a solved scenario operation: radiality, true circular
thermal limits (strictly stronger than the solver's octagon), voltage
recomputation in the same linearized physics, flow balance, and resilience
accounting. Violations are data, not errors; reports serialize to JSON and
drive the CLI's nonzero-exit contract.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import networkx as nx

from gridfort.formulation import Design, DesignParams, rotated_impedance
from gridfort.model import Network, Phase

__all__ = [
    "OperationState",
    "Violation",
    "AuditReport",
    "check_radiality",
    "recompute_voltages",
    "audit",
]

BALANCE_TOL = 1e-8
VOLTAGE_MATCH_TOL = 1e-6
THERMAL_TOL = 1e-9
FRACTION_TOL = 1e-9
IMBALANCE_TOL = 1e-8


@dataclass(frozen=True)
class OperationState:
    """Second-stage operating point of one scenario."""

    scenario_id: int
    damaged_lines: frozenset[str]
    closed_lines: frozenset[str]
    flows: dict[tuple[str, Phase], complex]          # per closed line and phase
    voltages: dict[tuple[str, Phase], float]         # squared magnitudes
    served_loads: frozenset[str]
    dispatch: dict[tuple[str, Phase], complex]       # generation per bus/phase


@dataclass(frozen=True)
class Violation:
    kind: str
    element: str
    magnitude: float

    def to_dict(self) -> dict:
        return {"element": self.element, "kind": self.kind, "magnitude": self.magnitude}


@dataclass
class AuditReport:
    scenario_id: int
    radial: bool
    worst_thermal_utilization: float
    voltage_range: tuple[float, float]      # magnitudes, energized buses only
    critical_fraction: float
    total_fraction: float
    max_voltage_discrepancy: float
    violations: list[Violation] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "radial": self.radial,
            "worst_thermal_utilization": self.worst_thermal_utilization,
            "voltage_range": list(self.voltage_range),
            "critical_fraction": self.critical_fraction,
            "total_fraction": self.total_fraction,
            "max_voltage_discrepancy": self.max_voltage_discrepancy,
            "violations": [v.to_dict() for v in self.violations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def check_radiality(state: OperationState, network: Network):
    """True iff the closed-line subgraph, parallel lines collapsed, is a forest;
    returns a witness cycle (as reduced edge tuples) when it is not."""
    g = nx.Graph()
    g.add_nodes_from(network.buses)
    for lid in state.closed_lines:
        line = network.lines[lid]
        g.add_edge(*sorted((line.from_bus, line.to_bus)))
    basis = nx.cycle_basis(g)
    if not basis:
        return True, None
    nodes = basis[0]
    witness = tuple(
        tuple(sorted((nodes[i], nodes[(i + 1) % len(nodes)]))) for i in range(len(nodes))
    )
    return False, witness


def _island_anchor(component: set[str], network: Network, state: OperationState):
    """Highest-capacity microgrid bus of an island, if the island has any."""
    best = None
    best_cap = -1.0
    for bid in sorted(component):
        cap = sum(
            network.microgrids[g].step_capacity_pu * network.microgrids[g].max_steps
            for g in network.microgrids_at(bid)
        )
        if cap > best_cap and network.microgrids_at(bid):
            best, best_cap = bid, cap
    return best


def recompute_voltages(state: OperationState, network: Network, params: DesignParams):
    """Sweep the linear voltage drop over closed lines from each source.

    Substation-fed components anchor at the substation reference; islands
    anchor at their largest microgrid bus, using the state's value for that
    bus when available (the optimization does not pin island voltage levels)
    and the substation reference otherwise. Returns (voltages keyed by
    (bus, phase), max discrepancy against the state's voltages, flagged
    islands without any source).
    """
    g = nx.Graph()
    g.add_nodes_from(network.buses)
    lines_between: dict[tuple[str, str], list[str]] = {}
    for lid in sorted(state.closed_lines):
        line = network.lines[lid]
        key = tuple(sorted((line.from_bus, line.to_bus)))
        g.add_edge(*key)
        lines_between.setdefault(key, []).append(lid)

    voltages: dict[tuple[str, Phase], float] = {}
    flagged: list[str] = []
    for component in nx.connected_components(g):
        subs = sorted(b for b in component if network.buses[b].is_substation)
        if subs:
            # the optimization pins substation voltages, so this is an
            # absolute cross-check
            anchors = [(b, network.buses[b].v_ref or 1.0) for b in subs]
        else:
            anchor = _island_anchor(component, network, state)
            if anchor is None:
                has_closed_line = any(
                    key[0] in component and key[1] in component for key in lines_between
                )
                if has_closed_line:
                    flagged.extend(sorted(component))
                continue  # de-energized island: no physical voltage
            # islands carry no absolute reference in the optimization; anchor
            # at the state's own level (per phase) so the sweep checks the
            # relative drops, falling back to the nominal reference
            anchors = [(anchor, None)]
        seen: set[str] = set()
        queue: deque[str] = deque()
        for bid, ref in anchors:
            for k in network.buses[bid].phases:
                if ref is not None:
                    voltages[(bid, k)] = ref
                else:
                    voltages[(bid, k)] = state.voltages.get((bid, k), 1.0)
            seen.add(bid)
            queue.append(bid)
        while queue:
            bid = queue.popleft()
            for nb in sorted(g.neighbors(bid)):
                if nb in seen:
                    continue
                key = tuple(sorted((bid, nb)))
                lid = lines_between[key][0]
                line = network.lines[lid]
                for k in line.phases:
                    drop = 0.0
                    for k2 in line.phases:
                        z = rotated_impedance(line, k, k2)
                        s = state.flows.get((lid, k2), 0j)
                        drop += 2.0 * (z.real * s.real + z.imag * s.imag)
                    # drop is V_from - V_to along the line's declared direction
                    if line.from_bus == bid:
                        voltages[(nb, k)] = voltages[(bid, k)] - drop
                    else:
                        voltages[(nb, k)] = voltages[(bid, k)] + drop
                seen.add(nb)
                queue.append(nb)

    discrepancy = 0.0
    for key, v in voltages.items():
        if key in state.voltages:
            discrepancy = max(discrepancy, abs(v - state.voltages[key]))
    return voltages, discrepancy, flagged


def _served_fractions(state: OperationState, network: Network):
    crit_served = crit_total = served = total = 0.0
    for load in network.loads.values():
        d = sum(v.real for v in load.demand_pu.values())
        on = load.id in state.served_loads
        total += d
        served += d if on else 0.0
        if load.is_critical:
            crit_total += d
            crit_served += d if on else 0.0
    return (
        crit_served / crit_total if crit_total > 0 else 1.0,
        served / total if total > 0 else 1.0,
    )


def audit(state: OperationState, network: Network, params: DesignParams,
          design: Design) -> AuditReport:
    """Full independent check of one scenario operation under a design."""
    violations: list[Violation] = []

    radial, witness = check_radiality(state, network)
    if not radial:
        violations.append(Violation("radiality", f"cycle:{witness}", float(len(witness))))

    hardened = set(design.hardened_lines)
    built = set(design.built_lines)
    for lid in sorted(state.closed_lines):
        line = network.lines[lid]
        if lid in state.damaged_lines and lid not in hardened:
            violations.append(Violation("damaged_line_closed", lid, 1.0))
        if line.is_candidate and lid not in built:
            violations.append(Violation("unbuilt_line_closed", lid, 1.0))

    worst_util = 0.0
    for (lid, k), s in sorted(state.flows.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        line = network.lines[lid]
        if lid not in state.closed_lines:
            if abs(s) > BALANCE_TOL:
                violations.append(Violation("flow_on_open_line", f"{lid}:{k.value}", abs(s)))
            continue
        cap = line.capacity_pu[k]
        util = abs(s) / cap
        worst_util = max(worst_util, util)
        if util > 1.0 + THERMAL_TOL:
            violations.append(
                Violation("thermal", f"{lid}:{k.value}", (util - 1.0) * cap)
            )

    for lid in sorted(state.closed_lines):
        line = network.lines[lid]
        n = len(line.phases)
        if n < 2:
            continue
        beta = params.beta_for(line)
        for comp in ("real", "imag"):
            flows = [getattr(state.flows.get((lid, k), 0j), comp) for k in line.phases]
            tot = sum(flows)
            for k, f in zip(line.phases, flows):
                hi = (1.0 + beta) * tot - n * f
                lo = n * f - (1.0 - beta) * tot
                worst = min(hi, lo)
                if worst < -IMBALANCE_TOL:
                    violations.append(
                        Violation("imbalance", f"{lid}:{comp}:{k.value}", -worst)
                    )

    vmin_mag, vmax_mag = math.sqrt(params.vmin_sq), math.sqrt(params.vmax_sq)
    # de-energized islands reported by recompute_voltages are legal states
    # (forced-closed lines downstream of damage); they carry no voltage checks
    recomputed, discrepancy, _ = recompute_voltages(state, network, params)
    if discrepancy > VOLTAGE_MATCH_TOL:
        violations.append(Violation("voltage_mismatch", "network", discrepancy))
    v_lo, v_hi = math.inf, -math.inf
    for (bid, k), v_sq in sorted(recomputed.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        mag = math.sqrt(max(v_sq, 0.0))
        v_lo, v_hi = min(v_lo, mag), max(v_hi, mag)
        if mag < vmin_mag - VOLTAGE_MATCH_TOL or mag > vmax_mag + VOLTAGE_MATCH_TOL:
            violations.append(
                Violation("voltage_band", f"{bid}:{k.value}",
                          max(vmin_mag - mag, mag - vmax_mag))
            )
    if not recomputed:
        v_lo = v_hi = 1.0

    for bid in sorted(network.buses):
        bus = network.buses[bid]
        for k in bus.phases:
            gen = state.dispatch.get((bid, k), 0j)
            demand = sum(
                (
                    network.loads[l].demand_pu.get(k, 0j)
                    for l in network.loads_at(bid)
                    if l in state.served_loads
                ),
                0j,
            )
            net_flow = 0j
            for lid in network.lines_at(bid):
                line = network.lines[lid]
                if k not in line.phases:
                    continue
                s = state.flows.get((lid, k), 0j)
                net_flow += s if line.from_bus == bid else -s
            residual = gen - demand - net_flow
            if abs(residual.real) > BALANCE_TOL or abs(residual.imag) > BALANCE_TOL:
                violations.append(
                    Violation("balance", f"{bid}:{k.value}",
                              max(abs(residual.real), abs(residual.imag)))
                )

    crit_frac, tot_frac = _served_fractions(state, network)
    if crit_frac < params.critical_fraction - FRACTION_TOL:
        violations.append(
            Violation("critical_service", "network", params.critical_fraction - crit_frac)
        )
    if tot_frac < params.total_fraction - FRACTION_TOL:
        violations.append(
            Violation("total_service", "network", params.total_fraction - tot_frac)
        )

    return AuditReport(
        scenario_id=state.scenario_id,
        radial=radial,
        worst_thermal_utilization=worst_util,
        voltage_range=(v_lo, v_hi),
        critical_fraction=crit_frac,
        total_fraction=tot_frac,
        max_voltage_discrepancy=discrepancy,
        violations=violations,
    )
