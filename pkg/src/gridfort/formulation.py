"""MILP formulation: per-scenario operational feasibility plus the minimum
cost upgrade problem that links scenarios through shared build/harden/
microgrid decisions.

Variable naming grammar (stable across runs, used in exchange files):

    build:{line}            first-stage new-line decision
    harden:{line}           first-stage hardening decision
    mgstep:{mg}:{m}         first-stage microgrid sizing step m (1-based)
    eline:{line}:s{S}       line energized in scenario S
    edir0/edir1:{line}:s{S} flow direction indicators (to->from / from->to)
    bline:{line}:s{S}       line available (built and switched in)
    hline:{line}:s{S}       scenario copy of the hardening decision
    bredge:{u}>{v}:s{S}     reduced (parallel-collapsed) edge used
    p/q:{line}:{k}:s{S}     real/reactive flow on phase k, per-unit
    v:{bus}:{k}:s{S}        squared voltage magnitude, per-unit
    sgre/sgim:{bus}:{k}:s{S}  generated power components
    sdre/sdim:{bus}:{k}:s{S}  delivered load components
    served:{load}:s{S}      all-or-none load pickup

Objective coefficients are expressed in k$ to keep the coefficient range
tame; reported design costs are in dollars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from gridfort.fragility import DamageScenario
from gridfort.milp import BINARY, CONTINUOUS, EQUAL, GREATER, LESS, MilpModel, Solution
from gridfort.model import (
    Line,
    MicrogridCandidate,
    Network,
    Phase,
    ReducedGraph,
    aggregate_parallel_edges,
)

__all__ = [
    "DesignParams",
    "OctagonGeometry",
    "octagon_points",
    "npv_capacity_cost",
    "microgrid_step_encoding",
    "CostBreakdown",
    "Design",
    "design_cost",
    "ScenarioVars",
    "ScenarioFormulation",
    "FirstStage",
    "MasterProblem",
    "build_master",
    "master_dimensions",
]

OCTAGON_SCALE = math.cos(math.pi / 8.0)


@dataclass(frozen=True)
class DesignParams:
    """Resilience targets, physics limits, and cost overrides."""

    critical_fraction: float = 0.98      # of critical real power, every scenario
    total_fraction: float = 0.1          # of total real power, every scenario
    beta_transformer: float = 0.15       # phase imbalance band for transformers
    beta_line: float = 1.0               # and for ordinary lines
    vmin_sq: float = 0.9025              # 0.95**2, squared per-unit
    vmax_sq: float = 1.1025              # 1.05**2
    octagon_scale: float = OCTAGON_SCALE
    mg_fixed_cost_override: float | None = None
    mg_rate_override: float | None = None    # $/kW of per-phase capacity
    line_cost_scale: float = 1.0
    harden_cost_scale: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.critical_fraction <= 1.0):
            raise ValueError("critical_fraction must lie in [0, 1]")
        if not (0.0 <= self.total_fraction <= 1.0):
            raise ValueError("total_fraction must lie in [0, 1]")
        if not (0.0 < self.vmin_sq < self.vmax_sq):
            raise ValueError("need 0 < vmin_sq < vmax_sq")
        for b in (self.beta_transformer, self.beta_line):
            if not (0.0 < b <= 1.0):
                raise ValueError("imbalance beta must lie in (0, 1]")

    @property
    def big_m(self) -> float:
        return self.vmax_sq - self.vmin_sq

    def beta_for(self, line: Line) -> float:
        return self.beta_transformer if line.is_transformer else self.beta_line

    def mg_fixed_cost(self, mg: MicrogridCandidate) -> float:
        if mg.is_existing:
            return 0.0
        if self.mg_fixed_cost_override is not None:
            return self.mg_fixed_cost_override
        return mg.fixed_cost

    def mg_step_cost(self, mg: MicrogridCandidate, n_phases: int) -> float:
        """Cost of one sizing step: rate x per-phase kW x phase count."""
        if mg.is_existing:
            return 0.0
        rate = self.mg_rate_override if self.mg_rate_override is not None else mg.variable_cost_rate
        return rate * mg.step_capacity_kva * n_phases

    def line_build_cost(self, line: Line) -> float:
        return line.construction_cost * self.line_cost_scale

    def line_harden_cost(self, line: Line) -> float:
        return line.harden_cost * self.harden_cost_scale


# ---------------------------------------------------------------------------
# thermal octagon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OctagonGeometry:
    """Octagon inscribed in the apparent-power circle of radius ``capacity``.

    Edges are tangent to the inner circle of radius r = capacity*cos(pi/8);
    vertices lie on the capacity circle, so feasibility inside the octagon
    implies true thermal feasibility.
    """

    capacity: float
    radius: float
    axis_bound: float
    diagonal_coord: float  # tangency points at (+-diagonal_coord, +-diagonal_coord)

    def diagonal_points(self) -> tuple[tuple[float, float], ...]:
        d = self.diagonal_coord
        return ((d, d), (-d, d), (-d, -d), (d, -d))

    def half_planes(self) -> tuple[tuple[float, float, float], ...]:
        """(a, b, rhs) triples: the octagon is {a*P + b*Q <= rhs for all}."""
        r = self.radius
        planes = [(1.0, 0.0, r), (-1.0, 0.0, r), (0.0, 1.0, r), (0.0, -1.0, r)]
        for p0, q0 in self.diagonal_points():
            planes.append((p0, q0, p0 * p0 + q0 * q0))
        return tuple(planes)

    def vertices(self) -> tuple[tuple[float, float], ...]:
        r = self.radius
        t = r * (math.sqrt(2.0) - 1.0)
        return (
            (r, t), (t, r), (-t, r), (-r, t),
            (-r, -t), (-t, -r), (t, -r), (r, -t),
        )

    def contains(self, p: float, q: float, tol: float = 1e-12) -> bool:
        return all(a * p + b * q <= rhs + tol for a, b, rhs in self.half_planes())


def octagon_points(capacity: float, scale: float = OCTAGON_SCALE) -> OctagonGeometry:
    if capacity <= 0:
        raise ValueError(f"capacity must be positive, got {capacity}")
    r = capacity * scale
    return OctagonGeometry(
        capacity=capacity,
        radius=r,
        axis_bound=r,
        diagonal_coord=r / math.sqrt(2.0),
    )


def npv_capacity_cost(rating_kva: float, rate: float, eta: float, years: int) -> float:
    """Net present value of per-kVA yearly revenue over the performance period."""
    if rating_kva < 0 or eta < 0 or years < 0:
        raise ValueError("rating, rate period, and depreciation must be nonnegative")
    return sum((1.0 / (1.0 + eta)) ** n for n in range(years + 1)) * rate * rating_kva


# ---------------------------------------------------------------------------
# designs and their cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostBreakdown:
    new_lines: float
    hardening: float
    microgrid_fixed: float
    microgrid_capacity: float

    @property
    def total(self) -> float:
        return self.new_lines + self.hardening + self.microgrid_fixed + self.microgrid_capacity


@dataclass(frozen=True)
class Design:
    built_lines: tuple[str, ...]
    hardened_lines: tuple[str, ...]
    microgrid_steps: tuple[tuple[str, int], ...]  # (microgrid id, committed steps)
    cost: CostBreakdown

    def steps_of(self, mg_id: str) -> int:
        return dict(self.microgrid_steps).get(mg_id, 0)

    def microgrid_kw(self, network: Network) -> float:
        """Total installed capacity across phases, kW."""
        total = 0.0
        for gid, steps in self.microgrid_steps:
            mg = network.microgrids[gid]
            total += steps * mg.step_capacity_kva * len(network.buses[mg.bus].phases)
        return total

    @staticmethod
    def empty() -> "Design":
        return Design((), (), (), CostBreakdown(0.0, 0.0, 0.0, 0.0))


def design_cost(network: Network, params: DesignParams, built, hardened,
                steps) -> CostBreakdown:
    """Evaluate the upgrade cost of a decision vector, in dollars.

    Sums run in canonical id order so equal decision sets always produce
    bit-identical totals.
    """
    steps = dict(steps)
    new_cost = sum(
        params.line_build_cost(network.lines[lid]) for lid in sorted(set(built))
    )
    harden = sum(
        params.line_harden_cost(network.lines[lid]) for lid in sorted(set(hardened))
    )
    fixed = 0.0
    capacity = 0.0
    for gid in sorted(steps):
        n = steps[gid]
        if n <= 0:
            continue
        mg = network.microgrids[gid]
        n_ph = len(network.buses[mg.bus].phases)
        fixed += params.mg_fixed_cost(mg)
        capacity += n * params.mg_step_cost(mg, n_ph)
    return CostBreakdown(new_cost, harden, fixed, capacity)


def make_design(network: Network, params: DesignParams, built, hardened, steps) -> Design:
    steps = {g: n for g, n in dict(steps).items() if n > 0}
    return Design(
        built_lines=tuple(sorted(set(built))),
        hardened_lines=tuple(sorted(set(hardened))),
        microgrid_steps=tuple(sorted(steps.items())),
        cost=design_cost(network, params, built, hardened, steps),
    )


# ---------------------------------------------------------------------------
# first stage
# ---------------------------------------------------------------------------


@dataclass
class FirstStage:
    build: dict[str, int] = field(default_factory=dict)    # candidate line -> var
    harden: dict[str, int] = field(default_factory=dict)   # hardenable line -> var
    steps: dict[str, list[int]] = field(default_factory=dict)  # mg -> step vars
    ordering_rows: list[int] = field(default_factory=list)


def microgrid_step_encoding(model: MilpModel, mg: MicrogridCandidate,
                            scenario_suffix: str = "") -> tuple[list[int], list[int]]:
    """Ordered incremental sizing binaries u_1 >= u_2 >= ... for one unit.

    Existing units are fully committed (every step fixed on). Returns the
    step variable indexes and the ordering constraint ids.
    """
    vs: list[int] = []
    for m in range(1, mg.max_steps + 1):
        ix = model.add_variable(f"mgstep:{mg.id}:{m}{scenario_suffix}", 0.0, 1.0, BINARY)
        if mg.is_existing:
            model.fix_variable(ix, 1.0)
        vs.append(ix)
    rows = [
        model.add_constraint({vs[m]: 1.0, vs[m + 1]: -1.0}, GREATER, 0.0,
                             name=f"mgorder:{mg.id}:{m + 1}{scenario_suffix}")
        for m in range(mg.max_steps - 1)
    ]
    return vs, rows


def _build_first_stage(model: MilpModel, network: Network) -> FirstStage:
    fs = FirstStage()
    for lid in sorted(network.lines):
        line = network.lines[lid]
        if line.is_candidate:
            fs.build[lid] = model.add_variable(f"build:{lid}", 0.0, 1.0, BINARY)
    for lid in sorted(network.lines):
        line = network.lines[lid]
        if line.hardenable and line.damageable and not line.is_candidate:
            fs.harden[lid] = model.add_variable(f"harden:{lid}", 0.0, 1.0, BINARY)
    for gid in sorted(network.microgrids):
        vs, rows = microgrid_step_encoding(model, network.microgrids[gid])
        fs.steps[gid] = vs
        fs.ordering_rows.extend(rows)
    return fs


# ---------------------------------------------------------------------------
# per-scenario block
# ---------------------------------------------------------------------------


@dataclass
class ScenarioVars:
    """Model indexes of one scenario's operational variables."""

    scenario: DamageScenario
    e: dict[str, int] = field(default_factory=dict)
    e0: dict[str, int] = field(default_factory=dict)
    e1: dict[str, int] = field(default_factory=dict)
    bs: dict[str, int] = field(default_factory=dict)
    hs: dict[str, int] = field(default_factory=dict)
    bredge: dict[tuple[str, str], int] = field(default_factory=dict)
    p: dict[tuple[str, Phase], int] = field(default_factory=dict)
    q: dict[tuple[str, Phase], int] = field(default_factory=dict)
    v: dict[tuple[str, Phase], int] = field(default_factory=dict)
    sg_re: dict[tuple[str, Phase], int] = field(default_factory=dict)
    sg_im: dict[tuple[str, Phase], int] = field(default_factory=dict)
    sd_re: dict[tuple[str, Phase], int] = field(default_factory=dict)
    sd_im: dict[tuple[str, Phase], int] = field(default_factory=dict)
    y: dict[str, int] = field(default_factory=dict)


_ROT_FWD = complex(math.cos(2.0 * math.pi / 3.0), math.sin(2.0 * math.pi / 3.0))
_ROT_BWD = _ROT_FWD.conjugate()
_NEXT = {Phase.A: Phase.B, Phase.B: Phase.C, Phase.C: Phase.A}


def rotated_impedance(line: Line, k: Phase, k2: Phase) -> complex:
    """Sequence-rotated series impedance seen by phase k from phase k2 flow.

    The own-phase term is the plain impedance; coupling to the next phase in
    abc order rotates by +120 degrees, to the previous phase by -120.
    """
    z = line.z_pu.get((k, k2))
    if z is None:
        return 0j
    if k2 == k:
        return z
    if k2 == _NEXT[k]:
        return z * _ROT_FWD
    return z * _ROT_BWD


class ScenarioFormulation:
    """Operational constraint emitter for one damage scenario."""

    def __init__(self, model: MilpModel, network: Network, params: DesignParams,
                 scenario: DamageScenario, reduced: ReducedGraph,
                 first_stage: FirstStage) -> None:
        unknown = sorted(scenario.damaged_line_ids - set(network.lines))
        if unknown:
            raise ValueError(f"scenario {scenario.id} damages unknown lines: {unknown}")
        bad = sorted(
            lid for lid in scenario.damaged_line_ids
            if network.lines[lid].is_candidate or not network.lines[lid].damageable
        )
        if bad:
            raise ValueError(
                f"scenario {scenario.id} damages candidate/non-damageable lines: {bad}"
            )
        self.model = model
        self.network = network
        self.params = params
        self.scenario = scenario
        self.reduced = reduced
        self.first_stage = first_stage
        self.suffix = f":s{scenario.id}"
        self.vars = ScenarioVars(scenario)
        self._sub_cap_re, self._sub_cap_im = _substation_capacity(network)
        self._allocate()

    # -- variables -----------------------------------------------------------

    def octagon(self, line: Line, k: Phase) -> OctagonGeometry:
        return octagon_points(line.capacity_pu[k], self.params.octagon_scale)

    def _allocate(self) -> None:
        m, net, sfx = self.model, self.network, self.suffix
        for lid in sorted(net.lines):
            line = net.lines[lid]
            self.vars.e[lid] = m.add_variable(f"eline:{lid}{sfx}", 0.0, 1.0, BINARY)
            self.vars.e0[lid] = m.add_variable(f"edir0:{lid}{sfx}", 0.0, 1.0, BINARY)
            self.vars.e1[lid] = m.add_variable(f"edir1:{lid}{sfx}", 0.0, 1.0, BINARY)
            self.vars.bs[lid] = m.add_variable(f"bline:{lid}{sfx}", 0.0, 1.0, BINARY)
            self.vars.hs[lid] = m.add_variable(f"hline:{lid}{sfx}", 0.0, 1.0, BINARY)
            if not line.is_candidate and not line.has_switch:
                m.fix_variable(self.vars.bs[lid], 1.0)
            if lid not in self.first_stage.harden:
                m.fix_variable(self.vars.hs[lid], 0.0)
            for k in line.phases:
                r = self.octagon(line, k).radius
                self.vars.p[(lid, k)] = m.add_variable(f"p:{lid}:{k.value}{sfx}", -r, r)
                self.vars.q[(lid, k)] = m.add_variable(f"q:{lid}:{k.value}{sfx}", -r, r)
        for (u, v) in sorted(self.reduced.edges):
            # integrality is implied: closing any line underneath forces the
            # edge-usage variable to exactly one through the linking rows, so
            # it stays continuous and out of the branching
            self.vars.bredge[(u, v)] = m.add_variable(
                f"bredge:{u}>{v}{sfx}", 0.0, 1.0, CONTINUOUS
            )
        for bid in sorted(net.buses):
            bus = net.buses[bid]
            mg_cap = sum(
                net.microgrids[g].step_capacity_pu * net.microgrids[g].max_steps
                for g in net.microgrids_at(bid)
            )
            cap_re = mg_cap + (self._sub_cap_re if bus.is_substation else 0.0)
            cap_im = mg_cap + (self._sub_cap_im if bus.is_substation else 0.0)
            for k in bus.phases:
                self.vars.v[(bid, k)] = m.add_variable(
                    f"v:{bid}:{k.value}{sfx}", self.params.vmin_sq, self.params.vmax_sq
                )
                if bus.is_substation:
                    m.fix_variable(self.vars.v[(bid, k)], bus.v_ref or 1.0)
                self.vars.sg_re[(bid, k)] = m.add_variable(
                    f"sgre:{bid}:{k.value}{sfx}", 0.0, cap_re
                )
                self.vars.sg_im[(bid, k)] = m.add_variable(
                    f"sgim:{bid}:{k.value}{sfx}", 0.0, cap_im
                )
                d = sum(
                    (net.loads[l].demand_pu.get(k, 0j) for l in net.loads_at(bid)), 0j
                )
                self.vars.sd_re[(bid, k)] = m.add_variable(
                    f"sdre:{bid}:{k.value}{sfx}", 0.0, d.real
                )
                self.vars.sd_im[(bid, k)] = m.add_variable(
                    f"sdim:{bid}:{k.value}{sfx}", min(0.0, d.imag), max(0.0, d.imag)
                )
        for lid in sorted(net.loads):
            self.vars.y[lid] = m.add_variable(f"served:{lid}{sfx}", 0.0, 1.0, BINARY)

    # -- constraint families ---------------------------------------------------

    def add_thermal_direction_constraints(self, line_id: str) -> list[int]:
        """Octagonal inner approximation of the per-phase apparent-power limit,
        gated by the shared direction indicators; all phases flow one way."""
        m, line = self.model, self.network.lines[line_id]
        e, e0, e1 = (d[line_id] for d in (self.vars.e, self.vars.e0, self.vars.e1))
        rows: list[int] = []
        for k in line.phases:
            geo = self.octagon(line, k)
            r = geo.radius
            p, q = self.vars.p[(line_id, k)], self.vars.q[(line_id, k)]
            tag = f"{line_id}:{k.value}{self.suffix}"
            rows.append(m.add_constraint({p: 1.0, e1: -r}, LESS, 0.0, f"thP+:{tag}"))
            rows.append(m.add_constraint({p: 1.0, e0: r}, GREATER, 0.0, f"thP-:{tag}"))
            rows.append(m.add_constraint({q: 1.0, e1: -r}, LESS, 0.0, f"thQ+:{tag}"))
            rows.append(m.add_constraint({q: 1.0, e0: r}, GREATER, 0.0, f"thQ-:{tag}"))
            for i, (p0, q0) in enumerate(geo.diagonal_points()):
                rows.append(
                    m.add_constraint({p: p0, q: q0}, LESS, p0 * p0 + q0 * q0,
                                     f"thD{i}:{tag}")
                )
        rows.append(
            m.add_constraint({e0: 1.0, e1: 1.0, e: -1.0}, LESS, 0.0,
                             f"dir:{line_id}{self.suffix}")
        )
        return rows

    def add_switching_damage_constraints(self, line_id: str) -> list[int]:
        """Energization tracks availability when intact and the hardening copy
        when damaged; unhardened damaged lines are forced open."""
        m, line = self.model, self.network.lines[line_id]
        e = self.vars.e[line_id]
        if line_id in self.scenario.damaged_line_ids:
            other, tag = self.vars.hs[line_id], "dmg"
        else:
            other, tag = self.vars.bs[line_id], "sw"
        return [
            m.add_constraint({e: 1.0, other: -1.0}, EQUAL, 0.0,
                             f"{tag}:{line_id}{self.suffix}")
        ]

    def add_imbalance_constraints(self, line_id: str) -> list[int]:
        """Per-phase flow within (1 +- beta) of the per-phase average, real and
        imaginary components separately; single-phase lines carry none.

        Emitted in the literal two-sided form, which presumes flow in the
        declared direction: a net-negative multi-phase flow has an empty band,
        so reverse flow on multi-phase lines is only feasible at zero."""
        m, line = self.model, self.network.lines[line_id]
        n = len(line.phases)
        if n < 2:
            return []
        beta = self.params.beta_for(line)
        rows: list[int] = []
        for comp, flows in (("p", self.vars.p), ("q", self.vars.q)):
            idx = [flows[(line_id, k)] for k in line.phases]
            for k in line.phases:
                fk = flows[(line_id, k)]
                tag = f"{line_id}:{comp}{k.value}{self.suffix}"
                hi = {ix: -(1.0 + beta) for ix in idx}
                hi[fk] += float(n)
                rows.append(m.add_constraint(hi, LESS, 0.0, f"imb+:{tag}"))
                lo = {ix: -(1.0 - beta) for ix in idx}
                lo[fk] += float(n)
                rows.append(m.add_constraint(lo, GREATER, 0.0, f"imb-:{tag}"))
        return rows

    def add_load_generation_balance(self, bus_id: str) -> list[int]:
        """Delivered load definition, generation capacity, and per-phase nodal
        balance with from-oriented flow signs."""
        m, net = self.model, self.network
        bus = net.buses[bus_id]
        rows: list[int] = []
        mgs = net.microgrids_at(bus_id)
        for k in bus.phases:
            tag = f"{bus_id}:{k.value}{self.suffix}"
            for comp, sd in (("re", self.vars.sd_re), ("im", self.vars.sd_im)):
                coeffs = {sd[(bus_id, k)]: 1.0}
                for lid in net.loads_at(bus_id):
                    d = net.loads[lid].demand_pu.get(k)
                    if d is None:
                        continue
                    dv = d.real if comp == "re" else d.imag
                    if dv != 0.0:
                        coeffs[self.vars.y[lid]] = coeffs.get(self.vars.y[lid], 0.0) - dv
                rows.append(m.add_constraint(coeffs, EQUAL, 0.0, f"load{comp}:{tag}"))
            if mgs:
                cap_const_re = self._sub_cap_re if bus.is_substation else 0.0
                cap_const_im = self._sub_cap_im if bus.is_substation else 0.0
                for comp, sg, cap0 in (
                    ("re", self.vars.sg_re, cap_const_re),
                    ("im", self.vars.sg_im, cap_const_im),
                ):
                    coeffs = {sg[(bus_id, k)]: 1.0}
                    for gid in mgs:
                        mg = net.microgrids[gid]
                        for ux in self.first_stage.steps[gid]:
                            coeffs[ux] = coeffs.get(ux, 0.0) - mg.step_capacity_pu
                    rows.append(
                        m.add_constraint(coeffs, LESS, cap0, f"gencap{comp}:{tag}")
                    )
            for comp, sg, sd, flows in (
                ("re", self.vars.sg_re, self.vars.sd_re, self.vars.p),
                ("im", self.vars.sg_im, self.vars.sd_im, self.vars.q),
            ):
                coeffs = {sg[(bus_id, k)]: 1.0, sd[(bus_id, k)]: -1.0}
                for lid in net.lines_at(bus_id):
                    line = net.lines[lid]
                    if k not in line.phases:
                        continue
                    sign = -1.0 if line.from_bus == bus_id else 1.0
                    coeffs[flows[(lid, k)]] = coeffs.get(flows[(lid, k)], 0.0) + sign
                rows.append(m.add_constraint(coeffs, EQUAL, 0.0, f"bal{comp}:{tag}"))
        return rows

    def add_resilience_constraints(self, enforce: bool = True) -> list[int]:
        """Minimum served fractions of critical and of total real power; with
        ``enforce`` off both rows are emitted with vacuous zero targets (used
        for best-effort shortfall measurement)."""
        m, net, pr = self.model, self.network, self.params
        crit = {}
        total = {}
        crit_demand = 0.0
        total_demand = 0.0
        for lid in sorted(net.loads):
            load = net.loads[lid]
            d = sum(v.real for v in load.demand_pu.values())
            total[self.vars.y[lid]] = d
            total_demand += d
            if load.is_critical:
                crit[self.vars.y[lid]] = d
                crit_demand += d
        crit_rhs = pr.critical_fraction * crit_demand if enforce else 0.0
        total_rhs = pr.total_fraction * total_demand if enforce else 0.0
        return [
            m.add_constraint(crit, GREATER, crit_rhs, f"crit{self.suffix}"),
            m.add_constraint(total, GREATER, total_rhs, f"total{self.suffix}"),
        ]

    def add_voltage_constraints(self, line_id: str) -> list[int]:
        """Linearized squared-voltage drop, big-M released when the line is
        open; M = vmax_sq - vmin_sq exactly."""
        m, line = self.model, self.network.lines[line_id]
        big_m = self.params.big_m
        e = self.vars.e[line_id]
        rows: list[int] = []
        for k in line.phases:
            expr: dict[int, float] = {
                self.vars.v[(line.to_bus, k)]: 1.0,
                self.vars.v[(line.from_bus, k)]: -1.0,
            }
            for k2 in line.phases:
                z = rotated_impedance(line, k, k2)
                px = self.vars.p[(line_id, k2)]
                qx = self.vars.q[(line_id, k2)]
                if z.real != 0.0:
                    expr[px] = expr.get(px, 0.0) + 2.0 * z.real
                if z.imag != 0.0:
                    expr[qx] = expr.get(qx, 0.0) + 2.0 * z.imag
            tag = f"{line_id}:{k.value}{self.suffix}"
            up = dict(expr)
            up[e] = up.get(e, 0.0) + big_m
            rows.append(m.add_constraint(up, LESS, big_m, f"vdrop+:{tag}"))
            lo = dict(expr)
            lo[e] = lo.get(e, 0.0) - big_m
            rows.append(m.add_constraint(lo, GREATER, -big_m, f"vdrop-:{tag}"))
        return rows

    def add_reduced_edge_links(self, line_id: str) -> list[int]:
        """Reduced-edge usage dominates every original line beneath it; for
        damaged lines the energization binary is linked as well so hardened
        switched lines cannot hide from the cycle cuts."""
        m = self.model
        key = self.reduced.edge_of_line(line_id)
        bb = self.vars.bredge[key]
        rows = [
            m.add_constraint({self.vars.bs[line_id]: 1.0, bb: -1.0}, LESS, 0.0,
                             f"redlink:{line_id}{self.suffix}")
        ]
        if line_id in self.scenario.damaged_line_ids:
            rows.append(
                m.add_constraint({self.vars.e[line_id]: 1.0, bb: -1.0}, LESS, 0.0,
                                 f"redlinkd:{line_id}{self.suffix}")
            )
        return rows

    def add_master_links(self) -> list[int]:
        """b^s <= b for candidates (new lines stay switchable); h^s = h."""
        m = self.model
        rows: list[int] = []
        for lid in sorted(self.first_stage.build):
            rows.append(
                m.add_constraint(
                    {self.vars.bs[lid]: 1.0, self.first_stage.build[lid]: -1.0},
                    LESS, 0.0, f"linkb:{lid}{self.suffix}"
                )
            )
        for lid in sorted(self.first_stage.harden):
            rows.append(
                m.add_constraint(
                    {self.vars.hs[lid]: 1.0, self.first_stage.harden[lid]: -1.0},
                    EQUAL, 0.0, f"linkh:{lid}{self.suffix}"
                )
            )
        return rows

    def add_all(self, enforce_resilience: bool = True) -> None:
        for lid in sorted(self.network.lines):
            self.add_thermal_direction_constraints(lid)
            self.add_switching_damage_constraints(lid)
            self.add_imbalance_constraints(lid)
            self.add_voltage_constraints(lid)
            self.add_reduced_edge_links(lid)
        for bid in sorted(self.network.buses):
            self.add_load_generation_balance(bid)
        self.add_resilience_constraints(enforce_resilience)
        self.add_master_links()

    def add_cycle_cut(self, cycle_edges) -> int:
        """At least one reduced edge of the cycle must stay unused."""
        cycle = [tuple(sorted(e)) for e in cycle_edges]
        _check_simple_cycle(cycle, self.vars.bredge)
        coeffs = {self.vars.bredge[e]: 1.0 for e in cycle}
        return self.model.add_constraint(
            coeffs, LESS, float(len(cycle) - 1),
            f"cycle:{'|'.join('>'.join(e) for e in sorted(cycle))}{self.suffix}",
        )


def _check_simple_cycle(cycle, bredge) -> None:
    if len(cycle) < 3 or len(set(cycle)) != len(cycle):
        raise ValueError("cycle must consist of at least 3 distinct reduced edges")
    degree: dict[str, int] = {}
    for e in cycle:
        if e not in bredge:
            raise ValueError(f"unknown reduced edge {e}")
        for node in e:
            degree[node] = degree.get(node, 0) + 1
    if any(d != 2 for d in degree.values()):
        raise ValueError("edge set is not a simple cycle (node degree != 2)")
    # connectivity: walk from an arbitrary node
    adj: dict[str, list[str]] = {}
    for u, v in cycle:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    start = next(iter(adj))
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = frontier.pop()
        for nb in adj[nxt]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    if len(seen) != len(adj):
        raise ValueError("edge set is not a single connected cycle")


def _substation_capacity(network: Network) -> tuple[float, float]:
    """Implicit per-phase substation import limit: the whole network demand."""
    cap_re = 0.0
    cap_im = 0.0
    for load in network.loads.values():
        for d in load.demand_pu.values():
            cap_re += d.real
            cap_im += max(d.imag, 0.0)
    return cap_re, cap_im


# ---------------------------------------------------------------------------
# master problem
# ---------------------------------------------------------------------------


@dataclass
class MasterProblem:
    model: MilpModel
    network: Network
    params: DesignParams
    scenarios: list[DamageScenario]
    reduced: ReducedGraph
    first_stage: FirstStage
    blocks: dict[int, ScenarioFormulation]
    objective_kind: str

    def add_cycle_cut(self, cycle_edges, scenario_id: int) -> int:
        return self.blocks[scenario_id].add_cycle_cut(cycle_edges)

    def design_from_solution(self, solution: Solution) -> Design:
        vals = solution.values
        built = [lid for lid, ix in self.first_stage.build.items() if vals[ix] > 0.5]
        hardened = [lid for lid, ix in self.first_stage.harden.items() if vals[ix] > 0.5]
        steps = {
            gid: int(sum(vals[ix] > 0.5 for ix in ixs))
            for gid, ixs in self.first_stage.steps.items()
            if not self.network.microgrids[gid].is_existing
        }
        return make_design(self.network, self.params, built, hardened, steps)

    def served_fractions(self, solution: Solution, scenario_id: int) -> tuple[float, float]:
        vals = solution.values
        blk = self.blocks[scenario_id]
        crit_served = crit_total = served = total = 0.0
        for lid, yix in blk.vars.y.items():
            load = self.network.loads[lid]
            d = sum(v.real for v in load.demand_pu.values())
            on = vals[yix] > 0.5
            total += d
            served += d if on else 0.0
            if load.is_critical:
                crit_total += d
                crit_served += d if on else 0.0
        return (
            crit_served / crit_total if crit_total > 0 else 1.0,
            served / total if total > 0 else 1.0,
        )

    def operation_state(self, solution: Solution, scenario_id: int):
        from gridfort.validate import OperationState

        vals = solution.values
        blk = self.blocks[scenario_id]
        closed = frozenset(lid for lid, ix in blk.vars.e.items() if vals[ix] > 0.5)
        flows = {
            (lid, k): complex(vals[blk.vars.p[(lid, k)]], vals[blk.vars.q[(lid, k)]])
            for (lid, k) in blk.vars.p
        }
        voltages = {key: float(vals[ix]) for key, ix in blk.vars.v.items()}
        dispatch = {
            key: complex(vals[blk.vars.sg_re[key]], vals[blk.vars.sg_im[key]])
            for key in blk.vars.sg_re
        }
        served = frozenset(lid for lid, ix in blk.vars.y.items() if vals[ix] > 0.5)
        return OperationState(
            scenario_id=scenario_id,
            damaged_lines=frozenset(blk.scenario.damaged_line_ids),
            closed_lines=closed,
            flows=flows,
            voltages=voltages,
            served_loads=served,
            dispatch=dispatch,
        )


def _apply_fixed_design(model: MilpModel, network: Network, fs: FirstStage,
                        design: Design) -> None:
    built = set(design.built_lines)
    hardened = set(design.hardened_lines)
    steps = dict(design.microgrid_steps)
    for lid, ix in fs.build.items():
        model.fix_variable(ix, 1.0 if lid in built else 0.0)
    for lid, ix in fs.harden.items():
        model.fix_variable(ix, 1.0 if lid in hardened else 0.0)
    for gid, ixs in fs.steps.items():
        if network.microgrids[gid].is_existing:
            continue  # existing units stay fully committed
        n = steps.get(gid, 0)
        for m_, ix in enumerate(ixs, start=1):
            model.fix_variable(ix, 1.0 if m_ <= n else 0.0)


def _cost_coefficients(network: Network, params: DesignParams, fs: FirstStage):
    """First-stage objective coefficients in k$."""
    coeffs: dict[int, float] = {}
    for lid, ix in fs.build.items():
        coeffs[ix] = params.line_build_cost(network.lines[lid]) / 1000.0
    for lid, ix in fs.harden.items():
        coeffs[ix] = params.line_harden_cost(network.lines[lid]) / 1000.0
    for gid, ixs in fs.steps.items():
        mg = network.microgrids[gid]
        if mg.is_existing:
            continue
        n_ph = len(network.buses[mg.bus].phases)
        step_cost = params.mg_step_cost(mg, n_ph) / 1000.0
        for m_, ix in enumerate(ixs, start=1):
            c = step_cost
            if m_ == 1:
                c += params.mg_fixed_cost(mg) / 1000.0
            if c != 0.0:
                coeffs[ix] = coeffs.get(ix, 0.0) + c
    return coeffs


def build_master(network: Network, scenarios: list[DamageScenario],
                 params: DesignParams, *, fixed_design: Design | None = None,
                 objective: str = "cost", enforce_resilience: bool = True,
                 cost_budget: float | None = None) -> MasterProblem:
    """Assemble the two-stage design MILP over the given scenario set.

    objective: "cost" minimizes upgrade cost (the design problem);
    "served" maximizes weighted served load (design evaluation);
    "microgrid_kw" minimizes installed microgrid kW (tie-break canonicalization,
    normally combined with ``cost_budget`` in k$).
    """
    if not scenarios:
        raise ValueError("at least one scenario (the baseline) is required")
    model = MilpModel(name=f"upgrade:{len(scenarios)}scen")
    fs = _build_first_stage(model, network)
    if fixed_design is not None:
        _apply_fixed_design(model, network, fs, fixed_design)
    reduced = aggregate_parallel_edges(network)
    blocks: dict[int, ScenarioFormulation] = {}
    for scen in scenarios:
        if scen.id in blocks:
            raise ValueError(f"duplicate scenario id {scen.id}")
        blk = ScenarioFormulation(model, network, params, scen, reduced, fs)
        blk.add_all(enforce_resilience)
        blocks[scen.id] = blk

    cost = _cost_coefficients(network, params, fs)
    if cost_budget is not None:
        model.add_constraint(cost, LESS, cost_budget, "cost_budget")

    if objective == "cost":
        model.set_objective(cost)
    elif objective == "served":
        model.set_objective(_served_objective(network, blocks))
    elif objective == "microgrid_kw":
        # minimize installed capacity; an epsilon cost term (far below the
        # 100 kW step granularity) keeps every upgrade binary objective-bearing
        # so the search stays guided, without ever changing the kW ranking
        obj = {ix: 1e-4 * coef for ix, coef in cost.items()}
        for gid, ixs in fs.steps.items():
            mg = network.microgrids[gid]
            if mg.is_existing:
                continue
            w = mg.step_capacity_kva * len(network.buses[mg.bus].phases)
            for ix in ixs:
                obj[ix] = obj.get(ix, 0.0) + w
        model.set_objective(obj)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    return MasterProblem(model, network, params, list(scenarios), reduced, fs,
                         blocks, objective)


def _served_objective(network: Network, blocks) -> dict[int, float]:
    """Maximize served power: critical fraction dominates, total breaks ties."""
    crit_total = sum(
        sum(v.real for v in l.demand_pu.values())
        for l in network.loads.values() if l.is_critical
    )
    total = sum(
        sum(v.real for v in l.demand_pu.values()) for l in network.loads.values()
    )
    obj: dict[int, float] = {}
    for blk in blocks.values():
        for lid, yix in blk.vars.y.items():
            load = network.loads[lid]
            d = sum(v.real for v in load.demand_pu.values())
            w = d / total if total > 0 else 0.0
            if load.is_critical and crit_total > 0:
                w += 1000.0 * d / crit_total
            if w != 0.0:
                obj[yix] = obj.get(yix, 0.0) - w
    return obj


def master_dimensions(network: Network, scenarios: list[DamageScenario],
                      params: DesignParams) -> dict[str, int]:
    """Exact variable/constraint counts of build_master with the default
    objective, before any lazy cycle cuts or optional budget row."""
    net = network
    reduced = aggregate_parallel_edges(net)
    n_cand = sum(1 for l in net.lines.values() if l.is_candidate)
    n_hard = sum(
        1 for l in net.lines.values()
        if l.hardenable and l.damageable and not l.is_candidate
    )
    n_steps = sum(g.max_steps for g in net.microgrids.values())
    line_phases = sum(len(l.phases) for l in net.lines.values())
    multi_line_phases = sum(
        len(l.phases) for l in net.lines.values() if len(l.phases) >= 2
    )
    bus_phases = sum(len(b.phases) for b in net.buses.values())
    mg_bus_phases = sum(
        len(net.buses[b].phases)
        for b in {g.bus for g in net.microgrids.values()}
    )
    nl, ne, nload = len(net.buses), len(net.lines), len(net.loads)

    fs_vars = n_cand + n_hard + n_steps
    fs_rows = sum(g.max_steps - 1 for g in net.microgrids.values())
    scen_vars = 5 * ne + len(reduced.edges) + 2 * line_phases + 5 * bus_phases + nload
    damaged_counts = sum(len(s.damaged_line_ids) for s in scenarios)
    s = len(scenarios)
    scen_rows = s * (
        8 * line_phases          # octagon
        + ne                     # direction
        + ne                     # switching/damage
        + 4 * multi_line_phases  # imbalance
        + 2 * line_phases        # voltage
        + ne                     # reduced-edge links
        + 4 * bus_phases         # load definition + balance (re+im)
        + 2 * mg_bus_phases      # generation caps
        + 2                      # resilience
        + n_cand + n_hard        # master links
    ) + damaged_counts           # extra damaged-line link rows
    return {
        "variables": fs_vars + s * scen_vars,
        "constraints": fs_rows + scen_rows,
        "binaries": fs_vars + s * (5 * ne + nload),
        "first_stage_variables": fs_vars,
        "nodes": nl,
    }
