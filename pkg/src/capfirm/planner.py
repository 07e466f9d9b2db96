"""Day-ahead engagement planning as a structured QP with battery pairs.

One instance plans a single day on the tariff's time grid. The stochastic
mode ("S") couples a shared engagement profile with one dispatch recourse per
PV scenario; the deterministic modes ("D" on a point forecast, "Dstar" on the
realized PV) are the single-scenario special case of the same build.

Variable layout (documented because the problem dump refers to flat indices):
the T engagement variables come first, then per scenario a block of six
period series in the order production, underdeviation, pv_used, charge,
discharge, soc. With T periods and S scenarios the problem has
``T + 6*T*S`` variables, ``2*(T-1) + 2*T*S`` inequality rows (engagement
ramps plus the deadband rows linking production to the engagement) and
``2*T*S`` equality rows (power balance and the SoC recursion); every variable
additionally carries finite bounds, which the solver folds into slack rows
(about ``2*(T + 6*T*S)`` more). The terminal SoC is pinned to its boundary
value through its bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .domain import (
    DispatchTrace,
    EngagementPlan,
    ShapeError,
    SystemConfig,
    TariffPolicy,
    TimeGrid,
    check_engagement,
)
from .optim import (
    QpProblem,
    QpSolution,
    ScenarioChain,
    SocChainHints,
    SolveStatus,
    solve_miqp,
)
from .scenarios import ScenarioSet

MODES = ("S", "D", "Dstar")


class PlanningError(RuntimeError):
    """Planning failed; carries the first violated structural constraint."""

    def __init__(self, message: str, kind: str = "unknown", period: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.period = period


@dataclass(frozen=True)
class PlanningInstance:
    grid: TimeGrid
    policy: TariffPolicy
    system: SystemConfig
    scenarios: ScenarioSet
    mode: str = "S"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.scenarios.n_periods != self.grid.n_periods:
            raise ShapeError("scenario matrix width must equal the grid length")
        if self.mode in ("D", "Dstar"):
            if self.scenarios.n_scenarios != 1 or abs(self.scenarios.weights[0] - 1.0) > 1e-12:
                raise ValueError("deterministic modes take exactly one scenario of weight 1")


@dataclass(frozen=True)
class PlannerIndex:
    """Flat variable indices of the planning problem (see module docstring)."""

    n_periods: int
    n_scenarios: int
    eng: np.ndarray          # (T,)
    production: np.ndarray   # (S, T)
    underdev: np.ndarray
    pv_used: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray


@dataclass(frozen=True)
class PlanResult:
    engagement: EngagementPlan
    traces: tuple[DispatchTrace, ...]
    objective: float
    status: SolveStatus
    solution: QpSolution


def _build_index(n_periods: int, n_scenarios: int) -> PlannerIndex:
    t_n, s_n = n_periods, n_scenarios
    eng = np.arange(t_n)
    base = t_n + 6 * t_n * np.arange(s_n)[:, None]
    offs = np.arange(t_n)[None, :]
    return PlannerIndex(
        n_periods=t_n, n_scenarios=s_n, eng=eng,
        production=base + offs,
        underdev=base + t_n + offs,
        pv_used=base + 2 * t_n + offs,
        charge=base + 3 * t_n + offs,
        discharge=base + 4 * t_n + offs,
        soc=base + 5 * t_n + offs,
    )


def build_planning_qp(
    instance: PlanningInstance,
) -> tuple[QpProblem, SocChainHints, PlannerIndex]:
    """Assemble the day-ahead problem; see the module docstring for sizes."""
    grid, policy, system = instance.grid, instance.policy, instance.system
    scen = instance.scenarios
    t_n = grid.n_periods
    s_n = scen.n_scenarios
    idx = _build_index(t_n, s_n)
    n = t_n + 6 * t_n * s_n
    dt = grid.delta_t_hours
    price_kwh = policy.price_eur_mwh / 1000.0
    band = policy.deadband_kw

    q = np.zeros(n)
    c = np.zeros(n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)

    lb[idx.eng] = policy.eng_min_kw
    ub[idx.eng] = policy.eng_max_kw
    for w in range(s_n):
        weight = scen.weights[w]
        c[idx.production[w]] = -weight * dt * price_kwh
        dev_coef = weight * dt * price_kwh / policy.pv_capacity_kw
        q[idx.underdev[w]] = dev_coef
        c[idx.underdev[w]] = 4.0 * band * dev_coef
        lb[idx.production[w]] = policy.prod_min_kw
        ub[idx.production[w]] = policy.prod_max_kw
        lb[idx.underdev[w]] = 0.0
        lb[idx.pv_used[w]] = 0.0
        ub[idx.pv_used[w]] = scen.values_kw[w]
        lb[idx.charge[w]] = 0.0
        ub[idx.charge[w]] = system.charge_power_kw
        lb[idx.discharge[w]] = 0.0
        ub[idx.discharge[w]] = system.discharge_power_kw
        lb[idx.soc[w]] = system.bess_min_kwh
        ub[idx.soc[w]] = system.soc_max_kwh
        lb[idx.soc[w][-1]] = system.soc_end_kwh
        ub[idx.soc[w][-1]] = system.soc_end_kwh

    rows, cols, data, rhs = [], [], [], []
    row = 0

    def add_entries(r, cc, dd):
        rows.extend([r] * len(cc))
        cols.extend(cc)
        data.extend(dd)

    # engagement ramps (both signs), deactivated at the first period
    for t in range(1, t_n):
        add_entries(row, [idx.eng[t], idx.eng[t - 1]], [1.0, -1.0])
        rhs.append(policy.ramp_limit_kw[t])
        row += 1
        add_entries(row, [idx.eng[t - 1], idx.eng[t]], [1.0, -1.0])
        rhs.append(policy.ramp_limit_kw[t])
        row += 1
    # deadband rows per scenario: underdev >= (eng - band) - production and
    # production <= eng + band (overproduction is never optimal: curtailment
    # is free, so the cap eliminates it outright)
    for w in range(s_n):
        for t in range(t_n):
            add_entries(row, [idx.eng[t], idx.production[w][t], idx.underdev[w][t]],
                        [1.0, -1.0, -1.0])
            rhs.append(band)
            row += 1
            add_entries(row, [idx.production[w][t], idx.eng[t]], [1.0, -1.0])
            rhs.append(band)
            row += 1
    a_ub = sp.csr_matrix((data, (rows, cols)), shape=(row, n))
    b_ub = np.array(rhs)

    rows, cols, data, rhs = [], [], [], []
    row = 0
    eta_c, eta_d = system.eta_charge, system.eta_discharge
    for w in range(s_n):
        for t in range(t_n):
            add_entries(row, [idx.production[w][t], idx.pv_used[w][t],
                              idx.discharge[w][t], idx.charge[w][t]],
                        [1.0, -1.0, -1.0, 1.0])
            rhs.append(0.0)
            row += 1
            cc = [idx.soc[w][t], idx.charge[w][t], idx.discharge[w][t]]
            dd = [1.0, -dt * eta_c, dt / eta_d]
            if t:
                cc.append(idx.soc[w][t - 1])
                dd.append(-1.0)
                rhs.append(0.0)
            else:
                rhs.append(system.soc_init_kwh)
            add_entries(row, cc, dd)
            row += 1
    a_eq = sp.csr_matrix((data, (rows, cols)), shape=(row, n))
    b_eq = np.array(rhs)

    # pair order: period-major, then scenario; branching ties then resolve
    # toward the earliest period
    pairs = tuple((int(idx.charge[w][t]), int(idx.discharge[w][t]))
                  for t in range(t_n) for w in range(s_n))
    problem = QpProblem(q=q, c=c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
                        lb=lb, ub=ub, comp_pairs=pairs)
    chains = tuple(
        ScenarioChain(
            charge_idx=idx.charge[w], discharge_idx=idx.discharge[w],
            pv_idx=idx.pv_used[w], soc_idx=idx.soc[w],
            pair_idx=np.arange(t_n) * s_n + w)
        for w in range(s_n))
    hints = SocChainHints(
        chains=chains, eta_charge=eta_c, eta_discharge=eta_d,
        delta_t_hours=dt, soc_min_kwh=system.bess_min_kwh,
        soc_max_kwh=system.soc_max_kwh, soc_end_kwh=system.soc_end_kwh)
    return problem, hints, idx


def _diagnose_infeasibility(instance: PlanningInstance) -> tuple[str, int | None]:
    """Point at the first structurally impossible period, if identifiable."""
    grid, policy, system = instance.grid, instance.policy, instance.system
    scen_min = instance.scenarios.values_kw.min(axis=0)
    for t in range(grid.n_periods):
        if policy.prod_min_kw[t] > scen_min[t] + system.discharge_power_kw + 1e-9:
            return ("production floor above PV plus discharge power", t)
    lo = policy.eng_min_kw.copy()
    hi = policy.eng_max_kw.copy()
    for t in range(1, grid.n_periods):
        lo[t] = max(lo[t], lo[t - 1] - policy.ramp_limit_kw[t])
        hi[t] = min(hi[t], hi[t - 1] + policy.ramp_limit_kw[t])
        if lo[t] > hi[t] + 1e-9:
            return ("engagement bounds unreachable under ramp limits", t)
    return ("energy-coupled infeasibility (battery cannot honor the floors)", None)


def plan(instance: PlanningInstance, node_limit: int = 1000,
         repair_enabled: bool = True) -> PlanResult:
    """Solve the day-ahead problem and return a verified plan.

    The returned engagement always satisfies the tender ramp/bound rules and
    every per-scenario trace satisfies balance, SoC recursion, bounds and
    charge/discharge exclusivity to 1e-6; violations raise
    :class:`PlanningError` instead of returning silently wrong plans.
    """
    problem, hints, idx = build_planning_qp(instance)
    sol = solve_miqp(problem, node_limit=node_limit,
                     repair_enabled=repair_enabled, soc_hints=hints)
    if sol.status in (SolveStatus.INFEASIBLE, SolveStatus.NODE_LIMIT_NO_INCUMBENT,
                      SolveStatus.UNBOUNDED):
        kind, period = _diagnose_infeasibility(instance)
        raise PlanningError(f"planning failed ({sol.status.value}): {kind}",
                            kind=kind, period=period)

    engagement = EngagementPlan(sol.x[idx.eng])
    verdict = check_engagement(engagement, instance.policy)
    if not verdict.ok:
        raise PlanningError(
            f"solver returned an engagement violating {verdict.violation.kind} "
            f"at period {verdict.violation.period}",
            kind=verdict.violation.kind, period=verdict.violation.period)

    band = instance.policy.deadband_kw
    traces = []
    for w in range(idx.n_scenarios):
        production = sol.x[idx.production[w]]
        trace = DispatchTrace(
            production_kw=production,
            pv_used_kw=np.maximum(sol.x[idx.pv_used[w]], 0.0),
            charge_kw=np.maximum(sol.x[idx.charge[w]], 0.0),
            discharge_kw=np.maximum(sol.x[idx.discharge[w]], 0.0),
            soc_kwh=sol.x[idx.soc[w]],
            underdev_kw=np.maximum((engagement.values_kw - band) - production, 0.0),
        )
        trace.validate(instance.grid, instance.system, tol=1e-6)
        traces.append(trace)
    scale = max(instance.system.charge_power_kw, instance.system.discharge_power_kw)
    if sol.comp_violation > 1e-6 * max(1.0, scale):
        raise PlanningError("simultaneous charge/discharge beyond tolerance",
                            kind="complementarity")
    return PlanResult(engagement=engagement, traces=tuple(traces),
                      objective=sol.objective, status=sol.status, solution=sol)


def plan_deterministic(
    profile_kw,
    grid: TimeGrid,
    policy: TariffPolicy,
    system: SystemConfig,
    mode: str = "D",
    node_limit: int = 1000,
) -> PlanResult:
    """Single-scenario wrapper: D plans on a forecast, Dstar on measurements."""
    if mode not in ("D", "Dstar"):
        raise ValueError("deterministic planning mode must be 'D' or 'Dstar'")
    profile = np.asarray(profile_kw, dtype=float)
    instance = PlanningInstance(
        grid=grid, policy=policy, system=system,
        scenarios=ScenarioSet.single(np.clip(profile, 0.0, policy.pv_capacity_kw)),
        mode=mode)
    return plan(instance, node_limit=node_limit)
