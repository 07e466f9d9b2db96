"""Oracle intraday controller: perfect-knowledge dispatch of a fixed plan.

Given the committed engagement and the realized PV of the day, the controller
dispatches the battery and curtailment to maximize net remuneration. Under
perfect knowledge the receding-horizon re-solve collapses to one whole-day
problem: the first-period set-points of every re-solve coincide with the
single solve's trajectory, at a fraction of the cost.

Day economics are computed ex post from the returned trace through the
domain remuneration rules, never from the solver objective, so grading stays
decoupled from optimization.
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
    net_remuneration_series,
    penalty_series,
)
from .optim import (
    QpProblem,
    QpSolution,
    ScenarioChain,
    SocChainHints,
    SolveStatus,
    solve_miqp,
)


class ControlInfeasibleError(RuntimeError):
    """The engagement cannot be honored; carries the offending period."""

    def __init__(self, message: str, period: int | None = None):
        super().__init__(message)
        self.period = period


@dataclass(frozen=True)
class DayEconomics:
    """Ex-post money and energy figures of one controlled day."""

    gross_revenue_eur: float       # signed: withdrawals cost money
    export_revenue_eur: float      # price times exported energy only
    penalty_eur: float
    net_revenue_eur: float         # gross minus penalty
    export_kwh: float
    withdrawal_kwh: float
    discharged_kwh: float


@dataclass(frozen=True)
class ControlResult:
    trace: DispatchTrace
    economics: DayEconomics
    objective: float
    status: SolveStatus
    solution: QpSolution


def day_economics(trace: DispatchTrace, engagement: EngagementPlan,
                  policy: TariffPolicy, grid: TimeGrid) -> DayEconomics:
    """Grade a dispatch trace against its engagement under the tariff."""
    dt = grid.delta_t_hours
    price_kwh = policy.price_eur_mwh / 1000.0
    p = trace.production_kw
    gross = dt * price_kwh * p
    exported = dt * np.maximum(p, 0.0)
    withdrawn = dt * np.maximum(-p, 0.0)
    penalties = penalty_series(engagement.values_kw, p, policy, grid)
    net = net_remuneration_series(engagement.values_kw, p, policy, grid)
    return DayEconomics(
        gross_revenue_eur=float(np.sum(gross)),
        export_revenue_eur=float(np.sum(exported * price_kwh)),
        penalty_eur=float(np.sum(penalties)),
        net_revenue_eur=float(np.sum(net)),
        export_kwh=float(np.sum(exported)),
        withdrawal_kwh=float(np.sum(withdrawn)),
        discharged_kwh=float(dt * np.sum(trace.discharge_kw)),
    )


def build_control_qp(
    engagement: EngagementPlan,
    realized_pv_kw: np.ndarray,
    policy: TariffPolicy,
    system: SystemConfig,
    grid: TimeGrid,
) -> tuple[QpProblem, SocChainHints]:
    """Whole-day dispatch problem with the engagement entering as data.

    Variable layout per period: production, underdev, pv_used, charge,
    discharge, soc (6*T variables). The production cap folds the engagement
    deadband top into the variable bound; engagement ramp rows disappear
    entirely since the engagement is no longer a variable.
    """
    t_n = grid.n_periods
    eng = engagement.values_kw
    pv = np.asarray(realized_pv_kw, dtype=float)
    if eng.shape[0] != t_n or pv.shape[0] != t_n:
        raise ShapeError("engagement/realized PV length must match the grid")

    n = 6 * t_n
    offs = np.arange(t_n)
    i_p, i_dev, i_pv = offs, t_n + offs, 2 * t_n + offs
    i_cha, i_dis, i_soc = 3 * t_n + offs, 4 * t_n + offs, 5 * t_n + offs
    dt = grid.delta_t_hours
    price_kwh = policy.price_eur_mwh / 1000.0
    band = policy.deadband_kw

    q = np.zeros(n)
    c = np.zeros(n)
    c[i_p] = -dt * price_kwh
    dev_coef = dt * price_kwh / policy.pv_capacity_kw
    q[i_dev] = dev_coef
    c[i_dev] = 4.0 * band * dev_coef

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[i_p] = policy.prod_min_kw
    ub[i_p] = np.minimum(policy.prod_max_kw, eng + band)
    lb[i_dev] = 0.0
    lb[i_pv] = 0.0
    ub[i_pv] = np.clip(pv, 0.0, None)
    lb[i_cha] = 0.0
    ub[i_cha] = system.charge_power_kw
    lb[i_dis] = 0.0
    ub[i_dis] = system.discharge_power_kw
    lb[i_soc] = system.bess_min_kwh
    ub[i_soc] = system.soc_max_kwh
    lb[i_soc[-1]] = system.soc_end_kwh
    ub[i_soc[-1]] = system.soc_end_kwh

    rows, cols, data, rhs = [], [], [], []
    for t in range(t_n):
        rows.extend([t, t])
        cols.extend([i_p[t], i_dev[t]])
        data.extend([-1.0, -1.0])
        rhs.append(band - eng[t])
    a_ub = sp.csr_matrix((data, (rows, cols)), shape=(t_n, n))
    b_ub = np.array(rhs)

    rows, cols, data, rhs = [], [], [], []
    row = 0
    eta_c, eta_d = system.eta_charge, system.eta_discharge
    for t in range(t_n):
        rows.extend([row] * 4)
        cols.extend([i_p[t], i_pv[t], i_dis[t], i_cha[t]])
        data.extend([1.0, -1.0, -1.0, 1.0])
        rhs.append(0.0)
        row += 1
        cc = [i_soc[t], i_cha[t], i_dis[t]]
        dd = [1.0, -dt * eta_c, dt / eta_d]
        if t:
            cc.append(i_soc[t - 1])
            dd.append(-1.0)
            rhs.append(0.0)
        else:
            rhs.append(system.soc_init_kwh)
        rows.extend([row] * len(cc))
        cols.extend(cc)
        data.extend(dd)
        row += 1
    a_eq = sp.csr_matrix((data, (rows, cols)), shape=(row, n))
    b_eq = np.array(rhs)

    pairs = tuple((int(i_cha[t]), int(i_dis[t])) for t in range(t_n))
    problem = QpProblem(q=q, c=c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
                        lb=lb, ub=ub, comp_pairs=pairs)
    hints = SocChainHints(
        chains=(ScenarioChain(charge_idx=i_cha, discharge_idx=i_dis,
                              pv_idx=i_pv, soc_idx=i_soc,
                              pair_idx=np.arange(t_n)),),
        eta_charge=eta_c, eta_discharge=eta_d, delta_t_hours=dt,
        soc_min_kwh=system.bess_min_kwh, soc_max_kwh=system.soc_max_kwh,
        soc_end_kwh=system.soc_end_kwh)
    return problem, hints


def oracle_control(
    engagement: EngagementPlan,
    realized_pv_kw,
    policy: TariffPolicy,
    system: SystemConfig,
    grid: TimeGrid,
    node_limit: int = 1000,
) -> ControlResult:
    """Dispatch one day optimally against the realized PV.

    Raises :class:`ControlInfeasibleError` when the engagement cannot be
    honored even with the full battery, identifying the period when the
    cause is a per-period production floor.
    """
    pv = np.asarray(realized_pv_kw, dtype=float)
    problem, hints = build_control_qp(engagement, pv, policy, system, grid)
    sol = solve_miqp(problem, node_limit=node_limit, soc_hints=hints)
    if sol.status in (SolveStatus.INFEASIBLE, SolveStatus.NODE_LIMIT_NO_INCUMBENT):
        for t in range(grid.n_periods):
            if policy.prod_min_kw[t] > pv[t] + system.discharge_power_kw + 1e-9:
                raise ControlInfeasibleError(
                    f"production floor unreachable at period {t}", period=t)
        raise ControlInfeasibleError(
            "dispatch infeasible (energy-coupled: battery cannot honor the floors)")

    t_n = grid.n_periods
    offs = np.arange(t_n)
    production = sol.x[offs]
    trace = DispatchTrace(
        production_kw=production,
        pv_used_kw=np.maximum(sol.x[2 * t_n + offs], 0.0),
        charge_kw=np.maximum(sol.x[3 * t_n + offs], 0.0),
        discharge_kw=np.maximum(sol.x[4 * t_n + offs], 0.0),
        soc_kwh=sol.x[5 * t_n + offs],
        underdev_kw=np.maximum((engagement.values_kw - policy.deadband_kw)
                               - production, 0.0),
    )
    trace.validate(grid, system, tol=1e-6)
    econ = day_economics(trace, engagement, policy, grid)
    return ControlResult(trace=trace, economics=econ, objective=sol.objective,
                         status=sol.status, solution=sol)
