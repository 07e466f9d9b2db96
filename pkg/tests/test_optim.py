"""QP interior point, complementarity branch-and-bound, and the flow repair."""

import numpy as np
import pytest

from capfirm.optim import (
    QpProblem,
    ScenarioChain,
    SocChainHints,
    SolveStatus,
    comp_violations,
    dump_problem,
    load_problem,
    repair_simultaneous_flow,
    solve_miqp,
    solve_qp,
)

from oracles import (
    dense_grid_qp,
    enumerate_miqp,
    projected_descent_qp,
    random_box_qp,
    random_storage_miqp,
)


class TestSolveQpBasics:
    def test_active_bound(self):
        # min (x-1)^2 s.t. x <= 0 -> x = 0 (squared value 1)
        prob = QpProblem(q=[1.0], c=[-2.0], ub=[0.0])
        sol = solve_qp(prob)
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.x[0] == pytest.approx(0.0, abs=1e-7)
        assert (sol.x[0] - 1.0) ** 2 == pytest.approx(1.0, abs=1e-6)

    def test_symmetric_equality(self):
        prob = QpProblem(q=[1.0, 1.0], c=[0.0, 0.0],
                         a_eq=[[1.0, 1.0]], b_eq=[2.0])
        sol = solve_qp(prob)
        assert np.allclose(sol.x, [1.0, 1.0], atol=1e-7)
        assert sol.objective == pytest.approx(2.0, abs=1e-7)

    def test_lp_corner(self):
        prob = QpProblem(q=[0.0, 0.0], c=[1.0, 2.0], lb=[0.5, -1.0], ub=[4.0, 4.0])
        sol = solve_qp(prob)
        assert np.allclose(sol.x, [0.5, -1.0], atol=1e-6)

    def test_unbounded(self):
        prob = QpProblem(q=[0.0], c=[1.0], ub=[0.0])
        sol = solve_qp(prob)
        assert sol.status is SolveStatus.UNBOUNDED

    def test_infeasible_with_certificate(self):
        prob = QpProblem(q=[1.0], c=[0.0],
                         a_ub=[[1.0], [-1.0]], b_ub=[-1.0, -1.0])
        sol = solve_qp(prob)
        assert sol.status is SolveStatus.INFEASIBLE
        assert "certificate" in sol.message

    def test_kkt_residuals_within_contract(self):
        rng = np.random.default_rng(3)
        q, c, a, b, lb, ub = random_box_qp(rng, 8)
        sol = solve_qp(QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub))
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.residuals.primal <= 1e-6
        assert sol.residuals.dual <= 1e-6
        assert sol.residuals.comp_gap <= 1e-6

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(11)
        q, c, a, b, lb, ub = random_box_qp(rng, 10)
        prob = QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub)
        s1 = solve_qp(prob)
        s2 = solve_qp(prob)
        assert np.array_equal(s1.x, s2.x)
        assert s1.objective == s2.objective

    def test_objective_scaling_leaves_argmin(self):
        rng = np.random.default_rng(7)
        q, c, a, b, lb, ub = random_box_qp(rng, 6)
        s1 = solve_qp(QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub))
        lam = 37.5
        s2 = solve_qp(QpProblem(q=lam * q, c=lam * c, a_ub=a, b_ub=b, lb=lb, ub=ub))
        assert np.allclose(s1.x, s2.x, atol=1e-6)
        assert s2.objective == pytest.approx(lam * s1.objective, rel=1e-6)


class TestSolveQpAgainstOracles:
    def test_tiny_instances_vs_dense_grid(self):
        rng = np.random.default_rng(2024)
        for _ in range(6):
            q, c, a, b, lb, ub = random_box_qp(rng, 3)
            prob = QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub)
            sol = solve_qp(prob)
            ref = dense_grid_qp(q, c, a, b, lb, ub)
            assert ref is not None
            ref_obj = prob.objective(ref)
            assert sol.objective <= ref_obj + 1e-4

    def test_random_instances_vs_projected_descent(self):
        rng = np.random.default_rng(42)
        for k in range(12):
            n = int(rng.integers(4, 13))
            q, c, a, b, lb, ub = random_box_qp(rng, n)
            prob = QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub)
            sol = solve_qp(prob)
            assert sol.status is SolveStatus.OPTIMAL, f"instance {k}"
            ref = projected_descent_qp(q, c, a, b, lb, ub)
            assert abs(sol.objective - prob.objective(ref)) <= 1e-4, f"instance {k}"


class TestSolveMiqp:
    def test_no_pairs_reduces_to_qp(self):
        rng = np.random.default_rng(5)
        q, c, a, b, lb, ub = random_box_qp(rng, 6)
        prob = QpProblem(q=q, c=c, a_ub=a, b_ub=b, lb=lb, ub=ub)
        assert solve_miqp(prob).objective == solve_qp(prob).objective

    def test_forced_simultaneous_flow_toy(self):
        # one period: net battery flow to the grid side is pinned by an
        # equality while the cost rewards both flows, so the relaxation
        # churns; the true optimum fixes the discharge side to zero
        prob = QpProblem(
            q=[0.0, 0.0], c=[-0.1, -0.2],
            a_eq=[[1.0, -1.0]], b_eq=[3.0],      # cha - dis = 3
            lb=[0.0, 0.0], ub=[5.0, 5.0],
            comp_pairs=((0, 1),))
        rel = solve_qp(prob)
        assert min(rel.x) > 1e-3                 # relaxation really churns
        ref_obj, _ = enumerate_miqp(prob)
        sol = solve_miqp(prob)
        assert sol.status in (SolveStatus.OPTIMAL, SolveStatus.OPTIMAL_REPAIRED)
        assert sol.objective == pytest.approx(ref_obj, abs=1e-6)
        assert np.max(comp_violations(prob, sol.x)) <= 1e-6 * 5.0

    def test_random_storage_instances_match_enumeration(self):
        rng = np.random.default_rng(123)
        for k in range(12):
            t_n = int(rng.integers(2, 7))
            prob = random_storage_miqp(rng, t_n)
            ref_obj, _ = enumerate_miqp(prob)
            sol = solve_miqp(prob)
            if ref_obj == np.inf:
                assert sol.status is SolveStatus.INFEASIBLE, f"instance {k}"
                continue
            assert sol.objective <= ref_obj + 1e-5 * (1 + abs(ref_obj)), f"instance {k}"
            assert sol.objective >= ref_obj - 1e-5 * (1 + abs(ref_obj)), f"instance {k}"
            viol = comp_violations(prob, sol.x)
            assert np.max(viol) <= 1e-5, f"instance {k}"

    def test_node_limit_reported(self):
        rng = np.random.default_rng(9)
        prob = random_storage_miqp(rng, 6)
        sol = solve_miqp(prob, node_limit=2)
        assert sol.status in (SolveStatus.OPTIMAL, SolveStatus.OPTIMAL_REPAIRED,
                              SolveStatus.NODE_LIMIT_INCUMBENT,
                              SolveStatus.NODE_LIMIT_NO_INCUMBENT,
                              SolveStatus.INFEASIBLE)

    def test_determinism(self):
        rng = np.random.default_rng(31)
        prob = random_storage_miqp(rng, 5)
        s1 = solve_miqp(prob)
        s2 = solve_miqp(prob)
        assert s1.status == s2.status
        if s1.status is not SolveStatus.INFEASIBLE:
            assert np.array_equal(s1.x, s2.x)
            assert s1.bnb.nodes == s2.bnb.nodes


def _two_period_chain_problem(pv_caps, soc_max, dis_cap=10.0):
    """Variables per period: [p, pv, cha, dis, soc]; eta 0.9, dt 1 h."""
    eta = 0.9
    n = 10
    idx_p = np.array([0, 5])
    idx_pv = np.array([1, 6])
    idx_cha = np.array([2, 7])
    idx_dis = np.array([3, 8])
    idx_soc = np.array([4, 9])
    lb = np.full(n, 0.0)
    ub = np.zeros(n)
    lb[idx_p] = -10.0
    ub[idx_p] = 10.0
    ub[idx_pv] = pv_caps
    ub[idx_cha] = 10.0
    ub[idx_dis] = dis_cap
    ub[idx_soc] = soc_max
    lb[idx_soc[-1]] = 0.0
    ub[idx_soc[-1]] = 0.0
    rows, rhs = [], []
    for t in range(2):
        row = np.zeros(n)
        row[idx_p[t]], row[idx_pv[t]], row[idx_dis[t]], row[idx_cha[t]] = 1, -1, -1, 1
        rows.append(row)
        rhs.append(0.0)
        row = np.zeros(n)
        row[idx_soc[t]] = 1.0
        if t:
            row[idx_soc[t - 1]] = -1.0
        row[idx_cha[t]] = -eta
        row[idx_dis[t]] = 1 / eta
        rows.append(row)
        rhs.append(0.0)
    prob = QpProblem(q=np.zeros(n), c=np.zeros(n),
                     a_eq=np.array(rows), b_eq=np.array(rhs), lb=lb, ub=ub,
                     comp_pairs=((2, 3), (7, 8)))
    hints = SocChainHints(
        chains=(ScenarioChain(idx_cha, idx_dis, idx_pv, idx_soc,
                              pair_idx=np.array([0, 1])),),
        eta_charge=eta, eta_discharge=eta, delta_t_hours=1.0,
        soc_min_kwh=0.0, soc_max_kwh=soc_max, soc_end_kwh=0.0)
    return prob, hints


class TestRepairSimultaneousFlow:
    def test_identity_when_clean(self):
        prob, hints = _two_period_chain_problem(np.array([10.0, 0.0]), soc_max=10.0)
        x = np.zeros(10)
        x[[1, 2, 4]] = [8.0, 8.0, 0.9 * 8.0]      # clean charge from pv
        x[0] = 0.0
        x[8] = 0.9 * 8.0 * 0.9                     # clean final discharge
        x[5] = x[8]
        out = repair_simultaneous_flow(prob, x, hints)
        assert out.resolved
        assert np.array_equal(out.x, x)

    def test_flux_preserving_repair_with_pv_headroom(self):
        prob, hints = _two_period_chain_problem(np.array([10.0, 0.0]), soc_max=10.0)
        eta = 0.9
        x = np.zeros(10)
        # period 0: pv 8, cha 4, dis 1 -> production 5, simultaneous flow
        x[[0, 1, 2, 3]] = [5.0, 8.0, 4.0, 1.0]
        s0 = eta * 4.0 - 1.0 / eta
        x[4] = s0
        d1 = s0 * eta
        x[[5, 8]] = [d1, d1]
        x[9] = 0.0
        out = repair_simultaneous_flow(prob, x, hints)
        assert out.resolved
        # discharge side cleared, flux preserved, production untouched
        assert out.x[3] == pytest.approx(0.0, abs=1e-12)
        assert out.x[2] == pytest.approx(4.0 - 1.0 / (eta * eta), abs=1e-9)
        assert out.x[1] == pytest.approx(8.0 - (1.0 / (eta * eta) - 1.0), abs=1e-9)
        assert out.x[0] == 5.0
        assert out.x[4] == pytest.approx(s0, abs=1e-9)
        assert out.x[9] == pytest.approx(0.0, abs=1e-9)

    def test_symmetric_repair_capped_by_soc_headroom(self):
        # no PV anywhere blocks the flux-preserving stage; the symmetric
        # reduction is capped by d * (1/eta - eta) * dt = SoC headroom and
        # the period stays flagged for branching
        eta = 0.9
        soc_max = 2.5
        prob, hints = _two_period_chain_problem(np.array([0.0, 0.0]), soc_max)
        x = np.zeros(10)
        x[[0, 2, 3]] = [-3.0, 5.0, 2.0]           # withdraw 3, churn 5/2
        s0 = eta * 5.0 - 2.0 / eta
        x[4] = s0
        x[[5, 8]] = [s0 * eta, s0 * eta]
        x[9] = 0.0
        # make period 1 impossible to shed into: discharge already at cap
        x_in = x.copy()
        out = repair_simultaneous_flow(prob, x_in, hints)
        coef = 1.0 / eta - eta
        d_expected = (soc_max - s0) / coef
        assert not out.resolved
        assert out.x[2] == pytest.approx(5.0 - d_expected, abs=1e-9)
        assert out.x[3] == pytest.approx(2.0 - d_expected, abs=1e-9)
        assert out.x[0] == -3.0                    # production untouched


class TestDumpRoundTrip:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        prob = random_storage_miqp(rng, 3)
        path = tmp_path / "problem.txt"
        dump_problem(prob, path)
        back = load_problem(path)
        assert np.allclose(back.q, prob.q)
        assert np.allclose(back.c, prob.c)
        assert np.allclose(back.a_eq.toarray(), prob.a_eq.toarray())
        assert np.allclose(back.lb, prob.lb)
        assert np.allclose(back.ub, prob.ub)
        assert back.comp_pairs == prob.comp_pairs
        s1 = solve_miqp(prob)
        s2 = solve_miqp(back)
        assert s1.objective == pytest.approx(s2.objective, abs=1e-9)
