"""Release gates.

Each test is one shipping criterion, so ``pytest -v`` prints a single
pass/fail line per criterion.  Expected values are frozen from
independent derivations (brute-force enumeration, hand arithmetic on the
presets); tolerances are pinned next to each assertion.
"""
import dataclasses
import time

import pytest

from paces import (
    EventScript,
    InfeasibleError,
    PrivacyScenario,
    ScenarioSet,
    ScenarioSolveOptions,
    ScriptedStart,
    SolveConfig,
    backward_recursion,
    brute_force_solve,
    candidate_scenarios,
    load_config,
    random_small_instance,
    scenario_load,
    simulate,
    solve_with_scenarios,
    sweep_battery,
)
from paces.cli import main as cli_main


def plain_band(n_ns):
    return ScenarioSet((PrivacyScenario.inactive(n_ns),))


def test_criterion_1_backward_pass_matches_brute_force():
    start = time.perf_counter()
    feasible = both_infeasible = 0
    for seed in range(100):
        instance = random_small_instance(seed)
        config = SolveConfig(instance=instance,
                             scenarios=plain_band(len(instance.ns_appliances)))
        oracle = brute_force_solve(config)
        try:
            value = backward_recursion(config).initial_value()
        except InfeasibleError:
            assert not oracle.feasible, f"seed {seed}: oracle disagrees"
            both_infeasible += 1
            continue
        assert oracle.feasible, f"seed {seed}: oracle disagrees"
        assert value == pytest.approx(oracle.controllable_cost, abs=1e-9), (
            f"seed {seed}")
        feasible += 1
    assert feasible + both_infeasible == 100
    assert feasible >= 90
    assert time.perf_counter() - start < 60.0


def test_criterion_2_privacy_band_holds_for_every_placement():
    cfg = load_config("section-iv-a")
    result = solve_with_scenarios(cfg.instance, cfg.options, cfg.state_cap)
    instance = cfg.instance
    lam = instance.policy.lambda_w
    l_bar = instance.policy.l_bar_w
    assert lam == 80.0
    tol = 1e-9 * max(1.0, lam, l_bar)
    placements = candidate_scenarios(instance.ns_appliances, instance.grid,
                                     include_inactive=True)
    assert len(placements) == 49
    breaches = 0
    for phi in placements:
        for t in range(1, instance.grid.tau + 1):
            load = (result.solution.base_load_w[t - 1]
                    + scenario_load(phi, instance.ns_appliances, t))
            if abs(load - l_bar) > lam + tol:
                breaches += 1
    assert breaches == 0


def test_criterion_3_refinement_terminates_with_monotone_cost():
    solved = 0
    for seed in range(200, 250):
        instance = random_small_instance(seed)
        try:
            result = solve_with_scenarios(
                instance, ScenarioSolveOptions(mode="guaranteed"))
        except InfeasibleError:
            continue
        solved += 1
        rows = result.trace.records
        candidates = candidate_scenarios(instance.ns_appliances,
                                         instance.grid)
        assert len(rows) <= len(candidates) + 1, f"seed {seed}"
        assert [r.omega_size for r in rows] == list(range(len(rows))), (
            f"seed {seed}: scenario set must grow by one per iteration")
        added = [r.scenario for r in rows if r.scenario is not None]
        assert len(set(added)) == len(added), f"seed {seed}"
        costs = [r.f1_cost for r in rows]
        for earlier, later in zip(costs, costs[1:]):
            assert later >= earlier - 1e-9, (
                f"seed {seed}: cost dropped along the trace {costs}")
    assert solved >= 40


def test_criterion_4_unhardened_schedule_breaches_hardened_does_not():
    cfg = load_config("motivating-example")
    lam = cfg.instance.policy.lambda_w
    assert lam == 40000.0
    unhardened = solve_with_scenarios(
        cfg.instance, ScenarioSolveOptions(max_solves=1), cfg.state_cap)
    hardened = solve_with_scenarios(cfg.instance, cfg.options, cfg.state_cap)

    def replay(result, slot):
        script = EventScript(events=(ScriptedStart("beta", slot),))
        return simulate(result.table, script, result.config)

    unhardened_reports = [replay(unhardened, slot) for slot in (2, 3)]
    assert sum(r.breach_count for r in unhardened_reports) >= 1
    assert max(r.max_abs_gap_w for r in unhardened_reports) == pytest.approx(
        50000.0, abs=1e-9)
    for slot in (2, 3):
        report = replay(hardened, slot)
        assert report.breach_count == 0
        assert report.max_abs_gap_w <= lam + 1e-9 * max(1.0, lam)


def test_criterion_5_battery_sweep_converges_and_ns_costs_more():
    cfg = load_config("section-iv-a")
    capacities = (250.0, 500.0, 750.0, 1000.0)
    with_ns = sweep_battery(cfg.instance, capacities, cfg.options,
                            cfg.state_cap)
    assert all(p.feasible for p in with_ns)
    totals = [p.expected_total_cost for p in with_ns]
    assert totals[0] == pytest.approx(0.026494508333333326, abs=1e-12)
    assert totals[-1] == pytest.approx(0.025359218333333336, abs=1e-12)
    for earlier, later in zip(totals, totals[1:]):
        assert later <= earlier + 1e-12
    assert abs(totals[-1] - totals[-2]) < 1e-3 * abs(totals[-2])

    bare = dataclasses.replace(cfg.instance, ns_appliances=())
    without_ns = sweep_battery(bare, capacities, cfg.options, cfg.state_cap)
    assert all(p.feasible for p in without_ns)
    assert without_ns[0].expected_total_cost == pytest.approx(
        0.02092751, abs=1e-12)
    assert without_ns[-1].expected_total_cost == pytest.approx(
        0.019967220000000004, abs=1e-12)
    for full_point, bare_point in zip(with_ns, without_ns):
        assert (bare_point.expected_total_cost
                <= full_point.expected_total_cost + 1e-12)


def test_criterion_6_every_schedule_is_one_contiguous_block():
    instances = [load_config(name).instance
                 for name in ("motivating-example", "section-iv-a",
                              "table-ii")]
    instances += [random_small_instance(seed) for seed in range(300, 320)]
    checked = 0
    for instance in instances:
        try:
            result = solve_with_scenarios(instance)
        except InfeasibleError:
            continue
        solution = result.solution
        tau = instance.grid.tau
        for i, appliance in enumerate(instance.appliances):
            starts = [t for t, decision in enumerate(solution.decisions,
                                                     start=1)
                      if decision.starts[i]]
            assert len(starts) == 1, (
                f"{appliance.id} must start exactly once, got {starts}")
            assert starts[0] + appliance.duration_slots - 1 <= tau
        assert all(r == 0 for r in solution.states[-1].remaining)
        checked += 1
    assert checked >= 20


def test_criterion_7_solve_artifacts_are_byte_identical(tmp_path, capsys):
    def run(out_dir):
        code = cli_main(["solve", "--config", "section-iv-a",
                         "--out", str(out_dir)])
        capsys.readouterr()
        assert code == 0
        return {name: (out_dir / name).read_bytes()
                for name in ("solution.json", "trace.json", "report.csv")}

    assert run(tmp_path / "first") == run(tmp_path / "second")
