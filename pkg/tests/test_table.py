"""Backward recursion: state grid, table cells, extraction, persistence."""
import dataclasses
import itertools
import json
import pickle

import numpy as np
import pytest

from paces import (Battery, ConfigError, Decision, InfeasibleError, Instance,
                   IntegrityError, ModelError, NonSchedulableAppliance,
                   PriceSignal, PrivacyPolicy, PrivacyScenario, ScenarioSet,
                   SchedulableAppliance, SolveConfig, StateSpaceError,
                   SystemState, TimeGrid, aggregated_load, appliance_load,
                   backward_recursion, brute_force_solve, candidate_scenarios,
                   enumerate_states, expected_total_cost, extract_schedule,
                   feasible_decisions, load_config, load_table,
                   model_fingerprint, privacy_gap, random_small_instance,
                   read_table_header, save_table, slot_cost, state_count,
                   step_battery, step_remaining, terminal_value)


def app(name, power, duration):
    return SchedulableAppliance(id=name, power_w=power,
                                workload_wh=power * duration,
                                duration_slots=duration)


def make_instance(tau=4, appliances=None, ns=(), battery=None, prices=None,
                  lam=1e9, l_bar=100.0):
    appliances = appliances if appliances is not None else (app("a1", 100.0, 2),)
    battery = battery or Battery(b_max_wh=100.0, b_init_wh=0.0,
                                 z_discharge_max_wh=50.0, z_charge_max_wh=50.0,
                                 grid_step_wh=50.0)
    prices = prices or (0.1,) * tau
    return Instance(grid=TimeGrid(tau=tau), appliances=tuple(appliances),
                    ns_appliances=tuple(ns), battery=battery,
                    price=PriceSignal(tuple(prices)),
                    policy=PrivacyPolicy(lambda_w=lam, l_bar_w=l_bar))


def motivating_instance():
    return load_config("motivating-example").instance


def band_set(n_ns):
    """Scenario set that turns the privacy band on without any usage."""
    return ScenarioSet((PrivacyScenario.inactive(n_ns),))


def full_omega(instance):
    """Inactive plus every candidate placement of the usage appliances."""
    omega = band_set(len(instance.ns_appliances))
    for sc in candidate_scenarios(instance.ns_appliances, instance.grid):
        omega = omega.with_scenario(sc)
    return omega


class TestStateEnumeration:
    def test_count_is_levels_times_remaining_vectors(self):
        battery = Battery(b_max_wh=100.0, b_init_wh=0.0, z_discharge_max_wh=50.0,
                          z_charge_max_wh=50.0, grid_step_wh=50.0)
        assert state_count((app("a", 100.0, 2),), battery) == 3 * 3
        assert state_count((app("a", 100.0, 1), app("b", 100.0, 2)),
                           battery) == 3 * 2 * 3
        assert state_count((), battery) == 3

    def test_published_grid_has_240_states(self):
        appliances = (app("a1", 35.38, 2), app("a2", 156.59, 3),
                      app("a3", 76.73, 4))
        battery = Battery(b_max_wh=750.0, b_init_wh=0.0,
                          z_discharge_max_wh=250.0, z_charge_max_wh=250.0,
                          grid_step_wh=250.0)
        count = state_count(appliances, battery)
        recount = len(list(itertools.product(
            range(battery.n_levels), range(3), range(4), range(5))))
        assert count == recount == 240
        assert len(enumerate_states(appliances, battery)) == 240

    def test_enumeration_is_battery_major_with_ascending_vectors(self):
        battery = Battery(b_max_wh=100.0, b_init_wh=0.0, z_discharge_max_wh=50.0,
                          z_charge_max_wh=50.0, grid_step_wh=50.0)
        states = enumerate_states((app("a", 100.0, 1),), battery)
        assert states == [
            SystemState(battery_wh=0.0, remaining=(0,)),
            SystemState(battery_wh=0.0, remaining=(1,)),
            SystemState(battery_wh=50.0, remaining=(0,)),
            SystemState(battery_wh=50.0, remaining=(1,)),
            SystemState(battery_wh=100.0, remaining=(0,)),
            SystemState(battery_wh=100.0, remaining=(1,)),
        ]

    def test_cap_rejects_oversized_grids(self):
        inst = make_instance()  # 3 levels x 3 vectors = 9 states
        with pytest.raises(StateSpaceError) as err:
            enumerate_states(inst.appliances, inst.battery, state_cap=8)
        assert err.value.count == 9 and err.value.cap == 8
        with pytest.raises(StateSpaceError):
            backward_recursion(SolveConfig(instance=inst, state_cap=8))

    def test_non_positive_cap_rejected(self):
        with pytest.raises(ModelError, match="state cap"):
            SolveConfig(instance=make_instance(), state_cap=0)


class TestModelFingerprint:
    def test_stable_across_rebuilds(self):
        assert (model_fingerprint(SolveConfig(instance=make_instance()))
                == model_fingerprint(SolveConfig(instance=make_instance())))

    def test_is_hex_digest(self):
        digest = model_fingerprint(SolveConfig(instance=make_instance()))
        assert len(digest) == 64
        assert set(digest) <= set("0123456789abcdef")

    def test_sensitive_to_every_ingredient(self):
        base = SolveConfig(instance=make_instance())
        variants = [
            SolveConfig(instance=make_instance(prices=(0.2, 0.1, 0.1, 0.1))),
            SolveConfig(instance=make_instance(lam=123.0)),
            SolveConfig(instance=make_instance(l_bar=321.0)),
            SolveConfig(instance=dataclasses.replace(
                make_instance(), battery=Battery(
                    b_max_wh=100.0, b_init_wh=50.0, z_discharge_max_wh=50.0,
                    z_charge_max_wh=50.0, grid_step_wh=50.0))),
            SolveConfig(instance=make_instance(), scenarios=band_set(0)),
            SolveConfig(instance=make_instance(),
                        objective_mode="worst-case-cost"),
        ]
        digests = {model_fingerprint(base)}
        for cfg in variants:
            digests.add(model_fingerprint(cfg))
        assert len(digests) == len(variants) + 1

    def test_scenario_weights_change_the_hash(self):
        inst = make_instance(ns=(NonSchedulableAppliance(
            id="n", power_w=50.0, runtime_slots=1, zone=(1, 2)),))
        omega = ScenarioSet((PrivacyScenario((1,)), PrivacyScenario((2,))))
        uniform = SolveConfig(instance=inst, scenarios=omega)
        skewed = SolveConfig(instance=inst, scenarios=omega,
                             scenario_weights=(0.75, 0.25))
        assert model_fingerprint(uniform) != model_fingerprint(skewed)


class TestTerminalValue:
    def one_slot_config(self):
        inst = make_instance(
            tau=1, appliances=(app("a", 100.0, 1),),
            battery=Battery(b_max_wh=100.0, b_init_wh=50.0,
                            z_discharge_max_wh=50.0, z_charge_max_wh=50.0,
                            grid_step_wh=50.0),
            prices=(0.2,))
        return SolveConfig(instance=inst)

    def test_forced_last_start_picks_cheapest_battery_move(self):
        config = self.one_slot_config()
        entry = terminal_value(SystemState(battery_wh=50.0, remaining=(1,)),
                               config)
        # grid search over the three reachable battery moves
        best = min(0.2 * (100.0 + k * 50.0) for k in (-1, 0, 1))
        assert entry.feasible
        assert entry.value == pytest.approx(best, abs=1e-12)
        assert entry.value == pytest.approx(10.0, abs=1e-12)
        assert entry.decision == Decision(starts=(True,), battery_delta_wh=-50.0)

    def test_finished_work_still_drains_the_battery(self):
        config = self.one_slot_config()
        entry = terminal_value(SystemState(battery_wh=50.0, remaining=(0,)),
                               config)
        assert entry.feasible
        assert entry.value == pytest.approx(-10.0, abs=1e-12)
        assert entry.decision == Decision(starts=(False,),
                                          battery_delta_wh=-50.0)

    def test_unstarted_long_appliance_is_infeasible_at_the_horizon(self):
        config = SolveConfig(instance=make_instance(tau=2))
        entry = terminal_value(SystemState(battery_wh=0.0, remaining=(2,)),
                               config)
        assert not entry.feasible
        assert entry.decision is None
        assert np.isinf(entry.value)


class TestFeasibleDecisions:
    def test_orders_by_start_set_then_battery_move(self):
        config = SolveConfig(instance=make_instance())
        decisions = feasible_decisions(
            SystemState(battery_wh=0.0, remaining=(2,)), 1, config)
        assert decisions == [
            Decision(starts=(False,), battery_delta_wh=0.0),
            Decision(starts=(False,), battery_delta_wh=50.0),
            Decision(starts=(True,), battery_delta_wh=0.0),
            Decision(starts=(True,), battery_delta_wh=50.0),
        ]

    def test_missed_deadline_leaves_nothing(self):
        config = SolveConfig(instance=make_instance())  # duration 2, tau 4
        state = SystemState(battery_wh=0.0, remaining=(2,))
        assert feasible_decisions(state, 4, config) == []
        assert feasible_decisions(state, 3, config) != []

    def test_scenario_band_filters_decisions(self):
        inst = motivating_instance()
        usage = PrivacyScenario(starts=(2,))
        constrained = SolveConfig(instance=inst,
                                  scenarios=ScenarioSet((usage,)))
        state = SystemState(battery_wh=0.0, remaining=(2, 3))
        decisions = feasible_decisions(state, 2, constrained)
        assert decisions == [
            Decision(starts=(False, False), battery_delta_wh=0.0),
            Decision(starts=(False, False), battery_delta_wh=10000.0),
            Decision(starts=(True, False), battery_delta_wh=0.0),
            Decision(starts=(True, False), battery_delta_wh=10000.0),
            Decision(starts=(False, True), battery_delta_wh=0.0),
            Decision(starts=(False, True), battery_delta_wh=10000.0),
        ]
        for decision in decisions:
            load = aggregated_load(state, decision, usage, 2, inst)
            assert abs(privacy_gap(load, inst.policy)) <= inst.policy.lambda_w

    def test_band_off_allows_the_double_start(self):
        inst = motivating_instance()
        state = SystemState(battery_wh=0.0, remaining=(2, 3))
        decisions = feasible_decisions(state, 2, SolveConfig(instance=inst))
        assert any(d.starts == (True, True) for d in decisions)

    def test_rejects_out_of_horizon_slot(self):
        config = SolveConfig(instance=make_instance())
        state = SystemState(battery_wh=0.0, remaining=(2,))
        with pytest.raises(ModelError, match="outside horizon"):
            feasible_decisions(state, 0, config)
        with pytest.raises(ModelError, match="outside horizon"):
            feasible_decisions(state, 5, config)

    def test_rejects_off_grid_states(self):
        config = SolveConfig(instance=make_instance())
        with pytest.raises(ModelError, match="grid"):
            feasible_decisions(SystemState(battery_wh=25.0, remaining=(2,)),
                               1, config)
        with pytest.raises(ModelError, match="remaining"):
            feasible_decisions(SystemState(battery_wh=0.0, remaining=(5,)),
                               1, config)
        with pytest.raises(ModelError, match="appliances"):
            feasible_decisions(SystemState(battery_wh=0.0, remaining=(2, 2)),
                               1, config)


def assert_bellman_consistent(table):
    """Re-derive every feasible cell from its successor via the model ops."""
    inst = table.config.instance
    h = inst.grid.slot_hours
    tau = inst.grid.tau
    done = (0,) * len(inst.appliances)
    for t in range(1, tau + 1):
        for state in table.states():
            entry = table.entry(t, state)
            if not entry.feasible:
                continue
            decision = entry.decision
            nxt_remaining = step_remaining(state, decision, inst.durations)
            next_level = step_battery(state, decision.battery_delta_wh,
                                      inst.battery)
            assert next_level is not None
            y = appliance_load(state.remaining, nxt_remaining, inst.powers_w)
            stage = slot_cost(y + decision.battery_delta_wh / h,
                              inst.price.at(t), h)
            successor = SystemState(battery_wh=next_level,
                                    remaining=nxt_remaining)
            if t < tau:
                continuation = table.value(t + 1, successor)
            else:
                assert successor.remaining == done
                continuation = 0.0
            assert entry.value == pytest.approx(stage + continuation,
                                                abs=1e-9, rel=1e-9)


class TestBackwardRecursion:
    def test_plain_band_schedule_defers_the_load(self):
        inst = motivating_instance()
        table = backward_recursion(SolveConfig(instance=inst,
                                               scenarios=band_set(1)))
        assert table.initial_value() == pytest.approx(8.5, abs=1e-9)
        solution = extract_schedule(table, inst.initial_state())
        assert solution.base_load_w == pytest.approx(
            (0.0, 30000.0, 70000.0, 70000.0), abs=1e-9)
        assert all(d.battery_delta_wh == 0.0 for d in solution.decisions)
        assert solution.controllable_cost == pytest.approx(8.5, abs=1e-9)
        assert solution.total_cost == pytest.approx(8.5, abs=1e-9)

    def test_usage_scenarios_reshape_the_schedule(self):
        inst = motivating_instance()
        omega = full_omega(inst)
        table = backward_recursion(SolveConfig(instance=inst, scenarios=omega))
        solution = extract_schedule(table, inst.initial_state())
        assert solution.base_load_w == pytest.approx(
            (0.0, 40000.0, 60000.0, 70000.0), abs=1e-9)
        deltas = tuple(d.battery_delta_wh for d in solution.decisions)
        assert deltas == pytest.approx((0.0, 10000.0, -10000.0, 0.0), abs=1e-9)
        assert solution.decisions[1].starts == (False, True)
        assert solution.decisions[2].starts == (True, False)
        assert solution.controllable_cost == pytest.approx(8.5, abs=1e-9)
        lam = inst.policy.lambda_w
        for scenario in omega:
            for t, decision in enumerate(solution.decisions, start=1):
                load = aggregated_load(solution.states[t - 1], decision,
                                       scenario, t, inst)
                assert abs(privacy_gap(load, inst.policy)) <= lam + 1e-6

    def test_cells_satisfy_the_recursion(self):
        inst = motivating_instance()
        table = backward_recursion(SolveConfig(instance=inst,
                                               scenarios=full_omega(inst)))
        assert_bellman_consistent(table)

    @pytest.mark.parametrize("seed", [3, 11, 27])
    def test_random_instances_satisfy_the_recursion(self, seed):
        inst = random_small_instance(seed)
        table = backward_recursion(SolveConfig(
            instance=inst, scenarios=band_set(len(inst.ns_appliances))))
        assert_bellman_consistent(table)

    def test_table_decisions_are_admissible(self):
        inst = motivating_instance()
        config = SolveConfig(instance=inst, scenarios=full_omega(inst))
        table = backward_recursion(config)
        for t in range(1, inst.grid.tau + 1):
            for state in table.states():
                entry = table.entry(t, state)
                if entry.feasible:
                    assert entry.decision in feasible_decisions(state, t,
                                                                config)

    def test_matches_exhaustive_search(self):
        for seed in range(100, 120):
            inst = random_small_instance(seed)
            config = SolveConfig(instance=inst, scenarios=full_omega(inst))
            oracle = brute_force_solve(config)
            try:
                table = backward_recursion(config)
            except InfeasibleError:
                assert not oracle.feasible, f"seed {seed}"
                continue
            assert oracle.feasible, f"seed {seed}"
            assert table.initial_value() == pytest.approx(
                oracle.controllable_cost, abs=1e-9), f"seed {seed}"
            solution = extract_schedule(table, inst.initial_state())
            assert expected_total_cost(config, solution.controllable_cost) \
                == pytest.approx(oracle.expected_cost, abs=1e-9), f"seed {seed}"

    def test_relaxing_the_band_never_costs_more(self):
        inst = motivating_instance()
        omega = full_omega(inst)
        values = []
        for lam in (40000.0, 50000.0, 70000.0, 1e9):
            relaxed = dataclasses.replace(
                inst, policy=PrivacyPolicy(lambda_w=lam,
                                           l_bar_w=inst.policy.l_bar_w))
            table = backward_recursion(SolveConfig(instance=relaxed,
                                                   scenarios=omega))
            values.append(table.initial_value())
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_extra_capacity_never_costs_more(self):
        inst = motivating_instance()
        omega = full_omega(inst)
        values = []
        for b_max in (20000.0, 30000.0, 40000.0):
            bigger = dataclasses.replace(
                inst, battery=dataclasses.replace(inst.battery,
                                                  b_max_wh=b_max))
            table = backward_recursion(SolveConfig(instance=bigger,
                                                   scenarios=omega))
            values.append(table.initial_value())
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_ties_break_toward_fewer_starts_and_idle_battery(self):
        # constant tariff: any placement and any net-zero battery plan tie
        config = SolveConfig(instance=make_instance())
        table = backward_recursion(config)
        assert table.initial_value() == pytest.approx(20.0, abs=1e-12)
        solution = extract_schedule(
            table, config.instance.initial_state())
        assert [d.starts for d in solution.decisions] == [
            (False,), (False,), (True,), (False,)]
        assert all(d.battery_delta_wh == 0.0 for d in solution.decisions)

    def test_rebuild_is_bit_identical(self):
        inst = motivating_instance()
        config = SolveConfig(instance=inst, scenarios=full_omega(inst))
        first = backward_recursion(config)
        second = backward_recursion(config)
        assert np.array_equal(first.values, second.values)
        assert np.array_equal(first.dec_mask, second.dec_mask)
        assert np.array_equal(first.dec_step, second.dec_step)

    def test_infeasible_reports_the_earliest_dead_slot(self):
        inst = make_instance(
            tau=2,
            appliances=(app("a", 100.0, 1), app("b", 100.0, 1)),
            battery=Battery(b_max_wh=50.0, b_init_wh=0.0,
                            z_discharge_max_wh=0.0, z_charge_max_wh=0.0,
                            grid_step_wh=50.0),
            prices=(0.1, 0.1), lam=0.0, l_bar=0.0)
        config = SolveConfig(instance=inst, scenarios=band_set(0))
        with pytest.raises(InfeasibleError, match="dies by slot 1") as err:
            backward_recursion(config)
        assert err.value.earliest_dead_slot == 1

    def test_entry_validates_the_slot(self):
        table = backward_recursion(SolveConfig(instance=make_instance()))
        state = table.config.instance.initial_state()
        with pytest.raises(ModelError, match="outside horizon"):
            table.entry(0, state)
        with pytest.raises(ModelError, match="outside horizon"):
            table.entry(5, state)

    def test_dimensions_match_the_state_grid(self):
        inst = make_instance()
        table = backward_recursion(SolveConfig(instance=inst))
        assert table.tau == 4
        assert table.n_states == state_count(inst.appliances, inst.battery)
        assert len(table.states()) == table.n_states
        assert table.values.shape == (4, 3, 3)


class TestExpectedTotalCost:
    def usage_config(self, runtime=1, zone=(1, 4), start_prob=None,
                     mode="expected"):
        ns = NonSchedulableAppliance(id="n", power_w=100.0,
                                     runtime_slots=runtime, zone=zone,
                                     start_prob=start_prob)
        inst = make_instance(prices=(0.1, 0.2, 0.3, 0.4), ns=(ns,))
        return SolveConfig(instance=inst, objective_mode=mode)

    def test_uniform_starts_average_the_run_prices(self):
        # runs cost 10, 20, 30, 40 with equal probability
        config = self.usage_config()
        assert expected_total_cost(config, 5.0) == pytest.approx(30.0,
                                                                 abs=1e-12)

    def test_custom_start_distribution(self):
        config = self.usage_config(start_prob=(0.5, 0.5, 0.0, 0.0))
        assert expected_total_cost(config, 5.0) == pytest.approx(20.0,
                                                                 abs=1e-12)

    def test_worst_case_prices_the_costliest_placement(self):
        config = self.usage_config(mode="worst-case-cost")
        assert expected_total_cost(config, 5.0) == pytest.approx(45.0,
                                                                 abs=1e-12)

    def test_multi_slot_runs_price_every_active_slot(self):
        config = self.usage_config(runtime=2, zone=(1, 3))
        # starts 1 and 2 cost 30 and 50
        assert expected_total_cost(config, 5.0) == pytest.approx(45.0,
                                                                 abs=1e-12)
        worst = self.usage_config(runtime=2, zone=(1, 3),
                                  mode="worst-case-cost")
        assert expected_total_cost(worst, 5.0) == pytest.approx(55.0,
                                                                abs=1e-12)

    def test_without_usage_appliances_it_is_the_controllable_cost(self):
        config = SolveConfig(instance=make_instance())
        assert expected_total_cost(config, 7.25) == 7.25


class TestPersistence:
    def build(self):
        inst = motivating_instance()
        config = SolveConfig(instance=inst, scenarios=band_set(1))
        return config, backward_recursion(config)

    @pytest.mark.parametrize("format", ["json", "binary"])
    def test_round_trip_preserves_every_cell(self, tmp_path, format):
        config, table = self.build()
        path = str(tmp_path / f"table.{format}")
        save_table(table, path, format=format)
        loaded = load_table(path, config)
        assert loaded.model_hash == table.model_hash
        assert np.array_equal(loaded.values, table.values)
        assert np.array_equal(loaded.dec_mask, table.dec_mask)
        assert np.array_equal(loaded.dec_step, table.dec_step)
        assert loaded.initial_value() == table.initial_value()
        state = config.instance.initial_state()
        assert loaded.entry(1, state) == table.entry(1, state)

    def test_header_summarizes_the_model(self, tmp_path):
        config, table = self.build()
        path = str(tmp_path / "table.json")
        save_table(table, path)
        header = read_table_header(path)
        assert header == {
            "format": "paces-table",
            "version": 1,
            "model_hash": table.model_hash,
            "tau": 4,
            "slot_hours": 1.0,
            "grid_step_wh": 10000.0,
            "b_max_wh": 20000.0,
            "durations": [2, 3],
            "omega": [[None]],
            "weights": [1.0],
            "objective_mode": "expected",
        }

    def test_refuses_a_table_built_for_another_model(self, tmp_path):
        config, table = self.build()
        path = str(tmp_path / "table.json")
        save_table(table, path)
        other = dataclasses.replace(
            config.instance,
            policy=PrivacyPolicy(lambda_w=50000.0,
                                 l_bar_w=config.instance.policy.l_bar_w))
        with pytest.raises(IntegrityError, match="different model"):
            load_table(path, SolveConfig(instance=other, scenarios=band_set(1)))

    def test_refuses_unknown_versions(self, tmp_path):
        config, table = self.build()
        path = tmp_path / "table.json"
        save_table(table, str(path))
        payload = json.loads(path.read_text())
        payload["version"] = 2
        path.write_text(json.dumps(payload))
        with pytest.raises(IntegrityError, match="version"):
            read_table_header(str(path))

    def test_refuses_files_that_are_not_tables(self, tmp_path):
        config, _ = self.build()
        text = tmp_path / "junk.txt"
        text.write_text("not a table\n")
        with pytest.raises(IntegrityError, match="not a schedule-table dump"):
            load_table(str(text), config)
        pickled = tmp_path / "junk.bin"
        pickled.write_bytes(pickle.dumps([1, 2, 3]))
        with pytest.raises(IntegrityError, match="not a schedule-table dump"):
            read_table_header(str(pickled))
        wrong = tmp_path / "wrong.json"
        wrong.write_text('{"format": "something-else"}\n')
        with pytest.raises(IntegrityError, match="not a schedule-table dump"):
            read_table_header(str(wrong))

    def test_rejects_unknown_formats_on_save(self, tmp_path):
        _, table = self.build()
        with pytest.raises(ConfigError, match="format"):
            save_table(table, str(tmp_path / "t.xml"), format="xml")
