"""Backward-recursive construction of per-slot schedule tables.

For a fixed scenario set the builder sweeps the horizon from the last
slot to the first.  Each pass evaluates, for every discretized state
(battery level on the grid x remaining-work vector), every admissible
decision (appliance starts x grid-exact battery move), keeps the
cheapest continuation, and stores value and argmin decision.  Entries
with no feasible continuation hold an infinity sentinel.

The minimized objective is the controllable part of the bill: price
times appliance-plus-battery energy.  Non-schedulable consumption is
decision independent for a fixed scenario set and is reported
separately, see :func:`expected_total_cost`.

Ties between equally cheap decisions break deterministically: fewer
starts, then smaller battery-move magnitude, then lexicographically
smallest start vector, then the smaller signed battery move.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import pickle
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (ConfigError, InfeasibleError, IntegrityError, ModelError,
                     StateSpaceError)
from .model import (Battery, Decision, Instance, PrivacyScenario, ScenarioSet,
                    SchedulableAppliance, SystemState, aggregated_load,
                    privacy_gap, scenario_load, slot_cost, step_remaining)

DEFAULT_STATE_CAP = 2_000_000

#: Guard applied before snapping constraint bounds onto battery-grid steps,
#: so a bound that lands exactly on a grid point survives float roundoff.
_SNAP_EPS = 1e-9

OBJECTIVE_MODES = ("expected", "worst-case-cost")


@dataclass(frozen=True)
class SolveConfig:
    """Everything one backward pass needs: instance, scenarios, objective."""

    instance: Instance
    scenarios: ScenarioSet = field(default_factory=ScenarioSet.empty)
    scenario_weights: Optional[tuple[float, ...]] = None
    objective_mode: str = "expected"
    state_cap: int = DEFAULT_STATE_CAP

    def __post_init__(self):
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ModelError(
                f"objective_mode must be one of {OBJECTIVE_MODES}, "
                f"got {self.objective_mode!r}")
        n_ns = len(self.instance.ns_appliances)
        for sc in self.scenarios:
            if len(sc.starts) != n_ns:
                raise ModelError(
                    f"scenario {sc.starts!r} places {len(sc.starts)} appliances, "
                    f"instance has {n_ns}")
        if self.scenario_weights is not None:
            if len(self.scenario_weights) != len(self.scenarios):
                raise ModelError(
                    f"{len(self.scenario_weights)} weights for "
                    f"{len(self.scenarios)} scenarios")
            if any(w < 0 for w in self.scenario_weights):
                raise ModelError("scenario weights must be non-negative")
            if self.objective_mode == "expected" and len(self.scenarios) > 0:
                total = sum(self.scenario_weights)
                if abs(total - 1.0) > 1e-9:
                    raise ModelError(
                        f"scenario weights sum to {total}, expected 1")
        if self.state_cap < 1:
            raise ModelError(f"state cap must be positive, got {self.state_cap!r}")

    def resolved_weights(self) -> tuple[float, ...]:
        """Configured weights, or uniform over the scenario set."""
        if self.scenario_weights is not None:
            return self.scenario_weights
        n = len(self.scenarios)
        if n == 0:
            return ()
        return (1.0 / n,) * n


def model_fingerprint(config: SolveConfig) -> str:
    """Stable hash of every model ingredient a table depends on."""
    inst = config.instance
    payload = {
        "tau": inst.grid.tau,
        "slot_hours": inst.grid.slot_hours,
        "appliances": [
            [a.id, a.power_w, a.workload_wh, a.duration_slots]
            for a in inst.appliances
        ],
        "ns_appliances": [
            [a.id, a.power_w, a.runtime_slots, list(a.zone),
             None if a.start_prob is None else list(a.start_prob)]
            for a in inst.ns_appliances
        ],
        "battery": [inst.battery.b_max_wh, inst.battery.b_init_wh,
                    inst.battery.z_discharge_max_wh, inst.battery.z_charge_max_wh,
                    inst.battery.grid_step_wh],
        "price": list(inst.price.values),
        "policy": [inst.policy.lambda_w, inst.policy.l_bar_w,
                   inst.policy.l_bar_source.value],
        "omega": [list(sc.starts) for sc in config.scenarios],
        "weights": list(config.resolved_weights()),
        "objective_mode": config.objective_mode,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# State enumeration


def state_count(appliances: Sequence[SchedulableAppliance],
                battery: Battery) -> int:
    """Number of discretized states: battery levels x remaining vectors."""
    count = battery.n_levels
    for a in appliances:
        count *= a.duration_slots + 1
    return count


def enumerate_states(appliances: Sequence[SchedulableAppliance],
                     battery: Battery,
                     state_cap: int = DEFAULT_STATE_CAP) -> list[SystemState]:
    """Materialize every state, battery-major, remaining vectors ascending."""
    count = state_count(appliances, battery)
    if count > state_cap:
        raise StateSpaceError(count, state_cap)
    ranges = [range(a.duration_slots + 1) for a in appliances]
    return [SystemState(battery_wh=level, remaining=combo)
            for level in battery.levels()
            for combo in itertools.product(*ranges)]


# ---------------------------------------------------------------------------
# Decision machinery shared by the sweep, the per-state API and diagnostics


class _Engine:
    """Precomputed instance geometry for one solve."""

    def __init__(self, config: SolveConfig):
        inst = config.instance
        self.config = config
        self.inst = inst
        self.tau = inst.grid.tau
        self.h = inst.grid.slot_hours
        self.durations = inst.durations
        self.powers = inst.powers_w
        self.n_app = len(self.durations)
        bat = inst.battery
        self.step = bat.grid_step_wh
        self.m = bat.n_levels
        self.levels = np.asarray(bat.levels())
        self.k_rate_lo = -self._snap_floor(bat.z_discharge_max_wh, self.step)
        self.k_rate_hi = self._snap_floor(bat.z_charge_max_wh, self.step)

        if state_count(inst.appliances, bat) > config.state_cap:
            raise StateSpaceError(state_count(inst.appliances, bat),
                                  config.state_cap)
        self.r_combos = list(itertools.product(
            *[range(d + 1) for d in self.durations]))
        self.r_index = {combo: i for i, combo in enumerate(self.r_combos)}
        self.n_r = len(self.r_combos)
        self.done_idx = self.r_index[(0,) * self.n_app]

        # per slot, the extreme non-schedulable draws over the scenario set
        omega = list(config.scenarios)
        self.has_privacy = len(omega) > 0
        self.w_min = np.zeros(self.tau + 1)
        self.w_max = np.zeros(self.tau + 1)
        for t in range(1, self.tau + 1):
            if omega:
                draws = [scenario_load(sc, inst.ns_appliances, t) for sc in omega]
                self.w_min[t] = min(draws)
                self.w_max[t] = max(draws)

        self._moves_cache: dict[tuple[int, int], list[tuple]] = {}

    @staticmethod
    def _snap_floor(value: float, step: float) -> int:
        q = value / step
        return math.floor(q + _SNAP_EPS * max(1.0, abs(q)))

    @staticmethod
    def _snap_ceil(value: float, step: float) -> int:
        q = value / step
        return math.ceil(q - _SNAP_EPS * max(1.0, abs(q)))

    def k_window(self, t: int, y_w: float) -> tuple[int, int]:
        """Battery-step range allowed by rate and privacy bounds at slot t."""
        k_lo, k_hi = self.k_rate_lo, self.k_rate_hi
        if self.has_privacy:
            pol = self.inst.policy
            lo_w = pol.l_bar_w - pol.lambda_w - y_w - self.w_min[t]
            hi_w = pol.l_bar_w + pol.lambda_w - y_w - self.w_max[t]
            k_lo = max(k_lo, self._snap_ceil(lo_w * self.h, self.step))
            k_hi = min(k_hi, self._snap_floor(hi_w * self.h, self.step))
        return k_lo, k_hi

    def start_options(self, r_combo: tuple[int, ...], t: int) -> Optional[list]:
        """Admissible start sets at slot ``t`` for one remaining vector.

        Returns ``None`` when some unstarted appliance can no longer meet
        the deadline, which dooms every continuation from this vector.
        Each option is ``(mask, skey, n_starts, y_w, r_next_idx)``.
        """
        key = (self.r_index[r_combo], t)
        if key in self._moves_cache:
            return self._moves_cache[key]

        startable = []
        doomed = False
        running_y = 0.0
        for i, (r, dur, p) in enumerate(zip(r_combo, self.durations, self.powers)):
            if 0 < r < dur:
                running_y += p
            elif r == dur:
                if t + dur - 1 <= self.tau:
                    startable.append(i)
                else:
                    doomed = True
        if doomed:
            self._moves_cache[key] = None
            return None

        options = []
        for size in range(len(startable) + 1):
            for subset in itertools.combinations(startable, size):
                y = running_y + sum(self.powers[i] for i in subset)
                nxt = []
                for i, (r, dur) in enumerate(zip(r_combo, self.durations)):
                    running = i in subset or 0 < r < dur
                    nxt.append(r - 1 if running and r > 0 else r)
                mask = sum(1 << i for i in subset)
                skey = sum(1 << (self.n_app - 1 - i) for i in subset)
                options.append((mask, skey, size, y, self.r_index[tuple(nxt)]))
        self._moves_cache[key] = options
        return options

    def solve_slot(self, t: int, f_next: np.ndarray):
        """One backward step: value and argmin decision for every state.

        ``f_next`` has shape (n_r, m) and holds the continuation values.
        Returns ``(values, dec_mask, dec_step)`` of the same shape;
        ``dec_mask`` is -1 where no decision is feasible.
        """
        c_t = self.inst.price.at(t)
        values = np.full((self.n_r, self.m), np.inf)
        dec_mask = np.full((self.n_r, self.m), -1, dtype=np.int32)
        dec_step = np.zeros((self.n_r, self.m), dtype=np.int32)
        b_idx = np.arange(self.m)

        for r_i, combo in enumerate(self.r_combos):
            options = self.start_options(combo, t)
            if options is None:
                continue
            best_v = values[r_i]
            best_n = np.full(self.m, 1 << 30, dtype=np.int64)
            best_absk = np.full(self.m, 1 << 30, dtype=np.int64)
            best_skey = np.full(self.m, 1 << 30, dtype=np.int64)
            best_k = np.full(self.m, 1 << 30, dtype=np.int64)
            best_mask = dec_mask[r_i]
            for mask, skey, n_starts, y, r_next_idx in options:
                k_lo, k_hi = self.k_window(t, y)
                if k_lo > k_hi:
                    continue
                ks = np.array(sorted(range(k_lo, k_hi + 1),
                                     key=lambda k: (abs(k), k)), dtype=np.int64)
                stage = c_t * (y * self.h + ks * self.step)
                succ = b_idx[:, None] + ks[None, :]
                valid = (succ >= 0) & (succ < self.m)
                cont = f_next[r_next_idx][np.clip(succ, 0, self.m - 1)]
                cand = np.where(valid, stage[None, :] + cont, np.inf)
                col = np.argmin(cand, axis=1)  # first hit wins: |k| then k order
                vals = cand[b_idx, col]
                k_pick = ks[col]
                finite = np.isfinite(vals)
                tie = finite & (vals == best_v) & (
                    (n_starts < best_n)
                    | ((n_starts == best_n) & (np.abs(k_pick) < best_absk))
                    | ((n_starts == best_n) & (np.abs(k_pick) == best_absk)
                       & (skey < best_skey))
                    | ((n_starts == best_n) & (np.abs(k_pick) == best_absk)
                       & (skey == best_skey) & (k_pick < best_k)))
                take = (finite & (vals < best_v)) | tie
                if not take.any():
                    continue
                best_v[take] = vals[take]
                best_n[take] = n_starts
                best_absk[take] = np.abs(k_pick[take])
                best_skey[take] = skey
                best_k[take] = k_pick[take]
                best_mask[take] = mask
                dec_step[r_i][take] = k_pick[take]
        return values, dec_mask, dec_step

    def terminal_continuation(self) -> np.ndarray:
        """Continuation values past the horizon: 0 once all work is done."""
        f = np.full((self.n_r, self.m), np.inf)
        f[self.done_idx, :] = 0.0
        return f

    def state_indices(self, state: SystemState) -> tuple[int, int]:
        if len(state.remaining) != self.n_app:
            raise ModelError(
                f"state has {len(state.remaining)} appliances, instance has "
                f"{self.n_app}")
        r_idx = self.r_index.get(state.remaining)
        if r_idx is None:
            raise ModelError(
                f"remaining vector {state.remaining!r} outside "
                f"{tuple(self.durations)!r}")
        return r_idx, self.inst.battery.level_index(state.battery_wh)


# ---------------------------------------------------------------------------
# Public table type


@dataclass(frozen=True)
class TableEntry:
    """One table cell: argmin decision, value-to-go, feasibility flag."""

    decision: Optional[Decision]
    value: float
    feasible: bool


class ScheduleTable:
    """Per-slot mapping from system state to optimal decision and value."""

    def __init__(self, config: SolveConfig, values: np.ndarray,
                 dec_mask: np.ndarray, dec_step: np.ndarray):
        self.config = config
        self._engine = _Engine(config)
        self.values = values
        self.dec_mask = dec_mask
        self.dec_step = dec_step
        self.model_hash = model_fingerprint(config)

    @property
    def tau(self) -> int:
        return self._engine.tau

    @property
    def n_states(self) -> int:
        return self._engine.n_r * self._engine.m

    def states(self) -> list[SystemState]:
        return enumerate_states(self.config.instance.appliances,
                                self.config.instance.battery,
                                self.config.state_cap)

    def entry(self, t: int, state: SystemState) -> TableEntry:
        """Table cell for slot ``t``; raises on off-grid states."""
        if not 1 <= t <= self.tau:
            raise ModelError(f"slot {t} outside horizon 1..{self.tau}")
        r_idx, b_idx = self._engine.state_indices(state)
        value = float(self.values[t - 1, r_idx, b_idx])
        mask = int(self.dec_mask[t - 1, r_idx, b_idx])
        if mask < 0:
            return TableEntry(decision=None, value=value, feasible=False)
        starts = tuple(bool(mask >> i & 1) for i in range(self._engine.n_app))
        delta = float(self.dec_step[t - 1, r_idx, b_idx] * self._engine.step)
        return TableEntry(decision=Decision(starts=starts, battery_delta_wh=delta),
                          value=value, feasible=True)

    def value(self, t: int, state: SystemState) -> float:
        return self.entry(t, state).value

    def initial_value(self) -> float:
        """Optimal controllable cost from the configured initial state."""
        return self.value(1, self.config.instance.initial_state())


# ---------------------------------------------------------------------------
# Decision enumeration and the backward pass


def feasible_decisions(state: SystemState, t: int,
                       config: SolveConfig) -> list[Decision]:
    """Every admissible decision at ``(state, t)``, deterministically ordered.

    A decision is admissible when each started appliance is unstarted and
    can still finish by the horizon, the battery move is grid-exact and
    respects rate and level bounds, and the metered load satisfies the
    privacy band for every scenario in the configured set.
    """
    eng = _Engine(config)
    if not 1 <= t <= eng.tau:
        raise ModelError(f"slot {t} outside horizon 1..{eng.tau}")
    r_idx, b_idx = eng.state_indices(state)
    options = eng.start_options(eng.r_combos[r_idx], t)
    if options is None:
        return []
    pol = config.instance.policy
    out = []
    for mask, skey, n_starts, y, r_next_idx in options:
        starts = tuple(bool(mask >> i & 1) for i in range(eng.n_app))
        k_cands = [k for k in range(eng.k_rate_lo, eng.k_rate_hi + 1)
                   if 0 <= b_idx + k < eng.m]
        for k in sorted(k_cands, key=lambda k: (abs(k), k)):
            decision = Decision(starts=starts, battery_delta_wh=k * eng.step)
            ok = True
            for sc in config.scenarios:
                load = aggregated_load(state, decision, sc, t, config.instance)
                if abs(privacy_gap(load, pol)) > pol.lambda_w:
                    ok = False
                    break
            if ok:
                out.append(decision)
    return out


def terminal_value(state: SystemState, config: SolveConfig) -> TableEntry:
    """Last-slot cell: every appliance must be done once the slot ends."""
    eng = _Engine(config)
    values, dec_mask, dec_step = eng.solve_slot(eng.tau,
                                                eng.terminal_continuation())
    r_idx, b_idx = eng.state_indices(state)
    mask = int(dec_mask[r_idx, b_idx])
    value = float(values[r_idx, b_idx])
    if mask < 0:
        return TableEntry(decision=None, value=value, feasible=False)
    starts = tuple(bool(mask >> i & 1) for i in range(eng.n_app))
    delta = float(dec_step[r_idx, b_idx] * eng.step)
    return TableEntry(decision=Decision(starts=starts, battery_delta_wh=delta),
                      value=value, feasible=True)


def backward_recursion(config: SolveConfig) -> ScheduleTable:
    """Build the full table; raises when the initial state cannot finish."""
    eng = _Engine(config)
    values = np.empty((eng.tau, eng.n_r, eng.m))
    dec_mask = np.empty((eng.tau, eng.n_r, eng.m), dtype=np.int32)
    dec_step = np.empty((eng.tau, eng.n_r, eng.m), dtype=np.int32)
    f_next = eng.terminal_continuation()
    for t in range(eng.tau, 0, -1):
        f_t, mask_t, step_t = eng.solve_slot(t, f_next)
        values[t - 1] = f_t
        dec_mask[t - 1] = mask_t
        dec_step[t - 1] = step_t
        f_next = f_t
    table = ScheduleTable(config, values, dec_mask, dec_step)
    init = config.instance.initial_state()
    if not table.entry(1, init).feasible:
        dead = _earliest_dead_slot(eng, values)
        raise InfeasibleError(
            f"SP infeasible under the configured scenario set: every branch "
            f"from the initial state dies by slot {dead}",
            earliest_dead_slot=dead)
    return table


def _earliest_dead_slot(eng: _Engine, values: np.ndarray) -> int:
    """First slot at which no constraint-reachable state can still finish."""
    init = eng.inst.initial_state()
    reach = {eng.state_indices(init)}
    for t in range(1, eng.tau + 1):
        if all(not np.isfinite(values[t - 1, r, b]) for r, b in reach):
            return t
        nxt = set()
        for r_i, b_i in reach:
            options = eng.start_options(eng.r_combos[r_i], t)
            if options is None:
                continue
            for mask, skey, n_starts, y, r_next_idx in options:
                k_lo, k_hi = eng.k_window(t, y)
                for k in range(max(k_lo, -b_i), min(k_hi, eng.m - 1 - b_i) + 1):
                    nxt.add((r_next_idx, b_i + k))
        reach = nxt
    return eng.tau


# ---------------------------------------------------------------------------
# Schedule extraction


@dataclass(frozen=True)
class ScheduleSolution:
    """A concrete trajectory read out of a table.

    ``base_load_w`` is the scenario-independent part of the metered load
    (appliances plus battery); ``load_w`` adds the scenario draw.  The
    controllable cost prices the base load only, ``total_cost`` prices
    the realized load.
    """

    decisions: tuple[Decision, ...]
    states: tuple[SystemState, ...]
    base_load_w: tuple[float, ...]
    load_w: tuple[float, ...]
    privacy_gap_w: tuple[float, ...]
    slot_costs: tuple[float, ...]
    controllable_cost: float
    total_cost: float
    scenario: PrivacyScenario


def extract_schedule(table: ScheduleTable, initial_state: SystemState,
                     scenario: Optional[PrivacyScenario] = None
                     ) -> ScheduleSolution:
    """Walk the table forward from ``initial_state`` under one scenario."""
    config = table.config
    inst = config.instance
    if scenario is None:
        scenario = PrivacyScenario.inactive(len(inst.ns_appliances))
    if len(scenario.starts) != len(inst.ns_appliances):
        raise ModelError(
            f"scenario places {len(scenario.starts)} appliances, instance has "
            f"{len(inst.ns_appliances)}")

    state = initial_state
    decisions, states = [], [state]
    base_loads, loads, gaps, costs = [], [], [], []
    h = inst.grid.slot_hours
    for t in range(1, inst.grid.tau + 1):
        entry = table.entry(t, state)
        if not entry.feasible:
            if t == 1:
                raise InfeasibleError(
                    f"initial state {state!r} has no feasible schedule",
                    earliest_dead_slot=1)
            raise IntegrityError(
                f"state {state!r} drifted onto an infeasible table entry at "
                f"slot {t}")
        decision = entry.decision
        load = aggregated_load(state, decision, scenario, t, inst)
        base = load - scenario_load(scenario, inst.ns_appliances, t)
        next_remaining = step_remaining(state, decision, inst.durations)
        b_idx = inst.battery.level_index(state.battery_wh)
        k = round(decision.battery_delta_wh / inst.battery.grid_step_wh)
        next_level = (b_idx + k) * inst.battery.grid_step_wh
        decisions.append(decision)
        base_loads.append(base)
        loads.append(load)
        gaps.append(privacy_gap(load, inst.policy))
        costs.append(slot_cost(load, inst.price.at(t), h))
        state = SystemState(battery_wh=next_level, remaining=next_remaining)
        states.append(state)
    if any(r != 0 for r in state.remaining):
        raise IntegrityError(
            f"schedule left unfinished work {state.remaining!r} past the horizon")
    controllable = sum(slot_cost(b, inst.price.at(t), h)
                       for t, b in enumerate(base_loads, start=1))
    return ScheduleSolution(
        decisions=tuple(decisions), states=tuple(states),
        base_load_w=tuple(base_loads), load_w=tuple(loads),
        privacy_gap_w=tuple(gaps), slot_costs=tuple(costs),
        controllable_cost=float(controllable), total_cost=float(sum(costs)),
        scenario=scenario)


def expected_total_cost(config: SolveConfig, controllable_cost: float) -> float:
    """Controllable cost plus the priced non-schedulable consumption.

    Non-schedulable runs are user-driven, so their cost depends only on
    the start distribution (``expected`` mode) or the costliest placement
    (``worst-case-cost`` mode), never on the decisions or on the scenario
    set the solver happened to accumulate.
    """
    inst = config.instance
    h = inst.grid.slot_hours

    def run_price(app, start: int) -> float:
        return sum(slot_cost(app.power_w, inst.price.at(t), h)
                   for t in range(start, start + app.runtime_slots))

    if config.objective_mode == "worst-case-cost":
        draw = sum(max(run_price(app, s) for s in app.feasible_starts())
                   for app in inst.ns_appliances)
    else:
        draw = sum(prob * run_price(app, s)
                   for app in inst.ns_appliances
                   for s, prob in zip(app.feasible_starts(),
                                      app.start_probabilities()))
    return controllable_cost + float(draw)


# ---------------------------------------------------------------------------
# Table persistence

_FORMAT_NAME = "paces-table"
_FORMAT_VERSION = 1


def _table_payload(table: ScheduleTable) -> dict:
    eng = table._engine
    values = [[[None if not np.isfinite(v) else float(v) for v in row]
               for row in slab] for slab in table.values]
    return {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "model_hash": table.model_hash,
        "tau": eng.tau,
        "slot_hours": eng.h,
        "grid_step_wh": eng.step,
        "b_max_wh": eng.inst.battery.b_max_wh,
        "durations": list(eng.durations),
        "omega": [list(sc.starts) for sc in table.config.scenarios],
        "weights": list(table.config.resolved_weights()),
        "objective_mode": table.config.objective_mode,
        "values": values,
        "dec_mask": table.dec_mask.tolist(),
        "dec_step": table.dec_step.tolist(),
    }


def save_table(table: ScheduleTable, path: str, format: str = "json") -> None:
    """Write the table with its model-hash header, as JSON or pickle."""
    payload = _table_payload(table)
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    elif format == "binary":
        with open(path, "wb") as fh:
            fh.write(pickle.dumps(payload, protocol=4))
    else:
        raise ConfigError(f"unknown table format {format!r}, "
                          f"expected 'json' or 'binary'")


def _read_payload(path: str) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(1)
        fh.seek(0)
        try:
            if head == b"{":
                payload = json.loads(fh.read().decode("utf-8"))
            else:
                payload = pickle.loads(fh.read())
        except Exception:
            raise IntegrityError(f"{path} is not a schedule-table dump") from None
    if not isinstance(payload, dict) or payload.get("format") != _FORMAT_NAME:
        raise IntegrityError(f"{path} is not a schedule-table dump")
    if payload.get("version") != _FORMAT_VERSION:
        raise IntegrityError(
            f"table version {payload.get('version')!r} unsupported, "
            f"expected {_FORMAT_VERSION}")
    return payload


def read_table_header(path: str) -> dict:
    """Model hash, scenario set and grid summary of a table dump."""
    payload = _read_payload(path)
    return {k: payload[k]
            for k in ("format", "version", "model_hash", "tau", "slot_hours",
                      "grid_step_wh", "b_max_wh", "durations", "omega",
                      "weights", "objective_mode")}


def load_table(path: str, config: SolveConfig) -> ScheduleTable:
    """Read a table dump and bind it to ``config``; refuses stale dumps."""
    payload = _read_payload(path)
    expected = model_fingerprint(config)
    if payload["model_hash"] != expected:
        raise IntegrityError(
            "table was built for a different model: hash "
            f"{payload['model_hash'][:12]}... != config {expected[:12]}...")
    values = np.array([[[np.inf if v is None else v for v in row]
                        for row in slab] for slab in payload["values"]])
    dec_mask = np.array(payload["dec_mask"], dtype=np.int32)
    dec_step = np.array(payload["dec_step"], dtype=np.int32)
    return ScheduleTable(config, values, dec_mask, dec_step)
