"""Closed-loop execution: plant stepping, scenario runners, reporting.

A Benchmark bundles one decomposition of a plant: the topology, the
subsystems with their controllers, a truth-plant simulator, and the
bookkeeping that maps scenario schedules (keyed by output name) onto
subsystem cost specs.  Two runners drive it through a Scenario: the
hierarchical runner coordinates set-points every cycle, the decentralized
baseline lets each local controller track the desired values against
frozen last-measured couplings.  Both produce a ClosedLoopTrace with one
row per cycle; closed_loop_cost distills a trace into a
PerformanceReport.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .configio import ConfigError, Scenario  # noqa: F401  (Scenario re-exported)
from .control import ControlError
from .coordinator import CoordinationError, Coordinator, CoordinatorConfig
from .graph import Topology, build_routing, in_stack_order, profile_to_matrix
from .models import LocalCostSpec, ModelError, SimulationError, simulate_trajectory

log = logging.getLogger(__name__)

_SOLVER_ERRORS = (ControlError, CoordinationError, ModelError,
                  SimulationError)


class ClosedLoopError(RuntimeError):
    """The closed loop was driven outside its contract."""


_RUN_ERRORS = _SOLVER_ERRORS + (ClosedLoopError,)


@dataclass(frozen=True)
class PlantStep:
    """Truth-plant measurements for one step: y, realized couplings, x+."""

    x: dict          # sid -> next state vector
    y: dict          # sid -> measured regulated outputs at this step
    v: dict          # sid -> realized incoming coupling block
    v_stack: np.ndarray   # global in-stack of realized couplings
    w_stack: np.ndarray   # global out-stack


class PlantSimulator:
    """Steps the coupled truth plant one sample at a time.

    Couplings are instantaneous within a step: the block outputs are swept
    in subsystem order and re-routed until the stack reproduces itself
    exactly, which a delay on every coupling cycle guarantees after a few
    sweeps.  Disturbances enter as additive offsets on physical input
    channels and are applied here only; controllers never see them.
    """

    MAX_SWEEPS = 10

    def __init__(self, models: dict, topology: Topology, u_boxes: dict,
                 x0: dict = None):
        self.models = dict(models)
        self.topology = topology
        one_step = Topology(topology.n_s, topology.controlled,
                            topology.edges, horizon=1)
        self.routing = build_routing(one_step)
        self.u_boxes = {sid: (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
                        for sid, (lo, hi) in u_boxes.items()}
        if x0 is None:
            x0 = {}
            for sid, model in self.models.items():
                if model.op is None:
                    raise ClosedLoopError(f"block {sid} has no operating point; "
                                          "pass explicit initial states")
                x0[sid] = model.op["x"]
        self.x0 = {sid: np.array(x, dtype=float) for sid, x in x0.items()}
        self.reset()

    def reset(self):
        self.x = {sid: x.copy() for sid, x in self.x0.items()}

    def step(self, u_map: dict, extra_u: dict = None) -> PlantStep:
        """Apply one input per actuated block and advance the plant.

        u_map holds the commanded inputs (must lie inside the input boxes);
        extra_u holds additive disturbance offsets per sid.  Returns the
        measurements for this step together with the successor states.
        """
        u_true = {}
        for sid, model in sorted(self.models.items()):
            if model.nu == 0:
                continue
            if sid not in u_map:
                raise ClosedLoopError(f"no input supplied for block {sid}")
            u = np.asarray(u_map[sid], dtype=float).ravel()
            if u.shape != (model.nu,):
                raise ClosedLoopError(f"block {sid}: input has length {u.shape[0]}, "
                                      f"expected {model.nu}")
            if not np.all(np.isfinite(u)):
                raise ClosedLoopError(f"block {sid}: non-finite input")
            lo, hi = self.u_boxes[sid]
            if np.any(u < lo) or np.any(u > hi):
                raise ClosedLoopError(f"block {sid}: input {u} outside its box")
            if extra_u and sid in extra_u:
                u = u + np.asarray(extra_u[sid], dtype=float).ravel()
            u_true[sid] = u

        v = np.zeros(self.routing.size)
        y_map, x_next, w_stack = {}, {}, None
        for _ in range(self.MAX_SWEEPS):
            w_parts = []
            for sid in sorted(self.models):
                model = self.models[sid]
                V1 = self.routing.in_block(v, sid).reshape(1, -1)
                U1 = u_true[sid].reshape(1, -1) if model.nu else None
                Y, W, X = simulate_trajectory(model, self.x[sid], U1, V1)
                y_map[sid] = Y[0]
                w_parts.append(W[0])
                x_next[sid] = X[1]
            w_stack = (np.concatenate(w_parts) if w_parts
                       else np.zeros(0))
            v_new = self.routing.apply(w_stack)
            if np.array_equal(v_new, v):
                break
            v = v_new
        else:
            raise ClosedLoopError("instantaneous couplings did not settle; "
                                  "the coupling graph needs a delay on every cycle")

        self.x = x_next
        v_map = {sid: self.routing.in_block(v, sid).copy()
                 for sid in sorted(self.models)}
        return PlantStep(x={sid: x.copy() for sid, x in x_next.items()},
                         y=y_map, v=v_map, v_stack=v, w_stack=w_stack)


def step_plant(plant: PlantSimulator, u_map: dict, disturbances: dict = None) -> PlantStep:
    """Advance the truth plant one step (see PlantSimulator.step)."""
    return plant.step(u_map, extra_u=disturbances)


@dataclass
class Benchmark:
    """One decomposition of a plant wired for closed-loop runs."""

    name: str
    Ts: float
    topology: Topology
    subsystems: dict         # sid -> Subsystem (controllers attached)
    plant: PlantSimulator
    sub_names: dict          # sid -> short block name used in trace columns
    tracked: tuple           # (output name, sid, y row) in set-point order
    constrained: tuple       # (output name, sid, y row) for bounded outputs
    weighted: tuple          # (output name, sid, y row) carrying tracking cost
    tracking_weights: dict   # output name -> central weight
    constraint_weights: dict
    dist_inputs: dict        # disturbance name -> (sid, input channel index)
    v0: np.ndarray           # operating coupling profile (flat, horizon-tiled)
    v_op_step: np.ndarray    # operating coupling stack for a single step
    v_labels: tuple          # column label per global in-stack slot
    coordinator: dict = field(default_factory=dict)   # default knob values
    x0: dict = field(default_factory=dict)            # sid -> initial state

    def __post_init__(self):
        if not self.x0:
            self.x0 = {sid: sub.state.x.copy() for sid, sub in self.subsystems.items()}

    def reset(self):
        """Return plant and subsystems to the initial (operating) state."""
        self.plant.reset()
        for sid, sub in self.subsystems.items():
            sub.advance(self.x0[sid].copy())
            sub.u_last = sub._u_ref()
            sub.solve_times.clear()

    def controlled_sids(self):
        return sorted(sid for sid, sub in self.subsystems.items() if sub.controlled)

    def tracked_for(self, sid: int):
        return [(name, row) for name, s, row in self.tracked if s == sid]

    def update_costs(self, r_d_map: dict, bound_map: dict):
        """Rebuild subsystem cost specs from scheduled values."""
        for sid, sub in self.subsystems.items():
            specs = []
            rows = [(row, self.tracking_weights[name], r_d_map[name])
                    for name, s, row in self.weighted if s == sid]
            if rows:
                specs.append(LocalCostSpec(
                    kind="tracking",
                    rows=tuple(r for r, _, _ in rows),
                    Q_c=np.array([q for _, q, _ in rows]),
                    r_d=np.array([v for _, _, v in rows])))
            crows = [(row, self.constraint_weights[name], bound_map[name])
                     for name, s, row in self.constrained if s == sid]
            if crows:
                specs.append(LocalCostSpec(
                    kind="constraint",
                    rows=tuple(r for r, _, _ in crows),
                    Q_c=np.array([q for _, q, _ in crows]),
                    y_bar=np.array([b for _, _, b in crows])))
            sub.costs = tuple(specs)

    def setpoint_block(self, sid: int, r_d_map: dict) -> np.ndarray:
        """The subsystem's auxiliary set-point block at the desired values."""
        return np.array([r_d_map[name] for name, _ in self.tracked_for(sid)])


def _check_scenario(bench: Benchmark, scenario: Scenario):
    needed = {name for name, _, _ in bench.tracked}
    needed.update(name for name, _, _ in bench.weighted)
    for name in sorted(needed):
        if name not in scenario.setpoints:
            raise ConfigError(f"scenario '{scenario.name}' has no set-point "
                              f"schedule for tracked output '{name}'")
    for name, _, _ in bench.constrained:
        if name not in scenario.bounds:
            raise ConfigError(f"scenario '{scenario.name}' has no bound "
                              f"schedule for constrained output '{name}'")
    for name in scenario.disturbances:
        if name not in bench.dist_inputs:
            raise ConfigError(f"scenario '{scenario.name}' drives unknown "
                              f"disturbance '{name}'")


def _setpoint_box(bench: Benchmark, scenario: Scenario):
    """Per-component set-point bounds: scenario override, benchmark default,
    else 20 percent of the initial desired magnitude (at least one unit)."""
    defaults = bench.coordinator.get("setpoint_bounds", {})
    lo, hi = [], []
    for name, _, _ in bench.tracked:
        box = scenario.setpoint_bounds.get(name) or defaults.get(name)
        if box is None:
            r0 = scenario.setpoint_at(name, 0)
            span = 0.2 * max(abs(r0), 1.0)
            box = (r0 - span, r0 + span)
        lo.append(float(box[0]))
        hi.append(float(box[1]))
    return np.array(lo), np.array(hi)


_CONFIG_KEYS = ("eps_max", "sigma_max", "filter_gain", "kappa", "alpha_min",
                "gain_iters", "grid_size", "radius_min", "radius_max",
                "gamma_e", "gamma_c", "threads")


def _coordinator_config(bench: Benchmark, scenario: Scenario, overrides: dict):
    merged = dict(bench.coordinator)
    merged.update(scenario.coordinator)
    merged.pop("setpoint_bounds", None)
    radius_spec = merged.pop("radius0", 1.0)
    for key, val in overrides.items():
        if val is not None:
            merged[key] = val
    unknown = set(merged) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown coordinator setting(s): {sorted(unknown)}")

    def per_output(spec, default):
        # a mapping gives one value per coordinated output, by name
        if isinstance(spec, dict):
            return np.array([float(spec.get(name, default))
                             for name, _, _ in bench.tracked])
        return float(spec)

    radius0 = per_output(radius_spec, 1.0)
    if "radius_max" in merged:
        merged["radius_max"] = per_output(merged["radius_max"], float("inf"))
    try:
        return CoordinatorConfig(radius0=radius0, **merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _trace_columns(bench: Benchmark, scenario: Scenario):
    cols = ["step", "time_s"]
    for sid in bench.controlled_sids():
        sub = bench.subsystems[sid]
        cols += [f"u_{bench.sub_names[sid]}_{name}" for name in sub.u_names]
    for sid in sorted(bench.subsystems):
        sub = bench.subsystems[sid]
        cols += [f"y_{bench.sub_names[sid]}_{name}" for name in sub.y_names]
    cols += list(bench.v_labels)
    cols += [f"r_d_{name}" for name, _, _ in bench.weighted]
    cols += [f"bound_{name}" for name, _, _ in bench.constrained]
    cols += [f"d_{name}" for name in sorted(bench.dist_inputs)]
    cols += [f"r_opt_{name}" for name, _, _ in bench.tracked]
    cols += ["J_c", "J_cl_step", "eps", "sigma_used", "n_evaluations",
             "alpha", "rho_hat", "presumption_err", "post_start"]
    for sid in bench.controlled_sids():
        cols.append(f"walltime_ms_{bench.sub_names[sid]}")
    cols.append("walltime_ms_cycle")
    return cols


_INT_COLUMNS = {"step", "sigma_used", "n_evaluations", "post_start"}
_TEXT_COLUMNS = ("strategy", "scenario", "status")


def walltime_columns(columns):
    return [c for c in columns if c.startswith("walltime_ms")]


@dataclass
class ClosedLoopTrace:
    """Per-cycle record of one closed-loop run, CSV round-trippable.

    Every run writes the same fixed column set for a given benchmark:
    applied inputs, measured outputs, realized couplings, scheduled and
    chosen set-points, cost and reconciliation diagnostics, and solver
    wall-times (the only columns allowed to differ between repeated runs).
    """

    strategy: str
    scenario: str
    columns: tuple
    data: np.ndarray          # (n_rows, n_columns)
    failed: str = ""

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ClosedLoopError("trace data does not match its columns")

    @property
    def n_steps(self):
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            idx = self.columns.index(name)
        except ValueError:
            raise KeyError(f"trace has no column '{name}'") from None
        return self.data[:, idx]

    def find_column(self, prefix: str, suffix: str) -> str:
        hits = [c for c in self.columns
                if c.startswith(prefix) and c.endswith(suffix)]
        if len(hits) != 1:
            raise KeyError(f"trace has {len(hits)} columns matching "
                           f"{prefix}*{suffix}")
        return hits[0]

    def _format(self, name, value):
        if name in _INT_COLUMNS:
            return str(int(value))
        return repr(float(value))

    def to_csv(self, path):
        """Write the trace atomically (temp file, rename on success)."""
        path = os.fspath(path)
        tmp = path + ".tmp"
        status = self.failed if self.failed else "ok"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.columns) + list(_TEXT_COLUMNS))
            for row in self.data:
                cells = [self._format(c, v) for c, v in zip(self.columns, row)]
                writer.writerow(cells + [self.strategy, self.scenario, status])
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path):
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ClosedLoopError(f"{path}: empty trace file") from None
            rows = list(reader)
        for name in _TEXT_COLUMNS:
            if name not in header:
                raise ClosedLoopError(f"{path}: not a closed-loop trace "
                                      f"(missing '{name}' column)")
        text_idx = {name: header.index(name) for name in _TEXT_COLUMNS}
        num_idx = [i for i, c in enumerate(header) if c not in _TEXT_COLUMNS]
        columns = tuple(header[i] for i in num_idx)
        if not rows:
            raise ClosedLoopError(f"{path}: trace has no data rows")
        try:
            data = np.array([[float(row[i]) for i in num_idx] for row in rows])
        except (ValueError, IndexError) as exc:
            raise ClosedLoopError(f"{path}: malformed trace row ({exc})") from exc
        first = rows[0]
        status = first[text_idx["status"]]
        return cls(strategy=first[text_idx["strategy"]],
                   scenario=first[text_idx["scenario"]],
                   columns=columns, data=data,
                   failed="" if status == "ok" else status)


def _realized_cost(bench: Benchmark, y_map: dict, r_d_map: dict, bound_map: dict):
    """Central cost of the measured outputs at one step, per output name."""
    parts = {}
    for name, sid, row in bench.weighted:
        dev = float(y_map[sid][row]) - r_d_map[name]
        parts[name] = bench.tracking_weights[name] * dev * dev
    for name, sid, row in bench.constrained:
        over = max(float(y_map[sid][row]) - bound_map[name], 0.0)
        parts[name] = bench.constraint_weights[name] * over * over
    return parts


def _shift_warm(warm):
    if warm is None:
        return None
    w = np.asarray(warm, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        return w
    return np.vstack([w[1:], w[-1:]])


class _RunRecorder:
    """Accumulates per-cycle rows in the fixed column order."""

    def __init__(self, bench, scenario, strategy):
        self.bench = bench
        self.scenario = scenario
        self.strategy = strategy
        self.columns = _trace_columns(bench, scenario)
        self.rows = []
        self.failed = ""

    def add(self, values: dict):
        missing = [c for c in self.columns if c not in values]
        if missing:
            raise ClosedLoopError(f"trace row is missing {missing}")
        self.rows.append([float(values[c]) for c in self.columns])

    def finish(self):
        data = (np.array(self.rows) if self.rows
                else np.zeros((0, len(self.columns))))
        return ClosedLoopTrace(strategy=self.strategy,
                               scenario=self.scenario.name,
                               columns=tuple(self.columns),
                               data=data, failed=self.failed)


def _drain_walltimes(bench):
    out = {}
    for sid in bench.controlled_sids():
        sub = bench.subsystems[sid]
        out[sid] = 1e3 * sum(sub.solve_times)
        sub.solve_times.clear()
    return out


def _schedule_maps(bench, scenario, k):
    names = {name for name, _, _ in bench.tracked}
    names.update(name for name, _, _ in bench.weighted)
    r_d = {name: scenario.setpoint_at(name, k) for name in sorted(names)}
    bounds = {name: scenario.bound_at(name, k) for name, _, _ in bench.constrained}
    dist = {name: scenario.disturbance_at(name, k)
            for name in sorted(bench.dist_inputs)}
    return r_d, bounds, dist


def _disturbance_offsets(bench, d_map):
    extra = {}
    for name, value in d_map.items():
        if value == 0.0:
            continue
        sid, channel = bench.dist_inputs[name]
        vec = extra.setdefault(sid, np.zeros(bench.subsystems[sid].model.nu))
        vec[channel] += value
    return extra


def _row_common(bench, scenario, k, r_d_map, bound_map, d_map, step,
                parts, walltimes, cycle_ms):
    vals = {
        "step": k,
        "time_s": k * bench.Ts,
        "post_start": scenario.post_transient_start,
        "J_cl_step": sum(parts.values()),
        "walltime_ms_cycle": cycle_ms,
    }
    for sid in sorted(bench.subsystems):
        sub = bench.subsystems[sid]
        for j, name in enumerate(sub.y_names):
            vals[f"y_{bench.sub_names[sid]}_{name}"] = step.y[sid][j]
    for label, value in zip(bench.v_labels, step.v_stack):
        vals[label] = value
    for name, _, _ in bench.weighted:
        vals[f"r_d_{name}"] = r_d_map[name]
    for name, _, _ in bench.constrained:
        vals[f"bound_{name}"] = bound_map[name]
    for name in sorted(bench.dist_inputs):
        vals[f"d_{name}"] = d_map.get(name, 0.0)
    for sid in bench.controlled_sids():
        vals[f"walltime_ms_{bench.sub_names[sid]}"] = walltimes[sid]
    return vals


def run_hierarchical(bench: Benchmark, scenario: Scenario, eps_max=None,
                     sigma_max=None, grid_size=None, threads=None) -> ClosedLoopTrace:
    """Drive the benchmark with per-cycle set-point coordination.

    Each cycle: measure, optimize the auxiliary set-point on the current
    states, re-evaluate the subsystem plans at the chosen set-point and
    reconciled couplings, apply the first moves, and step the truth plant.
    Solver failures end the run early; the partial trace is flagged.
    """
    _check_scenario(bench, scenario)
    bench.reset()
    overrides = {"eps_max": eps_max, "sigma_max": sigma_max,
                 "grid_size": grid_size, "threads": threads}
    cfg = _coordinator_config(bench, scenario, overrides)
    lower, upper = _setpoint_box(bench, scenario)
    r_d0, bound0, _ = _schedule_maps(bench, scenario, 0)
    r_init = np.array([r_d0[name] for name, _, _ in bench.tracked])
    r_init = np.clip(r_init, lower, upper)
    coordinator = Coordinator(bench.topology, bench.subsystems, cfg,
                              r_init, lower, upper, v0_cold=bench.v0)
    edges = list(bench.topology.edges)
    N = bench.topology.horizon
    rec = _RunRecorder(bench, scenario, bench.name)
    prev_targets = None
    try:
        for k in range(scenario.n_sim):
            t0 = time.perf_counter()
            r_d_map, bound_map, d_map = _schedule_maps(bench, scenario, k)
            bench.update_costs(r_d_map, bound_map)
            # a scheduled target change moves the cost landscape; restart
            # the search from the nominal radius instead of the decayed one
            targets = (tuple(sorted(r_d_map.items())),
                       tuple(sorted(bound_map.items())))
            if prev_targets is not None and targets != prev_targets:
                coordinator.reset_radius()
            prev_targets = targets
            try:
                plan = coordinator.plan()
                if plan.all_untrusted:
                    raise CoordinationError(
                        "no candidate set-point reached a trusted fixed point")
                u_map = {sid: plan.result.responses[sid].u[0]
                         for sid in bench.controlled_sids()}
                step = bench.plant.step(u_map, _disturbance_offsets(bench, d_map))
            except _RUN_ERRORS as exc:
                rec.failed = f"cycle {k}: {exc}"
                log.warning("run stopped early at cycle %d: %s", k, exc)
                break
            for sid, sub in bench.subsystems.items():
                sub.advance(step.x[sid], u_map.get(sid))
            if bench.v0.size:
                v_plan = profile_to_matrix(plan.result.v_in_star, edges, N)[0]
                presumption = float(np.linalg.norm(v_plan - step.v_stack))
            else:
                presumption = 0.0
            parts = _realized_cost(bench, step.y, r_d_map, bound_map)
            walltimes = _drain_walltimes(bench)
            cycle_ms = 1e3 * (time.perf_counter() - t0)
            vals = _row_common(bench, scenario, k, r_d_map, bound_map, d_map,
                               step, parts, walltimes, cycle_ms)
            for sid in bench.controlled_sids():
                sub = bench.subsystems[sid]
                for j, name in enumerate(sub.u_names):
                    vals[f"u_{bench.sub_names[sid]}_{name}"] = u_map[sid][j]
            for (name, _, _), value in zip(bench.tracked, plan.r_opt):
                vals[f"r_opt_{name}"] = value
            vals.update({
                "J_c": plan.J_c,
                "eps": (plan.result.residual_history[-1]
                        if plan.result.residual_history else 0.0),
                "sigma_used": plan.sigma_used,
                "n_evaluations": plan.n_evaluations,
                "alpha": plan.alpha,
                "rho_hat": plan.rho_hat,
                "presumption_err": presumption,
            })
            rec.add(vals)
    finally:
        coordinator.close()
    return rec.finish()


def run_decentralized(bench: Benchmark, scenario: Scenario) -> ClosedLoopTrace:
    """Baseline without coordination: track the desired values directly.

    Each controlled subsystem plans against the couplings last measured at
    the plant, held constant over its horizon; nobody re-prices set-points
    and uncontrolled neighbors are not consulted.  The trace has the same
    columns as a hierarchical run; reconciliation diagnostics are zero or
    NaN and J_c is the cost the solved subproblems predicted under the
    frozen couplings.
    """
    _check_scenario(bench, scenario)
    bench.reset()
    N = bench.topology.horizon
    v_frozen = {sid: bench.plant.routing.in_block(bench.v_op_step, sid).copy()
                for sid in bench.controlled_sids()}
    warms = {}
    rec = _RunRecorder(bench, scenario, bench.name + "-decentralized")
    for k in range(scenario.n_sim):
        t0 = time.perf_counter()
        r_d_map, bound_map, d_map = _schedule_maps(bench, scenario, k)
        bench.update_costs(r_d_map, bound_map)
        u_map, J_pred = {}, 0.0
        v_assumed = []
        try:
            for sid in bench.controlled_sids():
                sub = bench.subsystems[sid]
                V = np.tile(v_frozen[sid], (N, 1))
                res = sub.respond(bench.setpoint_block(sid, r_d_map), V,
                                  warm=warms.get(sid))
                warms[sid] = _shift_warm(res.warm)
                u_map[sid] = res.u[0]
                J_pred += res.J
                v_assumed.append(v_frozen[sid])
            step = bench.plant.step(u_map, _disturbance_offsets(bench, d_map))
        except _RUN_ERRORS as exc:
            rec.failed = f"cycle {k}: {exc}"
            log.warning("run stopped early at cycle %d: %s", k, exc)
            break
        for sid, sub in bench.subsystems.items():
            sub.advance(step.x[sid], u_map.get(sid))
        presumption = 0.0
        if v_assumed:
            actual = np.concatenate([step.v[sid] for sid in bench.controlled_sids()])
            presumption = float(np.linalg.norm(np.concatenate(v_assumed) - actual))
        for sid in bench.controlled_sids():
            v_frozen[sid] = step.v[sid].copy()
        parts = _realized_cost(bench, step.y, r_d_map, bound_map)
        walltimes = _drain_walltimes(bench)
        cycle_ms = 1e3 * (time.perf_counter() - t0)
        vals = _row_common(bench, scenario, k, r_d_map, bound_map, d_map,
                           step, parts, walltimes, cycle_ms)
        for sid in bench.controlled_sids():
            sub = bench.subsystems[sid]
            for j, name in enumerate(sub.u_names):
                vals[f"u_{bench.sub_names[sid]}_{name}"] = u_map[sid][j]
        for name, _, _ in bench.tracked:
            vals[f"r_opt_{name}"] = r_d_map[name]
        vals.update({
            "J_c": J_pred,
            "eps": float("nan"),
            "sigma_used": 0,
            "n_evaluations": 0,
            "alpha": float("nan"),
            "rho_hat": float("nan"),
            "presumption_err": presumption,
        })
        rec.add(vals)
    return rec.finish()


@dataclass
class PerformanceReport:
    """Summary metrics of one closed-loop trace."""

    strategy: str
    scenario: str
    n_steps: int
    Ts: float
    J_cl: float                # average realized central cost per step
    J_cl_per_output: dict      # output name -> average contribution
    violations: dict           # bounded output -> {"full": kg, "post": kg}
    post_transient_start: int
    walltime_cycle_median_ms: float
    walltime_cycle_max_ms: float
    solver_median_ms: dict     # block name -> median solver time per cycle
    failed: str = ""

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "scenario": self.scenario,
            "n_steps": self.n_steps,
            "Ts": self.Ts,
            "J_cl": self.J_cl,
            "J_cl_per_output": dict(sorted(self.J_cl_per_output.items())),
            "violations": {k: dict(v) for k, v in sorted(self.violations.items())},
            "post_transient_start": self.post_transient_start,
            "walltime_cycle_median_ms": self.walltime_cycle_median_ms,
            "walltime_cycle_max_ms": self.walltime_cycle_max_ms,
            "solver_median_ms": dict(sorted(self.solver_median_ms.items())),
            "failed": self.failed,
        }


def closed_loop_cost(trace: ClosedLoopTrace, tracking_weights: dict,
                     constraint_weights: dict, Ts: float = None) -> PerformanceReport:
    """Distill a trace into realized cost, violation and timing metrics.

    The realized central cost charges the measured outputs against the
    scheduled desired values and bounds with the central weights; the
    violation integral accumulates max(y - bound, 0) * Ts in flow units.
    The post-transient figures restart the accumulation at the trace's
    post_start marker.
    """
    n = trace.n_steps
    if n == 0:
        raise ClosedLoopError("cannot report on an empty trace")
    if Ts is None:
        tcol = trace.column("time_s")
        Ts = float(tcol[1] - tcol[0]) if n > 1 else 1.0
    per_output = {}
    for name, Q in tracking_weights.items():
        y = trace.column(trace.find_column("y_", "_" + name))
        r_d = trace.column(f"r_d_{name}")
        per_output[name] = float(np.mean(Q * (y - r_d) ** 2))
    violations = {}
    post = int(trace.column("post_start")[0]) if "post_start" in trace.columns else 0
    for name, Q in constraint_weights.items():
        y = trace.column(trace.find_column("y_", "_" + name))
        bound = trace.column(f"bound_{name}")
        over = np.maximum(y - bound, 0.0)
        per_output[name] = float(np.mean(Q * over ** 2))
        violations[name] = {
            "full": float(np.sum(over) * Ts),
            "post": float(np.sum(over[post:]) * Ts),
        }
    cycle = trace.column("walltime_ms_cycle")
    solver_median = {}
    for col in walltime_columns(trace.columns):
        if col == "walltime_ms_cycle":
            continue
        solver_median[col[len("walltime_ms_"):]] = float(np.median(trace.column(col)))
    return PerformanceReport(
        strategy=trace.strategy, scenario=trace.scenario, n_steps=n, Ts=Ts,
        J_cl=float(sum(per_output.values())), J_cl_per_output=per_output,
        violations=violations, post_transient_start=post,
        walltime_cycle_median_ms=float(np.median(cycle)),
        walltime_cycle_max_ms=float(np.max(cycle)),
        solver_median_ms=solver_median, failed=trace.failed)


def compare_traces(a: ClosedLoopTrace, b: ClosedLoopTrace):
    """Side-by-side metrics of two runs of the same scenario.

    Returns (rows, identical) where rows is a list of
    (metric, value_a, value_b, delta) and identical reflects equality of
    everything except wall-time columns.
    """
    if a.scenario != b.scenario:
        raise ClosedLoopError(f"traces come from different scenarios: "
                              f"'{a.scenario}' vs '{b.scenario}'")
    shared_schedule = [c for c in a.columns
                       if c.startswith(("r_d_", "bound_", "d_")) or c == "step"]
    for col in shared_schedule:
        if col not in b.columns:
            raise ClosedLoopError(f"traces disagree on schedule columns: "
                                  f"'{col}' missing from {b.strategy}")
    n = min(a.n_steps, b.n_steps)
    if n == 0:
        raise ClosedLoopError("cannot compare empty traces")
    for col in shared_schedule:
        if not np.array_equal(a.column(col)[:n], b.column(col)[:n]):
            raise ClosedLoopError(f"traces come from different scenarios: "
                                  f"column '{col}' differs")

    def metrics(t):
        J = float(np.mean(t.column("J_cl_step")))
        out = {"J_cl": J}
        tcol = t.column("time_s")
        Ts = float(tcol[1] - tcol[0]) if t.n_steps > 1 else 1.0
        post = int(t.column("post_start")[0]) if "post_start" in t.columns else 0
        for col in t.columns:
            if not col.startswith("bound_"):
                continue
            name = col[len("bound_"):]
            y = t.column(t.find_column("y_", "_" + name))
            over = np.maximum(y - t.column(col), 0.0)
            out[f"violation_{name}"] = float(np.sum(over) * Ts)
            out[f"violation_post_{name}"] = float(np.sum(over[post:]) * Ts)
        out["walltime_median_ms"] = float(np.median(t.column("walltime_ms_cycle")))
        out["walltime_max_ms"] = float(np.max(t.column("walltime_ms_cycle")))
        for col in walltime_columns(t.columns):
            if col != "walltime_ms_cycle":
                out[f"{col}_median"] = float(np.median(t.column(col)))
        return out

    ma, mb = metrics(a), metrics(b)
    keys = list(ma)
    for key in mb:
        if key not in ma:
            keys.append(key)
    rows = [(k, ma.get(k, float("nan")), mb.get(k, float("nan")),
             mb.get(k, float("nan")) - ma.get(k, float("nan"))) for k in keys]

    identical = a.n_steps == b.n_steps and a.columns == b.columns
    if identical:
        skip = set(walltime_columns(a.columns))
        for col in a.columns:
            if col in skip:
                continue
            av, bv = a.column(col), b.column(col)
            same = np.array_equal(av, bv) or np.array_equal(
                np.isnan(av), np.isnan(bv)) and np.array_equal(
                av[~np.isnan(av)], bv[~np.isnan(bv)])
            if not same:
                identical = False
                break
    return rows, identical
