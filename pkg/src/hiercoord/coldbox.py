"""Cold-box surrogate benchmark: block models and decomposition builders.

The shipped configuration describes four physical blocks of a helium
liquefier cold end (J-T bath, two heat-exchanger groups, an expansion
turbine with a square-root flow law) plus their coupling network, central
costs and two decompositions.  `build_coldbox_4ss` keeps the blocks
separate; `build_coldbox_2ss` fuses the exchanger train and the turbine
into one Brayton group by exact elimination of their internal couplings,
so both decompositions share the same physics.
"""

from __future__ import annotations

import os

import numpy as np

from . import models
from .closedloop import Benchmark, PlantSimulator
from .configio import (BenchmarkConfig, ConfigError, Scenario,
                       load_benchmark_config, load_scenario)
from .control import LinearMpc, MpcConfig, NmpcConfig, NonlinearMpc
from .graph import CouplingEdge, Topology, in_stack_order
from .models import NonlinearTerm, Subsystem, SubsystemState, linear_about

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")
DEFAULT_CONFIG_PATH = os.path.join(CONFIG_DIR, "coldbox.yaml")

SHIPPED_SCENARIOS = {
    "equilibrium": os.path.join(CONFIG_DIR, "scenario_equilibrium.yaml"),
    "constraint_step": os.path.join(CONFIG_DIR, "scenario_constraint_step.yaml"),
    "comparison": os.path.join(CONFIG_DIR, "scenario_comparison.yaml"),
}

STRATEGIES = ("hierarchical-4ss", "hierarchical-2ss", "decentralized")

_TERM_SPACE = {"x": "state", "y": "y", "w": "w"}


def scenario_path(name: str) -> str:
    try:
        return SHIPPED_SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown shipped scenario '{name}'; "
                          f"available: {sorted(SHIPPED_SCENARIOS)}") from None


def load_shipped_scenario(name: str) -> Scenario:
    return load_scenario(scenario_path(name))


def _block_model(blk, Ts):
    nv = len(blk.in_labels)
    Bv = blk.Bv if blk.Bv is not None else np.zeros((blk.nx, nv))
    w_op = blk.w_op.copy()
    if blk.term_rows:
        # term rows carry their whole value through the nonlinearity
        w_op[list(blk.term_rows)] = 0.0
    terms = tuple(NonlinearTerm(t.kind, _TERM_SPACE[t.space], t.row, t.coeff,
                                a0=t.a0, avec=t.avec, b0=t.b0, bvec=t.bvec)
                  for t in blk.terms)
    return linear_about(A=blk.A, Bv=Bv, Cy=blk.Cy, Cw=blk.Cw, Bu=blk.Bu,
                        Dyu=blk.Dyu, Dyv=blk.Dyv, Dwu=blk.Dwu, Dwv=blk.Dwv,
                        x_op=blk.x_op, u_op=blk.u_op, v_op=blk.v_op,
                        y_op=blk.y_op, w_op=w_op, Ts=Ts, terms=terms)


def _controller(spec: dict, horizon: int, u_min, u_max, nmpc_budget=None):
    Q = np.asarray(spec["Q"], dtype=float)
    R = np.asarray(spec["R"], dtype=float)
    if spec["type"] == "linear":
        return LinearMpc(MpcConfig(N=horizon, Q=Q, R=R, u_min=u_min, u_max=u_max))
    kwargs = {}
    for key in ("budget", "fd_step", "tol", "step0", "step_max",
                "ls_max", "shrink", "grow"):
        if key in spec:
            kwargs[key] = spec[key]
    if nmpc_budget is not None:
        kwargs["budget"] = int(nmpc_budget)
    return NonlinearMpc(NmpcConfig(N=horizon, Q=Q, R=R, u_min=u_min,
                                   u_max=u_max, **kwargs))


def _edge_offsets(cfg: BenchmarkConfig):
    """Starting offsets of each edge inside its endpoint stacks."""
    in_off, out_off = {}, {}
    blocks = cfg.blocks
    for name in blocks:
        pos = 0
        for e in sorted((e for e in cfg.edges if e.dst == name),
                        key=lambda e: blocks[e.src].sid):
            in_off[(e.src, e.dst)] = pos
            pos += e.dim
        pos = 0
        for e in sorted((e for e in cfg.edges if e.src == name),
                        key=lambda e: blocks[e.dst].sid):
            out_off[(e.src, e.dst)] = pos
            pos += e.dim
    return in_off, out_off


def _stack_ops(topology: Topology, espec_by_pair: dict, names_by_sid: dict):
    """Operating coupling stack (one step and horizon-tiled) plus labels."""
    N = topology.horizon
    step_parts, tiled_parts, labels = [], [], []
    for edge in in_stack_order(topology):
        spec = espec_by_pair[(edge.source, edge.dest)]
        ops = np.array([op for _, op in spec.signals])
        step_parts.append(ops)
        tiled_parts.append(np.tile(ops, N))
        src, dst = names_by_sid[edge.source], names_by_sid[edge.dest]
        labels += [f"v_{src}->{dst}_{sig}" for sig, _ in spec.signals]
    v_op_step = np.concatenate(step_parts) if step_parts else np.zeros(0)
    v0 = np.concatenate(tiled_parts) if tiled_parts else np.zeros(0)
    return v0, v_op_step, tuple(labels)


def _assemble(cfg: BenchmarkConfig, strategy_key: str, topology: Topology,
              subsystems: dict, names_by_sid: dict, espec_by_pair: dict,
              u_boxes: dict, block_sid_map: dict) -> Benchmark:
    tracking_weights = {t.output: t.Q_c for t in cfg.tracking}
    constraint_weights = {c.output: c.Q_c for c in cfg.constraints}

    tracked = []
    for sid in sorted(subsystems):
        sub = subsystems[sid]
        if not sub.controlled:
            continue
        rows = sub.r_rows if sub.r_rows is not None else range(len(sub.y_names))
        for row in rows:
            name = sub.y_names[row]
            if name not in tracking_weights:
                raise ConfigError(f"output '{name}' is coordinated in strategy "
                                  f"'{strategy_key}' but has no central tracking cost")
            tracked.append((name, sid, row))
    if not tracked:
        raise ConfigError(f"strategy '{strategy_key}' coordinates no outputs")

    weighted = []
    for sid in sorted(subsystems):
        for row, name in enumerate(subsystems[sid].y_names):
            if name in tracking_weights:
                weighted.append((name, sid, row))
    missing = set(tracking_weights) - {name for name, _, _ in weighted}
    if missing:
        raise ConfigError(f"strategy '{strategy_key}' exposes no output for "
                          f"centrally priced channel(s) {sorted(missing)}")

    constrained = []
    for sid in sorted(subsystems):
        for row, name in enumerate(subsystems[sid].y_names):
            if name in constraint_weights:
                constrained.append((name, sid, row))
    missing = set(constraint_weights) - {name for name, _, _ in constrained}
    if missing:
        raise ConfigError(f"strategy '{strategy_key}' exposes no output for "
                          f"constraint(s) {sorted(missing)}")

    dist_inputs = {}
    for dname, (bname, channel) in cfg.disturbances.items():
        if bname not in block_sid_map:
            raise ConfigError(f"disturbance '{dname}' targets block '{bname}' "
                              f"which strategy '{strategy_key}' does not expose")
        sid, u_off = block_sid_map[bname]
        dist_inputs[dname] = (sid, u_off + cfg.blocks[bname].u_names.index(channel))

    v0, v_op_step, v_labels = _stack_ops(topology, espec_by_pair, names_by_sid)
    plant_models = {sid: sub.model for sid, sub in subsystems.items()}
    plant = PlantSimulator(plant_models, topology, u_boxes)
    return Benchmark(
        name=f"coldbox-{strategy_key}", Ts=cfg.Ts, topology=topology,
        subsystems=subsystems, plant=plant, sub_names=dict(names_by_sid),
        tracked=tuple(tracked), constrained=tuple(constrained),
        weighted=tuple(weighted),
        tracking_weights=tracking_weights, constraint_weights=constraint_weights,
        dist_inputs=dist_inputs, v0=v0, v_op_step=v_op_step, v_labels=v_labels,
        coordinator=dict(cfg.coordinator))


def _strategy(cfg: BenchmarkConfig, key: str):
    try:
        return cfg.strategies[key]
    except KeyError:
        raise ConfigError(f"configuration has no strategy '{key}'; "
                          f"available: {sorted(cfg.strategies)}") from None


def build_coldbox_4ss(config: BenchmarkConfig = None, config_path=None,
                      nmpc_budget=None) -> Benchmark:
    """The four-subsystem decomposition: every physical block on its own."""
    cfg = config or load_benchmark_config(config_path or DEFAULT_CONFIG_PATH)
    strat = _strategy(cfg, "4ss")
    sid_of = {name: blk.sid for name, blk in cfg.blocks.items()}
    names_by_sid = {sid: name for name, sid in sid_of.items()}
    edges = tuple(CouplingEdge(sid_of[e.src], sid_of[e.dst], e.dim)
                  for e in cfg.edges)
    topology = Topology(max(sid_of.values()),
                        frozenset(sid_of[n] for n in strat.controlled),
                        edges, cfg.horizon)
    espec_by_pair = {(sid_of[e.src], sid_of[e.dst]): e for e in cfg.edges}

    subsystems, u_boxes, block_sid_map = {}, {}, {}
    for name, blk in cfg.blocks.items():
        model = _block_model(blk, cfg.Ts)
        controller = None
        if name in strat.controllers:
            controller = _controller(strat.controllers[name], cfg.horizon,
                                     blk.u_min, blk.u_max, nmpc_budget)
        r_rows = strat.r_rows.get(name)
        subsystems[blk.sid] = Subsystem(
            sid=blk.sid, model=model, state=SubsystemState(model.op["x"]),
            controller=controller, r_rows=r_rows,
            u_names=blk.u_names, y_names=blk.y_names)
        if blk.nu:
            u_boxes[blk.sid] = (blk.u_min, blk.u_max)
        block_sid_map[name] = (blk.sid, 0)

    return _assemble(cfg, "4ss", topology, subsystems, names_by_sid,
                     espec_by_pair, u_boxes, block_sid_map)


def _resolve_in_slot(cfg, in_off, spec, path):
    block = spec["block"]
    src = spec["from"]
    sig = spec["signal"]
    edge = next((e for e in cfg.edges if e.src == src and e.dst == block), None)
    if edge is None:
        raise ConfigError(f"{path}: no edge {src} -> {block} in the base network")
    names = [s for s, _ in edge.signals]
    if sig not in names:
        raise ConfigError(f"{path}: edge {src} -> {block} carries no signal '{sig}'")
    return cfg.blocks[block].sid, in_off[(src, block)] + names.index(sig), edge


def _resolve_out_slot(cfg, out_off, spec, path):
    block = spec["block"]
    dst = spec["to"]
    sig = spec["signal"]
    edge = next((e for e in cfg.edges if e.src == block and e.dst == dst), None)
    if edge is None:
        raise ConfigError(f"{path}: no edge {block} -> {dst} in the base network")
    names = [s for s, _ in edge.signals]
    if sig not in names:
        raise ConfigError(f"{path}: edge {block} -> {dst} carries no signal '{sig}'")
    return cfg.blocks[block].sid, out_off[(block, dst)] + names.index(sig)


def build_coldbox_2ss(config: BenchmarkConfig = None, config_path=None,
                      nmpc_budget=None) -> Benchmark:
    """The two-subsystem decomposition: J-T bath versus fused Brayton group.

    The exchanger and turbine blocks are eliminated into one canonical
    model; the reduction is exact, so the fused group reproduces the
    four-block physics to rounding error.
    """
    cfg = config or load_benchmark_config(config_path or DEFAULT_CONFIG_PATH)
    strat = _strategy(cfg, "2ss")
    comp = strat.compose
    if comp is None or strat.edges is None:
        raise ConfigError("strategy '2ss' needs 'compose' and 'edges' sections")
    comp_name = comp["name"]
    comp_sid = int(comp["sid"])
    comp_blocks = list(comp["blocks"])
    for name in comp_blocks:
        if name not in cfg.blocks:
            raise ConfigError(f"compose references unknown block '{name}'")
    sid_of = {name: blk.sid for name, blk in cfg.blocks.items()}
    base_models = {name: _block_model(blk, cfg.Ts) for name, blk in cfg.blocks.items()}
    in_off, out_off = _edge_offsets(cfg)

    comp_sids = sorted(sid_of[n] for n in comp_blocks)
    inner = set(comp_blocks)
    links = []
    for e in cfg.edges:
        if e.src in inner and e.dst in inner:
            for i in range(e.dim):
                links.append((sid_of[e.src], out_off[(e.src, e.dst)] + i,
                              sid_of[e.dst], in_off[(e.src, e.dst)] + i))

    v_ext, v_ops = [], []
    for i, spec in enumerate(comp.get("in_signals", ())):
        sid, row, edge = _resolve_in_slot(cfg, in_off, spec,
                                          f"strategies.2ss.compose.in_signals[{i}]")
        v_ext.append((sid, row))
        v_ops.append(dict(edge.signals)[spec["signal"]])
    y_sel, y_names, y_ops = [], [], []
    for i, (bname, yname) in enumerate(comp.get("y", ())):
        if bname not in cfg.blocks or yname not in cfg.blocks[bname].y_names:
            raise ConfigError(f"strategies.2ss.compose.y[{i}]: unknown output "
                              f"'{bname}.{yname}'")
        row = cfg.blocks[bname].y_names.index(yname)
        y_sel.append((sid_of[bname], row))
        y_names.append(yname)
        y_ops.append(cfg.blocks[bname].y_op[row])
    w_sel, w_ops = [], []
    for i, spec in enumerate(comp.get("out_signals", ())):
        sid, row = _resolve_out_slot(cfg, out_off, spec,
                                     f"strategies.2ss.compose.out_signals[{i}]")
        w_sel.append((sid, row))
        blk = cfg.block_by_sid(sid)
        w_ops.append(0.0 if row in blk.term_rows else blk.w_op[row])

    fused, index = models.compose({sid_of[n]: base_models[n] for n in comp_blocks},
                                  links, v_ext, y_sel, w_sel)
    fused.op = {
        "x": np.concatenate([cfg.block_by_sid(s).x_op for s in comp_sids]),
        "u": np.concatenate([cfg.block_by_sid(s).u_op for s in comp_sids
                             if cfg.block_by_sid(s).nu]) if fused.nu else np.zeros(0),
        "v": np.array(v_ops),
        "y": np.array(y_ops),
        "w": np.array(w_ops),
    }
    fused_u_names, fused_lo, fused_hi = [], np.zeros(fused.nu), np.zeros(fused.nu)
    for s in comp_sids:
        blk = cfg.block_by_sid(s)
        if not blk.nu:
            continue
        sl = index.u_slices[s]
        fused_u_names += list(blk.u_names)
        fused_lo[sl] = blk.u_min
        fused_hi[sl] = blk.u_max

    jt_candidates = [n for n in cfg.blocks if n not in inner]
    if len(jt_candidates) != 1:
        raise ConfigError("the 2ss composition must leave exactly one block outside")
    jt_name = jt_candidates[0]
    jt_blk = cfg.blocks[jt_name]
    jt_sid = 1
    names_by_sid = {jt_sid: jt_name, comp_sid: comp_name}
    pair_sid = {jt_name: jt_sid, comp_name: comp_sid}
    edges = tuple(CouplingEdge(pair_sid[e.src], pair_sid[e.dst], e.dim)
                  for e in strat.edges)
    topology = Topology(max(pair_sid.values()),
                        frozenset(pair_sid[n] for n in strat.controlled),
                        edges, cfg.horizon)
    espec_by_pair = {(pair_sid[e.src], pair_sid[e.dst]): e for e in strat.edges}

    jt_model = base_models[jt_name]
    subsystems = {
        jt_sid: Subsystem(
            sid=jt_sid, model=jt_model, state=SubsystemState(jt_model.op["x"]),
            controller=_controller(strat.controllers[jt_name], cfg.horizon,
                                   jt_blk.u_min, jt_blk.u_max, nmpc_budget),
            r_rows=strat.r_rows.get(jt_name),
            u_names=jt_blk.u_names, y_names=jt_blk.y_names),
        comp_sid: Subsystem(
            sid=comp_sid, model=fused, state=SubsystemState(fused.op["x"]),
            controller=_controller(strat.controllers[comp_name], cfg.horizon,
                                   fused_lo, fused_hi, nmpc_budget),
            r_rows=strat.r_rows.get(comp_name),
            u_names=tuple(fused_u_names), y_names=tuple(y_names)),
    }
    u_boxes = {jt_sid: (jt_blk.u_min, jt_blk.u_max),
               comp_sid: (fused_lo, fused_hi)}
    block_sid_map = {jt_name: (jt_sid, 0)}
    for s in comp_sids:
        blk = cfg.block_by_sid(s)
        if blk.nu:
            block_sid_map[blk.name] = (comp_sid, index.u_slices[s].start)

    return _assemble(cfg, "2ss", topology, subsystems, names_by_sid,
                     espec_by_pair, u_boxes, block_sid_map)


def build_benchmark(strategy: str, config: BenchmarkConfig = None,
                    config_path=None, nmpc_budget=None) -> Benchmark:
    """Build the benchmark behind a run strategy name.

    The decentralized baseline reuses the four-subsystem decomposition;
    only the runner differs.
    """
    if strategy in ("hierarchical-4ss", "4ss", "decentralized"):
        return build_coldbox_4ss(config, config_path, nmpc_budget)
    if strategy in ("hierarchical-2ss", "2ss"):
        return build_coldbox_2ss(config, config_path, nmpc_budget)
    raise ConfigError(f"unknown strategy '{strategy}'; "
                      f"expected one of {STRATEGIES}")
