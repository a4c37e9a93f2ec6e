"""YAML configuration loading for benchmarks and scenarios.

Benchmark files describe coupled blocks in deviation form around an
operating point plus the coupling network, central costs, and decomposition
strategies.  Scenario files describe closed-loop runs: schedules for
desired values, output bounds, and disturbances.  Loaders validate shapes
and cross-references and raise ConfigError with the offending field path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml


class ConfigError(Exception):
    """A configuration file is missing, malformed, or inconsistent."""


def _fail(path: str, msg: str) -> None:
    raise ConfigError(f"{path}: {msg}")


def _require(mapping, key, path: str):
    if not isinstance(mapping, dict):
        _fail(path, f"expected a mapping, got {type(mapping).__name__}")
    if key not in mapping:
        _fail(path, f"missing required key '{key}'")
    return mapping[key]


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    return int(value)


def _as_vector(value, n: Optional[int], path: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        _fail(path, f"expected a list of numbers, got {type(value).__name__}")
    vec = np.array([_as_float(v, f"{path}[{i}]") for i, v in enumerate(value)])
    if n is not None and vec.size != n:
        _fail(path, f"expected {n} entries, got {vec.size}")
    return vec


def _as_matrix(value, rows: Optional[int], cols: Optional[int], path: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        _fail(path, f"expected a list of rows, got {type(value).__name__}")
    if rows is not None and len(value) != rows:
        _fail(path, f"expected {rows} rows, got {len(value)}")
    width = cols
    out = []
    for i, row in enumerate(value):
        vec = _as_vector(row, None, f"{path}[{i}]")
        if width is None:
            width = vec.size
        elif vec.size != width:
            _fail(path, f"row {i} has {vec.size} entries, expected {width}")
        out.append(vec)
    if not out:
        return np.zeros((0, cols or 0))
    return np.vstack(out)


def _name_op_pairs(value, path: str) -> tuple[tuple[str, ...], np.ndarray]:
    if not isinstance(value, (list, tuple)):
        _fail(path, f"expected a list of [name, value] pairs")
    names, ops = [], []
    for i, item in enumerate(value):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            _fail(f"{path}[{i}]", "expected a [name, operating value] pair")
        name, op = item
        if not isinstance(name, str):
            _fail(f"{path}[{i}]", f"name must be a string, got {name!r}")
        names.append(name)
        ops.append(_as_float(op, f"{path}[{i}][1]"))
    return tuple(names), np.array(ops)


@dataclass
class ResolvedTerm:
    """A nonlinear output term with its inputs resolved over z = [x; u; v]."""

    kind: str
    space: str
    row: int
    coeff: float
    a0: float
    avec: np.ndarray
    b0: float
    bvec: np.ndarray


@dataclass
class BlockSpec:
    """One physical block in deviation form, with resolved coupling stacks."""

    name: str
    sid: int
    x_names: tuple
    x_op: np.ndarray
    u_names: tuple
    u_op: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    A: np.ndarray
    Bu: Optional[np.ndarray]
    Bv: Optional[np.ndarray]
    y_names: tuple
    y_op: np.ndarray
    Cy: np.ndarray
    Dyu: Optional[np.ndarray]
    Dyv: Optional[np.ndarray]
    Cw: np.ndarray
    Dwu: Optional[np.ndarray]
    Dwv: Optional[np.ndarray]
    in_labels: tuple = ()    # (src block, signal) per incoming stack slot
    out_labels: tuple = ()   # (dst block, signal) per outgoing stack row
    v_op: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_op: np.ndarray = field(default_factory=lambda: np.zeros(0))
    term_rows: tuple = ()
    terms: tuple = ()        # ResolvedTerm entries

    @property
    def nx(self) -> int:
        return len(self.x_names)

    @property
    def nu(self) -> int:
        return len(self.u_names)


@dataclass
class EdgeSpec:
    src: str
    dst: str
    signals: tuple           # (name, operating value) per scalar channel

    @property
    def dim(self) -> int:
        return len(self.signals)


@dataclass
class TrackingSpec:
    output: str
    Q_c: float
    r_d: float


@dataclass
class ConstraintSpec:
    output: str
    Q_c: float
    bound: float


@dataclass
class StrategySpec:
    name: str
    controlled: tuple
    controllers: dict
    compose: Optional[dict] = None
    edges: Optional[tuple] = None   # replaces the base edge list when set
    r_rows: dict = field(default_factory=dict)


@dataclass
class BenchmarkConfig:
    Ts: float
    horizon: int
    blocks: dict             # name -> BlockSpec
    edges: tuple             # EdgeSpec entries (base decomposition)
    tracking: tuple
    constraints: tuple
    disturbances: dict       # name -> (block, input channel name)
    strategies: dict         # name -> StrategySpec
    coordinator: dict        # default coordinator settings

    def block_by_sid(self, sid: int) -> BlockSpec:
        for blk in self.blocks.values():
            if blk.sid == sid:
                return blk
        raise KeyError(sid)


def _load_yaml(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read file ({exc})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _parse_edges(raw, blocks: dict, path: str) -> tuple:
    if not isinstance(raw, (list, tuple)) or not raw:
        _fail(path, "expected a non-empty list of edges")
    edges = []
    seen = set()
    for i, item in enumerate(raw):
        epath = f"{path}[{i}]"
        src = _require(item, "src", epath)
        dst = _require(item, "dst", epath)
        for end, label in ((src, "src"), (dst, "dst")):
            if end not in blocks:
                _fail(f"{epath}.{label}", f"unknown block '{end}'")
        if src == dst:
            _fail(epath, f"self-coupling on '{src}'")
        if (src, dst) in seen:
            _fail(epath, f"duplicate edge {src} -> {dst}")
        seen.add((src, dst))
        signals, ops = _name_op_pairs(_require(item, "signals", epath), f"{epath}.signals")
        if not signals:
            _fail(f"{epath}.signals", "edge carries no signals")
        edges.append(EdgeSpec(src, dst, tuple(zip(signals, ops))))
    return tuple(edges)


def _attach_stacks(blocks: dict, edges: tuple) -> None:
    """Fill per-block coupling stacks from the edge list.

    Incoming slots sort by source sid, outgoing rows by destination sid,
    matching the coordination-layer stack conventions.
    """
    for name, blk in blocks.items():
        incoming = sorted((e for e in edges if e.dst == name), key=lambda e: blocks[e.src].sid)
        outgoing = sorted((e for e in edges if e.src == name), key=lambda e: blocks[e.dst].sid)
        in_labels, v_op = [], []
        for e in incoming:
            for sig, op in e.signals:
                in_labels.append((e.src, sig))
                v_op.append(op)
        out_labels, w_op = [], []
        for e in outgoing:
            for sig, op in e.signals:
                out_labels.append((e.dst, sig))
                w_op.append(op)
        blk.in_labels = tuple(in_labels)
        blk.out_labels = tuple(out_labels)
        blk.v_op = np.array(v_op) if v_op else np.zeros(0)
        blk.w_op = np.array(w_op) if w_op else np.zeros(0)
        for row in blk.term_rows:
            if not 0 <= row < blk.w_op.size:
                _fail(f"blocks.{name}.w.term_rows", f"row {row} outside 0..{blk.w_op.size - 1}")
        nv, nw = blk.v_op.size, blk.w_op.size
        for label, mat, rows, cols in (
            ("Bv", blk.Bv, blk.nx, nv),
            ("Dwv", blk.Dwv, nw, nv),
            ("Dyv", blk.Dyv, len(blk.y_names), nv),
        ):
            if mat is not None and mat.shape != (rows, cols):
                _fail(f"blocks.{name}.{label}",
                      f"shape {mat.shape} does not match ({rows}, {cols}) from the edge list")
        if blk.Cw.shape[0] != nw:
            _fail(f"blocks.{name}.w.Cw",
                  f"{blk.Cw.shape[0]} rows but the edge list gives {nw} outgoing channels")


def _term_input_vector(spec, blk: BlockSpec, blocks_in: tuple, path: str):
    """Resolve one term input ({const, x, u, v} reference) over z = [x;u;v]."""
    nz = blk.nx + blk.nu + len(blocks_in)
    vec = np.zeros(nz)
    const = 0.0
    if not isinstance(spec, dict):
        _fail(path, "expected a mapping with const/x/u/v keys")
    for key, entries in spec.items():
        if key == "const":
            const = _as_float(entries, f"{path}.const")
            continue
        if key not in ("x", "u", "v"):
            _fail(path, f"unknown term input space '{key}'")
        if not isinstance(entries, dict):
            _fail(f"{path}.{key}", "expected a mapping of name -> coefficient")
        for ref, coef in entries.items():
            coef = _as_float(coef, f"{path}.{key}.{ref}")
            if key == "x":
                pool = {n: i for i, n in enumerate(blk.x_names)}
            elif key == "u":
                pool = {n: i + blk.nx for i, n in enumerate(blk.u_names)}
            else:
                pool = {}
                base = blk.nx + blk.nu
                for i, (src, sig) in enumerate(blocks_in):
                    for label in (sig, f"{src}.{sig}"):
                        if label in pool:
                            pool[label] = None   # ambiguous bare name
                        else:
                            pool[label] = base + i
            if ref not in pool:
                _fail(f"{path}.{key}", f"unknown reference '{ref}'")
            idx = pool[ref]
            if idx is None:
                _fail(f"{path}.{key}", f"reference '{ref}' is ambiguous; qualify as 'block.{ref}'")
            vec[idx] = coef
    return const, vec


def _parse_terms(raw, blk: BlockSpec, path: str) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, (list, tuple)):
        _fail(path, "expected a list of term specs")
    z_op = np.concatenate([blk.x_op, blk.u_op, blk.v_op])
    terms = []
    for i, item in enumerate(raw):
        tpath = f"{path}[{i}]"
        kind = _require(item, "kind", tpath)
        if kind not in ("sqrt_flow", "bilinear"):
            _fail(f"{tpath}.kind", f"unknown term kind '{kind}'")
        space = _require(item, "space", tpath)
        if space not in ("x", "y", "w"):
            _fail(f"{tpath}.space", f"unknown term space '{space}'")
        row = _as_int(_require(item, "row", tpath), f"{tpath}.row")
        a0, avec = _term_input_vector(_require(item, "a", tpath), blk, blk.in_labels, f"{tpath}.a")
        b0, bvec = _term_input_vector(_require(item, "b", tpath), blk, blk.in_labels, f"{tpath}.b")
        if "coeff" in item:
            coeff = _as_float(item["coeff"], f"{tpath}.coeff")
        elif "flow_op" in item:
            # Calibrate the gain so the term reproduces the stated operating
            # flow exactly at the operating point.
            a_op = a0 + float(avec @ z_op)
            b_op = b0 + float(bvec @ z_op)
            if a_op * b_op <= 0.0:
                _fail(tpath, f"flow_op calibration needs a*b > 0 at the operating point "
                             f"(got a={a_op:g}, b={b_op:g})")
            coeff = _as_float(item["flow_op"], f"{tpath}.flow_op") / float(np.sqrt(a_op * b_op))
        else:
            _fail(tpath, "term needs either 'coeff' or 'flow_op'")
        terms.append(ResolvedTerm(kind, space, row, coeff, a0, avec, b0, bvec))
    return tuple(terms)


def _parse_block(name: str, raw, path: str) -> BlockSpec:
    x_names, x_op = _name_op_pairs(_require(raw, "x", path), f"{path}.x")
    nx = len(x_names)
    if nx == 0:
        _fail(f"{path}.x", "block needs at least one state")
    if "u" in raw and raw["u"]:
        u_names, u_op = _name_op_pairs(raw["u"], f"{path}.u")
    else:
        u_names, u_op = (), np.zeros(0)
    nu = len(u_names)
    u_min = _as_vector(raw["u_min"], nu, f"{path}.u_min") if nu else np.zeros(0)
    u_max = _as_vector(raw["u_max"], nu, f"{path}.u_max") if nu else np.zeros(0)
    if nu and ("u_min" not in raw or "u_max" not in raw):
        _fail(path, "blocks with inputs need u_min and u_max")
    if nu and np.any(u_min >= u_max):
        _fail(path, "u_min must be strictly below u_max")
    if nu and (np.any(u_op < u_min) or np.any(u_op > u_max)):
        _fail(path, "operating input lies outside [u_min, u_max]")

    A = _as_matrix(_require(raw, "A", path), nx, nx, f"{path}.A")
    Bu = _as_matrix(raw["Bu"], nx, nu, f"{path}.Bu") if raw.get("Bu") is not None else None
    if nu and Bu is None:
        _fail(path, "blocks with inputs need Bu")
    Bv = _as_matrix(raw["Bv"], nx, None, f"{path}.Bv") if raw.get("Bv") is not None else None

    yraw = _require(raw, "y", path)
    y_names = tuple(_require(yraw, "names", f"{path}.y"))
    for i, nm in enumerate(y_names):
        if not isinstance(nm, str):
            _fail(f"{path}.y.names[{i}]", f"expected a string, got {nm!r}")
    ny = len(y_names)
    y_op = _as_vector(_require(yraw, "op", f"{path}.y"), ny, f"{path}.y.op") if ny else np.zeros(0)
    Cy = _as_matrix(yraw["Cy"], ny, nx, f"{path}.y.Cy") if ny else np.zeros((0, nx))
    Dyu = _as_matrix(yraw["Dyu"], ny, nu, f"{path}.y.Dyu") if yraw.get("Dyu") is not None else None
    Dyv = _as_matrix(yraw["Dyv"], ny, None, f"{path}.y.Dyv") if yraw.get("Dyv") is not None else None

    wraw = _require(raw, "w", path)
    Cw = _as_matrix(_require(wraw, "Cw", f"{path}.w"), None, nx, f"{path}.w.Cw")
    Dwu = _as_matrix(wraw["Dwu"], Cw.shape[0], nu, f"{path}.w.Dwu") if wraw.get("Dwu") is not None else None
    Dwv = _as_matrix(wraw["Dwv"], Cw.shape[0], None, f"{path}.w.Dwv") if wraw.get("Dwv") is not None else None
    term_rows = tuple(_as_int(r, f"{path}.w.term_rows") for r in wraw.get("term_rows", ()))

    blk = BlockSpec(
        name=name, sid=_as_int(_require(raw, "sid", path), f"{path}.sid"),
        x_names=x_names, x_op=x_op, u_names=u_names, u_op=u_op,
        u_min=u_min, u_max=u_max, A=A, Bu=Bu, Bv=Bv,
        y_names=y_names, y_op=y_op, Cy=Cy, Dyu=Dyu, Dyv=Dyv,
        Cw=Cw, Dwu=Dwu, Dwv=Dwv, term_rows=term_rows,
    )
    blk._raw_terms = raw.get("terms")
    return blk


def _parse_strategy(name: str, raw, blocks: dict, path: str) -> StrategySpec:
    controlled = _require(raw, "controlled", path)
    if not isinstance(controlled, (list, tuple)) or not controlled:
        _fail(f"{path}.controlled", "expected a non-empty list of names")
    controllers = _require(raw, "controllers", path)
    for cname, spec in controllers.items():
        ctype = _require(spec, "type", f"{path}.controllers.{cname}")
        if ctype not in ("linear", "nonlinear"):
            _fail(f"{path}.controllers.{cname}.type", f"unknown controller type '{ctype}'")
    compose = raw.get("compose")
    edges = None
    if raw.get("edges") is not None:
        known = set(blocks)
        if compose is not None:
            known.add(_require(compose, "name", f"{path}.compose"))
        edges = _parse_strategy_edges(raw["edges"], known, f"{path}.edges")
    r_rows = {k: tuple(_as_int(r, f"{path}.r_rows.{k}") for r in v)
              for k, v in raw.get("r_rows", {}).items()}
    for cname in controllers:
        if cname not in controlled:
            _fail(f"{path}.controllers", f"'{cname}' is not in the controlled list")
    return StrategySpec(name=name, controlled=tuple(controlled), controllers=dict(controllers),
                        compose=compose, edges=edges, r_rows=r_rows)


def _parse_strategy_edges(raw, known: set, path: str) -> tuple:
    if not isinstance(raw, (list, tuple)) or not raw:
        _fail(path, "expected a non-empty list of edges")
    out = []
    for i, item in enumerate(raw):
        epath = f"{path}[{i}]"
        src = _require(item, "src", epath)
        dst = _require(item, "dst", epath)
        for end in (src, dst):
            if end not in known:
                _fail(epath, f"unknown block '{end}'")
        signals, ops = _name_op_pairs(_require(item, "signals", epath), f"{epath}.signals")
        out.append(EdgeSpec(src, dst, tuple(zip(signals, ops))))
    return tuple(out)


def load_benchmark_config(path) -> BenchmarkConfig:
    """Load and validate a benchmark configuration file."""
    data = _load_yaml(path)
    root = _require(data, "coldbox", str(path))
    Ts = _as_float(_require(root, "Ts", "coldbox"), "coldbox.Ts")
    if Ts <= 0:
        _fail("coldbox.Ts", "must be positive")
    horizon = _as_int(_require(root, "horizon", "coldbox"), "coldbox.horizon")
    if horizon < 1:
        _fail("coldbox.horizon", "must be at least 1")

    raw_blocks = _require(root, "blocks", "coldbox")
    blocks = {}
    sids = {}
    for name, raw in raw_blocks.items():
        blk = _parse_block(name, raw, f"coldbox.blocks.{name}")
        if blk.sid in sids:
            _fail(f"coldbox.blocks.{name}.sid", f"sid {blk.sid} already used by '{sids[blk.sid]}'")
        sids[blk.sid] = name
        blocks[name] = blk

    edges = _parse_edges(_require(root, "edges", "coldbox"), blocks, "coldbox.edges")
    _attach_stacks(blocks, edges)
    for name, blk in blocks.items():
        blk.terms = _parse_terms(blk._raw_terms, blk, f"coldbox.blocks.{name}.terms")
        del blk._raw_terms

    y_owner = {}
    for name, blk in blocks.items():
        for yn in blk.y_names:
            if yn in y_owner:
                _fail(f"coldbox.blocks.{name}.y", f"output '{yn}' already defined by '{y_owner[yn]}'")
            y_owner[yn] = name

    costs = _require(root, "costs", "coldbox")
    tracking = []
    for i, item in enumerate(costs.get("tracking", ())):
        cpath = f"coldbox.costs.tracking[{i}]"
        output = _require(item, "output", cpath)
        if output not in y_owner:
            _fail(cpath, f"unknown output '{output}'")
        tracking.append(TrackingSpec(output,
                                     _as_float(_require(item, "Q_c", cpath), f"{cpath}.Q_c"),
                                     _as_float(_require(item, "r_d", cpath), f"{cpath}.r_d")))
    constraints = []
    for i, item in enumerate(costs.get("constraint", ())):
        cpath = f"coldbox.costs.constraint[{i}]"
        output = _require(item, "output", cpath)
        if output not in y_owner:
            _fail(cpath, f"unknown output '{output}'")
        bound = _as_float(_require(item, "bound", cpath), f"{cpath}.bound")
        if bound <= 0:
            _fail(f"{cpath}.bound", "must be positive")
        constraints.append(ConstraintSpec(output,
                                          _as_float(_require(item, "Q_c", cpath), f"{cpath}.Q_c"),
                                          bound))
    if not tracking:
        _fail("coldbox.costs.tracking", "at least one tracked output is required")

    disturbances = {}
    for dname, spec in root.get("disturbances", {}).items():
        dpath = f"coldbox.disturbances.{dname}"
        bname = _require(spec, "block", dpath)
        if bname not in blocks:
            _fail(dpath, f"unknown block '{bname}'")
        channel = _require(spec, "input", dpath)
        if channel not in blocks[bname].u_names:
            _fail(dpath, f"block '{bname}' has no input '{channel}'")
        disturbances[dname] = (bname, channel)

    strategies = {}
    for sname, raw in _require(root, "strategies", "coldbox").items():
        strategies[sname] = _parse_strategy(sname, raw, blocks, f"coldbox.strategies.{sname}")

    coordinator = dict(root.get("coordinator", {}))
    return BenchmarkConfig(Ts=Ts, horizon=horizon, blocks=blocks, edges=edges,
                           tracking=tuple(tracking), constraints=tuple(constraints),
                           disturbances=disturbances, strategies=strategies,
                           coordinator=coordinator)


@dataclass
class Scenario:
    """A closed-loop run description.

    Schedules are piecewise-constant (step, value) lists covering
    [0, n_sim): the first entry starts at 0 and later entries switch the
    value at their step index.
    """

    name: str
    n_sim: int
    setpoints: dict          # output name -> ((step, value), ...)
    bounds: dict             # output name -> ((step, value), ...)
    disturbances: dict       # disturbance name -> ((step, value), ...)
    setpoint_bounds: dict = field(default_factory=dict)   # name -> (lo, hi)
    post_transient_start: int = 0
    coordinator: dict = field(default_factory=dict)

    @staticmethod
    def _value_at(schedule, k: int) -> float:
        value = schedule[0][1]
        for step, val in schedule:
            if step <= k:
                value = val
            else:
                break
        return value

    def setpoint_at(self, name: str, k: int) -> float:
        return self._value_at(self.setpoints[name], k)

    def bound_at(self, name: str, k: int) -> float:
        return self._value_at(self.bounds[name], k)

    def disturbance_at(self, name: str, k: int) -> float:
        if name not in self.disturbances:
            return 0.0
        return self._value_at(self.disturbances[name], k)


def _parse_schedule(raw, n_sim: int, path: str) -> tuple:
    if not isinstance(raw, (list, tuple)) or not raw:
        _fail(path, "expected a non-empty list of [step, value] pairs")
    out = []
    prev = -1
    for i, item in enumerate(raw):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            _fail(f"{path}[{i}]", "expected a [step, value] pair")
        step = _as_int(item[0], f"{path}[{i}][0]")
        value = _as_float(item[1], f"{path}[{i}][1]")
        if step <= prev:
            _fail(f"{path}[{i}]", "steps must be strictly increasing")
        if not 0 <= step < n_sim:
            _fail(f"{path}[{i}]", f"step {step} outside [0, {n_sim})")
        prev = step
        out.append((step, value))
    if out[0][0] != 0:
        _fail(path, "the first entry must start at step 0")
    return tuple(out)


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    data = _load_yaml(path)
    root = _require(data, "scenario", str(path))
    name = _require(root, "name", "scenario")
    if not isinstance(name, str) or not name:
        _fail("scenario.name", "expected a non-empty string")
    n_sim = _as_int(_require(root, "n_sim", "scenario"), "scenario.n_sim")
    if n_sim < 1:
        _fail("scenario.n_sim", "must be at least 1")

    setpoints = {}
    for key, raw in _require(root, "setpoints", "scenario").items():
        setpoints[key] = _parse_schedule(raw, n_sim, f"scenario.setpoints.{key}")
    if not setpoints:
        _fail("scenario.setpoints", "at least one set-point schedule is required")

    bounds = {}
    for key, raw in root.get("bounds", {}).items():
        sched = _parse_schedule(raw, n_sim, f"scenario.bounds.{key}")
        for i, (_, val) in enumerate(sched):
            if val <= 0:
                _fail(f"scenario.bounds.{key}[{i}]", "bound values must be positive")
        bounds[key] = sched

    disturbances = {}
    for key, raw in root.get("disturbances", {}).items():
        disturbances[key] = _parse_schedule(raw, n_sim, f"scenario.disturbances.{key}")

    setpoint_bounds = {}
    for key, raw in root.get("setpoint_bounds", {}).items():
        vec = _as_vector(raw, 2, f"scenario.setpoint_bounds.{key}")
        if vec[0] >= vec[1]:
            _fail(f"scenario.setpoint_bounds.{key}", "lower bound must be below upper bound")
        setpoint_bounds[key] = (float(vec[0]), float(vec[1]))

    post = _as_int(root.get("post_transient_start", 0), "scenario.post_transient_start")
    if not 0 <= post <= n_sim:
        _fail("scenario.post_transient_start", f"must lie in [0, {n_sim}]")

    coordinator = root.get("coordinator", {}) or {}
    if not isinstance(coordinator, dict):
        _fail("scenario.coordinator", "expected a mapping of coordinator overrides")

    return Scenario(name=name, n_sim=n_sim, setpoints=setpoints, bounds=bounds,
                    disturbances=disturbances, setpoint_bounds=setpoint_bounds,
                    post_transient_start=post, coordinator=dict(coordinator))
