"""Subsystem dynamics, local cost forms and the Assumption-1 respond contract.

A subsystem model is held in an absolute-coordinate canonical form over the
per-step vector z = [x; u; v] (state, control input, coupling input):

    x+ = A x + Bu u + Bv v + f0   (+ state-targeted nonlinear terms)
    y  = Cy x + Dyu u + Dyv v + gy0   (+ y-targeted terms)
    w  = Cw x + Dwu u + Dwv v + gw0   (+ w-targeted terms)

y is the regulated output, w the coupling output.  A model linearized
around an operating point (x_op, u_op, v_op, y_op, w_op) is converted to
this form once at construction; nonlinear physics enters through named
terms (square-root flow law, bilinear product) whose two scalar inputs are
affine in z.  The heavy N-step iteration is delegated to the kernel
backend (`hiercoord._kernels`).
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import KIND_BILINEAR, KIND_SQRT_FLOW, SPACE_STATE, SPACE_W, SPACE_Y

log = logging.getLogger(__name__)

TERM_KINDS = {"sqrt_flow": KIND_SQRT_FLOW, "bilinear": KIND_BILINEAR}
TERM_SPACES = {"state": SPACE_STATE, "y": SPACE_Y, "w": SPACE_W}


class ModelError(ValueError):
    """Raised for inconsistent model definitions or profile dimensions."""


class SimulationError(RuntimeError):
    """Raised when iterating a model produces a non-finite value."""


def _ro(a, shape=None, dtype=float):
    """Contiguous read-only float array (kernel-ready)."""
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    if shape is not None:
        out = out.reshape(shape) if out.size else np.zeros(shape, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NonlinearTerm:
    """One named nonlinearity added to a single row of one model equation.

    The primitive `kind` is evaluated on two scalars a = a0 + avec @ z and
    b = b0 + bvec @ z, scaled by `coeff` and added to row `row` of the
    `space` equation ("state", "y" or "w").
    """

    kind: str
    space: str
    row: int
    coeff: float
    a0: float = 0.0
    avec: np.ndarray = None
    b0: float = 0.0
    bvec: np.ndarray = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ModelError(f"unknown term kind {self.kind!r}")
        if self.space not in TERM_SPACES:
            raise ModelError(f"unknown term space {self.space!r}")


@dataclass(frozen=True)
class SubsystemState:
    """Plant state of one subsystem at the current time step."""

    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _ro(self.x).ravel())
        if not np.all(np.isfinite(self.x)):
            raise ModelError("non-finite subsystem state")


class SubsystemModel:
    """Immutable canonical model; build via `linear_about` or `canonical`."""

    def __init__(self, A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0,
                 terms=(), Ts=1.0, op=None):
        if Ts <= 0:
            raise ModelError(f"sampling period {Ts} must be positive")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        nx = A.shape[0]
        self.A = _ro(A, (nx, nx))
        self.Bu = _ro(Bu)
        nu = self.Bu.shape[1] if self.Bu.ndim == 2 else 0
        self.Bu = _ro(Bu, (nx, nu))
        self.Bv = _ro(Bv)
        nv = self.Bv.shape[1] if self.Bv.ndim == 2 else 0
        self.Bv = _ro(Bv, (nx, nv))
        self.f0 = _ro(f0, (nx,))
        self.Cy = _ro(Cy)
        ny = self.Cy.shape[0] if self.Cy.size else np.asarray(Cy).shape[0]
        self.Cy = _ro(Cy, (ny, nx))
        self.Dyu = _ro(Dyu, (ny, nu))
        self.Dyv = _ro(Dyv, (ny, nv))
        self.gy0 = _ro(gy0, (ny,))
        self.Cw = _ro(Cw)
        nw = np.asarray(Cw).shape[0]
        self.Cw = _ro(Cw, (nw, nx))
        self.Dwu = _ro(Dwu, (nw, nu))
        self.Dwv = _ro(Dwv, (nw, nv))
        self.gw0 = _ro(gw0, (nw,))
        self.nx, self.nu, self.nv, self.ny, self.nw = nx, nu, nv, ny, nw
        self.nz = nx + nu + nv
        self.Ts = float(Ts)
        self.op = op
        self.terms = tuple(self._norm_term(t) for t in terms)
        self._packed = self._pack_terms()
        self.spectral_radius = float(max(abs(np.linalg.eigvals(self.A)))) if nx else 0.0
        log.debug("model built: nx=%d nu=%d nv=%d ny=%d nw=%d rho(A)=%.4f",
                  nx, nu, nv, ny, nw, self.spectral_radius)

    def _norm_term(self, t):
        nrow = (self.nx, self.ny, self.nw)[TERM_SPACES[t.space]]
        if not 0 <= t.row < nrow:
            raise ModelError(f"term row {t.row} outside {t.space} dimension {nrow}")
        avec = np.zeros(self.nz) if t.avec is None else np.asarray(t.avec, dtype=float)
        bvec = np.zeros(self.nz) if t.bvec is None else np.asarray(t.bvec, dtype=float)
        if avec.shape != (self.nz,) or bvec.shape != (self.nz,):
            raise ModelError(f"term input vectors must have length nz={self.nz}")
        return NonlinearTerm(t.kind, t.space, int(t.row), float(t.coeff),
                             float(t.a0), _ro(avec), float(t.b0), _ro(bvec))

    def _pack_terms(self):
        nt = len(self.terms)
        kind = np.array([TERM_KINDS[t.kind] for t in self.terms], dtype=np.int32)
        space = np.array([TERM_SPACES[t.space] for t in self.terms], dtype=np.int32)
        row = np.array([t.row for t in self.terms], dtype=np.int32)
        coeff = np.array([t.coeff for t in self.terms], dtype=float)
        a0 = np.array([t.a0 for t in self.terms], dtype=float)
        b0 = np.array([t.b0 for t in self.terms], dtype=float)
        avec = np.zeros((nt, self.nz))
        bvec = np.zeros((nt, self.nz))
        for i, t in enumerate(self.terms):
            avec[i] = t.avec
            bvec[i] = t.bvec
        return (kind, space, row, _ro(coeff, (nt,)), _ro(a0, (nt,)),
                _ro(avec, (nt, self.nz)), _ro(b0, (nt,)), _ro(bvec, (nt, self.nz)))

    @property
    def kernel_args(self):
        return (self.A, self.Bu, self.Bv, self.f0,
                self.Cy, self.Dyu, self.Dyv, self.gy0,
                self.Cw, self.Dwu, self.Dwv, self.gw0) + self._packed


def canonical(A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0,
              terms=(), Ts=1.0):
    """Build a model directly in absolute canonical form."""
    return SubsystemModel(A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0,
                          Cw, Dwu, Dwv, gw0, terms=terms, Ts=Ts)


def linear_about(A, Bv, Cy, Cw, Bu=None, Dyu=None, Dyv=None, Dwu=None,
                 Dwv=None, x_op=None, u_op=None, v_op=None, y_op=None,
                 w_op=None, Ts=1.0, terms=()):
    """Build a model from deviation dynamics around an operating point.

    The deviation form dx+ = A dx + Bu du + Bv dv (and likewise for the
    output maps) is converted to absolute coordinates; the operating point
    is then an exact equilibrium of the linear part.  Nonlinear `terms`
    are specified directly in absolute coordinates and are added on top,
    so a term must carry its own operating-point bookkeeping (typically
    the affine rows it corrects are zeroed out).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nx = A.shape[0]
    Bv = np.asarray(Bv, dtype=float).reshape(nx, -1)
    nv = Bv.shape[1]
    Bu = np.zeros((nx, 0)) if Bu is None else np.asarray(Bu, dtype=float).reshape(nx, -1)
    nu = Bu.shape[1]
    Cy = np.asarray(Cy, dtype=float).reshape(-1, nx)
    ny = Cy.shape[0]
    Cw = np.asarray(Cw, dtype=float).reshape(-1, nx)
    nw = Cw.shape[0]

    def arr(M, r, c):
        return np.zeros((r, c)) if M is None else np.asarray(M, dtype=float).reshape(r, c)

    def vec(v, n):
        return np.zeros(n) if v is None else np.asarray(v, dtype=float).reshape(n)

    Dyu, Dyv = arr(Dyu, ny, nu), arr(Dyv, ny, nv)
    Dwu, Dwv = arr(Dwu, nw, nu), arr(Dwv, nw, nv)
    x_op, u_op, v_op = vec(x_op, nx), vec(u_op, nu), vec(v_op, nv)
    y_op, w_op = vec(y_op, ny), vec(w_op, nw)
    f0 = x_op - A @ x_op - Bu @ u_op - Bv @ v_op
    gy0 = y_op - Cy @ x_op - Dyu @ u_op - Dyv @ v_op
    gw0 = w_op - Cw @ x_op - Dwu @ u_op - Dwv @ v_op
    op = {"x": x_op, "u": u_op, "v": v_op, "y": y_op, "w": w_op}
    return SubsystemModel(A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0,
                          terms=terms, Ts=Ts, op=op)


def _check_profile(name, P, N, dim):
    P = np.ascontiguousarray(np.asarray(P, dtype=float))
    if P.ndim == 1:
        P = P.reshape(-1, 1) if dim == 1 else P.reshape(N, dim)
    if P.shape != (N, dim):
        raise ModelError(f"{name} profile has shape {P.shape}, expected {(N, dim)}")
    return P


def simulate_trajectory(model, x0, u_profile, v_in_profile):
    """Iterate the model; returns (y_profile, w_profile, state_trajectory)."""
    x0 = x0.x if isinstance(x0, SubsystemState) else np.asarray(x0, dtype=float).ravel()
    if x0.shape != (model.nx,):
        raise ModelError(f"state has length {x0.shape[0]}, expected {model.nx}")
    if u_profile is None:
        if model.nu:
            raise ModelError("u profile required: model has control inputs")
        N = np.asarray(v_in_profile).shape[0]
        U = np.zeros((N, 0))
    else:
        U = np.ascontiguousarray(np.atleast_2d(np.asarray(u_profile, dtype=float)))
        N = U.shape[0]
        U = _check_profile("u", U, N, model.nu)
    V = _check_profile("v_in", v_in_profile, N, model.nv)
    out_Y = np.zeros((N, model.ny))
    out_W = np.zeros((N, model.nw))
    out_X = np.zeros((N + 1, model.nx))
    status = _kernels.simulate(*model.kernel_args, np.ascontiguousarray(x0),
                               U, V, out_Y, out_W, out_X)
    if status:
        raise SimulationError(f"numerical blow-up at step {status - 1}")
    return out_Y, out_W, out_X


def simulate_profile(model, x0, u_profile, v_in_profile):
    """N-step prediction: (regulated-output profile, coupling-output profile)."""
    Y, W, _ = simulate_trajectory(model, x0, u_profile, v_in_profile)
    return Y, W


@dataclass(frozen=True)
class LocalCostSpec:
    """One reported-cost term bound to a slice of the regulated output.

    kind "tracking" charges sum ||y - r_d||^2_Qc + ||u - u_op||^2_Rc,
    kind "constraint" charges sum ||max(y - y_bar, 0)||^2_Qc, and kind
    "zero" charges nothing.  `rows` selects the y components the term
    reads (all of them when None).
    """

    kind: str
    rows: tuple = None
    Q_c: np.ndarray = None
    R_c: np.ndarray = None
    r_d: np.ndarray = None
    y_bar: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("tracking", "constraint", "zero"):
            raise ModelError(f"unknown cost kind {self.kind!r}")
        for name in ("Q_c", "R_c", "r_d", "y_bar"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _ro(np.atleast_1d(val)))
        if self.rows is not None:
            object.__setattr__(self, "rows", tuple(int(r) for r in self.rows))
        if self.Q_c is not None and np.any(self.Q_c < 0):
            raise ModelError("negative output weight")
        if self.R_c is not None and np.any(self.R_c < 0):
            raise ModelError("negative input weight")
        if self.kind == "tracking" and self.r_d is None:
            raise ModelError("tracking cost needs r_d")
        if self.kind == "constraint" and self.y_bar is None:
            raise ModelError("constraint cost needs y_bar")

    def _slice(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.rows is None:
            return Y
        return Y[:, list(self.rows)]


def tracking_cost(y_profile, u_profile, spec, u_ref=None):
    """Quadratic regulation cost over the horizon for a tracking spec."""
    if spec.kind != "tracking":
        raise ModelError(f"tracking_cost got a {spec.kind!r} spec")
    Ys = spec._slice(y_profile)
    if spec.r_d.shape[0] != Ys.shape[1]:
        raise ModelError(f"r_d has length {spec.r_d.shape[0]}, "
                         f"expected {Ys.shape[1]}")
    dev = Ys - spec.r_d
    J = float(np.sum(dev * dev @ np.diag(spec.Q_c))) if spec.Q_c is not None else 0.0
    if spec.R_c is not None and np.any(spec.R_c > 0):
        if u_profile is None:
            raise ModelError("input-weighted tracking cost needs a u profile")
        U = np.atleast_2d(np.asarray(u_profile, dtype=float))
        if spec.R_c.shape[0] != U.shape[1]:
            raise ModelError("R_c length does not match input dimension")
        du = U - (0.0 if u_ref is None else np.asarray(u_ref, dtype=float))
        J += float(np.sum(du * du @ np.diag(spec.R_c)))
    return J


def constraint_cost(y_profile, spec):
    """One-sided quadratic penalty on outputs above their upper bound."""
    if spec.kind != "constraint":
        raise ModelError(f"constraint_cost got a {spec.kind!r} spec")
    Ys = spec._slice(y_profile)
    if spec.y_bar.shape[0] != Ys.shape[1]:
        raise ModelError("y_bar length does not match selected outputs")
    over = np.maximum(Ys - spec.y_bar, 0.0)
    Q = spec.Q_c if spec.Q_c is not None else np.ones(Ys.shape[1])
    return float(np.sum(over * over @ np.diag(Q)))


def evaluate_costs(costs, y_profile, u_profile=None, u_ref=None):
    """Sum a subsystem's reported-cost terms on a predicted trajectory."""
    total = 0.0
    for spec in costs:
        if spec.kind == "tracking":
            total += tracking_cost(y_profile, u_profile, spec, u_ref=u_ref)
        elif spec.kind == "constraint":
            total += constraint_cost(y_profile, spec)
    return total


@dataclass(frozen=True)
class RespondResult:
    """Everything one coordination exchange learns from a subsystem."""

    v_out: np.ndarray          # coupling-output profile, (N, n_w)
    J: float                   # reported local cost
    y: np.ndarray              # regulated-output profile, (N, n_y)
    u: np.ndarray              # applied/planned input profile, (N, n_u)
    warm: object = None        # controller warm-start to thread forward
    budget_hit: bool = False   # controller stopped on its iteration budget
    walltime_s: float = 0.0    # controller solve time, seconds


@dataclass
class Subsystem:
    """A model plus its reported costs, optional controller and state.

    r_rows restricts the auxiliary set-point to the listed output rows;
    the remaining rows keep their operating-point reference (they carry
    no tracking weight, e.g. a bounded flow).  None means the set-point
    addresses every output row.
    """

    sid: int
    model: SubsystemModel
    state: SubsystemState
    costs: tuple = ()
    controller: object = None
    u_last: np.ndarray = None
    r_rows: tuple = None
    u_names: tuple = ()
    y_names: tuple = ()
    solve_times: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.state.x.shape != (self.model.nx,):
            raise ModelError(f"subsystem {self.sid}: state dimension "
                             f"{self.state.x.shape[0]} != model {self.model.nx}")
        if self.u_last is None:
            self.u_last = self._u_ref()
        else:
            self.u_last = np.asarray(self.u_last, dtype=float).ravel()
        if self.r_rows is not None:
            rows = tuple(int(i) for i in self.r_rows)
            if any(not 0 <= i < self.model.ny for i in rows):
                raise ModelError(f"subsystem {self.sid}: r_rows out of range")
            self.r_rows = rows

    @property
    def controlled(self):
        return self.controller is not None

    @property
    def r_dim(self):
        """Length of this subsystem's auxiliary set-point block."""
        if not self.controlled:
            return 0
        return self.model.ny if self.r_rows is None else len(self.r_rows)

    def _full_reference(self, r_s):
        """Expand the coordinated block to a full output reference.

        Rows outside r_rows hold their tracking-cost targets when a spec
        provides one, else the operating value.
        """
        r_s = np.asarray(r_s, dtype=float).ravel()
        if r_s.shape != (self.r_dim,):
            raise ModelError(f"subsystem {self.sid}: set-point block has "
                             f"length {r_s.shape[0]}, expected {self.r_dim}")
        if self.r_rows is None:
            return r_s
        ref = (self.model.op["y"].copy() if self.model.op is not None
               else np.zeros(self.model.ny))
        for spec in self.costs:
            if spec.kind == "tracking" and spec.r_d is not None:
                idx = slice(None) if spec.rows is None else list(spec.rows)
                ref[idx] = spec.r_d
        ref[list(self.r_rows)] = r_s
        return ref

    def respond(self, r_s, v_in_profile, warm=None):
        """Plan over the horizon against (r_s, v_in); report (v_out, J).

        Controlled subsystems run their local controller toward the
        auxiliary set-point r_s; the reported cost J is always evaluated
        against the cost specs' own references.  Uncontrolled subsystems
        simulate autonomously and must be called with r_s = None.
        Deterministic and side-effect-free given (state, r_s, v_in, warm).
        """
        V = np.atleast_2d(np.asarray(v_in_profile, dtype=float))
        if self.controlled:
            if r_s is None:
                raise ModelError(f"subsystem {self.sid} is controlled; r_s required")
            ref = self._full_reference(r_s)
            t0 = time.perf_counter()
            sol = self.controller.solve(self.model, self.state.x, ref, V,
                                        warm=warm, u_prev=self.u_last)
            dt = time.perf_counter() - t0
            self.solve_times.append(dt)
            U = sol.u
            Y, W = simulate_profile(self.model, self.state.x, U, V)
            J = evaluate_costs(self.costs, Y, U, u_ref=self._u_ref())
            return RespondResult(W, J, Y, U, warm=sol.warm,
                                 budget_hit=getattr(sol, "budget_hit", False),
                                 walltime_s=dt)
        if r_s is not None:
            raise ModelError(f"subsystem {self.sid} is uncontrolled; got a set-point")
        U = np.zeros((V.shape[0], 0))
        Y, W = simulate_profile(self.model, self.state.x, None, V)
        J = evaluate_costs(self.costs, Y, U)
        return RespondResult(W, J, Y, U)

    def _u_ref(self):
        if self.model.op is not None:
            return self.model.op["u"]
        return np.zeros(self.model.nu)

    def advance(self, x_next, u_applied=None):
        """Install the next measured plant state and applied input."""
        self.state = SubsystemState(x_next)
        if u_applied is not None:
            self.u_last = np.asarray(u_applied, dtype=float).ravel()


@dataclass(frozen=True)
class CompositionIndex:
    """Where each block's signals landed in a composed model."""

    x_slices: dict
    u_slices: dict
    v_ext: tuple      # (sid, v_row) per composite coupling-input row
    y_sel: tuple      # (sid, y_row) per composite regulated-output row
    w_sel: tuple      # (sid, w_row) per composite coupling-output row


def compose(blocks, links, v_ext, y_sel, w_sel):
    """Fuse interconnected blocks into one equivalent canonical model.

    blocks : dict sid -> SubsystemModel (composite state/input order is
        ascending sid)
    links : iterable of (src_sid, w_row, dst_sid, v_row) scalar channels
        resolved internally
    v_ext : iterable of (dst_sid, v_row), the boundary coupling inputs in
        composite order
    y_sel / w_sel : iterable of (sid, row) selecting the composite
        regulated and coupling outputs

    The reduction is exact: internal couplings are eliminated by solving
    the instantaneous-feedthrough system, which must be acyclic (every
    feedback cycle crosses at least one state delay), and nonlinear-term
    outputs may propagate through linear feedthrough but a term's own
    inputs must resolve to affine functions of the composite (x, u, v).
    """
    sids = sorted(blocks)
    Ts = blocks[sids[0]].Ts
    if any(blocks[s].Ts != Ts for s in sids):
        raise ModelError("blocks disagree on sampling period")
    links = [tuple(map(int, l)) for l in links]
    v_ext = [(int(s), int(r)) for s, r in v_ext]
    y_sel = [(int(s), int(r)) for s, r in y_sel]
    w_sel = [(int(s), int(r)) for s, r in w_sel]

    x_slices, u_slices = {}, {}
    px = pu = 0
    for s in sids:
        m = blocks[s]
        x_slices[s] = slice(px, px + m.nx)
        u_slices[s] = slice(pu, pu + m.nu)
        px += m.nx
        pu += m.nu
    nxc, nuc, nvc = px, pu, len(v_ext)
    B = nxc + nuc + nvc  # width of the composite z basis

    # per-block v-row destinations: ("ext", col) or ("q", index)
    vmap = {s: [None] * blocks[s].nv for s in sids}
    for col, (s, r) in enumerate(v_ext):
        if vmap[s][r] is not None:
            raise ModelError(f"coupling input ({s},{r}) assigned twice")
        vmap[s][r] = ("ext", col)
    for qi, (src, wr, dst, vr) in enumerate(links):
        if vmap[dst][vr] is not None:
            raise ModelError(f"coupling input ({dst},{vr}) assigned twice")
        vmap[dst][vr] = ("q", qi)
    for s in sids:
        missing = [r for r, tag in enumerate(vmap[s]) if tag is None]
        if missing:
            raise ModelError(f"block {s} coupling inputs {missing} unconnected")
    nq = len(links)

    # global term list; each term contributes a scalar impulse phi_i
    terms = []
    term_of = {}
    for s in sids:
        for t in blocks[s].terms:
            term_of.setdefault((s, t.space, t.row), []).append(len(terms))
            terms.append((s, t))
    nt = len(terms)

    def z_cols(s):
        """Columns of block s's x and u inside the composite basis."""
        xs = np.arange(x_slices[s].start, x_slices[s].stop)
        us = np.arange(nxc + u_slices[s].start, nxc + u_slices[s].stop)
        return xs, us

    def w_row_expr(s, r):
        """Affine expression of block s's w row over [z_c | q | 1 | t]."""
        m = blocks[s]
        vec = np.zeros(B)
        qvec = np.zeros(nq)
        tvec = np.zeros(nt)
        xs, us = z_cols(s)
        vec[xs] = m.Cw[r]
        vec[us] = m.Dwu[r]
        const = m.gw0[r]
        for j in range(m.nv):
            kind, idx = vmap[s][j]
            if kind == "ext":
                vec[nxc + nuc + idx] += m.Dwv[r, j]
            else:
                qvec[idx] += m.Dwv[r, j]
        for ti in term_of.get((s, "w", r), ()):
            tvec[ti] += terms[ti][1].coeff
        return vec, qvec, const, tvec

    # solve the instantaneous system q = Aq q + Lz z + c + T t
    Aq = np.zeros((nq, nq))
    Lz = np.zeros((nq, B))
    cq = np.zeros(nq)
    Tq = np.zeros((nq, nt))
    for qi, (src, wr, dst, vr) in enumerate(links):
        vec, qvec, const, tvec = w_row_expr(src, wr)
        Lz[qi], Aq[qi], cq[qi], Tq[qi] = vec, qvec, const, tvec
    M = np.eye(nq) - Aq
    if nq and abs(np.linalg.det(M)) < 1e-9:
        raise ModelError("instantaneous coupling loop: every cycle needs a delay")
    Rz = np.linalg.solve(M, Lz) if nq else Lz
    rc = np.linalg.solve(M, cq) if nq else cq
    Rt = np.linalg.solve(M, Tq) if nq else Tq

    def sub_v(s, Mv):
        """Split a block's v-coefficient rows into (z part, const, term part)."""
        rows = Mv.shape[0]
        vec = np.zeros((rows, B))
        const = np.zeros(rows)
        tpart = np.zeros((rows, nt))
        for j in range(blocks[s].nv):
            kind, idx = vmap[s][j]
            col = Mv[:, j]
            if kind == "ext":
                vec[:, nxc + nuc + idx] += col
            else:
                vec += np.outer(col, Rz[idx])
                const += col * rc[idx]
                tpart += np.outer(col, Rt[idx])
        return vec, const, tpart

    # assemble composite state equation
    Ac = np.zeros((nxc, B))
    fc = np.zeros(nxc)
    Tx = np.zeros((nxc, nt))
    for s in sids:
        m = blocks[s]
        rows = x_slices[s]
        xs, us = z_cols(s)
        Ac[rows.start:rows.stop][:, xs] += m.A
        Ac[rows.start:rows.stop][:, us] += m.Bu
        vec, const, tpart = sub_v(s, m.Bv)
        Ac[rows] += vec
        fc[rows] = m.f0 + const
        Tx[rows] += tpart
    for ti, (s, t) in enumerate(terms):
        if t.space == "state":
            Tx[x_slices[s].start + t.row, ti] += t.coeff

    def out_rows(selection, space):
        n = len(selection)
        Cc = np.zeros((n, B))
        gc = np.zeros(n)
        Tc = np.zeros((n, nt))
        for i, (s, r) in enumerate(selection):
            m = blocks[s]
            if space == "y":
                Crow, Du, Dv, g0 = m.Cy[r], m.Dyu[r], m.Dyv[r], m.gy0[r]
            else:
                Crow, Du, Dv, g0 = m.Cw[r], m.Dwu[r], m.Dwv[r], m.gw0[r]
            xs, us = z_cols(s)
            Cc[i, xs] += Crow
            Cc[i, us] += Du
            vec, const, tpart = sub_v(s, Dv.reshape(1, -1))
            Cc[i] += vec[0]
            gc[i] = g0 + const[0]
            Tc[i] += tpart[0]
            for ti in term_of.get((s, space, r), ()):
                Tc[i, ti] += terms[ti][1].coeff
        return Cc, gc, Tc

    Cyc, gyc, Ty = out_rows(y_sel, "y")
    Cwc, gwc, Tw = out_rows(w_sel, "w")

    # rewrite each term's scalar inputs over the composite basis
    def rewrite(s, c0, cvec):
        m = blocks[s]
        vec = np.zeros(B)
        xs, us = z_cols(s)
        vec[xs] = cvec[: m.nx]
        vec[us] = cvec[m.nx: m.nx + m.nu]
        const = c0
        for j in range(m.nv):
            coef = cvec[m.nx + m.nu + j]
            if coef == 0.0:
                continue
            kind, idx = vmap[s][j]
            if kind == "ext":
                vec[nxc + nuc + idx] += coef
            else:
                if np.any(Rt[idx] != 0.0):
                    raise ModelError(
                        "term input depends on another term's output after composition")
                vec += coef * Rz[idx]
                const += coef * rc[idx]
        return const, vec

    new_terms = []
    for ti, (s, t) in enumerate(terms):
        a0, avec = rewrite(s, t.a0, t.avec)
        b0, bvec = rewrite(s, t.b0, t.bvec)
        for space, Tmat in (("state", Tx), ("y", Ty), ("w", Tw)):
            col = Tmat[:, ti]
            for row in np.nonzero(col)[0]:
                new_terms.append(NonlinearTerm(t.kind, space, int(row), float(col[row]),
                                               a0=a0, avec=avec, b0=b0, bvec=bvec))

    nslice = slice(0, nxc)
    uslice = slice(nxc, nxc + nuc)
    vslice = slice(nxc + nuc, B)
    model = SubsystemModel(
        Ac[:, nslice], Ac[:, uslice], Ac[:, vslice], fc,
        Cyc[:, nslice], Cyc[:, uslice], Cyc[:, vslice], gyc,
        Cwc[:, nslice], Cwc[:, uslice], Cwc[:, vslice], gwc,
        terms=new_terms, Ts=Ts)
    index = CompositionIndex(x_slices, u_slices, tuple(v_ext), tuple(y_sel), tuple(w_sel))
    return model, index
