"""Subsystem model, cost and composition tests.

Two oracles: a step-by-step matrix iteration written directly against the
documented recursion, and a per-step network resolver that simulates
interconnected blocks individually (iterating the instantaneous coupling
to a fixed point), against which `compose` must be exact.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from hiercoord.models import (
    LocalCostSpec,
    ModelError,
    NonlinearTerm,
    SimulationError,
    Subsystem,
    SubsystemState,
    canonical,
    compose,
    constraint_cost,
    evaluate_costs,
    linear_about,
    simulate_profile,
    simulate_trajectory,
    tracking_cost,
)


def lin(A, Bv, Cy, Cw, **kw):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nx = A.shape[0]
    kw.setdefault("Ts", 5.0)
    return linear_about(A, np.asarray(Bv, dtype=float).reshape(nx, -1),
                        np.asarray(Cy, dtype=float).reshape(-1, nx),
                        np.asarray(Cw, dtype=float).reshape(-1, nx), **kw)


def hand_iterate(model, x0, U, V):
    """Reference recursion using only the stored matrices."""
    x = np.array(x0, dtype=float)
    Y, W = [], []
    for k in range(U.shape[0]):
        z = np.concatenate([x, U[k], V[k]])
        y = model.Cy @ x + model.Dyu @ U[k] + model.Dyv @ V[k] + model.gy0
        w = model.Cw @ x + model.Dwu @ U[k] + model.Dwv @ V[k] + model.gw0
        xn = model.A @ x + model.Bu @ U[k] + model.Bv @ V[k] + model.f0
        for t in model.terms:
            a = t.a0 + t.avec @ z
            b = t.b0 + t.bvec @ z
            val = t.coeff * (math.copysign(math.sqrt(abs(a * b)), a) if a else 0.0) \
                if t.kind == "sqrt_flow" else t.coeff * a * b
            if t.space == "state":
                xn[t.row] += val
            elif t.space == "y":
                y[t.row] += val
            else:
                w[t.row] += val
        Y.append(y)
        W.append(w)
        x = xn
    return np.array(Y), np.array(W), x


class TestSimulateProfile:
    def test_pure_delay(self):
        m = lin(np.zeros((1, 1)), [[1.0]], [[0.0]], [[1.0]])
        V = np.full((6, 1), 3.25)
        _, W = simulate_profile(m, np.zeros(1), None, V)
        assert W[:, 0].tolist() == [0.0, 3.25, 3.25, 3.25, 3.25, 3.25]

    def test_identity_hold(self):
        m = lin(np.eye(2), np.zeros((2, 1)), [[2.0, -1.0]], np.zeros((1, 2)))
        Y, _ = simulate_profile(m, np.array([1.0, 4.0]), None, np.zeros((4, 1)))
        assert np.allclose(Y[:, 0], -2.0, atol=0, rtol=0)

    def test_matches_hand_iteration(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((2, 2))
        A *= 0.8 / max(abs(np.linalg.eigvals(A)))
        m = canonical(A, rng.standard_normal((2, 1)), rng.standard_normal((2, 2)),
                      rng.standard_normal(2),
                      rng.standard_normal((1, 2)), rng.standard_normal((1, 1)),
                      rng.standard_normal((1, 2)), rng.standard_normal(1),
                      rng.standard_normal((2, 2)), rng.standard_normal((2, 1)),
                      rng.standard_normal((2, 2)), rng.standard_normal(2), Ts=5.0)
        x0 = rng.standard_normal(2)
        U = rng.standard_normal((5, 1))
        V = rng.standard_normal((5, 2))
        Y, W, X = simulate_trajectory(m, x0, U, V)
        Yo, Wo, xlast = hand_iterate(m, x0, U, V)
        assert np.allclose(Y, Yo, atol=1e-12, rtol=0)
        assert np.allclose(W, Wo, atol=1e-12, rtol=0)
        assert np.allclose(X[-1], xlast, atol=1e-12, rtol=0)

    def test_blow_up_message(self):
        m = canonical([[1e200]], np.zeros((1, 0)), np.zeros((1, 1)), [0.0],
                      [[1.0]], np.zeros((1, 0)), np.zeros((1, 1)), [0.0],
                      [[1.0]], np.zeros((1, 0)), np.zeros((1, 1)), [0.0], Ts=1.0)
        with pytest.raises(SimulationError, match="numerical blow-up at step 1"):
            simulate_profile(m, [5.0], None, np.zeros((9, 1)))

    def test_dim_mismatches(self):
        m = lin(np.zeros((2, 2)), np.zeros((2, 1)), [[1.0, 0.0]], [[0.0, 1.0]])
        with pytest.raises(ModelError, match="state"):
            simulate_profile(m, np.zeros(3), None, np.zeros((4, 1)))
        with pytest.raises(ModelError, match="v_in"):
            simulate_profile(m, np.zeros(2), None, np.zeros((4, 2)))

    def test_superposition_on_offset_free_model(self):
        rng = np.random.default_rng(8)
        A = rng.standard_normal((3, 3))
        A *= 0.7 / max(abs(np.linalg.eigvals(A)))
        m = lin(A, rng.standard_normal((3, 2)), rng.standard_normal((1, 3)),
                rng.standard_normal((2, 3)))
        x0 = np.zeros(3)
        v1 = rng.standard_normal((7, 2))
        v2 = rng.standard_normal((7, 2))
        w = {}
        for tag, V in (("a", v1 + v2), ("b", v1), ("c", v2), ("z", np.zeros((7, 2)))):
            _, w[tag] = simulate_profile(m, x0, None, V)
        assert np.allclose(w["a"] - w["b"] - w["c"] + w["z"], 0.0, atol=1e-10)

    def test_operating_point_is_equilibrium(self):
        rng = np.random.default_rng(31)
        A = rng.standard_normal((2, 2))
        A *= 0.6 / max(abs(np.linalg.eigvals(A)))
        x_op, u_op, v_op = rng.standard_normal(2), rng.standard_normal(1), rng.standard_normal(2)
        y_op, w_op = rng.standard_normal(1), rng.standard_normal(2)
        m = linear_about(A, rng.standard_normal((2, 2)), rng.standard_normal((1, 2)),
                         rng.standard_normal((2, 2)), Bu=rng.standard_normal((2, 1)),
                         x_op=x_op, u_op=u_op, v_op=v_op, y_op=y_op, w_op=w_op, Ts=5.0)
        N = 6
        Y, W, X = simulate_trajectory(m, x_op, np.tile(u_op, (N, 1)), np.tile(v_op, (N, 1)))
        assert np.allclose(X, np.tile(x_op, (N + 1, 1)), atol=1e-12)
        assert np.allclose(Y, np.tile(y_op, (N, 1)), atol=1e-12)
        assert np.allclose(W, np.tile(w_op, (N, 1)), atol=1e-12)

    def test_spectral_radius_reported(self):
        m = lin(np.diag([0.5, -0.9]), np.zeros((2, 1)), [[1.0, 0.0]], [[0.0, 1.0]])
        assert m.spectral_radius == pytest.approx(0.9)

    def test_bad_sampling_period(self):
        with pytest.raises(ModelError, match="sampling period"):
            lin(np.zeros((1, 1)), [[1.0]], [[1.0]], [[1.0]], Ts=0.0)


class TestCosts:
    def spec2(self):
        return LocalCostSpec("tracking", Q_c=[1e4, 1e4], R_c=[0.0],
                             r_d=[2.0, -1.0])

    def test_tracking_zero_at_reference(self):
        Y = np.tile([2.0, -1.0], (8, 1))
        assert tracking_cost(Y, np.zeros((8, 1)), self.spec2()) == 0.0

    def test_tracking_scalar_value(self):
        Y = np.array([[3.0, -1.0]])  # deviation (1, 0)
        assert tracking_cost(Y, np.zeros((1, 1)), self.spec2()) == pytest.approx(1e4)

    def test_tracking_weight_homogeneity(self):
        rng = np.random.default_rng(4)
        Y = rng.standard_normal((6, 2))
        base = LocalCostSpec("tracking", Q_c=[3.0, 7.0], r_d=[0.5, 0.5])
        scaled = LocalCostSpec("tracking", Q_c=[3.0 * 2.5, 7.0 * 2.5], r_d=[0.5, 0.5])
        assert tracking_cost(Y, None, scaled) == pytest.approx(
            2.5 * tracking_cost(Y, None, base))

    def test_constraint_zero_below_bound(self):
        spec = LocalCostSpec("constraint", Q_c=[1e12], y_bar=[0.07])
        Y = np.full((10, 1), 0.069)
        assert constraint_cost(Y, spec) == 0.0

    def test_constraint_scalar_value(self):
        spec = LocalCostSpec("constraint", Q_c=[1e12], y_bar=[0.07])
        Y = np.array([[0.07 + 1e-2]])
        assert constraint_cost(Y, spec) == pytest.approx(1e8)

    def test_constraint_quadratic_growth(self):
        spec = LocalCostSpec("constraint", Q_c=[2.0], y_bar=[1.0])
        one = constraint_cost(np.array([[1.5]]), spec)
        two = constraint_cost(np.array([[2.0]]), spec)
        assert two == pytest.approx(4.0 * one)

    def test_constraint_monotone(self):
        spec = LocalCostSpec("constraint", Q_c=[1.0], y_bar=[0.0])
        vals = [constraint_cost(np.array([[v]]), spec) for v in (-1.0, 0.0, 0.3, 0.9)]
        assert vals == sorted(vals)
        assert vals[0] == vals[1] == 0.0

    def test_row_slicing(self):
        spec = LocalCostSpec("tracking", rows=(1,), Q_c=[10.0], r_d=[1.0])
        Y = np.array([[99.0, 2.0]])
        assert tracking_cost(Y, None, spec) == pytest.approx(10.0)

    def test_validation(self):
        with pytest.raises(ModelError, match="negative"):
            LocalCostSpec("tracking", Q_c=[-1.0], r_d=[0.0])
        with pytest.raises(ModelError, match="r_d"):
            LocalCostSpec("tracking", Q_c=[1.0])
        with pytest.raises(ModelError, match="y_bar"):
            LocalCostSpec("constraint", Q_c=[1.0])
        with pytest.raises(ModelError, match="kind"):
            LocalCostSpec("quadratic")
        with pytest.raises(ModelError):
            tracking_cost(np.zeros((2, 2)), None,
                          LocalCostSpec("tracking", Q_c=[1.0], r_d=[0.0, 0.0, 0.0]))


class HoldController:
    """Test stand-in: plans a constant input profile."""

    def __init__(self, u_hold):
        self.u_hold = np.atleast_1d(np.asarray(u_hold, dtype=float))

    def solve(self, model, x0, r_s, v_in, warm=None, u_prev=None):
        U = np.tile(self.u_hold, (v_in.shape[0], 1))
        return SimpleNamespace(u=U, warm=warm, budget_hit=False)


class TestRespond:
    def equilibrium_subsystem(self, controlled):
        rng = np.random.default_rng(77)
        A = rng.standard_normal((2, 2))
        A *= 0.5 / max(abs(np.linalg.eigvals(A)))
        x_op = rng.standard_normal(2)
        u_op = np.array([0.4]) if controlled else None
        v_op = rng.standard_normal(2)
        y_op = np.array([1.5])
        m = linear_about(A, rng.standard_normal((2, 2)), [[1.0, 0.0]],
                         rng.standard_normal((2, 2)),
                         Bu=rng.standard_normal((2, 1)) if controlled else None,
                         x_op=x_op, u_op=u_op, v_op=v_op, y_op=y_op,
                         w_op=rng.standard_normal(2), Ts=5.0)
        costs = (LocalCostSpec("tracking", Q_c=[1e4], R_c=[0.0], r_d=y_op),)
        return Subsystem(sid=1, model=m, state=SubsystemState(x_op), costs=costs,
                         controller=HoldController(u_op) if controlled else None), v_op

    def test_uncontrolled_zero_cost_spec(self):
        sub, v_op = self.equilibrium_subsystem(controlled=False)
        sub = Subsystem(sid=sub.sid, model=sub.model, state=sub.state,
                        costs=(LocalCostSpec("zero"),))
        res = sub.respond(None, np.tile(v_op, (5, 1)) + 3.0)
        assert res.J == 0.0

    def test_controlled_at_setpoint_zero_cost(self):
        sub, v_op = self.equilibrium_subsystem(controlled=True)
        res = sub.respond(sub.costs[0].r_d, np.tile(v_op, (5, 1)))
        assert res.J == pytest.approx(0.0, abs=1e-18)
        assert res.v_out.shape == (5, 2)

    def test_constraint_subsystem_inactive(self):
        sub, v_op = self.equilibrium_subsystem(controlled=False)
        sub = Subsystem(sid=3, model=sub.model, state=sub.state,
                        costs=(LocalCostSpec("constraint", Q_c=[1e12], y_bar=[99.0]),))
        res = sub.respond(None, np.tile(v_op, (5, 1)))
        assert res.J == 0.0

    def test_setpoint_to_uncontrolled_rejected(self):
        sub, v_op = self.equilibrium_subsystem(controlled=False)
        with pytest.raises(ModelError, match="uncontrolled"):
            sub.respond(np.array([1.0]), np.tile(v_op, (5, 1)))

    def test_missing_setpoint_rejected(self):
        sub, v_op = self.equilibrium_subsystem(controlled=True)
        with pytest.raises(ModelError, match="r_s required"):
            sub.respond(None, np.tile(v_op, (5, 1)))

    def test_respond_deterministic(self):
        sub, v_op = self.equilibrium_subsystem(controlled=True)
        V = np.tile(v_op, (6, 1)) + 0.3
        r1 = sub.respond(sub.costs[0].r_d + 0.1, V)
        r2 = sub.respond(sub.costs[0].r_d + 0.1, V)
        assert np.array_equal(r1.v_out, r2.v_out)
        assert r1.J == r2.J

    def test_state_dimension_checked(self):
        sub, _ = self.equilibrium_subsystem(controlled=False)
        with pytest.raises(ModelError, match="state dimension"):
            Subsystem(sid=9, model=sub.model, state=SubsystemState(np.zeros(5)))


def random_block(rng, nx, nu, nv, ny, nw, wv_feedthrough, terms=(), Dwv=None):
    """Stable random block; wv_feedthrough gates instantaneous v -> w paths."""
    A = rng.standard_normal((nx, nx))
    A *= 0.6 / max(abs(np.linalg.eigvals(A)))
    if Dwv is None:
        Dwv = 0.4 * rng.standard_normal((nw, nv)) if wv_feedthrough else np.zeros((nw, nv))
    return canonical(
        A, 0.5 * rng.standard_normal((nx, nu)), 0.5 * rng.standard_normal((nx, nv)),
        0.1 * rng.standard_normal(nx),
        rng.standard_normal((ny, nx)), np.zeros((ny, nu)),
        0.3 * rng.standard_normal((ny, nv)), 0.1 * rng.standard_normal(ny),
        rng.standard_normal((nw, nx)), np.zeros((nw, nu)), Dwv,
        0.1 * rng.standard_normal(nw), terms=terms, Ts=5.0)


def network_step_oracle(blocks, links, v_ext_map, xs, u, v_ext):
    """One plant step by per-block evaluation, iterating feedthrough to a
    fixed point (the instantaneous graph is acyclic, so it terminates)."""

    def w_of(s, v_s):
        m = blocks[s]
        z = np.concatenate([xs[s], u[s], v_s])
        w = m.Cw @ xs[s] + m.Dwu @ u[s] + m.Dwv @ v_s + m.gw0
        for t in m.terms:
            if t.space == "w":
                a, b = t.a0 + t.avec @ z, t.b0 + t.bvec @ z
                w[t.row] += t.coeff * (np.sign(a) * np.sqrt(abs(a * b))
                                       if t.kind == "sqrt_flow" else a * b)
        return w

    v = {s: np.zeros(blocks[s].nv) for s in blocks}
    for s, rows in v_ext_map.items():
        for vr, col in rows:
            v[s][vr] = v_ext[col]
    for _ in range(len(links) + 2):
        w = {s: w_of(s, v[s]) for s in blocks}
        for src, wr, dst, vr in links:
            v[dst][vr] = w[src][wr]
    w = {s: w_of(s, v[s]) for s in blocks}
    y, xn = {}, {}
    for s, m in blocks.items():
        z = np.concatenate([xs[s], u[s], v[s]])
        y[s] = m.Cy @ xs[s] + m.Dyu @ u[s] + m.Dyv @ v[s] + m.gy0
        xn[s] = m.A @ xs[s] + m.Bu @ u[s] + m.Bv @ v[s] + m.f0
        for t in m.terms:
            if t.space == "w":
                continue
            a, b = t.a0 + t.avec @ z, t.b0 + t.bvec @ z
            val = t.coeff * (np.sign(a) * np.sqrt(abs(a * b))
                             if t.kind == "sqrt_flow" else a * b)
            (xn[s] if t.space == "state" else y[s])[t.row] += val
    return y, w, xn


class TestCompose:
    def build_network(self, with_term=True):
        rng = np.random.default_rng(101)
        # block 2 has instantaneous v->w paths; 1 and 3 are strictly
        # delayed, so every coupling cycle crosses a state
        terms3 = ()
        if with_term:
            nz3 = 2 + 1 + 2
            avec = np.zeros(nz3)
            avec[2] = 1.0  # a = u of block 3
            bvec = np.zeros(nz3)
            bvec[3] = 1.0  # b = first coupling input of block 3
            terms3 = (NonlinearTerm("sqrt_flow", "w", 0, 0.8,
                                    a0=2.0, avec=avec, b0=5.0, bvec=bvec),)
        # block 2 w rows 0 and 1 feed block 3, whose term reads them; they
        # must not see v column 2 (the term-bearing channel) or the term
        # would feed itself. Row 2 is exposed only, so it may.
        Dwv2 = 0.4 * rng.standard_normal((3, 3))
        Dwv2[0, 2] = Dwv2[1, 2] = 0.0
        blocks = {
            1: random_block(rng, nx=2, nu=1, nv=2, ny=1, nw=2, wv_feedthrough=False),
            2: random_block(rng, nx=2, nu=0, nv=3, ny=1, nw=3, wv_feedthrough=True,
                            Dwv=Dwv2),
            3: random_block(rng, nx=2, nu=1, nv=2, ny=1, nw=2, wv_feedthrough=False,
                            terms=terms3),
        }
        links = [
            (1, 0, 2, 0), (1, 1, 2, 1),   # 1 -> 2
            (2, 0, 3, 0), (2, 1, 3, 1),   # 2 -> 3
            (3, 0, 2, 2),                 # 3 -> 2 (term-bearing row)
            (3, 1, 1, 0),                 # 3 -> 1
        ]
        v_ext = [(1, 1)]                  # boundary input into block 1
        y_sel = [(1, 0), (3, 0)]
        w_sel = [(2, 2), (3, 0)]
        return blocks, links, v_ext, y_sel, w_sel

    def test_composition_matches_network_oracle(self):
        blocks, links, v_ext, y_sel, w_sel = self.build_network()
        model, index = compose(blocks, links, v_ext, y_sel, w_sel)
        assert model.nx == 6 and model.nu == 2 and model.nv == 1
        assert model.ny == 2 and model.nw == 2

        rng = np.random.default_rng(55)
        N = 20
        U = 0.5 * rng.standard_normal((N, 2))
        Vx = 0.5 * rng.standard_normal((N, 1))
        x0 = 0.3 * rng.standard_normal(6)
        Y, W, X = simulate_trajectory(model, x0, U, Vx)

        v_ext_map = {}
        for col, (s, vr) in enumerate(v_ext):
            v_ext_map.setdefault(s, []).append((vr, col))
        xs = {s: x0[index.x_slices[s]].copy() for s in blocks}
        for k in range(N):
            u = {s: U[k, index.u_slices[s]] for s in blocks}
            y, w, xn = network_step_oracle(blocks, links, v_ext_map, xs, u, Vx[k])
            y_k = np.array([y[s][r] for s, r in y_sel])
            w_k = np.array([w[s][r] for s, r in w_sel])
            assert np.allclose(Y[k], y_k, atol=1e-9), f"y mismatch at step {k}"
            assert np.allclose(W[k], w_k, atol=1e-9), f"w mismatch at step {k}"
            xs = xn
        xlast = np.concatenate([xs[s] for s in sorted(blocks)])
        assert np.allclose(X[-1], xlast, atol=1e-9)

    def test_composition_linear_case(self):
        blocks, links, v_ext, y_sel, w_sel = self.build_network(with_term=False)
        model, _ = compose(blocks, links, v_ext, y_sel, w_sel)
        assert model.terms == ()

    def test_unconnected_input_rejected(self):
        blocks, links, v_ext, y_sel, w_sel = self.build_network()
        with pytest.raises(ModelError, match="unconnected"):
            compose(blocks, links[:-1], v_ext, y_sel, w_sel)

    def test_double_assignment_rejected(self):
        blocks, links, v_ext, y_sel, w_sel = self.build_network()
        with pytest.raises(ModelError, match="assigned twice"):
            compose(blocks, links + [(2, 0, 1, 0)], [(1, 0)] + v_ext, y_sel, w_sel)

    def test_term_chain_rejected(self):
        # feed the term-bearing w row of block 3 into an input its own b
        # coefficient reads: the composed term input would depend on the
        # term's value
        rng = np.random.default_rng(9)
        nz = 1 + 0 + 1
        term = (NonlinearTerm("bilinear", "w", 0, 1.0,
                              a0=1.0, avec=np.zeros(nz),
                              b0=0.0, bvec=np.array([0.0, 1.0])),)
        blk = {
            1: random_block(rng, nx=1, nu=0, nv=1, ny=1, nw=1, wv_feedthrough=False,
                            terms=term),
            2: random_block(rng, nx=1, nu=0, nv=1, ny=1, nw=1, wv_feedthrough=True),
        }
        links = [(1, 0, 2, 0), (2, 0, 1, 0)]
        with pytest.raises(ModelError, match="another term's output"):
            compose(blk, links, [], [(1, 0)], [(2, 0)])

    def test_ts_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        b1 = random_block(rng, 1, 0, 1, 1, 1, False)
        b2 = canonical([[0.5]], np.zeros((1, 0)), [[0.1]], [0.0],
                       [[1.0]], np.zeros((1, 0)), [[0.0]], [0.0],
                       [[1.0]], np.zeros((1, 0)), [[0.0]], [0.0], Ts=1.0)
        with pytest.raises(ModelError, match="sampling period"):
            compose({1: b1, 2: b2}, [(1, 0, 2, 0), (2, 0, 1, 0)], [],
                    [(1, 0)], [(1, 0)])


class TestEvaluateCosts:
    def test_sums_terms(self):
        specs = (
            LocalCostSpec("tracking", rows=(0,), Q_c=[1.0], r_d=[0.0]),
            LocalCostSpec("constraint", rows=(1,), Q_c=[10.0], y_bar=[1.0]),
            LocalCostSpec("zero"),
        )
        Y = np.array([[2.0, 3.0]])
        assert evaluate_costs(specs, Y) == pytest.approx(4.0 + 10.0 * 4.0)
