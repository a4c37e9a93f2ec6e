"""Simulation kernel tests.

The oracle below re-derives the canonical-form semantics with plain
Python loops and math-module scalars, independent of the kernel code,
then both backends are required to match it.
"""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from hiercoord import _kernels
from hiercoord._kernels import (
    BACKEND,
    KIND_BILINEAR,
    KIND_SQRT_FLOW,
    SPACE_STATE,
    SPACE_W,
    SPACE_Y,
    simulate,
)
from hiercoord._kernels import pykernels


def pack_terms(terms, nz):
    """Pack a list of term dicts into the kernel's parallel arrays."""
    nt = len(terms)
    t_kind = np.zeros(nt, dtype=np.int32)
    t_space = np.zeros(nt, dtype=np.int32)
    t_row = np.zeros(nt, dtype=np.int32)
    t_coeff = np.zeros(nt)
    t_a0 = np.zeros(nt)
    t_b0 = np.zeros(nt)
    t_avec = np.zeros((nt, nz))
    t_bvec = np.zeros((nt, nz))
    for i, t in enumerate(terms):
        t_kind[i] = t["kind"]
        t_space[i] = t["space"]
        t_row[i] = t["row"]
        t_coeff[i] = t["coeff"]
        t_a0[i] = t.get("a0", 0.0)
        t_b0[i] = t.get("b0", 0.0)
        t_avec[i] = t.get("avec", np.zeros(nz))
        t_bvec[i] = t.get("bvec", np.zeros(nz))
    return t_kind, t_space, t_row, t_coeff, t_a0, t_avec, t_b0, t_bvec


def run(sim, mats, terms, x0, U, V):
    A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0 = mats
    N = U.shape[0]
    nz = A.shape[0] + U.shape[1] + V.shape[1]
    out_Y = np.zeros((N, Cy.shape[0]))
    out_W = np.zeros((N, Cw.shape[0]))
    out_X = np.zeros((N + 1, A.shape[0]))
    status = sim(
        A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0,
        *pack_terms(terms, nz), x0, U, V, out_Y, out_W, out_X,
    )
    return status, out_Y, out_W, out_X


def contiguous_model(rng, nx, nu, nv, ny, nw, stable=True):
    def m(r, c):
        return np.ascontiguousarray(rng.standard_normal((r, c)))

    A = m(nx, nx)
    if stable:
        A *= 0.7 / max(1e-9, max(abs(np.linalg.eigvals(A))))
    return (
        A, m(nx, nu), m(nx, nv), rng.standard_normal(nx),
        m(ny, nx), m(ny, nu), m(ny, nv), rng.standard_normal(ny),
        m(nw, nx), m(nw, nu), m(nw, nv), rng.standard_normal(nw),
    )


def oracle_simulate(mats, terms, x0, U, V):
    """Scalar-loop reference implementation of the kernel contract."""
    A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0 = mats
    nx, ny, nw = A.shape[0], Cy.shape[0], Cw.shape[0]
    N = U.shape[0]
    X = [list(map(float, x0))]
    Y, W = [], []

    def phi(kind, a, b):
        if kind == KIND_SQRT_FLOW:
            s = 1.0 if a > 0 else (-1.0 if a < 0 else 0.0)
            return s * math.sqrt(abs(a * b))
        return a * b

    def affine(M, c, x, u, v):
        out = []
        for i in range(len(c)):
            acc = c[i]
            row = M[0][i], M[1][i], M[2][i]
            for vec, coefs in zip((x, u, v), row):
                for j, xj in enumerate(vec):
                    acc += coefs[j] * xj
            out.append(acc)
        return out

    for k in range(N):
        x, u, v = X[-1], list(map(float, U[k])), list(map(float, V[k]))
        z = x + u + v
        y = affine((Cy, Dyu, Dyv), gy0, x, u, v)
        w = affine((Cw, Dwu, Dwv), gw0, x, u, v)
        xn = affine((A, Bu, Bv), f0, x, u, v)
        for t in terms:
            a = t.get("a0", 0.0) + sum(c * zj for c, zj in zip(t.get("avec", []), z))
            b = t.get("b0", 0.0) + sum(c * zj for c, zj in zip(t.get("bvec", []), z))
            val = t["coeff"] * phi(t["kind"], a, b)
            (xn if t["space"] == SPACE_STATE else y if t["space"] == SPACE_Y else w)[t["row"]] += val
        Y.append(y)
        W.append(w)
        X.append(xn)
    return np.array(Y), np.array(W), np.array(X)


BACKENDS = [pykernels.simulate, simulate]
IDS = ["python", BACKEND]


@pytest.mark.parametrize("sim", BACKENDS, ids=IDS)
class TestSimulate:
    def test_linear_matches_hand_iteration(self, sim):
        rng = np.random.default_rng(11)
        mats = contiguous_model(rng, nx=2, nu=1, nv=2, ny=2, nw=1)
        x0 = rng.standard_normal(2)
        U = rng.standard_normal((25, 1))
        V = rng.standard_normal((25, 2))
        status, Y, W, X = run(sim, mats, [], x0, U, V)
        Yo, Wo, Xo = oracle_simulate(mats, [], x0, U, V)
        assert status == 0
        assert np.allclose(Y, Yo, atol=1e-12, rtol=0)
        assert np.allclose(W, Wo, atol=1e-12, rtol=0)
        assert np.allclose(X, Xo, atol=1e-12, rtol=0)

    def test_terms_in_every_space(self, sim):
        rng = np.random.default_rng(5)
        nx, nu, nv = 2, 1, 1
        nz = nx + nu + nv
        mats = contiguous_model(rng, nx, nu, nv, ny=2, nw=2)
        terms = [
            {"kind": KIND_BILINEAR, "space": SPACE_STATE, "row": 1, "coeff": 0.3,
             "a0": 0.2, "avec": rng.standard_normal(nz) * 0.1,
             "b0": -0.4, "bvec": rng.standard_normal(nz) * 0.1},
            {"kind": KIND_SQRT_FLOW, "space": SPACE_Y, "row": 0, "coeff": 2.0,
             "a0": 1.5, "avec": rng.standard_normal(nz) * 0.2,
             "b0": 3.0, "bvec": rng.standard_normal(nz) * 0.2},
            {"kind": KIND_SQRT_FLOW, "space": SPACE_W, "row": 1, "coeff": -1.0,
             "a0": -2.0, "avec": np.zeros(nz),
             "b0": 1.0, "bvec": rng.standard_normal(nz) * 0.1},
        ]
        x0 = rng.standard_normal(nx) * 0.5
        U = rng.standard_normal((15, nu))
        V = rng.standard_normal((15, nv))
        status, Y, W, X = run(sim, mats, terms, x0, U, V)
        Yo, Wo, Xo = oracle_simulate(mats, terms, x0, U, V)
        assert status == 0
        assert np.allclose(Y, Yo, atol=1e-10, rtol=0)
        assert np.allclose(W, Wo, atol=1e-10, rtol=0)
        assert np.allclose(X, Xo, atol=1e-10, rtol=0)

    def test_sqrt_flow_sign_convention(self, sim):
        # w = sign(a) * sqrt(|a*b|) with a = v0 and b = 4: negative flow
        # potential must give a negative flow, zero must give zero
        mats = contiguous_model(np.random.default_rng(0), 1, 1, 1, 1, 1)
        mats = tuple(np.zeros_like(m) for m in mats)
        term = {"kind": KIND_SQRT_FLOW, "space": SPACE_W, "row": 0, "coeff": 1.0,
                "avec": np.array([0.0, 0.0, 1.0]), "b0": 4.0,
                "bvec": np.zeros(3)}
        V = np.array([[9.0], [-9.0], [0.0]])
        status, _, W, _ = run(sim, mats, [term], np.zeros(1), np.zeros((3, 1)), V)
        assert status == 0
        assert W[:, 0].tolist() == [6.0, -6.0, 0.0]

    def test_blowup_reports_first_bad_step(self, sim):
        mats = contiguous_model(np.random.default_rng(1), 1, 1, 1, 1, 1, stable=False)
        mats = list(mats)
        mats[0] = np.array([[1e200]])
        x0 = np.array([5.0])
        U = np.zeros((6, 1))
        V = np.zeros((6, 1))
        status, _, _, _ = run(sim, tuple(mats), [], x0, U, V)
        # x: 5 -> 5e200 -> inf, first non-finite while computing step 1
        assert status == 2

    def test_outputs_written_every_step(self, sim):
        rng = np.random.default_rng(3)
        mats = contiguous_model(rng, 3, 2, 2, 2, 3)
        N = 40
        status, Y, W, X = run(
            sim, mats, [], rng.standard_normal(3),
            rng.standard_normal((N, 2)), rng.standard_normal((N, 2)),
        )
        assert status == 0
        assert Y.shape == (N, 2) and W.shape == (N, 3) and X.shape == (N + 1, 3)
        assert np.all(np.isfinite(Y)) and np.all(np.isfinite(W)) and np.all(np.isfinite(X))


class TestBackendSelection:
    def test_backend_reported(self):
        assert _kernels.BACKEND in ("compiled", "python")

    def test_backends_agree_with_terms(self):
        if _kernels.BACKEND != "compiled":
            pytest.skip("compiled backend unavailable")
        rng = np.random.default_rng(42)
        mats = contiguous_model(rng, 4, 2, 3, 3, 2)
        nz = 4 + 2 + 3
        terms = [
            {"kind": KIND_BILINEAR, "space": SPACE_STATE, "row": 0, "coeff": 0.05,
             "a0": 0.1, "avec": rng.standard_normal(nz) * 0.05,
             "b0": 0.2, "bvec": rng.standard_normal(nz) * 0.05},
            {"kind": KIND_SQRT_FLOW, "space": SPACE_W, "row": 1, "coeff": 1.3,
             "a0": 2.0, "avec": rng.standard_normal(nz) * 0.1,
             "b0": 5.0, "bvec": rng.standard_normal(nz) * 0.1},
        ]
        x0 = rng.standard_normal(4)
        U = rng.standard_normal((60, 2))
        V = rng.standard_normal((60, 3))
        s1, Y1, W1, X1 = run(pykernels.simulate, mats, terms, x0, U, V)
        s2, Y2, W2, X2 = run(_kernels._core.simulate, mats, terms, x0, U, V)
        assert s1 == s2 == 0
        assert np.allclose(Y1, Y2, atol=1e-12, rtol=0)
        assert np.allclose(W1, W2, atol=1e-12, rtol=0)
        assert np.allclose(X1, X2, atol=1e-12, rtol=0)

    def test_force_python_env(self):
        env = dict(os.environ, HIERCOORD_FORCE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", "from hiercoord import _kernels; print(_kernels.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"
