"""Pure-NumPy simulation kernel (fallback backend).

Semantics contract shared with the compiled backend `_core`:

A subsystem is held in a canonical affine-plus-terms form acting on the
concatenated per-step vector ``z = [x; u; v]`` (state, control input,
coupling input)::

    x+   = A  @ x + Bu  @ u + Bv  @ v + f0  + state-targeted terms
    y(k) = Cy @ x + Dyu @ u + Dyv @ v + gy0 + y-targeted terms
    w(k) = Cw @ x + Dwu @ u + Dwv @ v + gw0 + w-targeted terms

Each nonlinear term evaluates two scalar functionals of z,
``a = a0 + avec @ z`` and ``b = b0 + bvec @ z``, combines them through a
named primitive and adds ``coeff * phi(a, b)`` to one row of one of the
three equations above:

    kind 0  sqrt_flow   phi = sign(a) * sqrt(|a * b|)
    kind 1  bilinear    phi = a * b

Linear models are the special case with zero terms.
"""

import numpy as np

KIND_SQRT_FLOW = 0
KIND_BILINEAR = 1

SPACE_STATE = 0
SPACE_Y = 1
SPACE_W = 2


def term_value(kind, a, b):
    """Evaluate one nonlinear primitive at scalars (a, b)."""
    if kind == KIND_SQRT_FLOW:
        return np.sign(a) * np.sqrt(abs(a * b))
    if kind == KIND_BILINEAR:
        return a * b
    raise ValueError(f"unknown term kind {kind}")


def simulate(
    A, Bu, Bv, f0,
    Cy, Dyu, Dyv, gy0,
    Cw, Dwu, Dwv, gw0,
    t_kind, t_space, t_row, t_coeff, t_a0, t_avec, t_b0, t_bvec,
    x0, U, V, out_Y, out_W, out_X,
):
    """Iterate the canonical model N steps from x0.

    Fills out_Y (N, ny), out_W (N, nw) and out_X (N+1, nx) in place.
    Returns 0 on success, or k+1 if a non-finite value first appeared
    while computing step k.
    """
    N = U.shape[0]
    nt = t_kind.shape[0]
    x = x0.astype(np.float64, copy=True)
    out_X[0, :] = x
    # overflow is an expected, reported condition, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _loop(N, nt, x, A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0,
                     Cw, Dwu, Dwv, gw0, t_kind, t_space, t_row, t_coeff,
                     t_a0, t_avec, t_b0, t_bvec, U, V, out_Y, out_W, out_X)


def _loop(N, nt, x, A, Bu, Bv, f0, Cy, Dyu, Dyv, gy0, Cw, Dwu, Dwv, gw0,
          t_kind, t_space, t_row, t_coeff, t_a0, t_avec, t_b0, t_bvec,
          U, V, out_Y, out_W, out_X):
    for k in range(N):
        u = U[k]
        v = V[k]
        y = Cy @ x + Dyu @ u + Dyv @ v + gy0
        w = Cw @ x + Dwu @ u + Dwv @ v + gw0
        xn = A @ x + Bu @ u + Bv @ v + f0
        if nt:
            z = np.concatenate((x, u, v))
            for t in range(nt):
                a = t_a0[t] + t_avec[t] @ z
                b = t_b0[t] + t_bvec[t] @ z
                val = t_coeff[t] * term_value(t_kind[t], a, b)
                if t_space[t] == SPACE_STATE:
                    xn[t_row[t]] += val
                elif t_space[t] == SPACE_Y:
                    y[t_row[t]] += val
                else:
                    w[t_row[t]] += val
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w)) and np.all(np.isfinite(xn))):
            return k + 1
        out_Y[k, :] = y
        out_W[k, :] = w
        x = xn
        out_X[k + 1, :] = x
    return 0
