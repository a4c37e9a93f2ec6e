"""Local controllers: condensed linear MPC and single-shooting NMPC.

Both controllers score the post-move output window y(k+1..k+N) against the
set-point (the current output y(k) is already fixed when the plan is made)
and penalize input moves du(i) = u(i) - u(i-1) with du(0) measured from
the last applied input.  The reported subsystem cost (models module) is a
separate quantity with its own weights; these internal weights only shape
the plan.  Beyond the horizon end the last input and coupling values are
held, so output feedthrough at step N stays well defined.

The linear solver condenses the prediction into batch matrices once per
(model, horizon) pair; each solve is then a small strictly convex box QP,
driven to its KKT point by cyclic coordinate descent warm-started from
the clipped unconstrained minimizer.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .models import simulate_trajectory

_INF = float("inf")


class ControlError(ValueError):
    """Raised for invalid controller configuration or ill-posed problems."""


def _weights(vec, n, name):
    w = np.atleast_1d(np.asarray(vec, dtype=float)) if vec is not None else np.zeros(n)
    if w.size == 1 and n != 1:
        w = np.full(n, float(w[0]))
    if w.shape != (n,):
        raise ControlError(f"{name} has length {w.shape[0]}, expected {n}")
    if np.any(w < 0):
        raise ControlError(f"{name} must be nonnegative")
    return w


def _bound(vec, n, default):
    if vec is None:
        return np.full(n, default)
    b = np.atleast_1d(np.asarray(vec, dtype=float))
    if b.size == 1 and n != 1:
        b = np.full(n, float(b[0]))
    if b.shape != (n,):
        raise ControlError(f"bound has length {b.shape[0]}, expected {n}")
    return b


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, internal tracking weights and actuator box for one controller.

    Q weighs squared output deviations per channel, R squared input moves.
    r_s is an optional default set-point; a set-point passed at solve time
    wins.  Bounds default to unbounded.
    """

    N: int
    Q: object = None
    R: object = None
    u_min: object = None
    u_max: object = None
    r_s: object = None

    def __post_init__(self):
        if self.N < 1:
            raise ControlError(f"horizon {self.N} < 1")

    def resolved(self, ny, nu):
        Q = _weights(self.Q, ny, "Q")
        R = _weights(self.R, nu, "R")
        lo = _bound(self.u_min, nu, -_INF)
        hi = _bound(self.u_max, nu, _INF)
        if np.any(lo > hi):
            raise ControlError("u_min exceeds u_max")
        return Q, R, lo, hi


@dataclass(frozen=True)
class NmpcConfig(MpcConfig):
    """MpcConfig plus the iterative-solver knobs."""

    budget: int = 40          # outer gradient iterations
    fd_step: float = 1e-6     # forward-difference step on each input entry
    tol: float = 1e-9         # stop when an accepted step decreases J less
    step0: float = 1e-3       # initial gradient step length
    step_max: float = 1e2
    ls_max: int = 40          # backtracking halvings per iteration
    shrink: float = 0.5
    grow: float = 1.4

    def __post_init__(self):
        super().__post_init__()
        if self.budget < 1:
            raise ControlError("iteration budget must be at least 1")
        if self.fd_step <= 0:
            raise ControlError("finite-difference step must be positive")


@dataclass(frozen=True)
class ControlSolution:
    """Planned input profile plus solver diagnostics."""

    u: np.ndarray               # (N, nu)
    objective: float
    warm: object = None         # warm-start to thread into the next solve
    budget_hit: bool = False
    history: tuple = ()         # accepted objective values, nonincreasing
    walltime_s: float = 0.0


def saturate(u_profile, bounds):
    """Clip an input profile componentwise into [u_min, u_max]."""
    lo, hi = bounds
    return np.clip(np.asarray(u_profile, dtype=float), lo, hi)


def _hold_extend(P):
    """Append one held row so step-N outputs are defined."""
    return np.vstack([P, P[-1:]])


def _u_prev_default(model, u_prev):
    if u_prev is not None:
        return np.atleast_1d(np.asarray(u_prev, dtype=float))
    if model.op is not None:
        return model.op["u"]
    return np.zeros(model.nu)


def _box_qp(H, q, lo, hi, u0, tol=1e-10, max_sweeps=500):
    """Minimize u.H.u/2 + q.u over a box; H must be strictly positive definite.

    Cyclic coordinate descent with an exact per-coordinate minimizer is
    monotone and converges to the unique solution; the stop test is the
    projected-gradient KKT residual.  Deterministic for fixed inputs.
    """
    u = np.clip(np.asarray(u0, dtype=float), lo, hi)
    n = u.shape[0]
    diag = np.diag(H)
    g = H @ u + q
    scale = max(1.0, float(np.max(np.abs(q))) if n else 1.0)
    for _ in range(max_sweeps):
        for i in range(n):
            new = min(max(u[i] - g[i] / diag[i], lo[i]), hi[i])
            step = new - u[i]
            if step != 0.0:
                g += H[:, i] * step
                u[i] = new
        pg = g.copy()
        pg[(u <= lo) & (g > 0)] = 0.0
        pg[(u >= hi) & (g < 0)] = 0.0
        if np.max(np.abs(pg), initial=0.0) <= tol * scale:
            break
    return u


class LinearMpc:
    """Condensed finite-horizon tracking MPC for linear subsystem models."""

    def __init__(self, config):
        self.config = config
        self._prepared = {}

    def _prepare(self, model):
        key = id(model)
        got = self._prepared.get(key)
        if got is not None:
            return got
        if model.terms:
            raise ControlError("linear MPC got a model with nonlinear terms")
        N = self.config.N
        nx, nu, nv, ny = model.nx, model.nu, model.nv, model.ny
        Q, R, lo, hi = self.config.resolved(ny, nu)
        A, Bu, Bv, Cy = model.A, model.Bu, model.Bv, model.Cy

        Ap = [np.eye(nx)]
        for _ in range(N):
            Ap.append(A @ Ap[-1])
        Asum = [np.zeros((nx, nx))]
        for i in range(N):
            Asum.append(Asum[-1] + Ap[i])

        F = np.zeros((N * ny, nx))
        c = np.zeros(N * ny)
        Gu = np.zeros((N * ny, N * nu))
        Gv = np.zeros((N * ny, N * nv))
        for i in range(1, N + 1):
            r = slice((i - 1) * ny, i * ny)
            F[r] = Cy @ Ap[i]
            c[r] = Cy @ (Asum[i] @ model.f0) + model.gy0
            for j in range(i):
                CA = Cy @ Ap[i - 1 - j]
                Gu[r, j * nu:(j + 1) * nu] += CA @ Bu
                Gv[r, j * nv:(j + 1) * nv] += CA @ Bv
            jf = min(i, N - 1)
            Gu[r, jf * nu:(jf + 1) * nu] += model.Dyu
            Gv[r, jf * nv:(jf + 1) * nv] += model.Dyv

        # move operator: (S @ U - E @ u_prev) stacks du(0..N-1)
        S = np.eye(N * nu)
        for i in range(1, N):
            S[i * nu:(i + 1) * nu, (i - 1) * nu:i * nu] = -np.eye(nu)
        E = np.zeros((N * nu, nu))
        E[:nu] = np.eye(nu)

        Qbar = np.tile(Q, N)
        Rbar = np.tile(R, N)
        H = Gu.T @ (Qbar[:, None] * Gu) + S.T @ (Rbar[:, None] * S)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ControlError("ill-posed MPC; add input regularization") from None
        prepared = {
            "F": F, "c": c, "Gu": Gu, "Gv": Gv, "S": S, "E": E,
            "Qbar": Qbar, "Rbar": Rbar, "H": H, "Hinv": np.linalg.inv(H),
            "lo": lo, "hi": hi, "N": N, "nu": nu,
        }
        self._prepared[key] = prepared
        return prepared

    def solve(self, model, x0, r_s, v_in, warm=None, u_prev=None):
        t0 = time.perf_counter()
        p = self._prepare(model)
        N, nu = p["N"], p["nu"]
        r_s = self.config.r_s if r_s is None else r_s
        if r_s is None:
            raise ControlError("no set-point given")
        r_s = np.atleast_1d(np.asarray(r_s, dtype=float))
        if r_s.shape != (model.ny,):
            raise ControlError(f"set-point has length {r_s.shape[0]}, expected {model.ny}")
        V = np.atleast_2d(np.asarray(v_in, dtype=float))
        if V.shape != (N, model.nv):
            raise ControlError(f"coupling profile has shape {V.shape}, "
                               f"expected {(N, model.nv)}")
        x0 = np.asarray(x0, dtype=float).ravel()
        up = _u_prev_default(model, u_prev)

        free = p["F"] @ x0 + p["Gv"] @ V.ravel() + p["c"]
        ref = np.tile(r_s, N)
        eup = p["E"] @ up

        def objective(Uflat):
            dy = p["Gu"] @ Uflat + free - ref
            du = p["S"] @ Uflat - eup
            return float(dy @ (p["Qbar"] * dy) + du @ (p["Rbar"] * du))

        rhs = p["Gu"].T @ (p["Qbar"] * (ref - free)) + p["S"].T @ (p["Rbar"] * eup)
        lo, hi = np.tile(p["lo"], N), np.tile(p["hi"], N)
        U = _box_qp(p["H"], -rhs, lo, hi, p["Hinv"] @ rhs)
        J = objective(U)
        return ControlSolution(U.reshape(N, nu), J, warm=warm,
                               walltime_s=time.perf_counter() - t0)


def lin_mpc_solve(model, x0, v_in_profile, config, r_s=None, u_prev=None):
    """One condensed-MPC solve; set-point from the argument or the config."""
    return LinearMpc(config).solve(model, x0, r_s, v_in_profile, u_prev=u_prev).u


class NonlinearMpc:
    """Projected-gradient single-shooting NMPC with finite differences."""

    def __init__(self, config):
        if not isinstance(config, NmpcConfig):
            config = NmpcConfig(**config.__dict__)
        self.config = config

    @staticmethod
    def _cost(model, x0, Uflat, V_ext, ref, Qbar, Rbar, up, N, nu):
        U = Uflat.reshape(N, nu)
        Y, _, _ = simulate_trajectory(model, x0, _hold_extend(U), V_ext)
        dy = Y[1:].ravel() - ref
        du = np.diff(np.vstack([up[None, :], U]), axis=0).ravel()
        return float(dy @ (Qbar * dy) + du @ (Rbar * du))

    def solve(self, model, x0, r_s, v_in, warm=None, u_prev=None):
        t0 = time.perf_counter()
        cfg = self.config
        N, nu, ny = cfg.N, model.nu, model.ny
        Q, R, lo, hi = cfg.resolved(ny, nu)
        r_s = cfg.r_s if r_s is None else r_s
        if r_s is None:
            raise ControlError("no set-point given")
        r_s = np.atleast_1d(np.asarray(r_s, dtype=float))
        if r_s.shape != (ny,):
            raise ControlError(f"set-point has length {r_s.shape[0]}, expected {ny}")
        V = np.atleast_2d(np.asarray(v_in, dtype=float))
        if V.shape != (N, model.nv):
            raise ControlError(f"coupling profile has shape {V.shape}, "
                               f"expected {(N, model.nv)}")
        x0 = np.asarray(x0, dtype=float).ravel()
        up = _u_prev_default(model, u_prev)
        Qbar = np.tile(Q, N)
        Rbar = np.tile(R, N)
        V_ext = _hold_extend(V)
        ref = np.tile(r_s, N)
        lo_f, hi_f = np.tile(lo, N), np.tile(hi, N)

        U = np.tile(up, N) if warm is None else np.asarray(warm, dtype=float).ravel().copy()
        if U.shape != (N * nu,):
            raise ControlError("warm start has the wrong shape")
        U = np.clip(U, lo_f, hi_f)

        def cost(Uf):
            return self._cost(model, x0, Uf, V_ext, ref, Qbar, Rbar, up, N, nu)
        J = cost(U)
        history = [J]
        alpha = cfg.step0
        h = cfg.fd_step
        converged = False
        for _ in range(cfg.budget):
            g = np.empty(N * nu)
            for i in range(N * nu):
                Up = U.copy()
                Up[i] += h
                g[i] = (cost(Up) - J) / h
            if not np.any(g):
                converged = True
                break
            a = alpha
            accepted = False
            for _ in range(cfg.ls_max):
                Ut = np.clip(U - a * g, lo_f, hi_f)
                if np.array_equal(Ut, U):
                    a *= cfg.shrink
                    continue
                Jt = cost(Ut)
                if Jt < J:
                    accepted = True
                    break
                a *= cfg.shrink
            if not accepted:
                converged = True
                break
            decrease = J - Jt
            U, J = Ut, Jt
            history.append(J)
            alpha = min(a * cfg.grow, cfg.step_max)
            if decrease < cfg.tol:
                converged = True
                break
        return ControlSolution(U.reshape(N, nu), J, warm=U.reshape(N, nu).copy(),
                               budget_hit=not converged, history=tuple(history),
                               walltime_s=time.perf_counter() - t0)


def nmpc_solve(model, x0, v_in_profile, config, r_s=None, u_prev=None, warm=None):
    """One NMPC solve; returns the full solution with diagnostics."""
    return NonlinearMpc(config).solve(model, x0, r_s, v_in_profile,
                                      warm=warm, u_prev=u_prev)
