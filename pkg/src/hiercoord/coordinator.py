"""Coordination layer: coupling reconciliation and set-point optimization.

For a frozen auxiliary set-point r the coordinator repeats a round of
[send each subsystem its incoming coupling profile, collect the outgoing
profiles, route them back, filter] until the incoming stack stops moving;
the reported local costs at that fixed point sum to the central cost
J_c(r).  An outer derivative-free trust-region loop then picks the next r
by evaluating J_c on an axis grid, fitting a quadratic surrogate and
stepping to its constrained minimizer.

The coordinator treats subsystems as black boxes: anything with a
`respond(r_s, v_in_profile, warm=...)` method returning an object with
`v_out` (step-major profile), `J`, `warm`, `budget_hit` and `walltime_s`
attributes takes part.  Filter gains are synthesized model-free each
period from a finite-difference power-iteration estimate of the coupling
map's gain.

Relaxation fact used by the filter synthesis: with gain alpha the round
map eigenvalue lambda becomes 1 - alpha + alpha*lambda, which has
magnitude below one exactly when lambda's real part is below 1 and alpha
is under 2*(1 - Re lambda)/|1 - lambda|^2; for real spectra in
(-rho, 1) any alpha below 2/(1 + rho) contracts.  Eigenvalues at or
beyond +1 cannot be stabilized by relaxation at all, so the estimated
gain rho only guards the negative side.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import (
    build_routing,
    matrix_to_profile,
    profile_to_matrix,
    shift_profile,
    stack_in,
    stack_out,
)

log = logging.getLogger(__name__)


class CoordinationError(RuntimeError):
    """Raised when a coordination exchange cannot proceed."""


class ConfigError(ValueError):
    """Raised for invalid coordinator configuration."""


@dataclass(frozen=True)
class CoordinatorConfig:
    """Reconciliation and trust-region knobs.

    filter_gain None means the gain is synthesized each period from the
    estimated coupling-map gain; a float in (0, 1] pins it.
    """

    eps_max: float = 1e-6
    sigma_max: int = 200
    filter_gain: float = None
    kappa: float = 1.9        # safety numerator in the gain synthesis
    alpha_min: float = 0.1    # filter floor; keeps rounds progressing
    gain_iters: int = 8       # power-iteration length for the gain estimate
    grid_size: int = 3
    radius0: float = 1.0
    radius_min: float = 1e-4
    radius_max: float = 1e3
    gamma_e: float = 1.6
    gamma_c: float = 0.5
    improve_tol: float = 1e-9  # relative cost drop that counts as improvement
    threads: int = 1

    def __post_init__(self):
        if self.eps_max <= 0:
            raise ConfigError("eps_max must be positive")
        if self.sigma_max < 1:
            raise ConfigError("sigma_max must be at least 1")
        if self.filter_gain is not None and not 0.0 < self.filter_gain <= 1.0:
            raise ConfigError("filter gain must lie in (0, 1]")
        if self.grid_size < 1:
            raise ConfigError("grid_size must be at least 1")
        if self.gamma_e <= 1.0:
            raise ConfigError("expansion factor must exceed 1")
        if not 0.0 < self.gamma_c < 1.0:
            raise ConfigError("contraction factor must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")


@dataclass(frozen=True)
class FixedPointResult:
    """Outcome of one coupling reconciliation at a frozen set-point."""

    v_in_star: np.ndarray
    converged: bool
    iterations: int
    residual_history: tuple
    J_c: float
    J_per_subsystem: dict
    trusted: bool
    responses: dict           # sid -> final-round RespondResult
    warms: dict               # sid -> controller warm after the final round
    v_in_roundtrip: np.ndarray = None   # unfiltered image of v_in_star
    trace: tuple = ()         # optional per-round rows


def filter_step(v_in_prev, v_in_hat, gain):
    """Relaxed update (1 - gain) * previous + gain * proposed."""
    v_in_prev = np.asarray(v_in_prev, dtype=float)
    v_in_hat = np.asarray(v_in_hat, dtype=float)
    if v_in_prev.shape != v_in_hat.shape:
        raise ValueError(f"length mismatch: {v_in_prev.shape} vs {v_in_hat.shape}")
    g = np.asarray(gain, dtype=float)
    if g.ndim and g.shape != v_in_prev.shape:
        raise ValueError(f"length mismatch: gain {g.shape} vs {v_in_prev.shape}")
    return (1.0 - g) * v_in_prev + g * v_in_hat


def synthesize_filter(rho_hat, kappa=1.9, alpha_min=0.1):
    """Scalar relaxation gain from an estimated coupling-map gain.

    alpha = min(1, kappa / (1 + rho_hat)), floored at alpha_min.  With
    kappa < 2 the relaxed round map contracts whenever the underlying
    map's real spectrum lies in (-rho_hat, 1); the floor trades that
    guarantee for progress when the estimate explodes (maps with gain
    beyond kappa/alpha_min - 1 can still diverge).
    """
    if not math.isfinite(rho_hat):
        raise CoordinationError(f"estimated map gain {rho_hat!r} is not finite")
    if rho_hat < 0:
        raise CoordinationError("estimated map gain must be nonnegative")
    alpha = min(1.0, kappa / (1.0 + rho_hat))
    return max(alpha, alpha_min)


def estimate_map_gain(round_map, v0, iters=6, delta=1e-4):
    """Dominant gain of v -> round_map(v) by finite-difference power iteration.

    Deterministic: starts from the all-ones direction.  Exact for affine
    maps up to roundoff; for rotating (complex-dominant) spectra the
    estimate oscillates, so the maximum over the tail is returned.
    """
    v0 = np.asarray(v0, dtype=float)
    n = v0.shape[0]
    if n == 0:
        return 0.0
    base = np.asarray(round_map(v0), dtype=float)
    d = np.ones(n) / math.sqrt(n)
    estimates = []
    for _ in range(max(1, iters)):
        w = (np.asarray(round_map(v0 + delta * d), dtype=float) - base) / delta
        nrm = float(np.linalg.norm(w))
        estimates.append(nrm)
        if nrm < 1e-12:
            break
        d = w / nrm
    tail = estimates[max(0, len(estimates) - 3):]
    return float(max(tail))


def split_setpoint(r, subsystems, topology):
    """Slice the concatenated auxiliary set-point per controlled subsystem.

    Block lengths follow each subsystem's r_dim (its addressed output
    rows), in increasing subsystem-id order.
    """
    out = {}
    pos = 0
    r = np.atleast_1d(np.asarray(r, dtype=float))
    for sid in sorted(topology.controlled):
        sub = subsystems[sid]
        dim = getattr(sub, "r_dim", None)
        if dim is None:
            dim = sub.model.ny
        out[sid] = r[pos:pos + dim]
        pos += dim
    if pos != r.shape[0]:
        raise CoordinationError(f"set-point has length {r.shape[0]}, "
                                f"expected {pos}")
    return out


def _respond_round(v, r_map, subsystems, topology, routing, warms, sigma):
    """One exchange: every subsystem plans against its incoming block."""
    N = topology.horizon
    results = {}
    for sid in sorted(subsystems):
        sub = subsystems[sid]
        block = routing.in_block(v, sid)
        V = profile_to_matrix(block, stack_in(topology, sid), N)
        try:
            results[sid] = sub.respond(r_map.get(sid), V, warm=warms.get(sid))
        except Exception as exc:
            raise CoordinationError(
                f"subsystem {sid} evaluation failed at round {sigma}: {exc}") from exc
    parts = [matrix_to_profile(results[sid].v_out, stack_out(topology, sid), N)
             for sid in sorted(subsystems)]
    v_out = np.concatenate(parts) if parts else np.zeros(0)
    return results, routing.apply(v_out)


def fixed_point_solve(r, subsystems, topology, config, routing=None, v0=None,
                      warms=None, gain=None, collect_trace=False):
    """Reconcile coupling profiles at a frozen set-point; sum local costs.

    Starts from v0 (zeros when omitted), iterates respond/route/filter
    until the scaled residual drops below eps_max or sigma_max rounds
    pass, then queries every subsystem once more at the settled stack for
    the reported costs.  Non-convergence is not an error: the result is
    returned with converged=False and its cost marked untrusted.
    """
    if routing is None:
        routing = build_routing(topology)
    N = topology.horizon
    size = routing.size
    v = np.zeros(size) if v0 is None else np.array(v0, dtype=float)
    if v.shape != (size,):
        raise CoordinationError(f"initial coupling stack has length {v.shape[0]}, "
                                f"expected {size}")
    if gain is None:
        gain = config.filter_gain if config.filter_gain is not None else 1.0
    r_map = split_setpoint(r, subsystems, topology)
    warms = dict(warms or {})
    scale = math.sqrt(size) if size else 1.0
    history = []
    trace = []
    converged = False
    for sigma in range(1, config.sigma_max + 1):
        results, v_hat = _respond_round(v, r_map, subsystems, topology,
                                        routing, warms, sigma)
        warms = {sid: res.warm for sid, res in results.items()}
        v_next = filter_step(v, v_hat, gain)
        eps = float(np.linalg.norm(v_next - v)) / scale
        v = v_next
        history.append(eps)
        if collect_trace:
            trace.append((sigma, eps, {sid: res.J for sid, res in results.items()}))
        if eps <= config.eps_max:
            converged = True
            break
    # one more exchange so the reported costs match the settled stack
    results, v_round = _respond_round(v, r_map, subsystems, topology, routing,
                                      warms, len(history) + 1)
    warms = {sid: res.warm for sid, res in results.items()}
    J_per = {sid: res.J for sid, res in results.items()}
    J_c = float(sum(J_per.values()))
    if not converged:
        log.warning("fixed point not reached in %d rounds (residual %.3e); "
                    "cost marked untrusted", len(history),
                    history[-1] if history else float("nan"))
    return FixedPointResult(v, converged, len(history), tuple(history), J_c,
                            J_per, trusted=converged, responses=results,
                            warms=warms, v_in_roundtrip=v_round,
                            trace=tuple(trace))


def evaluate_setpoint(r, subsystems, topology, config, **kw):
    """Central cost of one candidate set-point: (J_c, FixedPointResult)."""
    res = fixed_point_solve(r, subsystems, topology, config, **kw)
    return res.J_c, res


def write_reconciliation_trace(result, path):
    """Dump per-round residuals and local costs of a reconciliation as CSV."""
    import csv

    sids = sorted(result.J_per_subsystem)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "eps"] + [f"J_{sid}" for sid in sids])
        for sigma, eps, J in result.trace:
            writer.writerow([sigma, f"{eps:.12e}"] + [f"{J[s]:.12e}" for s in sids])


@dataclass
class CloudPoint:
    r: np.ndarray
    J: float
    trusted: bool


@dataclass
class TrustRegionState:
    """Center, per-axis radius and the period's evaluation cloud."""

    center: np.ndarray
    radius: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cloud: list = field(default_factory=list)

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        n = self.center.shape[0]
        self.radius = np.broadcast_to(np.asarray(self.radius, dtype=float), (n,)).copy()
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()

    def lookup(self, r):
        for p in self.cloud:
            if np.array_equal(p.r, r):
                return p
        return None


@dataclass(frozen=True)
class QuadModel:
    """Quadratic surrogate J(center + d) ~ c + g.d + d.H.d/2."""

    center: np.ndarray
    c: float
    g: np.ndarray
    H: np.ndarray
    kind: str              # "quadratic" | "diagonal" | "linear" | "constant"
    residual: float

    def predict(self, r):
        d = np.asarray(r, dtype=float) - self.center
        return float(self.c + self.g @ d + 0.5 * d @ self.H @ d)


def build_grid(state, grid_size):
    """Axis-aligned candidate grid around the center, clipped to bounds."""
    n = state.center.shape[0]
    if n == 0:
        raise ValueError("set-point dimension is zero")
    if np.any(state.radius <= 0):
        raise ValueError("trust-region radius must be positive")
    axes = []
    for i in range(n):
        if grid_size == 1:
            axes.append(np.array([state.center[i]]))
            continue
        # offsets around zero keep the center value exact in the grid
        vals = state.center[i] + np.linspace(-state.radius[i],
                                             state.radius[i], grid_size)
        vals = np.clip(vals, state.lower[i], state.upper[i])
        vals = np.append(vals, state.center[i])
        axes.append(np.unique(vals))
    seen = set()
    out = []
    for combo in itertools.product(*axes):
        if combo not in seen:
            seen.add(combo)
            out.append(combo)
    return [np.array(c) for c in out]


def quadratic_fit(cloud, center):
    """Weighted least-squares surrogate over the evaluation cloud.

    Untrusted evaluations carry weight zero.  The model degrades
    gracefully: full quadratic when the cloud supports it, diagonal
    curvature when it does not, linear on rank deficiency, constant as
    the last resort.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.shape[0]
    pts = [(p.r - center, p.J) for p in cloud if p.trusted]
    m = len(pts)
    if m == 0:
        return QuadModel(center, 0.0, np.zeros(n), np.zeros((n, n)),
                         "constant", float("nan"))
    Dfull = np.array([d for d, _ in pts]).reshape(m, n)
    J = np.array([J for _, J in pts])
    # axes the cloud never moves along cannot be identified; fit the rest
    active = [i for i in range(n) if np.ptp(Dfull[:, i]) > 0.0]
    D = Dfull[:, active]
    na = len(active)

    def features(kind):
        cols = [np.ones(m)]
        if kind != "constant":
            cols.extend(D[:, i] for i in range(na))
        if kind == "diagonal":
            cols.extend(D[:, i] ** 2 for i in range(na))
        if kind == "quadratic":
            for i in range(na):
                for j in range(i, na):
                    cols.append(D[:, i] * D[:, j])
        return np.column_stack(cols)

    n_quad = 1 + na + na * (na + 1) // 2
    n_diag = 1 + 2 * na
    order = []
    if na:
        if m >= n_quad:
            order.append("quadratic")
        if m >= n_diag:
            order.append("diagonal")
        order.append("linear")
    order.append("constant")
    for kind in order:
        Phi = features(kind)
        coef, _, rank, _ = np.linalg.lstsq(Phi, J, rcond=None)
        # linear is the terminal fallback: a deficient design (collinear
        # cloud) still yields the minimal-norm slope, flagged by its kind
        if rank < Phi.shape[1] and kind not in ("linear", "constant"):
            continue
        resid = float(np.sqrt(np.mean((Phi @ coef - J) ** 2)))
        c = float(coef[0])
        g = np.zeros(n)
        H = np.zeros((n, n))
        if kind != "constant":
            g[active] = coef[1:1 + na]
        if kind == "diagonal":
            for a, i in enumerate(active):
                H[i, i] = 2.0 * coef[1 + na + a]
        elif kind == "quadratic":
            k = 1 + na
            for a in range(na):
                for b in range(a, na):
                    i, j = active[a], active[b]
                    if i == j:
                        H[i, i] = 2.0 * coef[k]
                    else:
                        H[i, j] = H[j, i] = coef[k]
                    k += 1
        return QuadModel(center, c, g, H, kind, resid)
    return QuadModel(center, float(np.mean(J)), np.zeros(n), np.zeros((n, n)),
                     "constant", float(np.std(J)))


def _box_quad_min(g, H, lo, hi, quad_axes, d0):
    """Minimize g.d + d.H.d/2 over a box along the curved axes.

    d0 already holds the flat-axis components (box-edge descent for pure
    linear terms); the curved axes start from the projected Newton point
    and are polished by exact cyclic per-axis minimization.
    """
    d = d0.copy()
    q = list(quad_axes)
    Hqq = H[np.ix_(q, q)]
    g_eff = g[q] + H[np.ix_(q, range(len(d)))] @ d - Hqq @ d[q]
    d[q] = np.clip(np.linalg.solve(Hqq, -g_eff), lo[q], hi[q])
    for _ in range(200):
        moved = 0.0
        for i in q:
            rest = H[i] @ d - H[i, i] * d[i]
            new = np.clip(-(g[i] + rest) / H[i, i], lo[i], hi[i])
            moved = max(moved, abs(new - d[i]))
            d[i] = new
        if moved < 1e-14:
            break
    return d


def trust_region_step(state, model, evaluate, config):
    """Step to the surrogate minimizer, adapt the radius, recenter.

    The candidate is the quadratic's constrained minimizer: projected
    Newton on the axes with positive curvature (polished by exact
    per-axis descent), box-edge descent on purely linear axes.  When the
    curved part is not positive definite the best evaluated point serves
    as the candidate.  The radius grows by gamma_e when the period's best
    trusted evaluation improves on the center's cost by more than the
    improve_tol deadband (the candidate counts; so does any grid point),
    shrinks by gamma_c otherwise, and the center moves to the best
    trusted evaluation.  A misfit surrogate therefore slows the search
    without freezing it (the axis grid keeps probing at the full radius),
    while at a settled optimum the radius decays and evaluations stay
    local and cheap.
    """
    lo = np.maximum(-state.radius, state.lower - state.center)
    hi = np.minimum(state.radius, state.upper - state.center)
    H, g = model.H, model.g
    n = state.center.shape[0]
    scale = max(1.0, float(abs(H).max()) if H.size else 0.0)
    tol = 1e-12 * scale
    quad_axes = [i for i in range(n) if H[i, i] > tol]
    pd = all(H[i, i] >= -tol for i in range(n))
    if pd and quad_axes:
        eigs = np.linalg.eigvalsh(H[np.ix_(quad_axes, quad_axes)])
        pd = eigs.min() > 1e-12 * max(1.0, eigs.max())
    if pd:
        d = np.zeros(n)
        for i in range(n):
            if i not in quad_axes and g[i] != 0.0:
                d[i] = lo[i] if g[i] > 0 else hi[i]
        if quad_axes:
            d = _box_quad_min(g, H, lo, hi, quad_axes, d)
        candidate = state.center + d
    else:
        trusted = [p for p in state.cloud if p.trusted]
        candidate = min(trusted, key=lambda p: p.J).r.copy() if trusted \
            else state.center.copy()

    hit = state.lookup(candidate)
    if hit is None:
        J_cand, ok = evaluate(candidate)
        hit = CloudPoint(candidate, J_cand, ok)
        state.cloud.append(hit)
    center_pt = state.lookup(state.center)
    J_center = center_pt.J if center_pt is not None else float("inf")
    trusted = [p for p in state.cloud if p.trusted]
    best = min(trusted, key=lambda p: p.J) if trusted else None
    # the drop must clear a deadband, or converged-noise keeps the radius up
    improved = (best is not None and np.isfinite(J_center)
                and J_center - best.J > config.improve_tol * max(1.0, abs(J_center)))
    if best is not None and not np.isfinite(J_center):
        improved = True
    if improved:
        state.radius = np.minimum(state.radius * config.gamma_e, config.radius_max)
    else:
        state.radius = np.maximum(state.radius * config.gamma_c, config.radius_min)
    if best is not None:
        state.center = best.r.copy()
    return candidate, state


@dataclass(frozen=True)
class OptimizeOutcome:
    r_opt: np.ndarray
    state: object
    J_opt: float
    n_evaluations: int
    all_untrusted: bool


def optimize_setpoint(state, evaluate, config, executor=None):
    """One period of derivative-free set-point search.

    evaluate(r) -> (J_c, trusted) must be pure; grid evaluations may run
    on the executor concurrently (results are consumed in submission
    order, so the outcome is schedule-independent).  Returns the best
    trusted point seen this period; with every evaluation untrusted the
    center is returned unchanged with a warning.
    """
    state.cloud = []
    grid = build_grid(state, config.grid_size)
    if executor is not None and config.threads > 1 and len(grid) > 1:
        values = list(executor.map(evaluate, grid))
    else:
        values = [evaluate(r) for r in grid]
    for r, (J, ok) in zip(grid, values):
        state.cloud.append(CloudPoint(r, float(J), bool(ok)))
    n_evals = len(grid)
    trusted = [p for p in state.cloud if p.trusted]
    if not trusted:
        log.warning("every set-point evaluation failed to converge; "
                    "keeping the previous set-point")
        return OptimizeOutcome(state.center.copy(), state, float("nan"),
                               n_evals, True)
    model = quadratic_fit(state.cloud, state.center)
    before = len(state.cloud)
    _, state = trust_region_step(state, model, evaluate, config)
    n_evals += len(state.cloud) - before
    best = min((p for p in state.cloud if p.trusted), key=lambda p: p.J)
    return OptimizeOutcome(best.r.copy(), state, best.J, n_evals, False)


@dataclass(frozen=True)
class PeriodPlan:
    """Everything one coordination period decides."""

    r_opt: np.ndarray
    J_c: float
    result: FixedPointResult
    alpha: float
    rho_hat: float
    n_evaluations: int
    sigma_used: int
    all_untrusted: bool


class Coordinator:
    """Owns the per-period optimization state across a closed-loop run.

    Holds the warm starts (previous period's coupling stack and controller
    plans, both shifted one step), the trust-region radius and the last
    optimal set-point.  Every candidate evaluation within a period starts
    from the same warm baseline, so evaluations are independent and may
    run on worker threads without changing any result.
    """

    def __init__(self, topology, subsystems, config, r_init, r_lower, r_upper,
                 v0_cold=None):
        self.topology = topology
        self.subsystems = dict(subsystems)
        self.config = config
        self.routing = build_routing(topology)
        r_init = np.atleast_1d(np.asarray(r_init, dtype=float))
        self._state = TrustRegionState(center=r_init,
                                       radius=np.broadcast_to(
                                           np.asarray(config.radius0, dtype=float),
                                           r_init.shape).copy(),
                                       lower=r_lower, upper=r_upper)
        self._v0 = (np.zeros(self.routing.size) if v0_cold is None
                    else np.array(v0_cold, dtype=float))
        self._warms = {}
        self._executor = (ThreadPoolExecutor(max_workers=config.threads)
                          if config.threads > 1 else None)

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    def reset_radius(self):
        """Restore the initial trust-region radius.

        Call when the optimization landscape moves underneath the search,
        e.g. on a scheduled reference or bound change: the radius may have
        decayed to its floor at the old optimum, and waiting for growth to
        rebuild it would stall the first periods after the change.
        """
        self._state.radius = np.broadcast_to(
            np.asarray(self.config.radius0, dtype=float),
            self._state.center.shape).copy()

    def _round_map(self, v):
        r_map = split_setpoint(self._state.center, self.subsystems, self.topology)
        _, v_hat = _respond_round(v, r_map, self.subsystems, self.topology,
                                  self.routing, dict(self._warms), 0)
        return v_hat

    def plan(self):
        """Run one coordination period; returns the chosen plan."""
        cfg = self.config
        if cfg.filter_gain is not None:
            alpha, rho = cfg.filter_gain, float("nan")
        else:
            rho = estimate_map_gain(self._round_map, self._v0,
                                    iters=cfg.gain_iters)
            alpha = synthesize_filter(rho, kappa=cfg.kappa,
                                      alpha_min=cfg.alpha_min)
        cache = {}

        def evaluate(r):
            key = r.tobytes()
            res = cache.get(key)
            if res is None:
                res = fixed_point_solve(r, self.subsystems, self.topology, cfg,
                                        routing=self.routing,
                                        v0=self._v0.copy(),
                                        warms=dict(self._warms), gain=alpha)
                cache[key] = res
            return res.J_c, res.trusted

        outcome = optimize_setpoint(self._state, evaluate, cfg, self._executor)
        self._state = outcome.state
        result = cache.get(outcome.r_opt.tobytes())
        if result is None:
            result = fixed_point_solve(outcome.r_opt, self.subsystems,
                                       self.topology, cfg, routing=self.routing,
                                       v0=self._v0.copy(),
                                       warms=dict(self._warms), gain=alpha)
        edges = list(self.topology.edges)
        self._v0 = shift_profile(result.v_in_star, edges, self.topology.horizon)
        self._warms = {sid: self._shift_warm(w) for sid, w in result.warms.items()}
        return PeriodPlan(outcome.r_opt, result.J_c, result, alpha, rho,
                          outcome.n_evaluations, result.iterations,
                          outcome.all_untrusted)

    @staticmethod
    def _shift_warm(warm):
        if warm is None:
            return None
        w = np.asarray(warm, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2:
            return w
        return np.vstack([w[1:], w[-1:]])
