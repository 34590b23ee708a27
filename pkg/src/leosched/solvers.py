"""Offline solvers for the scheduling program.

The binary program is relaxed to a convex quadratic over box, per-slot
budget, and service-coupling constraints. On top of the relaxation sit a
best-first branch-and-bound, an ADMM heuristic with Jacobi block updates
and per-slot rounding, a greedy baseline, and a brute-force oracle for
cross-checks.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .instance import (GroupCatalog, Instance, RateTensor, Schedule,
                       delivered_bits, objective, served_flags, sinr)


class SolverError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def project_box_capped_sum(v: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                           cap: float) -> np.ndarray:
    """Project v onto {w : lb <= w <= ub, sum(w) <= cap} by bisection."""
    w = np.clip(v, lb, ub)
    if w.sum() <= cap + 1e-12:
        return w
    lo, hi = 0.0, float(np.max(v - lb)) + 1e-12
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, lb, ub).sum() > cap:
            lo = mid
        else:
            hi = mid
    return np.clip(v - hi, lb, ub)


def project_halfspace(u: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Project u onto {w : a.w <= b}."""
    viol = float(a @ u) - b
    if viol <= 0.0:
        return u
    return u - (viol / float(a @ a)) * a


def dykstra(u0: np.ndarray, projectors: list, max_sweeps: int = 60,
            tol: float = 1e-12) -> np.ndarray:
    """Dykstra's alternating projections onto an intersection of convex sets."""
    u = u0.copy()
    inc = [np.zeros_like(u0) for _ in projectors]
    for _ in range(max_sweeps):
        start = u.copy()
        for j, proj in enumerate(projectors):
            z = u + inc[j]
            u_new = proj(z)
            inc[j] = z - u_new
            u = u_new
        if np.max(np.abs(u - start)) < tol:
            break
    return u


def projected_gradient(fun, grad, project, x0: np.ndarray, tol: float,
                       max_iters: int, step0: float = 1.0):
    """Projected gradient descent with backtracking line search.

    Terminates when the gradient-mapping norm ||x - proj(x - t*grad)|| / t
    drops below ``tol``. Returns (x, value, converged, iterations).
    """
    x = project(x0.copy())
    fx = fun(x)
    t = step0
    best_x, best_f = x.copy(), fx
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = grad(x)
        while True:
            x_new = project(x - t * g)
            d = x_new - x
            f_new = fun(x_new)
            # Proximal sufficient-decrease condition for the step t.
            if f_new <= fx + float(g @ d) + float(d @ d) / (2.0 * t) + 1e-18:
                break
            t *= 0.5
            if t < 1e-18:
                x_new, f_new = x, fx
                break
        gm = float(np.linalg.norm(x_new - x)) / max(t, 1e-18)
        x, fx = x_new, f_new
        if fx < best_f:
            best_f, best_x = fx, x.copy()
        if gm < tol:
            converged = True
            break
        t = min(t * 1.5, 1e12)
    return best_x, best_f, converged, it


# ---------------------------------------------------------------------------
# Relaxation context
# ---------------------------------------------------------------------------

@dataclass
class RelaxedSolution:
    x_hat: np.ndarray      # T x G in [0, 1]
    y_hat: np.ndarray      # K in [0, 1]
    value: float
    converged: bool
    iterations: int


@dataclass
class ProblemContext:
    """Precomputed quantities shared by the relaxation-based solvers."""

    inst: Instance
    tensor: RateTensor
    rmat: np.ndarray       # K x (T*G), slot-major flattening of R
    x_ub: np.ndarray       # T x G upper bounds from the SINR-floor linearization

    @property
    def n_users(self) -> int:
        return self.inst.n_users

    @property
    def dims(self):
        t = self.inst.slot_count
        g = self.tensor.values.shape[1]
        return t, g


def sinr_floor_bounds(inst: Instance, catalog: GroupCatalog,
                      states: list) -> np.ndarray:
    """Per-(slot, group) upper bound on the relaxed schedule variable.

    The floor constraint is linear in one variable once channels are
    fixed, so it folds into a box bound (V - floor + sinr) / V with the
    big-M constant V; V defaults to 1.1 * max(floor + sinr).
    """
    t_cnt, g_cnt = inst.slot_count, catalog.size
    gam = np.zeros((inst.n_users, g_cnt, t_cnt))
    for t in range(t_cnt):
        for g, group in enumerate(catalog.groups):
            if group.is_idle:
                continue
            gam[:, g, t] = sinr(inst, group, states[t])
    v = inst.big_m
    if v is None:
        v = 1.1 * float(np.max(inst.sinr_floors[:, None, None] + gam))
        v = max(v, 1.0)
    ub = np.ones((t_cnt, g_cnt))
    for g, group in enumerate(catalog.groups):
        for n, k in group.links:
            bound = (v - inst.sinr_floors[k] + gam[k, g, :]) / v
            ub[:, g] = np.minimum(ub[:, g], bound)
    return np.clip(ub, 0.0, 1.0)


def make_context(inst: Instance, tensor: RateTensor,
                 x_ub: np.ndarray | None = None) -> ProblemContext:
    k_cnt, g_cnt, t_cnt = tensor.values.shape
    if k_cnt != inst.n_users or t_cnt != inst.slot_count:
        raise SolverError("rate tensor shape mismatch")
    # Slot-major layout: flat index t*G + g.
    rmat = np.transpose(tensor.values, (0, 2, 1)).reshape(k_cnt, t_cnt * g_cnt)
    if x_ub is None:
        x_ub = np.ones((t_cnt, g_cnt))
    return ProblemContext(inst=inst, tensor=tensor, rmat=rmat,
                          x_ub=np.asarray(x_ub, dtype=float))


def _relaxed_objective(ctx: ProblemContext):
    inst = ctx.inst
    k = ctx.n_users
    t_cnt, g_cnt = ctx.dims
    nx = t_cnt * g_cnt
    eta0 = inst.weights[0]
    etas = inst.weights[1:]
    rmat = ctx.rmat
    demands = inst.demands

    def fun(u):
        xs, ys = u[:nx], u[nx:]
        gap_y = ys.sum() - k
        gap_d = rmat @ xs - demands
        return float(eta0 * gap_y ** 2 + np.sum(etas * gap_d ** 2))

    def grad(u):
        xs, ys = u[:nx], u[nx:]
        gap_y = ys.sum() - k
        gap_d = rmat @ xs - demands
        gx = 2.0 * (etas * gap_d) @ rmat
        gy = np.full(k, 2.0 * eta0 * gap_y)
        return np.concatenate([gx, gy])

    return fun, grad, nx


def _feasible_projector(ctx: ProblemContext, lb: np.ndarray | None = None,
                        ub: np.ndarray | None = None):
    """Joint projector onto the relaxed feasible set.

    Per-slot capped simplices and the served-flag box are independent and
    projected exactly; the K service-coupling halfspaces are folded in
    with Dykstra sweeps.
    """
    inst = ctx.inst
    t_cnt, g_cnt = ctx.dims
    nx = t_cnt * g_cnt
    k = ctx.n_users
    lb = np.zeros((t_cnt, g_cnt)) if lb is None else lb
    ub = ctx.x_ub if ub is None else ub

    def proj_simple(u):
        out = u.copy()
        xs = out[:nx].reshape(t_cnt, g_cnt)
        for t in range(t_cnt):
            xs[t] = project_box_capped_sum(xs[t], lb[t], ub[t], 1.0)
        out[:nx] = xs.ravel()
        out[nx:] = np.clip(out[nx:], 0.0, 1.0)
        return out

    halfspaces = []
    for j in range(k):
        a = np.zeros(nx + k)
        a[:nx] = -ctx.rmat[j]
        a[nx + j] = inst.thresholds[j]
        halfspaces.append((a, 0.0))

    def project(u):
        projectors = [proj_simple]
        projectors += [lambda w, a=a, b=b: project_halfspace(w, a, b)
                       for a, b in halfspaces]
        return dykstra(u, projectors)

    return project


def solve_relaxation(inst: Instance, tensor: RateTensor, tol: float = 1e-6,
                     max_iters: int = 2000,
                     x_ub: np.ndarray | None = None,
                     lb: np.ndarray | None = None,
                     ctx: ProblemContext | None = None) -> RelaxedSolution:
    """Solve the convex relaxation by projected gradient descent.

    The relaxed variables live in [0, 1]; feasibility combines per-slot
    budgets, SINR-floor box bounds, and the service-threshold coupling.
    At convergence the value lower-bounds every integer schedule's
    objective (within ``tol``).
    """
    if tol <= 0:
        raise SolverError("tol must be positive")
    if ctx is None:
        ctx = make_context(inst, tensor, x_ub)
    fun, grad, nx = _relaxed_objective(ctx)
    project = _feasible_projector(ctx, lb=lb)
    t_cnt, g_cnt = ctx.dims
    u0 = np.zeros(nx + ctx.n_users)
    u, val, converged, iters = projected_gradient(fun, grad, project, u0,
                                                  tol=tol, max_iters=max_iters)
    return RelaxedSolution(x_hat=u[:nx].reshape(t_cnt, g_cnt),
                           y_hat=u[nx:], value=val, converged=converged,
                           iterations=iters)


# ---------------------------------------------------------------------------
# Quadratic-form witness
# ---------------------------------------------------------------------------

@dataclass
class WitnessReport:
    checked: int
    max_rel_err_ones: float
    max_rel_err_rank1: float
    violations: list
    passed: bool


def psd_witness(inst: Instance, tensor: RateTensor, n_vectors: int = 1000,
                rel_tol: float = 1e-9, seed: int = 0) -> WitnessReport:
    """Check the quadratic expansion of both objective terms on random vectors.

    The served-count term's matrix is all-ones, so v'Ev must equal
    (sum v)^2; each user's data term is a rank-one outer product, so
    v'Rv must equal (r.v)^2. Any relative error above ``rel_tol`` is
    reported with the offending vector.
    """
    rng = np.random.default_rng(seed)
    k = inst.n_users
    nx = tensor.values.shape[1] * tensor.values.shape[2]
    rmat = np.transpose(tensor.values, (0, 2, 1)).reshape(k, nx)
    ones_mat = np.ones((k, k))
    rank1 = [np.outer(rmat[j], rmat[j]) for j in range(k)]
    max_e = 0.0
    max_r = 0.0
    violations = []
    for i in range(n_vectors):
        vy = rng.standard_normal(k)
        lhs = float(vy @ ones_mat @ vy)
        rhs = float(vy.sum()) ** 2
        err = abs(lhs - rhs) / max(abs(rhs), 1.0)
        max_e = max(max_e, err)
        if err > rel_tol:
            violations.append({"term": "ones", "index": i, "error": err,
                               "vector": vy.tolist()})
        vx = rng.standard_normal(nx)
        for j in range(k):
            lhs = float(vx @ rank1[j] @ vx)
            rhs = float(rmat[j] @ vx) ** 2
            err = abs(lhs - rhs) / max(abs(rhs), 1.0)
            max_r = max(max_r, err)
            if err > rel_tol:
                violations.append({"term": "rank1", "user": j, "index": i,
                                   "error": err, "vector": vx.tolist()})
    return WitnessReport(checked=n_vectors, max_rel_err_ones=max_e,
                         max_rel_err_rank1=max_r, violations=violations,
                         passed=not violations)


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

@dataclass
class SolverResult:
    schedule: Schedule
    value: float
    bound: float | None = None
    gap: float | None = None
    optimal: bool = False
    iterations: int = 0
    nodes: int = 0
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.x.tolist(),
            "served": self.schedule.y.tolist(),
            "value": self.value,
            "bound": self.bound,
            "gap": self.gap,
            "optimal": self.optimal,
            "iterations": self.iterations,
            "nodes": self.nodes,
        }


def _evaluate(inst: Instance, tensor: RateTensor, x: np.ndarray) -> SolverResult:
    y = served_flags(inst, x, tensor)
    return SolverResult(schedule=Schedule(x=x, y=y),
                        value=objective(inst, x, tensor))


def _round_to_schedule(x_hat: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Per-slot argmax of the fractional schedule over feasible groups."""
    t_cnt, g_cnt = x_hat.shape
    out = np.zeros(t_cnt, dtype=int)
    for t in range(t_cnt):
        masked = np.where(feasible[t], x_hat[t], -np.inf)
        out[t] = int(np.argmax(masked))
    return out


def branch_and_bound(inst: Instance, tensor: RateTensor,
                     node_limit: int = 20_000, gap_tol: float = 1e-9,
                     x_ub: np.ndarray | None = None,
                     pg_iters: int = 1500, pg_tol: float | None = None) -> SolverResult:
    """Best-first branch and bound on the convex relaxation.

    Branches on the most fractional schedule variable, fixing it to 1
    (which claims the slot) or 0. Nodes are pruned against the incumbent
    with a small relative slack covering the inexactness of the inner
    projected-gradient solve; unconverged relaxations never prune.
    """
    ctx = make_context(inst, tensor, x_ub)
    t_cnt, g_cnt = ctx.dims
    feas = ctx.x_ub >= 1.0 - 1e-12

    scale = float(inst.weights[0] * inst.n_users ** 2
                  + np.sum(inst.weights[1:] * inst.demands ** 2)) + 1.0
    if pg_tol is None:
        pg_tol = 1e-8 * scale

    incumbent = _evaluate(inst, tensor, np.zeros(t_cnt, dtype=int))
    nodes_done = 0
    counter = itertools.count()
    root_lb = np.zeros((t_cnt, g_cnt))
    # Node: (bound, tiebreak, lb matrix, ub matrix); bounds inherit from parents.
    heap = [(-np.inf, next(counter), root_lb, ctx.x_ub.copy())]

    proven = False
    while heap and nodes_done < node_limit:
        slack = 1e-6 * (1.0 + abs(incumbent.value))
        bound = heap[0][0]
        if bound > -np.inf and bound >= incumbent.value - slack:
            proven = True
            break
        _, _, lb, ub = heapq.heappop(heap)
        nodes_done += 1
        if np.any(lb > ub + 1e-12):
            continue
        rel = solve_relaxation(inst, tensor, tol=pg_tol, max_iters=pg_iters,
                               lb=lb, ctx=_ctx_with_ub(ctx, ub))
        if rel.converged:
            node_bound = rel.value - 1e-6 * (1.0 + abs(rel.value))
            if node_bound >= incumbent.value - 1e-12:
                continue
        else:
            node_bound = -np.inf
        # Rounded candidate keeps the incumbent fresh.
        cand_x = _apply_fixes(_round_to_schedule(rel.x_hat, feas), lb)
        cand = _evaluate(inst, tensor, cand_x)
        if cand.value < incumbent.value:
            incumbent = cand
        open_mask = (ub - lb) > 1e-9
        frac = np.abs(rel.x_hat - np.round(rel.x_hat))
        if not open_mask.any() or float(frac[open_mask].max(initial=0.0)) < 1e-6:
            # Integral (or fully fixed) relaxation: the candidate above
            # already realizes it, so the node closes here.
            continue
        # Branch on the most fractional open coordinate (lexicographic ties).
        dist = np.where(open_mask, np.abs(rel.x_hat - 0.5), np.inf)
        t_b, g_b = np.unravel_index(int(np.argmin(dist)), dist.shape)
        if ub[t_b, g_b] >= 1.0 - 1e-12:
            lb1, ub1 = lb.copy(), ub.copy()
            lb1[t_b, g_b] = 1.0
            ub1[t_b, :] = 0.0
            ub1[t_b, g_b] = 1.0
            heapq.heappush(heap, (node_bound, next(counter), lb1, ub1))
        lb0, ub0 = lb.copy(), ub.copy()
        ub0[t_b, g_b] = 0.0
        heapq.heappush(heap, (node_bound, next(counter), lb0, ub0))

    if heap:
        lower = min(b for b, *_ in heap)
        if proven and lower == -np.inf:
            lower = incumbent.value
    else:
        lower = incumbent.value
    gap = max(0.0, incumbent.value - lower) if np.isfinite(lower) else np.inf
    slack = 1e-6 * (1.0 + abs(incumbent.value))
    incumbent.bound = float(lower) if np.isfinite(lower) else None
    incumbent.gap = float(gap) if np.isfinite(gap) else None
    incumbent.nodes = nodes_done
    hit_limit = nodes_done >= node_limit and bool(heap) and not proven
    incumbent.optimal = (not hit_limit) and (
        not heap or proven or gap <= max(gap_tol * (1.0 + abs(incumbent.value)), slack))
    return incumbent


def _ctx_with_ub(ctx: ProblemContext, ub: np.ndarray) -> ProblemContext:
    return ProblemContext(inst=ctx.inst, tensor=ctx.tensor, rmat=ctx.rmat,
                          x_ub=ub)


def _apply_fixes(x: np.ndarray, lb: np.ndarray) -> np.ndarray:
    out = x.copy()
    t_fix, g_fix = np.nonzero(lb >= 1.0 - 1e-12)
    out[t_fix] = g_fix
    return out


# ---------------------------------------------------------------------------
# ADMM heuristic
# ---------------------------------------------------------------------------

@dataclass
class AdmmState:
    x_blocks: np.ndarray   # T x G
    y_hat: np.ndarray      # K
    z: np.ndarray          # K auxiliary slacks (<= 0 after projection)
    lam: np.ndarray        # K multipliers
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise SolverError("rho must be positive")


def multiplier_update(lam: np.ndarray, rho: float, z: np.ndarray,
                      coupled_y: np.ndarray, coupled_x: np.ndarray) -> np.ndarray:
    """Dual ascent step on the service-coupling residual."""
    return lam + rho * (z - coupled_y + coupled_x)


def admm_heu(inst: Instance, tensor: RateTensor, rho: float = 1.0,
             i_iter: int = 200, x_ub: np.ndarray | None = None,
             block_iters: int = 80) -> SolverResult:
    """ADMM on the relaxation with Jacobi block updates, then rounding.

    All T schedule blocks, the served-flag block, and the slack block are
    minimized against the same iteration snapshot (so they could run in
    parallel), followed by the multiplier step on the snapshot residual.
    Rounding promotes each slot's largest fractional entry; the served
    flags are recomputed from the rounded schedule.
    """
    if rho <= 0:
        raise SolverError("rho must be positive")
    if i_iter < 1:
        raise SolverError("i_iter must be >= 1")
    ctx = make_context(inst, tensor, x_ub)
    t_cnt, g_cnt = ctx.dims
    k = ctx.n_users
    inst_w0 = inst.weights[0]
    etas = inst.weights[1:]
    dprime = inst.thresholds
    # Per-slot rate pages: rates[t] is K x G.
    rates = np.transpose(tensor.values, (2, 0, 1))

    xs = np.zeros((t_cnt, g_cnt))
    ys = np.zeros(k)
    z = np.zeros(k)
    lam = np.zeros(k)
    residuals = []

    for _ in range(i_iter):
        xs_s, ys_s, z_s, lam_s = xs.copy(), ys.copy(), z.copy(), lam.copy()
        deliver_s = np.einsum("tkg,tg->k", rates, xs_s)

        xs_new = np.empty_like(xs)
        for t in range(t_cnt):
            other = deliver_s - rates[t] @ xs_s[t]
            rt = rates[t]

            def fun(u, other=other, rt=rt):
                dlv = rt @ u + other
                pen = z_s - dprime * ys_s + dlv
                return float(np.sum(etas * (dlv - inst.demands) ** 2)
                             + lam_s @ pen + 0.5 * rho * pen @ pen)

            def grad(u, other=other, rt=rt):
                dlv = rt @ u + other
                pen = z_s - dprime * ys_s + dlv
                return (2.0 * (etas * (dlv - inst.demands)) @ rt
                        + lam_s @ rt + rho * pen @ rt)

            proj = lambda u, t=t: project_box_capped_sum(
                u, np.zeros(g_cnt), ctx.x_ub[t], 1.0)
            u, _, _, _ = projected_gradient(fun, grad, proj, xs_s[t].copy(),
                                            tol=1e-9 * (1.0 + abs(fun(xs_s[t]))),
                                            max_iters=block_iters)
            xs_new[t] = u

        def fun_y(v):
            pen = z_s - dprime * v + deliver_s
            return float(inst_w0 * (v.sum() - k) ** 2 - lam_s @ (dprime * v)
                         + 0.5 * rho * pen @ pen)

        def grad_y(v):
            pen = z_s - dprime * v + deliver_s
            return (np.full(k, 2.0 * inst_w0 * (v.sum() - k))
                    - lam_s * dprime - rho * pen * dprime)

        ys_new, _, _, _ = projected_gradient(
            fun_y, grad_y, lambda v: np.clip(v, 0.0, 1.0), ys_s.copy(),
            tol=1e-9 * (1.0 + abs(fun_y(ys_s))), max_iters=block_iters)

        # Slack block has a closed-form projected minimizer.
        c = dprime * ys_s - deliver_s
        z_new = np.minimum(0.0, c - lam_s / rho)

        lam = multiplier_update(lam_s, rho, z_s, dprime * ys_s, deliver_s)
        xs, ys, z = xs_new, ys_new, z_new
        deliver = np.einsum("tkg,tg->k", rates, xs)
        residuals.append(float(np.linalg.norm(z - dprime * ys + deliver)))

    x_int = np.zeros(t_cnt, dtype=int)
    for t in range(t_cnt):
        x_int[t] = int(np.argmax(xs[t]))
    res = _evaluate(inst, tensor, x_int)
    res.iterations = i_iter
    res.residuals = residuals
    return res


# ---------------------------------------------------------------------------
# Greedy and exhaustive baselines
# ---------------------------------------------------------------------------

def greedy(inst: Instance, tensor: RateTensor,
           x_ub: np.ndarray | None = None) -> SolverResult:
    """Slot-by-slot pick of the group that minimizes the partial objective."""
    t_cnt = inst.slot_count
    g_cnt = tensor.values.shape[1]
    feas = np.ones((t_cnt, g_cnt), dtype=bool) if x_ub is None \
        else np.asarray(x_ub) >= 1.0 - 1e-12
    x = np.zeros(t_cnt, dtype=int)
    for t in range(t_cnt):
        best_g, best_val = 0, np.inf
        for g in range(g_cnt):
            if not feas[t, g]:
                continue
            x[t] = g
            val = objective(inst, x, tensor)
            if val < best_val - 1e-15:
                best_val, best_g = val, g
        x[t] = best_g
    return _evaluate(inst, tensor, x)


def exhaustive_oracle(inst: Instance, tensor: RateTensor,
                      x_ub: np.ndarray | None = None,
                      limit: int = 1_000_000) -> SolverResult:
    """Enumerate every schedule; ties resolve to the lexicographically first."""
    t_cnt = inst.slot_count
    g_cnt = tensor.values.shape[1]
    total = g_cnt ** t_cnt
    if total > limit:
        raise SolverError(
            f"schedule space {total} exceeds the oracle limit {limit}")
    feas = np.ones((t_cnt, g_cnt), dtype=bool) if x_ub is None \
        else np.asarray(x_ub) >= 1.0 - 1e-12
    best_x, best_val = None, np.inf
    for combo in itertools.product(range(g_cnt), repeat=t_cnt):
        x = np.array(combo, dtype=int)
        if not all(feas[t, combo[t]] for t in range(t_cnt)):
            continue
        val = objective(inst, x, tensor)
        if val < best_val:
            best_val, best_x = val, x
    if best_x is None:
        best_x = np.zeros(t_cnt, dtype=int)
    res = _evaluate(inst, tensor, best_x)
    res.optimal = True
    res.bound = res.value
    res.gap = 0.0
    return res
