"""Reduced-space solver for the discrete sweeping problem.

The sweeping map is single-valued given the controls, so the state path is
eliminated: every evaluation re-runs the catching-up recursion from x0 and
the true decision variables are the controls.  Gradients are propagated
backward through the projection steps with their active faces frozen, which
is exact wherever the face pattern is stable.  Constraint families that
survive the elimination (trust region, rate budgets, terminal boundary
condition) are handled by an augmented-Lagrangian outer loop around an
L-BFGS-B inner solve; the set-control sphere is handled by a polar
reparameterization in the plane and by penalty in higher dimension.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .dynamics import DiscreteTrajectory, Mesh
from .errors import InfeasibleStart, NumericalFailure
from .nnls import nnls
from .transcription import (DiscreteProblem, Packing, constraint_residuals,
                            cost_and_node_grads, discretize, feasible_seed)


@dataclass(frozen=True)
class SolveOptions:
    multistart: int = 8
    seed: int = 0
    max_iter: int = 400
    tol_stat: float = 1e-7
    init_scale: float = 2.0
    al_outer: int = 12
    al_rho: float = 10.0
    al_rho_growth: float = 10.0
    feas_tol: float = 1e-8
    polish_rounds: int = 3


@dataclass
class DiscreteSolution:
    z: np.ndarray
    cost: float
    kkt_multipliers: dict
    status: str
    stationarity: float
    trajectory: DiscreteTrajectory
    start_index: int = 0
    merit_history: list = field(default_factory=list)
    n_evals: int = 0


def _rollout(pb, u, a, k, h):
    """Catching-up recursion recording the active face of each projection."""
    C = pb.C
    x = np.empty((k + 1, pb.n))
    x[0] = pb.x0
    supports = []
    gens = C.generators
    for j in range(k):
        drift = x[j] - h * pb.f(x[j], a[j])
        w = drift - u[j + 1]
        if C.m == 0 or (gens @ w <= 0.0).all():
            x[j + 1] = drift
            supports.append(())
        else:
            lam, _ = nnls(gens.T, w)
            x[j + 1] = w - gens.T @ lam + u[j + 1]
            supports.append(tuple(int(i) for i in np.flatnonzero(lam > 0.0)))
    return x, supports


def _tangent_apply(gens, support, v):
    """Project v onto the tangent space of the face spanned by `support`."""
    if not support:
        return v
    G = gens[list(support)]
    coef = np.linalg.lstsq(G @ G.T, G @ v, rcond=None)[0]
    return v - G.T @ coef


def _al_terms(dp, x, u, a, al):
    """Augmented-Lagrangian and penalty contributions with node gradients."""
    pb = dp.problem
    k, h = dp.k, dp.mesh.h
    val = 0.0
    gx = np.zeros_like(x)
    gu = np.zeros_like(u)
    ga = np.zeros_like(a)
    rho = al["rho"]

    if dp.boundary_terminal and pb.C.m:
        gaps = pb.C.gaps(x[k] - u[k])
        i = int(np.argmax(gaps))
        c = float(gaps[i])
        mu = al["mu_boundary"]
        val += mu * c + 0.5 * rho * c * c
        row = (mu + rho * c) * pb.C.generators[i]
        gx[k] += row
        gu[k] -= row

    if dp.reference is not None:
        ref = dp.reference
        stack = np.hstack([x - ref.x, u - ref.u, a - ref.a])[:-1]
        norms = np.linalg.norm(stack, axis=1)
        viol = np.maximum(0.0, norms - dp.epsilon / 2.0)
        if viol.any():
            val += 0.5 * rho * float((viol ** 2).sum())
            safe = norms > 1e-300
            coef = np.zeros_like(norms)
            coef[safe] = rho * viol[safe] / norms[safe]
            full = coef[:, None] * stack
            n, d = pb.n, pb.d
            gx[:-1] += full[:, :n]
            gu[:-1] += full[:, n:2 * n]
            ga[:-1] += full[:, 2 * n:]
        w12 = 0.0
        for arr, refarr in ((x, ref.x), (u, ref.u), (a, ref.a)):
            dd = np.diff(arr, axis=0) - np.diff(refarr, axis=0)
            w12 += float((dd ** 2).sum()) / h
        v = max(0.0, w12 - dp.epsilon / 2.0)
        if v > 0.0:
            val += 0.5 * rho * v * v
            for arr, refarr, g in ((x, ref.x, gx), (u, ref.u, gu), (a, ref.a, ga)):
                dd = np.diff(arr, axis=0) - np.diff(refarr, axis=0)
                g[1:] += rho * v * 2.0 * dd / h
                g[:-1] -= rho * v * 2.0 * dd / h

    s1_vec = (u[1] - u[0]) / h
    s1 = float(np.linalg.norm(s1_vec))
    v = max(0.0, s1 - (dp.mu_tilde + 1.0))
    if v > 0.0:
        val += 0.5 * rho * v * v
        g1 = rho * v * s1_vec / (s1 * h)
        gu[1] += g1
        gu[0] -= g1
    if k >= 2:
        sec = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h
        norms = np.linalg.norm(sec, axis=1)
        v = max(0.0, float(norms.sum()) - (dp.mu_tilde + 1.0))
        if v > 0.0:
            val += 0.5 * rho * v * v
            safe = norms > 1e-300
            dirs = np.zeros_like(sec)
            dirs[safe] = sec[safe] / norms[safe, None]
            gu[2:] += rho * v * dirs / h
            gu[1:-1] -= 2.0 * rho * v * dirs / h
            gu[:-2] += rho * v * dirs / h

    if al.get("sphere_rho", 0.0) > 0.0:
        j_lo, j_hi = dp.windows()
        for j in range(j_lo, j_hi + 1):
            nj = float(np.linalg.norm(u[j]))
            if nj > 1e-300:
                c = nj - pb.r
                val += 0.5 * al["sphere_rho"] * c * c
                gu[j] += al["sphere_rho"] * c * u[j] / nj
    return val, gx, gu, ga


class _UParam:
    """Set-control parameterization.

    modes: 'fixed' (no variables), 'polar' (n = 2: one angle per node, plus a
    bounded radius on the relaxed band outside the norm-equality window),
    'raw' (n >= 3: free node values, sphere enforced by penalty).  For n = 1
    the sphere is the two-point set {-r, +r}; the feasible seed sign is kept,
    since a sign flip violates the second-difference budget on any fine mesh.
    """

    def __init__(self, dp, u_seed):
        self.dp = dp
        pb = dp.problem
        self.k = dp.k
        self.u_seed = np.asarray(u_seed, dtype=float)
        if dp.u_fixed is not None or pb.n == 1:
            self.mode = "fixed"
            self.size = 0
            self.bounds = []
            return
        self.pin0 = dp.reference is not None
        if pb.n == 2:
            self.mode = "polar"
            j_lo, j_hi = dp.windows()
            self.band_nodes = [j for j in range(self.k + 1) if not (j_lo <= j <= j_hi)]
            self.angle_nodes = [j for j in range(self.k + 1) if not (self.pin0 and j == 0)]
            self.size = len(self.angle_nodes) + len(self.band_nodes)
            lo = pb.r - pb.tau - dp.eps_k
            hi = pb.r + pb.tau + dp.eps_k
            self.bounds = [(None, None)] * len(self.angle_nodes) + [(lo, hi)] * len(self.band_nodes)
        else:
            self.mode = "raw"
            self.nodes = [j for j in range(self.k + 1) if not (self.pin0 and j == 0)]
            self.size = len(self.nodes) * pb.n
            self.bounds = [(None, None)] * self.size

    def init(self):
        if self.mode == "fixed":
            return np.zeros(0)
        if self.mode == "polar":
            ang = np.arctan2(self.u_seed[:, 1], self.u_seed[:, 0])
            rad = np.linalg.norm(self.u_seed[self.band_nodes], axis=1) if self.band_nodes else np.zeros(0)
            return np.concatenate([ang[self.angle_nodes], rad])
        return self.u_seed[self.nodes].ravel()

    def to_nodes(self, theta):
        u = self.u_seed.copy()
        if self.mode == "fixed":
            return u
        if self.mode == "polar":
            na = len(self.angle_nodes)
            ang = np.arctan2(self.u_seed[:, 1], self.u_seed[:, 0])
            ang[self.angle_nodes] = theta[:na]
            rad = np.full(self.k + 1, self.dp.problem.r)
            for pos, j in enumerate(self.band_nodes):
                rad[j] = theta[na + pos]
            u = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
            if self.pin0:
                u[0] = self.u_seed[0]
            return u
        u[self.nodes] = theta.reshape(len(self.nodes), -1)
        return u

    def chain_grad(self, theta, gu_nodes):
        if self.mode == "fixed":
            return np.zeros(0)
        if self.mode == "polar":
            na = len(self.angle_nodes)
            ang = np.arctan2(self.u_seed[:, 1], self.u_seed[:, 0])
            ang[self.angle_nodes] = theta[:na]
            rad = np.full(self.k + 1, self.dp.problem.r)
            for pos, j in enumerate(self.band_nodes):
                rad[j] = theta[na + pos]
            g = np.zeros(self.size)
            for pos, j in enumerate(self.angle_nodes):
                du_dang = rad[j] * np.array([-np.sin(ang[j]), np.cos(ang[j])])
                g[pos] = float(gu_nodes[j] @ du_dang)
            for pos, j in enumerate(self.band_nodes):
                du_drad = np.array([np.cos(ang[j]), np.sin(ang[j])])
                g[na + pos] = float(gu_nodes[j] @ du_drad)
            return g
        return gu_nodes[self.nodes].ravel()


def _reduced_objective(dp, uparam, a_rows, al, counter):
    pb = dp.problem
    k, h = dp.k, dp.mesh.h
    na_rows = len(a_rows)

    def fun(theta):
        counter[0] += 1
        nu = uparam.size
        u = uparam.to_nodes(theta[:nu])
        a = np.zeros((k + 1, pb.d))
        if dp.reference is not None:
            a[0] = dp.reference.a[0]
        a[a_rows] = theta[nu:].reshape(na_rows, pb.d)

        infeas = pb.x0 - u[0]
        pen_val = 0.0
        pen_gu0 = np.zeros(pb.n)
        if pb.C.m and not pb.C.contains(infeas):
            from .geometry import project as _proj
            pw = _proj(infeas, pb.C)
            dvec = infeas - pw
            pen_val = 1e8 * float(dvec @ dvec)
            pen_gu0 = -2e8 * dvec

        x, supports = _rollout(pb, u, a, k, h)
        val, gx, gu, ga = cost_and_node_grads(dp, x, u, a)
        aval, agx, agu, aga = _al_terms(dp, x, u, a, al)
        val += aval + pen_val
        gx += agx
        gu += agu
        ga += aga
        gu[0] += pen_gu0

        # adjoint sweep through the frozen projection faces
        gens = pb.C.generators
        psi = gx[k]
        for j in range(k - 1, -1, -1):
            w = _tangent_apply(gens, supports[j], psi)
            ga[j] += -h * (pb.f.grad_a(x[j], a[j]).T @ w)
            gu[j + 1] += psi - w
            psi = gx[j] + (np.eye(pb.n) - h * pb.f.grad_x(x[j], a[j])).T @ w

        g_theta = np.concatenate([uparam.chain_grad(theta[:uparam.size], gu),
                                  ga[a_rows].ravel()])
        return val, g_theta

    return fun


def solve_discrete(dp, opts=None, warm=None):
    """Best-of-multistart solve of the discrete problem to local stationarity."""
    opts = opts or SolveOptions()
    pb = dp.problem
    k = dp.k
    packing = Packing(dp)
    z_seed = feasible_seed(dp)
    x_seed, u_seed, a_seed = packing.unpack(z_seed)

    a_rows = [j for j in range(k + 1) if not (dp.reference is not None and j == 0)]
    uparam = _UParam(dp, u_seed)

    rng = np.random.default_rng(opts.seed)
    starts = []
    if warm is not None:
        xw, uw, aw = packing.unpack(warm)
        uparam_w = _UParam(dp, uw)
        starts.append(np.concatenate([uparam_w.init(), aw[a_rows].ravel()]))
        uparam = uparam_w
    starts.append(np.concatenate([uparam.init(), a_seed[a_rows].ravel()]))
    while len(starts) < max(1, opts.multistart):
        const = rng.uniform(-opts.init_scale, 0.0, size=pb.d)
        a0 = np.tile(const, (len(a_rows), 1))
        starts.append(np.concatenate([uparam.init(), a0.ravel()]))

    best = None
    for s_idx, theta0 in enumerate(starts):
        al = {"mu_boundary": 0.0, "rho": opts.al_rho, "sphere_rho": 0.0}
        if uparam.mode == "raw":
            al["sphere_rho"] = opts.al_rho
        counter = [0]
        theta = theta0.copy()
        merit_hist = []
        status = "converged"
        for outer in range(opts.al_outer):
            fun = _reduced_objective(dp, uparam, a_rows, al, counter)
            m0 = fun(theta)[0]
            res = minimize(fun, theta, jac=True, method="L-BFGS-B",
                           bounds=uparam.bounds + [(None, None)] * (len(theta) - uparam.size)
                           if uparam.bounds else None,
                           options={"maxiter": opts.max_iter, "ftol": 1e-15,
                                    "gtol": opts.tol_stat / 10.0})
            theta = res.x
            merit_hist.append((m0, float(res.fun)))
            u = uparam.to_nodes(theta[:uparam.size])
            a = np.zeros((k + 1, pb.d))
            if dp.reference is not None:
                a[0] = dp.reference.a[0]
            a[a_rows] = theta[uparam.size:].reshape(len(a_rows), pb.d)
            x, _ = _rollout(pb, u, a, k, dp.mesh.h)
            rep = constraint_residuals(dp, packing.pack(x, u, a), packing)
            feas = rep.max_violation()
            if dp.boundary_terminal and pb.C.m:
                c = float(pb.C.gaps(x[k] - u[k]).max())
                al["mu_boundary"] += al["rho"] * c
            if feas <= opts.feas_tol:
                break
            al["rho"] *= opts.al_rho_growth
            if al.get("sphere_rho", 0.0) > 0.0:
                al["sphere_rho"] *= opts.al_rho_growth
        else:
            status = "max_iter"

        fun = _reduced_objective(dp, uparam, a_rows, al, counter)
        fval, gval = fun(theta)
        stat = float(np.abs(gval).max(initial=0.0))
        # restart rounds with fresh quasi-Newton memory sharpen stationarity
        bounds = (uparam.bounds + [(None, None)] * (len(theta) - uparam.size)
                  if uparam.bounds else None)
        for _ in range(opts.polish_rounds):
            if stat <= opts.tol_stat * max(1.0, abs(fval)):
                break
            res = minimize(fun, theta, jac=True, method="L-BFGS-B",
                           bounds=bounds,
                           options={"maxiter": opts.max_iter, "ftol": 1e-16,
                                    "gtol": opts.tol_stat / 100.0})
            if res.fun <= fval:
                theta = res.x
                fval, gval = fun(theta)
                stat = float(np.abs(gval).max(initial=0.0))
        u = uparam.to_nodes(theta[:uparam.size])
        a = np.zeros((k + 1, pb.d))
        if dp.reference is not None:
            a[0] = dp.reference.a[0]
        a[a_rows] = theta[uparam.size:].reshape(len(a_rows), pb.d)
        x, _ = _rollout(pb, u, a, k, dp.mesh.h)
        if not pb.run_cost.has_abs and not dp.proximity_on and k >= 1:
            # the last control node never enters the cost then; tie it to the
            # final interval's value so outputs carry a meaningful endpoint
            a[k] = a[k - 1]
        cost_plain, _, _, _ = cost_and_node_grads(dp, x, u, a)
        if stat > opts.tol_stat * max(1.0, abs(fval)) and status == "converged":
            status = "max_iter"
        traj = DiscreteTrajectory(dp.mesh, x, u, a)
        cand = DiscreteSolution(
            z=packing.pack(x, u, a), cost=float(cost_plain),
            kkt_multipliers={"boundary": al["mu_boundary"], "rho": al["rho"]},
            status=status, stationarity=stat, trajectory=traj,
            start_index=s_idx, merit_history=merit_hist, n_evals=counter[0])
        if best is None or (cand.cost < best.cost - 1e-14):
            best = cand
    return best


def refine_grid(dp, solution, k_new):
    """Interpolate a coarse solution onto a finer mesh as a warm start."""
    k = dp.k
    if k_new <= k or k_new % k != 0:
        raise ValueError("k_new must be a proper multiple of k")
    factor = k_new // k
    t_old = dp.mesh.nodes
    t_new = Mesh(k_new, dp.problem.T).nodes

    def interp(arr):
        return np.column_stack([np.interp(t_new, t_old, arr[:, c])
                                for c in range(arr.shape[1])])

    ref_new = None
    if dp.reference is not None:
        ref_new = DiscreteTrajectory(Mesh(k_new, dp.problem.T),
                                     interp(dp.reference.x),
                                     interp(dp.reference.u),
                                     interp(dp.reference.a))
    u_fixed_new = interp(dp.u_fixed) if dp.u_fixed is not None else None
    dp_new = discretize(dp.problem, k_new, reference=ref_new,
                        epsilon=dp.epsilon, mu_tilde=dp.mu_tilde,
                        proximity_on=dp.proximity_on, u_fixed=u_fixed_new,
                        boundary_terminal=dp.boundary_terminal)
    traj = solution.trajectory
    warm = Packing(dp_new).pack(interp(traj.x), interp(traj.u), interp(traj.a))
    return dp_new, warm
