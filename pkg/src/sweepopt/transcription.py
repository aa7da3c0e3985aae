"""Assembly of the finite-dimensional discrete optimization problem: Bolza
cost with optional proximity and rate-budget penalty terms, plus a structured
report of every constraint family's violation.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynamics import (DiscreteTrajectory, Mesh, SweepingProblem, catching_up,
                       interval_active_sets)
from .errors import InfeasibleStart
from .geometry import project
from .nnls import nnls


def window_indices(k, T, tau):
    """(j_lo, j_hi): the norm-equality window; nodes outside it live in the
    relaxed band.  j_lo is the smallest index with t_j >= tau, j_hi the
    convention-matching upper index."""
    j_lo = int(np.ceil(k * tau / T - 1e-12))
    j_hi = int(np.floor(k * (T - tau) / T + 1e-12)) - 1
    return j_lo, j_hi


@dataclass(frozen=True)
class DiscreteProblem:
    """A sweeping problem on a mesh, with localization data for the solve.

    When `reference` is present the proximity terms and trust region pin the
    solve near it; without one they are dropped and the problem is solved
    from scratch.  `u_fixed` freezes the set-control path (node values), and
    `boundary_terminal` asks for the terminal state to end on the boundary of
    the constraint cone.
    """

    problem: SweepingProblem
    mesh: Mesh
    reference: Optional[DiscreteTrajectory] = None
    epsilon: float = 1.0
    mu_tilde: float = 10.0
    eps_k: float = 0.0
    proximity_on: bool = False
    u_fixed: Optional[np.ndarray] = None
    boundary_terminal: bool = False

    @property
    def k(self):
        return self.mesh.k

    def windows(self):
        return window_indices(self.k, self.problem.T, self.problem.tau)


def discretize(problem, k, reference=None, epsilon=1.0, mu_tilde=None,
               eps_k=None, proximity_on=None, u_fixed=None,
               boundary_terminal=False):
    """Build a DiscreteProblem with the default localization constants."""
    mesh = Mesh(k, problem.T)
    if u_fixed is not None:
        u_fixed = np.asarray(u_fixed, dtype=float)
        if u_fixed.ndim == 1:
            u_fixed = np.tile(u_fixed.reshape(1, -1), (k + 1, 1))
        if u_fixed.shape != (k + 1, problem.n):
            raise ValueError("u_fixed has wrong shape")
    if mu_tilde is None:
        udot_max = 0.0
        source = reference.u if reference is not None else u_fixed
        if source is not None:
            udot_max = float(np.abs(np.diff(source, axis=0)).max(initial=0.0) / mesh.h)
        mu_tilde = 10.0 * (1.0 + udot_max)
    if eps_k is None:
        eps_k = 1.0 / np.sqrt(k)
    if proximity_on is None:
        proximity_on = reference is not None
    return DiscreteProblem(problem, mesh, reference, epsilon, mu_tilde,
                           eps_k, proximity_on, u_fixed, boundary_terminal)


class Packing:
    """Flattened decision vector over the free node values.

    x_0 is always pinned to the initial state; u_0 and a_0 are pinned to the
    reference when one is supplied; the whole u block is pinned when the set
    control is fixed.
    """

    def __init__(self, dp):
        self.dp = dp
        k, n, d = dp.k, dp.problem.n, dp.problem.d
        self.shape_x, self.shape_u, self.shape_a = (k + 1, n), (k + 1, n), (k + 1, d)
        free_x = np.ones((k + 1, n), dtype=bool)
        free_x[0] = False
        free_u = np.ones((k + 1, n), dtype=bool)
        free_a = np.ones((k + 1, d), dtype=bool)
        if dp.u_fixed is not None:
            free_u[:] = False
        if dp.reference is not None:
            free_u[0] = False
            free_a[0] = False
        self.free_x, self.free_u, self.free_a = free_x, free_u, free_a
        self.size = int(free_x.sum() + free_u.sum() + free_a.sum())

    def pinned_arrays(self):
        dp = self.dp
        k = dp.k
        x = np.zeros(self.shape_x)
        u = np.zeros(self.shape_u)
        a = np.zeros(self.shape_a)
        x[0] = dp.problem.x0
        if dp.u_fixed is not None:
            u[:] = dp.u_fixed
        if dp.reference is not None:
            if dp.u_fixed is None:
                u[0] = dp.reference.u[0]
            a[0] = dp.reference.a[0]
        return x, u, a

    def pack(self, x, u, a):
        return np.concatenate([
            np.asarray(x, dtype=float)[self.free_x],
            np.asarray(u, dtype=float)[self.free_u],
            np.asarray(a, dtype=float)[self.free_a],
        ])

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        x, u, a = self.pinned_arrays()
        nx = int(self.free_x.sum())
        nu = int(self.free_u.sum())
        x[self.free_x] = z[:nx]
        u[self.free_u] = z[nx:nx + nu]
        a[self.free_a] = z[nx + nu:]
        return x, u, a

    def pack_grads(self, gx, gu, ga):
        return np.concatenate([gx[self.free_x], gu[self.free_u], ga[self.free_a]])


def _running_batch(rc, tgrid, a, dx, du, da):
    """Vectorized running-cost values and gradients on all intervals."""
    k = len(tgrid)
    dev = a - (rc.a_ref0[None, :] + tgrid[:, None] * rc.a_ref1[None, :])
    vals = (0.5 * rc.w_xdot * (dx ** 2).sum(axis=1)
            + rc.w_a * (dev ** 2).sum(axis=1)
            + 0.5 * rc.w_udot * (du ** 2).sum(axis=1))
    wa = 2.0 * rc.w_a * dev
    vx = rc.w_xdot * dx
    vu = rc.w_udot * du
    va = np.zeros_like(da)
    if rc.has_abs:
        arg = da + rc.abs_ref0[None, :] + tgrid[:, None] * rc.abs_ref1[None, :]
        vals = vals + rc.w_abs * np.abs(arg).sum(axis=1)
        va = rc.w_abs * np.sign(arg)
    return vals, wa, vx, vu, va


def cost_and_node_grads(dp, x, u, a):
    """Total discrete cost and its gradient with respect to every node value."""
    pb = dp.problem
    k, h = dp.k, dp.mesh.h
    tgrid = dp.mesh.nodes[:-1]
    dx = np.diff(x, axis=0) / h
    du = np.diff(u, axis=0) / h
    da = np.diff(a, axis=0) / h

    gx = np.zeros_like(x)
    gu = np.zeros_like(u)
    ga = np.zeros_like(a)

    value = pb.phi.value(x[k])
    gx[k] += pb.phi.grad(x[k])

    vals, wa, vx, vu, va = _running_batch(pb.run_cost, tgrid, a[:-1], dx, du, da)
    value += h * float(vals.sum())
    ga[:-1] += h * wa
    gx[1:] += vx
    gx[:-1] -= vx
    gu[1:] += vu
    gu[:-1] -= vu
    ga[1:] += va
    ga[:-1] -= va

    if dp.proximity_on and dp.reference is not None:
        ref = dp.reference
        for arr, refarr, g in ((x, ref.x, gx), (u, ref.u, gu), (a, ref.a, ga)):
            dd = np.diff(arr, axis=0) - np.diff(refarr, axis=0)
            value += float((dd ** 2).sum()) / h
            g[1:] += 2.0 * dd / h
            g[:-1] -= 2.0 * dd / h

    # rate-budget penalties: squared distance to (-inf, mu_tilde]
    s1_vec = (u[1] - u[0]) / h
    s1 = float(np.linalg.norm(s1_vec))
    if s1 > dp.mu_tilde:
        value += (s1 - dp.mu_tilde) ** 2
        g1 = 2.0 * (s1 - dp.mu_tilde) * s1_vec / (s1 * h)
        gu[1] += g1
        gu[0] -= g1
    if k >= 2:
        sec = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h
        norms = np.linalg.norm(sec, axis=1)
        s2 = float(norms.sum())
        if s2 > dp.mu_tilde:
            coef = 2.0 * (s2 - dp.mu_tilde)
            safe = norms > 1e-300
            dirs = np.zeros_like(sec)
            dirs[safe] = sec[safe] / norms[safe, None]
            gu[2:] += coef * dirs / h
            gu[1:-1] -= 2.0 * coef * dirs / h
            gu[:-2] += coef * dirs / h
            value += (s2 - dp.mu_tilde) ** 2
    return value, gx, gu, ga


def assemble_cost(dp, z, packing=None):
    """Cost and gradient with respect to the flattened decision vector."""
    packing = packing or Packing(dp)
    x, u, a = packing.unpack(z)
    value, gx, gu, ga = cost_and_node_grads(dp, x, u, a)
    return value, packing.pack_grads(gx, gu, ga)


@dataclass
class ResidualReport:
    """Max violation per constraint family; zero means satisfied."""

    dynamics: float
    dynamics_explicit: float
    state_feasibility: float
    endpoint: float
    norm_equality: float
    norm_band: float
    trust_sup: float
    trust_w12: float
    u_first_step: float
    u_second_diff: float
    terminal_boundary: float

    def as_dict(self):
        return dict(self.__dict__)

    def max_violation(self):
        """Worst violation over the hard families (the explicit-form defect is
        diagnostic only: the catching-up scheme satisfies the inclusion at the
        arrival node, and the departure-node form carries an O(h) defect at
        contact onset)."""
        hard = dict(self.as_dict())
        hard.pop("dynamics_explicit")
        return max(hard.values())


def constraint_residuals(dp, z, packing=None):
    """Evaluate every constraint family of the discrete problem at z."""
    packing = packing or Packing(dp)
    x, u, a = packing.unpack(z)
    pb = dp.problem
    k, h = dp.k, dp.mesh.h
    C = pb.C

    state = 0.0
    if C.m:
        gaps = (C.generators @ (x - u).T).T
        state = max(0.0, float(gaps.max()))

    dyn = 0.0
    dyn_explicit = 0.0
    path = (dp.mesh.nodes, x, u, a)
    union_sets = interval_active_sets(path, C)
    for j in range(k):
        defect = -(x[j + 1] - x[j]) / h - pb.f(x[j], a[j])
        scale = 1.0 + float(np.linalg.norm(defect))
        idx = union_sets[j]
        if idx:
            _, r = nnls(C.generators[list(idx)].T, defect)
        else:
            r = float(np.linalg.norm(defect))
        dyn = max(dyn, r / scale)
        if C.m:
            gl = C.gaps(x[j] - u[j])
            left = tuple(int(i) for i in np.flatnonzero(np.abs(gl) <= 1e-8 * (1 + np.linalg.norm(x[j] - u[j]))))
        else:
            left = ()
        if left:
            _, r_ex = nnls(C.generators[list(left)].T, defect)
        else:
            r_ex = float(np.linalg.norm(defect))
        dyn_explicit = max(dyn_explicit, r_ex / scale)

    endpoint = 0.0
    term_gap = -np.inf
    if C.m:
        g_end = C.gaps(x[k] - u[k])
        endpoint = max(0.0, float(g_end.max()))
        term_gap = float(g_end.max())

    j_lo, j_hi = dp.windows()
    norms = np.linalg.norm(u, axis=1)
    norm_eq = 0.0
    norm_band = 0.0
    for j in range(k + 1):
        if j_lo <= j <= j_hi:
            norm_eq = max(norm_eq, abs(norms[j] - pb.r))
        else:
            lo = pb.r - pb.tau - dp.eps_k
            hi = pb.r + pb.tau + dp.eps_k
            norm_band = max(norm_band, max(0.0, lo - norms[j], norms[j] - hi))

    trust_sup = 0.0
    trust_w12 = 0.0
    if dp.reference is not None:
        ref = dp.reference
        stack = np.hstack([x - ref.x, u - ref.u, a - ref.a])
        trust_sup = max(0.0, float(np.linalg.norm(stack[:-1], axis=1).max()) - dp.epsilon / 2.0)
        w12 = 0.0
        for arr, refarr in ((x, ref.x), (u, ref.u), (a, ref.a)):
            dd = np.diff(arr, axis=0) - np.diff(refarr, axis=0)
            w12 += float((dd ** 2).sum()) / h
        trust_w12 = max(0.0, w12 - dp.epsilon / 2.0)

    first = max(0.0, float(np.linalg.norm(u[1] - u[0]) / h) - (dp.mu_tilde + 1.0))
    second = 0.0
    if k >= 2:
        sec = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h
        second = max(0.0, float(np.linalg.norm(sec, axis=1).sum()) - (dp.mu_tilde + 1.0))

    boundary = 0.0
    if dp.boundary_terminal and np.isfinite(term_gap):
        boundary = abs(term_gap)

    return ResidualReport(dyn, dyn_explicit, state, endpoint, norm_eq,
                          norm_band, trust_sup, trust_w12, first, second,
                          boundary)


def _seed_u_constant(pb):
    """A constant set-control of norm r keeping x0 - u inside the cone."""
    n, r = pb.n, pb.r
    cands = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cands.extend([e.copy(), -e])
    cands.append(np.ones(n) / np.sqrt(n))
    nx0 = np.linalg.norm(pb.x0)
    if nx0 > 0:
        cands.append(pb.x0 / nx0)
        cands.append(-pb.x0 / nx0)
    best, best_dist = None, np.inf
    for c in cands:
        uvec = r * c / np.linalg.norm(c)
        for _ in range(200):
            w = pb.x0 - uvec
            pw = project(w, pb.C)
            grad = 2.0 * (w - pw) * (-1.0)
            dist = float(np.linalg.norm(w - pw))
            if dist <= 1e-12:
                break
            step = uvec - 0.5 * grad
            uvec = r * step / max(np.linalg.norm(step), 1e-300)
        dist = float(np.linalg.norm((pb.x0 - uvec) - project(pb.x0 - uvec, pb.C)))
        if dist < best_dist:
            best, best_dist = uvec, dist
        if best_dist <= 1e-12:
            break
    if best is None or best_dist > 1e-9:
        raise InfeasibleStart("no constant norm-r set control keeps x0 feasible")
    return best


def feasible_seed(dp):
    """A decision vector satisfying every hard constraint.

    With a reference trajectory the reference itself is the seed (its trust
    region would reject an arbitrary restart); otherwise the seed is a
    constant set control of norm r, zero perturbation controls, and the
    catching-up state path.
    """
    packing = Packing(dp)
    if dp.reference is not None:
        ref = dp.reference
        return packing.pack(ref.x, ref.u, ref.a)
    pb = dp.problem
    k = dp.k
    if dp.u_fixed is not None:
        u = dp.u_fixed.copy()
    else:
        u = np.tile(_seed_u_constant(pb), (k + 1, 1))
    a = np.zeros((k + 1, pb.d))
    traj = catching_up(pb, u, a, k)
    return packing.pack(traj.x, traj.u, traj.a)
