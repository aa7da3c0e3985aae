"""Forward simulation of the controlled sweeping inclusion by the catching-up
scheme, a-priori growth bounds, and recovery of the normal-cone multiplier
functions from a trajectory.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import geometry
from .costs import RunningCost, TerminalCost
from .errors import DependentGenerators, InfeasibleStart, NotInCone
from .geometry import Polyhedron, decompose_normal, project
from .nnls import nnls


@dataclass(frozen=True)
class Perturbation:
    """Closed enumeration of perturbation maps f(x, a) with exact gradients.

    kinds: 'identity' (f = a, requires d == n), 'diag_speeds' (f = diag(s) a),
    'affine' (f = A x + B a + c).
    """

    kind: str
    n: int
    d: int
    speeds: np.ndarray = None
    A: np.ndarray = None
    B: np.ndarray = None
    c: np.ndarray = None

    def __post_init__(self):
        if self.kind == "identity":
            if self.n != self.d:
                raise ValueError("identity perturbation needs d == n")
        elif self.kind == "diag_speeds":
            s = np.asarray(self.speeds, dtype=float).reshape(-1)
            if s.size != self.n or self.n != self.d:
                raise ValueError("diag_speeds needs len(speeds) == n == d")
            object.__setattr__(self, "speeds", s)
        elif self.kind == "affine":
            A = np.zeros((self.n, self.n)) if self.A is None else np.asarray(self.A, dtype=float)
            B = np.zeros((self.n, self.d)) if self.B is None else np.asarray(self.B, dtype=float)
            c = np.zeros(self.n) if self.c is None else np.asarray(self.c, dtype=float).reshape(-1)
            if A.shape != (self.n, self.n) or B.shape != (self.n, self.d) or c.size != self.n:
                raise ValueError("affine perturbation has inconsistent shapes")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "B", B)
            object.__setattr__(self, "c", c)
        else:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    def __call__(self, x, a):
        if self.kind == "identity":
            return np.asarray(a, dtype=float)
        if self.kind == "diag_speeds":
            return self.speeds * np.asarray(a, dtype=float)
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(a, dtype=float) + self.c

    def grad_x(self, x, a):
        if self.kind == "affine":
            return self.A
        return np.zeros((self.n, self.n))

    def grad_a(self, x, a):
        if self.kind == "identity":
            return np.eye(self.n)
        if self.kind == "diag_speeds":
            return np.diag(self.speeds)
        return self.B


@dataclass(frozen=True)
class SweepingProblem:
    """Data of the controlled sweeping problem over C + u(t)."""

    n: int
    d: int
    T: float
    x0: np.ndarray
    C: Polyhedron
    r: float
    tau: float
    f: Perturbation
    phi: TerminalCost
    run_cost: RunningCost
    M: float = 1.0
    K: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.x0.size != self.n:
            raise ValueError("x0 has wrong dimension")
        if self.T <= 0 or self.r <= 0:
            raise ValueError("T and r must be positive")
        if not (0.0 <= self.tau <= min(self.r, self.T) + 1e-12):
            raise ValueError("tau must lie in [0, min(r, T)]")


@dataclass(frozen=True)
class Mesh:
    """Uniform mesh with k intervals on [0, T]."""

    k: int
    T: float

    @property
    def h(self):
        return self.T / self.k

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.k + 1)


class PathOnGrid(NamedTuple):
    """Piecewise-linear state and piecewise-constant-per-interval controls on
    a (possibly nonuniform) time grid."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Node values of (x, u, a) on a uniform mesh."""

    mesh: Mesh
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray

    def as_path(self):
        return PathOnGrid(self.mesh.nodes, self.x, self.u, self.a)


def sample_path(path, nodes, dim):
    """Sample a control path (callable or array of node values) on mesh nodes."""
    if callable(path):
        vals = np.array([np.asarray(path(t), dtype=float).reshape(-1) for t in nodes])
    else:
        vals = np.asarray(path, dtype=float)
        if vals.ndim == 1:
            vals = np.tile(vals.reshape(1, -1), (len(nodes), 1))
    if vals.shape != (len(nodes), dim):
        raise ValueError(f"path samples have shape {vals.shape}, expected {(len(nodes), dim)}")
    return vals


def catching_up(problem, u_path, a_path, k):
    """Time-step the sweeping inclusion: drift by -h f, then project back onto
    the translated cone.  Every step satisfies the inclusion at the arrival
    node exactly, so the returned trajectory is feasible by construction."""
    mesh = Mesh(k, problem.T)
    nodes = mesh.nodes
    u = sample_path(u_path, nodes, problem.n)
    a = sample_path(a_path, nodes, problem.d)
    if not problem.C.contains(problem.x0 - u[0]):
        raise InfeasibleStart("x0 - u(0) is outside the constraint cone")
    h = mesh.h
    x = np.empty((k + 1, problem.n))
    x[0] = problem.x0
    for j in range(k):
        drift = x[j] - h * problem.f(x[j], a[j])
        x[j + 1] = project(drift, problem.C, shift=u[j + 1])
    return DiscreteTrajectory(mesh, x, u, a)


def apriori_bounds(problem, u_path, u_dot=None, grid=2048):
    """Growth bound l on ||x(t)|| and the velocity bound function.

    l = ||x0|| + exp(2 M T) (2 M T (1 + ||x0||) + integral of ||u'||), and
    vbound(t) = 2 (1 + l) M + ||u'(t)||.  The control derivative is taken
    from `u_dot` when supplied, otherwise estimated by difference quotients
    on a fine grid.
    """
    M, T = problem.M, problem.T
    ts = np.linspace(0.0, T, grid + 1)
    u = sample_path(u_path, ts, problem.n)
    if u_dot is None:
        quot = np.linalg.norm(np.diff(u, axis=0), axis=1) / (T / grid)
        integral = float(quot.sum() * (T / grid))

        def udot_norm(t):
            j = min(int(t / T * grid), grid - 1)
            return float(quot[j])
    else:
        norms = np.array([np.linalg.norm(np.asarray(u_dot(t), dtype=float)) for t in ts])
        integral = float(np.trapezoid(norms, ts))

        def udot_norm(t):
            return float(np.linalg.norm(np.asarray(u_dot(t), dtype=float)))

    l = float(np.linalg.norm(problem.x0)) + np.exp(2.0 * M * T) * (
        2.0 * M * T * (1.0 + float(np.linalg.norm(problem.x0))) + integral)

    def vbound(t):
        return 2.0 * (1.0 + l) * M + udot_norm(t)

    return l, vbound


def interval_active_sets(path, C, tol=None):
    """Per-interval active sets, taking a constraint as active on an interval
    when it is tight at either endpoint node.  The catching-up step lands on
    the constraint mid-interval, so endpoint-only activity would miss exactly
    the onset interval."""
    t, x, u, a = path
    k = len(t) - 1
    sets = []
    for j in range(k):
        left = x[j] - u[j]
        right = x[j + 1] - u[j + 1]
        tl = geometry.default_tol(left) if tol is None else tol
        tr = geometry.default_tol(right) if tol is None else tol
        idx = set()
        if C.m:
            gl = C.gaps(left)
            gr = C.gaps(right)
            idx = set(np.flatnonzero(np.abs(gl) <= tl)) | set(np.flatnonzero(np.abs(gr) <= tr))
        sets.append(tuple(sorted(int(i) for i in idx)))
    return sets


def eta_from_trajectory(traj, problem, tol=1e-8):
    """Recover the nonnegative multipliers eta of the velocity representation
    -x' = sum_i eta_i g_i + f(x, a) on each mesh interval.

    Raises NotInCone when the residual defect is not in the active cone and
    DependentGenerators when uniqueness fails.
    """
    path = traj.as_path() if hasattr(traj, "as_path") else traj
    t, x, u, a = path
    k = len(t) - 1
    m = problem.C.m
    eta = np.zeros((k, m))
    act_sets = interval_active_sets(path, problem.C)
    for j in range(k):
        h = t[j + 1] - t[j]
        defect = -(x[j + 1] - x[j]) / h - problem.f(x[j], a[j])
        idx = act_sets[j]
        if idx:
            rows = problem.C.generators[list(idx)]
            if np.linalg.matrix_rank(rows, tol=geometry.RANK_CUTOFF) < len(idx):
                raise DependentGenerators(
                    f"active generators {idx} dependent on interval {j}")
            lam, r = nnls(rows.T, defect)
        else:
            lam, r = np.zeros(0), float(np.linalg.norm(defect))
        if r > tol * (1.0 + float(np.linalg.norm(defect))):
            raise NotInCone(
                f"dynamics defect off the active cone on interval {j} (residual {r:.3e})",
                residual=r)
        for pos, i in enumerate(idx):
            eta[j, i] = lam[pos]
    return eta


def eta_endpoint(traj, problem, tol=1e-8):
    """Multiplier vector at the final time from the left difference quotient,
    decomposed over the generators active at the terminal node.  Controls are
    interval representatives, so the perturbation uses the final interval's
    control (the left limit at T)."""
    path = traj.as_path() if hasattr(traj, "as_path") else traj
    t, x, u, a = path
    h = t[-1] - t[-2]
    defect = -(x[-1] - x[-2]) / h - problem.f(x[-1], a[-2])
    dec = decompose_normal(defect, x[-1] - u[-1], problem.C, tol=max(tol, geometry.default_tol(x[-1] - u[-1])))
    return dec.coefficients(problem.C.m)
