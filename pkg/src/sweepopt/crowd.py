"""Corridor crowd model: n rigid disks of radius R on a line, each with a
spontaneous speed scaled by its control, subject to the nonoverlap constraint
between neighbors.  Between contact events every trajectory is linear, so the
simulator is event-driven and exact; the optimizer enumerates contact
patterns, reduces each pattern to one scalar per contact group through the
multiplier relations, and minimizes the resulting cost, validating winners by
simulation and a dual certificate.
"""

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import check_continuous, continuous_certificate
from .costs import RunningCost, TerminalCost
from .dynamics import PathOnGrid, Perturbation, SweepingProblem
from .errors import NoFeasiblePattern
from .geometry import Polyhedron

GAP_TOL = 1e-9


@dataclass(frozen=True)
class CrowdConfig:
    """Participants ordered along the corridor, exit at the origin."""

    n: int
    R: float
    T: float
    speeds: np.ndarray
    x0: np.ndarray
    alpha: Optional[float] = None

    def __post_init__(self):
        s = np.asarray(self.speeds, dtype=float).reshape(-1)
        x = np.asarray(self.x0, dtype=float).reshape(-1)
        if s.size != self.n or x.size != self.n:
            raise ValueError("speeds and x0 must have length n")
        if (s <= 0).any():
            raise ValueError("speeds must be positive")
        gaps = np.diff(x)
        if (gaps < 2.0 * self.R - GAP_TOL).any():
            raise ValueError("initial positions violate the nonoverlap spacing")
        object.__setattr__(self, "speeds", s)
        object.__setattr__(self, "x0", x)

    @property
    def pairs(self):
        return range(self.n - 1)


@dataclass
class CrowdTrajectories:
    """Exact piecewise-linear motion: breakpoints, node positions, per-segment
    velocities and pair multipliers."""

    breakpoints: np.ndarray        # (B+1,)
    positions: np.ndarray          # (B+1, n)
    velocities: np.ndarray         # (B, n)
    eta: np.ndarray                # (B, n-1)
    contact_times: dict            # pair -> first contact time (or None)
    flags: list

    def position_at(self, t):
        out = np.empty(self.positions.shape[1])
        for c in range(self.positions.shape[1]):
            out[c] = np.interp(t, self.breakpoints, self.positions[:, c])
        return out

    def min_gap(self):
        gaps = np.diff(self.positions, axis=1)
        return float(gaps.min()) if gaps.size else np.inf

    def as_path(self, u_const):
        B = len(self.breakpoints)
        u = np.tile(np.asarray(u_const, dtype=float), (B, 1))
        a = np.tile(self._a_bar, (B, 1))
        return PathOnGrid(self.breakpoints, self.positions, u, a)


def _isotonic_blocks(values, touching):
    """Pool-adjacent-violators over runs of touching pairs.

    Returns a list of blocks (index lists) whose pooled means are the actual
    velocities: inside a touching run the fit is nondecreasing; non-touching
    pairs are unconstrained.
    """
    n = len(values)
    blocks = []
    for i in range(n):
        blocks.append([i])
        while (len(blocks) >= 2
               and touching[blocks[-2][-1]]
               and np.mean([values[j] for j in blocks[-2]])
               > np.mean([values[j] for j in blocks[-1]]) + 0.0):
            last = blocks.pop()
            blocks[-1].extend(last)
    return blocks


def simulate_crowd(config, a_bar):
    """Event-driven exact integration of the crowd dynamics under constant
    controls.  The actual velocity is the monotone projection of the
    spontaneous one over each touching run, so contacts both form and, where
    the front pulls away, release."""
    cfg = config
    a_bar = np.asarray(a_bar, dtype=float).reshape(-1)
    if a_bar.size != cfg.n:
        raise ValueError("a_bar must have length n")
    spont = -cfg.speeds * a_bar
    twoR = 2.0 * cfg.R

    t = 0.0
    x = cfg.x0.copy()
    touching = [abs(x[i + 1] - x[i] - twoR) <= GAP_TOL for i in cfg.pairs]
    contact_times = {i: (0.0 if touching[i] else None) for i in cfg.pairs}
    breakpoints = [0.0]
    positions = [x.copy()]
    velocities = []
    etas = []
    flags = []

    guard = 0
    while t < cfg.T - 1e-15:
        guard += 1
        if guard > 4 * cfg.n + 8:
            flags.append("event budget exceeded")
            break
        blocks = _isotonic_blocks(spont, touching)
        v = np.empty(cfg.n)
        eta_seg = np.zeros(max(cfg.n - 1, 0))
        for blk in blocks:
            V = float(np.mean(spont[blk]))
            v[blk] = V
            run = 0.0
            for j in blk[:-1]:
                run += spont[j] - V
                eta_seg[j] = run
        # touching pairs across separating blocks release now
        for i in cfg.pairs:
            if touching[i] and v[i + 1] > v[i] + 1e-15:
                touching[i] = False
                eta_seg[i] = 0.0
        # next merge event among non-touching approaching pairs
        t_next = cfg.T
        hit = None
        for i in cfg.pairs:
            if touching[i]:
                continue
            closing = v[i] - v[i + 1]
            if closing > 1e-15:
                te = t + (x[i + 1] - x[i] - twoR) / closing
                if te < t_next - 1e-15:
                    t_next, hit = te, i
        dt = t_next - t
        x = x + dt * v
        velocities.append(v.copy())
        etas.append(eta_seg.copy())
        breakpoints.append(t_next)
        positions.append(x.copy())
        t = t_next
        if hit is not None and t < cfg.T - 1e-15:
            x[hit + 1] = x[hit] + twoR   # land exactly on contact
            positions[-1] = x.copy()
            touching[hit] = True
            if contact_times[hit] is None:
                contact_times[hit] = t
            sizes = _touch_run_sizes(touching, hit)
            if min(sizes) > 1:
                flags.append(f"chain merge at t={t:.6g} joining blocks of sizes {sizes}")
        elif hit is not None:
            contact_times[hit] = contact_times[hit]  # contact exactly at T ignored

    traj = CrowdTrajectories(np.array(breakpoints), np.array(positions),
                             np.array(velocities), np.array(etas),
                             contact_times, flags)
    traj._a_bar = a_bar
    return traj


def _touch_run_sizes(touching, hit):
    """Sizes of the two touching runs being joined by pair `hit`."""
    left = 1
    i = hit - 1
    while i >= 0 and touching[i]:
        left += 1
        i -= 1
    right = 1
    i = hit + 1
    while i < len(touching) and touching[i]:
        right += 1
        i += 1
    return (left, right)


def crowd_cost(config, traj, a_bar):
    xT = traj.position_at(config.T)
    return 0.5 * (float(xT @ xT) + config.T * float(np.dot(a_bar, a_bar)))


# ---------------------------------------------------------------------------
# the multiplier relations of the reduced problem


def velocity_match(i, config, a_bar, eta_neighbors):
    """Multiplier value created when pair i comes into contact:
    2 eta_i = eta_{i+1} + eta_{i-1} + s_{i+1} a_{i+1} - s_i a_i,
    with the boundary convention eta_{-1} = eta_{n-1} = 0."""
    s = config.speeds
    eta = np.asarray(eta_neighbors, dtype=float).reshape(-1)
    left = eta[i - 1] if i - 1 >= 0 else 0.0
    right = eta[i + 1] if i + 1 < config.n - 1 else 0.0
    return 0.5 * (right + left + s[i + 1] * a_bar[i + 1] - s[i] * a_bar[i])


def contact_time(i, config, a_bar, eta_history=None):
    """First-contact time of pair i from the closed-form quotient.

    `eta_history` is a list of (start_time, eta_vector) entries describing the
    piecewise-constant multipliers of the neighboring pairs up to the last
    prior event; the quotient is evaluated at that event time.  Returns 0.0
    when the pair starts in contact, and None when no contact occurs by T
    (including a nonpositive closing denominator).
    """
    cfg = config
    s = cfg.speeds
    gap0 = cfg.x0[i + 1] - cfg.x0[i]
    twoR = 2.0 * cfg.R
    if abs(gap0 - twoR) <= GAP_TOL:
        return 0.0
    history = sorted(eta_history or [(0.0, np.zeros(max(cfg.n - 1, 0)))])
    theta = history[-1][0]

    def neigh(eta_vec):
        left = eta_vec[i - 1] if i - 1 >= 0 else 0.0
        right = eta_vec[i + 1] if i + 1 < cfg.n - 1 else 0.0
        return left + right

    eta_theta = neigh(history[-1][1])
    integral = 0.0
    for (t0, vec), (t1, _) in zip(history, history[1:] + [(theta, None)]):
        integral += neigh(vec) * (t1 - t0)
    denom = eta_theta + s[i + 1] * a_bar[i + 1] - s[i] * a_bar[i]
    if denom <= GAP_TOL:
        return None
    ti = (gap0 - twoR + theta * eta_theta - integral) / denom
    if theta - 1e-12 < ti <= cfg.T + 1e-12:
        return float(min(ti, cfg.T))
    return None


def proportionality_relations(pattern, config):
    """Linear relations among the constant controls for pairs whose contact
    multiplier is positive: s_{i+1} a_i = s_i a_{i+1}, composed along chains.
    Returns rows c with c @ a_bar = 0."""
    s = config.speeds
    rows = []
    for i in sorted(pattern):
        row = np.zeros(config.n)
        row[i] = s[i + 1]
        row[i + 1] = -s[i]
        rows.append(row)
    return rows


class _SymbolicBlocks:
    """Linear-in-controls expressions for block velocities and pair
    multipliers of one contact group, updated through an assumed event order.
    Every quantity is homogeneous in the controls, so an expression is just a
    coefficient vector over the group's controls."""

    def __init__(self, members, speeds):
        self.members = list(members)
        self.speeds = np.asarray(speeds, dtype=float)
        self.local = {g: l for l, g in enumerate(self.members)}
        self.blocks = [[g] for g in self.members]

    def merge_pair(self, i):
        """Merge the blocks joined by pair (i, i+1); returns the eta
        expressions of all interior pairs of the merged block."""
        bi = next(b for b in self.blocks if i in b)
        bj = next(b for b in self.blocks if i + 1 in b)
        merged = sorted(set(bi) | set(bj))
        self.blocks = [b for b in self.blocks if b is not bi and b is not bj]
        self.blocks.append(merged)
        return self.eta_exprs(merged)

    def eta_exprs(self, block):
        """Telescoped multiplier expressions for pairs interior to a block."""
        g = len(self.members)
        V = np.zeros(g)
        for j in block:
            V[self.local[j]] += -self.speeds[self.local[j]] / len(block)
        exprs = {}
        run = np.zeros(g)
        for j in block[:-1]:
            spont = np.zeros(g)
            spont[self.local[j]] = -self.speeds[self.local[j]]
            run = run + spont - V
            exprs[j] = run.copy()
        return exprs


def _group_candidates(config, members, events, cases, order):
    """Relation rows for one contact group under an assumed event order and
    eta-sign case assignment; returns (rows, ok)."""
    g = len(members)
    local = {m: l for l, m in enumerate(members)}
    speeds = config.speeds[list(members)]
    sym = _SymbolicBlocks(members, speeds)
    rows = []
    for pair in order:
        exprs = sym.merge_pair(pair)
        if cases[pair] == "pos":
            row = np.zeros(g)
            row[local[pair]] = config.speeds[pair + 1]
            row[local[pair + 1]] = -config.speeds[pair]
            rows.append(row)
        else:
            rows.append(exprs[pair].copy())
    return rows


def _nullspace_direction(rows, g):
    """One-dimensional solution direction of the relation rows, computed by
    substitution against the last control so that exact speed ratios survive
    in floating point."""
    if not rows:
        return None
    R = np.array(rows, dtype=float)
    if R.shape[0] != g - 1:
        return None
    A = R[:, :-1]
    if abs(np.linalg.det(A)) < 1e-12 * max(1.0, float(np.abs(A).max()) ** max(g - 1, 1)):
        # fall back to the SVD null vector
        _, sv, Vt = np.linalg.svd(R)
        if sv.size and sv[-1] > 1e-10 * sv[0]:
            return None
        w = Vt[-1]
    else:
        head = np.linalg.solve(A, -R[:, -1])
        w = np.concatenate([head, [1.0]])
    if w.sum() > 0:
        w = -w
    return w


def _minimize_group(config, members, direction, span=8.0, coarse=0.02):
    """Minimize the group's share of the cost along the 1-D direction by grid
    search plus a guarded quadratic polish."""
    members = list(members)
    sub = CrowdConfig(len(members), config.R, config.T,
                      config.speeds[members], config.x0[members])

    def J(psi):
        a = psi * direction
        traj = simulate_crowd(sub, a)
        return crowd_cost(sub, traj, a)

    grid = np.arange(-span, span + coarse, coarse)
    vals = np.array([J(p) for p in grid])
    best = float(grid[int(np.argmin(vals))])
    h = coarse
    for _ in range(60):
        f0, fp, fm = J(best), J(best + h), J(best - h)
        d1 = (fp - fm) / (2 * h)
        d2 = (fp - 2 * f0 + fm) / (h * h)
        if d2 <= 0:
            h *= 0.5
            continue
        step = -d1 / d2
        cand = best + step
        if J(cand) <= f0:
            best = cand
        h = max(abs(step) * 0.5, h * 0.25)
        if h < 1e-13:
            break
    return best


def _contact_groups(n, pattern):
    """Split participants into maximal runs joined by the pattern's pairs."""
    groups = []
    current = [0]
    for i in range(n - 1):
        if i in pattern:
            current.append(i + 1)
        else:
            groups.append(current)
            current = [i + 1]
    groups.append(current)
    return groups


def _singleton_optimum(config, j):
    s, T, x0 = config.speeds[j], config.T, config.x0[j]
    return s * x0 / (1.0 + T * s * s)


def crowd_to_sweeping(config, a_scale=4.0):
    """Embed the corridor model as a sweeping problem over the shifted cone.

    The shift base alpha is sized from a simulated state bound (10 x the bound
    plus the disk offsets) so the nondegeneracy premise holds without the
    exponential a-priori estimate, which overflows at corridor scale.
    """
    n = config.n
    gens = np.zeros((max(n - 1, 0), n))
    for i in range(n - 1):
        gens[i, i] = 1.0
        gens[i, i + 1] = -1.0
    C = Polyhedron(n, gens)
    slope = float(np.max(config.speeds)) * a_scale
    l_bound = float(np.linalg.norm(config.x0)) + config.T * slope * np.sqrt(n)
    alpha = config.alpha if config.alpha is not None else 10.0 * (l_bound + 2.0 * config.R * n)
    u_const = alpha + 2.0 * config.R * np.arange(n, dtype=float)
    r = float(np.linalg.norm(u_const))
    problem = SweepingProblem(
        n=n, d=n, T=config.T, x0=config.x0, C=C, r=r, tau=0.0,
        f=Perturbation("diag_speeds", n, n, speeds=config.speeds),
        phi=TerminalCost(1.0, np.zeros(n)),
        run_cost=RunningCost(n=n, d=n, w_a=0.5),
        M=float(np.max(config.speeds)) * a_scale)
    return problem, u_const


@dataclass
class CrowdSolution:
    a_bar: np.ndarray
    contact_times: dict
    eta_segments: list             # [(t0, t1, eta_vec)]
    trajectories: CrowdTrajectories
    cost: float
    pattern: tuple
    cases: dict
    pruned: list
    certificate_summary: dict = field(default_factory=dict)
    certificate: object = None
    report: object = None

    def segments_json(self):
        segs = []
        for b in range(len(self.trajectories.velocities)):
            segs.append({
                "t0": float(self.trajectories.breakpoints[b]),
                "t1": float(self.trajectories.breakpoints[b + 1]),
                "slopes": [float(v) for v in self.trajectories.velocities[b]],
            })
        return segs

    def to_json_dict(self):
        return {
            "a_bar": [float(v) for v in self.a_bar],
            "contact_times": {str(i): (None if t is None else float(t))
                              for i, t in self.contact_times.items()},
            "segments": self.segments_json(),
            "cost": float(self.cost),
            "pattern": [int(i) for i in self.pattern],
            "pruned": self.pruned,
            "certificate_summary": self.certificate_summary,
        }


ETA_CASE_TOL = 1e-7


def solve_crowd(config, lam=1.0, check_tol=1e-6):
    """Enumerate contact patterns and multiplier-sign cases, reduce each to
    per-group scalar minimizations, validate by exact simulation, certify the
    winner, and report every pruned branch with its reason."""
    cfg = config
    n = cfg.n
    forced = tuple(i for i in cfg.pairs
                   if abs(cfg.x0[i + 1] - cfg.x0[i] - 2.0 * cfg.R) <= GAP_TOL)
    pruned = []
    candidates = []

    all_pairs = list(cfg.pairs)
    for rsize in range(len(all_pairs) + 1):
        for extra in itertools.combinations([p for p in all_pairs if p not in forced], rsize):
            pattern = tuple(sorted(set(forced) | set(extra)))
            for case_bits in itertools.product(("pos", "zero"), repeat=len(pattern)):
                cases = dict(zip(pattern, case_bits))
                cand = _solve_branch(cfg, pattern, cases, pruned)
                if cand is not None:
                    candidates.append(cand)

    if not candidates:
        raise NoFeasiblePattern("every contact pattern was pruned")
    candidates.sort(key=lambda c: (c["cost"], c["pattern"]))
    win = candidates[0]
    traj = win["traj"]

    eta_segments = [(float(traj.breakpoints[b]), float(traj.breakpoints[b + 1]),
                     traj.eta[b].copy()) for b in range(len(traj.velocities))]
    sol = CrowdSolution(
        a_bar=win["a_bar"], contact_times=traj.contact_times,
        eta_segments=eta_segments, trajectories=traj, cost=win["cost"],
        pattern=win["pattern"], cases=win["cases"], pruned=pruned)

    problem, u_const = crowd_to_sweeping(cfg)
    path = traj.as_path(u_const)
    cert = continuous_certificate(problem, path, lam=lam, u_fixed=True, tol=check_tol)
    report = check_continuous(problem, path, cert, tol=check_tol)
    first_contact = min((t for t in traj.contact_times.values() if t is not None),
                        default=None)
    sol.certificate = cert
    sol.report = report
    sol.certificate_summary = {
        "verdict": "pass" if report.verdict else "fail",
        "lambda": cert.lam,
        "gamma_tail_at_first_contact": (
            [float(v) for v in cert.gamma.tail(first_contact)]
            if first_contact is not None else None),
        "failed_conditions": [it.cid for it in report.failed()],
    }
    return sol


def _solve_branch(cfg, pattern, cases, pruned):
    """One (pattern, case) branch: reduce, minimize, simulate, validate."""
    n = cfg.n
    groups = _contact_groups(n, pattern)
    a_bar = np.zeros(n)

    def prune(reason):
        pruned.append({"pattern": [int(i) for i in pattern],
                       "cases": {str(k): v for k, v in cases.items()},
                       "reason": reason})

    for grp in groups:
        if len(grp) == 1:
            a_bar[grp[0]] = _singleton_optimum(cfg, grp[0])
            continue
        events = [i for i in pattern if grp[0] <= i < grp[-1]]
        forced_ev = [i for i in events
                     if abs(cfg.x0[i + 1] - cfg.x0[i] - 2.0 * cfg.R) <= GAP_TOL]
        free_ev = [i for i in events if i not in forced_ev]
        direction = None
        for order_tail in itertools.permutations(free_ev):
            order = forced_ev + list(order_tail)
            rows = _group_candidates(cfg, grp, events, cases, order)
            direction = _nullspace_direction(rows, len(grp))
            if direction is not None:
                break
        if direction is None:
            prune(f"group {grp}: relations admit no one-dimensional family")
            return None
        psi = _minimize_group(cfg, grp, direction)
        a_bar[grp] = psi * direction

    traj = simulate_crowd(cfg, a_bar)
    realized = tuple(sorted(i for i, t in traj.contact_times.items() if t is not None))
    if realized != pattern:
        prune(f"realized contact set {realized} differs from assumed {pattern}")
        return None
    # eta sign cases at each pair's own contact event
    for i in pattern:
        ti = traj.contact_times[i]
        b = int(np.searchsorted(traj.breakpoints, ti, side="right")) - 1
        b = min(b, len(traj.eta) - 1)
        eta_i = traj.eta[b][i]
        if cases[i] == "pos" and eta_i <= ETA_CASE_TOL:
            prune(f"pair {i}: assumed positive multiplier but got {eta_i:.3e}")
            return None
        if cases[i] == "zero" and abs(eta_i) > ETA_CASE_TOL:
            prune(f"pair {i}: assumed vanishing multiplier but got {eta_i:.3e}")
            return None
    # any positive multiplier anywhere forces the proportionality relation
    s = cfg.speeds
    for b in range(len(traj.eta)):
        for i in cfg.pairs:
            if traj.eta[b][i] > ETA_CASE_TOL:
                lhsides = s[i + 1] * a_bar[i] - s[i] * a_bar[i + 1]
                if abs(lhsides) > 1e-6 * (1.0 + np.abs(a_bar).max()):
                    prune(f"pair {i}: positive multiplier violates the control "
                          f"proportionality by {lhsides:.3e}")
                    return None
    if traj.min_gap() < 2.0 * cfg.R - 1e-9:
        prune("nonoverlap violated")  # defensive; the simulator preserves it
        return None
    return {"a_bar": a_bar, "traj": traj, "cost": crowd_cost(cfg, traj, a_bar),
            "pattern": pattern, "cases": dict(cases)}
