"""Polyhedral cone calculus: active sets, normal-cone decompositions,
projections, and the second-order coderivative of the normal-cone map.

Throughout, the constraint set is a cone ``C = {x : <g_i, x> <= 0}`` given by
its generating rows ``g_i``; moving versions of it enter as translates
``C + shift``.  Constraint indices are 0-based.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (DependentGenerators, DomainViolation, InfeasiblePoint,
                     NotInCone, NumericalFailure)
from .nnls import nnls

#: singular-value cutoff for rank decisions on active generator matrices
RANK_CUTOFF = 1e-10

#: multipliers above this count as strictly complementary
STRICT_COMPLEMENTARITY_TOL = 1e-8


def default_tol(x):
    """Scale-aware activity tolerance, 1e-8 * (1 + ||x||)."""
    return 1e-8 * (1.0 + float(np.linalg.norm(x)))


@dataclass(frozen=True)
class Polyhedron:
    """Cone ``{x : generators @ x <= 0}`` in R^dim, one generator per row."""

    dim: int
    generators: np.ndarray

    def __post_init__(self):
        gens = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if gens.size == 0:
            gens = gens.reshape(0, self.dim)
        if gens.shape[1] != self.dim:
            raise ValueError(f"generators have {gens.shape[1]} columns, expected {self.dim}")
        norms = np.linalg.norm(gens, axis=1)
        if gens.shape[0] and (norms == 0.0).any():
            raise ValueError("every generator must be nonzero")
        object.__setattr__(self, "generators", gens)

    @property
    def m(self):
        return self.generators.shape[0]

    def gaps(self, x):
        """Constraint values <g_i, x>; nonpositive inside the set."""
        return self.generators @ np.asarray(x, dtype=float)

    def contains(self, x, tol=None):
        if self.m == 0:
            return True
        if tol is None:
            tol = default_tol(x)
        return bool((self.gaps(x) <= tol).all())


@dataclass(frozen=True)
class ActiveSet:
    """Indices of constraints tight at a query point, with the tolerance used."""

    indices: tuple
    tol: float

    def __contains__(self, i):
        return i in self.indices

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class FeaturedSets:
    """Split of an active set by the sign of <g_i, y>."""

    zero_set: tuple
    pos_set: tuple

    @property
    def union(self):
        return tuple(sorted(set(self.zero_set) | set(self.pos_set)))


@dataclass(frozen=True)
class ConeDecomposition:
    """Nonnegative multipliers over active generators plus the fit residual."""

    multipliers: dict
    residual: float

    def coefficients(self, m):
        lam = np.zeros(m)
        for i, v in self.multipliers.items():
            lam[i] = v
        return lam


def active_set(x, C, tol=None):
    """Indices i with |<g_i, x>| <= tol; raises InfeasiblePoint if x is outside C."""
    x = np.asarray(x, dtype=float)
    if tol is None:
        tol = default_tol(x)
    if C.m == 0:
        return ActiveSet((), tol)
    gaps = C.gaps(x)
    worst = float(gaps.max())
    if worst > tol:
        raise InfeasiblePoint(f"point violates constraint by {worst:.3e} (tol {tol:.3e})")
    idx = tuple(int(i) for i in np.flatnonzero(np.abs(gaps) <= tol))
    return ActiveSet(idx, tol)


def featured_sets(y, I, C, tol=None):
    """Split active set I at direction y into zero and strictly positive parts."""
    y = np.asarray(y, dtype=float)
    if tol is None:
        tol = default_tol(y)
    zero, pos = [], []
    for i in I:
        val = float(C.generators[i] @ y)
        if abs(val) <= tol:
            zero.append(i)
        elif val > tol:
            pos.append(i)
    return FeaturedSets(tuple(zero), tuple(pos))


def decompose_normal(v, x, C, tol=None, active=None):
    """Express v as a nonnegative combination of the generators active at x.

    Returns a ConeDecomposition whose residual certifies v in N(x; C) when it
    is below tol * (1 + ||v||).  Raises NotInCone otherwise.
    """
    v = np.asarray(v, dtype=float)
    if tol is None:
        tol = default_tol(x)
    if active is None:
        active = active_set(x, C, tol)
    idx = list(active)
    accept = tol * (1.0 + float(np.linalg.norm(v)))
    if not idx:
        r = float(np.linalg.norm(v))
        if r > accept:
            raise NotInCone(f"no active constraints but ||v|| = {r:.3e}", residual=r)
        return ConeDecomposition({}, r)
    A = C.generators[idx].T
    lam, r = nnls(A, v)
    if r > accept:
        raise NotInCone(f"cone fit residual {r:.3e} exceeds tolerance {accept:.3e}", residual=r)
    return ConeDecomposition({i: float(l) for i, l in zip(idx, lam)}, r)


def project(z, C, shift=None, maxiter=None):
    """Euclidean projection of z onto C + shift.

    Uses the polar decomposition of the cone: the normal component is the
    nonnegative least-squares fit of z - shift over all generators, and the
    projection is what remains.
    """
    z = np.asarray(z, dtype=float)
    if C.m == 0:
        return z.copy()
    if shift is None:
        shift = np.zeros(C.dim)
    shift = np.asarray(shift, dtype=float)
    if maxiter is None:
        maxiter = 100 * max(C.m, 1)
    y = z - shift
    try:
        lam, _ = nnls(C.generators.T, y, maxiter=maxiter)
    except NumericalFailure as exc:
        raise NumericalFailure(f"projection failed: {exc}") from exc
    return y - C.generators.T @ lam + shift


def coderivative_generators(x, y, u, C, tol=None):
    """Index sets generating the normal-cone coderivative at (x, y) in direction u.

    Returns ``(span_indices, cone_indices)`` such that the coderivative value
    is span of the first group plus the nonnegative cone of the second.
    Raises DomainViolation when u pairs nontrivially with a strictly
    complementary generator, and DependentGenerators when the active
    generators are not linearly independent.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if tol is None:
        tol = default_tol(x)
    I = active_set(x, C, tol)
    idx = list(I)
    if idx:
        active_rows = C.generators[idx]
        rank = np.linalg.matrix_rank(active_rows, tol=RANK_CUTOFF)
        if rank < len(idx):
            raise DependentGenerators(f"active generators {idx} are linearly dependent")
    dec = decompose_normal(y, x, C, tol, active=I)
    strict = [i for i in idx if dec.multipliers.get(i, 0.0) > STRICT_COMPLEMENTARITY_TOL]
    for i in strict:
        if abs(float(C.generators[i] @ u)) > tol:
            raise DomainViolation(
                f"direction pairs with strictly complementary generator {i}")
    feat = featured_sets(u, I, C, tol)
    return feat.zero_set, feat.pos_set
