"""Built-in cost family: quadratic terminal cost plus a separated running cost

    l(t, z, z') = l1(t, z, x') + l2(t, u') + l3(t, a')

with l1 a quadratic in x' and in the deviation of a from an affine-in-time
reference, l2 a quadratic in u', and l3 a weighted absolute value of a'
shifted by an affine function of time.  This closed enumeration covers every
cost the solvers and checkers need, with hand-coded derivatives.
"""

from dataclasses import dataclass, field

import numpy as np


def _vec(value, size, name):
    if value is None:
        return np.zeros(size)
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1 and size != 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise ValueError(f"{name} has size {arr.size}, expected {size}")
    return arr


@dataclass(frozen=True)
class TerminalCost:
    """phi(x) = 0.5 * weight * ||x - target||^2."""

    weight: float
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(-1))

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.target
        return 0.5 * self.weight * float(d @ d)

    def grad(self, x):
        return self.weight * (np.asarray(x, dtype=float) - self.target)


@dataclass(frozen=True)
class RunningCost:
    """Separated running cost with closed-form (sub)gradients.

    l1 = 0.5 * w_xdot * ||x'||^2 + w_a * ||a - (a_ref0 + t a_ref1)||^2
    l2 = 0.5 * w_udot * ||u'||^2
    l3 = w_abs * sum_i |a'_i + abs_ref0_i + t * abs_ref1_i|
    """

    n: int
    d: int
    w_xdot: float = 0.0
    w_a: float = 0.0
    a_ref0: np.ndarray = None
    a_ref1: np.ndarray = None
    w_udot: float = 0.0
    w_abs: float = 0.0
    abs_ref0: np.ndarray = None
    abs_ref1: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "a_ref0", _vec(self.a_ref0, self.d, "a_ref0"))
        object.__setattr__(self, "a_ref1", _vec(self.a_ref1, self.d, "a_ref1"))
        object.__setattr__(self, "abs_ref0", _vec(self.abs_ref0, self.d, "abs_ref0"))
        object.__setattr__(self, "abs_ref1", _vec(self.abs_ref1, self.d, "abs_ref1"))

    @property
    def has_abs(self):
        return self.w_abs != 0.0

    def a_dev(self, t, a):
        return np.asarray(a, dtype=float) - (self.a_ref0 + t * self.a_ref1)

    def abs_arg(self, t, adot):
        return np.asarray(adot, dtype=float) + self.abs_ref0 + t * self.abs_ref1

    def value(self, t, x, u, a, xdot, udot, adot):
        v = 0.5 * self.w_xdot * float(np.dot(xdot, xdot))
        dev = self.a_dev(t, a)
        v += self.w_a * float(dev @ dev)
        v += 0.5 * self.w_udot * float(np.dot(udot, udot))
        if self.has_abs:
            v += self.w_abs * float(np.abs(self.abs_arg(t, adot)).sum())
        return v

    def grad_state(self, t, x, u, a):
        """Gradient in (x, u, a); only the a-part can be nonzero."""
        gx = np.zeros(self.n)
        gu = np.zeros(self.n)
        ga = 2.0 * self.w_a * self.a_dev(t, a)
        return gx, gu, ga

    def grad_velocity(self, t, xdot, udot, adot):
        """Subgradient selection in (x', u', a'); sign(0) = 0 at kinks of l3."""
        vx = self.w_xdot * np.asarray(xdot, dtype=float)
        vu = self.w_udot * np.asarray(udot, dtype=float)
        va = np.zeros(self.d)
        if self.has_abs:
            va = self.w_abs * np.sign(self.abs_arg(t, adot))
        return vx, vu, va

    def va_bounds(self, t, adot, kink_tol=1e-10):
        """Componentwise subdifferential of l3 in a' as an interval [lo, hi]."""
        lo = np.zeros(self.d)
        hi = np.zeros(self.d)
        if self.has_abs:
            arg = self.abs_arg(t, adot)
            at_kink = np.abs(arg) <= kink_tol
            s = np.sign(arg)
            lo = self.w_abs * np.where(at_kink, -1.0, s)
            hi = self.w_abs * np.where(at_kink, 1.0, s)
        return lo, hi

    def abs_kink_times(self, adot, t0, t1, eps=1e-12):
        """Times in (t0, t1) where a component of the l3 argument changes sign,
        for a' constant on the interval."""
        times = []
        if not self.has_abs:
            return times
        for i in range(self.d):
            c1 = self.abs_ref1[i]
            if c1 == 0.0:
                continue
            tstar = -(float(adot[i]) + self.abs_ref0[i]) / c1
            if t0 + eps < tstar < t1 - eps:
                times.append(float(tstar))
        return sorted(set(times))
