"""Rokhlin-style towers with controlled return behaviour over circle rotations.

A tower here is a compact base interval K on the circle together with three
certified combinatorial parameters:

  n-good:      K, f(K), ..., f^{n-1}(K) are pairwise disjoint,
  N-spanning:  K, f(K), ..., f^{N-1}(K) cover the circle,
  d-mild:      every orbit meets the boundary of K at most d times.

Two constructions are provided.  `build_rotation_tower` produces a 1-mild
tower: its interval length (beta_k + beta_{k-1})/2 sits strictly between two
consecutive convergent errors beta_j = |q_j alpha - p_j|, which keeps
q_k-goodness exact while placing the two endpoints on distinct orbits, each of
which meets the boundary exactly once.  `single_orbit_tower` uses length
beta_k itself; both endpoints then lie on one orbit (they differ by q_k alpha
mod 1) which meets the boundary twice, so that tower is certified at d = 2.
Its virtue is that every boundary excursion funnels through a single interior
anchor point, which the section-building machinery can exploit.

Towers over skew products are obtained by lifting a certified rotation tower
through the projection onto the rotation factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base_dynamics import (
    ContinuedFraction,
    Rotation,
    circle_dist,
    system_from_config,
    wrap,
)

# Membership slack for closed intervals and exact-hit detection on boundaries.
# Orbit points are computed as frac(x0 + j*alpha) with |j| <= a few thousand,
# which carries rounding of order 1e-13 at most; 1e-10 sits far above that and
# far below any genuine off-boundary distance in the grids used here.
MEMBER_TOL = 1e-12
BOUNDARY_TOL = 1e-10


class CertificationError(RuntimeError):
    """A tower failed its goodness / spanning / mildness certification."""


@dataclass
class CertificationReport:
    passed: bool
    good_ok: bool
    span_ok: bool
    mild_ok: bool
    n: int
    N: int
    d: int
    grid_size: int
    orbit_samples: int
    witnesses: dict = field(default_factory=dict)

    def summary(self):
        bits = [
            f"good={'ok' if self.good_ok else 'FAIL'}",
            f"span={'ok' if self.span_ok else 'FAIL'}",
            f"mild={'ok' if self.mild_ok else 'FAIL'}",
        ]
        return (
            f"tower(n={self.n}, N={self.N}, d={self.d}): "
            + ", ".join(bits)
            + (f", witnesses={self.witnesses}" if self.witnesses else "")
        )


class Tower:
    """Interval tower over a circle rotation (or a lift of one).

    The base set is the closed arc [lo, lo+length] on the circle; for systems
    of dimension > 1 the base set is the full preimage of that arc under
    projection to the rotation factor, and all certification quantities are
    those of the factor.
    """

    def __init__(self, system, lo, length, n, N, d, certified=False, report=None):
        self.system = system
        self.lo = float(wrap(lo))
        self.length = float(length)
        if not 0.0 < self.length <= 1.0:
            raise ValueError("tower interval length must lie in (0, 1]")
        self.n = int(n)
        self.N = int(N)
        self.d = int(d)
        self.certified = bool(certified)
        self.report = report
        factor, project = system.rotation_factor()
        self.factor = factor
        self.project = project

    # -- membership -------------------------------------------------------

    def _offset(self, x):
        return wrap(np.asarray(self.project(x), dtype=float) - self.lo)

    def contains(self, x):
        if self.length >= 1.0:
            return np.ones(np.shape(self._offset(x)), dtype=bool)
        return self._offset(x) <= self.length + MEMBER_TOL

    def interior(self, x, tol=BOUNDARY_TOL):
        if self.length >= 1.0:
            return np.ones(np.shape(self._offset(x)), dtype=bool)
        off = self._offset(x)
        return (off > tol) & (off < self.length - tol)

    def boundary_hit(self, x, tol=BOUNDARY_TOL):
        if self.length >= 1.0:
            return np.zeros(np.shape(self._offset(x)), dtype=bool)
        p = np.asarray(self.project(x), dtype=float)
        return (circle_dist(p, self.lo) <= tol) | (circle_dist(p, self.lo + self.length) <= tol)

    def floor_index(self, x):
        """Index m in [0, n) with f^{-m}(x) in the base arc, or -1 if x is not
        in the tower.  Unique because the tower is n-good."""
        alpha = self.factor.alpha
        off = np.atleast_1d(self._offset(x))
        floors = wrap(np.arange(self.n, dtype=float) * alpha)
        order = np.argsort(floors)
        sorted_floors = floors[order]
        # Candidate floor: the largest floor start <= off (cyclically).
        idx = np.searchsorted(sorted_floors, off + MEMBER_TOL) - 1
        idx_wrapped = np.where(idx < 0, len(sorted_floors) - 1, idx)
        cand = order[idx_wrapped]
        good = wrap(off - floors[cand]) <= self.length + MEMBER_TOL
        out = np.where(good, cand, -1)
        return out if np.ndim(x) and np.shape(out) != () else out.reshape(np.shape(off))

    # -- serialization ----------------------------------------------------

    def to_config(self):
        return {
            "system": self.system.to_config(),
            "lo": self.lo,
            "length": self.length,
            "n": self.n,
            "N": self.N,
            "d": self.d,
            "certified": self.certified,
        }

    @classmethod
    def from_config(cfg_cls, cfg):
        return Tower(
            system_from_config(cfg["system"]),
            cfg["lo"],
            cfg["length"],
            cfg["n"],
            cfg["N"],
            cfg["d"],
            certified=cfg.get("certified", False),
        )

    def __repr__(self):
        return (
            f"Tower(lo={self.lo:.6g}, length={self.length:.6g}, n={self.n}, "
            f"N={self.N}, d={self.d}, certified={self.certified})"
        )


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


def certify(tower, grid_size=None, orbit_samples=512, update=True):
    """Deterministic-grid certification of goodness, spanning and mildness.

    Goodness and spanning are checked on an equispaced grid of at least 10*N
    points.  Mildness counts boundary hits along sampled orbits of length
    10*N; the sample always includes the two boundary points themselves and
    the point 0, which carry the only orbits that can meet the boundary.
    """
    factor = tower.factor
    if getattr(factor, "periodic", False):
        raise ValueError("tower certification requires an irrational rotation factor")
    alpha = factor.alpha
    lo, length, n, N, d = tower.lo, tower.length, tower.n, tower.N, tower.d

    if grid_size is None:
        grid_size = max(10 * N, 10_000)
    if grid_size < 10 * N:
        raise ValueError(f"grid_size must be at least 10*N = {10 * N}")

    witnesses = {}
    grid = np.arange(grid_size, dtype=float) / grid_size

    if length >= 1.0:
        # Whole-circle tower: goodness is vacuous at n=1, spanning immediate,
        # the boundary is empty.
        good_ok, span_ok, mild_ok = (n == 1), True, True
        report = CertificationReport(
            passed=good_ok,
            good_ok=good_ok,
            span_ok=span_ok,
            mild_ok=mild_ok,
            n=n,
            N=N,
            d=d,
            grid_size=grid_size,
            orbit_samples=0,
        )
        if update:
            tower.certified = report.passed
            tower.report = report
        return report

    off = wrap(grid - lo)
    in_K = off <= length + MEMBER_TOL

    # n-goodness: no grid point may lie in K and in f^i(K) simultaneously.
    good_ok = True
    pts = grid[in_K]
    for i in range(1, n):
        also = wrap(pts - i * alpha - lo) <= length + MEMBER_TOL
        if np.any(also):
            good_ok = False
            witnesses["goodness"] = {"x": float(pts[also][0]), "i": i}
            break

    # N-spanning: every grid point is covered by some f^i(K), i < N.  Each
    # grid point is matched against the nearest arc start at or below it
    # (cyclically), which is the only arc that can cover it.
    starts = np.sort(wrap(lo + np.arange(N, dtype=float) * alpha))
    idx = np.searchsorted(starts, grid + MEMBER_TOL) - 1
    below = np.where(idx < 0, N - 1, idx)
    covered = wrap(grid - starts[below]) <= length + MEMBER_TOL
    span_ok = bool(covered.all())
    if not span_ok:
        witnesses["spanning"] = {"x": float(grid[~covered][0])}

    # d-mildness along sampled orbits of length 10*N.
    samples = np.concatenate(
        [
            np.array([0.0, lo, wrap(lo + length)]),
            np.arange(orbit_samples, dtype=float) / orbit_samples,
        ]
    )
    span = 10 * N
    j = np.arange(span, dtype=float)[:, None]
    hi = wrap(lo + length)
    counts = np.empty(len(samples), dtype=np.int64)
    chunk = max(1, int(2e6) // span)
    for s0 in range(0, len(samples), chunk):
        block = samples[s0 : s0 + chunk]
        orbits = wrap(block[None, :] + j * alpha)
        hits = (circle_dist(orbits, lo) <= BOUNDARY_TOL) | (
            circle_dist(orbits, hi) <= BOUNDARY_TOL
        )
        counts[s0 : s0 + chunk] = hits.sum(axis=0)
    mild_ok = bool(counts.max() <= d)
    if not mild_ok:
        bad = int(np.argmax(counts))
        witnesses["mildness"] = {"x": float(samples[bad]), "hits": int(counts[bad])}

    report = CertificationReport(
        passed=good_ok and span_ok and mild_ok,
        good_ok=good_ok,
        span_ok=span_ok,
        mild_ok=mild_ok,
        n=n,
        N=N,
        d=d,
        grid_size=grid_size,
        orbit_samples=len(samples),
        witnesses=witnesses,
    )
    if update:
        tower.certified = report.passed
        tower.report = report
    return report


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _convergent_pair(alpha, n_target, max_terms=64):
    """Convergents (p_{k-1}, q_{k-1}), (p_k, q_k) with q_k >= n_target."""
    cf = ContinuedFraction.from_float(alpha, max_terms=max_terms)
    conv = cf.convergents()
    prev = (0, 1)
    for p, q in conv:
        if q >= n_target:
            return prev, (p, q)
        prev = (p, q)
    raise ValueError(
        f"not enough continued-fraction accuracy in alpha={alpha!r} to reach "
        f"tower height {n_target} (largest denominator {prev[1]})"
    )


def _beta(alpha, pq):
    p, q = pq
    return abs(q * alpha - p)


def _minimal_covering_N(alpha, lo, length, n, cap):
    """Smallest N <= cap such that arcs of the given length at lo + i*alpha,
    i < N, cover the circle (exact sorted-gap computation; covering is
    monotone in N, so bisect)."""

    def covers(N):
        starts = np.sort(wrap(lo + np.arange(N, dtype=float) * alpha))
        gaps = np.diff(np.concatenate([starts, starts[:1] + 1.0]))
        return gaps.max() <= length + MEMBER_TOL

    if not covers(cap):
        return None
    lo_N, hi_N = n, cap
    if covers(lo_N):
        return lo_N
    while hi_N - lo_N > 1:
        mid = (lo_N + hi_N) // 2
        if covers(mid):
            hi_N = mid
        else:
            lo_N = mid
    return hi_N


def build_rotation_tower(system, n_target, grid_size=None, anchor=0.0):
    """Certified 1-mild tower of height q_k >= n_target over a rotation.

    The base arc has length (beta_k + beta_{k-1})/2: q_k-goodness holds
    because no orbit point returns closer than beta_{k-1} before time q_k,
    and the two endpoints lie on distinct orbits (the half-sum of consecutive
    convergent errors is never in Z alpha + Z), so no orbit meets the
    boundary more than once.
    """
    if isinstance(system, (int, float)):
        system = Rotation(system)
    factor, _ = system.rotation_factor()
    if getattr(factor, "periodic", False):
        raise ValueError("rotation towers require an irrational rotation")
    alpha = factor.alpha
    n_target = int(n_target)
    if n_target <= 1:
        tower = Tower(system, 0.0, 1.0, 1, 1, 0, certified=False)
        certify(tower, grid_size=grid_size)
        return tower

    pq_prev, pq = _convergent_pair(alpha, n_target)
    n = pq[1]
    length = 0.5 * (_beta(alpha, pq) + _beta(alpha, pq_prev))
    cap = 3 * n - 1
    N = _minimal_covering_N(alpha, anchor, length, n, cap)
    if N is None:
        raise CertificationError(
            f"no covering count <= {cap} for tower height {n} at alpha={alpha}"
        )
    tower = Tower(system, anchor, length, n, N, 1, certified=False)
    report = certify(tower, grid_size=grid_size)
    if not report.passed:
        raise CertificationError(report.summary())
    return tower


def single_orbit_tower(system, n_target, grid_size=None, anchor=0.0):
    """Certified 2-mild tower whose base arc has length beta_k = |q_k alpha - p_k|.

    Both endpoints of the arc lie on one orbit, so every boundary excursion
    passes through a single interior anchor; the price is d = 2.
    """
    if isinstance(system, (int, float)):
        system = Rotation(system)
    factor, _ = system.rotation_factor()
    if getattr(factor, "periodic", False):
        raise ValueError("rotation towers require an irrational rotation")
    alpha = factor.alpha
    n_target = int(n_target)
    if n_target <= 1:
        return build_rotation_tower(system, 1, grid_size=grid_size)

    _, pq = _convergent_pair(alpha, n_target)
    n = pq[1]
    length = _beta(alpha, pq)
    cap = 3 * n - 1
    N = _minimal_covering_N(alpha, anchor, length, n, cap)
    if N is None:
        raise CertificationError(
            f"no covering count <= {cap} for tower height {n} at alpha={alpha}"
        )
    tower = Tower(system, anchor, length, n, N, 2, certified=False)
    report = certify(tower, grid_size=grid_size)
    if not report.passed:
        raise CertificationError(report.summary())
    return tower


def lift_tower_through_factor(tower, system):
    """Lift a certified rotation tower to a system having that rotation as a
    factor.  The lifted base set is the full preimage of the base arc, its
    boundary the preimage of the arc's endpoints, so all parameters carry
    over and certification is inherited."""
    factor, _ = system.rotation_factor()
    if abs(factor.alpha - tower.factor.alpha) > 1e-15:
        raise ValueError("system's rotation factor does not match the tower's rotation")
    lifted = Tower(
        system,
        tower.lo,
        tower.length,
        tower.n,
        tower.N,
        tower.d,
        certified=tower.certified,
        report=tower.report,
    )
    return lifted
