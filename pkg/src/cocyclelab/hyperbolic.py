"""Poincare disk action of SL(2,R), adjustment maps, Hilbert metric, winding solver.

The disk model is reached from the standard Mobius action on the upper half
plane through the fixed equivalence w = (-iz - i)/(z - 1), z = (w - i)/(w + i).
Composing the three Mobius maps symbolically gives a single complex fractional
linear map per matrix,

    A = [[a, b], [c, d]]  acts by  z -> (alpha z + beta) / (-conj(beta) z - conj(alpha)),
    alpha = (b - c) - i (a + d),   beta = -(b + c) - i (a - d),

which is what everything here evaluates: one division per point, no excursion
through the half plane, no spurious pole at z = 1.

Distances use  sinh(d(z1,z2)/2) = |z1 - z2| / sqrt((1-|z1|^2)(1-|z2|^2)),
an exact identity for the curvature -1 metric 2|dz|/(1-|z|^2).  For operator
norms (d to the origin can reach 2 log 1e4) the half-plane route through A.i
avoids the 1-|z|^2 cancellation entirely; see norm_via_disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base_dynamics import PrecisionError
from .mat2 import (
    identity,
    inv_sl2,
    mat2,
    norm_minus_id,
    rotation,
    sl_renormalize,
    spectral_norm,
)

__all__ = [
    "DISK_EDGE_TOL",
    "AdjustmentBoundError",
    "check_disk_point",
    "disk_action",
    "hyp_dist",
    "dist_to_zero",
    "action_dist_zero",
    "norm_via_disk",
    "m_point",
    "phi_adjust",
    "geodesic_point",
    "psi_n_adjust",
    "ProjInterval",
    "proj_angle",
    "wrap_pi",
    "wrap_half_pi",
    "hilbert_norm",
    "hilbert_dist",
    "map_interval",
    "WindingSolution",
    "WindingNoSolution",
    "winding_solve",
]

# Points this close to the unit circle are no longer trustworthy in double
# precision (1 - |z|^2 has lost more than half its bits), so construction and
# Mobius output both refuse to cross it.
DISK_EDGE_TOL = 1e-12


class AdjustmentBoundError(RuntimeError):
    """A correction step exceeded its contracted norm budget."""


def check_disk_point(z):
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) >= 1.0 - DISK_EDGE_TOL):
        raise PrecisionError("point too close to the unit circle for the disk model")
    return z


def _disk_coeffs(mats):
    mats = np.asarray(mats, dtype=float)
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    alpha = (b - c) - 1j * (a + d)
    beta = -(b + c) - 1j * (a - d)
    return alpha, beta


def disk_action(mats, z, guard=True):
    """Apply the disk action of mats (..., 2, 2) to points z (broadcast).

    guard=True raises PrecisionError if an output lands within DISK_EDGE_TOL
    of the unit circle, where subsequent geometry would silently lose
    precision.  Iterating a hyperbolic matrix drives points there at rate
    e^{-2n per step}, so long hyperbolic pushes should use matrix-side
    quantities (norms, fixed points) instead of disk orbits.
    """
    z = np.asarray(z, dtype=complex)
    alpha, beta = _disk_coeffs(mats)
    out = (alpha * z + beta) / (-np.conj(beta) * z - np.conj(alpha))
    if guard and np.any(np.abs(out) >= 1.0 - DISK_EDGE_TOL):
        raise PrecisionError("disk action output within 1e-12 of the unit circle")
    return out


def _one_minus_sq(z):
    return 1.0 - (z.real * z.real + z.imag * z.imag)


def hyp_dist(z1, z2):
    """Hyperbolic distance in the disk (curvature -1, metric 2|dz|/(1-|z|^2))."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    num = np.abs(z1 - z2)
    den = np.sqrt(_one_minus_sq(z1) * _one_minus_sq(z2))
    return 2.0 * np.arcsinh(num / den)


def dist_to_zero(z):
    z = np.asarray(z, dtype=complex)
    return 2.0 * np.arctanh(np.abs(z))


def action_dist_zero(mats):
    """d(A.0, 0), computed in the half plane where it is cancellation-free.

    The disk origin corresponds to i, and A.i = ((ac + bd) + i det A)/(c^2 + d^2).
    With sinh(d/2) = |A.i - i| / (2 sqrt(Im A.i)) every intermediate stays
    polynomial in the entries, so the result holds full relative precision
    even when ||A|| is large and the disk image would hug the unit circle.
    """
    mats = np.asarray(mats, dtype=float)
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    den = c * c + d * d
    det = a * d - b * c
    re = (a * c + b * d) / den
    im = det / den
    x = np.sqrt(re * re + (im - 1.0) ** 2) / (2.0 * np.sqrt(im))
    return 2.0 * np.arcsinh(x)


def norm_via_disk(mats):
    """Operator norm recovered from the hyperbolic displacement of the origin.

    For unimodular A, ||A|| = e^{d(A.0, 0)/2}; with sinh(d/2) = x this is
    exactly x + sqrt(1 + x^2), no exp/log round trips.  The det^{1/2}
    prefactor extends the identity to positive determinants, which matters
    numerically: at ||A|| ~ 1e4 the determinant of the stored entries is
    itself only defined to ~1e-8 absolute (ad and bc cancel at 1e8), and
    the prefactor cancels that indeterminacy instead of inheriting it.
    """
    from .mat2 import det2

    x = np.sinh(0.5 * action_dist_zero(mats))
    return np.sqrt(det2(mats)) * (x + np.hypot(1.0, x))


def m_point(p):
    """The symmetric positive unimodular matrix moving the disk origin to p.

    For p = x + iy inside the disk,

        M_p = [[1 + x, -y], [-y, 1 - x]] / sqrt(1 - x^2 - y^2),

    which is symmetric, has determinant one, depends smoothly on p, and
    satisfies M_p . 0 = p (the sign of y follows from R_phi acting on the
    disk as rotation by -2 phi).  Accepts stacked p, returns (..., 2, 2).
    """
    p = check_disk_point(p)
    x = p.real
    y = p.imag
    scale = 1.0 / np.sqrt(1.0 - x * x - y * y)
    return mat2(1.0 + x, -y, -y, 1.0 - x) * scale[..., None, None]


def phi_adjust(p1, p2):
    """Continuous choice of M in SL(2,R) with M . p1 = p2.

    Built as m_point(p2) @ m_point(p1)^{-1}; equals Id when p1 = p2 and
    satisfies ||M - Id|| <= e^{d(p1,p2)} - 1 (asserted in the test suite,
    with the radial direction attaining e^{d/2} - 1).
    """
    return m_point(p2) @ inv_sl2(m_point(p1))


def geodesic_point(z1, z2, frac):
    """Point at arclength fraction frac along the geodesic from z1 to z2."""
    z1 = complex(z1)
    z2 = complex(z2)
    u = (z2 - z1) / (1.0 - z1.conjugate() * z2)
    r = abs(u)
    if r < 1e-300:
        return z1
    v = math.tanh(frac * math.atanh(min(r, 1.0 - 1e-16))) * (u / r)
    return (v + z1) / (1.0 + z1.conjugate() * v)


# ---------------------------------------------------------------------------
# n-step adjustment
# ---------------------------------------------------------------------------

def _gauge_angle(z, w):
    """Smooth initial gauge for the stabilizer rotation in a correction step.

    Moving z to w costs least when the angular part of the move rides a
    near-rotation about the origin.  Linearizing ||M_w R_phi M_z^{-1} - Id||
    in the step gives the minimizer phi = (dtheta/2)(sech(rho) - 1) with rho
    the mean hyperbolic radius; the resulting linearized cost is
    sqrt((drho/2)^2 + (dtheta/2 tanh rho)^2) <= (step length)/2, which is
    what the per-step budget e^{d/2n} - 1 requires.
    """
    rz = abs(z)
    rw = abs(w)
    if min(rz, rw) < 1e-14:
        return 0.0
    dtheta = wrap_pi(math.atan2(w.imag, w.real) - math.atan2(z.imag, z.real))
    rho = math.atanh(min(rz, 1.0 - 1e-16)) + math.atanh(min(rw, 1.0 - 1e-16))
    return 0.5 * dtheta * (1.0 / math.cosh(rho) - 1.0)


def _frob_objective(mw, mz_inv, phi):
    g = mw @ rotation(phi) @ mz_inv
    r = g - identity()
    f = float(np.sum(r * r))
    gp = mw @ rotation(phi + 0.5 * math.pi) @ mz_inv
    fp = 2.0 * float(np.sum(r * gp))
    fpp = 2.0 * (float(np.sum(gp * gp)) - float(np.sum(r * g)))
    return f, fp, fpp


def _polish_gauge(mw, mz_inv, phi):
    for _ in range(4):
        _, fp, fpp = _frob_objective(mw, mz_inv, phi)
        if fpp <= 0.0:
            break
        step = fp / fpp
        if abs(step) > 0.5:
            step = math.copysign(0.5, step)
        phi -= step
        if abs(step) < 1e-14:
            break
    return phi


def _global_gauge(mw, mz_inv):
    phis = np.linspace(-math.pi, math.pi, 257)
    costs = norm_minus_id(mw @ rotation(phis) @ mz_inv)
    k = int(np.argmin(costs))
    lo = phis[max(k - 1, 0)]
    hi = phis[min(k + 1, len(phis) - 1)]
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - golden * (b - a)
    c2 = a + golden * (b - a)
    f1 = float(norm_minus_id(mw @ rotation(c1) @ mz_inv))
    f2 = float(norm_minus_id(mw @ rotation(c2) @ mz_inv))
    for _ in range(60):
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - golden * (b - a)
            f1 = float(norm_minus_id(mw @ rotation(c1) @ mz_inv))
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + golden * (b - a)
            f2 = float(norm_minus_id(mw @ rotation(c2) @ mz_inv))
    return 0.5 * (a + b)


def _step_correction(z, w, budget):
    """Minimal-norm-flavored C in SL(2,R) with C . z = w, exactly.

    Every solution has the form M_w R_phi M_z^{-1} (the stabilizer of the
    origin is SO(2)), so the constraint is exact for any phi and the angle
    is a pure gauge spent on shrinking ||C - Id||.  A smooth closed-form
    initializer plus a Newton polish keeps the choice continuous in (z, w);
    a global sweep backs it up if the budget check ever fails upstream.
    """
    if z == w:
        return identity(), 0.0
    mw = m_point(w)
    mz_inv = inv_sl2(m_point(z))
    phi = _polish_gauge(mw, mz_inv, _gauge_angle(z, w))
    corr = mw @ rotation(phi) @ mz_inv
    cost = float(norm_minus_id(corr))
    if cost > budget * (1.0 + 1e-9) + 1e-15:
        phi2 = _global_gauge(mw, mz_inv)
        corr2 = mw @ rotation(phi2) @ mz_inv
        cost2 = float(norm_minus_id(corr2))
        if cost2 < cost:
            corr, cost = corr2, cost2
    return corr, cost


def psi_n_adjust(mats, p, q, check=True, return_info=False):
    """Adjust an n-step matrix chain so its composition maps p exactly to q.

    Targets are the pull-backs, through the tail of the original chain, of
    equally spaced points on the geodesic from the current endpoint to q;
    pulling back by isometries makes every step correct hyperbolic distance
    d/n on the nose.  Each per-step correction multiplies on the left and
    satisfies ||corr - Id|| <= e^{d/(2n)} - 1; with check=True a violation
    raises AdjustmentBoundError instead of returning silently.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or mats.shape[1:] != (2, 2) or mats.shape[0] < 1:
        raise ValueError("expected a nonempty stack of 2x2 matrices")
    n = mats.shape[0]
    p = complex(np.asarray(p, dtype=complex))
    q = complex(np.asarray(q, dtype=complex))
    check_disk_point([p, q])

    cur = p
    for i in range(n):
        cur = complex(disk_action(mats[i], cur))
    end = cur
    total = float(hyp_dist(end, q))
    if total == 0.0:
        out = mats.copy()
        if return_info:
            return out, {"total_dist": 0.0, "budget": 0.0, "step_costs": [0.0] * n}
        return out
    budget = math.expm1(total / (2.0 * n))

    targets = np.empty(n + 1, dtype=complex)
    targets[n] = q
    acc = identity()
    # targets[i] = (A_n ... A_{i+1})^{-1} . g(i/n) on the correction geodesic
    for i in range(n - 1, -1, -1):
        acc = sl_renormalize(inv_sl2(mats[i]) @ acc)
        targets[i] = disk_action(acc, geodesic_point(end, q, i / n))

    out = np.empty_like(mats)
    costs = []
    cur = p
    for i in range(n):
        z = complex(disk_action(mats[i], cur))
        corr, cost = _step_correction(z, targets[i + 1], budget)
        out[i] = corr @ mats[i]
        costs.append(cost)
        cur = complex(disk_action(out[i], cur))

    residual = float(hyp_dist(cur, q))
    worst = max(costs)
    if check:
        if worst > budget * (1.0 + 1e-9) + 1e-12:
            raise AdjustmentBoundError(
                f"per-step correction {worst:.3e} exceeds budget {budget:.3e}"
            )
        if residual > 1e-8:
            raise AdjustmentBoundError(
                f"endpoint residual {residual:.3e} exceeds 1e-8"
            )
    if return_info:
        return out, {
            "total_dist": total,
            "budget": budget,
            "step_costs": costs,
            "endpoint_residual": residual,
        }
    return out


# ---------------------------------------------------------------------------
# Projective line: angles, intervals, Hilbert metric
# ---------------------------------------------------------------------------

def wrap_pi(x):
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - x) % (2.0 * math.pi)


def wrap_half_pi(x):
    """Wrap to (-pi/2, pi/2]: the natural distance-to-zero on angles mod pi."""
    return 0.5 * math.pi - (0.5 * math.pi - x) % math.pi


def proj_angle(v):
    """Angle in [0, pi) of a nonzero direction vector (..., 2)."""
    v = np.asarray(v, dtype=float)
    return np.arctan2(v[..., 1], v[..., 0]) % math.pi


@dataclass(frozen=True)
class ProjInterval:
    """Open arc on the projective line: angles start to start+length, mod pi.

    length must lie in (0, pi) strictly; at length pi the complement would
    be a single point and the Hilbert metric degenerates.
    """

    start: float
    length: float

    def __post_init__(self):
        if not (0.0 < self.length < math.pi - DISK_EDGE_TOL):
            raise ValueError("interval length must lie strictly inside (0, pi)")

    def local(self, theta):
        """Offset of theta inside the arc, in (0, length) for interior points."""
        return (theta - self.start) % math.pi

    def contains(self, theta, tol=1e-12):
        t = self.local(theta)
        return tol < t < self.length - tol


def _model_coordinate(interval, theta):
    t = interval.local(theta)
    if t <= 1e-12 or t >= interval.length - 1e-12:
        raise ValueError("point not interior to the projective interval")
    return t


def hilbert_norm(interval, theta, dtheta=1.0):
    """Hilbert (Finsler) norm of the tangent dtheta at angle theta inside I.

    Mapping I linearly onto the model interval {(1, y) : y > 0} sends the
    point at offset t to y = sin t / sin(L - t), where the metric is dy/y;
    pulling back gives ||d theta|| = sin L / (sin t sin(L - t)).
    """
    t = _model_coordinate(interval, theta)
    L = interval.length
    return abs(dtheta) * math.sin(L) / (math.sin(t) * math.sin(L - t))


def hilbert_dist(interval, theta1, theta2):
    """Hilbert distance between two interior angles of I (log cross-ratio)."""
    t1 = _model_coordinate(interval, theta1)
    t2 = _model_coordinate(interval, theta2)
    L = interval.length
    y1 = math.sin(t1) / math.sin(L - t1)
    y2 = math.sin(t2) / math.sin(L - t2)
    return abs(math.log(y2 / y1))


def map_interval(mats, interval):
    """Image of a projective interval under a positive-determinant matrix."""
    mats = np.asarray(mats, dtype=float)
    a0 = interval.start
    a1 = interval.start + interval.length
    va = mats @ np.array([math.cos(a0), math.sin(a0)])
    vb = mats @ np.array([math.cos(a1), math.sin(a1)])
    na = float(proj_angle(va))
    nb = float(proj_angle(vb))
    length = (nb - na) % math.pi
    if length <= 0.0 or length >= math.pi - DISK_EDGE_TOL:
        raise ValueError("image interval degenerate at this precision")
    return ProjInterval(na, length)


# ---------------------------------------------------------------------------
# Winding solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindingSolution:
    theta: float
    residual: float
    covered_arc: float
    evaluations: int


@dataclass(frozen=True)
class WindingNoSolution:
    """Certificate that no theta in [-eps, eps] maps v to w.

    The projective angle moved by the interleaved product over the sweep is
    covered_arc; since each of the n+1 rotation slots advances the image at
    rate at least 1/||suffix||^2, a miss forces
    max suffix norm >= sqrt(2 eps (n+1) / covered_arc) >= required_norm.
    crosscheck_pass records that the observed norms do exceed that bound.
    """

    covered_arc: float
    required_norm: float
    max_suffix_norm: float
    crosscheck_pass: bool
    evaluations: int


def _interleaved_angle(mats, theta, v_angle):
    u = np.array([math.cos(v_angle), math.sin(v_angle)])
    c, s = math.cos(theta), math.sin(theta)
    for k in range(mats.shape[0] + 1):
        u = np.array([c * u[0] - s * u[1], s * u[0] + c * u[1]])
        if k < mats.shape[0]:
            u = mats[k] @ u
            nrm = math.hypot(u[0], u[1])
            u /= nrm
    return math.atan2(u[1], u[0]) % math.pi


def _max_suffix_norm(mats, theta):
    acc = identity()
    worst = 1.0
    r = rotation(theta)
    for k in range(mats.shape[0] - 1, -1, -1):
        acc = acc @ r @ mats[k]
        acc = acc / np.sqrt(np.abs(np.linalg.det(acc)))
        worst = max(worst, float(spectral_norm(acc)))
    worst = max(worst, float(spectral_norm(acc @ r)))
    return worst


def winding_solve(mats, v_angle, w_angle, eps, resid_tol=1e-8, coarse=65):
    """Solve R_t A_{n-1} R_t ... A_0 R_t . v = w for t in [-eps, eps].

    The image angle is strictly increasing in t (each rotation slot turns
    the running direction forward and positive-determinant matrices preserve
    orientation), so after building a continuous lift of the image angle on
    an adaptively refined grid the equation reduces to bisection.  When no
    branch of w lies inside the swept arc the return value is a
    WindingNoSolution carrying the norm lower bound certificate.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.size == 0:
        mats = np.empty((0, 2, 2))
    if not (0.0 < eps < 0.5 * math.pi):
        raise ValueError("eps must lie in (0, pi/2)")
    v_angle = float(v_angle) % math.pi
    w_angle = float(w_angle) % math.pi

    evals = 0

    def raw(theta):
        nonlocal evals
        evals += 1
        return _interleaved_angle(mats, theta, v_angle)

    thetas = list(np.linspace(-eps, eps, coarse))
    raws = [raw(t) for t in thetas]
    # refine until every unwrap increment is unambiguous (< pi/3)
    i = 0
    depth_guard = 0
    while i < len(thetas) - 1:
        d = (raws[i + 1] - raws[i]) % math.pi
        if d > math.pi / 3.0 and thetas[i + 1] - thetas[i] > 1e-13:
            mid = 0.5 * (thetas[i] + thetas[i + 1])
            thetas.insert(i + 1, mid)
            raws.insert(i + 1, raw(mid))
            depth_guard += 1
            if depth_guard > 200000:
                raise RuntimeError("winding refinement failed to stabilize")
        else:
            i += 1

    lift = [raws[0]]
    for i in range(1, len(thetas)):
        inc = (raws[i] - raws[i - 1]) % math.pi
        if inc < -1e-9:
            raise RuntimeError("image angle decreased; monotonicity violated")
        lift.append(lift[-1] + inc)
    covered = lift[-1] - lift[0]

    # candidate branches w + k pi inside [lift[0], lift[-1]]
    k_lo = math.ceil((lift[0] - w_angle) / math.pi - 1e-12)
    k_hi = math.floor((lift[-1] - w_angle) / math.pi + 1e-12)
    candidates = [w_angle + k * math.pi for k in range(k_lo, k_hi + 1)]

    if not candidates:
        required = math.sqrt(2.0 * eps * (mats.shape[0] + 1) / max(covered, 1e-300))
        max_norm = max(
            _max_suffix_norm(mats, t) for t in (-eps, 0.0, eps)
        )
        return WindingNoSolution(
            covered_arc=covered,
            required_norm=required,
            max_suffix_norm=max_norm,
            crosscheck_pass=bool(max_norm >= required * (1.0 - 1e-9)),
            evaluations=evals,
        )

    best = None
    for target in candidates:
        # locate bracketing grid cell in the lift
        j = int(np.searchsorted(lift, target))
        j = min(max(j, 1), len(lift) - 1)
        lo, hi = thetas[j - 1], thetas[j]
        flo = lift[j - 1] - target
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = raw(mid)
            # place val on the branch nearest the target
            branch = val + math.pi * round((target - val) / math.pi)
            if (branch - target) * (1 if flo <= 0 else -1) >= 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-15:
                break
        theta_star = 0.5 * (lo + hi)
        resid = abs(wrap_half_pi(raw(theta_star) - w_angle))
        if best is None or abs(theta_star) < abs(best[0]):
            if resid <= resid_tol:
                best = (theta_star, resid)

    if best is None:
        required = math.sqrt(2.0 * eps * (mats.shape[0] + 1) / max(covered, 1e-300))
        max_norm = max(_max_suffix_norm(mats, t) for t in (-eps, 0.0, eps))
        return WindingNoSolution(
            covered_arc=covered,
            required_norm=required,
            max_suffix_norm=max_norm,
            crosscheck_pass=bool(max_norm >= required * (1.0 - 1e-9)),
            evaluations=evals,
        )
    return WindingSolution(
        theta=best[0], residual=best[1], covered_arc=covered, evaluations=evals
    )
