"""2x2 real matrix kit tuned for SL(2,R) work.

A "Mat2" throughout this package is a float ndarray of shape (2, 2), row
major, so the entries a, b, c, d of

    [[a, b],
     [c, d]]

are exactly the array entries.  Every routine here also accepts stacked
arrays of shape (..., 2, 2) and broadcasts, which is what lets parameter
sweeps (energy grids, phase grids) run through numpy in bulk instead of
one matrix at a time.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "mat2",
    "identity",
    "rotation",
    "diag_hyp",
    "shear",
    "schrodinger_step",
    "det2",
    "inv2",
    "inv_sl2",
    "spectral_norm",
    "norm_minus_id",
    "frobenius_norm",
    "polar_angle",
    "sl_renormalize",
    "random_sl2",
    "DET_TOL",
]

# Determinant drift allowed before renormalized products are considered
# corrupted.  Products renormalize multiplicatively, so drift stays near
# machine epsilon per factor; 1e-9 leaves five orders of headroom.
DET_TOL = 1e-9


def mat2(a, b, c, d):
    """Assemble entries (broadcast against each other) into (..., 2, 2)."""
    a, b, c, d = np.broadcast_arrays(
        np.asarray(a, dtype=float),
        np.asarray(b, dtype=float),
        np.asarray(c, dtype=float),
        np.asarray(d, dtype=float),
    )
    out = np.empty(a.shape + (2, 2), dtype=float)
    out[..., 0, 0] = a
    out[..., 0, 1] = b
    out[..., 1, 0] = c
    out[..., 1, 1] = d
    return out


def identity(shape=()):
    """Stacked identity matrices of the requested leading shape."""
    out = np.zeros(tuple(np.atleast_1d(shape)) + (2, 2)) if shape else np.zeros((2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    return out


def rotation(theta):
    """R_theta = [[cos, -sin], [sin, cos]], stacked over theta."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return mat2(c, -s, s, c)


def diag_hyp(s):
    """diag(e^s, e^-s): the hyperbolic one-parameter subgroup."""
    s = np.asarray(s, dtype=float)
    e = np.exp(s)
    return mat2(e, 0.0, 0.0, 1.0 / e)


def shear(t, upper=True):
    """Unipotent [[1, t], [0, 1]] (or its transpose for upper=False)."""
    t = np.asarray(t, dtype=float)
    if upper:
        return mat2(1.0, t, 0.0, 1.0)
    return mat2(1.0, 0.0, t, 1.0)


def schrodinger_step(t):
    """[[t, -1], [1, 0]]: the one-step transfer matrix at local value t."""
    t = np.asarray(t, dtype=float)
    return mat2(t, -1.0, 1.0, 0.0)


def det2(m):
    m = np.asarray(m, dtype=float)
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv2(m):
    """General 2x2 inverse via the adjugate."""
    m = np.asarray(m, dtype=float)
    d = det2(m)
    adj = mat2(m[..., 1, 1], -m[..., 0, 1], -m[..., 1, 0], m[..., 0, 0])
    return adj / d[..., None, None]


def inv_sl2(m):
    """Inverse assuming det = 1: the adjugate itself, exact in floats."""
    m = np.asarray(m, dtype=float)
    return mat2(m[..., 1, 1], -m[..., 0, 1], -m[..., 1, 0], m[..., 0, 0])


def frobenius_norm(m):
    m = np.asarray(m, dtype=float)
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


def spectral_norm(m):
    """Largest singular value, closed form.

    With q = ||m||_F^2 / 2 and D = |det m|, the singular values squared are
    the roots of t^2 - 2qt + D^2, so sigma_max^2 = q + sqrt((q-D)(q+D)).
    The factored discriminant keeps precision when m is nearly conformal
    (q close to D), which is exactly the near-rotation regime the
    adjustment bounds live in.
    """
    m = np.asarray(m, dtype=float)
    q = 0.5 * np.sum(m * m, axis=(-2, -1))
    dabs = np.abs(det2(m))
    disc = (q - dabs) * (q + dabs)
    disc = np.maximum(disc, 0.0)
    return np.sqrt(q + np.sqrt(disc))


def norm_minus_id(m):
    """Spectral norm of (m - Id), stacked."""
    m = np.asarray(m, dtype=float)
    return spectral_norm(m - identity())


def polar_angle(m):
    """Rotation angle of the polar factor of m (det m > 0 assumed).

    Writing m = P R with P symmetric positive definite and R a rotation,
    the angle of R is atan2(c - b, a + d).  The convention degenerates
    only at a + d = c - b = 0, where the polar factor is a half turn and
    atan2 returns 0; callers tracking continuous lifts never sit exactly
    on that set.
    """
    m = np.asarray(m, dtype=float)
    return np.arctan2(m[..., 1, 0] - m[..., 0, 1], m[..., 0, 0] + m[..., 1, 1])


def sl_renormalize(m, tol=DET_TOL):
    """Rescale to determinant one; reject if drift exceeds tol.

    Products of unimodular factors drift multiplicatively in their
    determinant; a drift beyond tol means the product itself is garbage,
    not merely denormalized, so this raises instead of papering over it.
    """
    m = np.asarray(m, dtype=float)
    d = det2(m)
    if np.any(d <= 0):
        raise ValueError("determinant must stay positive to renormalize")
    if np.any(np.abs(d - 1.0) > max(tol, 1e-6)):
        bad = float(np.max(np.abs(d - 1.0)))
        raise ValueError(f"determinant drifted by {bad:.3e}; product unreliable")
    return m / np.sqrt(d)[..., None, None]


def random_sl2(rng, size=None, max_log_norm=2.0):
    """Haar-ish random SL(2,R) samples with ||A|| <= exp(max_log_norm).

    Built as R_a diag(e^s, e^-s) R_b with uniform angles and s uniform on
    [0, max_log_norm], so the operator norm is exactly e^s and test suites
    can dial the conditioning they want.
    """
    if size is None:
        shape = ()
    elif np.isscalar(size):
        shape = (int(size),)
    else:
        shape = tuple(size)
    a = rng.uniform(0.0, 2.0 * np.pi, shape)
    b = rng.uniform(0.0, 2.0 * np.pi, shape)
    s = rng.uniform(0.0, max_log_norm, shape)
    return rotation(a) @ diag_hyp(s) @ rotation(b)
