"""Base dynamics: circle rotations, torus translations, skew shifts, Anzai
skew products, and the continued-fraction utilities they rest on.

All systems act on the d-torus with coordinates in [0, 1).  Points are plain
floats (circle) or small numpy arrays (torus); orbits are returned as numpy
arrays of shape (n,) or (n, dim).
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0

# Wrap tolerance: two angles closer than this (wrap-aware) are treated as the
# same point when testing invariants such as step_inverse(step(x)) == x.
WRAP_TOL = 1e-12


class PrecisionError(ValueError):
    """Raised when a request cannot be met at float precision."""


def wrap(x):
    """Reduce to the fundamental domain [0, 1).  Works on scalars and arrays."""
    return np.mod(x, 1.0)


def circle_dist(a, b):
    """Wrap-aware distance on the circle, in [0, 1/2]."""
    d = np.abs(wrap(a) - wrap(b))
    return np.minimum(d, 1.0 - d)


def dist_to_integers(x):
    """Distance from x to the nearest integer, in [0, 1/2]."""
    f = np.mod(x, 1.0)
    return np.minimum(f, 1.0 - f)


# ---------------------------------------------------------------------------
# Continued fractions
# ---------------------------------------------------------------------------


class ContinuedFraction:
    """Continued fraction [a0; a1, a2, ...] of a real number in [0, 1).

    Terms are exact integers; convergents p_k/q_k are built with integer
    arithmetic.  Expansions of floats stop once the remainder falls below the
    resolution the float carries, so every stored term is trustworthy.
    """

    def __init__(self, terms, value=None):
        self.terms = [int(a) for a in terms]
        if len(self.terms) == 0 or self.terms[0] != 0:
            raise ValueError("expected an expansion [0; a1, a2, ...] of a number in [0,1)")
        self.value = float(value) if value is not None else self._value_from_terms()

    @classmethod
    def from_float(cls, x, max_terms=64):
        x = float(x)
        if not 0.0 <= x < 1.0:
            raise ValueError("continued fraction input must lie in [0, 1)")
        terms = [0]
        r = x
        # Track the denominator growth; once q*q exceeds 1/eps the float can
        # no longer distinguish the tail and expansion must stop.
        p_prev, q_prev, p_cur, q_cur = 1, 0, 0, 1
        for _ in range(max_terms):
            if r < 1e-18:
                break
            inv = 1.0 / r
            a = int(math.floor(inv))
            if a < 1:
                break
            p_prev, q_prev, p_cur, q_cur = p_cur, q_cur, a * p_cur + p_prev, a * q_cur + q_prev
            if q_cur * q_cur > 4.0 / np.finfo(float).eps:
                break
            terms.append(a)
            r = inv - a
        return cls(terms, value=x)

    @classmethod
    def golden(cls, n_terms=40):
        """Expansion of (sqrt(5)-1)/2: all partial quotients equal 1."""
        return cls([0] + [1] * n_terms, value=GOLDEN_MEAN)

    def _value_from_terms(self):
        v = 0.0
        for a in reversed(self.terms[1:]):
            v = 1.0 / (a + v)
        return v

    def convergents(self):
        """All convergents (p_k, q_k) with k >= 1, as exact integer pairs."""
        out = []
        p_prev, q_prev, p_cur, q_cur = 1, 0, 0, 1
        for a in self.terms[1:]:
            p_prev, q_prev, p_cur, q_cur = p_cur, q_cur, a * p_cur + p_prev, a * q_cur + q_prev
            out.append((p_cur, q_cur))
        return out

    def __repr__(self):
        head = ",".join(str(a) for a in self.terms[:8])
        tail = ",..." if len(self.terms) > 8 else ""
        return f"ContinuedFraction([{head}{tail}], value={self.value!r})"


def as_rational(alpha, max_den=1_000_000):
    """Return (p, q) if alpha is a rational p/q with q <= max_den at float
    resolution, else None."""
    cf = ContinuedFraction.from_float(wrap(alpha))
    conv = cf.convergents()
    if not conv:
        return (0, 1)
    eps = np.finfo(float).eps
    for p, q in conv:
        if q > max_den:
            return None
        # Rational only if the convergent reproduces the float to its last bits.
        if abs(alpha - p / q) < 4.0 * eps:
            return (p, q)
    return None


# ---------------------------------------------------------------------------
# Scalar fields on the torus (JSON-describable observables / Anzai drivers)
# ---------------------------------------------------------------------------


class ScalarField:
    """A real function on the circle with a JSON descriptor.

    Supported kinds:
      {"type": "zero"}
      {"type": "constant", "c": value}
      {"type": "trig", "cos": [c1, c2, ...], "sin": [s1, ...], "mean": m}
          x -> m + sum_k c_k cos(2 pi k x) + s_k sin(2 pi k x)
      {"type": "delta", "k": k}      the tent wave 2 dist(k x, Z)
      {"type": "amo", "coupling": l} x -> 2 l cos(2 pi x)
      {"type": "square", "c": c}     c on [0, 1/2), -c on [1/2, 1)
      {"type": "sum", "parts": [...]}
    """

    def __init__(self, config):
        self.config = dict(config)
        kind = self.config.get("type")
        if kind not in ("zero", "constant", "trig", "delta", "amo", "square", "sum"):
            raise ValueError(f"unknown scalar field type: {kind!r}")
        if kind == "sum":
            self._parts = [ScalarField(p) for p in self.config["parts"]]

    def __call__(self, x):
        cfg = self.config
        kind = cfg["type"]
        x = np.asarray(x, dtype=float)
        if kind == "zero":
            return np.zeros_like(x)
        if kind == "constant":
            return np.full_like(x, float(cfg["c"]))
        if kind == "amo":
            return 2.0 * float(cfg["coupling"]) * np.cos(2.0 * np.pi * x)
        if kind == "square":
            return float(cfg["c"]) * np.where(x % 1.0 < 0.5, 1.0, -1.0)
        if kind == "delta":
            return 2.0 * dist_to_integers(int(cfg["k"]) * x)
        if kind == "trig":
            out = np.full_like(x, float(cfg.get("mean", 0.0)))
            for k, c in enumerate(cfg.get("cos", []), start=1):
                out = out + float(c) * np.cos(2.0 * np.pi * k * x)
            for k, s in enumerate(cfg.get("sin", []), start=1):
                out = out + float(s) * np.sin(2.0 * np.pi * k * x)
            return out
        # sum
        out = np.zeros_like(x)
        for part in self._parts:
            out = out + part(x)
        return out

    def mean(self):
        """Exact integral over the circle (all supported kinds have one)."""
        cfg = self.config
        kind = cfg["type"]
        if kind == "zero":
            return 0.0
        if kind == "constant":
            return float(cfg["c"])
        if kind == "amo":
            return 0.0
        if kind == "square":
            return 0.0
        if kind == "delta":
            return 0.5
        if kind == "trig":
            return float(cfg.get("mean", 0.0))
        return sum(p.mean() for p in self._parts)

    def to_config(self):
        return dict(self.config)


def anzai_delta(k):
    """The tent wave delta_k(x) = 2 dist(kx, Z): mean 1/2, Lipschitz 2k."""
    if int(k) < 1:
        raise ValueError("k must be a positive integer")
    return ScalarField({"type": "delta", "k": int(k)})


# ---------------------------------------------------------------------------
# Base systems
# ---------------------------------------------------------------------------


def _check_alpha(alpha, periodic, max_den):
    alpha = wrap(float(alpha))
    rat = as_rational(alpha, max_den=max_den)
    if rat is not None and not periodic:
        p, q = rat
        raise ValueError(
            f"alpha={alpha} is rational ({p}/{q}); pass periodic=True to work "
            "with a periodic system on purpose"
        )
    if rat is None and periodic:
        raise ValueError("periodic=True requires a rational alpha")
    return alpha, rat


class Rotation:
    """Irrational circle rotation x -> x + alpha (or a periodic one when
    constructed with periodic=True and rational alpha)."""

    dim = 1
    kind = "rotation"

    def __init__(self, alpha, periodic=False, max_den=1_000_000):
        self.alpha, self._rat = _check_alpha(alpha, periodic, max_den)
        self.periodic = bool(periodic)

    @classmethod
    def golden(cls):
        return cls(GOLDEN_MEAN)

    @property
    def period(self):
        return self._rat[1] if self.periodic else None

    def continued_fraction(self, max_terms=64):
        return ContinuedFraction.from_float(self.alpha, max_terms=max_terms)

    def step(self, x):
        return wrap(x + self.alpha)

    def step_inverse(self, x):
        return wrap(x - self.alpha)

    def orbit(self, x0, n):
        """Forward orbit [x0, f(x0), ..., f^{n-1}(x0)] as an (n,) array.

        Each point is computed directly from x0 + j*alpha, so rounding does
        not accumulate along the orbit.
        """
        j = np.arange(n, dtype=float)
        return wrap(float(x0) + j * self.alpha)

    def rotation_factor(self):
        return self, (lambda x: x)

    def to_config(self):
        return {"kind": self.kind, "alpha": self.alpha, "periodic": self.periodic}


class TorusTranslation:
    """Translation of the d-torus by a vector of frequencies."""

    kind = "torus_translation"

    def __init__(self, alphas, periodic=False, max_den=1_000_000):
        self.alphas = np.array([float(a) for a in alphas], dtype=float)
        if self.alphas.ndim != 1 or len(self.alphas) < 1:
            raise ValueError("alphas must be a nonempty vector")
        self.dim = len(self.alphas)
        self.periodic = bool(periodic)
        if not periodic:
            for a in self.alphas:
                _check_alpha(a, False, max_den)

    def step(self, x):
        return wrap(np.asarray(x, dtype=float) + self.alphas)

    def step_inverse(self, x):
        return wrap(np.asarray(x, dtype=float) - self.alphas)

    def orbit(self, x0, n):
        j = np.arange(n, dtype=float)[:, None]
        return wrap(np.asarray(x0, dtype=float)[None, :] + j * self.alphas[None, :])

    def rotation_factor(self):
        return Rotation(self.alphas[0], periodic=self.periodic), (lambda x: np.asarray(x)[..., 0])

    def to_config(self):
        return {"kind": self.kind, "alphas": list(self.alphas), "periodic": self.periodic}


class SkewShift:
    """Skew shift of the 2-torus: (x, y) -> (x + alpha, y + x)."""

    dim = 2
    kind = "skew_shift"

    def __init__(self, alpha, max_den=1_000_000):
        self.alpha, _ = _check_alpha(alpha, False, max_den)
        self.periodic = False

    def step(self, x):
        x = np.asarray(x, dtype=float)
        return wrap(np.stack([x[..., 0] + self.alpha, x[..., 1] + x[..., 0]], axis=-1))

    def step_inverse(self, x):
        x = np.asarray(x, dtype=float)
        x0 = wrap(x[..., 0] - self.alpha)
        return wrap(np.stack([x0, x[..., 1] - x0], axis=-1))

    def orbit(self, x0, n):
        # Closed form: x_j = x + j alpha, y_j = y + j x + j(j-1)/2 alpha.
        x, y = float(x0[0]), float(x0[1])
        j = np.arange(n, dtype=float)
        first = x + j * self.alpha
        second = y + j * x + 0.5 * j * (j - 1.0) * self.alpha
        return wrap(np.stack([first, second], axis=-1))

    def rotation_factor(self):
        return Rotation(self.alpha), (lambda x: np.asarray(x)[..., 0])

    def to_config(self):
        return {"kind": self.kind, "alpha": self.alpha}


class Anzai:
    """Skew product over a circle rotation: (x, y) -> (x + alpha, y + phi(x)).

    Strict ergodicity of such a system depends on phi and is assumed, not
    certified; the constructions here only require the rotation factor.
    """

    dim = 2
    kind = "anzai"

    def __init__(self, alpha, phi, max_den=1_000_000):
        self.alpha, _ = _check_alpha(alpha, False, max_den)
        self.phi = phi if isinstance(phi, ScalarField) else ScalarField(phi)
        self.periodic = False

    def step(self, x):
        x = np.asarray(x, dtype=float)
        return wrap(np.stack([x[..., 0] + self.alpha, x[..., 1] + self.phi(x[..., 0])], axis=-1))

    def step_inverse(self, x):
        x = np.asarray(x, dtype=float)
        x0 = wrap(x[..., 0] - self.alpha)
        return wrap(np.stack([x0, x[..., 1] - self.phi(x0)], axis=-1))

    def orbit(self, x0, n):
        x, y = float(x0[0]), float(x0[1])
        j = np.arange(n, dtype=float)
        first = wrap(x + j * self.alpha)
        incr = self.phi(first)
        second = np.empty(n, dtype=float)
        second[0] = y
        if n > 1:
            second[1:] = y + np.cumsum(incr[:-1])
        return wrap(np.stack([wrap(first), second], axis=-1))

    def rotation_factor(self):
        return Rotation(self.alpha), (lambda x: np.asarray(x)[..., 0])

    def to_config(self):
        return {"kind": self.kind, "alpha": self.alpha, "phi": self.phi.to_config()}


_SYSTEM_KINDS = {
    "rotation": lambda cfg: Rotation(cfg["alpha"], periodic=cfg.get("periodic", False)),
    "torus_translation": lambda cfg: TorusTranslation(
        cfg["alphas"], periodic=cfg.get("periodic", False)
    ),
    "skew_shift": lambda cfg: SkewShift(cfg["alpha"]),
    "anzai": lambda cfg: Anzai(cfg["alpha"], cfg["phi"]),
}


def system_from_config(cfg):
    kind = cfg.get("kind")
    if kind not in _SYSTEM_KINDS:
        raise ValueError(f"unknown system kind: {kind!r}")
    return _SYSTEM_KINDS[kind](cfg)


# ---------------------------------------------------------------------------
# Averaging
# ---------------------------------------------------------------------------


def birkhoff_average(system, g, x0, n, return_error=False):
    """Average of g along the first n orbit points.

    The error estimate is the spread between the full average and the
    averages over each half of the orbit, which tracks the actual
    equidistribution error well for the systems built here.
    """
    n = int(n)
    if n < 2:
        raise ValueError("n must be at least 2")
    orb = system.orbit(x0, n)
    vals = np.asarray(g(orb) if system.dim > 1 else g(orb), dtype=float)
    mean = float(np.mean(vals))
    if not return_error:
        return mean
    half = n // 2
    m1 = float(np.mean(vals[:half]))
    m2 = float(np.mean(vals[half:]))
    err = max(abs(m1 - mean), abs(m2 - mean)) + 1e-15
    return mean, err
