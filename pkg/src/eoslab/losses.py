"""Scalar loss families with exact derivatives up to fifth order.

Every family evaluates analytic derivatives of orders 0..5 and knows its
minimizer.  On top of the derivative ladder sits the product-stability
functional

    alpha(z) = 3 l'''(z)^2 - l''''(z) l''(z)

whose sign at a minimum decides whether period-two oscillations of
gradient descent on the factored objective L(x, y) = l(x y) are
attracting (alpha > 0) or not.  An exact zero counts as not stable.

Derivatives are scalar ``float`` computations on purpose: the
simulation loop in :mod:`eoslab.dynamics` calls ``derivative(z, 1)``
millions of times and plain ``math`` arithmetic is several times faster
than numpy scalars there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NoFiniteMinimumError

__all__ = [
    "ScalarLoss",
    "BinaryCrossEntropy",
    "MultilayerSquared",
    "DegRegLoss",
    "QuadraticLoss",
    "StabilityValue",
    "DerivativeCheck",
    "DerivativeValidation",
    "FAMILIES",
    "parse_loss",
    "product_stability",
    "minimum",
    "validate_derivatives",
    "sigmoid",
    "softplus",
]

MAX_ORDER = 5


def sigmoid(z: float) -> float:
    """Numerically stable logistic function."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softplus(z: float) -> float:
    """log(1 + e^z) without overflow for large |z|."""
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _check_order(order) -> int:
    if not isinstance(order, int) or isinstance(order, bool):
        raise ValueError(f"derivative order must be an integer, got {order!r}")
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")
    return order


class ScalarLoss:
    """A one-dimensional loss with exact derivatives of orders 0..5.

    Subclasses implement :meth:`derivative` and :attr:`z_star` (the
    finite minimizer, or ``None`` when there is none).  All built-in
    families are defined on the whole real line.
    """

    family_id = "abstract"
    domain = (-math.inf, math.inf)

    def derivative(self, z: float, order: int) -> float:
        raise NotImplementedError

    def value(self, z: float) -> float:
        return self.derivative(z, 0)

    @property
    def z_star(self) -> float | None:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        """Selection string that parses back to an equal loss."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec!r})"


class BinaryCrossEntropy(ScalarLoss):
    """Cross entropy -[q log sig(z) + (1-q) log(1 - sig(z))] with soft label q.

    The minimizer is the logit of q; for hard labels (q in {0, 1}) the
    infimum is approached only as z -> +-inf and ``z_star`` is ``None``.
    """

    family_id = "bce"

    def __init__(self, q: float = 0.5):
        q = float(q)
        if not 0.0 <= q <= 1.0 or not math.isfinite(q):
            raise ValueError(f"label q must lie in [0, 1], got {q}")
        self.q = q

    @property
    def z_star(self):
        if self.q <= 0.0 or self.q >= 1.0:
            return None
        return math.log(self.q / (1.0 - self.q))

    @property
    def spec(self):
        return f"bce:q={self.q!r}"

    def derivative(self, z, order=0):
        order = _check_order(order)
        if order == 0:
            return self.q * softplus(-z) + (1.0 - self.q) * softplus(z)
        s = sigmoid(z)
        if order == 1:
            return s - self.q
        sp = s * (1.0 - s)
        if order == 2:
            return sp
        if order == 3:
            return sp * (1.0 - 2.0 * s)
        if order == 4:
            return sp * (1.0 - 6.0 * s + 6.0 * s * s)
        return sp * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s)


def _dmono(m: int, k: int, z: float) -> float:
    # k-th derivative of z^m for integer m >= 0
    if k > m:
        return 0.0
    c = 1.0
    for j in range(k):
        c *= m - j
    return c * z ** (m - k)


class MultilayerSquared(ScalarLoss):
    """Squared loss (z^n - a)^2 of an n-fold product fit to target a > 0.

    Expanding to z^(2n) - 2 a z^n + a^2 makes every derivative a clean
    two-monomial expression, valid on all of R including z <= 0.
    """

    family_id = "mlsq"

    def __init__(self, a: float = 1.0, n: int = 2):
        a = float(a)
        if not (a > 0.0 and math.isfinite(a)):
            raise ValueError(f"target a must be positive, got {a}")
        if n != int(n) or int(n) < 1:
            raise ValueError(f"exponent n must be an integer >= 1, got {n}")
        self.a = a
        self.n = int(n)

    @property
    def z_star(self):
        return self.a ** (1.0 / self.n)

    @property
    def spec(self):
        return f"mlsq:a={self.a!r},n={self.n}"

    def derivative(self, z, order=0):
        order = _check_order(order)
        out = _dmono(2 * self.n, order, z) - 2.0 * self.a * _dmono(self.n, order, z)
        if order == 0:
            out += self.a * self.a
        return out


def _well_derivatives(w: float):
    """Value and first five derivatives of log(e^w + 1) + log(e^-w + 1)."""
    aw = abs(w)
    g0 = aw + 2.0 * math.log1p(math.exp(-aw))
    u = sigmoid(w)
    up = u * (1.0 - u)
    g1 = 2.0 * u - 1.0
    g2 = 2.0 * up
    g3 = 2.0 * up * (1.0 - 2.0 * u)
    g4 = 2.0 * up * (1.0 - 6.0 * u + 6.0 * u * u)
    g5 = 2.0 * up * (1.0 - 2.0 * u) * (1.0 - 12.0 * u + 12.0 * u * u)
    return g0, g1, g2, g3, g4, g5


class DegRegLoss(ScalarLoss):
    """Symmetric softplus well around z = 1 raised to a power a in (0, 1].

    l_a(z) = (log(e^(z-1) + 1) + log(e^(1-z) + 1))^a.  The well bottoms
    out at 2 log 2 > 0, so fractional powers stay smooth everywhere;
    derivatives of the composition follow the chain rule through fifth
    order.
    """

    family_id = "degreg"

    def __init__(self, a: float = 1.0):
        a = float(a)
        if not (0.0 < a <= 1.0):
            raise ValueError(f"exponent a must lie in (0, 1], got {a}")
        self.a = a

    @property
    def z_star(self):
        return 1.0

    @property
    def spec(self):
        return f"degreg:a={self.a!r}"

    def derivative(self, z, order=0):
        order = _check_order(order)
        g0, g1, g2, g3, g4, g5 = _well_derivatives(z - 1.0)
        a = self.a
        if order == 0:
            return g0**a
        # falling factorials a (a-1) ... paired with powers of the inner value
        f1 = a
        f2 = f1 * (a - 1.0)
        f3 = f2 * (a - 2.0)
        f4 = f3 * (a - 3.0)
        f5 = f4 * (a - 4.0)
        p = [g0 ** (a - k) for k in range(6)]
        if order == 1:
            return f1 * p[1] * g1
        if order == 2:
            return f2 * p[2] * g1**2 + f1 * p[1] * g2
        if order == 3:
            return f3 * p[3] * g1**3 + 3.0 * f2 * p[2] * g1 * g2 + f1 * p[1] * g3
        if order == 4:
            return (
                f4 * p[4] * g1**4
                + 6.0 * f3 * p[3] * g1**2 * g2
                + 3.0 * f2 * p[2] * g2**2
                + 4.0 * f2 * p[2] * g1 * g3
                + f1 * p[1] * g4
            )
        return (
            f5 * p[5] * g1**5
            + 10.0 * f4 * p[4] * g1**3 * g2
            + 15.0 * f3 * p[3] * g1 * g2**2
            + 10.0 * f3 * p[3] * g1**2 * g3
            + 10.0 * f2 * p[2] * g2 * g3
            + 5.0 * f2 * p[2] * g1 * g4
            + f1 * p[1] * g5
        )


class QuadraticLoss(ScalarLoss):
    """(z - a)^2: constant curvature, zero product-stability everywhere."""

    family_id = "quad"

    def __init__(self, a: float = 0.0):
        a = float(a)
        if not math.isfinite(a):
            raise ValueError(f"target a must be finite, got {a}")
        self.a = a

    @property
    def z_star(self):
        return self.a

    @property
    def spec(self):
        return f"quad:a={self.a!r}"

    def derivative(self, z, order=0):
        order = _check_order(order)
        if order == 0:
            d = z - self.a
            return d * d
        if order == 1:
            return 2.0 * (z - self.a)
        if order == 2:
            return 2.0
        return 0.0


FAMILIES = {
    cls.family_id: cls
    for cls in (BinaryCrossEntropy, MultilayerSquared, DegRegLoss, QuadraticLoss)
}

_PARAM_TYPES = {"n": int}


def parse_loss(text: str) -> ScalarLoss:
    """Build a loss from a selection string like ``mlsq:a=1,n=2``.

    The family token is one of bce / mlsq / degreg / quad; parameters
    are comma-separated key=value pairs and fall back to each family's
    defaults when omitted.
    """
    family, _, rest = text.strip().partition(":")
    family = family.strip().lower()
    if family not in FAMILIES:
        raise ValueError(
            f"unknown loss family {family!r}; expected one of {sorted(FAMILIES)}"
        )
    kwargs = {}
    if rest.strip():
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ValueError(f"malformed loss parameter {item!r} in {text!r}")
            caster = _PARAM_TYPES.get(key, float)
            try:
                kwargs[key] = caster(value.strip())
            except ValueError as exc:
                raise ValueError(f"bad value for {key!r} in {text!r}") from exc
    try:
        return FAMILIES[family](**kwargs)
    except TypeError as exc:
        raise ValueError(f"unknown parameter for {family!r} in {text!r}") from exc


@dataclass(frozen=True)
class StabilityValue:
    """Product-stability alpha and the strict-positivity verdict."""

    alpha: float
    is_stable: bool


def product_stability(loss: ScalarLoss, z: float) -> StabilityValue:
    """Evaluate alpha(z) = 3 l'''(z)^2 - l''''(z) l''(z).

    Only derivative orders >= 2 enter, so adding an affine function to
    the loss cannot change the result.  ``is_stable`` is strict: an
    exact zero (the quadratic family anywhere) is not stable.
    """
    d2 = loss.derivative(z, 2)
    d3 = loss.derivative(z, 3)
    d4 = loss.derivative(z, 4)
    alpha = 3.0 * d3 * d3 - d4 * d2
    return StabilityValue(alpha=alpha, is_stable=alpha > 0.0)


def minimum(loss: ScalarLoss) -> float:
    """Closed-form minimizer; raises when none exists."""
    z_star = loss.z_star
    if z_star is None:
        raise NoFiniteMinimumError(f"{loss!r} has no finite minimizer")
    return z_star


@dataclass(frozen=True)
class DerivativeCheck:
    order: int
    z: float
    analytic: float
    estimate: float
    abs_error: float
    rel_error: float


@dataclass(frozen=True)
class DerivativeValidation:
    checks: tuple
    max_rel_error: float


def validate_derivatives(loss: ScalarLoss, z_grid, step: float = 1e-5) -> DerivativeValidation:
    """Cross-check each analytic order against a finite difference.

    For every order k in 1..5 the analytic derivative is compared with
    the central difference of order k-1's analytic derivative.  The
    relative error is measured against the largest magnitude of order k
    on the grid, so orders that vanish at symmetric points do not
    produce spurious blowups; an order that is identically zero on the
    grid reports its raw absolute error instead.
    """
    zs = [float(z) for z in z_grid]
    if not zs:
        raise ValueError("z_grid must contain at least one point")
    if not step > 0.0:
        raise ValueError("step must be positive")
    checks = []
    worst = 0.0
    for order in range(1, MAX_ORDER + 1):
        scale = max(abs(loss.derivative(z, order)) for z in zs)
        for z in zs:
            analytic = loss.derivative(z, order)
            est = (
                loss.derivative(z + step, order - 1)
                - loss.derivative(z - step, order - 1)
            ) / (2.0 * step)
            abs_err = abs(est - analytic)
            rel_err = abs_err / scale if scale > 0.0 else abs_err
            worst = max(worst, rel_err)
            checks.append(
                DerivativeCheck(
                    order=order,
                    z=z,
                    analytic=analytic,
                    estimate=est,
                    abs_error=abs_err,
                    rel_error=rel_err,
                )
            )
    return DerivativeValidation(checks=tuple(checks), max_rel_error=worst)
