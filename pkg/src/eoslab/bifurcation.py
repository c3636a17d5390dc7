"""Two-step fixed points of scalar gradient descent and what they predict.

Above the threshold eta = 2 / l''(z*) plain gradient descent on l stops
converging and settles into a period-two orbit.  The orbit's endpoints
are the roots of the two-step residual

    D_eta(a) = l'(a) + l'(a - eta l'(a))

on either side of the minimizer.  This module locates those roots,
sweeps them into bifurcation diagrams, inverts the diagram (the "orbit
learning rate" of a point), and turns the local geometry into the
limiting-sharpness prediction 2/eta - 3 l''(z*)^4 / alpha * eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import scalar_gd_step
from .errors import (
    BelowThresholdError,
    BracketingError,
    NonConvergenceError,
    OutOfRangeError,
    ZeroAlphaError,
)
from .losses import ScalarLoss, minimum, product_stability

__all__ = [
    "TwoStepTaylor",
    "BifurcationDiagram",
    "OrbitRateTable",
    "two_step_residual",
    "taylor_coefficients",
    "find_fixed_points",
    "diagram",
    "orbit_learning_rate",
    "orbit_rate_derivatives",
    "drift_correction",
    "predict_final_sharpness",
    "two_step_converge",
]

DIAGRAM_COLUMNS = ("eta", "eta_times_lpp", "z_minus", "z_plus", "residual_minus", "residual_plus")

# how far above threshold (in units of 1/l'') fixed points are searched
DEFAULT_TAU_SEARCH = 0.5
BRACKET_TOL = 1e-13
RESIDUAL_TOL = 1e-10


def two_step_residual(loss: ScalarLoss, eta: float, a: float) -> float:
    """D_eta(a) = l'(a) + l'(a - eta l'(a)); zero at two-step fixed points."""
    g = loss.derivative(a, 1)
    return g + loss.derivative(a - eta * g, 1)


@dataclass(frozen=True)
class TwoStepTaylor:
    """Cubic Taylor data of D_eta around the minimizer."""

    c1: float
    c2: float
    c3: float


def taylor_coefficients(loss: ScalarLoss, eta: float) -> TwoStepTaylor:
    """Taylor coefficients of D_eta(z* + u) = c1 u + c2 u^2 + c3 u^3 + O(u^4).

    With m = 1 - eta l''(z*):

        c1 = (2 - eta l'') l''
        c2 = (1/2) l''' m (2 - eta l'')
        c3 = (l''''/6) m (1 + m^2) - (eta/2) l'''^2 m

    At eta = 2 / l'' these collapse to c1 = 0 and c3 = alpha / (3 l''),
    so the sign of product-stability controls the cubic term exactly at
    the threshold.
    """
    z_star = minimum(loss)
    d2 = loss.derivative(z_star, 2)
    d3 = loss.derivative(z_star, 3)
    d4 = loss.derivative(z_star, 4)
    m = 1.0 - eta * d2
    c1 = (2.0 - eta * d2) * d2
    c2 = 0.5 * d3 * m * (2.0 - eta * d2)
    c3 = d4 / 6.0 * m * (1.0 + m * m) - 0.5 * eta * d3 * d3 * m
    return TwoStepTaylor(c1=c1, c2=c2, c3=c3)


def _bisect(f, lo, hi, flo, fhi, xtol):
    # plain bisection; the bracket is guaranteed by the caller
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid < 0.0) == (flo < 0.0):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid
    return 0.5 * (lo + hi)


def find_fixed_points(
    loss: ScalarLoss,
    eta: float,
    *,
    tau_search: float = DEFAULT_TAU_SEARCH,
    scan_cap: float = 1.0,
):
    """Locate the period-two orbit endpoints (z_minus, z_plus) around z*.

    Requires 2 < eta l''(z*) <= 2 + tau_search.  Each side is scanned
    outward from z* in steps of max(1e-4, 0.1 * leading-order seed)
    until D_eta changes sign, then bisected to a bracket of width 1e-13;
    the root must satisfy |D_eta| <= 1e-10.  When no sign change occurs
    within |z - z*| <= scan_cap (quadratic losses, which have no
    period-two orbit) a :class:`BracketingError` carries the window.
    """
    z_star = minimum(loss)
    lpp = loss.derivative(z_star, 2)
    if eta * lpp <= 2.0:
        raise BelowThresholdError(
            f"eta * l''(z*) = {eta * lpp!r} is not above 2; no period-two orbit"
        )
    if eta * lpp > 2.0 + tau_search:
        raise BelowThresholdError(
            f"eta * l''(z*) = {eta * lpp!r} exceeds the search window 2 + {tau_search}"
        )
    coeff = taylor_coefficients(loss, eta)
    step = 1e-3
    if coeff.c3 > 0.0:
        seed = math.sqrt((eta * lpp - 2.0) * lpp / coeff.c3)
        step = max(1e-4, 0.1 * seed)

    def solve(side):
        f = lambda a: two_step_residual(loss, eta, a)
        prev = z_star + side * 1e-3 * step
        fprev = f(prev)
        k = 1
        while True:
            cur = z_star + side * k * step
            if abs(cur - z_star) > scan_cap:
                raise BracketingError(
                    f"no sign change of the two-step residual within "
                    f"|z - z*| <= {scan_cap} on side {side:+d}",
                    window=(z_star, z_star + side * scan_cap),
                )
            fcur = f(cur)
            if fcur == 0.0:
                return cur
            if (fcur < 0.0) != (fprev < 0.0):
                lo, hi = (prev, cur) if prev < cur else (cur, prev)
                flo, fhi = (fprev, fcur) if prev < cur else (fcur, fprev)
                root = _bisect(f, lo, hi, flo, fhi, BRACKET_TOL)
                resid = f(root)
                if abs(resid) > RESIDUAL_TOL:
                    raise BracketingError(
                        f"refined root has residual {resid!r} > {RESIDUAL_TOL}",
                        window=(lo, hi),
                    )
                return root
            prev, fprev = cur, fcur
            k += 1

    z_plus = solve(+1)
    z_minus = solve(-1)
    return z_minus, z_plus


@dataclass
class BifurcationDiagram:
    """Sampled period-two branches over a grid of learning rates."""

    loss_spec: str
    eta: np.ndarray
    eta_times_lpp: np.ndarray
    z_minus: np.ndarray
    z_plus: np.ndarray
    residual_minus: np.ndarray
    residual_plus: np.ndarray

    def __len__(self):
        return len(self.eta)

    def to_csv(self, path):
        cols = [arr.tolist() for arr in (self.eta, self.eta_times_lpp,
                                         self.z_minus, self.z_plus,
                                         self.residual_minus,
                                         self.residual_plus)]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(DIAGRAM_COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(v) for v in row) + "\n")


def diagram(
    loss: ScalarLoss,
    eta_lo: float,
    eta_hi: float,
    count: int,
    *,
    tau_search: float = DEFAULT_TAU_SEARCH,
) -> BifurcationDiagram:
    """Solve the fixed points over a uniform eta grid (endpoints included).

    Verifies the structure the theory guarantees: z_minus < z* < z_plus
    pointwise, both branches strictly monotone in eta, and both branch
    endpoints collapsing toward z* as eta decreases to the low end.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if not eta_lo < eta_hi:
        raise ValueError("need eta_lo < eta_hi")
    z_star = minimum(loss)
    lpp = loss.derivative(z_star, 2)
    etas = np.linspace(eta_lo, eta_hi, count)
    z_m = np.empty(count)
    z_p = np.empty(count)
    r_m = np.empty(count)
    r_p = np.empty(count)
    for i, eta in enumerate(etas):
        zm, zp = find_fixed_points(loss, float(eta), tau_search=tau_search)
        z_m[i] = zm
        z_p[i] = zp
        r_m[i] = two_step_residual(loss, float(eta), zm)
        r_p[i] = two_step_residual(loss, float(eta), zp)
        if not zm < z_star < zp:
            raise BracketingError(f"branches failed to straddle z* at eta={eta!r}")
    if not (np.all(np.diff(z_p) > 0.0) and np.all(np.diff(z_m) < 0.0)):
        raise BracketingError("branches are not strictly monotone over the eta grid")
    if not (abs(z_p[0] - z_star) < abs(z_p[-1] - z_star)
            and abs(z_m[0] - z_star) < abs(z_m[-1] - z_star)):
        raise BracketingError("branch endpoints do not shrink toward z*")
    return BifurcationDiagram(
        loss_spec=loss.spec,
        eta=etas,
        eta_times_lpp=etas * lpp,
        z_minus=z_m,
        z_plus=z_p,
        residual_minus=r_m,
        residual_plus=r_p,
    )


def orbit_learning_rate(
    loss: ScalarLoss,
    z: float,
    *,
    tau_search: float = DEFAULT_TAU_SEARCH,
    rho: float | None = None,
) -> float:
    """The learning rate at which z sits on a period-two orbit.

    Solves l'(z) + l'(z - eta l'(z)) = 0 for eta by bisection over
    [2/l''(z*) - rho, (2 + tau_search)/l''(z*)]; this inverts either
    branch of the bifurcation diagram.  At z = z* the value is
    2 / l''(z*) by continuity.  Points outside the diagram's range leave
    no sign change in the window and raise :class:`OutOfRangeError`.
    """
    z_star = minimum(loss)
    lpp = loss.derivative(z_star, 2)
    if rho is None:
        rho = 0.25 / lpp
    if z == z_star:
        return 2.0 / lpp
    lo = 2.0 / lpp - rho
    hi = (2.0 + tau_search) / lpp
    f = lambda eta: two_step_residual(loss, eta, z)
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo < 0.0) == (fhi < 0.0):
        raise OutOfRangeError(
            f"z={z!r} admits no orbit learning rate in [{lo!r}, {hi!r}]"
        )
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid < 0.0) == (flo < 0.0):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid
        if hi - lo <= 1e-16 * hi:
            break
    return 0.5 * (lo + hi)


def orbit_rate_derivatives(loss: ScalarLoss, z: float):
    """(d/dz of the orbit learning rate at z, its second derivative at z*).

    The first derivative uses the implicit-function formula

        [l''(z) + l''(o) (1 - Zr(z) l''(z))] / (l'(z) l''(o)),
        o = z - Zr(z) l'(z)

    which degenerates at the minimizer, so near z* (|l'(z)| < 1e-8) it
    falls back to a finite difference of the rate itself.  The fallback
    is a fourth-order five-point stencil with a deliberately coarse
    step: each rate evaluation near z* carries solver noise of order
    eps / l''^2, so a fine step amplifies noise while a coarse low-order
    step leaks the rate's third derivative.  The second derivative is
    always reported at z*, by a central second difference with step
    1e-3 (1 + |z*|); the analytic value there is 2 alpha / (3 l''(z*)^3).
    """
    z_star = minimum(loss)
    g = loss.derivative(z, 1)
    if abs(g) < 1e-8:
        h = 1e-3 * (1.0 + abs(z_star))
        rate = lambda u: orbit_learning_rate(loss, u)
        first = (
            rate(z - 2.0 * h) - 8.0 * rate(z - h) + 8.0 * rate(z + h)
            - rate(z + 2.0 * h)
        ) / (12.0 * h)
    else:
        eta = orbit_learning_rate(loss, z)
        o = z - eta * g
        d2z = loss.derivative(z, 2)
        d2o = loss.derivative(o, 2)
        first = (d2z + d2o * (1.0 - eta * d2z)) / (g * d2o)
    h2 = 1e-3 * (1.0 + abs(z_star))
    second = (
        orbit_learning_rate(loss, z_star + h2)
        - 2.0 * orbit_learning_rate(loss, z_star)
        + orbit_learning_rate(loss, z_star - h2)
    ) / (h2 * h2)
    return first, second


def drift_correction(loss: ScalarLoss, z: float) -> float:
    """Coefficient tying the orbit-rate gap to the slow drift of gamma.

    Along the period-two plateau the effective learning rate trails the
    orbit learning rate by drift_correction(z) * eta^2 to leading order.
    Away from the minimizer (with Zr the orbit rate, o = z - Zr(z) l'(z)):

        [-Zr'(z) l'(z) z (l''(o) + 2 / Zr(z)) + 2 l'(z)] / [Zr'(z) l''(o)]

    and within |z - z*| <= 1e-4 (1 + |z*|) the limit value
    3 l''(z*)^3 / alpha(z*) is returned instead.
    """
    z_star = minimum(loss)
    if abs(z - z_star) <= 1e-4 * (1.0 + abs(z_star)):
        alpha = product_stability(loss, z_star).alpha
        if alpha <= 0.0:
            raise ZeroAlphaError(
                f"drift correction undefined: alpha(z*) = {alpha!r} is not positive"
            )
        return 3.0 * loss.derivative(z_star, 2) ** 3 / alpha
    eta = orbit_learning_rate(loss, z)
    first, _ = orbit_rate_derivatives(loss, z)
    g = loss.derivative(z, 1)
    o = z - eta * g
    d2o = loss.derivative(o, 2)
    num = -first * g * z * (d2o + 2.0 / eta) + 2.0 * g
    den = first * d2o
    return num / den


def predict_final_sharpness(loss: ScalarLoss, eta: float) -> float:
    """Limiting sharpness 2/eta - 3 l''(z*)^4 / alpha(z*) * eta.

    Valid for small eta when the loss is product-stable at its
    minimizer; the omitted remainder is of order eta^(5/3).
    """
    z_star = minimum(loss)
    alpha = product_stability(loss, z_star).alpha
    if alpha <= 0.0:
        raise ZeroAlphaError(
            f"final sharpness undefined: alpha(z*) = {alpha!r} is not positive"
        )
    if not eta > 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    lpp = loss.derivative(z_star, 2)
    return 2.0 / eta - 3.0 * lpp**4 / alpha * eta


def two_step_converge(
    loss: ScalarLoss,
    eta: float,
    a0: float,
    max_steps: int = 200_000,
    *,
    tol: float = 1e-12,
    window: int = 20,
):
    """Iterate scalar gradient descent and return the even/odd limits.

    Above threshold the even- and odd-index subsequences converge to the
    two endpoints of the period-two orbit.  Convergence is declared when
    both subsequences are Cauchy within ``tol`` over ``window``
    consecutive two-step iterations; exhausting ``max_steps`` raises
    :class:`NonConvergenceError`.
    """
    z_star = minimum(loss)
    lpp = loss.derivative(z_star, 2)
    if eta * lpp <= 2.0:
        raise BelowThresholdError(
            f"eta * l''(z*) = {eta * lpp!r} is not above 2; no period-two orbit"
        )
    if a0 == z_star:
        return z_star, z_star
    even = a0
    odd = scalar_gd_step(a0, loss, eta)
    quiet = 0
    steps = 1
    while steps < max_steps:
        next_even = scalar_gd_step(odd, loss, eta)
        next_odd = scalar_gd_step(next_even, loss, eta)
        steps += 2
        if abs(next_even - even) <= tol and abs(next_odd - odd) <= tol:
            quiet += 1
        else:
            quiet = 0
        even = next_even
        odd = next_odd
        if not (math.isfinite(even) and math.isfinite(odd)):
            raise NonConvergenceError(f"scalar iterates became non-finite at step {steps}")
        if quiet >= window:
            return even, odd
    raise NonConvergenceError(
        f"two-step iteration did not settle within {max_steps} steps"
    )


class OrbitRateTable:
    """Vectorized lookup of the orbit learning rate over the diagram range.

    Built once per run and evaluated by linear interpolation, which is
    what makes labeling hundreds of thousands of records affordable; the
    grid is dense enough that interpolation error is far below the
    phase-II gap tolerance.
    """

    def __init__(self, loss: ScalarLoss, z_grid: np.ndarray, eta_values: np.ndarray):
        self.loss_spec = loss.spec
        self.z_grid = z_grid
        self.eta_values = eta_values
        self.z_star = minimum(loss)

    @classmethod
    def build(cls, loss: ScalarLoss, eta_max: float, n_points: int = 1001):
        z_minus, z_plus = find_fixed_points(loss, eta_max)
        z_star = minimum(loss)
        grid = np.linspace(z_minus, z_plus, n_points)
        tiny = 1e-12 * (1.0 + abs(z_star))
        etas = np.empty(n_points)
        for i, z in enumerate(grid):
            if abs(z - z_star) < tiny:
                etas[i] = 2.0 / loss.derivative(z_star, 2)
            else:
                etas[i] = orbit_learning_rate(loss, float(z))
        return cls(loss, grid, etas)

    @classmethod
    def for_run(cls, loss: ScalarLoss, eta: float, gamma0: float, *, margin: float = 0.3):
        """Size the table to a run whose effective rate starts at gamma0."""
        z_star = minimum(loss)
        lpp = loss.derivative(z_star, 2)
        threshold = 2.0 / lpp
        if gamma0 <= threshold:
            raise BelowThresholdError(
                f"gamma0 = {gamma0!r} is at or below the threshold {threshold!r}"
            )
        eta_max = threshold + (1.0 + margin) * (gamma0 - threshold) + 10.0 * eta * eta
        eta_max = min(eta_max, (2.0 + DEFAULT_TAU_SEARCH) / lpp)
        return cls.build(loss, eta_max)

    def covers(self, z: float) -> bool:
        return self.z_grid[0] <= z <= self.z_grid[-1]

    def eta_at(self, z):
        """Interpolated orbit rate; NaN outside the tabulated range."""
        z_arr = np.asarray(z, dtype=float)
        out = np.interp(z_arr, self.z_grid, self.eta_values)
        out = np.where((z_arr < self.z_grid[0]) | (z_arr > self.z_grid[-1]), np.nan, out)
        if np.isscalar(z) or z_arr.ndim == 0:
            return float(out)
        return out
