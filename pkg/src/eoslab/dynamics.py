"""Gradient descent on the factored objective L(x, y) = l(x y).

The two coordinates are updated simultaneously from the shared product
z = x y, so one step reads

    x' = x - eta l'(z) y,      y' = y - eta l'(z) x.

Everything downstream is phrased in the pair (z, s) with s = x^2 + y^2:
z locates the iterate along the valley of minima, s = trace factor of
the Hessian measures how sharp that valley is, and gamma = eta * s is
the effective learning rate of the induced scalar dynamics.

Two exact per-step identities are tracked as residuals on every step of
every run: x^2 - y^2 is multiplied by exactly (1 - eta^2 l'(z)^2), and
s^2 - 4 z^2 by the square of the same factor.  Residuals are reported
relative to s (respectively s^2), the natural magnitude of the terms
entering each identity.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EosLabError, InfeasibleInitError
from .losses import ScalarLoss

__all__ = [
    "Phase",
    "FactoredState",
    "RunConfig",
    "TrajectoryRecord",
    "Trajectory",
    "init_from_zs",
    "gd_step",
    "scalar_gd_step",
    "two_step_deltas",
    "sharpness",
    "run",
    "classify_phase",
    "label_phases",
]

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "s", "gamma", "loss", "sharpness", "grad_z", "phase")


class Phase(Enum):
    """Training phase labels; U marks records the classifier cannot place."""

    I = "I"
    II = "II"
    III = "III"
    U = "U"


# ordinal storage codes: unclassified sorts below the three real phases
_PHASE_BY_CODE = (Phase.U, Phase.I, Phase.II, Phase.III)
_PHASE_STRINGS = np.array(["U", "I", "II", "III"])


@dataclass(frozen=True)
class FactoredState:
    x: float
    y: float

    @property
    def z(self) -> float:
        return self.x * self.y

    @property
    def s(self) -> float:
        return self.x * self.x + self.y * self.y


def init_from_zs(z0: float, s0: float) -> FactoredState:
    """Realize (x, y) with x y = z0 and x^2 + y^2 = s0, taking x >= |y|.

    Feasibility needs s0 >= 2 |z0| (arithmetic-geometric mean); the sign
    of z0 goes into y.
    """
    z0 = float(z0)
    s0 = float(s0)
    if s0 < 2.0 * abs(z0):
        raise InfeasibleInitError(f"need s0 >= 2 |z0|, got s0={s0}, z0={z0}")
    disc = max(s0 * s0 - 4.0 * z0 * z0, 0.0)
    x = math.sqrt((s0 + math.sqrt(disc)) / 2.0)
    if x == 0.0:
        return FactoredState(0.0, 0.0)
    return FactoredState(x, z0 / x)


def gd_step(state: FactoredState, loss: ScalarLoss, eta: float) -> FactoredState:
    """One simultaneous gradient step; both partials use the pre-step state."""
    g = loss.derivative(state.x * state.y, 1)
    return FactoredState(state.x - eta * g * state.y, state.y - eta * g * state.x)


def scalar_gd_step(a: float, loss: ScalarLoss, eta: float) -> float:
    """One step of plain gradient descent on l itself."""
    return a - eta * loss.derivative(a, 1)


def two_step_deltas(state: FactoredState, loss: ScalarLoss, eta: float):
    """Closed-form changes of (z, s) over two gradient steps.

    With g0 = l'(z_t), g1 = l'(z_{t+1}) and h = g1^2 + 4 g1 g0 + g0^2:

        z_{t+2} - z_t = eta^2 h z - eta (g1 + g0)(1 + eta^2 g1 g0) s + eta^4 g1^2 g0^2 z
        s_{t+2} - s_t = eta^2 h s - 4 eta (g1 + g0)(1 + eta^2 g1 g0) z + eta^4 g1^2 g0^2 s

    and the return value matches composing :func:`gd_step` twice.
    """
    z = state.z
    s = state.s
    g0 = loss.derivative(z, 1)
    mid = gd_step(state, loss, eta)
    g1 = loss.derivative(mid.z, 1)
    h = g1 * g1 + 4.0 * g1 * g0 + g0 * g0
    cross = (g1 + g0) * (1.0 + eta * eta * g1 * g0)
    quart = eta**4 * g1 * g1 * g0 * g0
    dz = eta * eta * h * z - eta * cross * s + quart * z
    ds = eta * eta * h * s - 4.0 * eta * cross * z + quart * s
    return dz, ds


def sharpness(state: FactoredState, loss: ScalarLoss):
    """Top Hessian eigenvalue and trace of L at the given state.

    The 2x2 Hessian [[l'' y^2, l'' z + l'], [l'' z + l', l'' x^2]] has
    trace l''(z) s and determinant -l'(z) (2 l''(z) z + l'(z)); at a
    critical point the top eigenvalue collapses to l''(z) s.
    """
    z = state.z
    s = state.s
    d1 = loss.derivative(z, 1)
    d2 = loss.derivative(z, 2)
    trace = d2 * s
    det = -d1 * (2.0 * d2 * z + d1)
    disc = max(trace * trace - 4.0 * det, 0.0)
    lam = 0.5 * (trace + math.sqrt(disc))
    return lam, trace


@dataclass
class RunConfig:
    """Simulation settings.

    Initialization is either the pair (x0, y0) or the pair (z0, s0);
    exactly one must be given.  ``seed`` is reserved: runs are
    deterministic and never draw random numbers.  ``k_phase2`` and
    ``phase3_window`` are the phase-classifier calibration constants
    (gap tolerance K eta^2 and trailing-window length in records).
    """

    loss: ScalarLoss
    eta: float
    x0: float | None = None
    y0: float | None = None
    z0: float | None = None
    s0: float | None = None
    max_steps: int = 1_000_000
    convergence_tol: float = 1e-13
    record_stride: int = 1
    seed: int = 0
    divergence_bound: float = 1e8
    k_phase2: float = 10.0
    phase3_window: int = 50
    label_phases: bool = True

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        xy = self.x0 is not None or self.y0 is not None
        zs = self.z0 is not None or self.s0 is not None
        if xy == zs:
            raise ValueError("give exactly one of (x0, y0) or (z0, s0)")
        if xy and (self.x0 is None or self.y0 is None):
            raise ValueError("x0 and y0 must be given together")
        if zs and (self.z0 is None or self.s0 is None):
            raise ValueError("z0 and s0 must be given together")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    def initial_state(self) -> FactoredState:
        if self.x0 is not None:
            return FactoredState(float(self.x0), float(self.y0))
        return init_from_zs(self.z0, self.s0)


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    x: float
    y: float
    z: float
    s: float
    gamma: float
    loss: float
    sharpness: float
    grad_z: float
    phase: Phase


@dataclass
class Trajectory:
    """Recorded run: columnar arrays plus whole-run residual maxima.

    ``status`` is one of converged / diverged / max_steps / domain_exit.
    Records are taken every ``record_stride`` steps and always include
    the initial and final states.  ``balance_residual`` and
    ``conservation_residual`` hold the per-record residuals of the two
    conservation identities for the step that produced each record
    (zero for the initial record); the ``max_*`` fields track the same
    residuals over every step, recorded or not.
    """

    loss_spec: str
    eta: float
    status: str
    steps: int
    record_stride: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    loss: np.ndarray
    sharpness: np.ndarray
    grad_z: np.ndarray
    phase: np.ndarray
    balance_residual: np.ndarray
    conservation_residual: np.ndarray
    max_balance_residual: float
    max_conservation_residual: float

    def __len__(self):
        return len(self.t)

    @property
    def final_state(self) -> FactoredState:
        return FactoredState(float(self.x[-1]), float(self.y[-1]))

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            t=int(self.t[i]),
            x=float(self.x[i]),
            y=float(self.y[i]),
            z=float(self.z[i]),
            s=float(self.s[i]),
            gamma=float(self.gamma[i]),
            loss=float(self.loss[i]),
            sharpness=float(self.sharpness[i]),
            grad_z=float(self.grad_z[i]),
            phase=_PHASE_BY_CODE[int(self.phase[i])],
        )

    def phase_counts(self):
        out = {}
        for code, phase in enumerate(_PHASE_BY_CODE):
            out[phase] = int(np.count_nonzero(self.phase == code))
        return out

    def to_csv(self, path):
        # tolist() hands back Python floats, whose repr is the shortest
        # round-trip decimal
        cols = [arr.tolist() for arr in (self.x, self.y, self.z, self.s,
                                         self.gamma, self.loss,
                                         self.sharpness, self.grad_z)]
        labels = _PHASE_STRINGS[self.phase]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            for i, (t, row) in enumerate(zip(self.t.tolist(), zip(*cols))):
                values = ",".join(repr(v) for v in row)
                fh.write(f"{t},{values},{labels[i]}\n")


def _simulate(loss, eta, x, y, cfg):
    """Inner loop; plain-float arithmetic, no allocation on the hot path."""
    deriv = loss.derivative
    stride = cfg.record_stride
    tol = cfg.convergence_tol
    bound = cfg.divergence_bound
    max_steps = cfg.max_steps
    lo, hi = loss.domain
    check_domain = math.isfinite(lo) or math.isfinite(hi)

    cols = [array("d") for _ in range(9)]
    res_cols = (array("d"), array("d"))
    ct, cx, cy, cz, cs, cgamma, closs, csharp, cgrad = cols

    def record(t, x, y, bal, cons):
        z = x * y
        s = x * x + y * y
        g = deriv(z, 1)
        d2 = deriv(z, 2)
        trace = d2 * s
        det = -g * (2.0 * d2 * z + g)
        lam = 0.5 * (trace + math.sqrt(max(trace * trace - 4.0 * det, 0.0)))
        ct.append(t)
        cx.append(x)
        cy.append(y)
        cz.append(z)
        cs.append(s)
        cgamma.append(eta * s)
        closs.append(deriv(z, 0))
        csharp.append(lam)
        cgrad.append(g)
        res_cols[0].append(bal)
        res_cols[1].append(cons)

    bal_max = 0.0
    cons_max = 0.0
    last_bal = 0.0
    last_cons = 0.0
    quiet = 0
    t = 0
    last_recorded = -1
    status = None
    while status is None:
        if t % stride == 0:
            record(t, x, y, last_bal, last_cons)
            last_recorded = t
        if t >= max_steps:
            status = "max_steps"
            break
        z = x * y
        if check_domain and not (lo < z < hi):
            status = "domain_exit"
            break
        g = deriv(z, 1)
        eg = eta * g
        nx = x - eg * y
        ny = y - eg * x
        if not (-bound <= nx <= bound and -bound <= ny <= bound):
            # also catches NaN: comparisons with NaN are false
            status = "diverged"
            break
        # balance identity: x^2 - y^2 picks up the factor (1 - eta^2 g^2)
        fac = 1.0 - eg * eg
        ns = nx * nx + ny * ny
        diff = (nx * nx - ny * ny) - (x * x - y * y) * fac
        last_bal = abs(diff) / ns if ns > 0.0 else 0.0
        # conservation identity: s^2 - 4 z^2 picks up the squared factor
        nz = nx * ny
        s = x * x + y * y
        diff2 = (ns * ns - 4.0 * nz * nz) - (s * s - 4.0 * z * z) * fac * fac
        last_cons = abs(diff2) / (ns * ns) if ns > 0.0 else 0.0
        if last_bal > bal_max:
            bal_max = last_bal
        if last_cons > cons_max:
            cons_max = last_cons
        scale = tol * (1.0 + abs(nx) + abs(ny))
        if abs(nx - x) <= scale and abs(ny - y) <= scale:
            quiet += 1
        else:
            quiet = 0
        x = nx
        y = ny
        t += 1
        if quiet >= 10:
            status = "converged"
    if last_recorded != t:
        record(t, x, y, last_bal, last_cons)
    arrays = [np.asarray(c, dtype=float) for c in cols]
    res = [np.asarray(c, dtype=float) for c in res_cols]
    return status, t, arrays, res, bal_max, cons_max


def run(config: RunConfig) -> Trajectory:
    """Simulate, record, attach residuals and phase labels."""
    loss = config.loss
    state0 = config.initial_state()
    status, steps, arrays, res, bal_max, cons_max = _simulate(
        loss, config.eta, state0.x, state0.y, config
    )
    t_arr = arrays[0].astype(np.int64)
    traj = Trajectory(
        loss_spec=loss.spec,
        eta=config.eta,
        status=status,
        steps=steps,
        record_stride=config.record_stride,
        t=t_arr,
        x=arrays[1],
        y=arrays[2],
        z=arrays[3],
        s=arrays[4],
        gamma=arrays[5],
        loss=arrays[6],
        sharpness=arrays[7],
        grad_z=arrays[8],
        phase=np.zeros(len(t_arr), dtype=np.int8),
        balance_residual=res[0],
        conservation_residual=res[1],
        max_balance_residual=bal_max,
        max_conservation_residual=cons_max,
    )
    if config.label_phases:
        table = _rate_table_for_run(loss, config.eta, float(traj.gamma[0]))
        traj.phase = label_phases(
            traj,
            loss,
            config.eta,
            table,
            k_phase2=config.k_phase2,
            window=config.phase3_window,
        )
    return traj


def _rate_table_for_run(loss, eta, gamma0):
    """Orbit-rate lookup table sized to the run's starting effective rate.

    Returns None when the diagram does not exist there (below threshold,
    zero product-stability, no finite minimizer): the classifier then
    only distinguishes Phase III from unclassified.
    """
    from .bifurcation import OrbitRateTable

    try:
        return OrbitRateTable.for_run(loss, eta, gamma0)
    except EosLabError:
        return None


def _rolling_max_right(values: np.ndarray, width: int) -> np.ndarray:
    """Right-aligned rolling maximum, left edge padded with the first value."""
    if width <= 1 or len(values) <= 1:
        return values.copy()
    pad = np.full(width - 1, values[0])
    padded = np.concatenate([pad, values])
    view = np.lib.stride_tricks.sliding_window_view(padded, width)
    return view.max(axis=1)


def label_phases(traj, loss, eta, rate_table=None, *, k_phase2=10.0, window=50):
    """Raw per-record phase codes for a trajectory.

    Phase III: gamma below the threshold 2 / l''(z*) while |z - z*| is
    not growing across the two halves of the trailing window (records
    with too little history count as shrinking).  Phase II: the orbit
    learning rate at z tracks gamma within k_phase2 * eta^2.  Phase I
    otherwise, and U wherever the orbit rate is undefined.
    """
    n = len(traj.z)
    codes = np.zeros(n, dtype=np.int8)
    z_star = loss.z_star
    if z_star is None or n == 0:
        return codes
    threshold = 2.0 / loss.derivative(z_star, 2)
    dev = np.abs(traj.z - z_star)
    half = max(1, window // 2)
    later = _rolling_max_right(dev, half)
    earlier = np.full(n, np.inf)
    if n > half:
        earlier[half:] = later[:-half]
    shrinking = later <= earlier
    is3 = (traj.gamma < threshold) & shrinking
    if rate_table is not None:
        eta_hat = rate_table.eta_at(traj.z)
    else:
        eta_hat = np.full(n, np.nan)
    with np.errstate(invalid="ignore"):
        is2 = np.abs(eta_hat - traj.gamma) <= k_phase2 * eta * eta
    defined = np.isfinite(eta_hat)
    codes[defined] = 1
    codes[is2 & defined] = 2
    codes[is3] = 3
    return codes


def classify_phase(record, loss, eta, rate_table=None, *, trailing_deviations=None, k_phase2=10.0):
    """Classify one record; see :func:`label_phases` for the rules.

    ``trailing_deviations`` is the recent history of |z - z*| ending at
    this record; without it the shrinking test is vacuously true.
    """
    z_star = loss.z_star
    if z_star is None:
        return Phase.U
    threshold = 2.0 / loss.derivative(z_star, 2)
    shrinking = True
    if trailing_deviations is not None:
        dev = [abs(float(d)) for d in trailing_deviations]
        if len(dev) >= 2:
            half = len(dev) // 2
            shrinking = max(dev[half:]) <= max(dev[:half])
    if record.gamma < threshold and shrinking:
        return Phase.III
    eta_hat = math.nan
    if rate_table is not None:
        eta_hat = float(rate_table.eta_at(record.z))
    if math.isfinite(eta_hat):
        if abs(eta_hat - record.gamma) <= k_phase2 * eta * eta:
            return Phase.II
        return Phase.I
    return Phase.U
