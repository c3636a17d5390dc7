"""Multivariate product-stability probes for small differentiable models.

The scalar stability functional of :mod:`eoslab.losses` generalizes to a
model f with parameters theta: contract the third and fourth derivative
tensors of f along the top curvature direction v of the Hessian H,

    alpha_f = 3 g3' H+ g3  -  d4,
    g3 = gradient of w -> v' H(w) v,    d4 = fourth directional derivative,

where H+ is the Hessian pseudoinverse.  Positive alpha_f plays the same
role as the scalar alpha: it is the quantity whose sign governs whether
a period-two orbit can hug the minimum.

Everything here is measured with finite differences of exact hand-coded
gradients; no autodiff framework is involved.  The probes perturb the
model's parameter vector in place and always restore it, so a probe owns
its model exclusively while it runs; clones may be probed concurrently.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, PowerIterationError
from .losses import ScalarLoss

__all__ = [
    "DifferentiableModel",
    "TinyMLP",
    "AnalyticPolynomial",
    "FactoredScalarModel",
    "ScalarLossModel",
    "Dataset",
    "make_blob_dataset",
    "save_dataset_csv",
    "load_dataset_csv",
    "ProbeConfig",
    "ProbeReport",
    "ProbeSeries",
    "PROBE_COLUMNS",
    "hvp",
    "top_eigenpair",
    "third_directional",
    "fourth_directional",
    "pinv_solve",
    "multivariate_stability",
    "check_gradient",
    "train_and_probe",
]


def _sigmoid(p: np.ndarray) -> np.ndarray:
    # 0.5 (1 + tanh(p/2)) is the overflow-free form of 1/(1+exp(-p)).
    return 0.5 * (1.0 + np.tanh(0.5 * p))


class DifferentiableModel:
    """A scalar objective of a parameter vector with an exact gradient.

    Subclasses implement :meth:`value` and :meth:`gradient` as functions
    of the current parameters.  ``theta`` is copied on the way in and on
    the way out, so callers can never alias the internal state; probes
    rely on that to perturb and restore parameters safely.
    """

    _theta: np.ndarray

    def _set_theta(self, theta) -> None:
        arr = np.asarray(theta, dtype=float).reshape(-1).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter vector must be finite")
        self._theta = arr

    @property
    def theta(self) -> np.ndarray:
        return self._theta.copy()

    @theta.setter
    def theta(self, value) -> None:
        expected = self._theta.shape[0]
        arr = np.asarray(value, dtype=float).reshape(-1)
        if arr.shape[0] != expected:
            raise ValueError(
                f"parameter vector has {arr.shape[0]} entries, expected {expected}"
            )
        self._set_theta(arr)

    @property
    def dim(self) -> int:
        return self._theta.shape[0]

    def value(self) -> float:
        raise NotImplementedError

    def gradient(self) -> np.ndarray:
        raise NotImplementedError

    def clone(self) -> "DifferentiableModel":
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


@dataclass(frozen=True)
class Dataset:
    """Immutable supervised dataset: features (n, k) and labels (n,).

    Labels are floats; soft labels in [0, 1] are fine for the logistic
    objective.  The arrays are frozen so models can share one instance.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        labs = np.array(self.labels, dtype=float)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labs.shape != (feats.shape[0],):
            raise ValueError("labels must be a vector matching the feature rows")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def make_blob_dataset(
    n: int,
    dim: int = 2,
    *,
    seed: int = 0,
    separation: float = 2.0,
    spread: float = 1.0,
) -> Dataset:
    """Two seeded Gaussian blobs, one per class, centred at +-mu.

    mu is separation/2 along the all-ones diagonal; class 0 takes the
    first n//2 rows.  Labels are 0.0 and 1.0.
    """
    if n < 2:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    mu = (separation / 2.0) * np.ones(dim) / math.sqrt(dim)
    n0 = n // 2
    feats = spread * rng.standard_normal((n, dim))
    feats[:n0] -= mu
    feats[n0:] += mu
    labels = np.zeros(n)
    labels[n0:] = 1.0
    return Dataset(features=feats, labels=labels)


def _format17(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write `label,feat_0,...` rows with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label"] + [f"feat_{j}" for j in range(dataset.n_features)]
        )
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([_format17(label)] + [_format17(v) for v in row])


def load_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "label":
            raise ValueError(f"{path}: expected a 'label,feat_...' header")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    return Dataset(features=data[:, 1:], labels=data[:, 0])


class TinyMLP(DifferentiableModel):
    """Fully connected tanh network with a linear scalar output.

    widths lists the layer sizes from input to output, e.g. (2, 8, 8, 1);
    the output width must be 1.  The objective over the dataset is either
    "mse", the mean squared error of the raw output, or "bce", the mean
    logistic cross-entropy of the output against soft labels.  Weights
    start at N(0, 1/fan_in) draws from a seeded generator, biases at 0.
    The gradient is hand-coded backpropagation.
    """

    def __init__(self, widths, dataset: Dataset, *, objective: str = "mse",
                 seed: int = 0):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if widths[-1] != 1:
            raise ValueError("output layer must have width 1")
        if widths[0] != dataset.n_features:
            raise ValueError(
                f"input width {widths[0]} does not match "
                f"{dataset.n_features} dataset features"
            )
        if objective not in ("mse", "bce"):
            raise ValueError(f"unknown objective {objective!r}")
        self.widths = widths
        self.dataset = dataset
        self.objective = objective
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(widths, widths[1:]):
            w_sl = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b_sl = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w_sl, b_sl, fan_in, fan_out))
        rng = np.random.default_rng(seed)
        theta = np.zeros(offset)
        for w_sl, _, fan_in, fan_out in self._slices:
            theta[w_sl] = rng.standard_normal(fan_in * fan_out) / math.sqrt(fan_in)
        self._set_theta(theta)

    def _layers(self):
        for w_sl, b_sl, fan_in, fan_out in self._slices:
            yield (self._theta[w_sl].reshape(fan_in, fan_out),
                   self._theta[b_sl])

    def _forward(self):
        acts = [self.dataset.features]
        n_layers = len(self._slices)
        for i, (w, b) in enumerate(self._layers()):
            pre = acts[-1] @ w + b
            acts.append(np.tanh(pre) if i < n_layers - 1 else pre)
        return acts

    def value(self) -> float:
        p = self._forward()[-1][:, 0]
        y = self.dataset.labels
        if self.objective == "mse":
            return float(np.mean((p - y) ** 2))
        return float(np.mean(np.logaddexp(0.0, p) - y * p))

    def gradient(self) -> np.ndarray:
        acts = self._forward()
        p = acts[-1][:, 0]
        y = self.dataset.labels
        n = y.shape[0]
        if self.objective == "mse":
            delta = (2.0 / n) * (p - y)
        else:
            delta = (_sigmoid(p) - y) / n
        delta = delta[:, None]
        grad = np.empty_like(self._theta)
        weights = [w for w, _ in self._layers()]
        for i in range(len(self._slices) - 1, -1, -1):
            w_sl, b_sl, fan_in, fan_out = self._slices[i]
            grad[w_sl] = (acts[i].T @ delta).reshape(-1)
            grad[b_sl] = delta.sum(axis=0)
            if i > 0:
                # acts[i] = tanh(pre_i) for hidden layers, so the local
                # derivative is 1 - acts[i]^2.
                delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
        return grad

    def clone(self) -> "TinyMLP":
        other = object.__new__(TinyMLP)
        other.widths = self.widths
        other.dataset = self.dataset
        other.objective = self.objective
        other._slices = self._slices
        other._set_theta(self._theta)
        return other

    def __repr__(self) -> str:
        arch = "->".join(str(w) for w in self.widths)
        return f"TinyMLP({arch}, objective={self.objective!r}, dim={self.dim})"


class AnalyticPolynomial(DifferentiableModel):
    """Polynomial objective with a closed-form gradient.

    terms is an iterable of (coefficient, exponents) pairs where the
    exponent tuple has one nonnegative integer per coordinate, e.g.
    ``[(1.5, (2, 0)), (0.5, (0, 2))]`` for (3 w1^2 + w2^2) / 2.
    """

    def __init__(self, dim: int, terms, theta0=None):
        dim = int(dim)
        if dim < 1:
            raise ValueError("dim must be at least 1")
        parsed = []
        for coeff, exps in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != dim or any(e < 0 for e in exps):
                raise ValueError(f"bad exponent tuple {exps} for dim {dim}")
            parsed.append((float(coeff), exps))
        self.terms = tuple(parsed)
        self._set_theta(np.zeros(dim) if theta0 is None else theta0)
        if self.dim != dim:
            raise ValueError("theta0 does not match dim")

    def value(self) -> float:
        w = self._theta
        total = 0.0
        for coeff, exps in self.terms:
            term = coeff
            for wi, e in zip(w, exps):
                if e:
                    term *= wi**e
            total += term
        return total

    def gradient(self) -> np.ndarray:
        w = self._theta
        grad = np.zeros_like(w)
        for coeff, exps in self.terms:
            for i, e in enumerate(exps):
                if e == 0:
                    continue
                part = coeff * e * w[i] ** (e - 1)
                for j, ej in enumerate(exps):
                    if j != i and ej:
                        part *= w[j] ** ej
                grad[i] += part
        return grad

    def clone(self) -> "AnalyticPolynomial":
        return AnalyticPolynomial(self.dim, self.terms, theta0=self._theta)


class FactoredScalarModel(DifferentiableModel):
    """The two-parameter factored objective l(x y) seen as a model.

    Embeds the scalar theory at dimension 2 so the probe's eigenpair,
    derivative tensors, and stability can be checked against closed
    forms from the factored-dynamics module.
    """

    def __init__(self, loss: ScalarLoss, x: float, y: float):
        self.loss = loss
        self._set_theta([x, y])

    def value(self) -> float:
        x, y = self._theta
        return self.loss.value(x * y)

    def gradient(self) -> np.ndarray:
        x, y = self._theta
        g = self.loss.derivative(x * y, 1)
        return np.array([g * y, g * x])

    def clone(self) -> "FactoredScalarModel":
        x, y = self._theta
        return FactoredScalarModel(self.loss, x, y)


class ScalarLossModel(DifferentiableModel):
    """A scalar loss embedded at dimension 1 for reduction checks."""

    def __init__(self, loss: ScalarLoss, z: float):
        self.loss = loss
        self._set_theta([z])

    def value(self) -> float:
        return self.loss.value(self._theta[0])

    def gradient(self) -> np.ndarray:
        return np.array([self.loss.derivative(self._theta[0], 1)])

    def clone(self) -> "ScalarLossModel":
        return ScalarLossModel(self.loss, self._theta[0])


@dataclass(frozen=True)
class ProbeConfig:
    """Numerical controls for the stability probe.

    Finite-difference steps are scales: the actual step is
    scale * (1 + ||theta||), which keeps the perturbation meaningful
    across parameter magnitudes.  The fourth-difference step is the
    coarsest because its rounding error grows like h^-4.
    """

    power_iters: int = 30
    cg_iters: int = 50
    cg_tol: float = 1e-8
    hvp_step: float = 1e-5
    d3_step: float = 1e-4
    d4_step: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if self.power_iters < 1 or self.cg_iters < 1:
            raise ValueError("iteration counts must be positive")
        for name in ("cg_tol", "hvp_step", "d3_step", "d4_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ProbeReport:
    """One stability measurement: alpha = q_term - d4 as stored.

    q_term is 3 g3' H+ g3 and d4 the fourth directional derivative along
    v_max; both are contracted along the same unit eigenvector estimate.
    """

    lambda_max: float
    v_max: np.ndarray
    g3: np.ndarray
    q_term: float
    d4: float
    alpha: float


def _restore(model: DifferentiableModel, base: np.ndarray) -> None:
    model.theta = base
    # theta copies on both set and get, so equality here certifies the
    # probe left the model exactly where it found it.
    if not np.array_equal(model.theta, base):
        raise AssertionError("parameter vector was not restored after a probe")


def hvp(model: DifferentiableModel, v, config: ProbeConfig | None = None) -> np.ndarray:
    """Hessian-vector product by central difference of exact gradients.

    Uses step h = hvp_step (1 + ||theta||) / max(||v||, 1e-12); exact for
    quadratic objectives up to rounding.  The zero vector maps to zero.
    """
    config = config or ProbeConfig()
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("direction must be finite")
    base = model.theta
    h = config.hvp_step * (1.0 + float(np.linalg.norm(base)))
    h /= max(float(np.linalg.norm(v)), 1e-12)
    try:
        model.theta = base + h * v
        g_plus = model.gradient()
        model.theta = base - h * v
        g_minus = model.gradient()
    finally:
        _restore(model, base)
    return (g_plus - g_minus) / (2.0 * h)


def top_eigenpair(
    model: DifferentiableModel,
    config: ProbeConfig | None = None,
    *,
    history: list | None = None,
):
    """Dominant Hessian eigenpair by seeded power iteration.

    Runs power_iters rounds of v <- Hv/||Hv|| from a random unit start
    and returns the Rayleigh quotient with the final unit vector.  The
    iteration tracks the largest-|eigenvalue| pair, so a negative result
    (indefinite Hessian dominated by curvature downhill) is flagged with
    a warning rather than hidden.  Pass a list as ``history`` to collect
    the per-round Rayleigh quotients.
    """
    config = config or ProbeConfig()
    rng = np.random.default_rng(config.seed)
    v = rng.standard_normal(model.dim)
    v /= np.linalg.norm(v)
    for _ in range(config.power_iters):
        w = hvp(model, v, config)
        norm_w = float(np.linalg.norm(w))
        if norm_w < 1e-12:
            raise PowerIterationError(
                f"power iteration broke down: ||Hv|| = {norm_w!r}"
            )
        if history is not None:
            history.append(float(v @ w))
        v = w / norm_w
    lam = float(v @ hvp(model, v, config))
    if lam < 0.0:
        warnings.warn(
            "dominant-|eigenvalue| estimate is negative; the Hessian is "
            "not positive definite here",
            stacklevel=2,
        )
    return lam, v


def third_directional(
    model: DifferentiableModel, v, config: ProbeConfig | None = None
) -> np.ndarray:
    """Gradient of w -> v' H(w) v, by a second difference of gradients.

    Returns (grad f(theta+hv) - 2 grad f(theta) + grad f(theta-hv)) / h^2
    with h = d3_step (1 + ||theta||); exact for cubic objectives up to
    rounding.  v must be a unit vector.
    """
    config = config or ProbeConfig()
    v = np.asarray(v, dtype=float)
    base = model.theta
    h = config.d3_step * (1.0 + float(np.linalg.norm(base)))
    try:
        g_mid = model.gradient()
        model.theta = base + h * v
        g_plus = model.gradient()
        model.theta = base - h * v
        g_minus = model.gradient()
    finally:
        _restore(model, base)
    return (g_plus - 2.0 * g_mid + g_minus) / (h * h)


def fourth_directional(
    model: DifferentiableModel, v, config: ProbeConfig | None = None
) -> float:
    """Fourth derivative of t -> f(theta + t v) at 0, five-point stencil.

    v must be a unit vector; the step is d4_step (1 + ||theta||).
    """
    config = config or ProbeConfig()
    v = np.asarray(v, dtype=float)
    base = model.theta
    h = config.d4_step * (1.0 + float(np.linalg.norm(base)))
    try:
        f0 = model.value()
        values = {}
        for k in (-2, -1, 1, 2):
            model.theta = base + (k * h) * v
            values[k] = model.value()
    finally:
        _restore(model, base)
    return (values[-2] - 4.0 * values[-1] + 6.0 * f0
            - 4.0 * values[1] + values[2]) / h**4


def pinv_solve(
    model: DifferentiableModel, b, config: ProbeConfig | None = None
) -> np.ndarray:
    """Minimum-norm least-squares solve of H x = b via CGLS.

    Works on the normal equations with two Hessian-vector products per
    iteration (H is symmetric, so H doubles as its own transpose); the
    zero start keeps every iterate inside range(H), which is what makes
    the converged answer the pseudoinverse solution even when H is
    singular.  Stops when ||Hx - b|| < cg_tol; hitting the iteration cap
    is a soft failure - the current iterate is still returned, with a
    warning carrying the final residual.  Denominators are damped by
    1e-12 so a vanishing search direction cannot divide by zero.
    """
    config = config or ProbeConfig()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    x = np.zeros_like(b)
    r = b.copy()
    if float(np.linalg.norm(r)) < config.cg_tol:
        return x
    s = hvp(model, r, config)
    p = s.copy()
    gamma = float(s @ s)
    for _ in range(config.cg_iters):
        q = hvp(model, p, config)
        step = gamma / (float(q @ q) + 1e-12)
        x += step * p
        r -= step * q
        if float(np.linalg.norm(r)) < config.cg_tol:
            return x
        s = hvp(model, r, config)
        gamma_new = float(s @ s)
        beta = gamma_new / (gamma + 1e-12)
        gamma = gamma_new
        p = s + beta * p
    warnings.warn(
        f"CGLS stopped at the {config.cg_iters}-iteration cap with "
        f"residual {float(np.linalg.norm(r))!r}",
        stacklevel=2,
    )
    return x


def multivariate_stability(
    model: DifferentiableModel, config: ProbeConfig | None = None
) -> ProbeReport:
    """Probe the model's product-stability at its current parameters.

    Chains the top eigenpair, the third-derivative contraction g3, the
    pseudoinverse solve, and the fourth directional derivative into

        alpha = 3 g3' (H+ g3) - d4.

    The sign convention matches the scalar functional: positive alpha is
    the stable case.  No positivity is asserted; trained networks are
    measured, not certified.
    """
    config = config or ProbeConfig()
    lam, v = top_eigenpair(model, config)
    g3 = third_directional(model, v, config)
    q_term = 3.0 * float(g3 @ pinv_solve(model, g3, config))
    d4 = fourth_directional(model, v, config)
    return ProbeReport(
        lambda_max=lam,
        v_max=v,
        g3=g3,
        q_term=q_term,
        d4=d4,
        alpha=q_term - d4,
    )


def check_gradient(
    model: DifferentiableModel,
    *,
    probes: int = 10,
    seed: int = 0,
    step_scale: float = 1e-6,
) -> float:
    """Max relative gap between the gradient and directional differences.

    Draws random unit directions u and compares g'u with the central
    difference of the value at step step_scale (1 + ||theta||); the gap
    is measured relative to ||g||.  Leaves the model untouched.
    """
    rng = np.random.default_rng(seed)
    base = model.theta
    h = step_scale * (1.0 + float(np.linalg.norm(base)))
    g = model.gradient()
    scale = max(float(np.linalg.norm(g)), 1e-12)
    worst = 0.0
    try:
        for _ in range(probes):
            u = rng.standard_normal(model.dim)
            u /= np.linalg.norm(u)
            model.theta = base + h * u
            f_plus = model.value()
            model.theta = base - h * u
            f_minus = model.value()
            fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, abs(fd - float(g @ u)) / scale)
    finally:
        _restore(model, base)
    return worst


PROBE_COLUMNS = ("step", "loss", "lambda_max", "alpha", "grad_norm")


@dataclass
class ProbeSeries:
    """Stability measurements collected along a training run."""

    eta: float
    probe_every: int
    step: np.ndarray = field(repr=False)
    loss: np.ndarray = field(repr=False)
    lambda_max: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    grad_norm: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.step.shape[0]

    def to_csv(self, path) -> None:
        """Write `step,loss,lambda_max,alpha,grad_norm` rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PROBE_COLUMNS)
            for i in range(len(self)):
                writer.writerow(
                    [str(int(self.step[i]))]
                    + [
                        _format17(col[i])
                        for col in (self.loss, self.lambda_max,
                                    self.alpha, self.grad_norm)
                    ]
                )


def train_and_probe(
    model: TinyMLP,
    eta: float,
    steps: int,
    probe_every: int,
    config: ProbeConfig | None = None,
) -> ProbeSeries:
    """Full-batch gradient descent with periodic stability probes.

    Probes fire at every step index divisible by probe_every, including
    step 0 and, when it lands on the grid, the state after the final
    update.  A non-finite value or a parameter norm beyond 1e8 aborts
    with :class:`DivergenceError`.
    """
    if not eta > 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if probe_every < 1:
        raise ValueError("probe_every must be at least 1")
    config = config or ProbeConfig()
    rows = []
    for t in range(steps + 1):
        value = model.value()
        if not math.isfinite(value) or float(np.linalg.norm(model.theta)) > 1e8:
            raise DivergenceError(
                f"training diverged at step {t}: loss = {value!r}"
            )
        if t % probe_every == 0:
            report = multivariate_stability(model, config)
            grad_norm = float(np.linalg.norm(model.gradient()))
            rows.append((t, value, report.lambda_max, report.alpha, grad_norm))
        if t < steps:
            model.theta = model.theta - eta * model.gradient()
    data = np.array(rows, dtype=float)
    return ProbeSeries(
        eta=eta,
        probe_every=probe_every,
        step=data[:, 0].astype(int),
        loss=data[:, 1],
        lambda_max=data[:, 2],
        alpha=data[:, 3],
        grad_norm=data[:, 4],
    )
