"""Probing the stability functional without any closed-form derivatives.

The multivariate analogue of alpha contracts third and fourth
derivatives of the objective against the top Hessian eigenvector, all
estimated from Hessian-vector products and finite differences.  This
script checks the probe on a polynomial with known answer, then tracks
alpha and the top eigenvalue along an actual TinyMLP training run.
"""

from pathlib import Path

import numpy as np

from eoslab import (
    AnalyticPolynomial,
    ProbeConfig,
    TinyMLP,
    make_blob_dataset,
    multivariate_stability,
    render_svg,
    train_and_probe,
)

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# ground truth first: (3w1^2 + w2^2)/2 + w1^3 + w1^4 at the origin has
# H = diag(3, 1), g3 = (6, 0), d4 = 24, so
# alpha = 3 g3' H+ g3 - d4 = 3 * 12 - 24 = 12
quartic = AnalyticPolynomial(
    2, ((1.5, (2, 0)), (0.5, (0, 2)), (1.0, (3, 0)), (1.0, (4, 0))),
    np.zeros(2),
)
report = multivariate_stability(quartic)
print("quartic benchmark (exact alpha = 12):")
print(f"  lambda_max = {report.lambda_max:.9f}   "
      f"q_term = {report.q_term:.9f}   d4 = {report.d4:.9f}")
print(f"  alpha      = {report.alpha:.9f}")

# now a real model: train a 2-8-8-1 tanh net on two Gaussian blobs and
# probe every 100 steps
dataset = make_blob_dataset(200, 2, seed=0)
model = TinyMLP((2, 8, 8, 1), dataset, objective="mse", seed=1)
eta = 0.4
series = train_and_probe(model, eta, 4000, 100, ProbeConfig(seed=2))

print(f"\ntrained {model.dim}-parameter TinyMLP, eta = {eta}, "
      f"{len(series.step)} probes")
print(f"loss:        {series.loss[0]:.6f} -> {series.loss[-1]:.6f}")
print(f"lambda_max:  {series.lambda_max[0]:.4f} -> "
      f"{series.lambda_max[-1]:.4f}   (2/eta = {2.0 / eta})")
positive = int(np.count_nonzero(series.alpha > 0.0))
print(f"alpha > 0 at {positive} of {len(series.alpha)} probes "
      f"(report only; no theorem is being tested here)")

csv_path = OUT / "probe_mlp.csv"
series.to_csv(csv_path)
render_svg(csv_path, "step", ("lambda_max",), OUT / "probe_sharpness.svg",
           ref_y=2.0 / eta, title="top Hessian eigenvalue vs 2/eta")
render_svg(csv_path, "step", ("alpha",), OUT / "probe_alpha.svg",
           title="probed stability functional along training")
print(f"\ncharts written under {OUT}")
