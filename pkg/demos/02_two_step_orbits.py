"""Period-two orbits of scalar gradient descent past the 2/l'' threshold.

Above eta = 2/l''(z*) the minimizer repels, but for positive alpha the
two-step map a -> G(G(a)) picks up a pair of attracting fixed points
around z*.  This script solves for the pair, confirms plain iteration
lands on it, and sweeps eta to draw the opening branches.
"""

from pathlib import Path

from eoslab import (
    diagram,
    find_fixed_points,
    parse_loss,
    render_svg,
    scalar_gd_step,
    two_step_converge,
    two_step_residual,
)

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

loss = parse_loss("mlsq:a=1,n=2")
eta = 0.26  # threshold is 2/l''(1) = 0.25
z_minus, z_plus = find_fixed_points(loss, eta)
print(f"eta = {eta}, threshold = {2.0 / loss.derivative(loss.z_star, 2)}")
print(f"solved fixed points:   z- = {z_minus:.12f}   z+ = {z_plus:.12f}")
print(f"two-step residuals:    {two_step_residual(loss, eta, z_minus):.3e}"
      f"   {two_step_residual(loss, eta, z_plus):.3e}")

# the same pair, found by just iterating gradient descent from near z*
lo, hi = sorted(two_step_converge(loss, eta, loss.z_star + 0.01))
print(f"reached by iteration:  z- = {lo:.12f}   z+ = {hi:.12f}")

# watch a few raw steps alternate between the two branches
a = loss.z_star + 0.01
print("\nfirst iterates from z* + 0.01:")
for t in range(12):
    a = scalar_gd_step(a, loss, eta)
    print(f"  step {t + 1:2d}: a = {a:.9f}")

# branch diagram over a window just past the threshold
diag = diagram(loss, 0.2505, 0.27, 40)
csv_path = OUT / "mlsq_branches.csv"
diag.to_csv(csv_path)
render_svg(csv_path, "eta", ("z_minus", "z_plus"),
           OUT / "mlsq_branches.svg",
           title="period-two branches past eta = 0.25")
print(f"\nbranch diagram written under {OUT}")
