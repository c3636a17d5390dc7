"""Three phases of factored training at a supercritical step size.

Running gradient descent on L(x, y) = l(xy) with eta l''(z*) s0 > 2
produces a characteristic sequence: the product heads to the minimizer
while the sharpness grows (I), a period-two bounce burns excess
sharpness down (II), then the orbit collapses below threshold and
converges (III).  This script runs one such trajectory, prints the
phase statistics, and renders the phase portrait.
"""

from pathlib import Path

from eoslab import RunConfig, parse_loss, predict_final_sharpness, render_svg, run

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

loss = parse_loss("mlsq:a=1,n=2")
eta = 0.01
lpp = loss.derivative(loss.z_star, 2)
s0 = 2.1 / (eta * lpp)  # eta l'' s0 = 2.1, just past the threshold

traj = run(RunConfig(loss=loss, eta=eta, z0=1.02, s0=s0,
                     max_steps=200_000, record_stride=2))
print(f"status: {traj.status} after {traj.steps} steps "
      f"({len(traj.t)} records)")
print(f"worst balance residual:      {traj.max_balance_residual:.3e}")
print(f"worst conservation residual: {traj.max_conservation_residual:.3e}")

print("\nsteps spent per phase:")
for phase, count in traj.phase_counts().items():
    print(f"  {phase.value:>3s}: {count}")

final = float(traj.sharpness[-1])
predicted = predict_final_sharpness(loss, eta)
print(f"\nfinal sharpness:     {final:.6f}")
print(f"predicted limit:     {predicted:.6f}   (2/eta = {2.0 / eta})")
print(f"gap:                 {abs(final - predicted):.3e}")

csv_path = OUT / "phases_mlsq.csv"
traj.to_csv(csv_path)
render_svg(csv_path, "t", ("sharpness",), OUT / "phases_sharpness.svg",
           ref_y=2.0 / eta, title="sharpness against the 2/eta line")
render_svg(csv_path, "z", ("gamma",), OUT / "phases_portrait.svg",
           title="(z, gamma) phase portrait")
print(f"\ncharts written under {OUT}")
