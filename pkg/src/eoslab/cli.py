"""Command line driver.

One subcommand per capability: scalar stability queries, factored-GD
simulation, bifurcation diagrams, orbit-rate inspection, sharpness
prediction, two-step solving, model probing, SVG plotting, and the
named experiment presets.

Global flags (given after the subcommand): ``--out DIR`` directs file
artifacts, ``--seed N`` seeds anything stochastic, ``--config FILE``
reads ``key=value`` lines (UTF-8, ``#`` comments) whose keys name long
flags of the subcommand; explicit command-line flags override the file.

Exit codes: 0 success, 1 usage error, 2 numeric failure (divergence,
root not found, infeasible request), 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bifurcation as bif
from . import probe as probe_mod
from .dynamics import RunConfig, run
from .errors import EosLabError
from .losses import FAMILIES, minimum, parse_loss, product_stability
from .presets import PRESET_NAMES, build_preset, run_preset
from .svg import render_svg

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--out", default=".", help="directory for file artifacts")
    sub.add_argument("--seed", type=int, default=0, help="seed for stochastic pieces")
    sub.add_argument("--config", default=None,
                     help="key=value file supplying flag defaults")


def build_parser() -> _Parser:
    parser = _Parser(prog="eoslab", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=_Parser)

    p = commands.add_parser("stability", help="product-stability of a loss at z")
    _add_common(p)
    p.add_argument("--loss", required=True,
                   help=f"loss spec, families: {', '.join(sorted(FAMILIES))}")
    p.add_argument("--z", type=float, default=None,
                   help="evaluation point (default: the minimizer)")

    p = commands.add_parser("simulate", help="run factored gradient descent")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--s0", type=float, default=None)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--max-steps", type=int, default=1_000_000)
    p.add_argument("--record-stride", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-13,
                   help="convergence tolerance on parameter deltas")
    p.add_argument("--csv", default="trajectory.csv",
                   help="trajectory file name under --out")

    p = commands.add_parser("bifurcation", help="sweep a bifurcation diagram")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--eta-lo", type=float, required=True)
    p.add_argument("--eta-hi", type=float, required=True)
    p.add_argument("--count", type=int, default=40)
    p.add_argument("--csv", default="diagram.csv")

    p = commands.add_parser("zhat", help="orbit learning rate and derivatives at z")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--z", type=float, required=True)

    p = commands.add_parser("predict-sharpness",
                            help="limiting sharpness 2/eta - 3 l''^4/alpha eta")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--eta", type=float, required=True)

    p = commands.add_parser("two-step",
                            help="period-two fixed points, solved and iterated")
    _add_common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--a0", type=float, default=None,
                   help="iteration start (default: z* + 0.01)")

    p = commands.add_parser("probe",
                            help="train a TinyMLP and probe its stability")
    _add_common(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--widths", default="2,8,8,1",
                   help="comma-separated layer widths")
    p.add_argument("--objective", choices=("mse", "bce"), default="mse")
    p.add_argument("--eta", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--probe-every", type=int, default=100)
    p.add_argument("--dataset", default=None,
                   help="load this dataset CSV instead of generating blobs")
    p.add_argument("--save-dataset", default=None,
                   help="also write the dataset CSV under --out")
    p.add_argument("--csv", default="probe.csv")

    p = commands.add_parser("plot", help="render an SVG chart from a CSV")
    _add_common(p)
    p.add_argument("--csv", required=True, help="input CSV path")
    p.add_argument("--x", required=True, help="x column name")
    p.add_argument("--y", required=True, help="comma-separated y column names")
    p.add_argument("--svg", required=True, help="output file name under --out")
    p.add_argument("--ref-y", type=float, default=None,
                   help="dashed horizontal reference line")
    p.add_argument("--log-y", action="store_true")
    p.add_argument("--title", default="")

    p = commands.add_parser("preset", help="run a named experiment preset")
    _add_common(p)
    p.add_argument("name", choices=PRESET_NAMES)

    return parser


def _read_config(path: str) -> dict:
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            pairs[key.strip()] = value.strip()
    return pairs


_TRUE_WORDS = frozenset(("1", "true", "yes", "on"))
_FALSE_WORDS = frozenset(("0", "false", "no", "off"))


def _apply_config(parser: _Parser, argv: list) -> list:
    """Splice config values into argv as flags before the user's flags.

    Going through argv (instead of set_defaults) keeps argparse's type
    conversion and makes explicit flags override the file naturally.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    pairs = _read_config(known.config)

    commands = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    split = next(
        (i for i, tok in enumerate(argv) if tok in commands.choices), None
    )
    if split is None:
        return argv
    sub = commands.choices[argv[split]]
    option_strings = {
        s: act for act in sub._actions for s in act.option_strings
    }
    injected = []
    for key, value in pairs.items():
        flag = "--" + key.replace("_", "-")
        action = option_strings.get(flag)
        if action is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            word = value.lower()
            if word in _TRUE_WORDS:
                injected.append(flag)
            elif word not in _FALSE_WORDS:
                raise ValueError(f"config key {key!r} wants a boolean, got {value!r}")
        else:
            injected.extend([flag, value])
    return argv[: split + 1] + injected + argv[split + 1 :]


def _cmd_stability(args) -> None:
    loss = parse_loss(args.loss)
    z = minimum(loss) if args.z is None else args.z
    result = product_stability(loss, z)
    print(f"loss = {loss.spec}")
    print(f"z = {z!r}")
    print(f"alpha = {result.alpha!r}")
    print(f"stable = {'yes' if result.is_stable else 'no'}")


def _cmd_simulate(args) -> None:
    loss = parse_loss(args.loss)
    traj = run(RunConfig(
        loss=loss,
        eta=args.eta,
        x0=args.x0,
        y0=args.y0,
        z0=args.z0,
        s0=args.s0,
        max_steps=args.max_steps,
        record_stride=args.record_stride,
        convergence_tol=args.tol,
    ))
    path = Path(args.out) / args.csv
    path.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(path)
    counts = ", ".join(f"{k.value}:{v}" for k, v in traj.phase_counts().items())
    print(f"status = {traj.status} after {traj.steps} steps")
    print(f"final z = {float(traj.z[-1])!r}, s = {float(traj.s[-1])!r}")
    print(f"final sharpness = {float(traj.sharpness[-1])!r}")
    print(f"recorded phases = {counts}")
    print(f"wrote {path}")


def _cmd_bifurcation(args) -> None:
    loss = parse_loss(args.loss)
    diag = bif.diagram(loss, args.eta_lo, args.eta_hi, args.count)
    path = Path(args.out) / args.csv
    path.parent.mkdir(parents=True, exist_ok=True)
    diag.to_csv(path)
    print(f"{len(diag.eta)} rows over eta in [{args.eta_lo}, {args.eta_hi}]")
    print(f"wrote {path}")


def _cmd_zhat(args) -> None:
    loss = parse_loss(args.loss)
    eta_hat = bif.orbit_learning_rate(loss, args.z)
    first, second = bif.orbit_rate_derivatives(loss, args.z)
    phi = bif.drift_correction(loss, args.z)
    print(f"zhat = {eta_hat!r}")
    print(f"zhat_prime = {first!r}")
    print(f"zhat_second_at_zstar = {second!r}")
    print(f"phi = {phi!r}")


def _cmd_predict(args) -> None:
    loss = parse_loss(args.loss)
    value = bif.predict_final_sharpness(loss, args.eta)
    print(f"predicted final sharpness = {value!r}")
    print(f"two_over_eta = {2.0 / args.eta!r}")
    print(f"correction = {2.0 / args.eta - value!r}")


def _cmd_two_step(args) -> None:
    loss = parse_loss(args.loss)
    z_minus, z_plus = bif.find_fixed_points(loss, args.eta)
    print(f"z_minus = {z_minus!r}")
    print(f"z_plus = {z_plus!r}")
    print(f"residual_minus = {bif.two_step_residual(loss, args.eta, z_minus)!r}")
    print(f"residual_plus = {bif.two_step_residual(loss, args.eta, z_plus)!r}")
    a0 = minimum(loss) + 0.01 if args.a0 is None else args.a0
    lo, hi = sorted(bif.two_step_converge(loss, args.eta, a0))
    print(f"iterated from a0 = {a0!r}: {lo!r}, {hi!r}")
    print(f"agreement = {max(abs(lo - z_minus), abs(hi - z_plus))!r}")


def _cmd_probe(args) -> None:
    if args.dataset is not None:
        dataset = probe_mod.load_dataset_csv(args.dataset)
    else:
        dataset = probe_mod.make_blob_dataset(
            args.samples, args.dim, seed=args.seed
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.save_dataset:
        probe_mod.save_dataset_csv(dataset, out / args.save_dataset)
        print(f"wrote {out / args.save_dataset}")
    widths = tuple(int(w) for w in args.widths.split(","))
    model = probe_mod.TinyMLP(widths, dataset, objective=args.objective,
                              seed=args.seed + 1)
    series = probe_mod.train_and_probe(
        model, args.eta, args.steps, args.probe_every,
        probe_mod.ProbeConfig(seed=args.seed + 2),
    )
    path = out / args.csv
    series.to_csv(path)
    print(f"{len(series)} probes over {args.steps} steps at eta = {args.eta}")
    print(f"final loss = {float(series.loss[-1])!r}")
    print(f"final lambda_max = {float(series.lambda_max[-1])!r} "
          f"(2/eta = {2.0 / args.eta!r})")
    print(f"final alpha = {float(series.alpha[-1])!r}")
    print(f"wrote {path}")


def _cmd_plot(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = render_svg(
        args.csv,
        args.x,
        [name for name in args.y.split(",") if name],
        out / args.svg,
        title=args.title,
        ref_y=args.ref_y,
        log_y=args.log_y,
    )
    print(f"wrote {target}")


def _cmd_preset(args) -> None:
    preset = build_preset(args.name, Path(args.out) / args.name, args.seed)
    manifest = run_preset(preset)
    print(f"preset {args.name}: {len(manifest['files'])} files, "
          f"{len(manifest['failures'])} failures")
    for failure in manifest["failures"]:
        print(f"  failed {failure['run']}: {failure['error']}")
    print(f"wrote {Path(preset.out_dir) / 'manifest.json'}")


_HANDLERS = {
    "stability": _cmd_stability,
    "simulate": _cmd_simulate,
    "bifurcation": _cmd_bifurcation,
    "zhat": _cmd_zhat,
    "predict-sharpness": _cmd_predict,
    "two-step": _cmd_two_step,
    "probe": _cmd_probe,
    "plot": _cmd_plot,
    "preset": _cmd_preset,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
    except OSError as exc:
        print(f"eoslab: i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"eoslab: error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _HANDLERS[args.command](args)
    except EosLabError as exc:
        print(f"eoslab: numeric failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"eoslab: i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"eoslab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
