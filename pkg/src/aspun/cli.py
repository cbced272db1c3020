"""Command-line entry points.

Subcommands: simulate, reconstruct, train, eval, gradcheck, ablate.
Runs are configured by a flat ``key = value`` text file with ``#``
comments and namespaced keys (``net.stages``, ``solver.reg_weight``,
``train.lr_initial``); unknown keys are rejected with their line number.

Exit codes: 0 success, 2 usage or config error, 3 container format
error, 4 numerical failure (divergence, NaN loss, failed gradient
check).  Metric output is fixed-point with 4 decimals; all file writes
are atomic.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .autodiff.gradcheck import REGISTRY, grad_check
from .cassi import CodedMask, DispersionSpec, Measurement, SpectralCube, simulate
from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    ShapeError,
    StageError,
    TrainingDivergedError,
)
from .fista import SolverConfig, solve
from .network import NetworkConfig, UnfoldingNetwork
from .training import SyntheticSceneSpec, TrainConfig, evaluate, generate_scene, train

_TRUE, _FALSE = "true", "false"

CONFIG_SCHEMA: dict[str, tuple[type, object]] = {
    "sim.d": (int, 1),
    "sim.channels": (int, 8),
    "sim.noise": (float, 0.0),
    "sim.mask_density": (float, 0.5),
    "solver.step_size": (float, 0.0),
    "solver.reg_weight": (float, 0.01),
    "solver.max_iters": (int, 200),
    "solver.transform": (str, "identity"),
    "solver.tolerance": (float, 1e-8),
    "solver.accelerate": (bool, True),
    "net.stages": (int, 3),
    "net.base_channels": (int, 16),
    "net.window_size": (int, 4),
    "net.pool_factor": (int, 2),
    "net.heads": (int, 2),
    "net.ffn_expansion": (int, 2),
    "net.use_asp": (bool, True),
    "net.use_isa": (bool, True),
    "net.use_gla": (bool, True),
    "net.use_pna": (bool, True),
    "net.use_pna_transformer": (bool, True),
    "net.attention": (str, "pna"),
    "net.seed": (int, 0),
    "train.lr_initial": (float, 3e-4),
    "train.lr_min": (float, 1e-6),
    "train.total_steps": (int, 500),
    "train.batch_size": (int, 1),
    "train.charbonnier_eps": (float, 1e-3),
    "train.seed": (int, 0),
    "train.adam_beta1": (float, 0.9),
    "train.adam_beta2": (float, 0.999),
    "train.adam_eps": (float, 1e-8),
    "train.eval_interval": (int, 100),
    "scene.height": (int, 32),
    "scene.width": (int, 32),
    "scene.blob_count": (int, 6),
    "scene.smoothness": (float, 2.0),
    "scene.train_count": (int, 4),
    "scene.eval_count": (int, 2),
}

ABLATION_SWITCHES = ("use_asp", "use_isa", "use_gla", "use_pna", "use_pna_transformer")


class RunConfig:
    """Typed view over a parsed key=value file (defaults filled in)."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def network_config(self) -> NetworkConfig:
        v = self.values
        return NetworkConfig(
            stages=v["net.stages"],
            base_channels=v["net.base_channels"],
            window_size=v["net.window_size"],
            pool_factor=v["net.pool_factor"],
            num_heads=v["net.heads"],
            ffn_expansion=v["net.ffn_expansion"],
            use_asp=v["net.use_asp"],
            use_isa=v["net.use_isa"],
            use_gla=v["net.use_gla"],
            use_pna=v["net.use_pna"],
            use_pna_transformer=v["net.use_pna_transformer"],
            attention_kind=v["net.attention"],
        )

    def solver_config(self) -> SolverConfig:
        v = self.values
        return SolverConfig(
            step_size=None if v["solver.step_size"] == 0.0 else v["solver.step_size"],
            reg_weight=v["solver.reg_weight"],
            max_iters=v["solver.max_iters"],
            transform=v["solver.transform"],
            tolerance=v["solver.tolerance"],
            accelerate=v["solver.accelerate"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lr_initial=v["train.lr_initial"],
            lr_min=v["train.lr_min"],
            total_steps=v["train.total_steps"],
            batch_size=v["train.batch_size"],
            charbonnier_eps=v["train.charbonnier_eps"],
            seed=v["train.seed"],
            adam_beta1=v["train.adam_beta1"],
            adam_beta2=v["train.adam_beta2"],
            adam_eps=v["train.adam_eps"],
            eval_interval=v["train.eval_interval"],
        )

    def dispersion(self) -> DispersionSpec:
        return DispersionSpec(self.values["sim.d"])

    def scene_specs(self, count: int, seed_offset: int) -> list[SyntheticSceneSpec]:
        v = self.values
        return [
            SyntheticSceneSpec(
                height=v["scene.height"],
                width=v["scene.width"],
                channels=v["sim.channels"],
                blob_count=v["scene.blob_count"],
                spectral_smoothness=v["scene.smoothness"],
                seed=v["train.seed"] + seed_offset + index,
            )
            for index in range(count)
        ]


def _convert(key: str, text: str, line: int):
    kind, _ = CONFIG_SCHEMA[key]
    if kind is bool:
        if text == _TRUE:
            return True
        if text == _FALSE:
            return False
        raise ConfigError(f"key {key!r} expects true/false, got {text!r}", line=line)
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}", line=line) from exc


def parse_config_text(text: str) -> RunConfig:
    """Parse a key=value config; total (raises on any problem, never partial)."""
    values = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=line_number)
        key, _, value_text = line.partition("=")
        key, value_text = key.strip(), value_text.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=line_number)
        values[key] = _convert(key, value_text, line_number)
    return RunConfig(values)


def parse_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _format_metric(value: float) -> str:
    return "inf" if value == float("inf") else f"{value:.4f}"


def _make_mask(run_cfg: RunConfig) -> CodedMask:
    rng = np.random.default_rng(run_cfg["train.seed"] + 9001)
    density = run_cfg["sim.mask_density"]
    values = (rng.uniform(0, 1, size=(run_cfg["scene.height"], run_cfg["scene.width"]))
              < density).astype(np.float64)
    return CodedMask(values)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cube = SpectralCube(io.read_cube_file(args.cube))
    mask = CodedMask(io.read_plane_file(args.mask))
    spec = DispersionSpec(args.d)
    meas = simulate(cube, mask, spec, args.noise, args.seed)
    io.write_cube_file(args.out, meas.data)
    print(f"cube {cube.height}x{cube.width}x{cube.channels} -> "
          f"measurement {meas.height}x{meas.width} (d={args.d}, noise={args.noise})")
    return 0


def cmd_reconstruct(args) -> int:
    run_cfg = parse_config(args.config)
    channels = run_cfg["sim.channels"]
    spec = run_cfg.dispersion()
    meas = Measurement(io.read_plane_file(args.meas))
    mask = CodedMask(io.read_plane_file(args.mask))
    if args.algo == "fista":
        cube, trace = solve(meas, mask, spec, run_cfg.solver_config(), channels)
        if args.trace:
            io.write_csv(args.trace, ["iteration", "objective"],
                         [(index + 1, value) for index, value in enumerate(trace)])
        print(f"fista: {len(trace)} iterations, final objective {trace[-1]:.6e}")
    else:
        if not args.checkpoint:
            print("error: --checkpoint is required for --algo aspun", file=sys.stderr)
            return 2
        net = UnfoldingNetwork(run_cfg.network_config(), channels, rng=run_cfg["net.seed"])
        net.load_state_dict(io.read_checkpoint(args.checkpoint))
        cube = net.reconstruct(meas, mask, spec)
        print(f"aspun: {run_cfg['net.stages']} stages")
    io.write_cube_file(args.out, cube.data)
    if args.pgm:
        io.write_pgm(args.pgm, cube.data[:, :, args.pgm_band])
    print(f"wrote cube {cube.height}x{cube.width}x{cube.channels} to {args.out}")
    return 0


def _training_setup(run_cfg: RunConfig):
    scenes = [generate_scene(s) for s in
              run_cfg.scene_specs(run_cfg["scene.train_count"], seed_offset=100)]
    eval_scenes = [generate_scene(s) for s in
                   run_cfg.scene_specs(run_cfg["scene.eval_count"], seed_offset=10_000)]
    mask = _make_mask(run_cfg)
    return scenes, eval_scenes, mask, run_cfg.dispersion()


def cmd_train(args) -> int:
    run_cfg = parse_config(args.config)
    scenes, eval_scenes, mask, spec = _training_setup(run_cfg)
    net = UnfoldingNetwork(run_cfg.network_config(), run_cfg["sim.channels"],
                           rng=run_cfg["net.seed"])
    result = train(net, run_cfg.train_config(), scenes, mask, spec,
                   eval_scenes=eval_scenes, noise_sigma=run_cfg["sim.noise"],
                   out_dir=args.out_dir)
    final_loss = result.loss_trace[-1][1]
    print(f"steps {len(result.loss_trace)}")
    print(f"loss.final {final_loss:.6e}")
    if result.eval_rows:
        _, final_psnr, final_ssim = result.eval_rows[-1]
        print(f"psnr.final {_format_metric(final_psnr)}")
        print(f"ssim.final {_format_metric(final_ssim)}")
    print(f"artifacts {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    from .training import psnr, ssim

    pred = io.read_cube_file(args.pred)
    gt = io.read_cube_file(args.gt)
    print(f"PSNR {_format_metric(psnr(pred, gt))}")
    print(f"SSIM {_format_metric(ssim(pred, gt))}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.op == "all":
        names = list(REGISTRY)
    elif args.op in REGISTRY:
        names = [args.op]
    else:
        print(f"error: unknown op {args.op!r}; known: {', '.join(sorted(REGISTRY))}",
              file=sys.stderr)
        return 2
    all_ok = True
    for name in names:
        error = grad_check(name, seed=args.seed)
        tolerance = REGISTRY[name].tolerance
        ok = error < tolerance
        all_ok &= ok
        print(f"{name:20s} {error:12.3e} tol {tolerance:.0e} {'PASS' if ok else 'FAIL'}")
    return 0 if all_ok else 4


def cmd_ablate(args) -> int:
    run_cfg = parse_config(args.config)
    name, _, value = args.switch.partition("=")
    name, value = name.strip(), value.strip()
    full_cfg = run_cfg.network_config()
    if name in ABLATION_SWITCHES and value == "off":
        ablated_cfg = replace(full_cfg, **{name: False})
    elif name == "attention" and value in ("pna", "wmsa"):
        ablated_cfg = replace(full_cfg, attention_kind=value)
    else:
        print(f"error: unsupported switch {args.switch!r}; use one of "
              f"{', '.join(s + '=off' for s in ABLATION_SWITCHES)} or attention=wmsa",
              file=sys.stderr)
        return 2
    channels = run_cfg["sim.channels"]
    scenes, eval_scenes, mask, spec = _training_setup(run_cfg)
    train_cfg = run_cfg.train_config()
    results = {}
    for label, cfg in (("full", full_cfg), ("ablated", ablated_cfg)):
        net = UnfoldingNetwork(cfg, channels, rng=run_cfg["net.seed"])
        print(f"params.{label} {net.parameter_count()}")
        train(net, train_cfg, scenes, mask, spec)
        mean_psnr, _ = evaluate(net, eval_scenes, mask, spec)
        results[label] = mean_psnr
    print(f"psnr.full {_format_metric(results['full'])}")
    print(f"psnr.ablated {_format_metric(results['ablated'])}")
    print(f"psnr.delta {results['ablated'] - results['full']:+.4f}")
    return 0


# --------------------------------------------------------------------------
# Parser and dispatch
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aspun",
        description="Snapshot spectral imaging: simulate measurements and "
                    "reconstruct cubes with FISTA or the unfolding network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="acquire a snapshot from a cube and mask")
    p.add_argument("--cube", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="recover a cube from a measurement")
    p.add_argument("--algo", choices=("fista", "aspun"), required=True)
    p.add_argument("--meas", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--pgm", help="also export one band as 8-bit PGM")
    p.add_argument("--pgm-band", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train the unfolding network on synthetic scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM between two cubes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of autodiff ops")
    p.add_argument("--op", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train/evaluate with one switch disabled")
    p.add_argument("--config", required=True)
    p.add_argument("--switch", required=True, metavar="NAME=off")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, TrainingDivergedError, StageError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


def run():
    raise SystemExit(main())
