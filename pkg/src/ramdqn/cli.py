"""Command-line frontend: train, eval, visualize, gradcheck."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .agents import ARCHITECTURES, HyperParams, architecture_streams, build_architecture
from .envs import ENV_REGISTRY, make_env
from .harness import (
    CheckpointError,
    ExperimentConfig,
    best_epoch,
    checkpoint_load,
    load_params_into,
    run_experiment,
    run_test_period,
)
from .tensor_core import gradient_check

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def write_weight_heatmap(weights, path):
    """Binary portable pixmap of a weight matrix (units x in_cells).

    One column per node, one row per input cell; positive weights map to the
    red channel, negative to blue, intensity proportional to |w| / max|w|.
    """
    w = np.asarray(weights, dtype=np.float64).T  # rows = cells, cols = nodes
    rows, cols = w.shape
    maxabs = np.max(np.abs(w))
    rgb = np.zeros((rows, cols, 3), dtype=np.uint8)
    if maxabs > 0:
        scaled = w / maxabs
        rgb[..., 0] = np.where(scaled > 0, np.rint(255.0 * scaled), 0).astype(np.uint8)
        rgb[..., 2] = np.where(scaled < 0, np.rint(255.0 * -scaled), 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{cols} {rows}\n255\n".encode())
        f.write(rgb.tobytes())


def _ram_first_dense_weights(net):
    """Weight matrix of the first dense layer fed directly by the RAM input."""
    for i, spec in enumerate(net.layers):
        if spec.kind != "dense":
            continue
        ref = net.layers[spec.input_refs[0]]
        if ref.kind == "input" and ref.stream == "ram":
            return net.params[i]["W"]
    return None


def _build_from_checkpoint(ckpt):
    h = ckpt["header"]
    env = make_env(h["env"])
    hyper = HyperParams(**h["hyper"])
    _, needs_screen = architecture_streams(h["arch"])
    net = build_architecture(
        h["arch"], output_dim=h["output_dim"],
        screen_shape=env.screen_shape if needs_screen else None,
        phi_length=hyper.phi_length, dropout_p=hyper.dropout_p,
        rng=np.random.default_rng(0),
        dtype=np.dtype(h["dtype"]),
    )
    load_params_into(net, ckpt)
    return net, h, hyper


def cmd_train(args):
    if args.env not in ENV_REGISTRY:
        print(f"error: unknown environment {args.env!r}", file=sys.stderr)
        return EXIT_USAGE
    if args.arch not in ARCHITECTURES:
        print(f"error: unknown architecture {args.arch!r}", file=sys.stderr)
        return EXIT_USAGE
    hyper = HyperParams(
        frame_skip=args.frame_skip,
        dropout_p=args.dropout,
        learning_rate=args.learning_rate,
        steps_per_epoch=args.steps_per_epoch,
        replay_capacity=args.replay_capacity,
        test_steps=args.test_steps,
    )
    config = ExperimentConfig(env_name=args.env, arch=args.arch, hyper=hyper,
                              epochs=args.epochs, seed=args.seed, out_dir=args.out)

    def progress(report):
        print(f"epoch {report.epoch}: avg_score={report.avg_score:.3f} "
              f"episodes={report.episodes} mean_loss={report.mean_loss:.6f}",
              file=sys.stderr)

    try:
        reports, best = run_experiment(config, progress=progress)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"best epoch {best} avg_score={reports[best - 1].avg_score:.3f} "
          f"env={args.env} arch={args.arch} frame_skip={hyper.frame_skip} "
          f"dropout={hyper.dropout_p} learning_rate={hyper.learning_rate} "
          f"seed={args.seed}")
    return EXIT_OK


def cmd_eval(args):
    try:
        ckpt = checkpoint_load(args.checkpoint)
        net, header, hyper = _build_from_checkpoint(ckpt)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    env_name = args.env or header["env"]
    if env_name not in ENV_REGISTRY:
        print(f"error: unknown environment {env_name!r}", file=sys.stderr)
        return EXIT_USAGE
    report = run_test_period(net, env_name, hyper, seed=args.seed,
                             steps=args.steps, epsilon=args.epsilon)
    flag = " (truncated)" if report.truncated else ""
    print(f"avg_score={report.avg_score:.6f} episodes={report.episodes} "
          f"steps={report.steps} epsilon={args.epsilon}{flag}")
    return EXIT_OK


def cmd_visualize(args):
    try:
        ckpt = checkpoint_load(args.checkpoint)
        net, _, _ = _build_from_checkpoint(ckpt)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    weights = _ram_first_dense_weights(net)
    if weights is None:
        print("error: architecture has no dense layer reading the RAM input "
              "directly; nothing to visualize", file=sys.stderr)
        return EXIT_FAILURE
    try:
        write_weight_heatmap(weights, args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {args.out}")
    return EXIT_OK


GRADCHECK_SCREEN = (32, 32)


def gradcheck_architecture(name, seed=0, probes=100):
    """Max relative backward-vs-finite-difference error for one architecture
    at reduced scale, in 64-bit arithmetic."""
    rng = np.random.default_rng(seed)
    needs_ram, needs_screen = architecture_streams(name)
    net = build_architecture(
        name, output_dim=6,
        screen_shape=GRADCHECK_SCREEN if needs_screen else None,
        rng=rng, dtype=np.float64,
    )
    inputs = {}
    if needs_ram:
        inputs["ram"] = rng.random((2, 128))
    if needs_screen:
        inputs["screen"] = rng.random((2, 4) + GRADCHECK_SCREEN)
    return gradient_check(net, inputs, step=1e-5, probes=probes, rng=rng)


def cmd_gradcheck(args):
    names = list(ARCHITECTURES) if args.arch == "all" else [args.arch]
    for name in names:
        if name not in ARCHITECTURES:
            print(f"error: unknown architecture {name!r}", file=sys.stderr)
            return EXIT_USAGE
    worst = 0.0
    for name in names:
        err = gradcheck_architecture(name, seed=args.seed)
        print(f"{name}: max relative error {err:.3e}")
        worst = max(worst, err)
    if worst >= args.tolerance:
        print(f"FAIL: worst error {worst:.3e} exceeds tolerance {args.tolerance:g}",
              file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ramdqn",
                                     description="RAM-based deep Q-learning at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent and write curve + checkpoints")
    p.add_argument("--env", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/out")
    p.add_argument("--frame-skip", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--learning-rate", type=float, default=0.0002)
    p.add_argument("--steps-per-epoch", type=int, default=12_500)
    p.add_argument("--replay-capacity", type=int, default=100_000)
    p.add_argument("--test-steps", type=int, default=10_000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over one test period")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", help="export a first-layer weight heatmap (P6)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward")
    p.add_argument("--arch", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
