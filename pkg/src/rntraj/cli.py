"""Command-line entry point: one binary, subcommand per pipeline stage.

Configuration precedence is flags > config file > defaults, and every
subcommand echoes its resolved options into the output directory as
`config.resolved` so runs stay reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import baselines, diffusion, metrics, roadnet, trajsim, utgraph
from .errors import ConfigError, RntrajError

_WORKERS_ENV = "RNTRAJ_WORKERS"


def _set_workers(workers: int | None) -> None:
    if workers is None:
        env = os.environ.get(_WORKERS_ENV)
        workers = int(env) if env else None
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"worker count must be >= 1, got {workers}")
        import torch

        torch.set_num_threads(workers)


def _write_resolved(outdir: str, options: dict) -> None:
    os.makedirs(outdir or ".", exist_ok=True)
    path = os.path.join(outdir or ".", "config.resolved")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(options):
            f.write(f"{key} = {options[key]}\n")


def _out_dir(path: str) -> str:
    return path if os.path.splitext(path)[1] == "" else (os.path.dirname(path) or ".")


def read_config_file(path: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def resolve_train_config(config_path: str | None, overrides: dict) -> diffusion.TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(diffusion.TrainConfig)}
    values: dict[str, object] = {}
    if config_path:
        for key, text in read_config_file(config_path).items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse_field(fields[key].type, text, key)
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return diffusion.TrainConfig(**values)


def _parse_field(type_name: str, text: str, key: str):
    try:
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
        if type_name == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for config key {key!r}") from None


def _cmd_netgen(args) -> int:
    net = roadnet.generate_grid_network(args.rows, args.cols, args.spacing)
    roadnet.save_network(net, args.out)
    _write_resolved(args.out, {"rows": args.rows, "cols": args.cols, "spacing": args.spacing})
    print(f"wrote {net.n_intersections} intersections, {net.n_segments} segments to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    net = roadnet.load_network(args.net)
    corpus = trajsim.simulate_corpus(
        net,
        args.n,
        (args.tmin, args.tmax),
        (args.speed_mean, args.speed_jitter),
        seed=args.seed,
        interval_s=args.interval,
        demand_skew=args.demand_skew,
    )
    trajsim.save_corpus(corpus, args.out)
    _write_resolved(
        _out_dir(args.out),
        {
            "net": args.net, "n": args.n, "tmin": args.tmin, "tmax": args.tmax,
            "seed": args.seed, "speed_mean": args.speed_mean,
            "speed_jitter": args.speed_jitter, "interval": args.interval,
            "demand_skew": args.demand_skew,
        },
    )
    print(f"wrote {len(corpus)} trajectories to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    corpus = trajsim.load_corpus(args.corpus)
    g = utgraph.build_utgraph(corpus)
    table = utgraph.pretrain_embeddings(
        g,
        dim=args.dim,
        walks_per_node=args.walks,
        walk_length=args.walk_len,
        window=args.window,
        iterations=args.iters,
        seed=args.seed,
        p=args.p,
        q=args.q,
    )
    utgraph.save_embeddings(table, args.out)
    _write_resolved(
        _out_dir(args.out),
        {
            "corpus": args.corpus, "dim": args.dim, "walks": args.walks,
            "walk_len": args.walk_len, "window": args.window, "iters": args.iters,
            "seed": args.seed, "p": args.p, "q": args.q,
        },
    )
    print(f"wrote {table.n_segments}x{table.dim} embedding table to {args.out}")
    return 0


def _cmd_train(args) -> int:
    import torch

    overrides = {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr, "lr_halve_every": args.lr_halve_every,
        "steps": args.steps, "beta1": args.beta1, "beta_n": args.beta_n,
        "seed": args.seed, "topk": args.topk, "temperature": args.temperature,
        "grad_clip": args.grad_clip,
        "channels": args.channels, "pe_dim": args.pe_dim, "layers": args.layers,
        "layers_per_block": args.layers_per_block, "kernel": args.kernel,
        "use_l3": (False if args.no_l3 else None),
    }
    cfg = resolve_train_config(args.config, overrides)
    corpus = trajsim.load_corpus(args.corpus)
    net = roadnet.load_network(args.net)
    table = utgraph.load_embeddings(args.emb)
    g = utgraph.build_utgraph(corpus)
    sched = cfg.schedule()
    dtype = torch.float64 if args.dtype == "float64" else torch.float32
    model, stats = diffusion.train(corpus, net, table, g, sched, cfg, ckpt_dir=args.out, dtype=dtype)
    diffusion.write_training_log(stats, os.path.join(args.out, "log.csv"))
    _write_resolved(args.out, dataclasses.asdict(cfg) | {"dtype": args.dtype})
    last = stats[-1]
    print(
        f"trained {cfg.epochs} epochs; final l1={last.l1:.4f} l2={last.l2:.4f} "
        f"l3_soft={last.l3_soft:.4f} l3_hard={last.l3_hard:.4f}; checkpoints in {args.out}"
    )
    return 0


def _cmd_sample(args) -> int:
    import torch

    dtype = torch.float64 if args.dtype == "float64" else torch.float32
    model, fields = __import__("rntraj.denoiser", fromlist=["load_checkpoint"]).load_checkpoint(
        args.ckpt, dtype=dtype
    )
    table = utgraph.load_embeddings(args.emb)
    if table.dim + 1 != model.config.in_channels:
        raise ConfigError(
            f"embedding dim {table.dim} does not match checkpoint channels "
            f"{model.config.in_channels}"
        )
    net = roadnet.load_network(args.net)
    ref = trajsim.load_corpus(args.counts_from)
    lengths = trajsim.trajectory_lengths(ref)
    sched = diffusion.quadratic_schedule(
        int(fields["steps"]), float(fields["beta1"]), float(fields["beta_n"])
    )
    corpus = diffusion.sample_corpus(model, table, sched, lengths, args.seed, net, noise=args.noise)
    trajsim.save_corpus(corpus, args.out)
    _write_resolved(
        _out_dir(args.out),
        {
            "ckpt": args.ckpt, "emb": args.emb, "net": args.net,
            "counts_from": args.counts_from, "seed": args.seed, "noise": args.noise,
            "dtype": args.dtype,
        },
    )
    print(f"wrote {len(corpus)} generated trajectories to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    gen = trajsim.load_corpus(args.gen)
    ref = trajsim.load_corpus(args.ref)
    net = roadnet.load_network(args.net)
    report = metrics.evaluate_corpora(
        gen, ref, net, grid_m=args.grid_m, bins=args.bins, straight_line=args.straight_line
    )
    metrics.save_report(report, args.out)
    if args.gpd_heatmap:
        metrics.write_gpd_heatmap(gen, net, args.grid_m, args.gpd_heatmap)
    _write_resolved(
        _out_dir(args.out),
        {
            "gen": args.gen, "ref": args.ref, "net": args.net, "grid_m": args.grid_m,
            "bins": args.bins, "straight_line": args.straight_line,
        },
    )
    for name, value in report.rows():
        print(f"{name}={value:.6f}")
    return 0


def _cmd_baseline(args) -> int:
    ref = trajsim.load_corpus(args.ref)
    lengths = trajsim.trajectory_lengths(ref)
    if args.kind == "rwrn":
        g = utgraph.build_utgraph(ref)
        net = roadnet.load_network(args.net) if args.net else None
        corpus = baselines.rwrn_generate(
            g, lengths, seed=args.seed, net=net, network_name=ref.network_name
        )
    else:
        corpus = baselines.markov_generate(ref, lengths, seed=args.seed)
    trajsim.save_corpus(corpus, args.out)
    _write_resolved(
        _out_dir(args.out),
        {"kind": args.kind, "ref": args.ref, "seed": args.seed, "net": args.net},
    )
    print(f"wrote {len(corpus)} {args.kind} trajectories to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rntraj",
        description="Road-network-constrained trajectory synthesis and evaluation",
    )
    parser.add_argument("--workers", type=int, default=None, help="compute thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("netgen", help="generate a synthetic grid road network")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--spacing", type=float, required=True, help="lattice spacing in meters")
    p.add_argument("-o", "--out", required=True, help="output network directory")
    p.set_defaults(func=_cmd_netgen)

    p = sub.add_parser("simulate", help="simulate a ground-truth corpus")
    p.add_argument("--net", required=True, help="network directory")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tmin", type=int, required=True)
    p.add_argument("--tmax", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speed-mean", type=float, default=3.0)
    p.add_argument("--speed-jitter", type=float, default=1.0)
    p.add_argument("--interval", type=float, default=5.0, help="sampling interval in seconds")
    p.add_argument("--demand-skew", type=float, default=1.0, help="Zipf exponent for trip-endpoint demand")
    p.add_argument("-o", "--out", required=True, help="output corpus file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("pretrain", help="pretrain segment embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--walks", type=int, default=100)
    p.add_argument("--walk-len", type=int, default=80)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=float, default=1.0, help="return bias")
    p.add_argument("--q", type=float, default=1.0, help="in-out bias")
    p.add_argument("-o", "--out", required=True, help="output embedding file")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="train the denoising model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-halve-every", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="diffusion steps N")
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta-n", type=float, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--pe-dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--layers-per-block", type=int, default=None)
    p.add_argument("--kernel", type=int, default=None)
    p.add_argument("--no-l3", action="store_true", help="drop the connectivity loss term")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("-o", "--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="sample trajectories from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--counts-from", required=True, help="corpus whose per-length counts to match")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=["ancestral", "printed-drift"], default="ancestral")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("-o", "--out", required=True, help="output corpus file")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("evaluate", help="compare a generated corpus against a reference")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--grid-m", type=float, default=50.0)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--straight-line", action="store_true")
    p.add_argument("--gpd-heatmap", default=None, help="optional CSV heatmap path")
    p.add_argument("-o", "--out", required=True, help="output report CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("baseline", help="generate a rule-based comparison corpus")
    p.add_argument("--kind", choices=["rwrn", "markov"], required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--net", default=None, help="optional network directory for validation")
    p.add_argument("-o", "--out", required=True, help="output corpus file")
    p.set_defaults(func=_cmd_baseline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _set_workers(args.workers)
        return args.func(args)
    except RntrajError as exc:
        print(f"error class={type(exc).__name__} msg={exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
