"""Command-line entry point: ``gen``, ``train``, ``track``, ``bench`` and ``verify``.

Exit codes: 0 success, 1 usage error, 2 bad or missing data, 3 failed verification.
Every command that writes files also writes ``config.txt`` (the fully
resolved settings, seed included) into its output directory.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench, checkpoint, data, verify
from . import config as config_mod
from .config import CascadeConfig
from .geometry import format_annotation
from .tracker import QPolicy, StopFirstPolicy, ThresholdPolicy, init, run_training, track_frame

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_pairs(path, overrides):
    pairs = {}
    if path:
        with open(path) as f:
            pairs.update(config_mod.parse_pairs(f.read()))
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def _take_extras(args, pairs, keys):
    """Move command-level keys (e.g. ``length``) from the pairs onto ``args`` unless given as flags."""
    for key, kind in keys.items():
        if key in pairs:
            value = pairs.pop(key)
            if getattr(args, key, None) is None:
                try:
                    setattr(args, key, kind(value))
                except ValueError:
                    raise UsageError(f"bad value for {key}: {value!r}") from None


def _resolve_config(args, base=None, extras=None) -> CascadeConfig:
    pairs = _read_pairs(args.config, args.set)
    _take_extras(args, pairs, extras or {})
    try:
        cfg, _ = config_mod.apply_pairs(base or CascadeConfig, pairs)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = cfg.replace(epochs=args.epochs)
    return cfg


def _log_config(out_dir, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_gen(args):
    if args.standard:
        train, test = data.standard_corpus()
        data.save_corpus(train, os.path.join(args.out, "train"))
        data.save_corpus(test, os.path.join(args.out, "test"))
        _log_config(args.out, f"standard = true\nlength = {data.CORPUS_LENGTH}\n"
                              f"train_seeds = {data.TRAIN_SEEDS[0]}..{data.TRAIN_SEEDS[-1]}\n"
                              f"test_seeds = {data.TEST_SEEDS[0]}..{data.TEST_SEEDS[-1]}\n")
        print(f"wrote {len(train)} training and {len(test)} test sequences to {args.out}")
        return EXIT_OK
    pairs = _read_pairs(args.config, args.set)
    _take_extras(args, pairs, {"length": int, "seed": int, "recipe": str})
    args.seed = 0 if args.seed is None else args.seed
    args.length = data.CORPUS_LENGTH if args.length is None else args.length
    args.recipe = args.recipe or "plain"
    if args.recipe not in ("plain", "corpus"):
        raise UsageError(f"unknown recipe {args.recipe!r}")
    base = data.corpus_spec(args.seed) if args.recipe == "corpus" else data.SceneSpec(texture_seed=args.seed)
    try:
        spec, _ = config_mod.apply_pairs(base, pairs)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    seq = data.generate(spec, args.length, np.random.default_rng(args.seed), name=args.name or f"seq{args.seed}")
    data.save_sequence(seq, args.out)
    _log_config(args.out, config_mod.to_text(spec)
                + f"length = {args.length}\nseed = {args.seed}\nrecipe = {args.recipe}\n")
    print(f"wrote {len(seq)} frames to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _resolve_config(args)
    corpus = data.load_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    _log_config(args.out, config_mod.to_text(cfg))
    log = open(os.path.join(args.out, "training.csv"), "w")
    log.write("epoch,epsilon,mean_reward,mean_loss,mean_steps\n")

    def progress(epoch, eps, res):
        log.write(f"{epoch},{eps!r},{res.epoch_rewards[-1]!r},{res.epoch_losses[-1]!r},{res.epoch_steps[-1]!r}\n")
        log.flush()
        if not args.quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs}  eps={eps:.2f}  reward={res.epoch_rewards[-1]:.3f}  "
                  f"loss={res.epoch_losses[-1]:.4f}  steps={res.epoch_steps[-1]:.2f}", flush=True)

    try:
        res = run_training(corpus, cfg, progress=progress)
    finally:
        log.close()
    path = os.path.join(args.out, "model.ckpt")
    checkpoint.save(path, checkpoint.Checkpoint(cfg, res.qnet, res.conv_weights))
    print(f"wrote {path}")
    return EXIT_OK


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path} not found")
    return checkpoint.load(path)


def _policy(method, ckpt, session):
    if method == "east":
        return QPolicy(ckpt.qnet)
    if method == "east_last":
        return QPolicy(ckpt.qnet, stop_early=False)
    if method == "east_th":
        return ThresholdPolicy(session)
    return StopFirstPolicy()


def cmd_track(args):
    ckpt = _load_checkpoint(args.checkpoint)
    cfg = _resolve_config(args, ckpt.config, {"method": str})
    args.method = args.method or "east"
    if args.method not in bench.METHODS:
        raise UsageError(f"unknown method {args.method!r}")
    seq = data.load_sequence(args.sequence)
    os.makedirs(args.out, exist_ok=True)
    _log_config(args.out, config_mod.to_text(cfg) + f"method = {args.method}\n")
    session = init(seq.frames[0], seq.boxes[0], cfg, conv_weights=ckpt.conv_weights)
    policy = _policy(args.method, ckpt, session)
    rng = np.random.default_rng(cfg.seed)
    boxes, results = [seq.boxes[0]], []
    for frame in seq.frames[1:]:
        res = track_frame(session, frame, policy, rng=rng)
        boxes.append(res.box)
        results.append(res)
    with open(os.path.join(args.out, "boxes.txt"), "w") as f:
        for i, b in enumerate(boxes):
            f.write(format_annotation(i, b) + "\n")
    with open(os.path.join(args.out, "frames.csv"), "w") as f:
        f.write("frame,stop_layer,steps,actions\n")
        for i, r in enumerate(results, 1):
            f.write(f"{i},{r.stop_layer},{r.steps},{' '.join(a.name for a in r.actions)}\n")
    # wall-clock varies run to run, so it lives apart from the reproducible outputs
    with open(os.path.join(args.out, "timing.csv"), "w") as f:
        f.write("frame," + ",".join(f"layer{l + 1}_ms" for l in range(cfg.n_layers)) + ",total_ms\n")
        for i, r in enumerate(results, 1):
            ms = [d * 1e3 for d in r.durations] + [""] * (cfg.n_layers - len(r.durations))
            f.write(f"{i}," + ",".join(repr(m) if m != "" else "" for m in ms) + f",{r.total_time * 1e3!r}\n")
    if args.save_session:
        checkpoint.save(os.path.join(args.out, "session.ckpt"),
                        checkpoint.Checkpoint(cfg, ckpt.qnet, ckpt.conv_weights, session))
    if args.overlays:
        bench.emit_overlays(seq, boxes, os.path.join(args.out, "overlays"))
    auc = bench.success_auc(boxes[1:], seq.boxes[1:])
    probs, mean_steps = bench.stopping_stats(results, cfg.n_layers)
    print(f"{seq.name}: auc={auc:.4f} mean_steps={mean_steps:.3f} "
          f"stops={' '.join(f'{p:.3f}' for p in probs)}")
    return EXIT_OK


def cmd_bench(args):
    ckpt = _load_checkpoint(args.checkpoint)
    cfg = _resolve_config(args, ckpt.config, {"methods": str, "workers": int})
    args.methods = args.methods or ",".join(bench.METHODS)
    args.workers = 1 if args.workers is None else args.workers
    corpus = data.load_corpus(args.corpus)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in bench.METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(bench.METHODS)}")
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    if not formats or any(f not in ("csv", "json") for f in formats):
        raise UsageError(f"--format expects a comma list of csv, json; got {args.format!r}")
    os.makedirs(args.out, exist_ok=True)
    _log_config(args.out, config_mod.to_text(cfg) + f"methods = {','.join(methods)}\nworkers = {args.workers}\n")
    report = bench.compare_baselines(corpus, ckpt.qnet, cfg, ckpt.conv_weights, methods, workers=args.workers)
    for fmt in formats:
        bench.emit(report, fmt, os.path.join(args.out, f"report.{fmt}"))
    for m, a in report.aggregate.items():
        print(f"{m:<10} auc={a['auc']:.4f}  mean_steps={a['mean_steps']:.3f}  "
              f"median_ms={a['median_ms_per_frame']:.3f}")
    return EXIT_OK


def cmd_verify(args):
    names = args.suite.split(",") if args.suite else None
    try:
        results = verify.run_suites(names, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cascadetrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def cfg_flags(sp, what):
        sp.add_argument("--config", help=f"key = value file with {what} settings")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")

    g = sub.add_parser("gen", help="generate synthetic sequences")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="texture and noise seed (default 0)")
    g.add_argument("--length", type=int, help=f"number of frames (default {data.CORPUS_LENGTH})")
    g.add_argument("--name", help="sequence name (default seqSEED)")
    g.add_argument("--recipe", choices=("plain", "corpus"),
                   help="base scene: plain defaults (default) or the corpus recipe for this seed")
    g.add_argument("--standard", action="store_true", help="write the standard train/test corpus instead")
    cfg_flags(g, "scene")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the stopping agent")
    t.add_argument("--corpus", required=True, help="directory of sequence directories")
    t.add_argument("--out", required=True, help="output directory (model.ckpt, training.csv, config.txt)")
    t.add_argument("--epochs", type=int, help="number of passes over the corpus")
    t.add_argument("--seed", type=int, help="training seed")
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    cfg_flags(t, "tracker/training")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="track one sequence with a checkpoint")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--sequence", required=True, help="sequence directory")
    k.add_argument("--out", required=True, help="output directory")
    k.add_argument("--method", choices=bench.METHODS, help="policy (default east)")
    k.add_argument("--seed", type=int)
    k.add_argument("--overlays", action="store_true", help="also write PPM overlays")
    k.add_argument("--save-session", action="store_true", help="write the final session checkpoint")
    cfg_flags(k, "tracker")
    k.set_defaults(func=cmd_track)

    b = sub.add_parser("bench", help="compare the learned policy with the baselines")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--corpus", required=True, help="directory of sequence directories")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--methods", help=f"comma list (default {','.join(bench.METHODS)})")
    b.add_argument("--format", default="csv,json", help="comma list of csv, json")
    b.add_argument("--workers", type=int, help="worker processes, sequences split among them (default 1)")
    b.add_argument("--seed", type=int)
    cfg_flags(b, "tracker")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--suite", help=f"comma list of {', '.join(verify.SUITES)} (default all)")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError, ValueError, OSError) as exc:
        print(f"cascadetrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
