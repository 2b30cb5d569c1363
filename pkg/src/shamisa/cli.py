"""Command-line interface.

Subcommands: distort, pretrain, probe, cross, gmad, fr-probe,
export-features, gradcheck. Every run resolves one configuration
(preset -> file -> --set overrides -> SHAMISA_SEED) and writes the
resolved snapshot next to its outputs so any result can be replayed.

Exit codes: 0 success, 1 runtime failure, 2 bad usage or bad config.
"""

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from .config import ConfigError

_IMAGE_EXTS = (".ppm", ".png")


def _config_args(p):
    p.add_argument("--config", help="configuration file (section.key = value lines)")
    p.add_argument(
        "--preset",
        default="desk",
        choices=sorted(config_mod.PRESETS),
        help="base preset (default: desk)",
    )
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _resolve(args):
    return config_mod.load_config(
        path=args.config, preset=args.preset, overrides=args.overrides
    )


def _snapshot(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    config_mod.write_snapshot(cfg, os.path.join(out_dir, "config.snapshot"))


def _list_images(directory):
    names = sorted(
        n for n in os.listdir(directory) if n.lower().endswith(_IMAGE_EXTS)
    )
    if not names:
        raise ValueError(f"no .ppm/.png images found in {directory}")
    return names


def _load_corpus(directory):
    """Images from a manifest if present, else every image file, sorted."""
    from .dataio import parse_manifest, read_image

    manifest_path = os.path.join(directory, "manifest.csv")
    if os.path.exists(manifest_path):
        manifest = parse_manifest(manifest_path)
        names = list(manifest.paths)
    else:
        names = _list_images(directory)
    return [read_image(os.path.join(directory, n)) for n in names], names


def _load_manifest_images(images_dir, manifest_path):
    from .dataio import parse_manifest, read_image

    manifest = parse_manifest(manifest_path)
    images = [read_image(os.path.join(images_dir, p)) for p in manifest.paths]
    return manifest, images


def _frozen_encoder(checkpoint_path, cfg_map):
    from .model import FrozenEncoder, ModelConfig
    from .numgrad.checkpoint import load_checkpoint
    from .trainer import split_checkpoint

    params, _velocity, _step, _seed = split_checkpoint(load_checkpoint(checkpoint_path))
    model = ModelConfig(
        blocks=tuple(cfg_map["model.blocks"]),
        d_h=cfg_map["model.d_h"],
        d_z=cfg_map["model.d_z"],
        proj_hidden=cfg_map["model.proj_hidden"],
        input_size=cfg_map["engine.crop"],
    )
    return FrozenEncoder(params, model)


def _eval_splits(manifest, cfg_map):
    from .evaluation import make_splits

    return make_splits(
        manifest,
        mode=cfg_map["eval.split_mode"],
        n_splits=cfg_map["eval.n_splits"],
        seed=cfg_map["run.seed"],
    )


def _write_probe_outputs(out_dir, report, manifest, predictions):
    with open(os.path.join(out_dir, "results.csv"), "w") as f:
        f.write("split,srcc,plcc,alpha,plcc_converged\n")
        for r in report.splits:
            f.write(
                f"{r.split},{r.srcc!r},{r.plcc!r},{r.alpha!r},"
                f"{'true' if r.plcc_converged else 'false'}\n"
            )
    with open(os.path.join(out_dir, "summary.csv"), "w") as f:
        f.write("median_srcc,median_plcc,alpha\n")
        f.write(f"{report.median_srcc!r},{report.median_plcc!r},{report.alpha!r}\n")
    if predictions is not None:
        with open(os.path.join(out_dir, "predictions.csv"), "w") as f:
            f.write("path,prediction\n")
            for path, pred in zip(manifest.paths, predictions):
                f.write(f"{path},{pred!r}\n")


# ------------------------------------------------------------- subcommands


def _cmd_distort(args):
    from .dataio import build_eval_set, generate_fixture_images, read_image, write_eval_set

    cfg_map = _resolve(args)
    train_cfg = config_mod.to_train_config(cfg_map)
    if args.input:
        names = _list_images(args.input)
        images = [read_image(os.path.join(args.input, n)) for n in names]
        names = [os.path.splitext(n)[0] for n in names]
    elif args.fixtures:
        images = generate_fixture_images(
            args.fixtures, args.fixture_size, cfg_map["run.seed"]
        )
        names = [f"fixture_{i:04d}" for i in range(len(images))]
    else:
        raise ConfigError("distort needs --input DIR or --fixtures N")
    records = build_eval_set(
        images, names, train_cfg.engine, count=args.count, seed=cfg_map["run.seed"]
    )
    os.makedirs(args.out, exist_ok=True)
    write_eval_set(records, args.out)
    _snapshot(cfg_map, args.out)
    print(
        f"distort: wrote {len(records)} images, metadata.jsonl and manifest.csv "
        f"to {args.out}"
    )
    return 0


def _cmd_pretrain(args):
    from .dataio import generate_fixture_corpus, read_image
    from .trainer import pretrain

    cfg_map = _resolve(args)
    train_cfg = config_mod.to_train_config(cfg_map)
    if args.corpus:
        corpus, _names = _load_corpus(args.corpus)
    elif args.fixtures:
        corpus_dir = os.path.join(args.out, "corpus")
        manifest = generate_fixture_corpus(
            args.fixtures, args.fixture_size, cfg_map["run.seed"], corpus_dir
        )
        corpus = [read_image(os.path.join(corpus_dir, p)) for p in manifest.paths]
    else:
        raise ConfigError("pretrain needs --corpus DIR or --fixtures N")
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg_map, args.out)

    def progress(rec):
        if (rec.step + 1) % args.log_every == 0 or rec.step == 0:
            print(
                f"step {rec.step + 1}/{train_cfg.steps} "
                f"total={rec.parts['total']:.4f} lr={rec.lr:.2e} "
                f"({rec.wall_time:.2f}s)",
                flush=True,
            )

    result = pretrain(
        train_cfg,
        corpus,
        out_dir=args.out,
        dump_graphs=args.dump_graphs,
        progress=progress if args.log_every else None,
    )
    last = result.history[-1]
    print(
        f"pretrain: {train_cfg.steps} steps done, final total "
        f"{last.parts['total']:.4f}; outputs in {args.out}"
    )
    return 0


def _cmd_probe(args):
    from .evaluation import _ridge_solver, crop_average, extract_feature_set, probe_eval

    cfg_map = _resolve(args)
    encoder = _frozen_encoder(args.checkpoint, cfg_map)
    manifest, images = _load_manifest_images(args.images, args.manifest)
    features = extract_feature_set(encoder, images)
    splits = _eval_splits(manifest, cfg_map)
    scores = np.asarray(manifest.scores, dtype=np.float64)
    report = probe_eval(features, scores, splits)
    # One deterministic prediction per image: mean over the split probes.
    fbar = crop_average(features)
    preds = np.zeros(len(manifest.paths))
    for tr, _va, _te in splits:
        w, b = _ridge_solver(fbar[tr], scores[tr])(report.alpha)
        preds += fbar @ w + b
    preds /= len(splits)
    os.makedirs(args.out, exist_ok=True)
    _write_probe_outputs(args.out, report, manifest, preds)
    _snapshot(cfg_map, args.out)
    print(
        f"probe: median SRCC {report.median_srcc:.4f}, median PLCC "
        f"{report.median_plcc:.4f}, alpha {report.alpha:.4g}; results in {args.out}"
    )
    return 0


def _cmd_cross(args):
    from .evaluation import cross_eval, extract_feature_set

    cfg_map = _resolve(args)
    encoder = _frozen_encoder(args.checkpoint, cfg_map)
    man_s, imgs_s = _load_manifest_images(args.source_images, args.source_manifest)
    man_t, imgs_t = _load_manifest_images(args.target_images, args.target_manifest)
    feats_s = extract_feature_set(encoder, imgs_s)
    feats_t = extract_feature_set(encoder, imgs_t)
    report = cross_eval(
        feats_s,
        np.asarray(man_s.scores, dtype=np.float64),
        _eval_splits(man_s, cfg_map),
        feats_t,
        np.asarray(man_t.scores, dtype=np.float64),
        _eval_splits(man_t, cfg_map),
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "results.csv"), "w") as f:
        f.write("split,srcc\n")
        for si, rho in report.per_split:
            f.write(f"{si},{rho!r}\n")
    with open(os.path.join(args.out, "summary.csv"), "w") as f:
        f.write("median_srcc,alpha\n")
        f.write(f"{report.median_srcc!r},{report.alpha!r}\n")
    _snapshot(cfg_map, args.out)
    print(
        f"cross: median zero-shot SRCC {report.median_srcc:.4f} "
        f"(alpha {report.alpha:.4g}); results in {args.out}"
    )
    return 0


def _cmd_gmad(args):
    from .dataio import parse_manifest
    from .evaluation import gmad_select

    cfg_map = _resolve(args)
    defender = parse_manifest(args.defender)
    attacker = parse_manifest(args.attacker)
    if list(defender.paths) != list(attacker.paths):
        raise ValueError("defender and attacker manifests list different images")
    bins = None
    if args.bins:
        bins = tuple(int(b) for b in args.bins.split(","))
    pairs = gmad_select(
        np.asarray(defender.scores, dtype=np.float64),
        np.asarray(attacker.scores, dtype=np.float64),
        n_bins=args.n_bins,
        bins=bins,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "pairs.csv"), "w") as f:
        f.write("bin,index_a,index_b,path_a,path_b,attacker_gap\n")
        for p in pairs:
            f.write(
                f"{p.bin},{p.i},{p.j},{defender.paths[p.i]},"
                f"{defender.paths[p.j]},{p.gap!r}\n"
            )
    _snapshot(cfg_map, args.out)
    for p in pairs:
        print(
            f"gmad: bin {p.bin}: {defender.paths[p.i]} vs {defender.paths[p.j]} "
            f"(attacker gap {p.gap:.4f})"
        )
    return 0


def _cmd_fr_probe(args):
    from .evaluation import extract_features, fr_features, probe_eval

    cfg_map = _resolve(args)
    encoder = _frozen_encoder(args.checkpoint, cfg_map)
    manifest, images = _load_manifest_images(args.images, args.manifest)
    if manifest.ref_ids is None:
        raise ValueError("fr-probe needs a manifest with a ref_id column naming reference images")
    from .dataio import read_image

    ref_feature = {}
    for ref in dict.fromkeys(manifest.ref_ids):
        ref_feature[ref] = extract_features(
            encoder, read_image(os.path.join(args.images, ref))
        )
    blocks = []
    for img, ref in zip(images, manifest.ref_ids):
        blocks.append(fr_features(ref_feature[ref], extract_features(encoder, img)))
    features = np.stack(blocks)
    splits = _eval_splits(manifest, cfg_map)
    report = probe_eval(features, np.asarray(manifest.scores, dtype=np.float64), splits)
    os.makedirs(args.out, exist_ok=True)
    _write_probe_outputs(args.out, report, manifest, None)
    _snapshot(cfg_map, args.out)
    print(
        f"fr-probe: median SRCC {report.median_srcc:.4f}, median PLCC "
        f"{report.median_plcc:.4f}; results in {args.out}"
    )
    return 0


def _cmd_export_features(args):
    from .dataio import export_features
    from .evaluation import crop_average, extract_feature_set

    cfg_map = _resolve(args)
    encoder = _frozen_encoder(args.checkpoint, cfg_map)
    manifest, images = _load_manifest_images(args.images, args.manifest)
    fbar = crop_average(extract_feature_set(encoder, images))
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, args.name)
    export_features(fbar.astype(np.float32), list(manifest.paths), out_path)
    _snapshot(cfg_map, args.out)
    print(f"export-features: {fbar.shape[0]} rows x {fbar.shape[1]} cols -> {out_path}")
    return 0


def _cmd_gradcheck(args):
    from .gradsuite import format_report, run_suite

    results = run_suite(seed=args.seed, tol=args.tol)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shamisa",
        description="Self-supervised image-quality training and probing toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distort", help="generate a distorted evaluation set")
    _config_args(p)
    p.add_argument("--input", help="directory of pristine input images")
    p.add_argument("--fixtures", type=int, help="generate N fixture references instead")
    p.add_argument("--fixture-size", type=int, default=192)
    p.add_argument("--count", type=int, default=200, help="records to emit (default 200)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_distort)

    p = sub.add_parser("pretrain", help="run the self-supervised training loop")
    _config_args(p)
    p.add_argument("--corpus", help="directory with pristine images (manifest.csv or image files)")
    p.add_argument("--fixtures", type=int, help="generate an N-image fixture corpus instead")
    p.add_argument("--fixture-size", type=int, default=64)
    p.add_argument("--dump-graphs", action="store_true", help="write per-step edge lists")
    p.add_argument("--log-every", type=int, default=25, metavar="N",
                   help="progress line every N steps (0 silences)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="ridge probe on frozen features")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--manifest", required=True, help="path,score[,ref_id] CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("cross", help="zero-shot cross-dataset evaluation")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source-images", required=True)
    p.add_argument("--source-manifest", required=True)
    p.add_argument("--target-images", required=True)
    p.add_argument("--target-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cross)

    p = sub.add_parser("gmad", help="select maximum-disagreement image pairs")
    _config_args(p)
    p.add_argument("--defender", required=True, help="path,score CSV ordering the bins")
    p.add_argument("--attacker", required=True, help="path,score CSV searched for gaps")
    p.add_argument("--n-bins", type=int, default=10)
    p.add_argument("--bins", help="comma-separated bin indices (default: lowest,highest)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gmad)

    p = sub.add_parser("fr-probe", help="full-reference probe on |ref - dist| features")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--manifest", required=True,
                   help="path,score,ref_id CSV; ref_id names the reference image file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fr_probe)

    p = sub.add_parser("export-features", help="write crop-averaged features to a binary file")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--name", default="features.shaf")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_features)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    p.add_argument("--seed", type=int, default=2026)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
