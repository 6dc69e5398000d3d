"""Batch command-line front end.

Every subcommand is seeded and reproducible: identical flags give identical
output bytes. Configuration can come from a flat key=value file (--config);
explicit flags win over file values, which win over defaults. Each run
writes its resolved configuration next to its outputs.

Exit codes: 0 success, 1 contract/config violations, 2 I/O and decode
failures. Diagnostics go to stderr; data only ever goes to files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench
from .autograd import Tensor
from .classifier import ClassifierFeatureExtractor, TinyClassifier
from .dataset import (ingest_dataset, load_images, load_manifest,
                      mask_path_for, save_manifest, write_corpus)
from .errors import ConfigError, ContractError, ForamBenchError, ImageFormatError
from .fewshot_seg import (extract_hypercolumns, image_to_mask, load_head,
                          mask_to_image, save_head, segment,
                          train_fewshot_head)
from .image import ImageBuffer, read_image, tile_grid, write_image
from .metrics import PooledPixelExtractor
from .resample import KernelSpec, degrade_chain, resize
from .style_gan import (Discriminator, GanTrainer, Generator, StyleGanConfig,
                        load_gan, save_gan)
from .swin_sr import SwinSR, SwinSRConfig, SRTrainer
from .synth import SynthForamSpec, rule_based_mask


# ------------------------------------------------------------ config files

def _parse_config_file(path: Path) -> dict[str, str]:
    values = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


_BOOL_STRINGS = {"1": True, "true": True, "yes": True,
                 "0": False, "false": False, "no": False}


def _apply_config_defaults(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    for key, text in values.items():
        action = actions.get(key.replace("-", "_"))
        if action is None or action.dest in ("help", "config"):
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if text.lower() not in _BOOL_STRINGS:
                raise ConfigError(f"config key {key!r} expects a boolean, got {text!r}")
            sub.set_defaults(**{action.dest: _BOOL_STRINGS[text.lower()]})
        elif action.type is not None:
            try:
                sub.set_defaults(**{action.dest: action.type(text)})
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            sub.set_defaults(**{action.dest: text})


def _write_resolved_config(target: Path, args: argparse.Namespace) -> None:
    """Provenance dump beside the output (dir/config.txt or file.config)."""
    skip = {"func", "command", "config"}
    lines = [f"{k}={v}" for k, v in sorted(vars(args).items())
             if k not in skip and v is not None]
    out = target / "config.txt" if target.is_dir() else \
        target.with_name(target.name + ".config")
    out.write_bytes(("\n".join(lines) + "\n").encode())


def _parse_label(text: str, what: str = "label"):
    if text.lower() in ("none", "all", "unconditional"):
        return None
    if text.lower() == "balanced":
        return "balanced"
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, 'none', or 'balanced', "
                          f"got {text!r}")


# ------------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    manifest, warnings = ingest_dataset(args.dir, args.min_side,
                                        args.test_fraction, args.seed,
                                        stratify=args.stratify)
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out)
    _write_resolved_config(out, args)
    print(f"ingested {len(manifest.records)} images "
          f"({sum(r.split == 'test' for r in manifest.records)} test)",
          file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    spec = SynthForamSpec(resolution=args.resolution, class_count=args.classes,
                          seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = write_corpus(out, spec, args.per_class,
                            test_fraction=args.test_fraction,
                            split_seed=args.seed)
    _write_resolved_config(out, args)
    print(f"wrote {len(manifest.records)} images under {out}", file=sys.stderr)
    return 0


def cmd_degrade(args) -> int:
    img = read_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for factor, small in sorted(degrade_chain(img).items()):
        write_image(out / f"{stem}_x{factor}.png", small)
    _write_resolved_config(out, args)
    return 0


def _grayscale_planes(manifest, split) -> tuple[np.ndarray, np.ndarray]:
    images, labels = load_images(manifest, split)
    planes = np.stack([(img if img.channels == 1 else img.luma()).to_planes()
                       for img in images])
    return planes, labels


def _lanczos_degrade(planes: np.ndarray, out_side: int) -> np.ndarray:
    """Degrade a (c, h, w) float [0,1] stack to a square side."""
    img = ImageBuffer.from_planes(planes * 255.0)
    small = resize(img, out_side, out_side, KernelSpec("lanczos"))
    return small.to_planes() / 255.0


def cmd_train_sr(args) -> int:
    manifest = load_manifest(args.manifest)
    hr, _ = _grayscale_planes(manifest, "train")
    hr = hr / 255.0
    side = hr.shape[2]
    if side % args.scale:
        raise ContractError(f"image side {side} not divisible by x{args.scale}")
    lr = np.stack([_lanczos_degrade(img, side // args.scale) for img in hr])
    cfg = SwinSRConfig(scale=args.scale, channels=1, embed_dim=args.embed_dim,
                       window_size=args.window, rstb_count=args.rstbs,
                       layers_per_rstb=args.layers, heads=args.heads)
    model = SwinSR(cfg, np.random.default_rng(args.seed))
    trainer = SRTrainer(model, total_steps=args.steps, seed=args.seed,
                        batch_size=args.batch)
    log = trainer.run(lr, hr)
    for step, loss, _ in log[-3:]:
        print(f"step {step}: l1 {loss:.5f}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_resolved_config(out, args)
    return 0


def cmd_bench_sr(args) -> int:
    manifest = load_manifest(args.manifest)
    scales = [int(s) for s in args.scales.split(",") if s]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    swin_models = {}
    for spec in args.swin or []:
        scale_text, sep, path = spec.partition("=")
        if not sep:
            raise ConfigError(f"--swin expects SCALE=PATH, got {spec!r}")
        swin_models[int(scale_text)] = SwinSR.load(path)
    report = bench.run_sr_benchmark(manifest, scales, methods,
                                    swin_models or None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_dir = out.parent / f"run-{bench.config_hash({'scales': args.scales, 'methods': args.methods, 'manifest': args.manifest, 'swin': ','.join(args.swin or [])})}"
    run_dir.mkdir(parents=True, exist_ok=True)
    bench.emit_report(report, out)
    bench.emit_report(report, run_dir / "report.csv")
    _write_resolved_config(run_dir, args)
    return 0


def cmd_train_gan(args) -> int:
    manifest = load_manifest(args.manifest)
    planes, labels = _grayscale_planes(manifest, "train")
    reals = planes / 127.5 - 1.0
    side = reals.shape[2]
    if side != args.resolution:
        raise ContractError(
            f"manifest images are {side}x{side}, flag says {args.resolution}")
    num_classes = len(manifest.label_names())
    cfg = StyleGanConfig(resolution=args.resolution, num_classes=num_classes,
                         channels=1, base_channels=args.base_channels)
    rng = np.random.default_rng(args.seed)
    gen = Generator(cfg, rng)
    disc = Discriminator(cfg, rng)
    trainer = GanTrainer(gen, disc, seed=args.seed, lr=args.lr,
                         r1_gamma=args.gamma)
    batch_rng = np.random.default_rng(args.seed + 1)
    batch = min(args.batch, len(reals))
    for step in range(args.steps):
        idx = batch_rng.choice(len(reals), size=batch, replace=False)
        loss_g, loss_d = trainer.step(reals[idx], labels[idx])
        if (step + 1) % max(1, args.steps // 5) == 0:
            print(f"step {step + 1}: g {loss_g:.4f} d {loss_d:.4f}",
                  file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_gan(out, gen, disc)
    _write_resolved_config(out, args)
    return 0


def cmd_gen(args) -> int:
    gen, _ = load_gan(args.gan)
    label = _parse_label(args.label)
    images = bench.generate_pool(gen, args.seed, label, args.count,
                                 psi=args.psi)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_image(out / f"gen_{i:04d}.png", img)
    write_image(out / "grid.png", tile_grid(images))
    _write_resolved_config(out, args)
    return 0


def _feature_extractor(clf_path):
    """Pooled pixels by default; a classifier checkpoint upgrades features."""
    if not clf_path:
        return None
    return ClassifierFeatureExtractor(TinyClassifier.load(clf_path))


def cmd_fid(args) -> int:
    manifest = load_manifest(args.manifest)
    gen, _ = load_gan(args.gan)
    images, labels = load_images(manifest, args.split or None)
    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    extractor = _feature_extractor(args.clf)
    results = [bench.run_fid_eval(images, labels, gen, mode, args.n, args.seed,
                                  extractor=extractor)
               for mode in modes]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.emit_fid_report(results, out)
    _write_resolved_config(out, args)
    for res in results:
        print(f"{res.mode}: {res.value:.4f}", file=sys.stderr)
    return 0


def cmd_pipeline(args) -> int:
    gen, _ = load_gan(args.gan)
    sr_model = SwinSR.load(args.sr)
    label = _parse_label(args.label)
    images = bench.gan_sr_pipeline(gen, sr_model, args.seed, label, args.count,
                                   psi=args.psi)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_image(out / f"sr_{i:04d}.png", img)
    write_image(out / "grid.png", tile_grid(images))
    if args.manifest:
        manifest = load_manifest(args.manifest)
        reals, _ = load_images(manifest, "test")
        fids = bench.pipeline_fid_comparison(gen, sr_model, reals, args.seed,
                                             label, args.count,
                                             extractor=_feature_extractor(args.clf))
        lines = ["method,fid,images"]
        for method in sorted(fids):
            lines.append(f"{method},{bench.format_value(fids[method])},{args.count}")
        (out / "fid_vs_bicubic.csv").write_bytes(("\n".join(lines) + "\n").encode())
    _write_resolved_config(out, args)
    return 0


def _seeded_w(gen: Generator, seed: int, index: int) -> Tensor:
    rng = np.random.default_rng(np.random.SeedSequence([seed, gen.cfg.num_classes,
                                                        index]))
    z = Tensor(rng.standard_normal((1, gen.cfg.dz)))
    return gen.map_latents(z, None)


def cmd_seg_train(args) -> int:
    gen, _ = load_gan(args.gan)
    samples = []
    for i in range(args.samples):
        col = extract_hypercolumns(gen, _seeded_w(gen, args.seed, i))
        if args.masks:
            mask = image_to_mask(read_image(Path(args.masks) / f"sample_{i:04d}.pgm"))
        else:
            mask = rule_based_mask(col.image)
        samples.append((col.features, mask))
    head = train_fewshot_head(samples, steps=args.steps, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_head(out, head)
    _write_resolved_config(out, args)
    return 0


def cmd_seg_infer(args) -> int:
    gen, _ = load_gan(args.gan)
    head = load_head(args.head)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        col = extract_hypercolumns(gen, _seeded_w(gen, args.seed, args.offset + i))
        mask, _ = segment(col.features, head)
        write_image(out / f"sample_{i:04d}.png", col.image)
        write_image(out / f"sample_{i:04d}_mask.pgm", mask_to_image(mask))
    _write_resolved_config(out, args)
    return 0


def cmd_report(args) -> int:
    rows = []
    text = Path(args.infile).read_text()
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line == bench.REPORT_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ContractError(f"{args.infile}:{ln}: expected 5 fields")
        rows.append(bench.BenchRow(int(parts[0]), parts[1], float(parts[2]),
                                   float(parts[3]), int(parts[4])))
    report = bench.BenchReport(tuple(sorted(
        rows, key=lambda r: (r.scale, r.method))))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.emit_report(report, out)
    _write_resolved_config(out, args)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forambench",
        description="micropaleontology imaging bench: synthesis, SR, GAN, "
                    "segmentation, reporting")
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name, func, help_text):
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value configuration file")
        p.set_defaults(func=func)
        return p

    p = sub("ingest", cmd_ingest, "scan a class-per-directory image tree")
    p.add_argument("--dir", required=True)
    p.add_argument("--min-side", type=int, default=800)
    p.add_argument("--test-fraction", type=float, default=0.0842)
    p.add_argument("--stratify", action="store_true",
                   help="split within each class instead of over the pool")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub("synth", cmd_synth, "render the synthetic foram corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub("degrade", cmd_degrade, "write x2/x4/x8 Lanczos degradations")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub("train-sr", cmd_train_sr, "train the windowed-attention SR model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--rstbs", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--out", required=True)

    p = sub("bench-sr", cmd_bench_sr, "compare upscaling methods on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scales", default="2,4,8")
    p.add_argument("--methods", default="nearest,bilinear,bicubic,lanczos")
    p.add_argument("--swin", action="append",
                   help="SCALE=CHECKPOINT, repeatable")
    p.add_argument("--out", required=True)

    p = sub("train-gan", cmd_train_gan, "train the conditional generator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub("gen", cmd_gen, "sample images from a trained generator")
    p.add_argument("--gan", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="none",
                   help="class id, 'none' (unconditional), or 'balanced' (split"
                        " the count evenly over all classes")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub("fid", cmd_fid, "distribution distance between reals and samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gan", required=True)
    p.add_argument("--mode", default="pooled_conditional",
                   help="comma-separated subset of "
                        "per_class_mean,pooled_conditional,unconditional")
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clf", help="classifier checkpoint: use its penultimate "
                                 "features instead of pooled pixels")
    p.add_argument("--out", required=True)

    p = sub("pipeline", cmd_pipeline, "generate low-res then super-resolve")
    p.add_argument("--gan", required=True)
    p.add_argument("--sr", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="none",
                   help="class id, 'none' (unconditional), or 'balanced' (split"
                        " the count evenly over all classes")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--manifest", help="high-resolution reals for the FID CSV")
    p.add_argument("--clf", help="classifier checkpoint: use its penultimate "
                                 "features instead of pooled pixels")
    p.add_argument("--out", required=True)

    p = sub("seg-train", cmd_seg_train, "train the few-shot segmentation head")
    p.add_argument("--gan", required=True)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks", help="directory of sample_XXXX.pgm label masks; "
                                   "defaults to the rule-based labeler")
    p.add_argument("--out", required=True)

    p = sub("seg-infer", cmd_seg_infer, "segment freshly generated images")
    p.add_argument("--gan", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset", type=int, default=100,
                   help="first sample index (keeps clear of training samples)")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", required=True)

    p = sub("report", cmd_report, "canonicalize a benchmark CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            config_values = _parse_config_file(Path(args.config))
            fresh = build_parser()
            target = next(a for a in fresh._actions
                          if isinstance(a, argparse._SubParsersAction))
            _apply_config_defaults(target.choices[args.command], config_values)
            args = fresh.parse_args(argv)
        return args.func(args)
    except ImageFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ForamBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())