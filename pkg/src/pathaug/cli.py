"""Command-line front end: stats, fit, augment, curate, inspect.

Reproducibility rules shared by all subcommands:

* every randomized subcommand requires an explicit --seed, and the seed is
  echoed into every artifact the run writes;
* per-image augmentation streams come from derive_rng(seed, 0, i) with i the
  image's position in the sorted input listing, the same keying dataloader
  integrations use with worker id 0;
* stats subsampling uses one reservoir per slide group (first path component
  under the images directory) with stream derive_rng(seed, 1, g) for the
  g-th sorted group;
* errors print to stderr as "<CODE>: message" and the exit code is 1.

The PATHAUG_LOG environment variable sets the log level (DEBUG, INFO, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import sys

import numpy as np

from .augment import AugmentPipeline, apply_pipeline, load_pipeline, preset_pipeline
from .colorspace import ColorSpace, StainMatrix, default_stain_matrix
from .curate import (
    DEFAULT_CAP,
    DEFAULT_DOWNSAMPLE,
    DEFAULT_LAP_THRESHOLD,
    DEFAULT_SAT_THRESHOLD,
    MAGNIFICATIONS,
    SlideLevel,
    curate_corpus,
    mask_from_image,
)
from .errors import ConfigError, EmptyCorpus, IoError, PathaugError, SchemaError
from .raster import load_png, save_png
from .rng import derive_rng
from .stainstats import (
    ALL_SPACES,
    ChannelStats,
    SpaceModels,
    StainModelFile,
    fit_gmm,
    fit_unimodal,
    image_stats,
    load_model,
    reservoir_indices,
    save_model,
    subsample_count,
)

log = logging.getLogger(__name__)

_SPACE_NAMES = tuple(space.value for space in ALL_SPACES)


def _list_pngs(root) -> list:
    """Relative POSIX paths of every .png under root, sorted."""
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise IoError(f"not a directory: {root}")
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            if name.lower().endswith(".png"):
                rel = os.path.relpath(os.path.join(dirpath, name), root)
                found.append(rel.replace(os.sep, "/"))
    return found


def _parse_spaces(text: str) -> list:
    names = [part.strip() for part in text.split(",") if part.strip()]
    if not names:
        raise ConfigError("--spaces must name at least one of HSV, LAB, HED")
    seen = []
    for name in names:
        if name not in _SPACE_NAMES:
            raise ConfigError(f"unknown color space {name!r}; choose from {_SPACE_NAMES}")
        if name in seen:
            raise ConfigError(f"duplicate color space {name!r}")
        seen.append(name)
    return seen


def _parse_matrix(text: str | None) -> StainMatrix:
    if text is None:
        return default_stain_matrix()
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 9:
        raise ConfigError(f"--stain-matrix needs 9 numbers, got {len(parts)}")
    try:
        return StainMatrix.from_flat([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"bad --stain-matrix: {exc}") from exc


def _run_jobs(jobs: int, worker, tasks: list) -> list:
    """Map worker over tasks, in order, optionally on a process pool."""
    if jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with multiprocessing.Pool(min(jobs, len(tasks))) as pool:
        return pool.map(worker, tasks)


# ---------------------------------------------------------------------------
# stats

def _stats_worker(task):
    root, rel, space_names, matrix_flat, seed, fraction = task
    image = load_png(os.path.join(root, rel))
    matrix = StainMatrix.from_flat(matrix_flat)
    lines = []
    for name in space_names:
        space = ColorSpace[name]
        st = image_stats(image, space, matrix)
        record = {
            "image": rel,
            "space": name,
            "mu": [float(v) for v in st.mu],
            "sigma": [float(v) for v in st.sigma],
            "seed": seed,
            "subsample_fraction": fraction,
        }
        if space is ColorSpace.HED:
            record["stain_matrix"] = matrix.to_flat()
        lines.append(json.dumps(record))
    return lines


def cmd_stats(args) -> int:
    fraction = float(args.subsample)
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"--subsample must be in [0, 1], got {args.subsample}")
    space_names = _parse_spaces(args.spaces)
    matrix = _parse_matrix(args.stain_matrix)
    files = _list_pngs(args.images_dir)
    if not files:
        raise EmptyCorpus(f"no PNG images under {args.images_dir}")

    groups = {}
    for rel in files:
        head = rel.split("/", 1)[0] if "/" in rel else ""
        groups.setdefault(head, []).append(rel)

    sampled = []
    for g, head in enumerate(sorted(groups)):
        members = groups[head]
        count = subsample_count(len(members), fraction)
        rng = derive_rng(args.seed, 1, g)
        sampled.extend(members[i] for i in reservoir_indices(len(members), count, rng))
    sampled.sort()
    log.info("stats: %d of %d images sampled from %d groups",
             len(sampled), len(files), len(groups))

    tasks = [
        (os.fspath(args.images_dir), rel, tuple(space_names), matrix.to_flat(),
         int(args.seed), fraction)
        for rel in sampled
    ]
    results = _run_jobs(args.jobs, _stats_worker, tasks)
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for lines in results:
                for line in lines:
                    fh.write(line)
                    fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc}") from exc
    return 0


# ---------------------------------------------------------------------------
# fit

def _read_stats_file(path):
    per_space = {space: [] for space in ALL_SPACES}
    images = set()
    fractions = set()
    matrices = set()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for line_no, raw in enumerate(raw_lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{line_no}: not valid JSON: {exc}") from exc
        try:
            space = ColorSpace[rec["space"]]
            stats = ChannelStats(space, np.asarray(rec["mu"], dtype=np.float64),
                                 np.asarray(rec["sigma"], dtype=np.float64))
            images.add(rec["image"])
            fractions.add(float(rec["subsample_fraction"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{line_no}: bad stats record: {exc}") from exc
        if "stain_matrix" in rec:
            matrices.add(tuple(float(v) for v in rec["stain_matrix"]))
        per_space[space].append(stats)

    for space in ALL_SPACES:
        if not per_space[space]:
            raise SchemaError(f"stats file has no {space.value} lines")
    if len(fractions) != 1:
        raise SchemaError(f"stats file mixes subsample fractions: {sorted(fractions)}")
    if len(matrices) > 1:
        raise SchemaError("stats file mixes stain matrices")
    matrix = StainMatrix.from_flat(matrices.pop()) if matrices else default_stain_matrix()
    return per_space, matrix, fractions.pop(), len(images)


def cmd_fit(args) -> int:
    per_space, matrix, fraction, image_count = _read_stats_file(args.stats_file)
    spaces = {}
    for space in ALL_SPACES:
        stats = per_space[space]
        uni = fit_unimodal(stats, space)
        gmm = fit_gmm(stats, space, args.k, seed=args.seed)
        log.info("fit %s: n=%d k=%d iterations=%d final ll=%.6f",
                 space.value, len(stats), gmm.k, len(gmm.ll_trace),
                 gmm.ll_trace[-1] if gmm.ll_trace else float("nan"))
        spaces[space] = SpaceModels(uni, gmm)
    model = StainModelFile(
        stain_matrix=matrix,
        subsample_fraction=fraction,
        image_count=image_count,
        spaces=spaces,
    )
    save_model(model, args.out)
    return 0


# ---------------------------------------------------------------------------
# augment

def _build_pipeline(config, preset, model_path) -> AugmentPipeline:
    pipeline = load_pipeline(config) if config else preset_pipeline(preset)
    if model_path:
        pipeline = pipeline.with_model(load_model(model_path))
    for step in pipeline.steps:
        if step.kind == "RandStainNA" and step.params.get("model") is None \
                and pipeline.model is None:
            raise ConfigError(
                "pipeline has a RandStainNA step but no stain model: pass "
                "--model-path or set model_path in the pipeline config"
            )
    return pipeline


_WORKER_PIPELINE = None


def _augment_worker_init(config, preset, model_path):
    global _WORKER_PIPELINE
    _WORKER_PIPELINE = _build_pipeline(config, preset, model_path)


def _augment_worker(task):
    in_path, out_path, seed, index = task
    image = load_png(in_path)
    result = apply_pipeline(_WORKER_PIPELINE, image, derive_rng(seed, 0, index))
    save_png(result, out_path)


def cmd_augment(args) -> int:
    pipeline = _build_pipeline(args.config, args.preset, args.model_path)
    files = _list_pngs(args.images_dir)
    if not files:
        raise EmptyCorpus(f"no PNG images under {args.images_dir}")

    tasks = []
    for i, rel in enumerate(files):
        out_path = os.path.join(args.out, rel.replace("/", os.sep))
        tasks.append((os.path.join(args.images_dir, rel), out_path, int(args.seed), i))
    for parent in sorted({os.path.dirname(t[1]) for t in tasks}):
        try:
            os.makedirs(parent, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create {parent}: {exc}") from exc

    if args.jobs == 1 or len(tasks) <= 1:
        for in_path, out_path, seed, index in tasks:
            image = load_png(in_path)
            result = apply_pipeline(pipeline, image, derive_rng(seed, 0, index))
            save_png(result, out_path)
    else:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        with multiprocessing.Pool(
            min(args.jobs, len(tasks)),
            initializer=_augment_worker_init,
            initargs=(args.config, args.preset, args.model_path),
        ) as pool:
            pool.map(_augment_worker, tasks)
    log.info("augment: wrote %d images to %s", len(tasks), args.out)
    return 0


# ---------------------------------------------------------------------------
# curate

def cmd_curate(args) -> int:
    files = _list_pngs(args.slides_dir)
    files = [f for f in files if "/" not in f]
    levels = []
    for name in files:
        stem = name[:-4]
        slide_id, sep, mag = stem.rpartition("_")
        if not sep or mag not in MAGNIFICATIONS or not slide_id:
            raise ConfigError(
                f"slide file name must look like <slide>_<20x|40x>.png, got {name!r}"
            )
        levels.append(SlideLevel(slide_id, mag, load_png(os.path.join(args.slides_dir, name))))

    masks = None
    if args.mask_dir:
        masks = {}
        for level in levels:
            mask_path = os.path.join(
                args.mask_dir, f"{level.slide_id}_{level.magnification}.png"
            )
            if not os.path.exists(mask_path):
                raise ConfigError(f"--mask-dir given but no mask at {mask_path}")
            masks[(level.slide_id, level.magnification)] = mask_from_image(
                load_png(mask_path), level
            )

    manifest = curate_corpus(
        levels,
        args.out,
        patch_size=args.patch_size,
        cap=args.cap,
        downsample=DEFAULT_DOWNSAMPLE,
        sat_threshold=args.sat_threshold,
        lap_threshold=args.lap_threshold,
        no_filter=args.no_filter,
        seed=args.seed,
        masks=masks,
    )
    summary = dict(manifest.summary(), seed=int(args.seed))
    try:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write summary: {exc}") from exc
    log.info("curate: %s", summary)
    return 0


# ---------------------------------------------------------------------------
# inspect

def _fmt(values) -> str:
    return ", ".join(repr(float(v)) for v in np.asarray(values).ravel())


def cmd_inspect(args) -> int:
    model = load_model(args.model_path)
    print(f"stain model version {model.version}")
    print(f"images: {model.image_count}  subsample_fraction: {model.subsample_fraction!r}")
    print(f"stain matrix: {_fmt(model.stain_matrix.rows)}")
    for space in ALL_SPACES:
        pair = model.spaces[space]
        gmm = pair.gmm
        print(f"[{space.value}]")
        print(f"  unimodal mean: {_fmt(pair.unimodal.mean)}")
        print(f"  unimodal std:  {_fmt(pair.unimodal.std)}")
        print(f"  gmm k={gmm.k}")
        print(f"  weights: {_fmt(gmm.weights)}")
        print(f"  weights sum: {float(gmm.weights.sum())!r}")
        conds = [float(np.linalg.cond(c)) for c in gmm.covariances]
        print(f"  covariance condition numbers: min={min(conds):.6g} max={max(conds):.6g}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathaug",
        description="Stain statistics, augmentation, and patch curation for pathology corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_stats = sub.add_parser("stats", help="per-image channel statistics as JSON lines")
    p_stats.add_argument("images_dir")
    p_stats.add_argument("-o", "--out", required=True)
    p_stats.add_argument("--seed", type=int, required=True)
    p_stats.add_argument("--subsample", type=float, default=0.1)
    p_stats.add_argument("--spaces", default="HSV,LAB,HED")
    p_stats.add_argument("--stain-matrix", default=None)
    p_stats.add_argument("--jobs", type=int, default=1)
    p_stats.set_defaults(func=cmd_stats)

    p_fit = sub.add_parser("fit", help="fit unimodal and GMM stain models from stats")
    p_fit.add_argument("stats_file")
    p_fit.add_argument("-o", "--out", required=True)
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("--k", type=int, default=10)
    p_fit.set_defaults(func=cmd_fit)

    p_aug = sub.add_parser("augment", help="apply a pipeline to every image in a directory")
    p_aug.add_argument("images_dir")
    p_aug.add_argument("-o", "--out", required=True)
    p_aug.add_argument("--seed", type=int, required=True)
    group = p_aug.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", default=None, help="pipeline config JSON path")
    group.add_argument("--preset", default=None, help='preset name, e.g. "paper-default"')
    p_aug.add_argument("--model-path", default=None)
    p_aug.add_argument("--jobs", type=int, default=1)
    p_aug.set_defaults(func=cmd_augment)

    p_cur = sub.add_parser("curate", help="extract filtered patches from slide images")
    p_cur.add_argument("slides_dir")
    p_cur.add_argument("-o", "--out", required=True)
    p_cur.add_argument("--seed", type=int, required=True)
    p_cur.add_argument("--patch-size", type=int, required=True)
    p_cur.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p_cur.add_argument("--sat-threshold", type=float, default=DEFAULT_SAT_THRESHOLD)
    p_cur.add_argument("--lap-threshold", type=float, default=DEFAULT_LAP_THRESHOLD)
    p_cur.add_argument("--no-filter", action="store_true")
    p_cur.add_argument("--mask-dir", default=None)
    p_cur.set_defaults(func=cmd_curate)

    p_ins = sub.add_parser("inspect", help="describe a fitted stain model file")
    p_ins.add_argument("model_path")
    p_ins.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    level_name = os.environ.get("PATHAUG_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PathaugError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"E_CONFIG: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
