"""Command-line entry point: ``textspotter <command> ...``.

Exit codes: 0 success, 1 validation or parse error, 2 pipeline or runtime
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .decode import BG_THRESHOLD, GLOBAL_THRESHOLD, SIMPLIFY_EPSILON, PipelineError, run_pipeline
from .documents import (
    AnnotationDocument,
    CharBoxRecord,
    DocumentError,
    ImageAnnotation,
    ImageProposals,
    ImageResults,
    InstanceRecord,
    ProposalRecord,
    ProposalsDocument,
    ResultsDocument,
    SpotRecord,
    load_document,
    save_document,
)
from .evalproto import END_TO_END, WORD_SPOTTING, eval_detection, eval_end_to_end, merge_reports
from .geometry import GeometryError, bounding_rect
from .lexicon import DEFAULT_COSTS, UNIT_COSTS, Lexicon, best_match
from .losses import char_loss, finite_diff_check, global_loss, gradient_error, numeric_gradient
from .maps import FormatError, load_map_stack, save_map_stack, write_tensor
from .synth import NoiseSpec, PlacementError, build_scene, corrupt, random_lexicon
from .targets import MAP_H, MAP_W, build_mask_targets, match_anchors

log = logging.getLogger("textspotter")

THREADS_ENV = "TEXTSPOTTER_THREADS"
GRAD_TOLERANCE = 1e-4
# Single-pixel noise specks otherwise decode as characters on noisy maps.
CLI_MIN_REGION_PIXELS = 4


class ValidationFailure(Exception):
    pass


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# -- gen-labels ---------------------------------------------------------------


def cmd_gen_labels(args) -> int:
    ann = load_document(AnnotationDocument, args.annotations)
    props = load_document(ProposalsDocument, args.proposals)
    by_image = {img.id: img for img in props.images}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for img in ann.images:
        instances = []
        for k, rec in enumerate(img.instances):
            ident = rec.id or f"{img.id}/{k}"
            try:
                instances.append(rec.to_instance())
            except (GeometryError, ValueError) as exc:
                raise ValidationFailure(f"instance {ident}: {exc}") from None
        image_props = by_image.get(img.id)
        if image_props is None or not image_props.proposals or not instances:
            continue
        gt_rects = np.array([bounding_rect(inst.polygon) for inst in instances])
        boxes = np.array([p.box for p in image_props.proposals])
        assign = match_anchors(boxes, gt_rects, args.pos_iou, args.pos_iou, allow_low_quality=False)
        for k, j in enumerate(assign.tolist()):
            if j < 0:
                continue
            targets = build_mask_targets(instances[j], boxes[k], args.map_h, args.map_w)
            stem = f"{img.id}_{k}"
            write_tensor(targets.global_map, out / f"{stem}_global.mtsr")
            write_tensor(targets.char_labels.astype(np.float32), out / f"{stem}_chars.mtsr")
            entries.append(
                {
                    "image": img.id,
                    "proposal": k,
                    "instance": img.instances[j].id or f"{img.id}/{j}",
                    "global": f"{stem}_global.mtsr",
                    "chars": f"{stem}_chars.mtsr",
                }
            )
    manifest = {"version": 1, "map_h": args.map_h, "map_w": args.map_w, "targets": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} target pairs to {out}")
    return 0


# -- decode -------------------------------------------------------------------


def cmd_decode(args) -> int:
    props = load_document(ProposalsDocument, args.proposals)
    lexicon = Lexicon.load(args.lexicon) if args.lexicon else None
    costs = UNIT_COSTS if args.unit_costs else DEFAULT_COSTS
    stacks_dir = Path(args.stacks)

    def provider(box):
        return load_map_stack(stacks_dir / box.key)

    images = []
    for img in props.images:
        spots = run_pipeline(
            img.scored_boxes(),
            provider,
            nms_threshold=args.nms,
            score_threshold=args.score_threshold,
            workers=args.workers,
            bg_threshold=args.bg_threshold,
            global_threshold=args.global_threshold,
            epsilon=args.epsilon,
            min_region_pixels=args.min_region_pixels,
        )
        records = []
        for s in spots:
            rec = SpotRecord.from_instance(s)
            if lexicon is not None and len(lexicon):
                match = best_match(s.text, s.probs, lexicon, costs, args.max_distance)
                rec.word = match[0] if match else None
            records.append(rec)
        images.append(ImageResults(id=img.id, instances=records))
    doc = ResultsDocument(images=images)
    if args.out == "-":
        sys.stdout.write(doc.model_dump_json(indent=1) + "\n")
    else:
        save_document(doc, args.out)
        log.info("wrote results for %d images to %s", len(images), args.out)
    return 0


# -- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    results = load_document(ResultsDocument, args.results)
    ann = load_document(AnnotationDocument, args.annotations)
    lexicon = Lexicon.load(args.lexicon) if args.lexicon else None
    spots_by_image = {img.id: img for img in results.images}
    reports = []
    for img in ann.images:
        gts = []
        for k, rec in enumerate(img.instances):
            try:
                gts.append(rec.to_label())
            except (GeometryError, ValueError) as exc:
                raise ValidationFailure(f"instance {rec.id or f'{img.id}/{k}'}: {exc}") from None
        res = spots_by_image.get(img.id)
        spots = [r.to_instance() for r in res.instances] if res else []
        if lexicon is not None and len(lexicon):
            spots = [_with_lexicon(s, lexicon) for s in spots]
        if args.mode == "detection":
            reports.append(eval_detection(spots, gts, args.iou))
        else:
            reports.append(eval_end_to_end(spots, gts, args.mode, args.iou))
    report = merge_reports(reports)
    if args.json:
        print(json.dumps({"mode": args.mode, **report.as_dict()}))
    else:
        print(f"mode      {args.mode}")
        print(f"precision {report.precision:.4f}")
        print(f"recall    {report.recall:.4f}")
        print(f"fmeasure  {report.fmeasure:.4f}")
    return 0


def _with_lexicon(spot, lexicon):
    if spot.word is not None:
        return spot
    match = best_match(spot.text, spot.probs, lexicon)
    return replace(spot, word=match[0]) if match else spot


# -- synth --------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_synth(args) -> int:
    out = Path(args.out)
    stacks = out / "stacks"
    stacks.mkdir(parents=True, exist_ok=True)
    if args.lexicon:
        words = list(Lexicon.load(args.lexicon))
    else:
        words = random_lexicon(args.seed, args.lexicon_size)
    Lexicon(words).save(out / "lexicon.txt")
    noise = NoiseSpec(args.sigma, args.swap_prob, args.seed)

    ann_images, prop_images = [], []
    for s in range(args.n_scenes):
        scene = build_scene(
            args.seed * 100003 + s,
            args.n_words,
            words,
            image_size=(args.height, args.width),
            duplicates=args.duplicates,
            noise=noise,
        )
        image_id = f"scene{s:05d}"
        ann_images.append(
            ImageAnnotation(
                id=image_id,
                width=args.width,
                height=args.height,
                instances=[
                    InstanceRecord(
                        id=f"{image_id}/{i}",
                        polygon=[float(v) for v in w.polygon.ravel()],
                        transcription=w.word,
                        char_boxes=[CharBoxRecord(box=list(map(float, cb.box)), label=cb.label) for cb in w.char_boxes],
                    )
                    for i, w in enumerate(scene.words)
                ],
            )
        )
        records = []
        for k, box in enumerate(scene.candidates):
            name = f"{image_id}_{k}.mtsr"
            save_map_stack(scene.stack_for(box), stacks / name)
            records.append(ProposalRecord(box=list(map(float, box.rect)), score=box.score, stack=name))
        prop_images.append(ImageProposals(id=image_id, proposals=records))

    save_document(AnnotationDocument(images=ann_images), out / "annotations.json")
    save_document(ProposalsDocument(images=prop_images), out / "proposals.json")
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "version": 1,
        "seed": args.seed,
        "scenes": args.n_scenes,
        "words_per_scene": args.n_words,
        "noise": {"sigma": args.sigma, "swap_prob": args.swap_prob},
        "files": {p.relative_to(out).as_posix(): _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.n_scenes} scenes to {out}")
    return 0


# -- grad-check ---------------------------------------------------------------


def cmd_grad_check(args) -> int:
    if args.trials == 0:
        log.warning("grad-check: 0 trials requested, nothing to verify")
        print("max relative error 0.000e+00 over 0 trials")
        return 0
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        x = rng.uniform(-5, 5, (args.global_size, args.global_size))
        y = rng.integers(0, 2, x.shape)
        worst = max(worst, _check(global_loss, x, y, args))
        x = rng.uniform(-5, 5, (args.char_cells, 37))
        labels = rng.integers(-1, 37, args.char_cells)
        worst = max(worst, _check(char_loss, x, labels, args))
    print(f"max relative error {worst:.3e} over {args.trials} trials of each loss")
    if worst > GRAD_TOLERANCE:
        print(f"FAILED: exceeds tolerance {GRAD_TOLERANCE:g}", file=sys.stderr)
        return 2
    return 0


def _check(loss_fn, x, targets, args) -> float:
    if not args.perturb:
        return finite_diff_check(loss_fn, x, targets, args.step)
    analytic = loss_fn(x, targets).gradient * (1 + args.perturb)
    return gradient_error(analytic, numeric_gradient(loss_fn, x, targets, args.step))


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textspotter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-labels", help="write mask-branch targets for matched proposals")
    p.add_argument("annotations")
    p.add_argument("proposals")
    p.add_argument("out")
    p.add_argument("--map-h", type=int, default=MAP_H)
    p.add_argument("--map-w", type=int, default=MAP_W)
    p.add_argument("--pos-iou", type=float, default=0.5, help="min IoU for a positive proposal")
    p.set_defaults(func=cmd_gen_labels)

    p = sub.add_parser("decode", help="decode MTSR stacks into spotted instances")
    p.add_argument("stacks", help="directory holding the MTSR stacks")
    p.add_argument("proposals")
    p.add_argument("-o", "--out", default="-", help="results file (default: stdout)")
    p.add_argument("--lexicon")
    p.add_argument("--unit-costs", action="store_true", help="plain edit distance for lexicon matching")
    p.add_argument("--max-distance", type=float)
    p.add_argument("--nms", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--bg-threshold", type=float, default=BG_THRESHOLD)
    p.add_argument("--global-threshold", type=float, default=GLOBAL_THRESHOLD)
    p.add_argument("--epsilon", type=float, default=SIMPLIFY_EPSILON)
    p.add_argument("--min-region-pixels", type=int, default=CLI_MIN_REGION_PIXELS)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="precision / recall / F-measure")
    p.add_argument("results")
    p.add_argument("annotations")
    p.add_argument("--mode", choices=["detection", END_TO_END, WORD_SPOTTING], default=END_TO_END)
    p.add_argument("--lexicon", help="match unmatched spots against this lexicon first")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render synthetic scenes, proposals and stacks")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--n-words", type=int, default=5)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--swap-prob", type=float, default=0.0)
    p.add_argument("--duplicates", type=int, default=1, help="redundant proposals per word")
    p.add_argument("--lexicon", help="sample words from this file instead of random pseudo-words")
    p.add_argument("--lexicon-size", type=int, default=500)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("grad-check", help="finite-difference check of the loss gradients")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--global-size", type=int, default=8)
    p.add_argument("--char-cells", type=int, default=64)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (DocumentError, ValidationFailure, FormatError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, PlacementError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
