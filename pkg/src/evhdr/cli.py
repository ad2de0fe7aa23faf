"""Command line: simulate -> train -> render -> eval -> export-crf.

Failures print exactly one line to stderr, ``evhdr: error: <kind>: <message>``,
and exit with status 2 (usage, missing file) or 1 (bad data, runtime error).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from ._validation import check_pose, check_positive, parse_range
from .checkpoint import camera_from_info, load_checkpoint, save_checkpoint
from .crf import crf_apply, crf_export
from .dataset import load_dataset
from .evaluation import REPORT_COLUMNS, evaluate
from .simulate import generate_dataset, quantize8
from .train import METRIC_COLUMNS, TrainConfig, render_hdr, train

logger = logging.getLogger("evhdr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="evhdr", description="HDR radiance fields from blurry LDR images and events.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a synthetic dataset from a scene description")
    s.add_argument("--scene", required=True, help="scene JSON file or the preset name 'desk'")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--event-format", choices=("csv", "bin"), default="csv")

    t = sub.add_parser("train", help="optimize a checkpoint on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--lambda", dest="event_weight", type=float, default=None)
    t.add_argument("--b", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--no-events", action="store_true")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--batch-rays", type=int, default=None)
    t.add_argument("--config", help="JSON file of training options")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log-every", type=int, default=None)
    t.add_argument("--checkpoint-every", type=int, default=0)

    r = sub.add_parser("render", help="render HDR (.pfm) or LDR (.ppm) from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--pose", required=True)
    r.add_argument("--exposure", type=float, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--samples", type=int, default=None)

    e = sub.add_parser("eval", help="write a metric report for a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--samples", type=int, default=None)

    c = sub.add_parser("export-crf", help="tabulate the learned response curves")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--range", dest="log_range", default="-10,2")
    c.add_argument("--n", type=int, default=256)
    return p


def _exists(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _info(dataset):
    return {"camera": dataset.camera.to_dict(), "near": dataset.near, "far": dataset.far,
            "exposure": dataset.exposure,
            "phi": dataset.meta.get("phi"), "eval_exposure": dataset.meta.get("eval_exposure")}


def cmd_simulate(args):
    scene = args.scene if args.scene in ("desk", "builtin:desk") else _exists(args.scene, "scene")
    ds = generate_dataset(scene, args.out, seed=args.seed, event_format=args.event_format)
    print(f"wrote {len(ds.views)} views, {len(ds.tests)} test views, "
          f"{sum(len(v.events) for v in ds.views)} events to {args.out}")


def cmd_train(args):
    dataset = load_dataset(_exists(args.dataset, "dataset"))
    state = None
    if args.resume:
        state, base, _ = load_checkpoint(_exists(args.resume, "checkpoint"))
        options = {k: getattr(base, k) for k in base.__dataclass_fields__}
    else:
        options = {}
    if args.config:
        options.update(json.loads(Path(_exists(args.config, "config")).read_text()))
    for key, value in (("event_weight", args.event_weight), ("b", args.b),
                       ("iterations", args.iters), ("seed", args.seed),
                       ("batch_rays", args.batch_rays), ("log_every", args.log_every)):
        if value is not None:
            options[key] = value
    if args.no_events:
        options["use_events"] = False
    unknown = set(options) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown training option(s): {', '.join(sorted(unknown))}")
    config = TrainConfig.from_dict(options)
    out = Path(args.out)
    info = _info(dataset)

    def callback(st, parts):
        if args.checkpoint_every and st.step % args.checkpoint_every == 0:
            save_checkpoint(out, st, config, info)

    state, rows = train(config, dataset, state, callback)
    save_checkpoint(out, state, config, info)
    fio.write_table(out / "metrics.csv", METRIC_COLUMNS, rows)
    last = rows[-1] if rows else None
    msg = f"trained {state.step} iterations -> {out}"
    if last is not None and last[4] is not None:
        msg += f" (holdout psnr {last[4]:.3f} dB)"
    print(msg)


def cmd_render(args):
    state, config, info = load_checkpoint(_exists(args.ckpt, "checkpoint"))
    pose = check_pose(fio.read_pose(_exists(args.pose, "pose file")))
    camera = camera_from_info(info)
    samples = args.samples or config.eval_samples
    hdr = render_hdr(state, camera, pose, info["near"], info["far"], samples)
    out = Path(args.out)
    suffix = out.suffix.lower()
    if suffix == ".pfm":
        fio.write_pfm(out, hdr)
    elif suffix == ".ppm":
        exposure = check_positive(args.exposure if args.exposure is not None
                                  else info["exposure"], "exposure")
        fio.write_ppm(out, quantize8(crf_apply(state.crf, np.maximum(hdr, 0.0), exposure)))
    else:
        raise UsageError(f"output must end in .pfm or .ppm: {out}")
    print(f"wrote {out}")


def cmd_eval(args):
    state, config, _ = load_checkpoint(_exists(args.ckpt, "checkpoint"))
    dataset = load_dataset(_exists(args.dataset, "dataset"))
    rows, scale = evaluate(state, dataset, args.samples or config.eval_samples)
    fio.write_table(args.report, REPORT_COLUMNS, [[r[c] for c in REPORT_COLUMNS] for r in rows])
    for r in rows:
        if r["view_id"] == "mean":
            print(f"{r['task']}: psnr {r['psnr']:.3f} dB ssim {r['ssim']:.4f}")


def cmd_export_crf(args):
    state, _, _ = load_checkpoint(_exists(args.ckpt, "checkpoint"))
    lo, hi = parse_range(args.log_range)
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    fio.write_crf_csv(args.out, crf_export(state.crf, (lo, hi), args.n))
    print(f"wrote {args.n} samples to {args.out}")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "render": cmd_render,
            "eval": cmd_eval, "export-crf": cmd_export_crf}


def _fail(kind, exc, status):
    text = " ".join(str(exc).split()) or type(exc).__name__
    print(f"evhdr: error: {kind}: {text}", file=sys.stderr)
    return status


def _glue_range(argv):
    # "--range -4,1" would otherwise be read as an unknown flag
    out = list(argv)
    for i, a in enumerate(out[:-1]):
        if a == "--range":
            out[i:i + 2] = [f"--range={out[i + 1]}"]
            break
    return out


def main(argv=None):
    argv = _glue_range(sys.argv[1:] if argv is None else argv)
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except FileNotFoundError as exc:
        return _fail("missing-file", exc, 2)
    except fio.FormatError as exc:
        return _fail("format", exc, 1)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("invalid-input", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
