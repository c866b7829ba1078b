"""Command-line entry point: ``pestalk <command> ...``.

Exit status is 0 on success, 1 for usage errors and 2 when a command fails
at run time (missing files, malformed inputs, numerical trouble).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import PESTalkError

log = logging.getLogger("pestalk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _need(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _read_json(path) -> dict:
    return json.loads(_need(path, "config").read_text())


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _seed(seed):
    import torch

    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    return np.random.default_rng(seed)


# -- commands -----------------------------------------------------------------

def cmd_synth_data(args) -> None:
    from .synthdata import CorpusSpec, generate_corpus

    obj = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    m = generate_corpus(CorpusSpec.from_json(obj), args.out)
    print(f"wrote {len(m.records)} clips to {args.out}")


def _train_config(args):
    from .training import TrainConfig

    obj = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.dis_orientation:
        obj["dis_orientation"] = args.dis_orientation
    if args.steps is not None:
        obj["max_steps"] = args.steps
    return TrainConfig.from_json(obj)


def cmd_train(args) -> None:
    from .synthdata import load_manifest
    from .training import train

    config = _train_config(args)
    _seed(config.seed)
    manifest = load_manifest(_need(args.manifest, "manifest"))
    result = train(manifest, config, args.out)
    _write_json(Path(args.out) / "train_config.json", config.to_json())
    last = result.history[-1]
    print(f"trained {last['step']} steps, final L_total {last['L_total']:.4f}; checkpoint in {args.out}")


def cmd_build_library(args) -> None:
    from .esmm import persist_library
    from .model import load_checkpoint
    from .synthdata import load_manifest
    from .training import build_library, load_clips

    model = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    manifest = load_manifest(_need(args.manifest, "manifest"))
    if args.split:
        manifest = manifest.split(args.split)
    clips = load_clips(manifest, model.config.emotion_names)
    library = build_library(model, [clips[k] for k in sorted(clips)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    persist_library(library, out)
    print(f"library with {len(library.keys)} entries written to {out}")


def _infer_one(model, library, wav, out_csv, smooth):
    from . import signal
    from .blendshapes import write_blendshape_csv, write_sidecar
    from .training import infer

    clip = signal.read_wav(_need(wav, "audio"))
    seq, style = infer(clip, model, library, smooth=smooth, return_style=True)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_blendshape_csv(out_csv, seq)
    write_sidecar(out_csv.with_suffix(".json"), model.partition, model.fingerprint(),
                  style_key=list(style.key), smoothed=bool(smooth))
    return seq


def cmd_infer(args) -> None:
    from .esmm import load_library
    from .model import load_checkpoint

    model = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    library = load_library(_need(args.library, "library"))
    wav = Path(args.audio)
    if wav.is_dir():
        out = Path(args.output)
        for w in sorted(wav.glob("*.wav")):
            _infer_one(model, library, w, out / f"{w.stem}.csv", args.smooth)
        print(f"wrote predictions for {len(list(wav.glob('*.wav')))} clips to {out}")
    else:
        seq = _infer_one(model, library, wav, args.output, args.smooth)
        print(f"wrote {seq.num_frames} frames to {args.output}")


def cmd_eval(args) -> None:
    from . import signal
    from .blendshapes import read_blendshape_csv
    from .mesh import load_basis, synthetic_face_basis
    from .metrics import METRIC_NAMES, RegionConfig, evaluate_clip, summarize

    pred_dir, gt_dir = _need(args.pred_dir, "prediction directory"), _need(args.gt_dir, "ground-truth directory")
    regions = RegionConfig.load(_need(args.regions, "region config")) if args.regions else RegionConfig()
    basis = load_basis(_need(args.basis, "basis directory")) if args.basis else synthetic_face_basis()
    audio_dir = Path(args.audio_dir) if args.audio_dir else gt_dir.parent / "wav"
    names = sorted(p.stem for p in gt_dir.glob("*.csv") if (pred_dir / p.name).exists())
    if not names:
        raise FileNotFoundError(f"no common blendshape CSVs in {pred_dir} and {gt_dir}")
    reports = []
    for name in names:
        pred = read_blendshape_csv(pred_dir / f"{name}.csv")
        gt = read_blendshape_csv(gt_dir / f"{name}.csv")
        wav = audio_dir / f"{name}.wav"
        clip = signal.read_wav(wav) if wav.exists() else None
        reports.append(evaluate_clip(pred, gt, regions, clip, basis, name))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(reports)
    _write_json(out / "report.json", {"summary": summary, "clips": [r.to_json() for r in reports]})
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("name",) + METRIC_NAMES)
        for r in reports:
            w.writerow([r.name] + ["" if getattr(r, k) is None else repr(getattr(r, k)) for k in METRIC_NAMES])
        w.writerow(["mean"] + ["" if summary[k] is None else repr(summary[k]) for k in METRIC_NAMES])
    print(json.dumps(summary, sort_keys=True))


def cmd_convert_mesh(args) -> None:
    from .blendshapes import read_blendshape_csv
    from .mesh import apply_blendshapes, load_basis, write_obj

    basis = load_basis(_need(args.basis_dir, "basis directory"))
    seq = read_blendshape_csv(_need(args.coeffs, "coefficient CSV"))
    frames = apply_blendshapes(basis, seq)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t, verts in enumerate(frames):
        write_obj(out / f"frame_{t:05d}.obj", basis.neutral.with_vertices(verts))
    print(f"wrote {len(frames)} meshes to {out}")


def cmd_transfer(args) -> None:
    from .mesh import build_templates, load_basis, read_obj, save_basis

    src = load_basis(_need(args.src_basis, "source basis"))
    tgt = read_obj(_need(args.tgt_neutral, "target mesh"))
    corr = None
    if args.correspondence:
        obj = _read_json(args.correspondence)
        corr = obj["triangles"] if isinstance(obj, dict) else obj
        if isinstance(obj, dict) and "region_masks" in obj:
            tgt.region_masks = {k: np.asarray(v, dtype=np.int64) for k, v in obj["region_masks"].items()}
    save_basis(args.out_basis, build_templates(src, tgt, corr))
    print(f"transferred {len(src.templates)} templates to {args.out_basis}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pestalk", description="Emotional speech-to-blendshape animation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", help="generate a synthetic paired corpus")
    s.add_argument("spec", nargs="?", help="corpus spec JSON (defaults used if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train a model on a corpus manifest")
    s.add_argument("manifest")
    s.add_argument("--config", help="training config JSON")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, help="override max_steps")
    s.add_argument("--dis-orientation", choices=("corrected", "literal"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("build-library", help="rebuild the style library from a checkpoint")
    s.add_argument("manifest")
    s.add_argument("checkpoint")
    s.add_argument("--out", required=True, help="library JSON path")
    s.add_argument("--split", help="restrict to one split (train/test)")
    s.set_defaults(func=cmd_build_library)

    s = sub.add_parser("infer", help="predict blendshapes for a WAV file or a directory of them")
    s.add_argument("checkpoint")
    s.add_argument("library")
    s.add_argument("audio")
    s.add_argument("output", help="CSV path, or directory when audio is a directory")
    s.add_argument("--smooth", action="store_true", help="Savitzky-Golay smoothing of the output")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--regions", help="region config JSON")
    s.add_argument("--basis", help="blendshape basis directory for vertex metrics")
    s.add_argument("--audio-dir", help="WAVs for beat alignment (default: <gt_dir>/../wav)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("convert-mesh", help="turn a coefficient CSV into per-frame OBJ meshes")
    s.add_argument("basis_dir")
    s.add_argument("coeffs")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_convert_mesh)

    s = sub.add_parser("transfer", help="transfer a blendshape basis onto a new neutral mesh")
    s.add_argument("src_basis")
    s.add_argument("tgt_neutral")
    s.add_argument("correspondence", nargs="?", help="JSON list (or {triangles: [...]}) of source triangle per target triangle")
    s.add_argument("out_basis")
    s.set_defaults(func=cmd_transfer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None and args.func is not cmd_train:
        _seed(args.seed)
    try:
        args.func(args)
    except (PESTalkError, OSError, ValueError, ArithmeticError, KeyError, RuntimeError) as exc:
        print(f"pestalk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
