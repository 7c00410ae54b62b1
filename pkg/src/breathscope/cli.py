"""Command-line entry point: ``breathscope analyze | synth | export-ply``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .calib import load_calibration
from .cloud import RoiBox
from .errors import BreathscopeError
from .frameio import SequenceManifest, downsample_sequence, load_frame_sequence, write_frame_sequence
from .pipeline import FrameProcessor, PipelineConfig, StageError, analyze, write_outputs
from .ply import write_ply

log = logging.getLogger("breathscope")

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_MISSING = 2
EXIT_FRAME = 3

AGE_ALIASES = {"under6": "under6", "6to12": "six_to_twelve", "six_to_twelve": "six_to_twelve",
               "unspecified": "unspecified"}


def _fail(code: int, message: str) -> int:
    print(f"breathscope: {message}", file=sys.stderr)
    return code


def _config_from_args(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    changes = {}
    if args.fps_downsample is not None:
        changes["downsample"] = args.fps_downsample
    if args.roi is not None:
        changes["roi"] = str(RoiBox.parse(args.roi))
    if args.band is not None:
        changes["band"] = args.band
    if args.age is not None:
        changes["age_band"] = AGE_ALIASES[args.age]
    if args.reference is not None:
        changes["reference"] = args.reference
    return config.updated(**changes) if changes else config


def _check_inputs(args) -> int | None:
    if not Path(args.input).is_dir():
        return _fail(EXIT_MISSING, f"input directory not found: {args.input}")
    if not Path(args.calib).is_file():
        return _fail(EXIT_MISSING, f"calibration file not found: {args.calib}")
    if getattr(args, "config", None) and not Path(args.config).is_file():
        return _fail(EXIT_MISSING, f"config file not found: {args.config}")
    return None


def cmd_analyze(args) -> int:
    missing = _check_inputs(args)
    if missing is not None:
        return missing
    stage = "config"
    try:
        config = _config_from_args(args)
        stage = "calibration"
        rig = load_calibration(args.calib)
        stage = "load"
        seq = load_frame_sequence(args.input)
        stage = "analysis"
        result = analyze(seq, rig, config)
        stage = "output"
        write_outputs(result, args.out)
        if args.export_ply is not None:
            code = _export(seq if config.downsample == 1 else downsample_sequence(seq, config.downsample),
                           rig, config, args.export_ply, Path(args.out) / f"cloud_{args.export_ply}.ply")
            if code:
                return code
    except StageError as exc:
        return _fail(EXIT_STAGE, f"stage {exc.stage} failed: {exc}")
    except (BreathscopeError, OSError) as exc:
        return _fail(EXIT_STAGE, f"stage {stage} failed: {exc}")
    rep = result.report
    print(f"{rep['breath_count']} breaths in {rep['duration_s']:.1f} s ({rep['bpm']:.1f}/min): {rep['classification']}")
    return EXIT_OK


def _export(seq, rig, config, index: int, out: Path) -> int:
    if not 0 <= index < len(seq):
        return _fail(EXIT_FRAME, f"frame {index} out of range (sequence has {len(seq)} frames)")
    proc = FrameProcessor(rig, seq.image_size, config)
    cloud, _ = proc.cloud(seq[index])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ply(out, cloud.points)
    return EXIT_OK


def cmd_export_ply(args) -> int:
    missing = _check_inputs(args)
    if missing is not None:
        return missing
    try:
        config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        rig = load_calibration(args.calib)
        seq = load_frame_sequence(args.input)
        return _export(seq, rig, config, args.frame, Path(args.out))
    except (BreathscopeError, OSError) as exc:
        return _fail(EXIT_STAGE, f"export failed: {exc}")


def cmd_synth(args) -> int:
    from . import synthchest as sc

    out = Path(args.out)
    model = sc.scenario_model(args.scenario, args.duration, args.seed)
    rig = sc.synthetic_rig()
    seq, truths = sc.generate_sequence(model, rig, sc.SYNTH_SIZE, args.fps, args.duration, args.noise, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_frame_sequence(out, seq)
    (out / "calib.txt").write_text(rig.dumps())
    (out / "config.json").write_text(json.dumps(sc.analysis_config(model), indent=2) + "\n")
    sc.write_ground_truth_csv(out / "ground_truth.csv", truths)
    scenario = {
        "scenario": args.scenario,
        "seed": args.seed,
        "fps": args.fps,
        "duration_s": args.duration,
        "noise_sigma": args.noise,
        "image_size": list(sc.SYNTH_SIZE),
        "model": asdict(model),
    }
    (out / "scenario.json").write_text(json.dumps(scenario, indent=2) + "\n")
    print(f"wrote {len(seq)} frames of '{args.scenario}' breathing to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="breathscope", description="Stereo-camera breathing analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the full pipeline on a frame directory")
    a.add_argument("--input", required=True, help="directory with frames and manifest.txt")
    a.add_argument("--calib", required=True, help="calibration file")
    a.add_argument("--config", help="JSON pipeline configuration")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--fps-downsample", type=int, metavar="N")
    a.add_argument("--roi", help="x0:y0:z0:x1:y1:z1 in mm, or 'full'")
    a.add_argument("--band", help="'auto' or LO:HI in Hz")
    a.add_argument("--age", choices=sorted(AGE_ALIASES))
    a.add_argument("--reference", choices=("first", "auto"))
    a.add_argument("--export-ply", type=int, metavar="N", help="also write frame N's cloud as PLY")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="render a synthetic breathing sequence")
    s.add_argument("scenario", choices=("normal", "deep", "shallow", "mixed", "cough"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--fps", type=float, default=15.0)
    s.add_argument("--noise", type=float, default=2.0, help="intensity noise sigma")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("export-ply", help="write one frame's point cloud as ASCII PLY")
    e.add_argument("--input", required=True)
    e.add_argument("--calib", required=True)
    e.add_argument("--config")
    e.add_argument("--frame", type=int, required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_ply)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
