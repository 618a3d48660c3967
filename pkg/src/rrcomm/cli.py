"""Command-line entry point.

Exit codes: 0 success, 2 user error (bad scripts, bad arguments), 3
environment error (missing files, I/O). Every command takes --seed, and the
effective configuration is written as JSON to a sidecar file so a run can be
reproduced from the sidecar alone. RRCOMM_HOME sets the base for default
output paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataset as ds
from . import dsl, evaluate, kinematics, model, render, study


class UserError(Exception):
    pass


def _home() -> Path:
    return Path(os.environ.get("RRCOMM_HOME", Path.cwd() / "rrcomm_home"))


def _write_sidecar(args: argparse.Namespace, path: Path | None) -> None:
    payload = {k: (str(v) if isinstance(v, Path) else v)
               for k, v in vars(args).items() if k not in ("func", "sidecar")}
    target = path or Path(str(getattr(args, "out", _home() / "run")) + ".config.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=1))


def _resolve_conditions(name: str, count: int) -> list[render.EnvCondition]:
    table = render.standard_conditions() if name == "standard" else render.hard_conditions(count)
    if name == "standard":
        table = table[:count]
    if not table:
        raise UserError(f"no conditions in set {name!r}")
    return table


def _parse_res(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
        return h, w
    except ValueError:
        raise UserError(f"bad resolution {text!r}; expected HxW") from None


def _load_profile(path: str | None,
                  controller: kinematics.ControllerModel | None = None) -> kinematics.RobotProfile:
    if path is None:
        return kinematics.default_profile(controller=controller)
    return kinematics.RobotProfile.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# commands

def cmd_render(args) -> int:
    script = dsl.load_script(args.script)
    env = _resolve_conditions(args.condition_set, 25)[args.env]
    profile = _load_profile(args.profile)
    traj = kinematics.simulate(script, profile, fps=args.fps, seed=args.seed)
    clip = render.render_clip(traj, render.Viewpoint(args.viewpoint), env,
                              res=_parse_res(args.res), seed=args.seed,
                              label=script.message)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render.write_clip(clip, out)
    print(json.dumps({"out": str(out), "frames": clip.shape[0],
                      "message": script.message.name,
                      "truncated": clip.truncated}))
    return 0


def cmd_dataset_gen(args) -> int:
    library = dsl.load_library(args.library) if args.library else dsl.bundled_library()
    conditions = _resolve_conditions(args.condition_set, args.conditions)
    controller = ds.hard_controller() if args.condition_set == "hard" \
        else ds.training_controller()
    profile = _load_profile(args.profile, controller=controller)
    manifest = ds.generate_dataset(
        library, conditions, instances_per_class=args.instances, fps=args.fps,
        resolution=_parse_res(args.res), seed=args.seed, out_dir=args.out,
        viewpoint=render.Viewpoint(args.viewpoint), profile=profile)
    print(json.dumps({"out": str(args.out), "clips": len(manifest.entries)}))
    return 0


def cmd_dataset_split(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    manifest = ds.split(manifest, train_fraction=args.fraction, seed=args.seed)
    manifest.save(Path(args.manifest))
    counts = {"TRAIN": len(manifest.by_split("TRAIN")), "TEST": len(manifest.by_split("TEST"))}
    print(json.dumps(counts))
    return 0


def _config_from_args(args) -> model.ModelConfig:
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
    for key in ("frames", "epochs", "batch_size", "lr", "n_classes"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "skip", False):
        overrides["skip"] = True
    for key in ("encoder_channels", "temporal_strides", "spatial_strides"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    return model.ModelConfig(**overrides)


def cmd_train(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    config = _config_from_args(args)
    params, history = model.train(manifest, config, seed=args.seed,
                                  out_dir=args.out,
                                  log=lambda r: print(json.dumps(r), flush=True))
    model.save_checkpoint(params, config, args.out, name="final")
    print(json.dumps({"out": str(args.out), "epochs": len(history),
                      "best_top1": max((h["top1"] for h in history), default=0.0)}))
    return 0


def cmd_eval(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    params, config = model.load_checkpoint(args.ckpt)
    report = evaluate.evaluate(manifest, params, config, split=args.split)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save_json(out)
    if args.confusion:
        report.save_confusion_csv(args.confusion)
    print(json.dumps({"overall_accuracy": report.overall_accuracy,
                      "overall_time": report.overall_time,
                      "report": str(out)}))
    return 0


def cmd_infer(args) -> int:
    params, config = model.load_checkpoint(args.ckpt)
    clip = render.read_clip(args.clip)
    result = evaluate.predict(clip, params, config)
    print(json.dumps({
        "predicted": dsl.MessageId(int(result.predicted)).name,
        "probabilities": {dsl.MessageId(i).name: float(p)
                          for i, p in enumerate(result.probabilities)},
        "inference_time": result.inference_time,
    }, indent=1))
    return 0


def cmd_study_gen(args) -> int:
    library = dsl.load_library(args.library) if args.library else dsl.bundled_library()
    content = study.build_study_content(library, args.out, fps=args.fps,
                                        resolution=_parse_res(args.res), seed=args.seed)
    n_items = sum(len(c) for c in content.conversations)
    print(json.dumps({"out": str(args.out), "teaching": len(content.teaching),
                      "conversation_items": n_items}))
    return 0


def cmd_study_serve(args) -> int:
    import uvicorn

    app = study.create_app(args.content, args.records, seed=args.seed,
                           ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_study_report(args) -> int:
    store = study.StudyStore(args.records)
    print(json.dumps(store.compute_report(), indent=1))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrcomm",
                                     description="gestural robot communication toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sidecar", type=Path, default=None,
                       help="where to write the effective config JSON")
        if out_default is not None:
            p.add_argument("--out", type=Path, default=out_default)

    p = sub.add_parser("render", help="render one script to a clip file")
    p.add_argument("--script", required=True)
    p.add_argument("--viewpoint", default="HEAD_ON",
                   choices=[v.value for v in render.Viewpoint])
    p.add_argument("--env", type=int, default=0, help="condition id")
    p.add_argument("--condition-set", default="standard", choices=["standard", "hard"])
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--res", default="64x64")
    p.add_argument("--profile", default=None, help="robot profile JSON")
    common(p, _home() / "clip.clip")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("dataset", help="generate or split a clip corpus")
    dsub = p.add_subparsers(dest="dataset_command", required=True)

    g = dsub.add_parser("gen")
    g.add_argument("--library", default=None)
    g.add_argument("--conditions", type=int, default=25)
    g.add_argument("--condition-set", default="standard", choices=["standard", "hard"])
    g.add_argument("--instances", type=int, default=1)
    g.add_argument("--fps", type=float, default=4.0)
    g.add_argument("--res", default="32x32")
    g.add_argument("--viewpoint", default="HEAD_ON",
                   choices=[v.value for v in render.Viewpoint])
    g.add_argument("--profile", default=None)
    common(g, _home() / "dataset")
    g.set_defaults(func=cmd_dataset_gen)

    s = dsub.add_parser("split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--fraction", type=float, default=0.73)
    common(s, None)
    s.set_defaults(func=cmd_dataset_split)

    p = sub.add_parser("train", help="train the recognizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="config override JSON file")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-classes", dest="n_classes", type=int, default=None)
    p.add_argument("--skip", action="store_true", help="train the skip variant")
    common(p, _home() / "model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="TEST")
    p.add_argument("--report", type=Path, default=_home() / "report.json")
    p.add_argument("--confusion", type=Path, default=None)
    common(p, None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict the message in one clip")
    p.add_argument("--clip", required=True)
    p.add_argument("--ckpt", required=True)
    common(p, None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("study", help="transcription study utilities")
    ssub = p.add_subparsers(dest="study_command", required=True)

    g = ssub.add_parser("gen")
    g.add_argument("--library", default=None)
    g.add_argument("--fps", type=float, default=6.0)
    g.add_argument("--res", default="96x96")
    common(g, _home() / "study_content")
    g.set_defaults(func=cmd_study_gen)

    v = ssub.add_parser("serve")
    v.add_argument("--content", required=True)
    v.add_argument("--records", type=Path, default=_home() / "study_records.jsonl")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8700)
    v.add_argument("--ui", default=None,
                   help="frontend directory to mount at / (contains index.html)")
    common(v, None)
    v.set_defaults(func=cmd_study_serve)

    r = ssub.add_parser("report")
    r.add_argument("--records", required=True)
    common(r, None)
    r.set_defaults(func=cmd_study_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _write_sidecar(args, args.sidecar)
        return args.func(args)
    except (dsl.ScriptError, UserError, ds.TooFewInstances, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (OSError, ds.IoFailure) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
