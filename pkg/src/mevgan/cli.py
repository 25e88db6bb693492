"""Command-line entry point: ``mevgan <subcommand>``.

Configuration is a flat JSON object. Keys are ``seed`` plus prefixed fields:
``data.*`` (DatasetSpec), ``backbone.*`` (BackboneConfig), ``plugin.*``
(TrainConfig) and ``eval.*`` (clips, frames, metrics, probe_steps). Values
come from the built-in defaults, then the JSON file, then ``--set key=value``
flags, then dedicated flags such as ``--seed``. Unknown keys are rejected.

Every random stream derives from the single ``seed`` through named
sub-streams (dataset, backbone init/training, plugin init/training,
evaluation), so the subcommands compose reproducibly. ``--threads 1``
pins BLAS to one thread, the bitwise reference mode.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 contract violation
(unfrozen backbone, probe gate), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from dataclasses import asdict, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import memory
from .backbone import Backbone, BackboneConfig, FrozenContractError, NonFiniteLossError, train_backbone
from .checkpoint import CheckpointError, read_records, write_records
from .data import DatasetSpec, FramePool, export_frames, export_raw, load_dataset_dir, make_dataset, write_dataset
from .evaluate import METRICS, ProbeGateError, gated_probe, metric_report
from .metrics import MetricError, format_report
from .trainer import CompositeGenerator, TrainConfig, load_video_model, save_video_model, train_plugin

log = logging.getLogger("mevgan")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT, EXIT_NUMERIC = 0, 1, 2, 3, 4

EVAL_DEFAULTS = {"clips": 256, "frames": 8, "metrics": "fid,fvd,is", "probe_steps": 1000}
SECTIONS = {"data": DatasetSpec, "backbone": BackboneConfig, "plugin": TrainConfig}
SKIP = {"seed", "log_path"}


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------

def default_config() -> dict:
    cfg = {"seed": 0}
    for prefix, cls in SECTIONS.items():
        inst = cls()
        cfg.update({f"{prefix}.{f.name}": _plain(getattr(inst, f.name)) for f in fields(cls) if f.name not in SKIP})
    cfg.update({f"eval.{k}": v for k, v in EVAL_DEFAULTS.items()})
    return cfg


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(key: str, raw: str, like):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if isinstance(like, bool) and not isinstance(value, bool):
        raise UsageError(f"{key} expects true/false, got {raw!r}")
    if isinstance(like, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


def resolve_config(path=None, overrides=(), seed=None) -> dict:
    cfg = default_config()
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
        cfg.update(loaded)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        if key not in cfg:
            raise UsageError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, raw, cfg[key])
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def section(cfg: dict, prefix: str, **extra):
    cls = SECTIONS[prefix]
    kwargs = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith(prefix + ".")}
    kwargs.update(extra)
    if "seed" in {f.name for f in fields(cls)}:
        kwargs.setdefault("seed", cfg["seed"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {prefix}.* configuration: {exc}") from exc


def version_string() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    try:
        described = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                                   cwd=Path(__file__).parent, timeout=5)
        if described.returncode == 0 and described.stdout.strip():
            return f"{version}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return version


def record_run(run_dir: Path, command: str, cfg: dict, log_text: str | None = None) -> None:
    """Echo the resolved config, seed and version into ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "run.json").write_text(json.dumps(
        {"command": command, "seed": cfg["seed"], "version": version_string(), "config": cfg},
        indent=2, sort_keys=True) + "\n")
    if log_text is not None:
        (run_dir / f"{command}.log").write_text(log_text)


def _run_dir_for(out: str, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    out = Path(out)
    return out.parent / f"{out.name}.run"


def _videos(cfg: dict, data_dir: str | None, spec: DatasetSpec):
    if data_dir:
        videos = load_dataset_dir(data_dir, spec)
        if not videos:
            raise OSError(f"no videos found under {data_dir}")
        return videos
    return make_dataset(spec)


# -- subcommands --------------------------------------------------------------

def cmd_synth_data(args) -> int:
    cfg = resolve_config(args.spec, args.set, args.seed)
    spec = section(cfg, "data")
    fmt = args.format or ("pgm" if spec.channels == 1 else "ppm")
    out = write_dataset(spec, args.out, fmt)
    record_run(Path(args.out), "synth-data", cfg)
    print(f"wrote {spec.n_videos} videos and manifest to {out}")
    return EXIT_OK


def cmd_train_backbone(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    spec = section(cfg, "data")
    bcfg = section(cfg, "backbone")
    if (spec.resolution, spec.channels) != (bcfg.resolution, bcfg.channels):
        raise UsageError("data.resolution/channels must match backbone.resolution/channels")
    frames = FramePool.from_clips(_videos(cfg, args.data, spec)).frames
    bb, history = train_backbone(frames, bcfg)
    if not args.no_freeze:
        bb.freeze()
    write_records(args.out, bb.records())
    lines = ["step,resolution,d_loss,g_loss,gp"] + [
        f"{i},{r},{d:.6f},{g:.6f},{p:.6f}" for i, (r, d, g, p) in
        enumerate(zip(history.resolution, history.d_loss, history.g_loss, history.gp))]
    record_run(_run_dir_for(args.out, args.run_dir), "train-backbone", cfg, "\n".join(lines) + "\n")
    state = f"frozen, checksum {bb.freeze_state.weight_checksum:016x}" if bb.frozen else "NOT frozen"
    print(f"backbone trained for {bcfg.steps} steps at {bb.resolution}px ({state}) -> {args.out}")
    return EXIT_OK


def cmd_train_plugin(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    backbone = Backbone.from_records(read_records(args.backbone))
    if not backbone.frozen:
        raise FrozenContractError(f"{args.backbone}: backbone is not frozen; stage 2 requires a frozen backbone "
                                  "(freeze contract). Re-run train-backbone without --no-freeze.")
    spec = section(cfg, "data", resolution=backbone.resolution, channels=backbone.cfg.channels)
    tcfg = section(cfg, "plugin")
    plugin, vdisc, history = train_plugin(backbone, _videos(cfg, args.data, spec), tcfg)
    save_video_model(args.out, backbone, plugin, vdisc)
    record_run(_run_dir_for(args.out, args.run_dir), "train-plugin", cfg, history.to_text())
    print(f"plugin trained for {tcfg.epochs} epochs ({len(history)} steps); backbone checksum verified "
          f"-> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    backbone, plugin, _ = load_video_model(args.ckpt)
    backbone.freeze()
    clip = CompositeGenerator(plugin, backbone).sample_video(args.seed, args.frames)
    out = Path(args.out)
    if args.format == "raw":
        out.mkdir(parents=True, exist_ok=True)
        export_raw(clip, out / "clip.mvgn")
    else:
        fmt = args.format
        if fmt == "pgm" and clip.frames.shape[1] != 1:
            raise UsageError("pgm output needs a single-channel model; use --format ppm")
        export_frames(clip, out, fmt)
    cfg = {"seed": args.seed, "generate.frames": args.frames, "generate.format": args.format,
           "generate.ckpt": str(args.ckpt)}
    record_run(out, "generate", cfg)
    print(f"wrote {args.frames}-frame clip for seed {args.seed} to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    for key, value in (("eval.clips", args.clips), ("eval.frames", args.frames), ("eval.metrics", args.metrics)):
        if value is not None:
            cfg[key] = value
    metrics = [m.strip() for m in str(cfg["eval.metrics"]).split(",") if m.strip()]
    if not metrics or set(metrics) - set(METRICS):
        raise UsageError(f"--metrics takes a comma list of {', '.join(METRICS)}")
    backbone, plugin, _ = load_video_model(args.ckpt)
    backbone.freeze()
    spec = section(cfg, "data", resolution=backbone.resolution, channels=backbone.cfg.channels)
    videos = load_dataset_dir(args.data, spec)
    if not videos:
        raise OSError(f"no videos found under {args.data}")
    probe = gated_probe(videos, cfg["seed"], steps=int(cfg["eval.probe_steps"]))
    results = metric_report(CompositeGenerator(plugin, backbone), videos, metrics, int(cfg["eval.clips"]),
                            int(cfg["eval.frames"]), cfg["seed"], probe)
    text = format_report(results, as_json=args.json)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text if text.endswith("\n") else text + "\n")
    record_run(_run_dir_for(args.out, args.run_dir), "evaluate", cfg,
               f"probe accuracy {probe.accuracy:.4f}\n" + format_report(results))
    if args.json:
        print(text)
    else:
        print(f"extractor: desk-scale probe classifier (held-out accuracy {probe.accuracy:.3f}); "
              "not comparable to Inception/I3D values")
        for r in results:
            spread = f" ± {r.std:.4g} over 5 splits" if r.metric in ("fid", "is") else ""
            print(f"{r.metric.upper():>4} = {r.value:.4g}{spread}  (n={r.n_samples})")
    return EXIT_OK


def cmd_mem_report(args) -> int:
    pipeline = memory.ALIASES.get(args.pipeline, args.pipeline)
    print(memory.report(args.batch, args.frames, args.resolution, as_json=args.json, first=pipeline), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    result = run_suite(instances=args.instances)
    print("\n".join(result.lines()))
    print(f"{'all passed' if result.passed else 'FAILURES'} in {result.seconds:.1f}s")
    return EXIT_OK if result.passed else EXIT_NUMERIC


# -- parser -------------------------------------------------------------------

class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="mevgan", description="Plugin video GAN over a frozen image GAN, at desk scale.")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads; 1 is the deterministic reference")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def configurable(sp):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("synth-data", help="write the bouncing-shapes dataset and manifest")
    s.add_argument("--spec", default=None, help="JSON config (data.* keys)")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("pgm", "ppm"), default=None)
    configurable(s)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-backbone", help="stage 1: train and freeze the image GAN")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--data", default=None, help="dataset directory; synthesised from data.* when omitted")
    s.add_argument("--no-freeze", action="store_true", help="leave the backbone trainable (debugging only)")
    s.add_argument("--run-dir", default=None)
    configurable(s)
    s.set_defaults(func=cmd_train_backbone)

    s = sub.add_parser("train-plugin", help="stage 2: train plugin and video discriminator")
    s.add_argument("--backbone", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--run-dir", default=None)
    configurable(s)
    s.set_defaults(func=cmd_train_plugin)

    s = sub.add_parser("generate", help="write one clip")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("ppm", "pgm", "raw"), default="ppm")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="FID / FVD proxy / IS with the gated probe")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--metrics", default=None)
    s.add_argument("--clips", type=int, default=None)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--json", action="store_true")
    s.add_argument("--config", default=None)
    s.add_argument("--run-dir", default=None)
    configurable(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("mem-report", help="parameter counts and analytic memory bounds")
    s.add_argument("--pipeline", choices=("mevgan", "baseline", *memory.PIPELINES), default="mevgan")
    s.add_argument("--batch", type=int, default=4)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--resolution", type=int, default=32)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_mem_report)

    s = sub.add_parser("gradcheck", help="run the gradient-check suite")
    s.add_argument("--instances", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck)
    return p


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FrozenContractError, ProbeGateError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (NonFiniteLossError, FloatingPointError, MetricError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("usage error: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            return _dispatch(args)
    return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
