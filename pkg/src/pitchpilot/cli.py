"""Command-line entry points for training, evaluation and sweeps."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, WorkbenchConfig, config_digest, load_config
from .dynamics import NonNominalSpec
from .episode import METRIC_NAMES
from .training import (
    ROBUST_CANDIDATES,
    TrainingAbortedError,
    format_sweep_table,
    intermediate_test,
    robustify,
    sweep,
    train,
    write_episode_log,
)


def _load_cfg(args) -> WorkbenchConfig:
    cfg = load_config(args.config) if args.config else WorkbenchConfig()
    updates = {}
    if getattr(args, "episodes", None) is not None:
        updates["episodes"] = args.episodes
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    elif os.environ.get("PITCHPILOT_OUT_DIR"):
        updates["out_dir"] = os.environ["PITCHPILOT_OUT_DIR"]
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _warn_digest(ckpt_digest: str, cfg: WorkbenchConfig) -> None:
    if ckpt_digest != config_digest(cfg):
        print("warning: checkpoint was written under a different configuration",
              file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.resume:
        _warn_digest(load_checkpoint(args.resume).config_digest, cfg)

    def progress(episodes_done, batch, upd):
        if args.progress and episodes_done % args.progress < len(batch):
            errs = [t.mean_abs_error for t in batch if not t.synthetic]
            print(f"episode {episodes_done}: mean|e_z| {np.mean(errs):.3f} g, "
                  f"kl {upd.l2:.2e}, alpha {upd.alpha:.3g}", file=sys.stderr)

    try:
        run = train(cfg, resume_from=args.resume, spec_kind=args.spec_kind,
                    spec_bound=args.spec_bound,
                    on_iteration=progress if args.progress else None)
    except TrainingAbortedError as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return 3
    print(f"trained {run.episodes_run} episodes, final cap {run.cap:g} g, "
          f"{run.fault_count} recovered faults")
    if run.test_reports:
        ep, report = run.test_reports[-1]
        print(f"final test (episode {ep}): {report.n_passed}/5 criteria, "
              f"mean|e_z| {report.mean_abs_error:.3f} g")
    if run.best_path is not None:
        print(f"best checkpoint: {run.best_path}")
    print(f"last checkpoint: {run.last_path}")
    return 0


def _spec_from_flags(args) -> NonNominalSpec:
    lag = args.latency_ms
    if lag:
        kind = "latency"
    elif args.delta_mach or args.delta_height:
        kind = "estimation"
    elif args.delta_cz or args.delta_cm:
        kind = "parametric"
    else:
        kind = "none"
    return NonNominalSpec(kind=kind, bound=float(lag), latency_ms=lag,
                          delta_mach=args.delta_mach,
                          delta_height=args.delta_height,
                          delta_cz=args.delta_cz, delta_cm=args.delta_cm)


def cmd_test(args) -> int:
    cfg = _load_cfg(args)
    ck = load_checkpoint(args.checkpoint)
    _warn_digest(ck.config_digest, cfg)
    spec = _spec_from_flags(args)
    report, traj = intermediate_test(ck.policy, cfg, ck.normalizer, spec=spec)
    if spec.kind != "none":
        print(f"non-nominal {spec.kind}: latency {spec.latency_ms} ms, "
              f"dM {spec.delta_mach:+g}, dh {spec.delta_height:+g}, "
              f"dCz {spec.delta_cz:+g}, dCm {spec.delta_cm:+g}")
    flags = report.pass_flags()
    width = max(len(n) for n in METRIC_NAMES)
    for name, ok in zip(METRIC_NAMES, flags):
        limit = getattr(report.thresholds, name)
        print(f"{name:<{width}}  {getattr(report, name):>10.4f}  "
              f"(< {limit:g})  {'pass' if ok else 'FAIL'}")
    print(f"mean |e_z| {report.mean_abs_error:.4f} g; "
          f"{report.n_passed}/{len(METRIC_NAMES)} criteria passed")
    log_path = args.log or str(Path(cfg.out_dir) / "test_episode.csv")
    write_episode_log(traj, log_path)
    print(f"episode log: {log_path}")
    return 0 if report.all_pass else 2


def cmd_robustify(args) -> int:
    cfg = _load_cfg(args)
    _warn_digest(load_checkpoint(args.checkpoint).config_digest, cfg)
    out = args.out or str(Path(cfg.out_dir) / "robust")
    results = robustify(cfg, args.checkpoint, out, budget=args.budget,
                        kinds=tuple(args.kinds))
    for r in results:
        status = ("aborted" if r.aborted else
                  "screened out" if r.screened else
                  f"{r.report.n_passed}/5 criteria" if r.report else "no test")
        mark = "  <- selected" if r.selected else ""
        print(f"{r.kind:<11} bound {r.bound:g}: {status}{mark}")
    print(f"summary: {Path(out) / 'robustify_summary.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    _warn_digest(load_checkpoint(args.checkpoint_a).config_digest, cfg)
    _warn_digest(load_checkpoint(args.checkpoint_b).config_digest, cfg)
    out = args.out or str(Path(cfg.out_dir) / "sweeps")
    result = sweep(args.checkpoint_a, args.checkpoint_b, cfg, args.kind, out,
                   label=args.label)
    print(format_sweep_table(result))
    print(f"reports in {out}")
    return 0


def cmd_inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    n_policy = sum(p.size for p in ck.policy.params())
    n_value = sum(p.size for p in ck.value_net.params())
    print(f"episode:        {ck.episode}")
    print(f"config digest:  {ck.config_digest}")
    print(f"policy dims:    {ck.policy.net.dims} ({n_policy} parameters)")
    print(f"value dims:     {ck.value_net.dims} ({n_value} parameters)")
    print(f"action std:     {float(np.exp(0.5 * ck.policy.log_var[0])):.5f} (trained part)")
    print(f"normalizer:     {ck.normalizer.count} observations")
    print(f"adam steps:     policy {ck.adam_policy.t}, value {ck.adam_value.t}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitchpilot",
        description="Pitch-autopilot training workbench (policy-gradient "
                    "agent on a surrogate airframe).")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint=False):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--out", help="output directory (overrides config; "
                                     "PITCHPILOT_OUT_DIR also applies)")
        p.add_argument("--seed", type=int, help="override the run seed")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file to load")

    p = sub.add_parser("train", help="curriculum training run")
    add_common(p)
    p.add_argument("--episodes", type=int, help="override the episode budget")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--spec-kind", default="none",
                   choices=("none", "latency", "estimation", "parametric"),
                   help="per-episode perturbation channel")
    p.add_argument("--spec-bound", type=float, default=0.0,
                   help="perturbation bound for --spec-kind")
    p.add_argument("--progress", type=int, default=0, metavar="N",
                   help="progress line every N episodes (0 = silent)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="deterministic double-step test of a checkpoint")
    add_common(p, checkpoint=True)
    p.add_argument("--latency-ms", type=int, default=0,
                   help="fixed command latency in ms")
    p.add_argument("--delta-mach", type=float, default=0.0,
                   help="relative Mach estimate error")
    p.add_argument("--delta-height", type=float, default=0.0,
                   help="relative height estimate error")
    p.add_argument("--delta-cz", type=float, default=0.0,
                   help="relative error on the normal-force gain")
    p.add_argument("--delta-cm", type=float, default=0.0,
                   help="relative error on the pitch-moment gain")
    p.add_argument("--log", help="episode log path (default <out>/test_episode.csv)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("robustify", help="robustness retraining from a checkpoint")
    add_common(p, checkpoint=True)
    p.add_argument("--budget", type=int, default=500,
                   help="episodes per candidate perturbation level")
    p.add_argument("--kinds", nargs="+", default=list(ROBUST_CANDIDATES),
                   choices=list(ROBUST_CANDIDATES))
    p.set_defaults(func=cmd_robustify)

    p = sub.add_parser("sweep",
                       help="grade checkpoint B against checkpoint A over a grid")
    add_common(p)
    p.add_argument("checkpoint_a", help="baseline agent (A)")
    p.add_argument("checkpoint_b", help="candidate agent (B)")
    p.add_argument("--kind", required=True,
                   choices=("latency", "estimation", "parametric"))
    p.add_argument("--label", default="sweep", help="tag in the report file names")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
