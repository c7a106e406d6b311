"""Training orchestration: curriculum runs, robustness runs and sweeps.

The driver loop per iteration: collect a small batch of episodes under
the exploring policy, update the normalizer and the replay gate, expand
the batch with hindsight-relabeled clones when the gate is open,
annotate everything with values/advantages/priorities, push into the
replay window, draw a training set (prioritized when the gate is open,
the whole window verbatim otherwise) and run one penalized-surrogate
update.  Intermediate mean-policy tests grade progress, drive the
command-amplitude curriculum and elect the best checkpoint.

Robustness training resumes a converged nominal checkpoint and repeats
the same loop with per-episode non-nominal draws, abandoning candidate
perturbation levels whose error trend diverges at half budget.  Sweeps
grade a frozen checkpoint's success rate over perturbation grids.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import WorkbenchConfig, config_digest, save_config
from .dynamics import NonNominalSpec
from .episode import (
    OBS_DIM,
    Normalizer,
    PerformanceReport,
    PerformanceThresholds,
    Trajectory,
    classify_periods,
    evaluate_metrics,
    run_episode,
)
from .nets import Mlp, forward
from .replay import ReplayBuffer, SerGate, her_relabel, priority_levels
from .signals import CommandSignal, EPISODE_STEPS, generate_command, make_test_command
from .trpo import (
    LN_2PI,
    GaussianPolicy,
    TrpoState,
    UpdateDiagnostics,
    gae,
)
from .trpo import update as trpo_update

# Seed-stream tags: one independent generator family per randomness source,
# keyed as [seed, STREAM, index...] so runs replay exactly.
STREAM_INIT = 0
STREAM_COMMAND = 1
STREAM_SPEC = 2
STREAM_EXPLORE = 3
STREAM_UPDATE = 4

MAX_FAULTS = 5

DIAG_FIELDS = (
    "episode", "iteration", "cap", "spec_kind", "spec_a", "spec_b", "steps",
    "diverged", "mean_abs_ez", "mean_reward", "gate_input", "ser_open",
    "her_added", "n0", "n1", "branch", "train_size", "l1", "l2",
    "policy_loss", "value_loss", "alpha", "step_scale", "log_var_train",
    "rejected", "fault", "fault_count",
)
TEST_FIELDS = (
    "test_idx", "episode", "cap", "max_resting_error", "overshoot_pct",
    "max_actuation", "noise_resting", "noise_transition", "mean_abs_error",
    "promo_resting", "n_passed", "promoted", "is_best",
)


class TrainingAbortedError(RuntimeError):
    """Raised when repeated non-finite updates make a run unsalvageable."""


def _fmt(value) -> str:
    """CSV cell formatting; floats keep shortest round-trip repr."""
    if isinstance(value, bool) or isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_row(writer, values) -> None:
    writer.writerow([_fmt(v) for v in values])


def annotate_trajectory(traj: Trajectory, policy: GaussianPolicy, value_net: Mlp,
                        cfg: WorkbenchConfig) -> Trajectory:
    """Fill value estimates, advantages, targets and replay priorities.

    Synthetic episodes first refresh their behavior statistics (mean,
    std, log-likelihood) under the current policy, since the relabeled
    observations were never acted on by any recorded policy.
    """
    if traj.annotated:
        raise ValueError("trajectory is already annotated")
    if len(traj) == 0:
        raise ValueError("cannot annotate an empty trajectory")

    trpo_cfg = cfg.trpo
    if traj.synthetic:
        out, _ = forward(policy.net, traj.norm_obs)
        mu = out[:, 0]
        ez_obs = traj.raw_obs[:, 2]
        tune = trpo_cfg.explore_gain * np.minimum(
            np.abs(ez_obs) / trpo_cfg.error_scale, 1.0)
        log_var = float(policy.log_var[0]) + tune
        var = np.exp(log_var)
        resid = traj.action - mu
        traj.mean = mu
        traj.exploration_std = np.sqrt(var)
        traj.log_var_tune = tune
        traj.log_prob = -0.5 * (LN_2PI + log_var) - resid * resid / (2.0 * var)

    values = forward(value_net, traj.norm_obs)[0][:, 0]
    # Terminal (or truncated-by-divergence) states bootstrap from zero.
    adv, targets = gae(traj.reward, values, 0.0, trpo_cfg.gamma, trpo_cfg.gae_lambda)
    traj.value_est = values
    traj.value_target = targets
    traj.advantage = adv
    traj.td_mag = np.abs(adv)
    traj.priority = priority_levels(traj, cfg.reward)
    traj.annotated = True
    return traj


def _failed_report(thresholds: PerformanceThresholds) -> PerformanceReport:
    inf = math.inf
    return PerformanceReport(inf, inf, inf, inf, inf, inf, thresholds)


def scaled_test_command(scale: float = 1.0) -> CommandSignal:
    """The fixed double-step test signal, optionally shrunk to a cap."""
    base = make_test_command()
    if scale == 1.0:
        return base
    return CommandSignal(samples=base.samples * scale,
                         transitions=base.transitions,
                         amplitudes=(base.amplitudes[0] * scale,
                                     base.amplitudes[1] * scale),
                         amplitude_cap=base.amplitude_cap * scale)


def intermediate_test(policy: GaussianPolicy, cfg: WorkbenchConfig,
                      normalizer: Normalizer, spec: NonNominalSpec | None = None,
                      scale: float = 1.0
                      ) -> tuple[PerformanceReport, Trajectory]:
    """One deterministic double-step test episode, exploration off.

    The command is the fixed full-amplitude test signal; `scale` shrinks
    it to the current curriculum cap for promotion checks.  `spec` pins
    a non-nominal environment for sweeps; default is nominal.  The
    report always scores against the fixed thresholds, and a truncated
    episode scores as an unbounded failure.
    """
    env = cfg.env()
    thresholds = PerformanceThresholds(max_actuation=cfg.reward.eta_max)
    command = scaled_test_command(scale)
    if spec is None:
        spec = NonNominalSpec.nominal()
    traj = run_episode(policy, env, command, spec, normalizer, cfg.trpo,
                       explore=False)
    if traj.diverged or len(traj) < len(command.samples):
        return _failed_report(thresholds), traj
    return evaluate_metrics(traj, classify_periods(command), thresholds), traj


def divergence_screen(errors, floor: float = 5.0, factor: float = 2.0,
                      window: int = 100) -> bool:
    """True when the recent error trend has clearly left the early one behind."""
    errors = np.asarray(errors, dtype=float)
    if len(errors) < 2:
        return False
    w = min(window, len(errors) // 2)
    head = float(np.mean(errors[:w]))
    tail = float(np.mean(errors[-w:]))
    return tail > max(floor, factor * head)


@dataclass
class TrainRun:
    """Everything a caller needs from one training run."""

    out_dir: Path
    policy: GaussianPolicy
    value_net: Mlp
    trpo_state: TrpoState
    normalizer: Normalizer
    buffer: ReplayBuffer
    gate: SerGate
    episodes_run: int
    cap: float
    fault_count: int
    episode_errors: list[float] = field(default_factory=list)
    test_reports: list[tuple[int, PerformanceReport]] = field(default_factory=list)
    best_score: tuple[int, float] | None = None
    best_path: Path | None = None
    last_path: Path | None = None
    screened: bool = False


def train(cfg: WorkbenchConfig, out_dir: str | Path | None = None, *,
          resume_from: str | Path | None = None, spec_kind: str = "none",
          spec_bound: float = 0.0, screen_at: int | None = None,
          seed: int | None = None, start_cap: float | None = None,
          on_iteration=None) -> TrainRun:
    """Run the curriculum training loop for cfg.episodes episodes.

    resume_from restarts networks, optimizer moments and the normalizer
    from a checkpoint (replay window, gate and penalty weight start
    fresh).  spec_kind/spec_bound turn on per-episode non-nominal draws.
    screen_at aborts early, flagged, if the error trend diverges at that
    episode count.  on_iteration(episodes_done, batch, diagnostics) is
    called after every update for progress monitoring.
    """
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else int(seed)
    digest = config_digest(cfg)
    save_config(cfg, out_dir / "config.yaml")

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        policy, value_net, normalizer = ck.policy, ck.value_net, ck.normalizer
        state = ck.trpo_state(cfg.trpo)
    else:
        rng_init = np.random.default_rng([seed, STREAM_INIT])
        policy = GaussianPolicy.create(OBS_DIM, rng_init)
        value_net = Mlp.create_default(OBS_DIM, 1, rng_init)
        state = TrpoState.create(policy, value_net, cfg.trpo)
        normalizer = Normalizer(OBS_DIM)

    env = cfg.env()
    cur = cfg.curriculum
    gate = SerGate(cfg.replay.ser_threshold)
    buffer = ReplayBuffer(cfg.replay.capacity_batches)
    cap = cur.start_cap if start_cap is None else float(start_cap)
    cap = min(cap, cur.max_cap)

    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"

    def checkpoint(path: Path, episode: int) -> None:
        save_checkpoint(path, policy=policy, value_net=value_net, trpo_state=state,
                        normalizer=normalizer, config_digest=digest, episode=episode)

    run = TrainRun(out_dir=out_dir, policy=policy, value_net=value_net,
                   trpo_state=state, normalizer=normalizer, buffer=buffer,
                   gate=gate, episodes_run=0, cap=cap, fault_count=0,
                   last_path=last_path)

    diag_file = open(out_dir / "diagnostics.csv", "w", newline="")
    test_file = open(out_dir / "test_report.csv", "w", newline="")
    try:
        diag_csv = csv.writer(diag_file)
        diag_csv.writerow(DIAG_FIELDS)
        test_csv = csv.writer(test_file)
        test_csv.writerow(TEST_FIELDS)

        def run_test(episode: int) -> None:
            nonlocal cap
            test_idx = len(run.test_reports)
            report, _ = intermediate_test(policy, cfg, normalizer)
            run.test_reports.append((episode, report))
            # Promotion judges the resting-error criterion on the test
            # signal shrunk to the current cap; at the final cap that is
            # the full-amplitude test itself.
            promoted = False
            promo_resting = report.max_resting_error
            if cap < cur.max_cap:
                promo_report, _ = intermediate_test(policy, cfg, normalizer,
                                                    scale=cap / cur.max_cap)
                promo_resting = promo_report.max_resting_error
                if promo_resting < report.thresholds.max_resting_error:
                    cap = min(cap + cur.step, cur.max_cap)
                    promoted = True
            run.cap = cap
            score = report.score()
            is_best = run.best_score is None or score > run.best_score
            if is_best:
                run.best_score = score
                run.best_path = best_path
                checkpoint(best_path, episode)
            checkpoint(last_path, episode)
            _write_row(test_csv, (test_idx, episode, cap,
                                  report.max_resting_error, report.overshoot_pct,
                                  report.max_actuation, report.noise_resting,
                                  report.noise_transition, report.mean_abs_error,
                                  promo_resting, report.n_passed, promoted, is_best))
            test_file.flush()

        episodes_done = 0
        iteration = 0
        while episodes_done < cfg.episodes:
            iteration += 1
            n_collect = min(cur.batch_episodes, cfg.episodes - episodes_done)
            batch: list[Trajectory] = []
            episode_meta = []
            for _ in range(n_collect):
                ep = episodes_done
                command = generate_command([seed, STREAM_COMMAND, ep], cap)
                if spec_kind == "none":
                    spec = NonNominalSpec.nominal()
                else:
                    spec = NonNominalSpec.sample(
                        spec_kind, spec_bound,
                        np.random.default_rng([seed, STREAM_SPEC, ep]))
                traj = run_episode(policy, env, command, spec, normalizer,
                                   cfg.trpo, explore=True,
                                   rng=np.random.default_rng([seed, STREAM_EXPLORE, ep]))
                if len(traj):
                    normalizer.update(traj.raw_obs)
                gate.update(traj.mean_abs_error)
                run.episode_errors.append(traj.mean_abs_error)
                batch.append(traj)
                episode_meta.append((ep, spec, traj))
                episodes_done += 1

            her_added = 0
            if gate.is_open:
                for traj in list(batch):
                    if traj.diverged or len(traj) < len(traj.command.samples):
                        continue
                    for strategy in cfg.replay.her_strategies:
                        batch.append(her_relabel(traj, strategy, cfg.reward,
                                                 cfg.reference, normalizer))
                        her_added += 1

            usable = [t for t in batch if len(t)]
            for traj in usable:
                annotate_trajectory(traj, policy, value_net, cfg)

            upd = UpdateDiagnostics()
            diag_sample = None
            train_size = 0
            if usable:
                buffer.push_batch(usable)
                rng_iter = np.random.default_rng([seed, STREAM_UPDATE, iteration])
                if gate.is_open:
                    train_set, diag_sample = buffer.bper_sample(
                        cfg.replay.train_set_size, rng_iter)
                else:
                    train_set, diag_sample = buffer.full_training_set()
                train_size = len(train_set)
                upd = trpo_update(policy, value_net, train_set, cfg.trpo,
                                  state, rng_iter)
                if upd.fault:
                    run.fault_count += 1
                    if run.fault_count > MAX_FAULTS:
                        checkpoint(last_path, episodes_done)
                        raise TrainingAbortedError(
                            f"{run.fault_count} non-finite updates; last at "
                            f"episode {episodes_done}: {upd.message}")

            for ep, spec, traj in episode_meta:
                a, b = 0.0, 0.0
                if spec.kind == "latency":
                    a = float(spec.latency_ms)
                elif spec.kind == "estimation":
                    a, b = spec.delta_mach, spec.delta_height
                elif spec.kind == "parametric":
                    a, b = spec.delta_cz, spec.delta_cm
                _write_row(diag_csv, (
                    ep, iteration, cap, spec.kind, a, b, len(traj),
                    traj.diverged, traj.mean_abs_error,
                    float(np.mean(traj.reward)) if len(traj) else math.nan,
                    gate.last_error, gate.is_open, her_added,
                    diag_sample.n0 if diag_sample else 0,
                    diag_sample.n1 if diag_sample else 0,
                    diag_sample.branch if diag_sample else "none",
                    train_size, upd.l1, upd.l2, upd.policy_loss, upd.value_loss,
                    state.alpha, state.step_scale, float(policy.log_var[0]),
                    upd.rejected, upd.fault, run.fault_count))
            diag_file.flush()
            run.episodes_run = episodes_done

            if on_iteration is not None:
                on_iteration(episodes_done, batch, upd)

            if screen_at is not None and episodes_done >= screen_at \
                    and not run.screened:
                if divergence_screen(run.episode_errors):
                    run.screened = True
                    checkpoint(last_path, episodes_done)
                    return run
                screen_at = None  # passed; do not re-check

            while len(run.test_reports) < episodes_done // cur.test_interval:
                run_test(episodes_done)

        if cfg.episodes == 0 or not run.test_reports \
                or run.test_reports[-1][0] != episodes_done:
            run_test(episodes_done)
        checkpoint(last_path, episodes_done)
    finally:
        diag_file.close()
        test_file.close()
    return run


# --- robustness training -------------------------------------------------

ROBUST_CANDIDATES = {
    "latency": (1, 3, 5, 10),                 # ms upper bounds
    "estimation": (0.01, 0.02, 0.03, 0.05),   # fractional bounds on both estimates
    "parametric": (0.05, 0.07, 0.10, 0.15),   # fractional bounds on both gains
}

ROBUSTIFY_FIELDS = ("kind", "bound", "episodes", "screened", "aborted",
                    "n_passed", "mean_abs_error", "selected", "checkpoint")


@dataclass
class RobustifyResult:
    kind: str
    bound: float
    episodes: int
    screened: bool
    aborted: bool
    report: PerformanceReport | None
    checkpoint_path: Path | None
    selected: bool = False


def robustify(cfg: WorkbenchConfig, base_checkpoint: str | Path,
              out_dir: str | Path, *, budget: int = 500,
              kinds=("latency", "estimation", "parametric"),
              candidates: dict | None = None) -> list[RobustifyResult]:
    """Retrain a converged agent against each candidate perturbation level.

    Every candidate resumes the same nominal checkpoint at the full
    command cap, trains for `budget` episodes under per-episode draws of
    its perturbation, and is screened for error divergence at half
    budget.  Among a kind's survivors the widest bound is selected.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidates = dict(ROBUST_CANDIDATES if candidates is None else candidates)
    results: list[RobustifyResult] = []

    for k_idx, kind in enumerate(kinds):
        kind_results: list[RobustifyResult] = []
        for c_idx, bound in enumerate(candidates[kind]):
            sub_dir = out_dir / f"{kind}_{bound:g}"
            sub_cfg = WorkbenchConfig(
                seed=cfg.seed, episodes=budget, out_dir=str(sub_dir),
                aero=cfg.aero, actuator=cfg.actuator, reference=cfg.reference,
                reward=cfg.reward, trpo=cfg.trpo, replay=cfg.replay,
                curriculum=cfg.curriculum)
            sub_seed = cfg.seed + 7919 * (10 * k_idx + c_idx + 1)
            try:
                run = train(sub_cfg, sub_dir, resume_from=base_checkpoint,
                            spec_kind=kind, spec_bound=float(bound),
                            screen_at=budget // 2, seed=sub_seed,
                            start_cap=cfg.curriculum.max_cap)
            except TrainingAbortedError:
                kind_results.append(RobustifyResult(
                    kind, float(bound), 0, False, True, None, None))
                continue
            report = run.test_reports[-1][1] if run.test_reports else None
            kind_results.append(RobustifyResult(
                kind, float(bound), run.episodes_run, run.screened, False,
                report, None if run.screened else run.out_dir / "last.ckpt"))
        survivors = [r for r in kind_results if r.checkpoint_path is not None]
        if survivors:
            max(survivors, key=lambda r: r.bound).selected = True
        results.extend(kind_results)

    with open(out_dir / "robustify_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROBUSTIFY_FIELDS)
        for r in results:
            _write_row(writer, (
                r.kind, r.bound, r.episodes, r.screened, r.aborted,
                r.report.n_passed if r.report else 0,
                r.report.mean_abs_error if r.report else math.inf,
                r.selected, r.checkpoint_path or ""))
    return results


# --- success-rate sweeps -------------------------------------------------

SWEEP_GRIDS = {
    "latency": np.arange(0, 41),                 # ms
    "estimation": np.linspace(-0.10, 0.10, 81),  # fractional estimate error
    "parametric": np.linspace(-0.40, 0.40, 41),  # fractional gain error
}

SWEEP_METRICS = ("max_resting_error", "overshoot_pct", "max_actuation",
                 "noise_resting", "noise_transition")

SWEEP_DETAIL_FIELDS = ("kind", "value", "a_diverged", "b_diverged",
                       *(f"a_{m}" for m in SWEEP_METRICS),
                       *(f"b_{m}" for m in SWEEP_METRICS),
                       *(f"better_{m}" for m in SWEEP_METRICS))
SWEEP_SUMMARY_FIELDS = ("kind", "metric", "grid_points", "n_better",
                        "success_rate")


@dataclass
class SweepResult:
    """Per-metric win rate of agent B over agent A across one grid."""

    kind: str
    grid: np.ndarray
    n_better: dict[str, int]
    details: list[tuple[float, PerformanceReport, PerformanceReport]]

    @property
    def grid_points(self) -> int:
        return len(self.grid)

    def success_rate(self, metric: str) -> float:
        return self.n_better[metric] / len(self.grid) if len(self.grid) else 0.0


def sweep(checkpoint_a: str | Path, checkpoint_b: str | Path,
          cfg: WorkbenchConfig, kind: str, out_dir: str | Path, *,
          grid=None, label: str = "sweep") -> SweepResult:
    """Grade agent B against agent A across one perturbation grid.

    At each grid value both frozen agents fly the deterministic
    double-step test under that fixed non-nominality.  Success on a
    metric means agent B comes out strictly better (smaller) than agent
    A; the success rate is the share of grid points where it does.
    Writes {label}_{kind}_detail.csv and ..._summary.csv.
    """
    if kind not in SWEEP_GRIDS:
        raise ValueError(f"unknown sweep kind {kind!r}")
    grid = SWEEP_GRIDS[kind] if grid is None else np.asarray(grid, dtype=float)
    if len(grid) == 0:
        raise ValueError("empty sweep grid")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ck_a = load_checkpoint(checkpoint_a)
    ck_b = load_checkpoint(checkpoint_b)

    n_better = {m: 0 for m in SWEEP_METRICS}
    details: list[tuple[float, PerformanceReport, PerformanceReport]] = []
    detail_path = out_dir / f"{label}_{kind}_detail.csv"
    summary_path = out_dir / f"{label}_{kind}_summary.csv"
    with open(detail_path, "w", newline="") as dfh, \
            open(summary_path, "w", newline="") as sfh:
        detail = csv.writer(dfh)
        detail.writerow(SWEEP_DETAIL_FIELDS)
        summary = csv.writer(sfh)
        summary.writerow(SWEEP_SUMMARY_FIELDS)
        for value in grid:
            spec = NonNominalSpec.fixed(kind, float(value))
            rep_a, traj_a = intermediate_test(ck_a.policy, cfg,
                                              ck_a.normalizer, spec=spec)
            rep_b, traj_b = intermediate_test(ck_b.policy, cfg,
                                              ck_b.normalizer, spec=spec)
            better = {m: getattr(rep_b, m) < getattr(rep_a, m)
                      for m in SWEEP_METRICS}
            for m in SWEEP_METRICS:
                n_better[m] += better[m]
            details.append((float(value), rep_a, rep_b))
            _write_row(detail, (
                kind, float(value), traj_a.diverged, traj_b.diverged,
                *(getattr(rep_a, m) for m in SWEEP_METRICS),
                *(getattr(rep_b, m) for m in SWEEP_METRICS),
                *(better[m] for m in SWEEP_METRICS)))
        result = SweepResult(kind, grid, n_better, details)
        for m in SWEEP_METRICS:
            _write_row(summary, (kind, m, result.grid_points, n_better[m],
                                 result.success_rate(m)))
    return result


def format_sweep_table(result: SweepResult) -> str:
    """Per-metric success table for one perturbation kind."""
    head = f"{result.kind}: B better than A over {result.grid_points} grid points"
    lines = [head, f"{'metric':<20}{'success rate':>14}"]
    for m in SWEEP_METRICS:
        lines.append(f"{m:<20}{result.success_rate(m):>13.1%}")
    return "\n".join(lines)


def write_episode_log(traj: Trajectory, path: str | Path) -> None:
    """Per-step CSV of one episode for plotting and inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "command", "reference", "az", "ez", "eta_command",
                         "eta", "reward", "transition"))
        for t in range(len(traj)):
            _write_row(writer, (
                t, traj.command.samples[t], traj.shaped[t], traj.az[t],
                traj.ez[t], traj.action[t], traj.eta_actual[t], traj.reward[t],
                bool(traj.period[t])))
