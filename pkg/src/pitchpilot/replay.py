"""Replay storage with scheduled, balanced and hindsight augmentation.

Three cooperating pieces:

* SerGate: replay scheduling.  The gate opens once the mean absolute
  tracking error of the previously collected episode is at or below
  2 g.  While closed, no hindsight episodes are generated and updates
  consume the entire buffer verbatim.

* her_relabel: hindsight relabeling.  A collected episode is cloned
  with the two command amplitudes replaced by what the plant actually
  did during the on-plateau resting stretch of each pulse (their mean,
  or the final value).  Plant motion and actions are untouched;
  reference-dependent observation features and rewards are recomputed,
  and the clone is marked synthetic.

* bper_sample: balanced rank prioritization.  Steps are ranked by
  descending TD magnitude (ties by insertion order) with weight
  1/rank.  Success steps (priority level 1) get a 25% quota when they
  are rarer than 25% of the buffer; otherwise the pools melt into a
  single rank-weighted draw.  Sampling is with replacement and unbiased
  by any importance correction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .episode import Normalizer, RewardConfig, Trajectory, reward_array
from .signals import DT, CommandSignal, ReferenceModelConfig, shape
from .trpo import TrainingSet


@dataclass(frozen=True)
class ReplayConfig:
    """Buffer geometry and replay scheduling knobs."""

    capacity_batches: int = 10
    ser_threshold: float = 2.0      # g, gate bound on last-episode mean |e_z|
    train_set_size: int = 5000      # steps drawn per update while the gate is open
    her_strategies: tuple[str, ...] = ("mean", "final")

    def __post_init__(self) -> None:
        if self.capacity_batches < 1 or self.train_set_size < 1:
            raise ValueError("bad replay geometry")
        for s in self.her_strategies:
            if s not in ("mean", "final"):
                raise ValueError(f"unknown hindsight strategy {s!r}")


@dataclass
class SerGate:
    """Opens experience replay once tracking is roughly competent."""

    threshold: float = 2.0  # g, bound on the last episode's mean |e_z|
    last_error: float | None = None

    def update(self, mean_abs_error: float) -> None:
        self.last_error = float(mean_abs_error)

    @property
    def is_open(self) -> bool:
        return self.last_error is not None and self.last_error <= self.threshold


def priority_level(step, cfg: RewardConfig) -> int:
    """1 for success steps: small error, gentle deflection, quiet command."""
    return int(abs(step.ez) < 0.5 and abs(step.action) < cfg.eta_max / 2.0
               and abs(step.eu) < cfg.e_u_max)


def priority_levels(traj: Trajectory, cfg: RewardConfig) -> np.ndarray:
    """Vectorized priority_level over a whole trajectory."""
    return ((np.abs(traj.ez) < 0.5)
            & (np.abs(traj.action) < cfg.eta_max / 2.0)
            & (np.abs(traj.eu) < cfg.e_u_max)).astype(np.int8)


def her_relabel(traj: Trajectory, strategy: str, reward_cfg: RewardConfig,
                ref_cfg: ReferenceModelConfig, normalizer: Normalizer) -> Trajectory:
    """Clone an episode with command amplitudes the plant actually reached.

    strategy 'mean' uses the mean measured a_z over each pulse's
    on-plateau resting stretch; 'final' uses the last sample of that
    stretch.  Requires a complete (non-truncated) episode.
    """
    if strategy not in ("mean", "final"):
        raise ValueError(f"unknown hindsight strategy {strategy!r}")
    if traj.synthetic:
        raise ValueError("refusing to relabel an already synthetic episode")
    if traj.diverged or len(traj) != len(traj.command.samples):
        raise ValueError("hindsight relabeling needs a complete episode")

    rise1, fall1, rise2, fall2 = traj.command.transitions
    win = 600  # transition window, samples
    plateau1 = traj.az[rise1 + win:fall1]
    plateau2 = traj.az[rise2 + win:fall2]
    if len(plateau1) == 0 or len(plateau2) == 0:
        raise ValueError("command leaves no on-plateau resting stretch to relabel from")
    if strategy == "mean":
        amp1 = float(np.mean(plateau1))
        amp2 = float(np.mean(plateau2))
    else:
        amp1 = float(plateau1[-1])
        amp2 = float(plateau2[-1])

    cap = max(traj.command.amplitude_cap, abs(amp1), abs(amp2))
    samples = np.zeros(len(traj.command.samples))
    samples[rise1:fall1] = amp1
    samples[rise2:fall2] = amp2
    command = CommandSignal(samples=samples, transitions=traj.command.transitions,
                            amplitudes=(amp1, amp2), amplitude_cap=cap)
    shaped = shape(samples, ref_cfg)

    # Rebuild the reference-dependent observation features; the plant
    # channel (a_z, rates, deflections, estimates) is untouched.
    az_prev = np.concatenate(([0.0], traj.az[:-1]))
    ez_obs = shaped - az_prev
    raw_obs = traj.raw_obs.copy()
    raw_obs[:, 0] = shaped
    raw_obs[:, 2] = ez_obs
    clip = reward_cfg.error_integral_clip
    acc = 0.0
    integral = np.empty(len(samples))
    for t in range(len(samples)):
        acc = min(max(acc + ez_obs[t] * DT, -clip), clip)
        integral[t] = acc
    raw_obs[:, 3] = integral
    norm_obs = normalizer.normalize(raw_obs)

    ez = shaped - traj.az
    eta_prev = np.concatenate(([0.0], traj.action[:-1]))
    rewards = reward_array(ez, traj.action, eta_prev, reward_cfg)

    return Trajectory(
        command=command, shaped=shaped,
        raw_obs=raw_obs, norm_obs=norm_obs,
        action=traj.action.copy(), mean=traj.mean.copy(),
        exploration_std=traj.exploration_std.copy(),
        log_var_tune=traj.log_var_tune.copy(),
        log_prob=np.full(len(traj), np.nan),  # refilled at annotation
        reward=rewards, az=traj.az.copy(), ez=ez, eu=traj.eu.copy(),
        eta_actual=traj.eta_actual.copy(), period=traj.period.copy(),
        synthetic=True, strategy=strategy,
    )


@dataclass
class SampleDiagnostics:
    n0: int = 0
    n1: int = 0
    branch: str = ""          # 'quota', 'molten' or 'full'
    quota_reassigned: bool = False


class ReplayBuffer:
    """FIFO of the most recent batches, viewed as one pooled step store."""

    def __init__(self, capacity_batches: int = 10):
        if capacity_batches < 1:
            raise ValueError("capacity must be at least one batch")
        self.capacity_batches = capacity_batches
        self._batches: deque[list[Trajectory]] = deque()
        self._columns: dict | None = None

    def __len__(self) -> int:
        return sum(len(t) for batch in self._batches for t in batch)

    @property
    def n_batches(self) -> int:
        return len(self._batches)

    def trajectories(self) -> list[Trajectory]:
        return [t for batch in self._batches for t in batch]

    def push_batch(self, batch: list[Trajectory]) -> None:
        """Insert one iteration's episodes (real + synthetic), evicting the oldest."""
        if not batch:
            raise ValueError("refusing to push an empty batch")
        for traj in batch:
            if not traj.annotated:
                raise ValueError("trajectories must be annotated before insertion")
        self._batches.append(list(batch))
        while len(self._batches) > self.capacity_batches:
            self._batches.popleft()
        self._columns = None  # pooled views are rebuilt lazily

    def _pooled(self) -> dict:
        if self._columns is None:
            trajs = self.trajectories()
            if not trajs:
                raise ValueError("replay buffer is empty")
            self._columns = {
                "obs": np.concatenate([t.norm_obs for t in trajs]),
                "action": np.concatenate([t.action for t in trajs]),
                "advantage": np.concatenate([t.advantage for t in trajs]),
                "old_log_prob": np.concatenate([t.log_prob for t in trajs]),
                "old_mean": np.concatenate([t.mean for t in trajs]),
                "old_std": np.concatenate([t.exploration_std for t in trajs]),
                "log_var_tune": np.concatenate([t.log_var_tune for t in trajs]),
                "value_target": np.concatenate([t.value_target for t in trajs]),
                "td": np.concatenate([t.td_mag for t in trajs]),
                "level": np.concatenate([t.priority for t in trajs]),
            }
        return self._columns

    def _training_set(self, idx: np.ndarray | slice) -> TrainingSet:
        cols = self._pooled()
        return TrainingSet(
            obs=cols["obs"][idx], action=cols["action"][idx],
            advantage=cols["advantage"][idx], old_log_prob=cols["old_log_prob"][idx],
            old_mean=cols["old_mean"][idx], old_std=cols["old_std"][idx],
            log_var_tune=cols["log_var_tune"][idx], value_target=cols["value_target"][idx],
        )

    def full_training_set(self) -> tuple[TrainingSet, SampleDiagnostics]:
        """Gate-closed path: every stored step once, in insertion order."""
        cols = self._pooled()
        n1 = int(np.sum(cols["level"] == 1))
        diag = SampleDiagnostics(n0=len(cols["level"]) - n1, n1=n1, branch="full")
        return self._training_set(slice(None)), diag

    def bper_sample(self, n: int, rng) -> tuple[TrainingSet, SampleDiagnostics]:
        """Rank-prioritized draw of n steps with replacement.

        Ranks are global over the pooled buffer by descending TD
        magnitude, ties broken by insertion order; the sampling weight
        of a step is 1/rank.  With scarce success steps (N1 below a
        quarter of the buffer) exactly 25% of the draw comes from the
        success pool, each pool renormalized separately; otherwise one
        molten rank-weighted draw covers everything.
        """
        if n < 1:
            raise ValueError("sample size must be positive")
        cols = self._pooled()
        td = cols["td"]
        level = cols["level"]
        total = len(td)
        order = np.argsort(-td, kind="stable")  # descending TD, stable on ties
        weight = np.empty(total)
        weight[order] = 1.0 / np.arange(1, total + 1)

        n1 = int(np.sum(level == 1))
        n0 = total - n1
        diag = SampleDiagnostics(n0=n0, n1=n1)

        if n1 < 0.25 * total:
            diag.branch = "quota"
            want1 = int(round(0.25 * n))
            want0 = n - want1
            pool1 = np.flatnonzero(level == 1)
            pool0 = np.flatnonzero(level == 0)
            if len(pool1) == 0 or len(pool0) == 0:
                # One pool is empty: its quota is reassigned to the other.
                diag.quota_reassigned = True
                pool = pool1 if len(pool0) == 0 else pool0
                p = weight[pool] / weight[pool].sum()
                idx = rng.choice(pool, size=n, replace=True, p=p)
            else:
                p1 = weight[pool1] / weight[pool1].sum()
                p0 = weight[pool0] / weight[pool0].sum()
                idx = np.concatenate([
                    rng.choice(pool1, size=want1, replace=True, p=p1),
                    rng.choice(pool0, size=want0, replace=True, p=p0),
                ])
        else:
            diag.branch = "molten"
            p = weight / weight.sum()
            idx = rng.choice(total, size=n, replace=True, p=p)

        return self._training_set(idx), diag
