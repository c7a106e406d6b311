"""Episode rollout and scoring for the acceleration-tracking task.

One episode: a double-step normal-acceleration command is shaped by the
reference model; at every 1 ms sample the agent observes a 10-feature
vector, commands a fin deflection, and the actuator + plant advance one
RK4 step each.  The observation is

    [a_z_ref, a_z, e_z, clipped integral of e_z, pitch rate, alpha,
     eta, eta_rate, estimated Mach, estimated height (km)]

with a_z and the error terms taken from the latest available
measurement (the previous sample).  Estimated Mach and height carry the
episode's estimation uncertainty; the plant itself stays nominal unless
the spec routes the perturbation there.

Rewards trade tracking error against actuation effort:

    f1 = -w1 |e_z|
    f2 = -w2            when |eta| >= eta_max
    f3 = -w3 |d_eta/dt|
    f4 = +w4 (e_u_max - |e_u|)/e_u_max   in the quiet-tracking regime

where eta is the commanded deflection and e_u its per-step increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    ActionDelay,
    ActuatorConfig,
    ActuatorFaultError,
    AeroConfig,
    NonNominalSpec,
    PlantDivergedError,
    PlantState,
    actuator_step,
    apply_uncertainty,
    plant_step,
)
from .signals import DT, CommandSignal, PeriodMask, ReferenceModelConfig, classify_periods, shape
from .trpo import GaussianPolicy, TrpoConfig, sample_action

OBS_DIM = 10
STD_FLOOR = 1e-8  # lower bound on the normalizer's per-feature sigma


@dataclass(frozen=True)
class RewardConfig:
    # Weights keep early-training returns O(100): an untrained wide-
    # exploration policy earns roughly -1 per step, mostly from the
    # slope term, so the value head reaches the return scale within
    # tens of updates.  Heavier weights stall the critic for hundreds
    # of updates and advantages never recenter around zero.
    w_error: float = 0.01         # per g of tracking error
    w_overdeflection: float = 0.1
    w_slope: float = 5e-4         # per rad/s of commanded slope
    w_bonus: float = 0.02
    eta_max: float = math.radians(15.0)  # rad, actuation bound (penalty + report)
    e_u_max: float = 0.01         # rad, quiet-increment bound (bonus + priorities)
    bonus_error_limit: float = 3.0  # g
    bonus_eta_limit: float = 0.2    # rad
    error_integral_clip: float = 5.0  # g s, observation integral bound

    def __post_init__(self) -> None:
        if self.eta_max <= 0.0 or self.e_u_max <= 0.0:
            raise ValueError("eta_max and e_u_max must be positive")


@dataclass(frozen=True)
class EnvConfig:
    """Everything the rollout needs apart from the agent itself."""

    aero: AeroConfig = AeroConfig()
    actuator: ActuatorConfig = ActuatorConfig()
    reference: ReferenceModelConfig = ReferenceModelConfig()
    reward: RewardConfig = RewardConfig()


def reward(e_z: float, eta: float, eta_prev: float, cfg: RewardConfig,
           dt: float = DT) -> tuple[float, tuple[float, float, float, float]]:
    """Scalar reward for one step; eta/eta_prev are commanded deflections."""
    f1 = -cfg.w_error * abs(e_z)
    f2 = -cfg.w_overdeflection if abs(eta) >= cfg.eta_max else 0.0
    de = eta - eta_prev
    f3 = -cfg.w_slope * abs(de) / dt
    if (abs(e_z) < cfg.bonus_error_limit and abs(eta) < cfg.bonus_eta_limit
            and abs(de) < cfg.e_u_max):
        f4 = cfg.w_bonus * (cfg.e_u_max - abs(de)) / cfg.e_u_max
    else:
        f4 = 0.0
    return f1 + f2 + f3 + f4, (f1, f2, f3, f4)


def reward_array(e_z: np.ndarray, eta: np.ndarray, eta_prev: np.ndarray,
                 cfg: RewardConfig, dt: float = DT) -> np.ndarray:
    """Vectorized twin of reward() used when relabeling whole episodes."""
    abs_ez = np.abs(e_z)
    de = np.abs(eta - eta_prev)
    f1 = -cfg.w_error * abs_ez
    f2 = np.where(np.abs(eta) >= cfg.eta_max, -cfg.w_overdeflection, 0.0)
    f3 = -cfg.w_slope * de / dt
    quiet = (abs_ez < cfg.bonus_error_limit) & (np.abs(eta) < cfg.bonus_eta_limit) \
        & (de < cfg.e_u_max)
    f4 = np.where(quiet, cfg.w_bonus * (cfg.e_u_max - de) / cfg.e_u_max, 0.0)
    return f1 + f2 + f3 + f4


class Normalizer:
    """Running per-feature standardization, updated between episodes.

    Welford-style accumulation with batch merges; identity until the
    first update; sigma floored at 1e-8 so constant features map to 0.
    """

    def __init__(self, dim: int = OBS_DIM):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.sqrt(self.var), STD_FLOOR)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = len(batch)
        if n == 0:
            return
        if batch.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {batch.shape[1]}")
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = n, b_mean.copy(), b_m2
            return
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.array(obs, dtype=float, copy=True)
        return (obs - self.mean) / self.std

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "Normalizer":
        mean = np.asarray(state["mean"], dtype=float)
        out = cls(dim=len(mean))
        out.count = int(state["count"])
        out.mean = mean
        out.m2 = np.asarray(state["m2"], dtype=float)
        return out


def build_observation(ref: float, az_prev: float, ez_int: float, state: PlantState,
                      est_mach: float, est_height_km: float) -> np.ndarray:
    return np.array([
        ref, az_prev, ref - az_prev, ez_int,
        state.pitch_rate, state.alpha, state.eta, state.eta_rate,
        est_mach, est_height_km,
    ])


@dataclass
class StepRecord:
    """One step viewed row-wise (mainly for tests and prioritization)."""

    raw_obs: np.ndarray
    norm_obs: np.ndarray
    action: float
    mean: float
    exploration_std: float
    log_var_tune: float
    log_prob: float
    reward: float
    az: float
    ez: float
    eu: float
    transition: bool
    value_est: float
    value_target: float
    advantage: float
    td_mag: float
    priority: int
    synthetic: bool


@dataclass
class Trajectory:
    """Column store for one episode; value columns are filled by annotation."""

    command: CommandSignal
    shaped: np.ndarray
    raw_obs: np.ndarray       # (T, OBS_DIM)
    norm_obs: np.ndarray      # (T, OBS_DIM)
    action: np.ndarray        # (T,), commanded deflection as emitted
    mean: np.ndarray          # (T,), policy mean at collection
    exploration_std: np.ndarray
    log_var_tune: np.ndarray
    log_prob: np.ndarray      # (T,), collection-time log-likelihood
    reward: np.ndarray
    az: np.ndarray            # (T,), measured acceleration after the step
    ez: np.ndarray            # (T,), shaped reference minus az
    eu: np.ndarray            # (T,), commanded increment
    eta_actual: np.ndarray    # (T,), achieved deflection (for logs)
    period: np.ndarray        # (T,), bool, True in transition windows
    value_est: np.ndarray = field(default_factory=lambda: np.empty(0))
    value_target: np.ndarray = field(default_factory=lambda: np.empty(0))
    advantage: np.ndarray = field(default_factory=lambda: np.empty(0))
    td_mag: np.ndarray = field(default_factory=lambda: np.empty(0))
    priority: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    synthetic: bool = False
    strategy: str = ""
    diverged: bool = False
    annotated: bool = False

    def __len__(self) -> int:
        return len(self.action)

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.ez))) if len(self) else math.inf

    def step(self, i: int) -> StepRecord:
        return StepRecord(
            raw_obs=self.raw_obs[i], norm_obs=self.norm_obs[i],
            action=float(self.action[i]), mean=float(self.mean[i]),
            exploration_std=float(self.exploration_std[i]),
            log_var_tune=float(self.log_var_tune[i]), log_prob=float(self.log_prob[i]),
            reward=float(self.reward[i]), az=float(self.az[i]), ez=float(self.ez[i]),
            eu=float(self.eu[i]), transition=bool(self.period[i]),
            value_est=float(self.value_est[i]) if self.annotated else math.nan,
            value_target=float(self.value_target[i]) if self.annotated else math.nan,
            advantage=float(self.advantage[i]) if self.annotated else math.nan,
            td_mag=float(self.td_mag[i]) if self.annotated else math.nan,
            priority=int(self.priority[i]) if self.annotated else 0,
            synthetic=self.synthetic,
        )


def run_episode(policy: GaussianPolicy, env: EnvConfig, command: CommandSignal,
                spec: NonNominalSpec, normalizer: Normalizer, trpo_cfg: TrpoConfig,
                explore: bool, rng=None) -> Trajectory:
    """Roll one episode under the current policy.

    The loop per sample: observe, normalize, act (sampled or mean),
    delay, actuator step, plant step, reward.  A validity-cone exit or a
    non-finite command truncates the episode and flags it diverged.
    """
    steps = len(command.samples)
    shaped = shape(command.samples, env.reference)
    mask = classify_periods(command)

    raw_obs = np.empty((steps, OBS_DIM))
    norm_obs = np.empty((steps, OBS_DIM))
    action = np.empty(steps)
    mean = np.empty(steps)
    expl_std = np.empty(steps)
    tune = np.empty(steps)
    log_prob = np.empty(steps)
    rew = np.empty(steps)
    az_arr = np.empty(steps)
    ez_arr = np.empty(steps)
    eu_arr = np.empty(steps)
    eta_act = np.empty(steps)

    est_mach = apply_uncertainty(env.aero.mach, spec.delta_mach)
    est_height_km = apply_uncertainty(env.aero.height, spec.delta_height) / 1000.0
    # Frozen per episode: the normalizer only moves between episodes.
    if normalizer.count > 0:
        norm_mean = normalizer.mean.copy()
        norm_scale = 1.0 / normalizer.std
    else:
        norm_mean = np.zeros(OBS_DIM)
        norm_scale = np.ones(OBS_DIM)

    state = PlantState()
    delay = ActionDelay(spec.latency_ms)
    limit = env.actuator.deflection_limit
    clip = env.reward.error_integral_clip
    az_prev = 0.0
    ez_int = 0.0
    eta_com_prev = 0.0
    diverged = False
    t = 0

    for t in range(steps):
        ref = shaped[t]
        ez_obs = ref - az_prev
        ez_int = min(max(ez_int + ez_obs * DT, -clip), clip)
        obs = build_observation(ref, az_prev, ez_int, state, est_mach, est_height_km)
        nobs = (obs - norm_mean) * norm_scale
        sample = sample_action(policy, nobs, ez_obs, trpo_cfg, rng, explore)
        a = sample.action
        if not math.isfinite(a):
            diverged = True
            break
        applied = min(max(a, -limit), limit)
        try:
            state = actuator_step(state, delay.step(applied), env.actuator, DT)
            state, az = plant_step(state, env.aero, spec, DT)
        except (PlantDivergedError, ActuatorFaultError):
            diverged = True
            break
        ez = ref - az
        r, _ = reward(ez, a, eta_com_prev, env.reward, DT)

        raw_obs[t] = obs
        norm_obs[t] = nobs
        action[t] = a
        mean[t] = sample.mean
        expl_std[t] = sample.std
        tune[t] = sample.log_var_tune
        log_prob[t] = sample.log_prob
        rew[t] = r
        az_arr[t] = az
        ez_arr[t] = ez
        eu_arr[t] = a - eta_com_prev
        eta_act[t] = state.eta
        az_prev = az
        eta_com_prev = a
    else:
        t = steps

    return Trajectory(
        command=command, shaped=shaped,
        raw_obs=raw_obs[:t], norm_obs=norm_obs[:t], action=action[:t],
        mean=mean[:t], exploration_std=expl_std[:t], log_var_tune=tune[:t],
        log_prob=log_prob[:t], reward=rew[:t], az=az_arr[:t], ez=ez_arr[:t],
        eu=eu_arr[:t], eta_actual=eta_act[:t], period=mask.transition[:t].copy(),
        diverged=diverged,
    )


@dataclass(frozen=True)
class PerformanceThresholds:
    """Pass bounds for the five tracking-quality metrics (strictly below passes)."""

    max_resting_error: float = 0.5        # g
    overshoot_pct: float = 20.0           # % of step amplitude
    max_actuation: float = math.radians(15.0)  # rad
    noise_resting: float = 1.0            # rad total variation per window
    noise_transition: float = 0.2         # rad


METRIC_NAMES = ("max_resting_error", "overshoot_pct", "max_actuation",
                "noise_resting", "noise_transition")


@dataclass(frozen=True)
class PerformanceReport:
    max_resting_error: float
    overshoot_pct: float
    max_actuation: float
    noise_resting: float
    noise_transition: float
    mean_abs_error: float
    thresholds: PerformanceThresholds = PerformanceThresholds()

    def pass_flags(self) -> tuple[bool, ...]:
        return tuple(getattr(self, name) < getattr(self.thresholds, name)
                     for name in METRIC_NAMES)

    @property
    def n_passed(self) -> int:
        return sum(self.pass_flags())

    @property
    def all_pass(self) -> bool:
        return self.n_passed == len(METRIC_NAMES)

    def score(self) -> tuple[int, float]:
        """Lexicographic quality: criteria passed first, then low mean error."""
        return (self.n_passed, -self.mean_abs_error)


def _window_total_variation(series: np.ndarray, windows: list[tuple[int, int]]) -> float:
    """Mean over windows of the within-window total variation of series."""
    tvs = []
    for s, e in windows:
        e = min(e, len(series))
        if e - s >= 1:
            tvs.append(float(np.sum(np.abs(np.diff(series[s:e])))))
    return float(np.mean(tvs)) if tvs else 0.0


def evaluate_metrics(traj: Trajectory, mask: PeriodMask,
                     thresholds: PerformanceThresholds = PerformanceThresholds()
                     ) -> PerformanceReport:
    """Score one episode against the tracking-quality requirements.

    Overshoot is the worst signed exceedance of the measured a_z beyond
    the post-step plateau, in percent of that step's amplitude, over the
    0.6 s transition window of each of the four steps.  Noise metrics
    are the mean per-window total variation of the commanded deflection.
    """
    t_len = len(traj)
    tags = mask.transition[:t_len]
    resting = ~tags

    max_rest = float(np.max(np.abs(traj.ez[resting]))) if resting.any() else 0.0

    overshoot = 0.0
    samples = traj.command.samples
    for idx in traj.command.transitions:
        if idx >= t_len:
            continue
        plateau = samples[idx]
        prev = samples[idx - 1] if idx > 0 else 0.0
        step_amp = plateau - prev
        if abs(step_amp) < 1e-12:
            continue
        sign = 1.0 if step_amp > 0 else -1.0
        win = traj.az[idx:min(idx + 600, t_len)]
        if len(win) == 0:
            continue
        exceed = float(np.max(sign * (win - plateau)))
        overshoot = max(overshoot, max(0.0, exceed) / abs(step_amp) * 100.0)

    clipped = [(s, min(e, t_len)) for s, e in mask.resting_windows() if s < t_len]
    noise_rest = _window_total_variation(traj.action, clipped)
    clipped = [(s, min(e, t_len)) for s, e in mask.transition_windows() if s < t_len]
    noise_trans = _window_total_variation(traj.action, clipped)

    return PerformanceReport(
        max_resting_error=max_rest,
        overshoot_pct=overshoot,
        max_actuation=float(np.max(np.abs(traj.action))) if t_len else 0.0,
        noise_resting=noise_rest,
        noise_transition=noise_trans,
        mean_abs_error=traj.mean_abs_error,
        thresholds=thresholds,
    )
