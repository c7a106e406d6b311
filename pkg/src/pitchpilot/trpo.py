"""Trust-region policy optimization over replayed minibatches.

The policy is a single Gaussian action head: mean from an MLP, variance
shared across states as exp(log_var_train + tune(e_z)) where the tune
term widens exploration with the current tracking error.  The surrogate
objective is a batch likelihood-ratio product

    L1 = mean(A) * prod_i pi_new(a_i) / pi_old(a_i)

evaluated as exp(sum of log ratios).  The sum is clamped to +/-30 so
the factor stays finite; the clamp bounds only that scale, the gradient
direction passes through it (ADAM normalizes the magnitude away).  L2
is a mean pairwise Gaussian KL term, and the penalized objective is

    L_P = -L1 + alpha * max(0, L2 - delta_TR)^2 + beta * L2

minimized with ADAM over K epochs of shuffled minibatches.  After each
update the penalty weight adapts: alpha grows 1.5x when the realized L2
exceeds delta_TR, shrinks 1.5x when it is below delta_TR/2, bounded to
[alpha0/100, alpha0*100].  Old-policy statistics (mean, std, log-prob)
are the ones recorded when the sample was collected.

The L1 gradient scales per sample while the KL gradient is a batch
mean, so no alpha inside the adaptation bounds can hold the realized
KL near delta_TR once a calm stretch has dragged alpha to its floor; a
positive-advantage batch then runs the inner loop all the way to the
ratio clamp and lands tens of radii away.  Updates whose realized L2
ends beyond kl_reject_factor * delta_TR are therefore dropped: policy
parameters and optimizer state roll back to the pre-update snapshot
(the value step is kept), while the alpha adaptation still sees the
measured L2 and re-arms the penalty for the next attempt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nets import AdamState, Mlp, NonFiniteGradientError, adam_update, backward, forward

LN_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrpoConfig:
    gamma: float = 0.99            # discount
    gae_lambda: float = 0.95       # advantage estimator decay
    trust_radius: float = 0.01     # delta_TR, KL budget per update
    alpha0: float = 50.0           # initial KL penalty weight
    beta: float = 1.0              # always-on KL regularizer
    epochs: int = 10               # passes over the training set per update
    minibatch: int = 512
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    explore_gain: float = 1.0      # k in the variance tune term
    error_scale: float = 5.0       # g, tracking error that saturates the tune
    log_ratio_clamp: float = 30.0  # bound on the summed log ratios
    kl_reject_factor: float = 10.0  # drop policy steps beyond this many radii
    log_var_min: float = math.log(1e-6)   # keeps exp() sane if training drifts
    log_var_max: float = math.log(0.25)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.trust_radius <= 0.0 or self.alpha0 <= 0.0:
            raise ValueError("trust radius and alpha0 must be positive")
        if self.epochs < 0 or self.minibatch < 1:
            raise ValueError("bad epoch or minibatch setting")
        if self.error_scale <= 0.0:
            raise ValueError("error scale must be positive")
        if self.kl_reject_factor <= 1.0:
            raise ValueError("KL rejection factor must exceed 1")


@dataclass
class GaussianPolicy:
    """MLP mean head plus a trainable shared log-variance."""

    net: Mlp
    log_var: np.ndarray  # shape (1,), log of the trained variance part
    snapshot: list[np.ndarray] | None = None

    @classmethod
    def create(cls, n_obs: int, rng, init_std: float = 0.5,
               head_scale: float = 1.0) -> "GaussianPolicy":
        net = Mlp.create_default(n_obs, 1, rng)
        # The trained log-variance starts at the upper clamp of the
        # update loop (std 0.5 rad, about twice the fin limit), so early
        # actions are exploration-dominated and routinely saturate the
        # fins.  That is intentional: large noise correlates with large
        # tracking error, which gives the variance channel of the
        # surrogate a strong shrink signal, and the first thing the
        # agent learns is to quiet its own actions.  Starting above the
        # clamp would make the first minibatch step of every update a
        # large forced variance cut that the trust region then rejects.
        # head_scale is a hook for tests that need a tame deterministic
        # controller.
        net.weights[-1] *= head_scale
        return cls(net=net, log_var=np.array([2.0 * math.log(init_std)]))

    def params(self) -> list[np.ndarray]:
        return self.net.params() + [self.log_var]

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def load_params(self, params: list[np.ndarray]) -> None:
        self.net.load_params(params[:-1])
        self.log_var[...] = params[-1]

    def refresh_snapshot(self) -> None:
        self.snapshot = self.copy_params()

    def mean(self, obs: np.ndarray) -> np.ndarray:
        out, _ = forward(self.net, obs)
        return out[..., 0]


@dataclass
class ActionSample:
    action: float
    log_prob: float
    mean: float
    std: float
    log_var_tune: float


@dataclass
class TrainingSet:
    """Column store of steps ready for one update."""

    obs: np.ndarray           # (n, n_obs), normalized
    action: np.ndarray        # (n,)
    advantage: np.ndarray     # (n,)
    old_log_prob: np.ndarray  # (n,)
    old_mean: np.ndarray      # (n,)
    old_std: np.ndarray       # (n,)
    log_var_tune: np.ndarray  # (n,), state-dependent variance offset
    value_target: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.action)

    def take(self, idx: np.ndarray) -> "TrainingSet":
        return TrainingSet(*(getattr(self, f)[idx] for f in _TRAIN_FIELDS))


_TRAIN_FIELDS = ("obs", "action", "advantage", "old_log_prob",
                 "old_mean", "old_std", "log_var_tune", "value_target")


@dataclass
class TrpoState:
    """Mutable optimizer and trust-region state for one training run."""

    policy_opt: AdamState
    value_opt: AdamState
    alpha: float
    # Multiplier on the policy learning rate, halved after each rejected
    # update and doubled (up to 1) after each accepted one.  Without it a
    # rejected update replays the identical oversized step forever, since
    # the rollback also restores the optimizer moments that produced it.
    step_scale: float = 1.0

    @classmethod
    def create(cls, policy: GaussianPolicy, value_net: Mlp, cfg: TrpoConfig) -> "TrpoState":
        return cls(policy_opt=AdamState.create(policy.params(), cfg.lr_policy),
                   value_opt=AdamState.create(value_net.params(), cfg.lr_value),
                   alpha=cfg.alpha0)


@dataclass
class UpdateDiagnostics:
    l1: float = 0.0
    l2: float = 0.0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    alpha: float = 0.0
    step_scale: float = 1.0
    rejected: bool = False
    fault: bool = False
    message: str = ""


def gae(rewards: np.ndarray, values: np.ndarray, bootstrap_value: float,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    values[t] estimates the state before reward t; bootstrap_value
    stands in for the state after the last reward.  Returns
    (advantages, advantages + values).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError(f"length mismatch: {rewards.shape} rewards vs {values.shape} values")
    t_len = len(rewards)
    adv = np.empty(t_len)
    acc = 0.0
    next_value = bootstrap_value
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


def gaussian_kl(mean1, var1, mean2, var2):
    """KL(N(mean1, var1) || N(mean2, var2)) for scalars or arrays."""
    var1 = np.asarray(var1, dtype=float)
    var2 = np.asarray(var2, dtype=float)
    if np.any(var1 <= 0.0) or np.any(var2 <= 0.0):
        raise ValueError("KL needs strictly positive variances")
    mean1 = np.asarray(mean1, dtype=float)
    mean2 = np.asarray(mean2, dtype=float)
    out = 0.5 * np.log(var2 / var1) + (var1 + (mean1 - mean2) ** 2) / (2.0 * var2) - 0.5
    return float(out) if out.ndim == 0 else out


def log_var_tune(e_z: float, cfg: TrpoConfig) -> float:
    """State-dependent log-variance offset: k * min(|e_z| / e_scale, 1)."""
    return cfg.explore_gain * min(abs(e_z) / cfg.error_scale, 1.0)


def exploration_variance(policy: GaussianPolicy, e_z: float, cfg: TrpoConfig) -> float:
    """Action variance at tracking error e_z: exp(log_var_train + tune)."""
    return math.exp(float(policy.log_var[0]) + log_var_tune(e_z, cfg))


def sample_action(policy: GaussianPolicy, obs: np.ndarray, e_z: float,
                  cfg: TrpoConfig, rng=None, explore: bool = True) -> ActionSample:
    """Draw (or take the mean) action for one normalized observation."""
    mu = float(policy.mean(obs))
    tune = log_var_tune(e_z, cfg)
    var = math.exp(float(policy.log_var[0]) + tune)
    std = math.sqrt(var)
    if explore:
        action = float(rng.normal(mu, std))
    else:
        action = mu
    log_prob = -0.5 * (LN_2PI + math.log(var)) - (action - mu) ** 2 / (2.0 * var)
    return ActionSample(action=action, log_prob=log_prob, mean=mu, std=std,
                        log_var_tune=tune)


def _policy_terms(batch: TrainingSet, policy: GaussianPolicy, cfg: TrpoConfig):
    """Forward pass shared by the loss and its gradients."""
    out, cache = forward(policy.net, batch.obs)
    mu = out[:, 0]
    log_var_new = float(policy.log_var[0]) + batch.log_var_tune
    var_new = np.exp(log_var_new)
    resid = batch.action - mu
    new_lp = -0.5 * (LN_2PI + log_var_new) - resid * resid / (2.0 * var_new)
    sum_log_ratio = float(np.sum(new_lp - batch.old_log_prob))
    clamped = min(max(sum_log_ratio, -cfg.log_ratio_clamp), cfg.log_ratio_clamp)
    ratio_prod = math.exp(clamped)
    mean_adv = float(np.mean(batch.advantage))
    l1 = mean_adv * ratio_prod

    var_old = batch.old_std * batch.old_std
    mean_gap = batch.old_mean - mu
    kl = 0.5 * (log_var_new - 2.0 * np.log(batch.old_std)) \
        + (var_old + mean_gap * mean_gap) / (2.0 * var_new) - 0.5
    l2 = float(np.mean(kl))
    return mu, var_new, resid, mean_gap, var_old, cache, \
        sum_log_ratio, ratio_prod, mean_adv, l1, l2


def policy_loss(batch: TrainingSet, policy: GaussianPolicy, cfg: TrpoConfig,
                alpha: float) -> tuple[float, float, float]:
    """Penalized surrogate (L_P, L1, L2) for the batch."""
    *_, l1, l2 = _policy_terms(batch, policy, cfg)
    hinge = max(0.0, l2 - cfg.trust_radius)
    l_p = -l1 + alpha * hinge * hinge + cfg.beta * l2
    return l_p, l1, l2


def policy_loss_grads(batch: TrainingSet, policy: GaussianPolicy, cfg: TrpoConfig,
                      alpha: float):
    """Exact parameter gradients of L_P; returns (grads, (L_P, L1, L2))."""
    mu, var_new, resid, mean_gap, var_old, cache, \
        sum_log_ratio, ratio_prod, mean_adv, l1, l2 = _policy_terms(batch, policy, cfg)
    n = len(batch)
    hinge = max(0.0, l2 - cfg.trust_radius)
    l_p = -l1 + alpha * hinge * hinge + cfg.beta * l2

    # The clamp on the summed log ratios only bounds the exp() factor so
    # the scale stays finite; the gradient direction passes through it.
    # Zeroing the gradient at the clamp would mute the surrogate exactly
    # on stale replay data, where the ratio product saturates first, and
    # leave the KL penalty pinning the policy to old behavior.  ADAM's
    # per-coordinate rescaling makes the factor's magnitude immaterial.
    l1_mu = mean_adv * ratio_prod * resid / var_new
    l1_s = mean_adv * ratio_prod * float(np.sum(-0.5 + resid * resid / (2.0 * var_new)))

    kl_coef = 2.0 * alpha * hinge + cfg.beta
    kl_mu = (mu - batch.old_mean) / var_new
    kl_s = 0.5 - (var_old + mean_gap * mean_gap) / (2.0 * var_new)

    d_mu = -l1_mu + (kl_coef / n) * kl_mu
    d_s = -l1_s + (kl_coef / n) * float(np.sum(kl_s))
    grads = backward(policy.net, d_mu[:, None], cache)
    grads.append(np.array([d_s]))
    return grads, (l_p, l1, l2)


def value_loss(batch: TrainingSet, value_net: Mlp) -> float:
    v, _ = forward(value_net, batch.obs)
    return float(np.mean((v[:, 0] - batch.value_target) ** 2))


def value_loss_grads(batch: TrainingSet, value_net: Mlp):
    v, cache = forward(value_net, batch.obs)
    resid = v[:, 0] - batch.value_target
    loss = float(np.mean(resid * resid))
    grads = backward(value_net, (2.0 * resid / len(batch))[:, None], cache)
    return grads, loss


def update(policy: GaussianPolicy, value_net: Mlp, train: TrainingSet,
           cfg: TrpoConfig, state: TrpoState, rng) -> UpdateDiagnostics:
    """K epochs of minibatch ADAM on both heads, then trust-region bookkeeping.

    On any non-finite loss or gradient the pre-update parameters and
    optimizer state are restored and the diagnostics carry a fault flag.
    """
    state.policy_opt.lr = cfg.lr_policy * state.step_scale
    backup_policy = policy.copy_params()
    backup_value = value_net.copy_params()
    backup_opt = (state.policy_opt.copy(), state.value_opt.copy())
    policy.refresh_snapshot()
    n = len(train)

    def back_off() -> None:
        state.step_scale = max(state.step_scale * 0.5, 2.0 ** -12)

    def restore(message: str) -> UpdateDiagnostics:
        policy.load_params(backup_policy)
        value_net.load_params(backup_value)
        state.policy_opt, state.value_opt = backup_opt
        back_off()
        return UpdateDiagnostics(alpha=state.alpha, step_scale=state.step_scale,
                                 fault=True, message=message)

    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                mb = train.take(perm[start:start + cfg.minibatch])
                grads, (l_p, _, _) = policy_loss_grads(mb, policy, cfg, state.alpha)
                if not math.isfinite(l_p):
                    raise NonFiniteGradientError(f"policy loss {l_p!r}")
                adam_update(policy.params(), grads, state.policy_opt)
                policy.log_var[...] = np.clip(policy.log_var, cfg.log_var_min, cfg.log_var_max)
                vgrads, vloss = value_loss_grads(mb, value_net)
                if not math.isfinite(vloss):
                    raise NonFiniteGradientError(f"value loss {vloss!r}")
                adam_update(value_net.params(), vgrads, state.value_opt)
    except NonFiniteGradientError as err:
        return restore(str(err))

    l_p, l1, l2 = policy_loss(train, policy, cfg, state.alpha)
    vloss = value_loss(train, value_net)
    if not (math.isfinite(l_p) and math.isfinite(vloss)):
        return restore("non-finite post-update loss")

    rejected = l2 > cfg.kl_reject_factor * cfg.trust_radius
    if rejected:
        # Runaway step: roll the policy back, keep the value step, and
        # retry next time at half the learning rate.  Acceptance walks
        # the rate back up, so the loop seeks the largest step the
        # trust region tolerates.
        policy.load_params(backup_policy)
        state.policy_opt = backup_opt[0]
        back_off()
    else:
        state.step_scale = min(state.step_scale * 2.0, 1.0)

    if l2 > cfg.trust_radius:
        state.alpha *= 1.5
    elif l2 < cfg.trust_radius / 2.0:
        state.alpha /= 1.5
    state.alpha = min(max(state.alpha, cfg.alpha0 / 100.0), cfg.alpha0 * 100.0)
    return UpdateDiagnostics(l1=l1, l2=l2, policy_loss=l_p, value_loss=vloss,
                             alpha=state.alpha, step_scale=state.step_scale,
                             rejected=rejected)
