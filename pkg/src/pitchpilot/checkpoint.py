"""Text checkpoints for agents and their optimizer state.

A checkpoint is one JSON document: format tag, version, config digest,
episode index, both networks (dims + parameters), the shared
log-variance, ADAM moments and the observation normalizer.  Floats are
serialized with shortest round-trip repr, so save/load is bit-exact.
Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episode import Normalizer
from .nets import AdamState, Mlp
from .trpo import GaussianPolicy, TrpoConfig, TrpoState

FORMAT_TAG = "pitchpilot-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    """Unreadable, truncated or structurally inconsistent checkpoint."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


def _net_payload(net: Mlp) -> dict:
    return {"dims": list(net.dims),
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases]}


def _adam_payload(state: AdamState) -> dict:
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "t": state.t,
            "m": [a.tolist() for a in state.m],
            "v": [a.tolist() for a in state.v]}


def save_checkpoint(path: str | Path, *, policy: GaussianPolicy, value_net: Mlp,
                    trpo_state: TrpoState, normalizer: Normalizer,
                    config_digest: str, episode: int) -> None:
    for p in policy.params() + value_net.params():
        if not np.all(np.isfinite(p)):
            raise ValueError("refusing to checkpoint non-finite parameters")
    payload = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config_digest": config_digest,
        "episode": int(episode),
        "policy": _net_payload(policy.net),
        "log_var": policy.log_var.tolist(),
        "value": _net_payload(value_net),
        "adam_policy": _adam_payload(trpo_state.policy_opt),
        "adam_value": _adam_payload(trpo_state.value_opt),
        "normalizer": normalizer.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True))
    os.replace(tmp, path)


def _rebuild_net(data: dict, where: str) -> Mlp:
    try:
        dims = tuple(int(d) for d in data["dims"])
        weights = [np.asarray(w, dtype=float) for w in data["weights"]]
        biases = [np.asarray(b, dtype=float) for b in data["biases"]]
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointFormatError(f"bad {where} network payload: {err}") from err
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise CheckpointFormatError(f"{where} network layer count mismatch")
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
            raise CheckpointFormatError(
                f"{where} network layer {l} has shape {w.shape}, dims say {dims}")
    return Mlp(dims=dims, weights=weights, biases=biases)


def _rebuild_adam(data: dict, params: list[np.ndarray], where: str) -> AdamState:
    try:
        state = AdamState(lr=float(data["lr"]), beta1=float(data["beta1"]),
                          beta2=float(data["beta2"]), eps=float(data["eps"]),
                          t=int(data["t"]),
                          m=[np.asarray(a, dtype=float) for a in data["m"]],
                          v=[np.asarray(a, dtype=float) for a in data["v"]])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointFormatError(f"bad {where} optimizer payload: {err}") from err
    if len(state.m) != len(params) or len(state.v) != len(params):
        raise CheckpointFormatError(f"{where} optimizer moment count mismatch")
    for a, p in zip(state.m + state.v, params + params):
        if a.shape != p.shape:
            raise CheckpointFormatError(f"{where} optimizer moment shape mismatch")
    return state


@dataclass
class Checkpoint:
    """A loaded checkpoint, already validated and rebuilt into live objects."""

    policy: GaussianPolicy
    value_net: Mlp
    adam_policy: AdamState
    adam_value: AdamState
    normalizer: Normalizer
    config_digest: str
    episode: int

    def trpo_state(self, cfg: TrpoConfig) -> TrpoState:
        """Optimizer state from the checkpoint; the penalty weight restarts at alpha0."""
        return TrpoState(policy_opt=self.adam_policy, value_opt=self.adam_value,
                         alpha=cfg.alpha0)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise CheckpointFormatError(f"cannot read checkpoint: {err}") from err
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise CheckpointFormatError(f"truncated or corrupt checkpoint: {err}") from err
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise CheckpointFormatError("not a recognized checkpoint document")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {payload.get('version')!r}, expected {FORMAT_VERSION}")

    policy_net = _rebuild_net(payload["policy"], "policy")
    value_net = _rebuild_net(payload["value"], "value")
    try:
        log_var = np.asarray(payload["log_var"], dtype=float)
        normalizer = Normalizer.from_state(payload["normalizer"])
        digest = str(payload["config_digest"])
        episode = int(payload["episode"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointFormatError(f"bad checkpoint payload: {err}") from err
    if log_var.shape != (1,):
        raise CheckpointFormatError("log_var must hold exactly one value")

    policy = GaussianPolicy(net=policy_net, log_var=log_var)
    adam_policy = _rebuild_adam(payload["adam_policy"], policy.params(), "policy")
    adam_value = _rebuild_adam(payload["adam_value"], value_net.params(), "value")
    return Checkpoint(policy=policy, value_net=value_net, adam_policy=adam_policy,
                      adam_value=adam_value, normalizer=normalizer,
                      config_digest=digest, episode=episode)
