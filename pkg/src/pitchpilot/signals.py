"""Command signals and reference shaping.

An episode is 5 s sampled at 1 ms: a double-step acceleration command
(two rectangular pulses with random amplitudes and rise times, each
returning to zero) passed through a second-order low-pass reference
model that turns the raw steps into the trajectory the agent is graded
against.  The 0.6 s after each of the four transitions is tagged as a
transition period; everything else is resting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 1e-3                  # s, sample time
EPISODE_STEPS = 5000       # 5 s episodes
TRANSITION_WINDOW_STEPS = 600  # 0.6 s after each step counts as transient


@dataclass(frozen=True)
class ReferenceModelConfig:
    """Second-order low-pass: y_ddot = wn^2 (u - y) - 2 zeta wn y_dot, unit DC gain."""

    natural_frequency: float = 10.0  # rad/s
    damping: float = 0.7

    def __post_init__(self) -> None:
        if self.natural_frequency <= 0.0 or self.damping <= 0.0:
            raise ValueError("reference model parameters must be positive")

    @property
    def settling_time_5pct(self) -> float:
        """Classic 5% settling estimate 3 / (zeta * wn) for the step envelope."""
        return 3.0 / (self.damping * self.natural_frequency)


@dataclass(frozen=True)
class CommandSignal:
    """Piecewise-constant double-step command in g units.

    transitions holds the four step indices (rise 1, fall 1, rise 2,
    fall 2); amplitudes the two pulse levels.
    """

    samples: np.ndarray
    transitions: tuple[int, int, int, int]
    amplitudes: tuple[float, float]
    amplitude_cap: float

    def __post_init__(self) -> None:
        if len(self.transitions) != 4:
            raise ValueError("command must have exactly four transitions")
        idx = list(self.transitions)
        if idx != sorted(idx) or idx[0] < 0 or idx[-1] >= len(self.samples):
            raise ValueError("transition indices must be ordered and in range")
        for amp in self.amplitudes:
            if abs(amp) > self.amplitude_cap + 1e-12:
                raise ValueError("amplitude exceeds the configured cap")


@dataclass(frozen=True)
class PeriodMask:
    """Per-step transition/resting tags for one episode (True = transition)."""

    transition: np.ndarray  # bool, shape (steps,)

    @property
    def resting(self) -> np.ndarray:
        return ~self.transition

    @property
    def transition_count(self) -> int:
        return int(self.transition.sum())

    @property
    def resting_count(self) -> int:
        return int((~self.transition).sum())

    def _runs(self, mask: np.ndarray) -> list[tuple[int, int]]:
        edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
        starts = np.concatenate(([0], edges + 1))
        ends = np.concatenate((edges + 1, [len(mask)]))
        return [(int(s), int(e)) for s, e in zip(starts, ends) if mask[s]]

    def transition_windows(self) -> list[tuple[int, int]]:
        """Maximal [start, end) transition runs; overlapping tags merge."""
        return self._runs(self.transition)

    def resting_windows(self) -> list[tuple[int, int]]:
        return self._runs(~self.transition)


def generate_command(seed, amplitude_cap: float, steps: int = EPISODE_STEPS) -> CommandSignal:
    """Draw one random double-step command, deterministic for a given seed.

    Pulse amplitudes are uniform in [-cap, +cap].  Rise 1 falls in
    [0.2 s, 1.0 s] and rise 2 in [2.2 s, 3.0 s]; hold and gap durations
    are constrained so the four transition windows never overlap and
    each pulse keeps a non-degenerate on-plateau resting stretch, which
    pins the standard transition/resting split at 2400/2600 steps.
    """
    if amplitude_cap < 0.0:
        raise ValueError("amplitude cap must be non-negative")
    rng = np.random.default_rng(seed)
    amp1 = float(rng.uniform(-amplitude_cap, amplitude_cap))
    amp2 = float(rng.uniform(-amplitude_cap, amplitude_cap))
    rise1 = int(rng.integers(200, 1001))
    rise2 = int(rng.integers(max(2200, rise1 + 1300), 3001))
    fall1 = min(rise1 + 800, rise2 - 600)
    fall2 = rise2 + 800
    return _build_command((rise1, fall1, rise2, fall2), (amp1, amp2), amplitude_cap, steps)


def make_test_command(steps: int = EPISODE_STEPS) -> CommandSignal:
    """Deterministic -10 g / +10 g double step used by intermediate tests."""
    return _build_command((500, 1300, 2500, 3300), (-10.0, 10.0), 10.0, steps)


def _build_command(
    transitions: tuple[int, int, int, int],
    amplitudes: tuple[float, float],
    cap: float,
    steps: int,
) -> CommandSignal:
    rise1, fall1, rise2, fall2 = transitions
    samples = np.zeros(steps)
    samples[rise1:fall1] = amplitudes[0]
    samples[rise2:fall2] = amplitudes[1]
    return CommandSignal(samples=samples, transitions=transitions,
                         amplitudes=amplitudes, amplitude_cap=cap)


def shape(command: np.ndarray, cfg: ReferenceModelConfig, dt: float = DT) -> np.ndarray:
    """Filter a sampled command through the reference model (zero ICs).

    RK4 with the input held constant over each sample; shaped[t] is the
    model output after integrating sample t.  Linear with unit DC gain.
    """
    w2 = cfg.natural_frequency * cfg.natural_frequency
    tz = 2.0 * cfg.damping * cfg.natural_frequency
    out = np.empty(len(command))
    y = 0.0
    r = 0.0
    for t in range(len(command)):
        u = command[t]
        a1 = w2 * (u - y) - tz * r
        y2 = y + 0.5 * dt * r
        r2 = r + 0.5 * dt * a1
        a2 = w2 * (u - y2) - tz * r2
        y3 = y + 0.5 * dt * r2
        r3 = r + 0.5 * dt * a2
        a3 = w2 * (u - y3) - tz * r3
        y4 = y + dt * r3
        r4 = r + dt * a3
        a4 = w2 * (u - y4) - tz * r4
        y = y + dt / 6.0 * (r + 2.0 * r2 + 2.0 * r3 + r4)
        r = r + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[t] = y
    return out


def classify_periods(command: CommandSignal) -> PeriodMask:
    """Tag the 0.6 s window after each of the four transitions.

    Windows are unions of index intervals, so overlaps merge without
    double counting and windows truncate at the episode end.
    """
    if len(command.transitions) != 4:
        raise ValueError("command must carry exactly four transitions")
    steps = len(command.samples)
    tags = np.zeros(steps, dtype=bool)
    for idx in command.transitions:
        tags[idx:min(idx + TRANSITION_WINDOW_STEPS, steps)] = True
    return PeriodMask(transition=tags)
