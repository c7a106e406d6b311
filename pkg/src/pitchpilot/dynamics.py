"""Pitch-plane surrogate flight dynamics.

Short-period rigid-body model of a tail-controlled airframe flying at a
fixed Mach number and altitude.  States are angle of attack ``alpha``
(rad), pitch rate ``q`` (rad/s) and the fin actuator pair
(``eta``, ``eta_rate``).  The aerodynamic coefficients are linear in
(alpha, q, eta):

    C_z = (1 + dCz) * (cz_alpha*alpha + cz_eta*eta)
    C_m = (1 + dCm) * (cm_alpha*alpha + cm_q*q*l/(2V) + cm_eta*eta)

with slopes scaled by a Prandtl-Glauert compressibility factor
1/sqrt(|M^2 - 1|) clamped near M = 1.  Normal acceleration is reported
in g units, positive in the lift direction:

    a_z = qbar * S * C_z / (m * g0)

Air density follows an exponential atmosphere and airspeed comes from
the configured Mach number through the standard-atmosphere speed of
sound.  Sign conventions: alpha positive nose-up, positive C_z rotates
the velocity vector toward the body axis (alpha_dot = q - force term).

Integration is fixed-step RK4.  The actuator and plant advance as two
RK4 substeps per sample: the actuator first (driven by the commanded
deflection), then (alpha, q) with the updated deflection held constant
over the step.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

G0 = 9.80665         # m/s^2, standard gravity (also the g unit for a_z)
GAMMA_AIR = 1.4      # ratio of specific heats
R_AIR = 287.05       # J/(kg K)
T0_ISA = 288.15      # K, sea-level standard temperature
LAPSE_ISA = 0.0065   # K/m, tropospheric lapse rate
T_TROPOPAUSE = 216.65  # K, temperature floor above 11 km


class ActuatorFaultError(RuntimeError):
    """Non-finite deflection command reached the actuator."""


class PlantDivergedError(RuntimeError):
    """Angle of attack left the configured validity cone."""


@dataclass(frozen=True)
class AeroConfig:
    """Airframe, aerodynamic and atmosphere parameters.

    Coefficient slopes are per radian at the incompressible reference;
    the Prandtl-Glauert factor is applied at the configured Mach number.
    """

    mass: float = 200.0            # kg
    pitch_inertia: float = 250.0   # kg m^2
    ref_area: float = 0.05         # m^2
    ref_length: float = 2.5        # m, moment reference
    cz_alpha: float = 30.0         # 1/rad, normal-force slope
    cz_eta: float = -1.5           # 1/rad, fin normal force (tail control)
    cm_alpha: float = -40.0        # 1/rad, static stability (< 0 stable)
    cm_q: float = -250.0           # 1/rad, pitch damping, must be < 0
    cm_eta: float = 45.0           # 1/rad, control moment slope
    mach: float = 2.0              # flight Mach number
    height: float = 5000.0         # m, altitude
    rho0: float = 1.225            # kg/m^3, sea-level density
    density_scale_height: float = 8500.0  # m, exponential atmosphere
    compressibility_clamp: float = 0.25   # lower bound on |M^2 - 1|
    alpha_limit: float = math.radians(40.0)  # rad, model validity cone

    def __post_init__(self) -> None:
        if self.mass <= 0.0 or self.pitch_inertia <= 0.0:
            raise ValueError("mass and pitch inertia must be positive")
        if self.ref_area <= 0.0 or self.ref_length <= 0.0:
            raise ValueError("reference area and length must be positive")
        if self.cm_q >= 0.0:
            raise ValueError("cm_q must be negative (pitch damping)")
        if self.compressibility_clamp <= 0.0:
            raise ValueError("compressibility clamp must be positive")
        if self.alpha_limit <= 0.0:
            raise ValueError("alpha validity cone must be positive")


@dataclass(frozen=True)
class ActuatorConfig:
    """Second-order fin servo: eta_ddot = wn^2 (cmd - eta) - 2 zeta wn eta_rate."""

    natural_frequency: float = 150.0  # rad/s
    damping: float = 0.7              # dimensionless
    deflection_limit: float = math.radians(30.0)  # rad, hard stop

    def __post_init__(self) -> None:
        if self.natural_frequency <= 0.0:
            raise ValueError("natural frequency must be positive")
        if self.damping <= 0.0:
            raise ValueError("damping ratio must be positive")
        if self.deflection_limit <= 0.0:
            raise ValueError("deflection limit must be positive")


@dataclass(frozen=True)
class PlantState:
    """Joint plant + actuator state at a time instant."""

    alpha: float = 0.0     # rad
    pitch_rate: float = 0.0  # rad/s
    eta: float = 0.0       # rad, achieved deflection
    eta_rate: float = 0.0  # rad/s
    time: float = 0.0      # s


@dataclass(frozen=True)
class NonNominalSpec:
    """Episode-constant deviation from the nominal environment.

    kind selects the channel: 'none', 'latency' (delayed command),
    'estimation' (perturbed Mach/height estimates in the observation)
    or 'parametric' (scaled aerodynamic coefficients).  ``bound`` is the
    half-width of the sampling domain: the maximum delay in ms for
    latency, the 3-sigma relative error otherwise.  Deltas are relative
    (0.03 means +3%).
    """

    kind: str = "none"
    bound: float = 0.0
    latency_ms: int = 0
    delta_mach: float = 0.0
    delta_height: float = 0.0
    delta_cz: float = 0.0
    delta_cm: float = 0.0
    estimation_affects_plant: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("none", "latency", "estimation", "parametric"):
            raise ValueError(f"unknown non-nominal kind {self.kind!r}")
        if self.latency_ms < 0:
            raise ValueError("latency must be a non-negative integer step count")
        if self.kind == "latency" and self.latency_ms > max(self.bound, 0.0):
            raise ValueError("latency draw exceeds its bound")
        for delta in (self.delta_mach, self.delta_height, self.delta_cz, self.delta_cm):
            if not math.isfinite(delta):
                raise ValueError("uncertainty deltas must be finite")

    @classmethod
    def nominal(cls) -> "NonNominalSpec":
        return cls()

    @classmethod
    def sample(cls, kind: str, bound: float, rng) -> "NonNominalSpec":
        """Draw one episode-constant realization, uniform over the domain.

        latency: integer ms in {0, ..., bound}; estimation/parametric:
        each component of the pair independently uniform on [-bound, bound].
        """
        if kind == "none":
            return cls.nominal()
        if kind == "latency":
            lag = int(rng.integers(0, int(round(bound)) + 1))
            return cls(kind=kind, bound=bound, latency_ms=lag)
        if kind == "estimation":
            dm, dh = rng.uniform(-bound, bound, size=2)
            return cls(kind=kind, bound=bound, delta_mach=float(dm), delta_height=float(dh))
        if kind == "parametric":
            dz, dm = rng.uniform(-bound, bound, size=2)
            return cls(kind=kind, bound=bound, delta_cz=float(dz), delta_cm=float(dm))
        raise ValueError(f"unknown non-nominal kind {kind!r}")

    @classmethod
    def fixed(cls, kind: str, value: float) -> "NonNominalSpec":
        """Deterministic point for sweeps; uncertainty pairs move jointly."""
        if kind == "none":
            return cls.nominal()
        if kind == "latency":
            lag = int(round(value))
            return cls(kind=kind, bound=float(lag), latency_ms=lag)
        if kind == "estimation":
            return cls(kind=kind, bound=abs(value), delta_mach=value, delta_height=value)
        if kind == "parametric":
            return cls(kind=kind, bound=abs(value), delta_cz=value, delta_cm=value)
        raise ValueError(f"unknown non-nominal kind {kind!r}")

    @property
    def sampled_value(self):
        if self.kind == "latency":
            return self.latency_ms
        if self.kind == "estimation":
            return (self.delta_mach, self.delta_height)
        if self.kind == "parametric":
            return (self.delta_cz, self.delta_cm)
        return None


def apply_uncertainty(nominal: float, delta: float) -> float:
    """Relative perturbation: (1 + delta) * nominal.  delta = 0 is exact identity."""
    return (1.0 + delta) * nominal


def fins_to_aero(d1: float, d2: float, d3: float, d4: float) -> tuple[float, float, float]:
    """Map four fin deflections to (roll, pitch, yaw) aero-equivalent controls.

    Averaging mix with a 1/4 factor; sums are grouped pairwise so the
    pitch round trip through aero_to_fins is exact in floating point.
    """
    for d in (d1, d2, d3, d4):
        if not math.isfinite(d):
            raise ValueError("fin deflections must be finite")
    xi = ((d1 + d2) + (d3 + d4)) / 4.0
    eta = ((d1 + d4) - (d2 + d3)) / 4.0
    zeta = ((d1 + d2) - (d3 + d4)) / 4.0
    return (xi, eta, zeta)


def aero_to_fins(eta: float) -> tuple[float, float, float, float]:
    """Pure-pitch allocation of an aero-equivalent deflection to the four fins."""
    if not math.isfinite(eta):
        raise ValueError("deflection must be finite")
    return (eta, -eta, -eta, eta)


def actuator_step(state: PlantState, eta_com: float, cfg: ActuatorConfig, dt: float) -> PlantState:
    """Advance the fin servo one RK4 step toward the commanded deflection.

    The position is clamped to +/- deflection_limit with the rate zeroed
    at the stop.
    """
    if not math.isfinite(eta_com):
        raise ActuatorFaultError(f"non-finite deflection command {eta_com!r}")
    w2 = cfg.natural_frequency * cfg.natural_frequency
    tz = 2.0 * cfg.damping * cfg.natural_frequency
    e, r = state.eta, state.eta_rate

    # RK4 stages for (eta, eta_rate); acceleration = w2*(cmd-eta) - tz*rate.
    a1 = w2 * (eta_com - e) - tz * r
    e2 = e + 0.5 * dt * r
    r2 = r + 0.5 * dt * a1
    a2 = w2 * (eta_com - e2) - tz * r2
    e3 = e + 0.5 * dt * r2
    r3 = r + 0.5 * dt * a2
    a3 = w2 * (eta_com - e3) - tz * r3
    e4 = e + dt * r3
    r4 = r + dt * a3
    a4 = w2 * (eta_com - e4) - tz * r4

    e_new = e + dt / 6.0 * (r + 2.0 * r2 + 2.0 * r3 + r4)
    r_new = r + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)

    lim = cfg.deflection_limit
    if e_new > lim:
        e_new, r_new = lim, 0.0
    elif e_new < -lim:
        e_new, r_new = -lim, 0.0
    return replace(state, eta=e_new, eta_rate=r_new)


def _speed_of_sound(height: float) -> float:
    temp = max(T0_ISA - LAPSE_ISA * height, T_TROPOPAUSE)
    return math.sqrt(GAMMA_AIR * R_AIR * temp)


def plant_step(
    state: PlantState,
    config: AeroConfig,
    spec: NonNominalSpec,
    dt: float,
) -> tuple[PlantState, float]:
    """Advance (alpha, q) one RK4 step and return the new measured a_z in g.

    The deflection is held at state.eta over the step.  Parametric
    uncertainty scales the full C_z / C_m coefficients; estimation
    uncertainty touches the plant only when the spec explicitly routes
    it there.
    """
    mach = config.mach
    height = config.height
    if spec.estimation_affects_plant:
        mach = apply_uncertainty(mach, spec.delta_mach)
        height = apply_uncertainty(height, spec.delta_height)

    speed = mach * _speed_of_sound(height)
    rho = config.rho0 * math.exp(-height / config.density_scale_height)
    qbar = 0.5 * rho * speed * speed
    pg = 1.0 / math.sqrt(max(abs(mach * mach - 1.0), config.compressibility_clamp))

    cz_a = config.cz_alpha * pg
    cz_e = config.cz_eta * pg
    cm_a = config.cm_alpha * pg
    cm_q = config.cm_q * pg
    cm_e = config.cm_eta * pg
    cz_scale = 1.0 + spec.delta_cz
    cm_scale = 1.0 + spec.delta_cm

    qs = qbar * config.ref_area
    force_coef = qs / (config.mass * speed)           # alpha_dot per unit C_z
    mom_coef = qs * config.ref_length / config.pitch_inertia
    qhat_coef = config.ref_length / (2.0 * speed)
    az_coef = qs / (config.mass * G0)                 # g per unit C_z

    eta = state.eta
    al, q = state.alpha, state.pitch_rate

    def derivs(a: float, qq: float) -> tuple[float, float]:
        cz = cz_scale * (cz_a * a + cz_e * eta)
        cm = cm_scale * (cm_a * a + cm_q * qq * qhat_coef + cm_e * eta)
        return qq - force_coef * cz, mom_coef * cm

    d1a, d1q = derivs(al, q)
    d2a, d2q = derivs(al + 0.5 * dt * d1a, q + 0.5 * dt * d1q)
    d3a, d3q = derivs(al + 0.5 * dt * d2a, q + 0.5 * dt * d2q)
    d4a, d4q = derivs(al + dt * d3a, q + dt * d3q)

    al_new = al + dt / 6.0 * (d1a + 2.0 * d2a + 2.0 * d3a + d4a)
    q_new = q + dt / 6.0 * (d1q + 2.0 * d2q + 2.0 * d3q + d4q)

    if abs(al_new) > config.alpha_limit:
        raise PlantDivergedError(
            f"alpha {al_new:.4f} rad outside validity cone +/-{config.alpha_limit:.4f}"
        )

    az = az_coef * cz_scale * (cz_a * al_new + cz_e * eta)
    new_state = replace(state, alpha=al_new, pitch_rate=q_new, time=state.time + dt)
    return new_state, az


class ActionDelay:
    """Pure transport delay on the commanded deflection.

    A FIFO queue pre-filled with zeros; each step pushes the new command
    and pops the one issued latency_ms steps ago.  Zero latency is an
    exact pass-through.
    """

    def __init__(self, latency_steps: int):
        if latency_steps < 0 or latency_steps != int(latency_steps):
            raise ValueError("latency must be a non-negative integer step count")
        self.latency_steps = int(latency_steps)
        self._queue = deque([0.0] * self.latency_steps)

    def step(self, eta_com: float) -> float:
        if self.latency_steps == 0:
            return eta_com
        self._queue.append(eta_com)
        return self._queue.popleft()
