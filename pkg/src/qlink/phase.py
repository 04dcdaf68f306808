"""Optical phase drift and count-based stabilization feedback.

The two excitation/collection paths of the link form an interferometer, and
the heralded Bell state picks up its phase difference. Between feedback
events the phase drifts as an Ornstein-Uhlenbeck process (slow thermal and
acoustic wander) plus a deterministic sinusoid (mechanical oscillation of
the optics, too fast for the feedback to track). Stabilization sends bright
light through the same paths, estimates the slow phase from the two
detector count rates, and actuates a correction.

The arccos count estimator cannot tell +theta from -theta; the controller
keeps a one-bit memory of the correction direction and probes it each
stabilization: it applies the correction with the remembered sign,
re-measures, and if the magnitude grew it flips the sign and corrects
again from the fresh estimate. With a correct sign the second estimate is
a no-op check; with a wrong sign the pair of corrections still cancels the
phase exactly in the noiseless limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .states import wrap_angle

__all__ = [
    "PhaseProcess",
    "StabilizerConfig",
    "PhaseEstimateUnavailable",
    "StabilizationFailed",
    "evolve_phase",
    "sample_interferometer_counts",
    "estimate_phase",
    "stabilize",
    "coherence_factor",
    "stabilized_phase_trajectory",
]

TARGET_RESIDUAL_STD = 0.2496  # radians, 14.3 degrees


class PhaseEstimateUnavailable(Exception):
    """No photons were collected; the estimate carries no information."""


class StabilizationFailed(Exception):
    """Phase estimation failed repeatedly; the step is abandoned.

    Carries the process state as of the failure so callers can continue
    with the unstabilized phase.
    """

    def __init__(self, process: "PhaseProcess"):
        super().__init__("phase stabilization failed after 3 estimation attempts")
        self.process = process


@dataclass(frozen=True)
class PhaseProcess:
    """State of the interferometer phase.

    ``theta`` is the slow, controllable component: the OU drift plus any
    applied corrections, wrapped to (-pi, pi]. The mechanical oscillation
    rides on top of it; :meth:`current_phase` returns the sum, which is
    what a herald at this instant would imprint on the entangled state.

    The defaults are the shipped calibration for a 180 ms feedback period:
    oscillation amplitude 0.28 rad and diffusion 0.205 rad^2/s together
    hold the operating residual at ~14.3 degrees.
    """

    theta: float = 0.0
    sigma_ss: float = TARGET_RESIDUAL_STD   # target operating residual, rad
    tau_corr: float = 3.0                   # OU correlation time, s
    diffusion: float = 0.205                # OU diffusion, rad^2/s
    osc_amp: float = 0.28                   # mechanical oscillation, rad
    osc_freq: float = 87.0                  # Hz
    time: float = 0.0                       # process clock, s
    osc_phase0: float = 0.0                 # oscillator phase at time 0
    ctrl_sign: int = 1                      # dither sign memory, +1 or -1

    def __post_init__(self):
        if self.sigma_ss < 0.0 or self.diffusion < 0.0:
            raise ValueError("sigma_ss and diffusion must be >= 0")
        if self.tau_corr <= 0.0:
            raise ValueError("tau_corr must be > 0")
        if self.ctrl_sign not in (1, -1):
            raise ValueError("ctrl_sign must be +1 or -1")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def oscillation(self) -> float:
        return self.osc_amp * math.sin(
            2.0 * math.pi * self.osc_freq * self.time + self.osc_phase0)

    def current_phase(self) -> float:
        """Total phase right now: slow component plus oscillation."""
        return wrap_angle(self.theta + self.oscillation())

    def stationary_std(self) -> float:
        """Std of the free (uncontrolled) OU component."""
        return math.sqrt(self.diffusion * self.tau_corr / 2.0)

    def with_stationary_state(self, rng: np.random.Generator) -> "PhaseProcess":
        """Fresh copy with theta drawn from the free stationary ensemble
        and a random oscillator phase; used to start independent cycles."""
        theta = rng.normal(0.0, self.stationary_std()) if self.diffusion > 0 \
            else self.theta
        phase0 = rng.uniform(-math.pi, math.pi) if self.osc_amp > 0 else 0.0
        return replace(self, theta=wrap_angle(theta), time=0.0,
                       osc_phase0=phase0, ctrl_sign=1)

    def with_operating_state(self, rng: np.random.Generator) -> "PhaseProcess":
        """Fresh copy drawn from the stabilized steady state.

        Emulates joining a continuously phase-locked attempt stream at a
        random instant: the slow component carries whatever share of the
        target residual the oscillation does not."""
        var_slow = max(self.sigma_ss ** 2 - self.osc_amp ** 2 / 2.0, 0.0)
        theta = rng.normal(0.0, math.sqrt(var_slow)) if var_slow > 0 else 0.0
        phase0 = rng.uniform(-math.pi, math.pi) if self.osc_amp > 0 else 0.0
        return replace(self, theta=wrap_angle(theta), time=0.0,
                       osc_phase0=phase0, ctrl_sign=1)


def evolve_phase(process: PhaseProcess, dt: float,
                 rng: np.random.Generator) -> PhaseProcess:
    """Advance the phase by dt using the exact OU discretization.

    The slow component decays toward zero by e^{-dt/tau} and receives a
    Gaussian kick of variance (D tau / 2)(1 - e^{-2 dt/tau}); the
    oscillation advances deterministically with the process clock.
    """
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    if dt == 0.0:
        return process
    decay = math.exp(-dt / process.tau_corr)
    var = process.diffusion * process.tau_corr / 2.0 * (1.0 - decay ** 2)
    kick = rng.normal(0.0, math.sqrt(var)) if var > 0.0 else 0.0
    return replace(process,
                   theta=wrap_angle(process.theta * decay + kick),
                   time=process.time + dt)


@dataclass(frozen=True)
class StabilizerConfig:
    """Feedback configuration.

    ``photon_budget`` is the mean number of photons collected per phase
    estimate (the actual count is Poissonian); ``None`` selects the
    noiseless limit. ``duration`` is the simulated time one stabilization
    occupies, charged to the delivery cycle that runs it. gain = 0
    disables the controller.
    """

    interval: float = 0.180          # seconds between stabilizations
    photon_budget: int | None = 500
    gain: float = 1.0
    actuation_noise: float = 0.017   # rad std of each applied correction
    duration: float = 0.010          # seconds consumed per stabilization

    def __post_init__(self):
        if self.interval <= 0.0:
            raise ValueError("interval must be > 0")
        if self.photon_budget is not None and self.photon_budget < 1:
            raise ValueError("photon_budget must be >= 1")
        if not 0.0 <= self.gain < 2.0:
            raise ValueError("gain must be in [0, 2)")
        if self.actuation_noise < 0.0 or self.duration < 0.0:
            raise ValueError("actuation_noise and duration must be >= 0")


def sample_interferometer_counts(theta: float, budget: int,
                                 rng: np.random.Generator) -> tuple[int, int]:
    """Split a Poissonian photon batch over the two output ports.

    Port intensities are (1 + cos theta)/2 and (1 - cos theta)/2.
    """
    n = int(rng.poisson(budget))
    if n == 0:
        return 0, 0
    p0 = (1.0 + math.cos(theta)) / 2.0
    c0 = int(rng.binomial(n, p0))
    return c0, n - c0


def estimate_phase(counts_0: int, counts_1: int) -> float:
    """Phase magnitude estimate arccos((c0 - c1)/(c0 + c1)) in [0, pi]."""
    total = counts_0 + counts_1
    if total < 1:
        raise PhaseEstimateUnavailable("zero total counts")
    m = (counts_0 - counts_1) / total
    return math.acos(max(-1.0, min(1.0, m)))


def _measure_slow_phase(process: PhaseProcess, config: StabilizerConfig,
                        rng: np.random.Generator) -> float:
    """One phase-magnitude estimate of the slow component.

    The collection window is long compared to the mechanical oscillation,
    which therefore averages out of the port contrast; only the slow
    component is visible to the feedback. Retries fresh counts up to three
    times if no photons arrive.
    """
    if config.photon_budget is None:
        return abs(process.theta)
    for _ in range(3):
        c0, c1 = sample_interferometer_counts(process.theta,
                                              config.photon_budget, rng)
        try:
            return estimate_phase(c0, c1)
        except PhaseEstimateUnavailable:
            continue
    raise StabilizationFailed(process)


def stabilize(process: PhaseProcess, config: StabilizerConfig,
              rng: np.random.Generator) -> PhaseProcess:
    """One feedback event: estimate, correct, probe, re-correct if needed.

    Raises :class:`StabilizationFailed` (carrying the latest process state)
    if an estimate could not be obtained. Time is not advanced here; the
    caller charges :attr:`StabilizerConfig.duration` to its own clock.
    """
    est_1 = _measure_slow_phase(process, config, rng)
    if config.gain == 0.0:
        return process
    sign = process.ctrl_sign

    def apply(p: PhaseProcess, correction: float) -> PhaseProcess:
        if config.actuation_noise > 0.0:
            correction += rng.normal(0.0, config.actuation_noise)
        return replace(p, theta=wrap_angle(p.theta + correction))

    trial = apply(process, -config.gain * sign * est_1)
    try:
        est_2 = _measure_slow_phase(trial, config, rng)
    except StabilizationFailed:
        raise StabilizationFailed(trial) from None
    # Decide whether the remembered sign was right by comparing the probe
    # estimate against the two wrap-aware predictions: |1 - g| est_1 for a
    # correct sign, |wrap((1 + g) est_1)| for a stale one.
    overshoot = wrap_angle((1.0 + config.gain) * est_1)
    pred_right = abs(1.0 - config.gain) * est_1
    pred_wrong = abs(overshoot)
    if abs(est_2 - pred_wrong) < abs(est_2 - pred_right):
        # stale sign: the post-trial phase has a known sign, fix from est_2
        sign = -sign * (1 if overshoot >= 0.0 else -1)
        trial = apply(trial, -config.gain * sign * est_2)
    return replace(trial, ctrl_sign=sign)


def coherence_factor(sigma_theta: float) -> float:
    """Mean of e^{i theta} over a centered Gaussian phase: exp(-sigma^2/2).

    This is the factor by which residual phase spread scales the heralded
    coherence; at the 14.3 degree operating point it costs ~1.5% of
    fidelity at alpha = 0.05.
    """
    if sigma_theta < 0.0:
        raise ValueError("sigma must be >= 0")
    return math.exp(-sigma_theta ** 2 / 2.0)


def stabilized_phase_trajectory(process: PhaseProcess,
                                config: StabilizerConfig,
                                n_cycles: int,
                                rng: np.random.Generator,
                                samples_per_interval: int = 8):
    """Run stabilize/evolve cycles and record the operating phase.

    Each cycle spends ``config.duration`` stabilizing and then evolves
    freely for ``config.interval``, sampling the total phase at
    ``samples_per_interval`` evenly spaced instants (where heralds would
    occur). Returns (times, thetas, events) arrays; events are
    "stabilize", "stabilize_failed" or "sample".
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    times, thetas, events = [], [], []
    p = process
    t = 0.0
    dt = config.interval / samples_per_interval
    for _ in range(n_cycles):
        p = evolve_phase(p, config.duration, rng)
        t += config.duration
        try:
            p = stabilize(p, config, rng)
            events.append("stabilize")
        except StabilizationFailed as err:
            p = err.process
            events.append("stabilize_failed")
        times.append(t)
        thetas.append(p.current_phase())
        for _ in range(samples_per_interval):
            p = evolve_phase(p, dt, rng)
            t += dt
            times.append(t)
            thetas.append(p.current_phase())
            events.append("sample")
    return np.array(times), np.array(thetas), events


def operating_residual_std(process: PhaseProcess, config: StabilizerConfig,
                           n_cycles: int, rng: np.random.Generator,
                           burn_in: int = 100,
                           samples_per_interval: int = 8) -> float:
    """Std of the sampled operating phase after discarding burn-in cycles."""
    _, thetas, events = stabilized_phase_trajectory(
        process, config, n_cycles, rng, samples_per_interval)
    mask = np.array([e == "sample" for e in events])
    samples = thetas[mask][burn_in * samples_per_interval:]
    return float(np.std(samples))
