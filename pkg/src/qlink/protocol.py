"""Seeded simulation of one entanglement-delivery cycle.

A cycle walks the experiment's state machine with exact time accounting:

1. optional optical-phase stabilization at the cycle start,
2. a node state check, repeated until both nodes pass (the check verifies
   charge state and optical resonance; it is modeled as a Bernoulli pass
   with a fixed duration),
3. a batch of entangling attempts (each attempt: spin reset, pulse,
   possible click at the midpoint station),
4. back to 2 until a single detector clicks or the delivery deadline
   arrives,
5. on a herald: the two-qubit state is constructed with the optical phase
   at herald time and decays in storage until delivery; with no herald the
   leftover (no-detection) state is delivered; if the very first check
   block fails ``max_cr_retries`` times in a row the nodes are offline for
   the cycle and a fully mixed state is delivered.

Attempts are i.i.d. within a cycle, so the engine never simulates them one
by one: it draws the index of the first heralding attempt from the exact
geometric law and fast-forwards the clock, which keeps a cycle at a handful
of RNG draws regardless of the attempt count. :func:`run_attempt` remains
the one-attempt reference sampler; its outcome probabilities are also
computed in closed form by :func:`attempt_outcome_probs` (36-branch
enumeration), and the two are cross-checked in the test suite.

Cycles are independent by construction (each gets its own RNG stream and a
fresh stationary phase draw), so a harness may run them on any number of
workers and merge by cycle index without changing a single bit of output.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import states
from .phase import PhaseProcess, StabilizerConfig, StabilizationFailed, \
    evolve_phase, stabilize
from .states import DensityMatrix, NoiseModel

__all__ = [
    "OutcomeClass",
    "HeraldCause",
    "HeraldEvent",
    "NodeConfig",
    "StationConfig",
    "CycleConfig",
    "CycleOutcome",
    "AttemptDistribution",
    "attempt_outcome_probs",
    "run_attempt",
    "sample_attempts",
    "run_cycle",
    "apply_cycle_storage",
    "HeraldTimeDistribution",
    "herald_time_distribution",
]


class OutcomeClass(enum.Enum):
    HERALDED = "Heralded"
    NO_HERALD = "NoHerald"
    OFFLINE = "Offline"


class HeraldCause(enum.Enum):
    PHOTON = "Photon"
    DARK_COUNT = "DarkCount"


@dataclass(frozen=True)
class HeraldEvent:
    detector: int
    cause: HeraldCause

    def __post_init__(self):
        if self.detector not in (0, 1):
            raise ValueError("detector must be 0 or 1")


@dataclass(frozen=True)
class NodeConfig:
    """Per-node parameters of the delivery cycle."""

    alpha: float
    tau_coh: float = 0.290          # coherence time under decoupling, s
    cr_pass_prob: float = 0.955     # probability one state check passes
    cr_check_duration: float = 2e-4  # seconds per check round
    init_duration: float = 0.0      # extra spin-reset time per attempt, s

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau_coh <= 0.0:
            raise ValueError("tau_coh must be > 0")
        if not 0.0 < self.cr_pass_prob <= 1.0:
            raise ValueError("cr_pass_prob must be in (0, 1]")
        if self.cr_check_duration < 0.0 or self.init_duration < 0.0:
            raise ValueError("durations must be >= 0")


@dataclass(frozen=True)
class StationConfig:
    """Midpoint heralding station parameters.

    ``visibility`` and ``p_dbl`` calibrate the coherence of the states the
    station heralds; together with the residual phase spread they are the
    coherence part of the link's error budget.
    """

    p_det: float = 4e-4
    p_dark: float = 7.8e-7
    visibility: float = 0.92
    p_dbl: float = 0.115

    def __post_init__(self):
        for name in ("p_det", "p_dark", "visibility", "p_dbl"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class CycleConfig:
    """Shape of one delivery cycle.

    ``delivery_interval`` may be ``math.inf`` for an open-ended cycle that
    runs until a herald (benchmarking mode); ``restabilize`` re-runs phase
    stabilization during such cycles on the stabilizer's interval cadence.
    ``f_unent_override`` replaces the no-herald delivered state with a
    diagonal state of the given Bell fidelity (the leftover states of the
    real hardware are worse than the simple no-detection model predicts).
    """

    delivery_interval: float = math.inf
    batch_size: int = 250
    t_attempt: float = 5.5e-6
    stabilize_at_start: bool = True
    max_cr_retries: int = 2
    restabilize: bool = False
    readout_overhead: float = 0.0
    decay_model: str = "dephasing"          # or "depolarizing"
    f_unent_override: Optional[float] = None
    exact_herald_weight: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.t_attempt <= 0.0:
            raise ValueError("t_attempt must be > 0")
        if self.delivery_interval <= self.t_attempt:
            raise ValueError("delivery_interval must exceed t_attempt")
        if self.max_cr_retries < 1:
            raise ValueError("max_cr_retries must be >= 1")
        if self.readout_overhead < 0.0:
            raise ValueError("readout_overhead must be >= 0")
        if math.isfinite(self.delivery_interval) \
                and self.readout_overhead >= self.delivery_interval:
            raise ValueError("readout_overhead must fit in the cycle")
        if self.decay_model not in ("dephasing", "depolarizing"):
            raise ValueError(f"unknown decay_model {self.decay_model!r}")
        if self.f_unent_override is not None \
                and not 0.0 <= self.f_unent_override <= 0.5:
            raise ValueError("f_unent_override must be in [0, 1/2]")


LEDGER_KEYS = ("stabilization", "state_checks", "attempts", "storage",
               "readout", "slack")


@dataclass
class CycleOutcome:
    """Result of one delivery cycle.

    ``timings`` maps each ledger key to the simulated seconds it consumed;
    for a finite delivery interval the entries sum to the interval exactly.
    """

    outcome: OutcomeClass
    delivered_state: DensityMatrix
    timings: dict
    herald_time: Optional[float] = None
    detector: Optional[int] = None
    herald_cause: Optional[HeraldCause] = None


@dataclass(frozen=True)
class AttemptDistribution:
    """Exact per-attempt outcome probabilities.

    ``herald`` maps (detector, cause) to its probability; a herald is a
    click on exactly one detector. Two-detector coincidences are discarded
    as failures (their probability is second order in alpha * p_det).
    """

    herald: dict
    p_two_clicks: float
    p_no_click: float

    @property
    def p_herald(self) -> float:
        return sum(self.herald.values())

    @property
    def p_photon_herald(self) -> float:
        return sum(p for (_, cause), p in self.herald.items()
                   if cause is HeraldCause.PHOTON)

    @property
    def p_dark_herald(self) -> float:
        return sum(p for (_, cause), p in self.herald.items()
                   if cause is HeraldCause.DARK_COUNT)


def attempt_outcome_probs(node_a: NodeConfig, node_b: NodeConfig,
                          station: StationConfig) -> AttemptDistribution:
    """Enumerate the attempt outcome tree exactly.

    Each node contributes a detected photon to detector 0 or 1 with
    probability alpha p_det / 2 each (beamsplitter routing is unbiased);
    each detector additionally fires on a dark count.
    """
    placements = []
    for node in (node_a, node_b):
        q = node.alpha * station.p_det
        placements.append([(None, 1.0 - q), (0, q / 2.0), (1, q / 2.0)])
    dark = [(False, 1.0 - station.p_dark), (True, station.p_dark)]

    herald = {(d, c): 0.0 for d in (0, 1) for c in HeraldCause}
    p_two = 0.0
    p_none = 0.0
    for pa, wa in placements[0]:
        for pb, wb in placements[1]:
            for d0, w0 in dark:
                for d1, w1 in dark:
                    w = wa * wb * w0 * w1
                    click0 = (pa == 0) or (pb == 0) or d0
                    click1 = (pa == 1) or (pb == 1) or d1
                    if click0 and click1:
                        p_two += w
                    elif not (click0 or click1):
                        p_none += w
                    else:
                        det = 0 if click0 else 1
                        photon = (pa == det) or (pb == det)
                        cause = HeraldCause.PHOTON if photon \
                            else HeraldCause.DARK_COUNT
                        herald[(det, cause)] += w
    return AttemptDistribution(herald=herald, p_two_clicks=p_two,
                               p_no_click=p_none)


def run_attempt(node_a: NodeConfig, node_b: NodeConfig,
                station: StationConfig,
                rng: np.random.Generator) -> Optional[HeraldEvent]:
    """Sample one entangling attempt; None when no single-click herald."""
    detectors = []
    for node in (node_a, node_b):
        q = node.alpha * station.p_det
        u = rng.random()
        if u < q / 2.0:
            detectors.append(0)
        elif u < q:
            detectors.append(1)
        else:
            detectors.append(None)
    dark0 = rng.random() < station.p_dark
    dark1 = rng.random() < station.p_dark
    click0 = (0 in detectors) or dark0
    click1 = (1 in detectors) or dark1
    if click0 == click1:
        return None
    det = 0 if click0 else 1
    cause = HeraldCause.PHOTON if det in detectors else HeraldCause.DARK_COUNT
    return HeraldEvent(detector=det, cause=cause)


def sample_attempts(node_a: NodeConfig, node_b: NodeConfig,
                    station: StationConfig, n: int,
                    rng: np.random.Generator,
                    chunk: int = 1_000_000) -> dict:
    """Vectorized Monte Carlo over n attempts.

    Returns counts keyed like :attr:`AttemptDistribution.herald`, plus
    "two_clicks" and "none". Draws per attempt match
    :func:`run_attempt` (one placement uniform per node, one dark uniform
    per detector).
    """
    counts = {(d, c): 0 for d in (0, 1) for c in HeraldCause}
    counts["two_clicks"] = 0
    counts["none"] = 0
    q_a = node_a.alpha * station.p_det
    q_b = node_b.alpha * station.p_det
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u_a = rng.random(m)
        u_b = rng.random(m)
        dark0 = rng.random(m) < station.p_dark
        dark1 = rng.random(m) < station.p_dark
        a0, a1 = u_a < q_a / 2, (u_a >= q_a / 2) & (u_a < q_a)
        b0, b1 = u_b < q_b / 2, (u_b >= q_b / 2) & (u_b < q_b)
        click0 = a0 | b0 | dark0
        click1 = a1 | b1 | dark1
        herald = click0 ^ click1
        photon0 = a0 | b0
        photon1 = a1 | b1
        h0 = herald & click0
        h1 = herald & click1
        counts[(0, HeraldCause.PHOTON)] += int((h0 & photon0).sum())
        counts[(0, HeraldCause.DARK_COUNT)] += int((h0 & ~photon0).sum())
        counts[(1, HeraldCause.PHOTON)] += int((h1 & photon1).sum())
        counts[(1, HeraldCause.DARK_COUNT)] += int((h1 & ~photon1).sum())
        counts["two_clicks"] += int((click0 & click1).sum())
        counts["none"] += int((~click0 & ~click1).sum())
        done += m
    return counts


def _sample_herald_position(rng: np.random.Generator, p: float,
                            n_attempts: int) -> Optional[int]:
    """Index (1-based) of the first herald among n i.i.d. attempts, or None.

    Exact inverse-CDF sampling of the truncated geometric law with a single
    uniform draw.
    """
    if p <= 0.0 or n_attempts < 1:
        return None
    if p >= 1.0:
        return 1
    log_q = math.log1p(-p)
    u = rng.random()
    p_any = -math.expm1(n_attempts * log_q)
    if u >= p_any:
        return None
    k = math.ceil(math.log1p(-u) / log_q)
    return min(max(int(k), 1), n_attempts)


def _fallback_state(alpha: float, p_det: float, f_target: float) -> DensityMatrix:
    """Diagonal state with the given Bell fidelity.

    The parallel-spin weights keep the bright/dark proportions of the
    no-detection state; used when a measured unentangled-state fidelity
    should override the microscopic model.
    """
    w_uu = (alpha * (1.0 - p_det)) ** 2
    w_dd = (1.0 - alpha) ** 2
    rest = 1.0 - 2.0 * f_target
    denom = w_uu + w_dd
    if denom <= 0.0:
        weights = [rest / 2.0, f_target, f_target, rest / 2.0]
    else:
        weights = [rest * w_uu / denom, f_target, f_target,
                   rest * w_dd / denom]
    return DensityMatrix.from_diagonal(weights)


class _CycleRunner:
    """Internal mutable state of one cycle execution."""

    def __init__(self, node_a, node_b, station, cycle, phase, rng, stabilizer):
        if node_a.alpha != node_b.alpha:
            raise ValueError(
                "delivered-state construction assumes equal bright-state "
                f"populations, got {node_a.alpha} and {node_b.alpha}")
        self.node_a = node_a
        self.node_b = node_b
        self.station = station
        self.cycle = cycle
        self.rng = rng
        self.stabilizer = stabilizer or StabilizerConfig()
        self.phase = phase
        self.t = 0.0
        self.ledger = {key: 0.0 for key in LEDGER_KEYS}
        self.dist = attempt_outcome_probs(node_a, node_b, station)
        self.p_joint = node_a.cr_pass_prob * node_b.cr_pass_prob
        self.check_duration = max(node_a.cr_check_duration,
                                  node_b.cr_check_duration)
        self.attempt_period = cycle.t_attempt + max(node_a.init_duration,
                                                    node_b.init_duration)
        self.deadline = cycle.delivery_interval

    # -- time-keeping helpers -------------------------------------------

    def _advance(self, dt: float, key: str) -> None:
        self.phase = evolve_phase(self.phase, dt, self.rng)
        self.t += dt
        self.ledger[key] += dt

    def _fits(self, dt: float) -> bool:
        return self.t + dt <= self.deadline

    def _stabilize(self) -> None:
        self._advance(self.stabilizer.duration, "stabilization")
        try:
            self.phase = stabilize(self.phase, self.stabilizer, self.rng)
        except StabilizationFailed as err:
            self.phase = err.process  # proceed with the unstabilized phase

    # -- outcome builders -------------------------------------------------

    def _finish(self, outcome, state, herald_time=None, detector=None,
                cause=None) -> CycleOutcome:
        if math.isfinite(self.deadline):
            self.ledger["slack"] += self.deadline - self.t
            self.t = self.deadline
        return CycleOutcome(outcome=outcome, delivered_state=state,
                            timings=dict(self.ledger),
                            herald_time=herald_time, detector=detector,
                            herald_cause=cause)

    def _offline(self) -> CycleOutcome:
        return self._finish(OutcomeClass.OFFLINE,
                            DensityMatrix.maximally_mixed())

    def _no_herald(self) -> CycleOutcome:
        cfg = self.cycle
        if cfg.f_unent_override is not None:
            state = _fallback_state(self.node_a.alpha, self.station.p_det,
                                    cfg.f_unent_override)
        else:
            state = states.no_detection_state(self.node_a.alpha,
                                              self.station.p_det)
        return self._finish(OutcomeClass.NO_HERALD, state)

    def _heralded(self, detector: int, cause: HeraldCause) -> CycleOutcome:
        cfg = self.cycle
        herald_time = self.t
        theta = self.phase.current_phase()
        if cause is HeraldCause.PHOTON:
            noise = NoiseModel(alpha=self.node_a.alpha,
                               p_det=self.station.p_det, p_dark=0.0,
                               visibility=self.station.visibility,
                               p_dbl=self.station.p_dbl, sigma_theta=0.0)
            state = states.heralded_state(noise, detector, delta_theta=theta,
                                          exact_weight=cfg.exact_herald_weight)
        else:
            state = states.no_detection_state(self.node_a.alpha,
                                              self.station.p_det)
        if math.isfinite(self.deadline):
            readout = min(cfg.readout_overhead, self.deadline - self.t)
            storage = self.deadline - self.t - readout
            state = self._store(state, storage)
            self.ledger["storage"] += storage
            self.ledger["readout"] += readout
            self.t = self.deadline
        return self._finish(OutcomeClass.HERALDED, state,
                            herald_time=herald_time, detector=detector,
                            cause=cause)

    def _store(self, state: DensityMatrix, duration: float) -> DensityMatrix:
        return apply_cycle_storage(state, duration, self.node_a, self.node_b,
                                   self.cycle.decay_model)

    # -- protocol steps ----------------------------------------------------

    def _first_check_block(self):
        """Initial state-check block; repeated failure sends the cycle
        offline (the nodes never came online, no attempt was made)."""
        fails = 0
        while True:
            if not self._fits(self.check_duration):
                return "deadline"
            self._advance(self.check_duration, "state_checks")
            if self.rng.random() < self.p_joint:
                return "pass"
            fails += 1
            if fails >= self.cycle.max_cr_retries:
                return "offline"

    def _check_block(self):
        """Later check blocks retry until they pass or the deadline hits."""
        while True:
            if not self._fits(self.check_duration):
                return "deadline"
            self._advance(self.check_duration, "state_checks")
            if self.rng.random() < self.p_joint:
                return "pass"

    def _sample_herald_event(self):
        u = self.rng.random() * self.dist.p_herald
        acc = 0.0
        for key, p in self.dist.herald.items():
            acc += p
            if u < acc:
                return key
        return (1, HeraldCause.DARK_COUNT)  # guard against fp edge

    # -- main loops --------------------------------------------------------

    def run_deadline(self) -> CycleOutcome:
        """Finite delivery interval: walk batches until herald or deadline."""
        cfg = self.cycle
        if cfg.stabilize_at_start and self._fits(self.stabilizer.duration):
            self._stabilize()
        next_stab = self.t + self.stabilizer.interval
        first = self._first_check_block()
        if first == "offline":
            return self._offline()
        if first == "deadline":
            return self._no_herald()
        block_done = True
        while True:
            if cfg.restabilize and self.t >= next_stab \
                    and self._fits(self.stabilizer.duration):
                self._stabilize()
                next_stab = self.t + self.stabilizer.interval
                block_done = False
            if not block_done:
                res = self._check_block()
                if res == "deadline":
                    return self._no_herald()
            block_done = False
            n_fit = min(cfg.batch_size,
                        int((self.deadline - self.t) / self.attempt_period))
            while n_fit > 0 and \
                    self.t + n_fit * self.attempt_period > self.deadline:
                n_fit -= 1
            if n_fit < 1:
                return self._no_herald()
            k = _sample_herald_position(self.rng, self.dist.p_herald, n_fit)
            if k is None:
                self._advance(n_fit * self.attempt_period, "attempts")
                continue
            self._advance(k * self.attempt_period, "attempts")
            detector, cause = self._sample_herald_event()
            return self._heralded(detector, cause)

    def run_open_ended(self) -> CycleOutcome:
        """No deadline: fast-forward whole stabilization periods at a time.

        Restabilization is scheduled every ``batches_per_stab`` batches,
        chosen so the expected cadence matches the stabilizer interval.
        """
        cfg = self.cycle
        if self.dist.p_herald <= 0.0:
            raise ValueError(
                "open-ended cycle would never herald (herald probability 0)")
        if cfg.stabilize_at_start:
            self._stabilize()
        first = self._first_check_block()
        if first == "offline":
            return self._offline()
        if cfg.restabilize:
            nominal_batch = self.attempt_period * cfg.batch_size \
                + self.check_duration / max(self.p_joint, 1e-12)
            batches_per_stab = max(1, round(self.stabilizer.interval
                                            / nominal_batch))
        else:
            batches_per_stab = 4096
        block_done = True
        while True:
            n_batches = batches_per_stab
            n_attempts = n_batches * cfg.batch_size
            k = _sample_herald_position(self.rng, self.dist.p_herald,
                                        n_attempts)
            if k is None:
                blocks = n_batches - (1 if block_done else 0)
                self._charge_blocks(blocks)
                self._advance(n_attempts * self.attempt_period, "attempts")
                if cfg.restabilize:
                    self._stabilize()
                block_done = False
                continue
            batch_idx = (k - 1) // cfg.batch_size
            blocks = batch_idx + 1 - (1 if block_done else 0)
            self._charge_blocks(blocks)
            self._advance(k * self.attempt_period, "attempts")
            detector, cause = self._sample_herald_event()
            return self._heralded(detector, cause)

    def _charge_blocks(self, n_blocks: int) -> None:
        """Charge the check rounds of n completed blocks in one draw."""
        if n_blocks < 1:
            return
        if self.p_joint >= 1.0:
            rounds = n_blocks
        else:
            rounds = n_blocks + int(self.rng.negative_binomial(n_blocks,
                                                               self.p_joint))
        self._advance(rounds * self.check_duration, "state_checks")


def apply_cycle_storage(state: DensityMatrix, duration: float,
                        node_a: NodeConfig, node_b: NodeConfig,
                        decay_model: str = "dephasing") -> DensityMatrix:
    """Storage decay under the configured model.

    Dephasing uses the per-node coherence times directly; the depolarizing
    alternative decays toward the fully mixed state at their combined rate
    1/tau_a + 1/tau_b.
    """
    if duration <= 0.0:
        return state
    if decay_model == "dephasing":
        return states.apply_storage_decay(state, duration, node_a.tau_coh,
                                          node_b.tau_coh)
    if decay_model == "depolarizing":
        rate = 1.0 / node_a.tau_coh + 1.0 / node_b.tau_coh
        return states.apply_depolarizing_decay(state, duration, rate)
    raise ValueError(f"unknown decay_model {decay_model!r}")


def run_cycle(node_a: NodeConfig, node_b: NodeConfig, station: StationConfig,
              cycle: CycleConfig, phase: PhaseProcess,
              rng: np.random.Generator,
              stabilizer: Optional[StabilizerConfig] = None) -> CycleOutcome:
    """Simulate one delivery cycle; all failure modes land in the outcome."""
    runner = _CycleRunner(node_a, node_b, station, cycle, phase, rng,
                          stabilizer)
    if math.isfinite(cycle.delivery_interval):
        return runner.run_deadline()
    return runner.run_open_ended()


@dataclass
class HeraldTimeDistribution:
    times: np.ndarray
    counts: np.ndarray
    bin_edges: np.ndarray
    fitted_rate_hz: float


def herald_time_distribution(node_a: NodeConfig, node_b: NodeConfig,
                             station: StationConfig, cycle: CycleConfig,
                             n_samples: int, rng: np.random.Generator,
                             stabilizer: Optional[StabilizerConfig] = None,
                             bins: int = 60) -> HeraldTimeDistribution:
    """Empirical herald-time histogram over open-ended cycles.

    Herald times are geometric in attempt number, hence approximately
    exponential in time when the per-attempt probability is small; the
    fitted rate is the exponential MLE 1 / mean.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    times = []
    phase = PhaseProcess()
    for i in range(n_samples):
        sub = np.random.default_rng(rng.integers(2 ** 63))
        outcome = run_cycle(node_a, node_b, station, cycle,
                            phase.with_stationary_state(sub), sub, stabilizer)
        if outcome.outcome is OutcomeClass.HERALDED:
            times.append(outcome.herald_time)
    arr = np.array(times)
    counts, edges = np.histogram(arr, bins=bins)
    rate = 1.0 / arr.mean() if arr.size else 0.0
    return HeraldTimeDistribution(times=arr, counts=counts, bin_edges=edges,
                                  fitted_rate_hz=rate)
