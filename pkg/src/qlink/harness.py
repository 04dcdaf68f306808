"""Scenario builders and statistics over many delivery cycles.

A sweep runs ``cycles_per_point`` independent cycles at every grid point of
one scenario:

``alpha``
    open-ended cycles (run until herald) across bright-state populations;
    reproduces the fidelity/rate trade-off curve.
``storage``
    open-ended cycles at fixed alpha, each heralded state held for the
    grid duration before readout; fits the combined coherence decay.
``delivery``
    fixed-clock cycles across delivery rates with full heralded /
    no-herald / offline bookkeeping; the deterministic-delivery benchmark.
``phi``
    open-ended cycles read out in the swept basis cos(phi) X + sin(phi) Y
    at node A, reported separately per heralding detector.

Each cycle gets an RNG stream derived from (seed, point index, cycle
index), so results are bit-identical for any worker count; tomography
draws binomial/multinomial readout counts from the delivered state, and
the fidelity estimate comes from the three correlators with binomial error
propagation.

Correlators are reported in the detector-corrected frame: heralds on
detector 1 produce the odd Bell state, whose XX and YY correlations carry
the opposite sign, so those products are sign-flipped before pooling
(equivalent to the feed-forward basis flip a consumer of the link would
apply). The phi scenario reports raw per-detector rows instead.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .phase import PhaseProcess, StabilizerConfig
from .protocol import (
    CycleConfig,
    CycleOutcome,
    NodeConfig,
    OutcomeClass,
    StationConfig,
    apply_cycle_storage,
    run_cycle,
)
from .states import (
    BellKind,
    BellVariant,
    DensityMatrix,
    ReadoutBasis,
    fidelity,
    fidelity_from_correlators,
    wrap_angle,
)

__all__ = [
    "SweepScenario",
    "TomographySettings",
    "SweepSpec",
    "PointStats",
    "DecayFit",
    "RunStats",
    "EtaReport",
    "run_sweep",
    "stream_cycles",
    "classical_fallback_reanalysis",
    "phi_sweep",
    "PhiPoint",
    "PhiSweepTable",
    "eta_report",
    "DEFAULT_SEED",
]

DEFAULT_SEED = 1729

_BASIS_NAMES = ("XX", "YY", "ZZ")
_AXES = {"X": ReadoutBasis.X, "Y": ReadoutBasis.Y, "Z": ReadoutBasis.Z}


class SweepScenario(enum.Enum):
    ALPHA = "alpha"
    STORAGE = "storage"
    DELIVERY = "delivery"
    PHI = "phi"


@dataclass(frozen=True)
class TomographySettings:
    """Readout sampling configuration.

    ``shots`` outcomes are drawn per basis per delivered state.
    ``readout_error_a``/``_b`` flip each node's single-shot outcome with
    the given probability (off by default; reported correlators are then
    the raw, uncorrected ones).
    """

    bases: tuple = _BASIS_NAMES
    shots: int = 1
    readout_error_a: float = 0.0
    readout_error_b: float = 0.0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        bases = tuple(self.bases)
        for name in bases:
            if name not in _BASIS_NAMES:
                raise ValueError(f"unknown tomography basis {name!r}")
        if len(set(bases)) != len(bases):
            raise ValueError("duplicate tomography bases")
        for e in (self.readout_error_a, self.readout_error_b):
            if not 0.0 <= e <= 0.5:
                raise ValueError("readout error must be in [0, 1/2]")
        object.__setattr__(self, "bases", bases)


@dataclass(frozen=True)
class SweepSpec:
    """Complete, self-contained description of one sweep."""

    scenario: SweepScenario
    grid: tuple
    cycles_per_point: int = 1500
    tomography: TomographySettings = TomographySettings()
    seed: int = DEFAULT_SEED
    node_a: NodeConfig = NodeConfig(alpha=0.1)
    node_b: NodeConfig = NodeConfig(alpha=0.1, tau_coh=0.680)
    station: StationConfig = StationConfig()
    cycle: CycleConfig = CycleConfig()
    stabilizer: StabilizerConfig = StabilizerConfig()
    phase: PhaseProcess = PhaseProcess()

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        if not grid:
            raise ValueError("sweep grid must be non-empty")
        if self.cycles_per_point < 1:
            raise ValueError("cycles_per_point must be >= 1")
        if self.scenario is SweepScenario.ALPHA:
            if any(not 0.0 < g <= 1.0 for g in grid):
                raise ValueError("alpha grid values must be in (0, 1]")
        elif self.scenario is SweepScenario.STORAGE:
            if any(g < 0.0 for g in grid):
                raise ValueError("storage durations must be >= 0")
        elif self.scenario is SweepScenario.DELIVERY:
            if any(g <= 0.0 for g in grid):
                raise ValueError("delivery rates must be > 0")
            if any(1.0 / g <= self.cycle.t_attempt for g in grid):
                raise ValueError("delivery interval must exceed one attempt")
        object.__setattr__(self, "grid", grid)

    def param_name(self) -> str:
        return {
            SweepScenario.ALPHA: "alpha",
            SweepScenario.STORAGE: "storage_s",
            SweepScenario.DELIVERY: "delivery_rate_hz",
            SweepScenario.PHI: "phi_rad",
        }[self.scenario]


@dataclass
class PointStats:
    """Aggregated results of one grid point."""

    param: float
    n_cycles: int
    frac_heralded: float
    frac_no_herald: float
    frac_offline: float
    correlators: dict           # basis -> (estimate, standard error)
    herald_correlators: dict    # same, heralded cycles only
    fidelity: float             # pooled over every delivered state
    fidelity_se: float
    herald_fidelity: float      # heralded cycles only
    herald_fidelity_se: float
    mean_herald_time: float
    rate_hz: float              # heralds per second of generation time
    throughput_hz: float        # delivered states per simulated second


@dataclass
class DecayFit:
    tau_s: float
    tau_se_s: float
    amplitude: float
    floor: float


@dataclass
class RunStats:
    scenario: SweepScenario
    grid: tuple
    points: list
    seed: int
    decay_fit: Optional[DecayFit] = None
    reanalyzed_f_unent: Optional[float] = None


@dataclass
class EtaReport:
    r_ent_hz: float
    r_dec_hz: float
    warning: Optional[str] = None

    @property
    def eta(self) -> float:
        if self.r_dec_hz <= 0.0:
            return math.inf if self.r_ent_hz > 0 else 0.0
        return self.r_ent_hz / self.r_dec_hz


def _point_configs(spec: SweepSpec, param: float):
    """Specialize node and cycle configs for one grid point.

    Fixed-clock delivery cycles start cold and stabilize at the cycle
    start; the open-ended scenarios emulate a continuous phase-locked
    attempt stream, so their cycles join in the stabilized steady state
    and restabilize on the stabilizer cadence instead of paying the full
    stabilization once per herald.
    """
    node_a, node_b, cycle = spec.node_a, spec.node_b, spec.cycle
    if spec.scenario is SweepScenario.ALPHA:
        node_a = replace(node_a, alpha=param)
        node_b = replace(node_b, alpha=param)
    if spec.scenario is SweepScenario.DELIVERY:
        cycle = replace(cycle, delivery_interval=1.0 / param,
                        restabilize=False)
    else:
        cycle = replace(cycle, delivery_interval=math.inf, restabilize=True,
                        stabilize_at_start=False)
    return node_a, node_b, cycle


def _initial_phase(spec: SweepSpec, rng: np.random.Generator) -> PhaseProcess:
    if spec.scenario is SweepScenario.DELIVERY:
        return spec.phase.with_stationary_state(rng)
    return spec.phase.with_operating_state(rng)


def _target_sign(detector) -> int:
    """Correlator frame of the delivered state: -1 for detector-1 heralds."""
    return -1 if detector == 1 else 1


def _flip_matrix(e: float) -> np.ndarray:
    return np.array([[1.0 - e, e], [e, 1.0 - e]])


class _Tomograph:
    """Samples readout counts of delivered states for a fixed basis list."""

    def __init__(self, bases: Sequence, settings: TomographySettings):
        # bases: list of (name, ReadoutBasis A, ReadoutBasis B, flips_sign)
        self.names = [b[0] for b in bases]
        self.settings = settings
        self.ops = {}
        eye = np.eye(2, dtype=complex)
        for name, basis_a, basis_b, flips in bases:
            op_a, op_b = basis_a.operator(), basis_b.operator()
            self.ops[name] = (np.kron(op_a, op_b), np.kron(op_a, eye),
                              np.kron(eye, op_b), flips)
        self.exact_readout = (settings.readout_error_a == 0.0
                              and settings.readout_error_b == 0.0)
        self.t_a = _flip_matrix(settings.readout_error_a)
        self.t_b = _flip_matrix(settings.readout_error_b)

    def sample(self, state: DensityMatrix, sign: int,
               rng: np.random.Generator) -> dict:
        """Returns basis -> (same, diff) outcome counts, frame-corrected."""
        m = state.matrix
        shots = self.settings.shots
        out = {}
        for name, (ab, a_i, i_b, flips) in self.ops.items():
            c = float(np.einsum("ij,ji->", m, ab).real)
            if self.exact_readout:
                p_same = min(1.0, max(0.0, (1.0 + c) / 2.0))
                same = int(rng.binomial(shots, p_same))
            else:
                m_a = float(np.einsum("ij,ji->", m, a_i).real)
                m_b = float(np.einsum("ij,ji->", m, i_b).real)
                joint = np.empty((2, 2))
                for i, a in enumerate((1, -1)):
                    for j, b in enumerate((1, -1)):
                        joint[i, j] = (1 + a * m_a + b * m_b + a * b * c) / 4
                joint = self.t_a @ np.clip(joint, 0.0, 1.0) @ self.t_b.T
                probs = joint.reshape(-1)
                probs = probs / probs.sum()
                counts = rng.multinomial(shots, probs)
                same = int(counts[0] + counts[3])
            if flips and sign == -1:
                same = shots - same
            out[name] = (same, shots - same)
        return out


def _correlator_estimate(same: int, total: int):
    if total < 1:
        return math.nan, math.inf
    c = 2.0 * same / total - 1.0
    se = max(math.sqrt(max(1.0 - c * c, 0.0) / total), 1.0 / total)
    return c, se


class _PointAccumulator:
    def __init__(self, names):
        self.names = list(names)
        self.outcome_counts = {oc: 0 for oc in OutcomeClass}
        self.herald_time_sum = 0.0
        self.gen_time_sum = 0.0
        self.total_time_sum = 0.0
        self.pooled = {n: [0, 0] for n in self.names}   # same, total
        self.herald_only = {n: [0, 0] for n in self.names}

    def add(self, outcome: CycleOutcome, counts: dict, extra_time: float):
        self.outcome_counts[outcome.outcome] += 1
        timings = outcome.timings
        self.gen_time_sum += (timings["stabilization"]
                              + timings["state_checks"] + timings["attempts"])
        self.total_time_sum += sum(timings.values()) + extra_time
        heralded = outcome.outcome is OutcomeClass.HERALDED
        if heralded:
            self.herald_time_sum += outcome.herald_time
        for name, (same, diff) in counts.items():
            slot = self.pooled[name]
            slot[0] += same
            slot[1] += same + diff
            if heralded:
                slot = self.herald_only[name]
                slot[0] += same
                slot[1] += same + diff

    def finish(self, param: float) -> PointStats:
        n = sum(self.outcome_counts.values())
        n_herald = self.outcome_counts[OutcomeClass.HERALDED]
        correlators = {}
        herald_correlators = {}
        for name in self.names:
            correlators[name] = _correlator_estimate(*self.pooled[name])
            herald_correlators[name] = _correlator_estimate(
                *self.herald_only[name])
        fid, fid_se = _fidelity_estimate(self.pooled)
        hfid, hfid_se = _fidelity_estimate(self.herald_only)
        return PointStats(
            param=param,
            n_cycles=n,
            frac_heralded=n_herald / n,
            frac_no_herald=self.outcome_counts[OutcomeClass.NO_HERALD] / n,
            frac_offline=self.outcome_counts[OutcomeClass.OFFLINE] / n,
            correlators=correlators,
            herald_correlators=herald_correlators,
            fidelity=fid,
            fidelity_se=fid_se,
            herald_fidelity=hfid,
            herald_fidelity_se=hfid_se,
            mean_herald_time=(self.herald_time_sum / n_herald
                              if n_herald else math.nan),
            rate_hz=(n_herald / self.gen_time_sum
                     if self.gen_time_sum > 0 else 0.0),
            throughput_hz=(n / self.total_time_sum
                           if self.total_time_sum > 0 else 0.0),
        )


def _fidelity_estimate(counts: dict):
    """Bell fidelity from pooled XX/YY/ZZ counts in the corrected frame."""
    try:
        xx, xx_se = _correlator_estimate(*counts["XX"])
        yy, yy_se = _correlator_estimate(*counts["YY"])
        zz, zz_se = _correlator_estimate(*counts["ZZ"])
    except KeyError:
        return math.nan, math.inf
    if any(math.isnan(v) for v in (xx, yy, zz)):
        return math.nan, math.inf
    fid = fidelity_from_correlators(xx, yy, zz,
                                    BellKind(BellVariant.PSI_PLUS))
    se = math.sqrt(xx_se ** 2 + yy_se ** 2 + zz_se ** 2) / 4.0
    return fid, se


def _cycle_rng(seed: int, point_index: int, cycle_index: int):
    return np.random.default_rng(
        np.random.SeedSequence((seed, point_index, cycle_index)))


def _run_point_cycle(spec: SweepSpec, node_a, node_b, cycle, param,
                     point_index: int, cycle_index: int,
                     tomograph: _Tomograph):
    """One cycle plus readout; everything drawn from the cycle's stream."""
    rng = _cycle_rng(spec.seed, point_index, cycle_index)
    phase = _initial_phase(spec, rng)
    outcome = run_cycle(node_a, node_b, spec.station, cycle, phase, rng,
                        spec.stabilizer)
    state = outcome.delivered_state
    extra_time = 0.0
    if spec.scenario is SweepScenario.STORAGE \
            and outcome.outcome is OutcomeClass.HERALDED:
        state = apply_cycle_storage(state, param, node_a, node_b,
                                    cycle.decay_model)
        extra_time = param
    counts = tomograph.sample(state, _target_sign(outcome.detector), rng)
    return outcome, state, counts, extra_time


def _point_tomograph(spec: SweepSpec, param: float) -> _Tomograph:
    if spec.scenario is SweepScenario.PHI:
        swept = ReadoutBasis.rotated(param)
        bases = [("XX", swept, ReadoutBasis.X, True),
                 ("YY", swept, ReadoutBasis.Y, True)]
        # ZZ is phi-independent but kept so fidelity stays defined
        bases.append(("ZZ", ReadoutBasis.Z, ReadoutBasis.Z, False))
        return _Tomograph(bases, spec.tomography)
    bases = []
    for name in spec.tomography.bases:
        basis = _AXES[name[0]], _AXES[name[1]]
        bases.append((name, basis[0], basis[1], name in ("XX", "YY")))
    return _Tomograph(bases, spec.tomography)


def run_sweep(spec: SweepSpec, threads: int = 1) -> RunStats:
    """Execute the sweep; deterministic for a given spec regardless of
    thread count."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    points = []
    for point_index, param in enumerate(spec.grid):
        node_a, node_b, cycle = _point_configs(spec, param)
        tomograph = _point_tomograph(spec, param)
        acc = _PointAccumulator(tomograph.names)

        def job(cycle_index, _param=param, _na=node_a, _nb=node_b,
                _cy=cycle, _pi=point_index, _tg=tomograph):
            return _run_point_cycle(spec, _na, _nb, _cy, _param, _pi,
                                    cycle_index, _tg)

        indices = range(spec.cycles_per_point)
        if threads == 1:
            results = map(job, indices)
            for outcome, _state, counts, extra in results:
                acc.add(outcome, counts, extra)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                chunk = 2048
                for start in range(0, spec.cycles_per_point, chunk):
                    stop = min(start + chunk, spec.cycles_per_point)
                    for outcome, _state, counts, extra in pool.map(
                            job, range(start, stop)):
                        acc.add(outcome, counts, extra)
        points.append(acc.finish(param))
    stats = RunStats(scenario=spec.scenario, grid=spec.grid, points=points,
                     seed=spec.seed)
    if spec.scenario is SweepScenario.STORAGE and len(points) >= 3:
        stats.decay_fit = _fit_decay(points)
    return stats


def stream_cycles(spec: SweepSpec, point_index: int = 0,
                  include_states: bool = False):
    """Yield one record dict per cycle of a single grid point.

    Record fields: cycle, outcome, herald_time_s, detector, fidelity,
    timings (plus state as 32 interleaved reals when requested). The
    fidelity is the exact overlap of the delivered state with its
    detector's Bell target, not a sampled estimate.
    """
    if not 0 <= point_index < len(spec.grid):
        raise ValueError(f"point index {point_index} outside grid")
    param = spec.grid[point_index]
    node_a, node_b, cycle = _point_configs(spec, param)
    tomograph = _point_tomograph(spec, param)
    for cycle_index in range(spec.cycles_per_point):
        outcome, state, _counts, _extra = _run_point_cycle(
            spec, node_a, node_b, cycle, param, point_index, cycle_index,
            tomograph)
        kind = BellKind(BellVariant.PSI_MINUS if outcome.detector == 1
                        else BellVariant.PSI_PLUS)
        record = {
            "cycle": cycle_index,
            "outcome": outcome.outcome.value,
            "herald_time_s": outcome.herald_time,
            "detector": outcome.detector,
            "fidelity": fidelity(state, kind),
            "timings": outcome.timings,
        }
        if include_states:
            record["state"] = [float(x) for x in state.to_flat()]
        yield record


def _fit_decay(points) -> Optional[DecayFit]:
    """Single-exponential fit of the stored transverse coherence.

    The mean of the heralded XX and YY correlators isolates the decaying
    coherence (populations are storage-invariant), so the fit has no floor
    parameter and pins the time constant far better than fitting the
    fidelity itself.
    """
    t = np.array([p.param for p in points])
    c, se = [], []
    for p in points:
        xx, xx_se = p.herald_correlators.get("XX", (math.nan, math.inf))
        yy, yy_se = p.herald_correlators.get("YY", (math.nan, math.inf))
        c.append((xx + yy) / 2.0)
        se.append(max(math.hypot(xx_se, yy_se) / 2.0, 1e-6))
    c = np.array(c)
    se = np.array(se)
    if np.any(~np.isfinite(c)):
        return None

    def model(x, amp, tau):
        return amp * np.exp(-x / tau)

    try:
        popt, pcov = optimize.curve_fit(
            model, t, c, p0=(max(float(c.max()), 0.1), 0.2),
            sigma=se, absolute_sigma=True, maxfev=10000,
            bounds=([0.0, 1e-4], [1.5, 100.0]))
    except (RuntimeError, ValueError):
        return None
    tau_se = float(np.sqrt(pcov[1, 1])) if np.all(np.isfinite(pcov)) \
        else math.nan
    return DecayFit(tau_s=float(popt[1]), tau_se_s=tau_se,
                    amplitude=float(popt[0]), floor=0.0)


def classical_fallback_reanalysis(stats: RunStats, f_unent: float) -> RunStats:
    """Recompute delivered fidelity as if failed cycles delivered a state
    of fidelity ``f_unent``, leaving heralded contributions untouched."""
    if not 0.0 <= f_unent <= 0.5:
        raise ValueError(f"f_unent must be in [0, 1/2], got {f_unent}")
    new_points = []
    for p in stats.points:
        frac = p.frac_heralded
        frac_se = math.sqrt(max(frac * (1.0 - frac), 0.0) / p.n_cycles)
        if frac > 0.0:
            fid = frac * p.herald_fidelity + (1.0 - frac) * f_unent
            se = math.sqrt((frac * p.herald_fidelity_se) ** 2
                           + ((p.herald_fidelity - f_unent) * frac_se) ** 2)
        else:
            fid, se = f_unent, 0.0
        new_points.append(replace(p, fidelity=fid, fidelity_se=se))
    return RunStats(scenario=stats.scenario, grid=stats.grid,
                    points=new_points, seed=stats.seed,
                    decay_fit=stats.decay_fit, reanalyzed_f_unent=f_unent)


@dataclass
class PhiPoint:
    phi: float
    detector: int
    basis_b: str
    correlator: float
    se: float
    n_shots: int


@dataclass
class PhiSweepTable:
    points: list
    fits: dict  # (detector, basis_b) -> (amplitude, phase)

    def sinusoid(self, detector: int, basis_b: str):
        return self.fits[(detector, basis_b)]


def phi_sweep(alpha: float, phi_grid: Sequence[float],
              spec: SweepSpec) -> PhiSweepTable:
    """Swept-basis correlations, split by heralding detector.

    For each phi, heralded states are read out in
    (cos(phi) X + sin(phi) Y) (x) X and (x) Y; the fitted sinusoids of
    the two detector classes are pi out of phase.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    spec = replace(spec, scenario=SweepScenario.PHI,
                   grid=tuple(float(p) for p in phi_grid),
                   node_a=replace(spec.node_a, alpha=alpha),
                   node_b=replace(spec.node_b, alpha=alpha))
    rows = []
    # per (phi, detector, basis) counts, accumulated without frame correction
    for point_index, phi in enumerate(spec.grid):
        node_a, node_b, cycle = _point_configs(spec, phi)
        swept = ReadoutBasis.rotated(phi)
        tomograph = _Tomograph(
            [("X", swept, ReadoutBasis.X, False),
             ("Y", swept, ReadoutBasis.Y, False)], spec.tomography)
        counts = {(det, nm): [0, 0] for det in (0, 1) for nm in ("X", "Y")}
        for cycle_index in range(spec.cycles_per_point):
            outcome, _state, sampled, _e = _run_point_cycle(
                spec, node_a, node_b, cycle, phi, point_index, cycle_index,
                tomograph)
            if outcome.outcome is not OutcomeClass.HERALDED:
                continue
            for nm, (same, diff) in sampled.items():
                slot = counts[(outcome.detector, nm)]
                slot[0] += same
                slot[1] += same + diff
        for (det, nm), (same, total) in counts.items():
            c, se = _correlator_estimate(same, total)
            rows.append(PhiPoint(phi=phi, detector=det, basis_b=nm,
                                 correlator=c, se=se, n_shots=total))
    fits = {}
    for det in (0, 1):
        for nm in ("X", "Y"):
            sel = [r for r in rows if r.detector == det and r.basis_b == nm
                   and not math.isnan(r.correlator)]
            if len(sel) >= 3:
                phis = np.array([r.phi for r in sel])
                cs = np.array([r.correlator for r in sel])
                design = np.column_stack([np.cos(phis), np.sin(phis)])
                (a, b), *_ = np.linalg.lstsq(design, cs, rcond=None)
                fits[(det, nm)] = (float(math.hypot(a, b)),
                                   wrap_angle(math.atan2(b, a)))
    return PhiSweepTable(points=rows, fits=fits)


def eta_report(stats: RunStats) -> EtaReport:
    """Link efficiency from a storage sweep's herald rate and decay fit."""
    n_heralds = sum(round(p.frac_heralded * p.n_cycles) for p in stats.points)
    gen_time = sum(p.n_cycles * p.frac_heralded / p.rate_hz
                   for p in stats.points if p.rate_hz > 0)
    if n_heralds == 0 or gen_time <= 0.0:
        return EtaReport(r_ent_hz=0.0, r_dec_hz=math.nan,
                         warning="no heralds; link efficiency degenerate")
    r_ent = n_heralds / gen_time
    if stats.decay_fit is None or not math.isfinite(stats.decay_fit.tau_s) \
            or stats.decay_fit.tau_s <= 0:
        return EtaReport(r_ent_hz=r_ent, r_dec_hz=math.nan,
                         warning="decay fit unavailable or degenerate")
    return EtaReport(r_ent_hz=r_ent, r_dec_hz=1.0 / stats.decay_fit.tau_s)
