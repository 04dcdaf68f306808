"""Two-qubit states of a heralded entanglement link.

Everything in this module works in the fixed computational basis

    index 0: |up, up>      index 1: |up, down>
    index 2: |down, up>    index 3: |down, down>

where "up" is the optically bright spin state of a node. All density
matrices are plain 4x4 complex arrays wrapped in :class:`DensityMatrix`,
which enforces Hermiticity, unit trace and positivity on construction.

The central constructor is :func:`heralded_state`: the two-qubit state
conditioned on a single detector click at the midpoint station. Its error
budget is multiplicative on the |ud><du| coherence (photon
indistinguishability, double excitation, residual optical phase spread)
and additive on the populations (dark-count heralds mix in the
no-detection state).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BellVariant",
    "BellKind",
    "NoiseModel",
    "ReadoutBasis",
    "DensityMatrix",
    "bell_state",
    "heralded_state",
    "no_detection_state",
    "fidelity",
    "correlator",
    "fidelity_from_correlators",
    "apply_storage_decay",
    "apply_depolarizing_decay",
    "wrap_angle",
]

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
EIGENVALUE_TOL = 1e-10

# Single-qubit Pauli operators, used to build correlator observables.
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    if -math.pi < theta <= math.pi:
        return theta
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


class BellVariant(enum.Enum):
    PSI_PLUS = "PsiPlus"
    PSI_MINUS = "PsiMinus"

    @property
    def sign(self) -> int:
        return 1 if self is BellVariant.PSI_PLUS else -1


@dataclass(frozen=True)
class BellKind:
    """A |ud> +/- e^{i phase} |du> Bell state label.

    ``variant`` selects the sign, which in the heralding protocol is set by
    which midpoint detector clicked (detector 0 -> plus, detector 1 -> minus).
    ``phase`` is the optical phase difference imprinted on the coherence,
    normalized to (-pi, pi].
    """

    variant: BellVariant
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phase", wrap_angle(float(self.phase)))

    @property
    def sign(self) -> int:
        return self.variant.sign


@dataclass(frozen=True)
class NoiseModel:
    """Calibration of the heralded state.

    Parameters
    ----------
    alpha:
        Bright-state population prepared before each attempt, in [0, 1].
    p_det:
        End-to-end single-photon detection efficiency per node, in [0, 1].
    p_dark:
        Dark-count probability per detector per attempt window.
    visibility:
        Photon indistinguishability; multiplies the heralded coherence.
    p_dbl:
        Double-excitation dephasing probability; coherence is scaled by
        (1 - p_dbl).
    sigma_theta:
        Residual optical phase standard deviation in radians; coherence is
        scaled by exp(-sigma_theta^2 / 2).

    The default values are the shipped calibration: at alpha = 0.05 they
    cost ~3.8% (visibility), ~5.0% (double excitation), ~1.2% (phase
    spread) and ~3.0% (dark counts) of fidelity off the ideal 1 - alpha,
    which reproduces the measured fidelity/rate working points of the
    modeled link (~0.82 at alpha = 0.05, ~0.62 at alpha = 0.3).
    """

    alpha: float
    p_det: float = 4e-4
    p_dark: float = 7.8e-7
    visibility: float = 0.92
    p_dbl: float = 0.115
    sigma_theta: float = 0.2496  # 14.3 degrees

    def __post_init__(self):
        for name in ("alpha", "p_det", "p_dark", "visibility", "p_dbl"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.sigma_theta < 0.0:
            raise ValueError(f"sigma_theta must be >= 0, got {self.sigma_theta}")

    @classmethod
    def ideal(cls, alpha: float) -> "NoiseModel":
        """Noise-free model: only the bright-state admixture remains."""
        return cls(alpha=alpha, p_dark=0.0, visibility=1.0, p_dbl=0.0,
                   sigma_theta=0.0)

    def coherence_scale(self) -> float:
        """Total multiplicative factor applied to the heralded coherence."""
        return (self.visibility * (1.0 - self.p_dbl)
                * math.exp(-self.sigma_theta ** 2 / 2.0))

    def dark_herald_weight(self) -> float:
        """Fraction of single-detector heralds caused by a dark count.

        Conditions on a herald at one specific detector: dark heralds occur
        with probability p_dark * P(no photon detected), photon heralds with
        probability P(a photon lands on that detector).
        """
        q = self.alpha * self.p_det
        p_no_photon = (1.0 - q) ** 2
        p_photon_on_det = 1.0 - (1.0 - q / 2.0) ** 2
        denom = self.p_dark * p_no_photon + p_photon_on_det
        if denom <= 0.0:
            return 0.0
        return self.p_dark * p_no_photon / denom


@dataclass(frozen=True)
class ReadoutBasis:
    """Single-qubit readout axis: X, Y, Z, or cos(phi) X + sin(phi) Y."""

    axis: str = "X"
    angle: float = 0.0

    X = Y = Z = None  # type: ignore[assignment]  # filled in below

    def __post_init__(self):
        if self.axis not in ("X", "Y", "Z", "XY"):
            raise ValueError(f"unknown readout axis {self.axis!r}")
        object.__setattr__(self, "angle", wrap_angle(float(self.angle)))

    @classmethod
    def rotated(cls, phi: float) -> "ReadoutBasis":
        """Equatorial axis cos(phi) X + sin(phi) Y."""
        return cls(axis="XY", angle=phi)

    def operator(self) -> np.ndarray:
        if self.axis == "XY":
            return (math.cos(self.angle) * _PAULI["X"]
                    + math.sin(self.angle) * _PAULI["Y"])
        return _PAULI[self.axis]


ReadoutBasis.X = ReadoutBasis(axis="X")
ReadoutBasis.Y = ReadoutBasis(axis="Y")
ReadoutBasis.Z = ReadoutBasis(axis="Z")


class DensityMatrix:
    """Validated 4x4 two-qubit density matrix.

    Construction checks Hermiticity (to 1e-12), unit trace (to 1e-12) and
    positive semidefiniteness (smallest eigenvalue >= -1e-10). Instances
    are immutable; the backing array is write-protected.
    """

    __slots__ = ("_m",)

    def __init__(self, elements):
        m = np.array(elements, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        herm = np.abs(m - m.conj().T).max()
        if herm > HERMITICITY_TOL:
            raise ValueError(f"matrix is not Hermitian (deviation {herm:.3e})")
        tr = m.trace().real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace must be 1, got {tr!r}")
        lo = np.linalg.eigvalsh(m)[0]
        if lo < -EIGENVALUE_TOL:
            raise ValueError(f"matrix is not PSD (lowest eigenvalue {lo:.3e})")
        m.setflags(write=False)
        self._m = m

    @property
    def matrix(self) -> np.ndarray:
        """The (read-only) 4x4 complex array."""
        return self._m

    def __getitem__(self, idx):
        return self._m[idx]

    def __repr__(self):
        diag = ", ".join(f"{p:.4f}" for p in np.real(np.diag(self._m)))
        return f"DensityMatrix(populations=[{diag}])"

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return np.array_equal(self._m, other._m)

    def isclose(self, other: "DensityMatrix", tol: float = 1e-12) -> bool:
        return bool(np.abs(self._m - other._m).max() <= tol)

    @classmethod
    def from_diagonal(cls, weights) -> "DensityMatrix":
        w = np.asarray(weights, dtype=float)
        return cls(np.diag(w).astype(complex))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(np.eye(4, dtype=complex) / 4.0)

    def to_flat(self) -> np.ndarray:
        """Serialize to 32 reals: row-major, re/im interleaved."""
        out = np.empty(32, dtype=float)
        flat = self._m.reshape(-1)
        out[0::2] = flat.real
        out[1::2] = flat.imag
        return out

    @classmethod
    def from_flat(cls, values) -> "DensityMatrix":
        v = np.asarray(values, dtype=float)
        if v.shape != (32,):
            raise ValueError(f"expected 32 reals, got shape {v.shape}")
        return cls((v[0::2] + 1j * v[1::2]).reshape(4, 4))


def _bell_vector(kind: BellKind) -> np.ndarray:
    psi = np.zeros(4, dtype=complex)
    psi[1] = 1.0 / math.sqrt(2.0)
    psi[2] = kind.sign * np.exp(1j * kind.phase) / math.sqrt(2.0)
    return psi


def bell_state(kind: BellKind) -> DensityMatrix:
    """Pure-state density matrix of (|ud> +/- e^{i phase} |du>) / sqrt(2)."""
    psi = _bell_vector(kind)
    return DensityMatrix(np.outer(psi, psi.conj()))


def no_detection_state(alpha: float, p_det: float) -> DensityMatrix:
    """Two-qubit state conditioned on zero detector clicks in an attempt.

    Classical mixture over the four bright/dark branches, each weighted by
    its probability of yielding no detection; all coherences vanish because
    which-branch information is carried by the (undetected) photons.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if not 0.0 <= p_det <= 1.0:
        raise ValueError(f"p_det must be in [0, 1], got {p_det}")
    miss = 1.0 - p_det
    weights = np.array([
        (alpha * miss) ** 2,             # both bright, both photons lost
        alpha * miss * (1.0 - alpha),    # A bright and undetected, B dark
        (1.0 - alpha) * alpha * miss,    # A dark, B bright and undetected
        (1.0 - alpha) ** 2,              # both dark
    ])
    norm = weights.sum()
    if norm <= 0.0:
        raise ValueError(
            "no-detection outcome has zero probability for "
            f"alpha={alpha}, p_det={p_det}")
    return DensityMatrix.from_diagonal(weights / norm)


def heralded_state(noise: NoiseModel, detector: int, *,
                   delta_theta: float = 0.0,
                   exact_weight: bool = False) -> DensityMatrix:
    """State conditioned on a single click at the given midpoint detector.

    Construction: a (1 - w) |psi><psi| + w |uu><uu| mixture, where w is the
    probability that the other node was also bright but its photon was
    lost (w = alpha in the p_det << 1 limit; ``exact_weight`` selects the
    exact conditional alpha (1 - p_det) / (1 - alpha p_det)); the |ud><du|
    coherence is then scaled by visibility * (1 - p_dbl) *
    exp(-sigma_theta^2 / 2), and the no-detection state is mixed in with
    the dark-count herald fraction.

    ``delta_theta`` is the optical phase difference at herald time. The
    phase-spread factor and an explicit delta_theta both exist so that a
    Monte Carlo caller can sample the phase itself (sigma_theta = 0,
    delta_theta drawn per herald) while the analytic caller keeps
    delta_theta = 0 and lets sigma_theta average the spread.
    """
    if detector not in (0, 1):
        raise ValueError(f"detector must be 0 or 1, got {detector}")
    alpha = noise.alpha
    if exact_weight:
        w = alpha * (1.0 - noise.p_det) / (1.0 - alpha * noise.p_det)
    else:
        w = alpha
    variant = BellVariant.PSI_PLUS if detector == 0 else BellVariant.PSI_MINUS
    kind = BellKind(variant, phase=delta_theta)

    m = (1.0 - w) * bell_state(kind).matrix
    m[0, 0] += w

    scale = noise.visibility * (1.0 - noise.p_dbl) \
        * math.exp(-noise.sigma_theta ** 2 / 2.0)
    m[1, 2] *= scale
    m[2, 1] *= scale

    lam = noise.dark_herald_weight()
    if lam > 0.0:
        m = (1.0 - lam) * m \
            + lam * no_detection_state(alpha, noise.p_det).matrix
    return DensityMatrix(m)


def fidelity(rho: DensityMatrix, kind: BellKind) -> float:
    """Overlap <psi| rho |psi> with the pure Bell target."""
    psi = _bell_vector(kind)
    return float(np.real(psi.conj() @ rho.matrix @ psi))


def correlator(rho: DensityMatrix, basis_a: ReadoutBasis,
               basis_b: ReadoutBasis) -> float:
    """Two-node correlation trace(rho * sigma_A (x) sigma_B)."""
    obs = np.kron(basis_a.operator(), basis_b.operator())
    return float(np.real(np.trace(rho.matrix @ obs)))


def fidelity_from_correlators(xx: float, yy: float, zz: float,
                              kind: BellKind) -> float:
    """Bell fidelity from the three correlators.

    Uses the projector identity |psi+-><psi+-| =
    (II +/- XX +/- YY - ZZ) / 4, valid for the phase-0 Bell targets.
    """
    if abs(kind.phase) > 1e-12:
        raise ValueError("correlator identity requires a phase-0 Bell target")
    s = kind.sign
    return (1.0 + s * xx + s * yy - zz) / 4.0


def apply_storage_decay(rho: DensityMatrix, duration: float,
                        tau_a: float, tau_b: float) -> DensityMatrix:
    """Per-qubit pure dephasing in the Z basis during storage.

    Every coherence between differing states of qubit k is multiplied by
    exp(-duration / tau_k); populations are unchanged. The |ud><du|
    coherence of a stored Bell state therefore decays with the combined
    time constant 1 / (1/tau_a + 1/tau_b).
    """
    if duration < 0.0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    if tau_a <= 0.0 or tau_b <= 0.0:
        raise ValueError("coherence times must be > 0")
    fa = math.exp(-duration / tau_a)
    fb = math.exp(-duration / tau_b)
    # bit 1 of the basis index is qubit A, bit 0 is qubit B
    a_bits = np.array([0, 0, 1, 1])
    b_bits = np.array([0, 1, 0, 1])
    factors = np.where(a_bits[:, None] != a_bits[None, :], fa, 1.0) \
        * np.where(b_bits[:, None] != b_bits[None, :], fb, 1.0)
    return DensityMatrix(rho.matrix * factors)


def apply_depolarizing_decay(rho: DensityMatrix, duration: float,
                             rate: float) -> DensityMatrix:
    """Exponential decay toward the maximally mixed state.

    Alternative storage-decay channel (the microscopic decay model of the
    hardware is not pinned down): rho -> e^{-rate t} rho +
    (1 - e^{-rate t}) I/4, which sends any Bell fidelity to 1/4 at the
    given rate.
    """
    if duration < 0.0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    if rate < 0.0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    f = math.exp(-rate * duration)
    return DensityMatrix(f * rho.matrix + (1.0 - f) * np.eye(4) / 4.0)
