"""Pulse-level physical model: phase encoding, interference, detection.

A block of L weak coherent pulses carries L-1 key bits on the phase
differences between adjacent pulses. Data-basis differentials are
{0, pi}; check-basis differentials add a pi/2 ramp, giving {pi/2, 3pi/2}.
The whole block shares one uniformly random global phase, so nothing is
encoded across block boundaries.

The receiver's delay interferometer maps a phase difference delta and a
measurement phase Phi to detector probabilities cos^2((delta - Phi)/2)
and sin^2((delta - Phi)/2). Because each pulse is a coherent state, the
two output ports see independent Poisson fields; per-detector click
probabilities compose the split signal with dark counts, and the
baseline optical error probability enters as a visibility skew that
routes a fraction e_mis of the signal to the wrong port.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import SystemParams

TWO_PI = 2.0 * math.pi


class Basis(enum.IntEnum):
    Z = 0  # data basis, differentials {0, pi}
    X = 1  # check basis, differentials {pi/2, 3pi/2}


class ClickCause(enum.Enum):
    SIGNAL = "signal"
    DARK = "dark"
    DOUBLE = "double-click-coin-toss"


@dataclass(frozen=True)
class PulseBlock:
    """One L-pulse block: basis, bit values, and the resulting phases."""

    basis: Basis
    bits: tuple[int, ...]
    global_phase: float
    phases: tuple[float, ...]

    @property
    def length(self) -> int:
        return len(self.phases)


@dataclass(frozen=True)
class DetectionEvent:
    """A single kept click: where it happened and which detector fired.

    ``cause`` is diagnostic metadata for the simulator; it is never
    announced over the classical channel.
    """

    block_index: int
    slot_index: int
    detector: int
    cause: ClickCause


def encode_block(bits, basis: Basis, global_phase: float) -> PulseBlock:
    """Build the per-pulse phases for a block.

    Phases accumulate: each bit advances the phase by bit*pi, plus a
    pi/2 offset per slot in the check basis. The first pulse carries the
    global phase. Deterministic given its inputs.
    """
    bits = tuple(int(b) for b in bits)
    if not bits:
        raise ValueError("a block encodes at least one bit (L >= 2)")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    if not 0.0 <= global_phase < TWO_PI:
        raise ValueError(f"global phase must be in [0, 2pi), got {global_phase}")
    offset = math.pi / 2.0 if basis == Basis.X else 0.0
    phases = [global_phase]
    for b in bits:
        phases.append((phases[-1] + b * math.pi + offset) % TWO_PI)
    return PulseBlock(basis=Basis(basis), bits=bits, global_phase=global_phase,
                      phases=tuple(phases))


def decode_block_bits(block: PulseBlock) -> tuple[int, ...]:
    """Recover the bits from consecutive phase differences (round-trip)."""
    offset = math.pi / 2.0 if block.basis == Basis.X else 0.0
    bits = []
    for prev, cur in zip(block.phases, block.phases[1:]):
        delta = (cur - prev - offset) % TWO_PI
        bits.append(int(round(delta / math.pi)) % 2)
    return tuple(bits)


def mzi_click_probabilities(delta_phi: float, bob_phase: float) -> tuple[float, float]:
    """Detector probabilities for one photon reaching the interfering slot.

    (cos^2((delta-Phi)/2), sin^2((delta-Phi)/2)); the pair sums to 1
    exactly for all angles.
    """
    half = (delta_phi - bob_phase) / 2.0
    p0 = math.cos(half) ** 2
    return p0, 1.0 - p0


def interference_intensity(delta_phi: float) -> float:
    """Normalized constructive-port intensity, cos^2(delta/2)."""
    return math.cos(delta_phi / 2.0) ** 2


def detector_click_probabilities(c0, params: SystemParams):
    """Per-slot, per-detector click probabilities.

    ``c0`` is the ideal constructive-port fraction (scalar or array).
    The visibility skew sends e_mis of the signal to the opposite port,
    then each port sees an independent weak coherent field of mean
    mu*t*c plus a dark-count chance of dark_rate/n_rep. Returns
    (p_det0, p_det1).
    """
    c0 = np.asarray(c0, dtype=float)
    c0_eff = c0 * (1.0 - 2.0 * params.e_mis) + params.e_mis
    mean = params.mu * params.transmittance()
    p_sig0 = -np.expm1(-mean * c0_eff)
    p_sig1 = -np.expm1(-mean * (1.0 - c0_eff))
    d = params.dark_rate / params.n_rep
    p0 = p_sig0 + d - p_sig0 * d
    p1 = p_sig1 + d - p_sig1 * d
    return p0, p1


def detect_slot(
    delta_phi: float,
    bob_phase: float,
    params: SystemParams,
    rng: np.random.Generator,
) -> Optional[tuple[int, ClickCause]]:
    """Sample one slot: returns (detector, cause) or None for no click.

    Signal and dark clicks are drawn independently per detector; a
    simultaneous click on both detectors is assigned by a fair coin.
    Four uniforms are always consumed so the draw pattern per slot is
    fixed.
    """
    c0, _ = mzi_click_probabilities(delta_phi, bob_phase)
    p_sig = params.mu * params.transmittance()
    c0_eff = c0 * (1.0 - 2.0 * params.e_mis) + params.e_mis
    ps0 = -math.expm1(-p_sig * c0_eff)
    ps1 = -math.expm1(-p_sig * (1.0 - c0_eff))
    d = params.dark_rate / params.n_rep
    u = rng.random(4)
    sig0, dark0 = u[0] < ps0, u[1] < d
    sig1, dark1 = u[2] < ps1, u[3] < d
    click0 = sig0 or dark0
    click1 = sig1 or dark1
    if not (click0 or click1):
        return None
    if click0 and click1:
        detector = int(rng.random() < 0.5)
        return detector, ClickCause.DOUBLE
    detector = 0 if click0 else 1
    cause = ClickCause.SIGNAL if (sig0 if click0 else sig1) else ClickCause.DARK
    return detector, cause


def simulate_slot_clicks(
    c0,
    params: SystemParams,
    rng: np.random.Generator,
):
    """Vectorized detection over an array of constructive-port fractions.

    Returns boolean arrays (click0, click1) and the detector index array
    chosen when both fire (coin toss). One uniform per detector per slot
    plus one coin per slot are always drawn, keeping the stream layout
    independent of the outcomes.
    """
    p0, p1 = detector_click_probabilities(c0, params)
    click0 = rng.random(p0.shape) < p0
    click1 = rng.random(p1.shape) < p1
    coin = rng.random(p0.shape) < 0.5
    return click0, click1, coin
