"""Alice/Bob session logic for the DQPS protocol.

One session: Alice prepares ``n_blocks`` blocks, choosing the data basis
with probability p0, fair bits per slot, and a fresh uniform global
phase per block. Bob measures every block in a per-block random basis,
keeps only the first click of each block (simultaneous clicks on both
detectors are assigned by coin toss), and announces where he detected.
Both sides then reveal bases, keep the matched blocks, disclose a
configurable fraction of the sifted key to estimate the QBER, and
discard the disclosed bits.

The same simulation core backs the in-process runner and the networked
session: every stochastic choice comes from one of three generator
streams (Alice, Bob, sampling) derived from the session seed, so a run
is reproducible bit-for-bit and the classical wire adds nothing to the
outcome.

Error correction and privacy amplification are accounted analytically
through the key-rate formulas; no cascade or hashing runs over the bit
strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from . import keyrate
from .keyrate import KeyRateBreakdown, block_gain, secure_key_rate
from .params import SystemParams, validate
from .photonics import (
    Basis,
    ClickCause,
    DetectionEvent,
    PulseBlock,
    encode_block,
    detect_slot,
    simulate_slot_clicks,
)

TWO_PI = 2.0 * math.pi

# Target slot count per vectorized chunk; the chunk length in blocks is
# a pure function of L so the random stream layout never depends on
# anything but (n_blocks, L).
CHUNK_SLOTS = 1 << 22

DEFAULT_SAMPLE_FRACTION = 0.1


class SessionError(RuntimeError):
    """A session-level contract violation (malformed announcement etc.)."""


def derive_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Three independent generator streams for one session seed.

    Order: (alice, bob, sampling). Both endpoints of a networked session
    derive the same三 streams, which is how the quantum transmission is
    shared without a quantum wire.
    """
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)  # type: ignore[return-value]


@dataclass
class AliceRecord:
    """Transmitter-side truth for a session: bases, bits, global phases."""

    params: SystemParams
    basis: np.ndarray          # (n,) uint8, Basis values
    bits: np.ndarray           # (n, L-1) uint8
    global_phases: np.ndarray  # (n,) float64 in [0, 2pi)

    @property
    def n_blocks(self) -> int:
        return int(self.basis.shape[0])

    def iter_blocks(self) -> Iterator[PulseBlock]:
        """Lazily materialize the pulse blocks this record describes."""
        for i in range(self.n_blocks):
            yield encode_block(self.bits[i], Basis(int(self.basis[i])),
                               float(self.global_phases[i]))


@dataclass
class BobRecord:
    """Receiver-side outcome: basis choices and at most one kept click per block."""

    phi: np.ndarray        # (n,) uint8: 0 -> Phi=0 (data), 1 -> Phi=pi/2 (check)
    has_kept: np.ndarray   # (n,) bool
    kept_slot: np.ndarray  # (n,) int32, -1 where no click
    kept_det: np.ndarray   # (n,) uint8
    kept_cause: Optional[np.ndarray] = None  # (n,) uint8 cause codes, object path only

    _CAUSES = (ClickCause.SIGNAL, ClickCause.DARK, ClickCause.DOUBLE)

    @property
    def n_blocks(self) -> int:
        return int(self.phi.shape[0])

    def events(self) -> Iterator[DetectionEvent]:
        for i in np.flatnonzero(self.has_kept):
            cause = (
                self._CAUSES[int(self.kept_cause[i])]
                if self.kept_cause is not None
                else ClickCause.SIGNAL
            )
            yield DetectionEvent(int(i), int(self.kept_slot[i]), int(self.kept_det[i]), cause)


def alice_prepare(params: SystemParams, n_blocks: int, rng: np.random.Generator) -> AliceRecord:
    """Draw a full transmission: bases ~ Bernoulli(p0), fair bits, uniform phases."""
    params = validate(params)
    if n_blocks < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    n, slots = n_blocks, params.L - 1
    basis = (rng.random(n) >= params.p0).astype(np.uint8)  # 0 = data with prob p0
    bits = rng.integers(0, 2, size=(n, slots), dtype=np.uint8)
    phases = rng.random(n) * TWO_PI
    return AliceRecord(params=params, basis=basis, bits=bits, global_phases=phases)


def _constructive_fraction(bits: np.ndarray, basis_match: np.ndarray) -> np.ndarray:
    """Ideal detector-0 fraction per slot.

    Matched bases interfere deterministically (bit 0 -> detector 0);
    mismatched bases leave a quadrature angle and split 50/50.
    """
    return np.where(basis_match[:, None], 1.0 - bits.astype(float), 0.5)


def measure_blocks(alice: AliceRecord, params: SystemParams, rng: np.random.Generator) -> BobRecord:
    """Vectorized receiver: per-block basis, per-slot detection, first click kept.

    Blocks are processed in fixed-size chunks so sessions of millions of
    blocks stream through bounded memory; the chunk layout depends only
    on L, keeping the random stream reproducible.
    """
    n, slots = alice.bits.shape
    phi = rng.integers(0, 2, size=n, dtype=np.uint8)
    has = np.zeros(n, dtype=bool)
    kept_slot = np.full(n, -1, dtype=np.int32)
    kept_det = np.zeros(n, dtype=np.uint8)

    chunk = max(1, CHUNK_SLOTS // slots)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        match = alice.basis[start:stop] == phi[start:stop]
        c0 = _constructive_fraction(alice.bits[start:stop], match)
        click0, click1, coin = simulate_slot_clicks(c0, params, rng)
        any_click = click0 | click1
        got = any_click.any(axis=1)
        first = any_click.argmax(axis=1)
        rows = np.arange(stop - start)
        d0 = click0[rows, first]
        d1 = click1[rows, first]
        det = np.where(d0 & d1, coin[rows, first], d1).astype(np.uint8)
        has[start:stop] = got
        kept_slot[start:stop] = np.where(got, first, -1).astype(np.int32)
        kept_det[start:stop] = np.where(got, det, 0).astype(np.uint8)
    return BobRecord(phi=phi, has_kept=has, kept_slot=kept_slot, kept_det=kept_det)


_CAUSE_CODE = {ClickCause.SIGNAL: 0, ClickCause.DARK: 1, ClickCause.DOUBLE: 2}


def bob_measure(
    blocks: Iterable[PulseBlock],
    params: SystemParams,
    rng: np.random.Generator,
) -> BobRecord:
    """Per-block receiver over explicit pulse blocks.

    Each block gets its own child generator (spawned up front), so
    permuting block order permutes, but never alters, per-block
    outcomes. Every slot is sampled even after the first click; later
    clicks are discarded.
    """
    blocks = list(blocks)
    n = len(blocks)
    phi = rng.integers(0, 2, size=n, dtype=np.uint8)
    streams = rng.spawn(n)
    has = np.zeros(n, dtype=bool)
    kept_slot = np.full(n, -1, dtype=np.int32)
    kept_det = np.zeros(n, dtype=np.uint8)
    kept_cause = np.zeros(n, dtype=np.uint8)
    for i, block in enumerate(blocks):
        result = measure_one_block(block, int(phi[i]), params, streams[i])
        if result is not None:
            slot, det, cause = result
            has[i] = True
            kept_slot[i] = slot
            kept_det[i] = det
            kept_cause[i] = _CAUSE_CODE[cause]
    return BobRecord(phi=phi, has_kept=has, kept_slot=kept_slot, kept_det=kept_det,
                     kept_cause=kept_cause)


def measure_one_block(
    block: PulseBlock,
    phi_index: int,
    params: SystemParams,
    rng: np.random.Generator,
) -> Optional[tuple[int, int, ClickCause]]:
    """Measure every slot of one block; return the first kept click."""
    bob_phase = phi_index * math.pi / 2.0
    kept: Optional[tuple[int, int, ClickCause]] = None
    for slot, (prev, cur) in enumerate(zip(block.phases, block.phases[1:])):
        outcome = detect_slot((cur - prev) % TWO_PI, bob_phase, params, rng)
        if outcome is not None and kept is None:
            kept = (slot, outcome[0], outcome[1])
    return kept


@dataclass
class SiftResult:
    """Matched-block selection and the two sifted keys (when known).

    ``order`` is canonical: ascending block index. Sample indices and
    key comparisons always refer to positions in this order.
    """

    matched_blocks: np.ndarray  # (k,) int64 block indices
    slots: np.ndarray           # (k,) int32 announced slot per matched block
    basis: np.ndarray           # (k,) uint8 shared basis of each matched block
    alice_key: Optional[np.ndarray]  # (k,) uint8, None on the receiver side
    bob_key: Optional[np.ndarray]    # (k,) uint8, None on the transmitter side

    @property
    def size(self) -> int:
        return int(self.matched_blocks.shape[0])


def sift_from_announcements(
    alice_basis: np.ndarray,
    bob_phi: np.ndarray,
    has_kept: np.ndarray,
    kept_slot: np.ndarray,
    alice_bits: Optional[np.ndarray] = None,
    kept_det: Optional[np.ndarray] = None,
) -> SiftResult:
    """Canonical sift: matched basis AND a kept detection.

    Either side calls this with whatever it knows; keys are filled only
    where the underlying bits are available.
    """
    matched = np.flatnonzero(has_kept & (alice_basis == bob_phi))
    slots = kept_slot[matched].astype(np.int32)
    basis = alice_basis[matched].astype(np.uint8)
    alice_key = None
    if alice_bits is not None:
        alice_key = alice_bits[matched, slots].astype(np.uint8)
    bob_key = None
    if kept_det is not None:
        bob_key = kept_det[matched].astype(np.uint8)
    return SiftResult(matched, slots, basis, alice_key, bob_key)


def sift(alice: AliceRecord, bob: BobRecord) -> SiftResult:
    """Two-sided sift for in-process sessions."""
    if bob.n_blocks != alice.n_blocks:
        raise SessionError("announcement covers a different number of blocks")
    return sift_from_announcements(
        alice.basis, bob.phi, bob.has_kept, bob.kept_slot, alice.bits, bob.kept_det
    )


def select_sample(n_sifted: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Indices (sorted, without replacement) of the disclosed key bits."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"sample fraction must be in [0,1], got {fraction}")
    k = int(n_sifted * fraction + 0.5)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n_sifted, size=k, replace=False)).astype(np.int64)


def count_sample_errors(
    sifted: SiftResult, sample_idx: np.ndarray
) -> tuple[int, int, int, int]:
    """Per-basis disclosed counts: (sampled_z, errors_z, sampled_x, errors_x)."""
    if sifted.alice_key is None or sifted.bob_key is None:
        raise SessionError("both keys are required to count disagreements")
    disagree = sifted.alice_key[sample_idx] != sifted.bob_key[sample_idx]
    is_x = sifted.basis[sample_idx] == Basis.X
    sampled_x = int(is_x.sum())
    errors_x = int(disagree[is_x].sum())
    sampled_z = int(sample_idx.shape[0]) - sampled_x
    errors_z = int(disagree.sum()) - errors_x
    return sampled_z, errors_z, sampled_x, errors_x


@dataclass(frozen=True)
class SessionReport:
    """Everything both endpoints agree on at the end of a session."""

    blocks_sent: int
    block_length: int
    mu: float
    attenuation_db: float
    kept_clicks: int
    p1_click: float
    q_gain_estimate: float
    sifted_bits: int
    sampled_bits: int
    sample_errors: int
    sampled_z: int
    errors_z: int
    sampled_x: int
    errors_x: int
    qber: float
    qber_z: float
    qber_x: float
    breakdown: KeyRateBreakdown
    no_key: bool


def build_report(
    params: SystemParams,
    blocks_sent: int,
    kept_clicks: int,
    sifted_bits: int,
    sampled_z: int,
    errors_z: int,
    sampled_x: int,
    errors_x: int,
) -> SessionReport:
    """Deterministic report construction from the agreed integer tallies.

    Both endpoints run exactly this arithmetic on the same integers, so
    the derived floating-point fields are bit-identical on both sides.
    """
    slots_offered = blocks_sent * (params.L - 1)
    p1 = kept_clicks / slots_offered if slots_offered else 0.0
    q_emp = block_gain(p1, params.L)
    sampled = sampled_z + sampled_x
    errors = errors_z + errors_x
    qber = errors / sampled if sampled else 0.0
    qber_z = errors_z / sampled_z if sampled_z else 0.0
    qber_x = errors_x / sampled_x if sampled_x else 0.0
    e0_frac = qber_z if sampled_z else qber
    e1_frac = qber_x if sampled_x else e0_frac
    breakdown = secure_key_rate(params, q_emp, e0_frac * q_emp, e1_frac * q_emp)
    no_key = sifted_bits == 0 or breakdown.secure_rate <= 0.0
    return SessionReport(
        blocks_sent=blocks_sent,
        block_length=params.L,
        mu=params.mu,
        attenuation_db=params.channel_loss_db,
        kept_clicks=kept_clicks,
        p1_click=p1,
        q_gain_estimate=q_emp,
        sifted_bits=sifted_bits,
        sampled_bits=sampled,
        sample_errors=errors,
        sampled_z=sampled_z,
        errors_z=errors_z,
        sampled_x=sampled_x,
        errors_x=errors_x,
        qber=qber,
        qber_z=qber_z,
        qber_x=qber_x,
        breakdown=breakdown,
        no_key=no_key,
    )


@dataclass
class SessionResult:
    """In-process session outcome: the report plus the surviving keys."""

    report: SessionReport
    sifted: SiftResult
    sample_indices: np.ndarray
    alice_key: np.ndarray  # sifted key minus disclosed bits
    bob_key: np.ndarray


def run_simulation(
    params: SystemParams,
    n_blocks: int,
    seed: int,
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
) -> SessionResult:
    """Full single-process session: prepare, measure, sift, estimate."""
    params = validate(params)
    alice_rng, bob_rng, sample_rng = derive_streams(seed)
    alice = alice_prepare(params, n_blocks, alice_rng)
    bob = measure_blocks(alice, params, bob_rng)
    sifted = sift(alice, bob)
    sample_idx = select_sample(sifted.size, sample_fraction, sample_rng)
    sampled_z, errors_z, sampled_x, errors_x = (
        count_sample_errors(sifted, sample_idx) if sifted.size else (0, 0, 0, 0)
    )
    report = build_report(
        params,
        blocks_sent=n_blocks,
        kept_clicks=int(bob.has_kept.sum()),
        sifted_bits=sifted.size,
        sampled_z=sampled_z,
        errors_z=errors_z,
        sampled_x=sampled_x,
        errors_x=errors_x,
    )
    keep = np.ones(sifted.size, dtype=bool)
    keep[sample_idx] = False
    return SessionResult(
        report=report,
        sifted=sifted,
        sample_indices=sample_idx,
        alice_key=sifted.alice_key[keep],
        bob_key=sifted.bob_key[keep],
    )


def bb84_config(params: SystemParams) -> SystemParams:
    """The same pipeline at L=2 runs phase-encoded BB84 (2 = 2^0 + 1)."""
    return validate(replace(params, L=2))


def report_to_csv(report: SessionReport) -> str:
    """Serialize a report as one sweep-schema CSV row (header included)."""
    b = report.breakdown
    fmt = keyrate._fmt
    row = ",".join(
        [
            fmt(report.attenuation_db),
            str(report.block_length),
            fmt(report.mu),
            fmt(report.q_gain_estimate),
            fmt(report.qber),
            fmt(b.r_tag),
            fmt(b.f_pa),
            fmt(b.f_ec),
            fmt(b.raw_rate),
            fmt(b.secure_rate),
        ]
    )
    return keyrate.SWEEP_HEADER + "\n" + row + "\n"


def format_summary(report: SessionReport) -> str:
    """Human-readable end-of-session block."""
    lines = [
        "session summary",
        f"  blocks sent        {report.blocks_sent}",
        f"  block length L     {report.block_length}",
        f"  mean photon no.    {report.mu:g}",
        f"  channel loss       {report.attenuation_db:g} dB",
        f"  kept clicks        {report.kept_clicks}",
        f"  per-slot click     {report.p1_click:.6g}",
        f"  gain estimate Q    {report.q_gain_estimate:.6g}",
        f"  sifted bits        {report.sifted_bits}",
        f"  disclosed bits     {report.sampled_bits} ({report.sample_errors} errors)",
        f"  QBER overall       {report.qber:.6g}",
        f"  QBER data/check    {report.qber_z:.6g} / {report.qber_x:.6g}",
        f"  tagged fraction    {report.breakdown.r_tag:.6g}",
        f"  f_PA / f_EC        {report.breakdown.f_pa:.6g} / {report.breakdown.f_ec:.6g}",
        f"  raw rate           {report.breakdown.raw_rate:.6g} bit/s",
        f"  secure rate        {report.breakdown.secure_rate:.6g} bit/s",
        f"  key extracted      {'no' if report.no_key else 'yes'}",
    ]
    return "\n".join(lines) + "\n"
