"""Asymptotic secure-key-rate analytics for the DQPS protocol.

The extractable key rate of an L-pulse-block differential phase protocol
is

    R = n_rep * p0^2 * Q / L * [1 - f_PA(Q, E1) - f_EC(E0/Q)]

where Q is the per-block gain, E0/E1 the data/check-basis error
fractions, f_EC the error-correction cost h(E0/Q), and the privacy
amplification factor

    f_PA(Q, E1) = r_tag/Q + (1 - r_tag/Q) * h(E1 / (Q - r_tag))

charges the full key of "tagged" blocks, i.e. blocks where more than one
photon landed in adjacent pulses (or one pulse carried several photons):

    r_tag = 1 - sum_{m=0}^{floor(L/2)} e^(-mu*L) mu^m (L+1-m)! / (m! (L+1-2m)!)

h is the binary entropy truncated to 1 above 0.5. At L=2 the protocol
reduces to phase-encoded BB84 and r_tag collapses to the two-pulse
multiphoton probability 1 - e^(-2 mu)(1 + 2 mu).

This module also provides the analytic channel model used to predict the
per-slot click probability and QBER from the configured losses, plus an
exhaustive (mu, L) grid optimizer and a sweep harness over channel
attenuation.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

from .params import SystemParams


class NumericError(ArithmeticError):
    """A key-rate term evaluated to a non-finite intermediate."""


class OperatingPointError(ValueError):
    """An operating point with zero gain has no defined penalty factors."""


def binary_entropy(x: float) -> float:
    """Binary entropy h(x), truncated to exactly 1 for x > 0.5.

    The truncation caps the leaked-information estimate at one bit; it
    deliberately breaks the h(x) = h(1-x) symmetry.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"entropy argument must be in [0,1], got {x}")
    if x == 0.0:
        return 0.0
    if x > 0.5:
        return 1.0
    if x == 0.5:
        return 1.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


@lru_cache(maxsize=4096)
def r_tag(mu: float, L: int) -> float:
    """Probability that a block is tagged: adjacent pulses carry >1 photon.

    Evaluates 1 - sum_{m=0}^{floor(L/2)} e^(-mu L) mu^m (L+1-m)!/(m!(L+1-2m)!).
    Each term is the probability of one arrangement of m isolated single
    photons across the block, counted over the C(L+1-m, m) non-adjacent
    placements. Factorial ratios are evaluated as log-gamma differences
    and the sum is accumulated with Kahan compensation, so block lengths
    of 1025 and beyond stay finite.
    """
    if mu < 0:
        raise ValueError(f"mu must be non-negative, got {mu}")
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    if mu == 0.0:
        return 0.0
    log_mu = math.log(mu)
    total = 0.0
    comp = 0.0
    for m in range(L // 2 + 1):
        log_term = (
            -mu * L
            + m * log_mu
            + math.lgamma(L + 2 - m)
            - math.lgamma(m + 1)
            - math.lgamma(L + 2 - 2 * m)
        )
        term = math.exp(log_term)
        if not math.isfinite(term):
            raise NumericError(f"r_tag term m={m} is non-finite for mu={mu}, L={L}")
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    if not math.isfinite(total):
        raise NumericError(f"r_tag sum is non-finite for mu={mu}, L={L}")
    return min(1.0, max(0.0, 1.0 - total))


def block_gain(p_click: float, L: int) -> float:
    """Gain Q: probability that a block of L-1 slots yields any click.

    Q = 1 - (1 - p_click)^(L-1), evaluated in log space so per-slot
    probabilities down to 1e-12 keep full precision.
    """
    if not 0.0 <= p_click <= 1.0:
        raise ValueError(f"p_click must be in [0,1], got {p_click}")
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    if p_click == 1.0:
        return 1.0
    return -math.expm1((L - 1) * math.log1p(-p_click))


def privacy_amp(q: float, e1: float, rtag: float) -> float:
    """Privacy amplification factor f_PA(Q, E1).

    Tagged blocks are surrendered entirely (term r_tag/Q); the untagged
    remainder pays the entropy of its phase-error fraction. When tagging
    swallows the whole gain (r_tag >= Q) the factor saturates at 1 and
    no key survives.
    """
    if q <= 0.0:
        raise OperatingPointError("privacy amplification undefined at zero gain")
    if not 0.0 <= e1 <= q:
        raise ValueError(f"e1 must be in [0, q], got e1={e1}, q={q}")
    if not 0.0 <= rtag <= 1.0:
        raise ValueError(f"r_tag must be in [0,1], got {rtag}")
    if rtag >= q:
        return 1.0
    # e1/(q - rtag) may exceed 1 when most of the gain is tagged; the
    # leaked information is capped at one bit either way.
    ratio = min(1.0, e1 / (q - rtag))
    return rtag / q + (1.0 - rtag / q) * binary_entropy(ratio)


def error_correction(e0: float, q: float) -> float:
    """Error correction factor f_EC = h(E0/Q) at the Shannon limit."""
    if q <= 0.0:
        raise OperatingPointError("error correction undefined at zero gain")
    if not 0.0 <= e0 <= q:
        raise ValueError(f"e0 must be in [0, q], got e0={e0}, q={q}")
    return binary_entropy(e0 / q)


@dataclass(frozen=True)
class KeyRateBreakdown:
    """Every term of the key-rate evaluation at one operating point."""

    q_gain: float
    e0: float
    e1: float
    r_tag: float
    f_pa: float
    f_ec: float
    raw_rate: float
    secure_rate: float


def secure_key_rate(params: SystemParams, q: float, e0: float, e1: float) -> KeyRateBreakdown:
    """Evaluate the full rate formula at gain ``q`` and error fractions e0/e1.

    The bracket [1 - f_PA - f_EC] is clamped at zero: an operating point
    past the security horizon yields no key, never a negative rate. A
    zero-gain point short-circuits to an all-zero breakdown with the
    full privacy-amplification penalty recorded.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0,1], got {q}")
    rt = r_tag(params.mu, params.L)
    if q == 0.0:
        return KeyRateBreakdown(0.0, 0.0, 0.0, rt, 1.0, 0.0, 0.0, 0.0)
    f_pa = privacy_amp(q, e1, rt)
    f_ec = error_correction(e0, q)
    raw = params.n_rep * params.p0 * params.p0 * q / params.L
    secure = max(0.0, raw * (1.0 - f_pa - f_ec))
    return KeyRateBreakdown(q, e0, e1, rt, f_pa, f_ec, raw, secure)


class ChannelStats(NamedTuple):
    """Analytic per-slot click probability and QBER for a configuration."""

    p_click: float
    qber: float
    no_clicks: bool


def predict_channel_stats(params: SystemParams) -> ChannelStats:
    """Per-slot click probability and QBER under the independence model.

    Signal and dark clicks are independent: p_signal = 1 - e^(-mu t)
    with t the end-to-end transmittance, and p_dark counts
    ``dark_outcomes`` chances of dark_rate/n_rep per slot. Dark clicks
    land on the wrong detector half the time; signal clicks err with the
    baseline optical error probability. Signal-dark coincidences are
    second order and ignored. A configuration that can never click is
    flagged rather than dividing by zero.
    """
    t = params.transmittance()
    p_signal = -math.expm1(-params.mu * t)
    p_dark = params.dark_outcomes * params.dark_rate / params.n_rep
    p_click = p_signal + p_dark - p_signal * p_dark
    denom = p_signal + p_dark
    if denom <= 0.0:
        return ChannelStats(0.0, 0.0, True)
    qber = (params.e_mis * p_signal + 0.5 * p_dark) / denom
    return ChannelStats(p_click, qber, False)


def operating_point(params: SystemParams) -> tuple[KeyRateBreakdown, float]:
    """Analytic breakdown and QBER at the configured (mu, L, loss) point.

    Check-basis errors are taken equal to data-basis errors, matching a
    receiver whose two bases share one visibility.
    """
    stats = predict_channel_stats(params)
    q = block_gain(stats.p_click, params.L)
    e = stats.qber * q
    return secure_key_rate(params, q, e, e), stats.qber


# Default optimization grids: 40 logarithmic mean-photon-number points
# over [1e-4, 0.2] and every power-of-two-plus-one block length through
# 257 (L=2 is the BB84 configuration).
DEFAULT_L_SET: tuple[int, ...] = (2, 3, 5, 9, 17, 33, 65, 129, 257)


def default_mu_grid(n: int = 40, lo: float = 1e-4, hi: float = 0.2) -> tuple[float, ...]:
    if n < 2:
        raise ValueError("mu grid needs at least two points")
    ratio = (hi / lo) ** (1.0 / (n - 1))
    return tuple(lo * ratio**i for i in range(n))


@dataclass(frozen=True)
class OptimizeResult:
    """Argmax of the secure rate over a (mu, L) grid at one attenuation."""

    attenuation_db: float
    mu: float
    L: int
    breakdown: KeyRateBreakdown
    qber: float
    positive: bool  # False: no grid point yields a positive key


def optimize(
    params: SystemParams,
    attenuation_db: float,
    mu_grid: Sequence[float] | None = None,
    l_set: Sequence[int] | None = None,
) -> OptimizeResult:
    """Exhaustively evaluate the grid and return the best operating point.

    Ties are broken toward smaller L, then smaller mu (the iteration
    order makes the first maximum win). When every point is rate-zero
    the result carries ``positive=False`` with the smallest grid point.
    """
    mus = tuple(mu_grid) if mu_grid is not None else default_mu_grid()
    ls = tuple(l_set) if l_set is not None else DEFAULT_L_SET
    if not mus or not ls:
        raise ValueError("optimization grids must be non-empty")
    best: OptimizeResult | None = None
    for L in sorted(ls):
        for mu in sorted(mus):
            point = replace(params, mu=mu, L=L, channel_loss_db=attenuation_db)
            breakdown, qber = operating_point(point)
            if best is None or breakdown.secure_rate > best.breakdown.secure_rate:
                best = OptimizeResult(attenuation_db, mu, L, breakdown, qber,
                                      breakdown.secure_rate > 0.0)
    assert best is not None
    return best


def attenuation_sweep(
    params: SystemParams,
    attenuations_db: Iterable[float],
    mu_grid: Sequence[float] | None = None,
    l_set: Sequence[int] | None = None,
    jobs: int = 1,
) -> list[OptimizeResult]:
    """Optimize every attenuation; rows come back in input order.

    Grid points are independent, so the sweep can fan out across a
    thread pool; results are reassembled in ascending-input order
    regardless of completion order.
    """
    points = list(attenuations_db)
    if jobs <= 1 or len(points) <= 1:
        return [optimize(params, db, mu_grid, l_set) for db in points]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(optimize, params, db, mu_grid, l_set) for db in points]
        return [f.result() for f in futures]


SWEEP_HEADER = "attenuation_db,L,mu,q_gain,qber,r_tag,f_pa,f_ec,raw_bps,secure_bps"


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def sweep_csv_row(result: OptimizeResult) -> str:
    b = result.breakdown
    return ",".join(
        [
            _fmt(result.attenuation_db),
            str(result.L),
            _fmt(result.mu),
            _fmt(b.q_gain),
            _fmt(result.qber),
            _fmt(b.r_tag),
            _fmt(b.f_pa),
            _fmt(b.f_ec),
            _fmt(b.raw_rate),
            _fmt(b.secure_rate),
        ]
    )


def sweep_to_csv(results: Iterable[OptimizeResult]) -> str:
    lines = [SWEEP_HEADER]
    lines.extend(sweep_csv_row(r) for r in results)
    return "\n".join(lines) + "\n"
