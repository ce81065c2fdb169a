"""System configuration for the DQPS simulator.

A single frozen dataclass carries every physical and protocol constant:
laser repetition rate, mean photon number, block length, basis
probability, detector/receiver losses and the dark count rate. All other
modules consume a validated ``SystemParams`` and never mutate it, so
instances are safe to share across threads.

Configuration files are plain text, one ``key = value`` per line with
``#`` comments. Unknown keys are an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace


class ValidationError(ValueError):
    """Raised when one or more parameter invariants are violated.

    Carries ``violations``, a list of ``(field, reason)`` pairs covering
    every violated invariant, not just the first one found.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        detail = "; ".join(f"{f}: {r}" for f, r in self.violations)
        super().__init__(f"invalid parameters: {detail}")


class ConfigError(ValueError):
    """Raised for malformed or unknown entries in a config file."""


@dataclass(frozen=True)
class SystemParams:
    """Full physical and protocol configuration.

    Defaults reflect a 2 GHz transmitter feeding a receiver with a 3 dB
    interferometer, a 38.6% efficient detector and a 15 Hz dark count
    rate over standard 0.2 dB/km fiber.
    """

    n_rep: float = 2e9            # pulse repetition rate, Hz
    mu: float = 0.00722           # mean photon number per pulse at the transmitter output
    L: int = 65                   # block length in pulses (L-1 useful slots)
    p0: float = 1.0               # probability of preparing a data-basis block
    eta_det: float = 0.386        # detector efficiency
    dark_rate: float = 15.0       # dark counts per second per detector
    mzi_loss_db: float = 3.0      # receiver interferometer insertion loss
    channel_loss_db: float = 0.0  # quantum channel attenuation
    fiber_coeff_db_per_km: float = 0.2
    e_mis: float = 0.0215         # baseline optical error probability
    dark_outcomes: int = 2        # detection outcomes contributing dark counts (1 or 2)
    strict_l: bool = False        # require L = 2^n + 1

    def transmittance(self) -> float:
        """Overall probability that an emitted photon is detected.

        Composes channel and interferometer attenuation with the
        detector efficiency: ``10^-((channel+mzi)/10) * eta_det``.
        """
        return 10.0 ** (-(self.channel_loss_db + self.mzi_loss_db) / 10.0) * self.eta_det

    def km_to_db(self, km: float) -> float:
        """Convert a fiber length to channel attenuation in dB."""
        return km_to_db(km, self.fiber_coeff_db_per_km)

    def at_distance_km(self, km: float) -> "SystemParams":
        """Copy of the parameters with channel loss set from fiber length."""
        return replace(self, channel_loss_db=self.km_to_db(km))


def km_to_db(km: float, coeff_db_per_km: float = 0.2) -> float:
    """Fiber length to attenuation; linear in km, negative lengths rejected."""
    if km < 0:
        raise ValueError(f"fiber length must be non-negative, got {km}")
    return km * coeff_db_per_km


def is_valid_block_length(L: int) -> bool:
    """True iff L = 2^n + 1 for integer n >= 0 (L=2 is the n=0 case)."""
    n = L - 1
    return n >= 1 and (n & (n - 1)) == 0


def validate(params: SystemParams) -> SystemParams:
    """Check every invariant; return the instance unchanged if all hold.

    Raises :class:`ValidationError` listing every violated invariant.
    Validation is idempotent: a valid instance is returned as-is.
    """
    bad: list[tuple[str, str]] = []

    def prob(name: str, value: float) -> None:
        if not (0.0 <= value <= 1.0):
            bad.append((name, f"must be in [0,1], got {value}"))

    def nonneg(name: str, value: float) -> None:
        if not (value >= 0.0) or math.isinf(value):
            bad.append((name, f"must be finite and non-negative, got {value}"))

    if not (params.n_rep > 0) or math.isinf(params.n_rep):
        bad.append(("n_rep", f"must be finite and positive, got {params.n_rep}"))
    nonneg("mu", params.mu)
    if not isinstance(params.L, int) or params.L < 2:
        bad.append(("L", f"must be an integer >= 2, got {params.L}"))
    elif params.strict_l and not is_valid_block_length(params.L):
        bad.append(("L", f"strict mode requires L = 2^n + 1, got {params.L}"))
    prob("p0", params.p0)
    prob("eta_det", params.eta_det)
    nonneg("dark_rate", params.dark_rate)
    nonneg("mzi_loss_db", params.mzi_loss_db)
    nonneg("channel_loss_db", params.channel_loss_db)
    nonneg("fiber_coeff_db_per_km", params.fiber_coeff_db_per_km)
    prob("e_mis", params.e_mis)
    if params.dark_outcomes not in (1, 2):
        bad.append(("dark_outcomes", f"must be 1 or 2, got {params.dark_outcomes}"))

    if bad:
        raise ValidationError(bad)
    return params


# Field coercions for config files and --set overrides.
_FIELD_TYPES = {f.name: f.type for f in fields(SystemParams)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config_text(text: str) -> dict[str, object]:
    """Parse ``key = value`` lines into typed parameter overrides.

    Blank lines and ``#`` comments are ignored; unknown keys raise
    :class:`ConfigError`.
    """
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: str) -> dict[str, object]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def params_from_sources(
    base: SystemParams | None = None,
    config_path: str | None = None,
    overrides: dict[str, str] | None = None,
) -> SystemParams:
    """Build parameters from defaults, an optional config file, then overrides.

    ``overrides`` maps field names to raw strings (e.g. from repeated
    ``--set key=value`` flags) and is applied after the file so the
    command line wins. The result is validated.
    """
    params = base if base is not None else SystemParams()
    if config_path is not None:
        params = replace(params, **load_config(config_path))
    if overrides:
        typed = {}
        for key, raw in overrides.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown key {key!r}")
            typed[key] = _coerce(key, raw)
        params = replace(params, **typed)
    return validate(params)
