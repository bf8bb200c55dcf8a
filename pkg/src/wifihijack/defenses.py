"""Countermeasures against the frame-size side channel, and their evaluation.

Two knobs are modelled: link-layer padding of encrypted frames, and a TCP
stack that answers every control condition with a packet of one canonical
length.  :func:`evaluate_defense` runs the attack with and without a defence
and reports how much of the channel survives.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace

from .errors import ConfigError, PaddingOverflowError

PADDING_MODES = ("none", "fixed", "bucket", "random")
# largest response frame with default options and overheads
LARGEST_RESPONSE_FRAME = 80


@dataclass(frozen=True)
class PaddingPolicy:
    mode: str = "none"
    target: int | None = None
    buckets: tuple[int, ...] = ()
    max_extra: int = 0

    def __post_init__(self) -> None:
        if self.mode not in PADDING_MODES:
            raise ConfigError(f"unknown padding mode {self.mode!r}")
        if self.mode == "fixed":
            if self.target is None or self.target < LARGEST_RESPONSE_FRAME:
                raise ConfigError(f"fixed padding target must be >= {LARGEST_RESPONSE_FRAME}")
        if self.mode == "bucket":
            b = tuple(self.buckets)
            if not b or list(b) != sorted(set(b)):
                raise ConfigError("bucket sizes must be a non-empty ascending list")
            if b[-1] < LARGEST_RESPONSE_FRAME:
                raise ConfigError(f"largest bucket must be >= {LARGEST_RESPONSE_FRAME}")
        if self.mode == "random" and self.max_extra < 0:
            raise ConfigError("max_extra must be non-negative")


@dataclass(frozen=True)
class UniformResponsePolicy:
    enabled: bool = False
    canonical_ip_len: int = 64
    # also answer conditions that would otherwise be dropped silently
    respond_always: bool = False

    def __post_init__(self) -> None:
        if self.canonical_ip_len < 40:
            raise ConfigError("canonical length cannot be below a bare TCP/IP header")


@dataclass(frozen=True)
class DefenseConfig:
    padding: PaddingPolicy = PaddingPolicy()
    uniform: UniformResponsePolicy = UniformResponsePolicy()


def apply_padding(policy: PaddingPolicy, size: int, rng: random.Random | None = None) -> int:
    """Map an unpadded frame size to the size observed on the air.

    ``fixed`` pads everything up to the target; a frame already larger than
    the target is padded to the next multiple of it, since padding cannot
    shrink a frame.
    """
    if size < 16:
        raise ValueError(f"frame size {size} below the encapsulation overhead")
    mode = policy.mode
    if mode == "none":
        return size
    if mode == "fixed":
        target = policy.target
        return target if size <= target else -(-size // target) * target
    if mode == "bucket":
        for bucket in policy.buckets:
            if bucket >= size:
                return bucket
        raise PaddingOverflowError(f"frame of {size} bytes exceeds largest bucket {policy.buckets[-1]}")
    if rng is None:
        raise ValueError("random padding needs an RNG")
    return size + rng.randint(0, policy.max_extra)


@dataclass
class DefenseReport:
    trials: int
    base_success_rate: float
    defended_success_rate: float
    success_delta: float
    # outcome label -> count, e.g. "inconclusive:port"
    defended_outcomes: dict[str, int] = field(default_factory=dict)
    distinguishability: float = 0.0
    base_distinguishability: float = 0.0


def evaluate_defense(base, defended, trials: int) -> DefenseReport:
    """Run the full attack ``trials`` times against both scenarios.

    Trial ``i`` uses the same derived seed in both scenarios, so the ground
    truth (ports, sequence numbers) is paired.  Distinguishability is the
    fraction of trials in which probing the open port and a closed port
    yields different observation sequences.
    """
    from .sim import derive_seed, observation_pair, run_scenario

    if trials < 1:
        raise ValueError("need at least one trial")
    base_wins = defended_wins = 0
    distinct = base_distinct = 0
    outcomes: Counter[str] = Counter()
    for i in range(trials):
        seed = derive_seed(base.seed, i)
        b_cfg = replace(base, seed=seed)
        d_cfg = replace(defended, seed=seed)
        b_report = run_scenario(b_cfg, record_trace=False)[0]
        d_report = run_scenario(d_cfg, record_trace=False)[0]
        base_wins += b_report.outcome == "success"
        defended_wins += d_report.outcome == "success"
        label = d_report.outcome if d_report.failed_phase is None else f"{d_report.outcome}:{d_report.failed_phase}"
        outcomes[label] += 1
        open_seq, closed_seq = observation_pair(d_cfg)
        distinct += open_seq != closed_seq
        open_seq, closed_seq = observation_pair(b_cfg)
        base_distinct += open_seq != closed_seq
    base_rate = base_wins / trials
    defended_rate = defended_wins / trials
    return DefenseReport(
        trials=trials,
        base_success_rate=base_rate,
        defended_success_rate=defended_rate,
        success_delta=defended_rate - base_rate,
        defended_outcomes=dict(sorted(outcomes.items())),
        distinguishability=distinct / trials,
        base_distinguishability=base_distinct / trials,
    )
