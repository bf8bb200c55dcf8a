"""802.11 link model: encryption as a size transform, and a lossy shared channel.

Virtual time is an integer number of microseconds throughout.
"""

from __future__ import annotations

import math
import random
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .defenses import PaddingPolicy, apply_padding
from .errors import ConfigError, EvictionUnavailable

BROADCAST = "ff:ff:ff:ff:ff:ff"
FRAME_KINDS = ("Data", "Mgmt", "Ctrl")
AMSDU_SUBFRAME_HEADER = 14
AMSDU_MAX_SIZES = (3839, 7935)


class FrameObservation(NamedTuple):
    """One frame as a passive sniffer records it."""

    t: int
    channel: int
    addr1: str
    addr2: str
    kind: str
    observable_len: int
    amsdu: bool = False


@dataclass(frozen=True)
class EncapsulationConfig:
    llc_snap_overhead: int = 8
    # CCMP-like MIC; a GCMP-256 profile would use 16
    crypto_mic_overhead: int = 8
    padding: PaddingPolicy = PaddingPolicy()

    def __post_init__(self) -> None:
        if self.llc_snap_overhead < 0 or self.crypto_mic_overhead < 0:
            raise ConfigError("encapsulation overheads must be non-negative")


@dataclass(frozen=True)
class BackgroundSpec:
    """Empty-ACK traffic from third-party servers towards the victim.

    ``rate`` mode sends ``rate_pps`` packets per second, evenly spaced.
    ``interval`` mode sends a burst every ``interval_s`` seconds (first burst
    at ``interval_s``); a burst is ``burst_packets`` packets at ``burst_rate_pps``.
    """

    mode: str = "rate"
    rate_pps: float | None = None
    interval_s: float | None = None
    burst_packets: int = 40
    burst_rate_pps: float = 40.0
    packet_ip_len: int = 52
    tid: int = 0

    def __post_init__(self) -> None:
        if self.mode == "rate":
            if self.rate_pps is None or self.interval_s is not None:
                raise ConfigError("rate mode takes rate_pps and no interval_s")
            if self.rate_pps < 0:
                raise ConfigError("rate_pps must be non-negative")
        elif self.mode == "interval":
            if self.interval_s is None or self.rate_pps is not None:
                raise ConfigError("interval mode takes interval_s and no rate_pps")
            if self.interval_s <= 0 or self.burst_rate_pps <= 0 or self.burst_packets < 0:
                raise ConfigError("interval, burst rate and burst size must be positive")
        else:
            raise ConfigError(f"unknown background mode {self.mode!r}")


@dataclass(frozen=True)
class AmsduConfig:
    max_size: int = 3839
    max_delay_us: int = 1

    def __post_init__(self) -> None:
        if self.max_size not in AMSDU_MAX_SIZES:
            raise ConfigError(f"A-MSDU max size must be one of {AMSDU_MAX_SIZES}")
        if self.max_delay_us < 0:
            raise ConfigError("max_delay_us must be non-negative")


@dataclass(frozen=True)
class ChannelConfig:
    loss_prob: float = 0.0
    contention_delay_ms: tuple[float, float] = (0.0, 2.0)
    channels: tuple[int, ...] = (1,)
    rtt_ms: float = 10.0
    background: BackgroundSpec | None = None
    amsdu: AmsduConfig | None = None
    ap_isolation: bool = False
    eviction_factor: float = 10.0
    reassoc_gap_s: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigError("loss_prob must be in [0, 1]")
        lo, hi = self.contention_delay_ms
        if not 0 <= lo <= hi:
            raise ConfigError("contention delay must satisfy 0 <= lo <= hi")
        if not self.channels:
            raise ConfigError("at least one channel is required")
        if self.rtt_ms <= 0:
            raise ConfigError("rtt_ms must be positive")
        if self.eviction_factor < 1 or self.reassoc_gap_s < 0:
            raise ConfigError("eviction factor must be >= 1 and the gap non-negative")

    @property
    def amsdu_enabled(self) -> bool:
        return self.amsdu is not None


def encapsulate(ip_len: int, cfg: EncapsulationConfig = EncapsulationConfig(),
                rng: random.Random | None = None) -> int:
    """Observable MSDU length of an IPv4 packet after LLC/SNAP, MIC and padding."""
    if ip_len < 20:
        raise ValueError(f"IPv4 packet of {ip_len} bytes is shorter than its header")
    return apply_padding(cfg.padding, ip_len + cfg.llc_snap_overhead + cfg.crypto_mic_overhead, rng)


def sample_contention_us(cfg: ChannelConfig, rng: random.Random) -> int:
    lo, hi = cfg.contention_delay_ms
    if lo == hi:
        return round(lo * 1000)
    return round(rng.uniform(lo, hi) * 1000)


def transmit(frame: FrameObservation, cfg: ChannelConfig, rng: random.Random) -> int | None:
    """Delivery time of ``frame`` at a sniffer, or ``None`` if it was lost.

    Draws one uniform for the loss decision, then one for the contention
    delay if the frame survives.
    """
    if frame.channel not in cfg.channels:
        raise ConfigError(f"channel {frame.channel} is not part of this network")
    if rng.random() < cfg.loss_prob:
        return None
    return frame.t + sample_contention_us(cfg, rng)


def filter_frames(trace: Iterable[FrameObservation], victim_mac: str) -> list[FrameObservation]:
    mac = victim_mac.lower()
    return [f for f in trace if f.addr1 == mac or f.addr2 == mac]


class PendingMsdu(NamedTuple):
    t: int
    msdu_len: int
    receiver: str
    tid: int = 0
    transmitter: str = ""
    channel: int = 1


def amsdu_length(msdu_lens: list[int]) -> int:
    """Aggregate length: 14-byte subframe headers, every subframe but the last padded to 4 bytes."""
    total = 0
    for i, n in enumerate(msdu_lens):
        sub = AMSDU_SUBFRAME_HEADER + n
        if i < len(msdu_lens) - 1:
            sub += -sub % 4
        total += sub
    return total


def aggregate_amsdu(pending: Iterable[PendingMsdu], cfg: AmsduConfig,
                    now: int | None = None) -> list[FrameObservation]:
    """Coalesce queued MSDUs into A-MSDU frames.

    Only MSDUs sharing receiver and TID are merged, and only while each
    arrives within ``max_delay_us`` of the previous member and the aggregate
    stays within ``max_size``.  With ``now`` given, MSDUs arriving later are
    left out.  Frames are stamped with the arrival time of their last member.
    """
    groups: dict[tuple[str, int], list[list[PendingMsdu]]] = {}
    for msdu in sorted(pending, key=lambda m: m.t):
        if now is not None and msdu.t > now:
            continue
        runs = groups.setdefault((msdu.receiver, msdu.tid), [])
        if runs:
            current = runs[-1]
            lens = [m.msdu_len for m in current] + [msdu.msdu_len]
            if msdu.t - current[-1].t <= cfg.max_delay_us and amsdu_length(lens) <= cfg.max_size:
                current.append(msdu)
                continue
        runs.append([msdu])

    frames = []
    for runs in groups.values():
        for run in runs:
            last = run[-1]
            if len(run) == 1:
                length, aggregated = last.msdu_len, False
            else:
                length, aggregated = amsdu_length([m.msdu_len for m in run]), True
            frames.append(FrameObservation(last.t, last.channel, last.receiver, last.transmitter,
                                           "Data", length, aggregated))
    frames.sort(key=lambda f: f.t)
    return frames


def background_times(spec: BackgroundSpec, start_us: int, end_us: int) -> Iterator[int]:
    """Emission times of background packets in ``[start_us, end_us)``."""
    if spec.mode == "rate":
        if not spec.rate_pps:
            return
        count = math.floor((end_us - start_us) * spec.rate_pps / 1e6 + 1e-9)
        for i in range(count):
            yield start_us + round(i * 1e6 / spec.rate_pps)
        return
    period = round(spec.interval_s * 1e6)
    spacing = 1e6 / spec.burst_rate_pps
    burst_start = start_us + period
    while burst_start < end_us:
        for j in range(spec.burst_packets):
            t = burst_start + round(j * spacing)
            if t >= end_us:
                return
            yield t
        burst_start += period


def gen_background(spec: BackgroundSpec, duration_s: float, victim_mac: str, *,
                   start_us: int = 0, ap_mac: str = "02:00:00:00:00:01", channel: int = 1,
                   encaps: EncapsulationConfig = EncapsulationConfig(),
                   rng: random.Random | None = None) -> list[FrameObservation]:
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    end = start_us + round(duration_s * 1e6)
    mac = victim_mac.lower()
    return [FrameObservation(t, channel, mac, ap_mac, "Data", encapsulate(spec.packet_ip_len, encaps, rng))
            for t in background_times(spec, start_us, end)]


class EvictionEffect(NamedTuple):
    config: ChannelConfig
    gap_us: int


def evict_supplicant(victim_mac: str, cfg: ChannelConfig) -> EvictionEffect:
    """Push the other contenders off the victim's channel.

    Contention on the victim's channel shrinks by ``eviction_factor`` towards
    its lower bound; the network goes through a re-association gap of
    ``reassoc_gap_s`` during which the victim exchanges no frames.
    """
    if len(cfg.channels) < 2:
        raise EvictionUnavailable("eviction needs a network with at least two channels")
    lo, hi = cfg.contention_delay_ms
    new = replace(cfg, contention_delay_ms=(lo, lo + (hi - lo) / cfg.eviction_factor))
    return EvictionEffect(new, round(cfg.reassoc_gap_s * 1e6))


@dataclass
class Host:
    mac: str
    ip: str
    channel: int | None = None

    def __post_init__(self) -> None:
        self.mac = self.mac.lower()


@dataclass
class Wlan:
    """Static membership of the wireless network: the AP and its supplicants."""

    bssid: str
    supplicants: list[Host] = field(default_factory=list)

    def by_ip(self, ip: str) -> Host | None:
        for host in self.supplicants:
            if host.ip == ip:
                return host
        return None
