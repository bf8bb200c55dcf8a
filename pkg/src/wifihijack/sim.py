"""Discrete-event world binding endpoint, link, attacker and defences.

One scenario is one single-threaded event loop over integer microseconds.
Three independent RNG streams are derived from the scenario seed: ground
truth (ports, sequence numbers), the channel (contention, loss, random
padding) and the attacker (its arbitrary starting guesses).
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .attacker import Attacker, AttackReport, InferenceConfig
from .config import ScenarioConfig, with_value
from .endpoint import Flag, FourTuple, OptionsProfile, SegmentMeta, ServerConnState, TcpEndpoint
from .errors import DurationExceeded
from .formats import ProbeRecord
from .link import (
    BROADCAST,
    EncapsulationConfig,
    FrameObservation,
    PendingMsdu,
    aggregate_amsdu,
    background_times,
    encapsulate,
    evict_supplicant,
)

ARP_IP_LEN = 28
DEAUTH_FRAME_LEN = 26
ETHERNET_VIEW = 14


class EventQueue:
    """Min-heap of ``(time, insertion seq, kind, payload)``; ties pop in insertion order."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self.now = 0

    def push(self, t: int, kind: str, payload=None) -> None:
        if t < self.now:
            raise ValueError(f"event at {t} scheduled before current time {self.now}")
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> tuple[int, str, object]:
        t, _, kind, payload = heapq.heappop(self._heap)
        self.now = t
        return t, kind, payload

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


def observe_timeout_us(cfg: ScenarioConfig) -> int:
    if cfg.inference.observe_timeout_ms is not None:
        return round(cfg.inference.observe_timeout_ms * 1000)
    return round((2 * cfg.channel.rtt_ms + cfg.channel.contention_delay_ms[1]) * 1000)


def effective_encaps(cfg: ScenarioConfig) -> EncapsulationConfig:
    if cfg.defenses.padding.mode != "none":
        return replace(cfg.encaps, padding=cfg.defenses.padding)
    return cfg.encaps


class World:
    """The simulated WLAN, AP, server and sniffer, as the attacker's ``net``."""

    def __init__(self, cfg: ScenarioConfig, *, record_trace: bool = True):
        self.cfg = cfg
        seed = cfg.seed
        self.rng_truth = random.Random(f"{seed}:truth")
        self.rng_channel = random.Random(f"{seed}:channel")
        self.rng_attacker = random.Random(f"{seed}:attacker")
        self.chan = cfg.channel
        self.encaps = effective_encaps(cfg)
        self._cacheable = self.encaps.padding.mode != "random"
        self._sizes: dict[int, int] = {}
        self.queue = EventQueue()
        self.now = 0
        self.limit_us = round(cfg.duration_limit_s * 1e6)
        self.timeout_us = observe_timeout_us(cfg)
        self.rtt_half_us = round(cfg.channel.rtt_ms * 500)
        self.trace: list[FrameObservation] | None = [] if record_trace else None
        self._buffer: list[FrameObservation] = []
        self._pending: list[PendingMsdu] = []

        home = cfg.channel.channels[0]
        self.victim_mac = cfg.victim.mac
        self.victim_channel = cfg.victim.channel if cfg.victim.channel is not None else home
        self.attacker_mac = cfg.attacker.mac
        self.bssid = cfg.bssid.lower()
        self.tuned = home
        self.victim_silent_until = 0

        s = cfg.server
        mod = 1 << s.bits
        lo, hi = cfg.inference.port_range
        self.client_port = cfg.true_client_port if cfg.true_client_port is not None \
            else self.rng_truth.randint(lo, hi)
        rcv_nxt = s.rcv_nxt if s.rcv_nxt is not None else self.rng_truth.randrange(mod)
        snd_una = s.snd_una if s.snd_una is not None else self.rng_truth.randrange(mod)
        options = OptionsProfile(s.timestamps, s.sack)
        self.endpoint = TcpEndpoint(s.ip, options, cfg.defenses.uniform)
        self.tuple = FourTuple(cfg.victim.ip, self.client_port, s.ip, s.port)
        self.state: ServerConnState | None = None
        if s.connection_open:
            self.state = self.endpoint.open(ServerConnState(
                self.tuple, rcv_nxt, s.rcv_wnd, snd_una, (snd_una + s.in_flight) % mod, s.snd_wnd,
                options, bits=s.bits))
        self.initial = {"client_port": self.client_port, "rcv_nxt": rcv_nxt, "snd_una": snd_una,
                        "snd_nxt": (snd_una + s.in_flight) % mod}

        bg = cfg.channel.background
        if bg is not None:
            self._bg_times = background_times(bg, 0, self.limit_us)
            self._bg_len = self._size(bg.packet_ip_len)
            self._schedule_background()
        live = cfg.live_traffic
        if live is not None and self.state is not None:
            self._live_step = max(1, round(live.chunk / live.bytes_per_s * 1e6))
            self._client_seq = rcv_nxt
            self.queue.push(self._live_step, "live")

    # -- helpers --------------------------------------------------------------

    def _size(self, ip_len: int) -> int:
        if not self._cacheable:
            return encapsulate(ip_len, self.encaps, self.rng_channel)
        size = self._sizes.get(ip_len)
        if size is None:
            size = self._sizes[ip_len] = encapsulate(ip_len, self.encaps)
        return size

    def _record(self, frame: FrameObservation) -> None:
        if self.trace is not None:
            self.trace.append(frame)

    def _air(self, t: int, channel: int, addr1: str, addr2: str, length: int, amsdu: bool = False) -> None:
        """A frame on the air: contention delay, then capture by any of the sniffers."""
        rng = self.rng_channel
        lo, hi = self.chan.contention_delay_ms
        t_air = t + (round(rng.uniform(lo, hi) * 1000) if hi > lo else round(lo * 1000))
        if channel != self.tuned:
            return
        loss = self.chan.loss_prob
        for _ in range(self.cfg.inference.sniffer_count):
            if rng.random() >= loss:
                break
        else:
            return
        frame = FrameObservation(t_air, channel, addr1, addr2, "Data", length, amsdu)
        self._buffer.append(frame)
        if self.trace is not None:
            self.trace.append(frame)

    def _to_victim(self, t: int, msdu_len: int, tid: int = 0) -> None:
        if t < self.victim_silent_until:
            return
        amsdu = self.chan.amsdu
        if amsdu is None:
            self._air(t, self.victim_channel, self.victim_mac, self.bssid, msdu_len)
            return
        self._pending.append(PendingMsdu(t, msdu_len, self.victim_mac, tid, self.bssid, self.victim_channel))
        self.queue.push(t + amsdu.max_delay_us + 1, "flush")

    def _flush(self, t: int) -> None:
        pending = self._pending
        if not pending or pending[-1].t + self.chan.amsdu.max_delay_us >= t:
            return  # a later arrival may still join; its own flush will run
        self._pending = []
        for frame in aggregate_amsdu(pending, self.chan.amsdu):
            self._air(frame.t, frame.channel, frame.addr1, frame.addr2, frame.observable_len, frame.amsdu)

    def _schedule_background(self) -> None:
        t = next(self._bg_times, None)
        if t is not None:
            self.queue.push(t, "background")

    # -- the event loop ---------------------------------------------------------

    def advance(self, t: int) -> None:
        """Process every event up to and including ``t``."""
        if t > self.limit_us:
            self.advance(self.limit_us)
            raise DurationExceeded(f"virtual time limit of {self.cfg.duration_limit_s} s reached")
        queue = self.queue
        heap = queue._heap
        while heap and heap[0][0] <= t:
            when, kind, payload = queue.pop()
            if kind == "server":
                _, ip_len = self.endpoint.handle(payload)
                if ip_len is not None:
                    queue.push(when + self.rtt_half_us, "downlink", ip_len)
            elif kind == "downlink":
                self._to_victim(when, self._size(payload))
            elif kind == "background":
                self._to_victim(when, self._bg_len, self.chan.background.tid)
                self._schedule_background()
            elif kind == "flush":
                self._flush(when)
            elif kind == "live":
                self._live(when)
        if t > self.now:
            self.now = t
        queue.now = self.now

    def _live(self, t: int) -> None:
        state = self.state
        if state is None or not state.open:
            return
        chunk = self.cfg.live_traffic.chunk
        data = bytes(self.rng_truth.getrandbits(8) for _ in range(chunk))
        seg = SegmentMeta(self.tuple, Flag.ACK | Flag.PSH, self._client_seq, state.snd_nxt, chunk, data)
        self._client_seq = (self._client_seq + chunk) % state.mod
        if t >= self.victim_silent_until:
            self._air(t, self.victim_channel, self.bssid, self.victim_mac, self._size(40 + 12 + chunk))
        self.queue.push(t + self.rtt_half_us, "server", seg)
        self.queue.push(t + self._live_step, "live")

    def take_frames(self, t0: int, t1: int) -> list[FrameObservation]:
        """Captured frames with ``t0 <= t < t1``, in time order; earlier ones are discarded."""
        keep, out = [], []
        for f in self._buffer:
            if f.t >= t1:
                keep.append(f)
            elif f.t >= t0:
                out.append(f)
        self._buffer = keep
        out.sort(key=lambda f: f.t)
        return out

    # -- attacker-facing actions ------------------------------------------------

    def send_forged(self, seg: SegmentMeta) -> int:
        """Inject a spoofed segment towards the server; returns its Ethernet-view length."""
        ip_len = 40 + seg.payload_len
        self._record(FrameObservation(self.now, self.tuned, self.bssid, self.attacker_mac, "Data",
                                      self._size(ip_len)))
        self.queue.push(self.now + self.rtt_half_us, "server", seg)
        return ETHERNET_VIEW + ip_len

    def arp_scan(self) -> list[tuple[str, str, int]]:
        t = self.now
        self._record(FrameObservation(t, self.tuned, BROADCAST, self.attacker_mac, "Data", self._size(ARP_IP_LEN)))
        found = []
        if not self.chan.ap_isolation:
            home = self.chan.channels[0]
            for host in (self.cfg.victim, *self.cfg.others):
                if self.rng_channel.random() < self.chan.loss_prob:
                    continue
                channel = host.channel if host.channel is not None else home
                self._record(FrameObservation(t + 1000, channel, self.attacker_mac, host.mac, "Data",
                                              self._size(ARP_IP_LEN)))
                found.append((host.mac, host.ip, channel))
        self.advance(t + self.timeout_us)
        return found

    def tune(self, channel: int) -> None:
        self.tuned = channel

    def evict(self, mac: str) -> int:
        effect = evict_supplicant(mac, self.chan)
        self.chan = effect.config
        self._record(FrameObservation(self.now, self.tuned, mac, self.bssid, "Mgmt", DEAUTH_FRAME_LEN))
        if mac == self.victim_mac:
            self.victim_silent_until = self.now + effect.gap_us
        return effect.gap_us

    # -- ground truth ---------------------------------------------------------

    def truth(self) -> dict:
        doc = dict(self.initial)
        state = self.state
        doc["connection_exists"] = state is not None
        if state is not None:
            doc.update(final_rcv_nxt=state.rcv_nxt, final_snd_una=state.snd_una, connection_open=state.open)
        return doc

    def sorted_trace(self) -> list[FrameObservation]:
        return sorted(self.trace or [], key=lambda f: f.t)


@dataclass
class Run:
    cfg: ScenarioConfig
    report: AttackReport
    trace: list[FrameObservation]
    probe_log: list[ProbeRecord]
    truth: dict = field(default_factory=dict)


def _action_effective(world: World, report: AttackReport) -> bool:
    state = world.state
    if state is None or report.action_seq is None:
        return False
    if world.cfg.action.kind == "reset":
        return not state.open
    payload = world.cfg.action.payload.encode()
    if not payload:
        return True
    offset = (report.action_seq - state.stream_base) % state.mod
    return bytes(state.stream[offset:offset + len(payload)]) == payload


def simulate(cfg: ScenarioConfig, record_trace: bool = True) -> Run:
    world = World(cfg, record_trace=record_trace)
    attacker = Attacker(world, cfg.inference, (cfg.server.ip, cfg.server.port), rng=world.rng_attacker,
                        timeout_us=world.timeout_us, action=cfg.action.kind,
                        payload=cfg.action.payload.encode())
    report = attacker.full_attack()
    # the attacker's verdict is its own belief; the outcome is what happened
    effective = _action_effective(world, report)
    if effective:
        report.outcome, report.failed_phase, report.reason = "success", None, None
    elif report.outcome == "success":
        report.outcome, report.failed_phase, report.reason = "failure", "action", "action had no effect"
    truth = world.truth()
    truth["action_effective"] = effective
    return Run(cfg, report, world.sorted_trace(), attacker.probe_log, truth)


def run_scenario(cfg: ScenarioConfig, record_trace: bool = True):
    """Run one scenario; returns ``(AttackReport, frame trace, probe log)``."""
    run = simulate(cfg, record_trace)
    return run.report, run.trace, run.probe_log


def derive_seed(master: int, index: int) -> int:
    digest = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class SweepRow(NamedTuple):
    value: object
    trials: int
    successes: int
    mean_virtual_time: float
    mean_probes: float
    mean_kbps: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


def run_sweep(base: ScenarioConfig, axis: str, values: list, trials: int) -> list[SweepRow]:
    """Cross ``values`` of the field at ``axis`` with ``trials`` seeded runs each.

    Trial ``i`` uses seed ``derive_seed(base.seed, i)`` in every cell, so cells
    differ only in the swept parameter.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rows = []
    cells = [with_value(base, axis, v) for v in values]
    for value, cell in zip(values, cells):
        wins = 0
        vt = probes = kbps = 0.0
        for i in range(trials):
            report = run_scenario(replace(cell, seed=derive_seed(base.seed, i)), record_trace=False)[0]
            wins += report.outcome == "success"
            vt += report.virtual_time
            probes += report.probes_sent
            kbps += report.bandwidth_kbps
        rows.append(SweepRow(value, trials, wins, vt / trials, probes / trials, kbps / trials))
    return rows


def ecdf(values: list[float]) -> list[tuple[float, float]]:
    if not values:
        raise ValueError("ECDF of an empty sample")
    ordered = sorted(values)
    n = len(ordered)
    points = []
    for i, v in enumerate(ordered, start=1):
        if points and points[-1][0] == v:
            points[-1] = (v, i / n)
        else:
            points.append((v, i / n))
    return points


def _probe_sequence(cfg: ScenarioConfig, port: int, rounds: int) -> list[str]:
    world = World(cfg, record_trace=False)
    attacker = Attacker(world, cfg.inference, (cfg.server.ip, cfg.server.port), rng=world.rng_attacker,
                        timeout_us=world.timeout_us)
    attacker.victim_mac = world.victim_mac
    tup = FourTuple(cfg.victim.ip, port, cfg.server.ip, cfg.server.port)
    for _ in range(rounds):
        attacker._send(attacker._syn_ack(tup), "port", port)
    return [r.observation for r in attacker.probe_log]


def observation_pair(cfg: ScenarioConfig, rounds: int | None = None) -> tuple[list[str], list[str]]:
    """Observation labels from SYN/ACK probes at the open port and at a closed one.

    Both sequences come from identically seeded worlds, so the channel
    behaves the same and any difference is due to the endpoint's responses.
    """
    rounds = cfg.inference.k_verify if rounds is None else rounds
    port = World(cfg, record_trace=False).client_port
    lo, hi = cfg.inference.port_range
    closed = lo + (port - lo + 1) % (hi - lo + 1) if hi > lo else (port % 65535) + 1
    return _probe_sequence(cfg, port, rounds), _probe_sequence(cfg, closed, rounds)


__all__ = [
    "EventQueue", "InferenceConfig", "Run", "SweepRow", "World", "derive_seed", "ecdf",
    "observation_pair", "observe_timeout_us", "run_scenario", "run_sweep", "simulate",
]
