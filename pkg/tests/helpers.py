"""Scenario builders and independent oracles shared by the tests."""

from __future__ import annotations

from dataclasses import replace

from wifihijack.attacker import Attacker, InferenceConfig
from wifihijack.config import ScenarioConfig, ServerSpec
from wifihijack.endpoint import Flag, FourTuple, SegmentMeta, ServerConnState, TcpResponse
from wifihijack.link import ChannelConfig
from wifihijack.sim import World

SMALL_RANGE = (40000, 40063)


def scenario(*, port_range=SMALL_RANGE, seed=1, channel=None, server=None, **inference) -> ScenarioConfig:
    cfg = ScenarioConfig(seed=seed, inference=InferenceConfig(port_range=port_range, **inference))
    if channel is not None:
        cfg = replace(cfg, channel=channel)
    if server is not None:
        cfg = replace(cfg, server=server)
    return cfg


def lossless(**kw) -> ChannelConfig:
    return ChannelConfig(**kw)


def armed(cfg: ScenarioConfig) -> tuple[World, Attacker]:
    """A world plus an attacker that already knows who the victim is."""
    world = World(cfg, record_trace=False)
    attacker = Attacker(world, cfg.inference, (cfg.server.ip, cfg.server.port), rng=world.rng_attacker,
                        timeout_us=world.timeout_us, action=cfg.action.kind,
                        payload=cfg.action.payload.encode())
    attacker.victim_mac = world.victim_mac
    return world, attacker


def reduced(rcv_nxt=None, snd_una=None, *, seed=1, k_verify=3, rcv_wnd=1000, snd_wnd=1000, **kw) -> ScenarioConfig:
    """A scenario in the 2**16 sequence space with the connection on port 40000.

    The seq-phase probes carry an acknowledgment number just past snd_nxt,
    which is Invalid, so in-window probes never alter the connection.
    """
    probe_ack = None if snd_una is None else (snd_una + 1) % (1 << 16)
    return ScenarioConfig(
        seed=seed,
        true_client_port=40000,
        server=ServerSpec(bits=16, rcv_nxt=rcv_nxt, snd_una=snd_una, rcv_wnd=rcv_wnd, snd_wnd=snd_wnd, **kw),
        inference=InferenceConfig(port_range=(40000, 40000), k_verify=k_verify, seq_bits=16,
                                  seq_probe_ack=probe_ack),
    )


# -- independent response oracle -----------------------------------------------
#
# Signed-difference arithmetic in the style of a kernel's before()/after(),
# kept deliberately separate from the interval code under test.

SYN, RST, ACK = int(Flag.SYN), int(Flag.RST), int(Flag.ACK)


def signed(x: int, mod: int) -> int:
    x %= mod
    return x - mod if x >= mod // 2 else x


def oracle_response(state: ServerConnState, seg: SegmentMeta) -> TcpResponse:
    mod = 1 << state.bits
    flags = int(seg.flags)
    if not state.open:
        return TcpResponse.SILENCE if flags & RST else TcpResponse.RST
    if flags & SYN:
        return TcpResponse.CHALLENGE_ACK
    d = signed(seg.seq - state.rcv_nxt, mod)
    in_rcv_window = 0 <= (seg.seq - state.rcv_nxt) % mod < state.rcv_wnd
    if flags & RST:
        if d == 0:
            return TcpResponse.CONNECTION_RESET
        return TcpResponse.CHALLENGE_ACK if in_rcv_window else TcpResponse.SILENCE
    if not flags & ACK:
        return TcpResponse.SILENCE
    a = signed(seg.ack - state.snd_una, mod)
    in_flight = (state.snd_nxt - state.snd_una) % mod
    ack_ok = -state.snd_wnd < a <= in_flight
    ack_challenge = -mod // 2 < a <= -state.snd_wnd
    n = seg.payload_len
    if n == 0:
        if not in_rcv_window:
            return TcpResponse.DUP_ACK
        return TcpResponse.CHALLENGE_ACK if ack_challenge else TcpResponse.SILENCE
    if d + n <= 0:
        return TcpResponse.SACK_ACK if state.options.sack_enabled else TcpResponse.DUP_ACK
    if d > state.rcv_wnd:
        return TcpResponse.DUP_ACK
    if ack_ok:
        return TcpResponse.ACCEPT_DATA
    return TcpResponse.CHALLENGE_ACK if ack_challenge else TcpResponse.SILENCE


def tuple_for(state_tuple: FourTuple | None = None) -> FourTuple:
    return state_tuple or FourTuple("192.168.1.7", 40000, "203.0.113.10", 22)


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
