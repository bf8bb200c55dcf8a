"""Server-side TCP endpoint with RFC 5961 challenge-ACK behaviour.

Only the *response taxonomy* is modelled: given an incoming segment, which
of silence, RST, duplicate ACK, challenge ACK or SACK-carrying ACK goes back
to the peer, and how large that response is on the wire.  Connections are
pre-opened; there is no handshake, retransmission or congestion control.

Sequence arithmetic is done in a modular space of ``2**bits`` values.  The
default is the real 32-bit space; a 16-bit space lets tests enumerate every
sequence and acknowledgment value exhaustively.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ConfigError

IP_HEADER = 20
TCP_HEADER = 20
# 10-byte timestamp option plus two bytes of NOP padding
TIMESTAMP_OPTION = 12
# one SACK block (2 + 8 bytes) plus two bytes of NOP padding
SACK_OPTION = 12


class Flag(enum.IntFlag):
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


_SYN, _RST, _ACK = int(Flag.SYN), int(Flag.RST), int(Flag.ACK)


class FourTuple(NamedTuple):
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int


class OptionsProfile(NamedTuple):
    timestamps_enabled: bool = True
    sack_enabled: bool = True


class SegmentMeta(NamedTuple):
    """A TCP segment reduced to what the receiver's checks look at.

    ``data`` is optional; when absent, accepted payload is filled with zero
    bytes so that stream offsets stay meaningful.
    """

    tuple: FourTuple
    flags: Flag
    seq: int
    ack: int
    payload_len: int = 0
    data: bytes | None = None


class TcpResponse(enum.Enum):
    SILENCE = "silence"
    RST = "rst"
    DUP_ACK = "dup_ack"
    CHALLENGE_ACK = "challenge_ack"
    SACK_ACK = "sack_ack"
    ACCEPT_DATA = "accept_data"
    CONNECTION_RESET = "connection_reset"


class AckClass(enum.Enum):
    CHALLENGE = "challenge"
    ACCEPTABLE = "acceptable"
    INVALID = "invalid"


class SeqClass(enum.Enum):
    OLD_DUPLICATE = "old_duplicate"
    ACCEPTABLE = "acceptable"
    BEYOND_WINDOW = "beyond_window"
    UNREACHABLE = "unreachable"


def mod_in_window(x: int, lo: int, length: int, bits: int = 32) -> bool:
    """True iff ``x`` lies in the half-open modular interval ``[lo, lo+length)``."""
    mod = 1 << bits
    if not 0 <= length <= mod:
        raise ValueError(f"interval length {length} outside [0, 2**{bits}]")
    return (x - lo) % mod < length


@dataclass
class ServerConnState:
    tuple: FourTuple
    rcv_nxt: int
    rcv_wnd: int
    snd_una: int
    snd_nxt: int
    snd_wnd: int
    options: OptionsProfile = OptionsProfile()
    open: bool = True
    bits: int = 32
    # sequence number of stream offset 0; defaults to the initial rcv_nxt
    stream_base: int | None = None
    stream: bytearray = field(default_factory=bytearray)
    out_of_order: dict[int, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 8 <= self.bits <= 32:
            raise ConfigError(f"sequence space of 2**{self.bits} not supported")
        mod = 1 << self.bits
        for name in ("rcv_nxt", "snd_una", "snd_nxt"):
            value = getattr(self, name)
            if not 0 <= value < mod:
                raise ConfigError(f"{name}={value} outside the 2**{self.bits} space")
        # windows stay below a quarter of the space so the challenge window
        # is never narrower than a quarter
        limit = 1 << (self.bits - 2)
        if not 0 < self.rcv_wnd < limit:
            raise ConfigError(f"rcv_wnd={self.rcv_wnd} must be in (0, {limit})")
        if not 0 <= self.snd_wnd < limit:
            raise ConfigError(f"snd_wnd={self.snd_wnd} must be in [0, {limit})")
        if (self.snd_nxt - self.snd_una) % mod > self.half - 1:
            raise ConfigError("unacknowledged data exceeds half the sequence space")
        for port in (self.tuple.client_port, self.tuple.server_port):
            if not 0 <= port <= 65535:
                raise ConfigError(f"port {port} out of range")
        if self.tuple.client_port == 0:
            raise ConfigError("established connections need a non-zero client port")
        if self.stream_base is None:
            self.stream_base = self.rcv_nxt

    @property
    def mod(self) -> int:
        return 1 << self.bits

    @property
    def half(self) -> int:
        return 1 << (self.bits - 1)


def classify_ack(state: ServerConnState, seg_ack: int) -> AckClass:
    """Place an acknowledgment number relative to the send window.

    Acceptable: ``(snd_una - snd_wnd, snd_nxt]``.
    Challenge:  ``[snd_una - 2**(bits-1) + 1, snd_una - snd_wnd]``.
    Invalid:    everything else, i.e. ``(snd_nxt, snd_una - 2**(bits-1)]``.
    """
    if not state.open:
        raise ValueError("acknowledgment classification needs an open connection")
    bits, una, wnd = state.bits, state.snd_una, state.snd_wnd
    in_flight = (state.snd_nxt - una) % state.mod
    if mod_in_window(seg_ack, una - wnd + 1, in_flight + wnd, bits):
        return AckClass.ACCEPTABLE
    if mod_in_window(seg_ack, una - state.half + 1, state.half - wnd, bits):
        return AckClass.CHALLENGE
    return AckClass.INVALID


def classify_seq(state: ServerConnState, seg_seq: int, payload_len: int) -> SeqClass:
    """Place a data segment's sequence number relative to the receive window.

    With ``r = rcv_nxt``, ``w = rcv_wnd``, ``n = payload_len``, ``H = 2**(bits-1)``:

    * OldDuplicate  ``(r - H, r - n]``      H - n values
    * Acceptable    ``[r - n + 1, r + w]``  w + n values
    * BeyondWindow  ``(r + w, r + H)``      H - w - 1 values

    The three intervals cover all but one value; the residue is exactly
    ``r + H`` (equivalently ``r - H``) and is reported as Unreachable.
    """
    if not state.open:
        raise ValueError("sequence classification needs an open connection")
    if payload_len < 1:
        raise ValueError("sequence classification is for data segments only")
    bits, r, half = state.bits, state.rcv_nxt, state.half
    if mod_in_window(seg_seq, r - half + 1, half - payload_len, bits):
        return SeqClass.OLD_DUPLICATE
    if mod_in_window(seg_seq, r - payload_len + 1, state.rcv_wnd + payload_len, bits):
        return SeqClass.ACCEPTABLE
    if mod_in_window(seg_seq, r + state.rcv_wnd + 1, half - state.rcv_wnd - 1, bits):
        return SeqClass.BEYOND_WINDOW
    return SeqClass.UNREACHABLE


def handle_segment(state: ServerConnState | None, seg: SegmentMeta) -> TcpResponse:
    """Process one incoming segment and return the response it provokes.

    Mutates ``state`` for resets, accepted data and advancing ACKs.
    """
    flags = int(seg.flags)  # plain int: IntFlag arithmetic is slow on the hot path
    if flags & _SYN and flags & _RST:
        raise ValueError("segment carries both SYN and RST")
    if state is None or not state.open:
        # a RST is never answered with a RST
        return TcpResponse.SILENCE if flags & _RST else TcpResponse.RST

    if flags & _SYN:
        return TcpResponse.CHALLENGE_ACK

    if flags & _RST:
        if seg.seq == state.rcv_nxt:
            state.open = False
            return TcpResponse.CONNECTION_RESET
        if mod_in_window(seg.seq, state.rcv_nxt, state.rcv_wnd, state.bits):
            return TcpResponse.CHALLENGE_ACK
        return TcpResponse.SILENCE

    if not flags & _ACK:
        return TcpResponse.SILENCE

    if seg.payload_len == 0:
        return _handle_pure_ack(state, seg)

    seq_class = classify_seq(state, seg.seq, seg.payload_len)
    if seq_class in (SeqClass.OLD_DUPLICATE, SeqClass.UNREACHABLE):
        # the residue sits exactly half the space behind rcv_nxt; a signed
        # 32-bit "before" comparison treats it as old data too
        return TcpResponse.SACK_ACK if state.options.sack_enabled else TcpResponse.DUP_ACK
    if seq_class is SeqClass.BEYOND_WINDOW:
        return TcpResponse.DUP_ACK

    ack_class = classify_ack(state, seg.ack)
    if ack_class is AckClass.INVALID:
        return TcpResponse.SILENCE
    if ack_class is AckClass.CHALLENGE:
        return TcpResponse.CHALLENGE_ACK
    _advance_snd_una(state, seg.ack)
    _accept_payload(state, seg)
    return TcpResponse.ACCEPT_DATA


def _handle_pure_ack(state: ServerConnState, seg: SegmentMeta) -> TcpResponse:
    if not mod_in_window(seg.seq, state.rcv_nxt, state.rcv_wnd, state.bits):
        return TcpResponse.DUP_ACK
    ack_class = classify_ack(state, seg.ack)
    if ack_class is AckClass.CHALLENGE:
        return TcpResponse.CHALLENGE_ACK
    if ack_class is AckClass.ACCEPTABLE:
        _advance_snd_una(state, seg.ack)
    return TcpResponse.SILENCE


def _advance_snd_una(state: ServerConnState, ack: int) -> None:
    in_flight = (state.snd_nxt - state.snd_una) % state.mod
    if 0 < (ack - state.snd_una) % state.mod <= in_flight:
        state.snd_una = ack


def _accept_payload(state: ServerConnState, seg: SegmentMeta) -> None:
    mod = state.mod
    data = seg.data if seg.data is not None else bytes(seg.payload_len)
    behind = (state.rcv_nxt - seg.seq) % mod
    if behind < seg.payload_len:
        # overlaps rcv_nxt: keep only the new suffix
        _deliver(state, data[behind:])
        _drain_out_of_order(state)
    else:
        # nothing can drain: rcv_nxt did not move
        state.out_of_order[seg.seq] = data


def _deliver(state: ServerConnState, data: bytes) -> None:
    state.stream += data
    state.rcv_nxt = (state.rcv_nxt + len(data)) % state.mod


def _drain_out_of_order(state: ServerConnState) -> None:
    mod, half = state.mod, state.half
    progressed = True
    while progressed and state.out_of_order:
        progressed = False
        for start in list(state.out_of_order):
            data = state.out_of_order[start]
            behind = (state.rcv_nxt - start) % mod
            if behind >= half:
                continue  # still ahead of rcv_nxt
            del state.out_of_order[start]
            if behind < len(data):
                _deliver(state, data[behind:])
                progressed = True


def response_ip_length(kind: TcpResponse, options: OptionsProfile = OptionsProfile()) -> int:
    """IPv4 packet length of the response a given outcome puts on the wire.

    AcceptData and ConnectionReset are sized like a plain ACK.
    """
    if kind is TcpResponse.SILENCE:
        raise ValueError("silence has no packet length")
    if kind is TcpResponse.RST:
        return IP_HEADER + TCP_HEADER
    length = IP_HEADER + TCP_HEADER
    if options.timestamps_enabled:
        length += TIMESTAMP_OPTION
    if kind is TcpResponse.SACK_ACK:
        length += SACK_OPTION
    return length


class TcpEndpoint:
    """A host holding any number of pre-opened connections.

    ``uniform`` is an optional response-uniformisation policy (see
    :mod:`wifihijack.defenses`); when enabled every emitted control response
    reports the policy's canonical length.
    """

    def __init__(self, ip: str, options: OptionsProfile = OptionsProfile(), uniform=None):
        self.ip = ip
        self.options = options
        self.uniform = uniform
        self.connections: dict[FourTuple, ServerConnState] = {}

    def open(self, state: ServerConnState) -> ServerConnState:
        if state.tuple.server_ip != self.ip:
            raise ConfigError("connection does not terminate at this endpoint")
        self.connections[state.tuple] = state
        return state

    def handle(self, seg: SegmentMeta) -> tuple[TcpResponse, int | None]:
        """Return the response kind and the IP length emitted, or ``None`` for no packet."""
        kind = handle_segment(self.connections.get(seg.tuple), seg)
        return kind, self.emitted_length(kind)

    def emitted_length(self, kind: TcpResponse) -> int | None:
        uniform = self.uniform
        if kind is TcpResponse.CONNECTION_RESET:
            # an accepted RST tears the connection down without a reply
            return None
        if kind is TcpResponse.SILENCE:
            if uniform is not None and uniform.enabled and uniform.respond_always:
                return uniform.canonical_ip_len
            return None
        if uniform is not None and uniform.enabled and kind is not TcpResponse.ACCEPT_DATA:
            return uniform.canonical_ip_len
        return response_ip_length(kind, self.options)
