"""Line-oriented file formats.

Every file starts with a ``# wifihijack <kind> v<N>`` header line.  Traces
and logs are comma-separated; summaries are JSON after the header line.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from pathlib import Path
from typing import NamedTuple, TextIO

from .errors import TraceFormatError
from .link import FRAME_KINDS, FrameObservation

FORMAT_VERSION = 1
TRACE_COLUMNS = "t,channel,addr1,addr2,kind,observable_len,amsdu"
PROBE_COLUMNS = "t,guess_kind,guess_value,observation,eth_len"


def header(kind: str) -> str:
    return f"# wifihijack {kind} v{FORMAT_VERSION}"


class ProbeRecord(NamedTuple):
    """One forged segment and what the sniffer saw in its observation window."""

    t: int
    kind: str
    value: int
    observation: str
    eth_len: int


def observation_label(lengths: Iterable[int]) -> str:
    joined = "|".join(str(n) for n in lengths)
    return joined or "-"


def format_frame(f: FrameObservation) -> str:
    return f"{f.t},{f.channel},{f.addr1},{f.addr2},{f.kind},{f.observable_len},{int(f.amsdu)}"


def write_trace(out: TextIO, frames: Iterable[FrameObservation]) -> None:
    out.write(header("trace") + "\n")
    out.write(TRACE_COLUMNS + "\n")
    for f in frames:
        out.write(format_frame(f) + "\n")


def _check_header(line: str, kind: str, line_no: int) -> None:
    expected = f"# wifihijack {kind} v"
    if not line.startswith(expected):
        raise TraceFormatError(line_no, f"expected a '{expected}N' header")
    version = line[len(expected):].strip()
    if version != str(FORMAT_VERSION):
        raise TraceFormatError(line_no, f"unsupported {kind} format version {version!r}")


def parse_trace(lines: Iterable[str]) -> list[FrameObservation]:
    frames = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if line_no == 1:
            _check_header(line, "trace", line_no)
            continue
        if not line.strip() or line == TRACE_COLUMNS:
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise TraceFormatError(line_no, f"expected 7 fields, got {len(parts)}")
        t, channel, addr1, addr2, kind, length, amsdu = parts
        if kind not in FRAME_KINDS:
            raise TraceFormatError(line_no, f"unknown frame kind {kind!r}")
        if amsdu not in ("0", "1"):
            raise TraceFormatError(line_no, "amsdu flag must be 0 or 1")
        try:
            frames.append(FrameObservation(int(t), int(channel), addr1.lower(), addr2.lower(),
                                           kind, int(length), amsdu == "1"))
        except ValueError as exc:
            raise TraceFormatError(line_no, str(exc)) from None
    return frames


def read_trace(path: str | Path) -> list[FrameObservation]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def write_probe_log(out: TextIO, records: Iterable[ProbeRecord]) -> None:
    out.write(header("probes") + "\n")
    out.write(PROBE_COLUMNS + "\n")
    for r in records:
        out.write(f"{r.t},{r.kind},{r.value},{r.observation},{r.eth_len}\n")


def read_probe_log(path: str | Path) -> list[ProbeRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line_no == 1:
                _check_header(line, "probes", line_no)
                continue
            if not line or line == PROBE_COLUMNS:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise TraceFormatError(line_no, f"expected 5 fields, got {len(parts)}")
            try:
                records.append(ProbeRecord(int(parts[0]), parts[1], int(parts[2]), parts[3], int(parts[4])))
            except ValueError as exc:
                raise TraceFormatError(line_no, str(exc)) from None
    return records


def write_json_doc(out: TextIO, kind: str, doc: dict) -> None:
    out.write(header(kind) + "\n")
    out.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_json_doc(path: str | Path, kind: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        _check_header(first, kind, 1)
        try:
            return json.loads(fh.read())
        except json.JSONDecodeError as exc:
            raise TraceFormatError(exc.lineno + 1, exc.msg) from None


def write_table(out: TextIO, kind: str, columns: list[str], rows: Iterable[Iterable]) -> None:
    out.write(header(kind) + "\n")
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(_cell(v) for v in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return ""
    return str(value)
