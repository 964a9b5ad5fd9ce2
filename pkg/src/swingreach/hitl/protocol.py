"""Line-oriented text framing for the lockstep plant/controller link.

Each frame is one line ``KIND seq field ...\\n``. Floats are written with
``repr`` (shortest round-trip form, at most 17 significant digits), so
``decode(encode(f)) == f`` holds exactly for finite values.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Union

from ..plant import RelayStatus

PROTOCOL_VERSION = 1
MAX_LINE = 4096


class ProtocolError(ValueError):
    pass


class FrameKind(enum.Enum):
    STEP = "STEP"
    CMD = "CMD"
    HELLO = "HELLO"
    BYE = "BYE"


@dataclass(frozen=True)
class Step:
    seq: int
    t: float
    delta: float
    omega: float
    kind = FrameKind.STEP


@dataclass(frozen=True)
class Cmd:
    seq: int
    d: float
    relay: RelayStatus
    kind = FrameKind.CMD


@dataclass(frozen=True)
class Hello:
    seq: int
    version: int
    dt: float
    digest: str
    kind = FrameKind.HELLO


@dataclass(frozen=True)
class Bye:
    seq: int
    reason: str
    kind = FrameKind.BYE


Frame = Union[Step, Cmd, Hello, Bye]

# what repr(float) can produce; rejects Python-only spellings such as "1_0"
_FLOAT_RE = re.compile(r"[+-]?(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan)")
_UINT_RE = re.compile(r"\d+")

_RELAY_TOKENS = {RelayStatus.OPEN: "OPEN", RelayStatus.CLOSED: "CLOSED"}
_RELAY_PARSE = {v: k for k, v in _RELAY_TOKENS.items()}


def _num(x: float) -> str:
    return repr(float(x))


def _check_seq(seq) -> int:
    if isinstance(seq, bool) or not isinstance(seq, int) or not 0 <= seq < 2**64:
        raise ProtocolError(f"seq must be an unsigned 64-bit integer, got {seq!r}")
    return seq


def encode(frame: Frame) -> bytes:
    seq = _check_seq(frame.seq)
    if isinstance(frame, Step):
        body = f"STEP {seq} {_num(frame.t)} {_num(frame.delta)} {_num(frame.omega)}"
    elif isinstance(frame, Cmd):
        body = f"CMD {seq} {_num(frame.d)} {_RELAY_TOKENS[RelayStatus(frame.relay)]}"
    elif isinstance(frame, Hello):
        if not frame.digest or any(c.isspace() for c in frame.digest):
            raise ProtocolError("digest must be a non-empty token without whitespace")
        body = f"HELLO {seq} {int(frame.version)} {_num(frame.dt)} {frame.digest}"
    elif isinstance(frame, Bye):
        if "\n" in frame.reason or "\r" in frame.reason:
            raise ProtocolError("bye reason must be a single line")
        body = f"BYE {seq} {frame.reason}".rstrip(" ")
    else:
        raise ProtocolError(f"not a frame: {frame!r}")
    return (body + "\n").encode("ascii")


def _float(tok: str, text: str) -> float:
    if not _FLOAT_RE.fullmatch(tok):
        raise ProtocolError(f"bad number {tok!r} in {text!r}")
    return float(tok)


def decode(line: Union[bytes, str]) -> Frame:
    """Parse one frame; raises ProtocolError quoting the offending text."""
    if isinstance(line, bytes):
        try:
            text = line.decode("ascii")
        except UnicodeDecodeError:
            raise ProtocolError(f"non-ascii frame {line[:80]!r}") from None
    else:
        text = line
        if not text.isascii():
            raise ProtocolError(f"non-ascii frame {text[:80]!r}")
    if not text.endswith("\n"):
        raise ProtocolError(f"unterminated frame {text!r}")
    body = text[:-1]
    head, _, rest = body.partition(" ")
    try:
        kind = FrameKind(head)
    except ValueError:
        raise ProtocolError(f"unknown frame kind in {text!r}") from None
    seq_tok, _, rest = rest.partition(" ")
    if not _UINT_RE.fullmatch(seq_tok):
        raise ProtocolError(f"bad seq in {text!r}")
    seq = int(seq_tok)
    if seq >= 2**64:
        raise ProtocolError(f"seq out of range in {text!r}")
    if kind is FrameKind.BYE:
        return Bye(seq, rest)
    fields = rest.split(" ") if rest else []
    arity = {FrameKind.STEP: 3, FrameKind.CMD: 2, FrameKind.HELLO: 3}[kind]
    if len(fields) != arity or any(f == "" for f in fields):
        raise ProtocolError(f"{kind.value} expects {arity} fields: {text!r}")
    if kind is FrameKind.STEP:
        return Step(seq, *(_float(f, text) for f in fields))
    if kind is FrameKind.CMD:
        if fields[1] not in _RELAY_PARSE:
            raise ProtocolError(f"bad relay token {fields[1]!r} in {text!r}")
        return Cmd(seq, _float(fields[0], text), _RELAY_PARSE[fields[1]])
    if not _UINT_RE.fullmatch(fields[0]):
        raise ProtocolError(f"bad version in {text!r}")
    return Hello(seq, int(fields[0]), _float(fields[1], text), fields[2])


def frames_equal(a: Frame, b: Frame) -> bool:
    """Equality that treats NaN payloads as equal to themselves."""
    if type(a) is not type(b):
        return False
    for x, y in zip(a.__dict__.values(), b.__dict__.values()):
        if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
            continue
        if x != y:
            return False
    return True
