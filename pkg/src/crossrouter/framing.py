"""ChannelFrame: sync word, length, payload and CRC-16/CCITT over length + payload.

Frames travel as bit sequences. Receivers may hand back bits with erasures
(``None``) when symbols were lost; deframing then reports a
:class:`~crossrouter.errors.CrcMismatch` carrying the recovered bits.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CrcMismatch, NoPreamble

SYNC = 0x2DD4
MAX_FRAME_PAYLOAD = 0xFFFF
HEADER_BITS = 32
CRC_BITS = 16


def crc16(data: bytes) -> int:
    """CRC-16/CCITT (poly 0x1021, init 0xFFFF)."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class ChannelFrame:
    payload: bytes
    preamble: int = SYNC

    @property
    def length(self) -> int:
        return len(self.payload)

    @property
    def checksum(self) -> int:
        return crc16(struct.pack(">H", self.length) + self.payload)

    def to_bytes(self) -> bytes:
        return struct.pack(">HH", self.preamble, self.length) + self.payload + struct.pack(">H", self.checksum)

    def to_bits(self) -> list[int]:
        return bytes_to_bits(self.to_bytes())

    @property
    def n_bits(self) -> int:
        return 8 * (len(self.payload) + 6)


def frame_payload(payload: bytes) -> list[ChannelFrame]:
    payload = bytes(payload)
    if not payload:
        return [ChannelFrame(b"")]
    frames = [ChannelFrame(payload[i:i + MAX_FRAME_PAYLOAD]) for i in range(0, len(payload), MAX_FRAME_PAYLOAD)]
    if len(frames[-1].payload) == MAX_FRAME_PAYLOAD:
        frames.append(ChannelFrame(b""))  # a full frame always announces a continuation
    return frames


def bytes_to_bits(data: bytes) -> list[int]:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)).tolist()


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    arr = np.asarray(bits, dtype=np.uint8)
    return np.packbits(arr).tobytes()


def frames_to_bits(frames: Iterable[ChannelFrame]) -> list[int]:
    out: list[int] = []
    for f in frames:
        out.extend(f.to_bits())
    return out


def _value(bits: Sequence[Optional[int]]) -> Optional[int]:
    v = 0
    for b in bits:
        if b is None:
            return None
        v = (v << 1) | b
    return v


def _find_sync(bits: Sequence[Optional[int]], start: int) -> int:
    target = [(SYNC >> (15 - i)) & 1 for i in range(16)]
    n = len(bits)
    for pos in range(start, n - 15):
        if list(bits[pos:pos + 16]) == target:
            return pos
    return -1


def deframe_bits(bits: Sequence[Optional[int]], max_frames: Optional[int] = None,
                 aligned: bool = False) -> bytes:
    """Recover the payload from concatenated frame bits.

    With ``aligned`` the first frame must start at bit 0 (direct channels know
    their symbol boundaries); otherwise the sync word is searched for. A frame
    with erasures or a bad CRC raises :class:`CrcMismatch` whose ``bits`` span
    everything from the first sync word on.
    """
    bits = list(bits)
    first = 0 if aligned and _value(bits[:16]) == SYNC else _find_sync(bits, 0)
    if first < 0:
        raise NoPreamble("no frame sync word in the received bits")
    pos = first
    payload = bytearray()
    index = 0
    while True:
        length = _value(bits[pos + 16:pos + 32]) if pos + 32 <= len(bits) else None
        end = pos + 32 + 8 * (length or 0) + CRC_BITS
        if length is None or end > len(bits):
            raise CrcMismatch(bits[first:], index, f"frame {index} is truncated or its length is erased")
        body = bits[pos + 16:end - CRC_BITS]
        crc = _value(bits[end - CRC_BITS:end])
        if any(b is None for b in body) or crc is None or crc16(bits_to_bytes(body)) != crc:
            raise CrcMismatch(bits[first:], index)
        payload += bits_to_bytes(body[16:])
        index += 1
        if length < MAX_FRAME_PAYLOAD or (max_frames is not None and index >= max_frames):
            break
        nxt = end if _value(bits[end:end + 16]) == SYNC else -1
        if nxt < 0:
            raise CrcMismatch(bits[first:], index, "continuation frame missing")
        pos = nxt
    return bytes(payload)


def deframe(frames: Iterable[ChannelFrame]) -> bytes:
    return deframe_bits(frames_to_bits(frames), aligned=True)


def bit_error_rate(received: Sequence[Optional[int]], truth: Sequence[int]) -> float:
    """Position-wise bit errors over the truth length; erased or missing bits count as errors."""
    n = len(truth)
    if n == 0:
        return 0.0
    got = list(received[:n]) + [None] * max(0, n - len(received))
    return sum(1 for g, t in zip(got, truth) if g is None or g != t) / n
