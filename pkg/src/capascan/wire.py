"""Device serial-frame protocol: 16-byte frames, CRC-16/CCITT-FALSE.

Layout (little-endian fields, CRC big-endian):

    offset  size  field
    0       2     sync 0xAA 0x55
    2       1     version (0x01)
    3       1     line_id
    4       4     tick, u32 LE
    8       4     capacitance, i32 LE, attofarads (calibrated_pF * 1e6)
    12      1     capdac_index
    13      1     flags (bit0 recalibrated, bit1 saturated)
    14      2     CRC-16/CCITT-FALSE over bytes 2..13, big-endian

The parser scans for sync, validates length and CRC, drops bad frames,
and resynchronizes at the next sync pattern; it never raises on
malformed input.  Parsing is vectorized so million-frame streams decode
in well under a second.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FrameError
from .sensor import ScanSample

SYNC = b"\xaa\x55"
VERSION = 1
FRAME_LEN = 16
MAX_ABS_CAPACITANCE_PF = 2147.48  # i32 attofarad range

_HEADER = struct.Struct("<BBIi BB".replace(" ", ""))  # version..flags, 12 bytes


def _build_crc_table(poly=0x1021):
    table = np.zeros(256, dtype=np.uint16)
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table[byte] = crc
    return table


_CRC_TABLE = _build_crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    """Poly 0x1021, init 0xFFFF, no reflection ('123456789' -> 0x29B1)."""
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ int(_CRC_TABLE[(crc >> 8) ^ b])
    return crc


class Frame(NamedTuple):
    line_id: int
    tick: int
    capacitance_af: int
    capdac_index: int
    flags: int

    @property
    def calibrated_pf(self) -> float:
        return self.capacitance_af / 1e6

    @property
    def recalibrated(self) -> bool:
        return bool(self.flags & 1)

    @property
    def saturated(self) -> bool:
        return bool(self.flags & 2)


class FrameBatch:
    """Parsed frames held columnar (million-frame streams decode without
    materializing per-frame objects); behaves as a sequence of Frame."""

    __slots__ = ("line_id", "tick", "capacitance_af", "capdac_index", "flags")

    def __init__(self, line_id, tick, capacitance_af, capdac_index, flags):
        self.line_id = line_id
        self.tick = tick
        self.capacitance_af = capacitance_af
        self.capdac_index = capdac_index
        self.flags = flags

    @staticmethod
    def empty() -> "FrameBatch":
        return FrameBatch(
            np.zeros(0, np.uint8), np.zeros(0, np.uint64), np.zeros(0, np.int32),
            np.zeros(0, np.uint8), np.zeros(0, np.uint8),
        )

    @staticmethod
    def concat(batches) -> "FrameBatch":
        batches = list(batches)
        if not batches:
            return FrameBatch.empty()
        return FrameBatch(*(
            np.concatenate([getattr(b, name) for b in batches])
            for name in FrameBatch.__slots__
        ))

    def __len__(self):
        return int(self.tick.size)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return FrameBatch(*(getattr(self, name)[i] for name in self.__slots__))
        return Frame(
            int(self.line_id[i]),
            int(self.tick[i]),
            int(self.capacitance_af[i]),
            int(self.capdac_index[i]),
            int(self.flags[i]),
        )

    def __iter__(self):
        return map(
            Frame._make,
            zip(
                self.line_id.tolist(),
                self.tick.tolist(),
                self.capacitance_af.tolist(),
                self.capdac_index.tolist(),
                self.flags.tolist(),
            ),
        )


def encode_frame(sample: ScanSample, line_id: int, capdac_step_pf: float = 3.125) -> bytes:
    """Serialize one sample; raises FrameError beyond the i32 aF range."""
    if abs(sample.calibrated_pf) >= MAX_ABS_CAPACITANCE_PF:
        raise FrameError(
            f"calibrated capacitance {sample.calibrated_pf} pF exceeds the "
            f"+/-{MAX_ABS_CAPACITANCE_PF} pF wire range"
        )
    body = _HEADER.pack(
        VERSION,
        line_id & 0xFF,
        sample.tick,
        int(round(sample.calibrated_pf * 1e6)),
        int(round(sample.capdac_pf / capdac_step_pf)) & 0xFF,
        sample.flags & 0xFF,
    )
    return SYNC + body + crc16_ccitt_false(body).to_bytes(2, "big")


def frame_to_sample(frame: Frame, tick_distance_mm: float,
                    capdac_step_pf: float = 3.125) -> ScanSample:
    """Reconstruct the sample a frame carries (positions from the encoder)."""
    calibrated = frame.capacitance_af / 1e6
    capdac = frame.capdac_index * capdac_step_pf
    return ScanSample.from_flags(
        tick=frame.tick,
        along_track_mm=frame.tick * tick_distance_mm,
        raw_pf=calibrated - capdac,
        capdac_pf=capdac,
        calibrated_pf=calibrated,
        flags=frame.flags,
    )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


@dataclass
class ParseDiagnostics:
    frames: int = 0
    bad_crc: int = 0
    bytes_discarded: int = 0
    drop_offsets: list = field(default_factory=list)  # first 100 only

    def note_drop(self, offset):
        self.bad_crc += 1
        if len(self.drop_offsets) < 100:
            self.drop_offsets.append(int(offset))


def _validate_candidates(buf: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Vectorized CRC + version check for complete candidate frames."""
    if starts.size == 0:
        return np.zeros(0, dtype=bool)
    cols = np.add.outer(starts + 2, np.arange(12))
    data = buf[cols].astype(np.uint16)
    crc = np.full(starts.shape, 0xFFFF, dtype=np.uint16)
    for j in range(12):
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ data[:, j]) & 0xFF]
    stored = (buf[starts + 14].astype(np.uint16) << 8) | buf[starts + 15]
    return (crc == stored) & (buf[starts + 2] == VERSION)


class FrameParser:
    """Resumable frame scanner over byte chunks; one instance per stream."""

    def __init__(self):
        self._tail = b""
        self._offset = 0  # stream offset of tail[0]
        self.diagnostics = ParseDiagnostics()

    def feed(self, chunk: bytes) -> list[Frame]:
        data = self._tail + bytes(chunk)
        buf = np.frombuffer(data, dtype=np.uint8)
        n = buf.size

        sync_hits = np.nonzero((buf[:-1] == 0xAA) & (buf[1:] == 0x55))[0] if n >= 2 else \
            np.zeros(0, dtype=np.intp)
        complete = sync_hits[sync_hits + FRAME_LEN <= n]
        valid = _validate_candidates(buf, complete)

        vstarts = complete[valid]
        if vstarts.size < 2 or (np.diff(vstarts) >= FRAME_LEN).all():
            # valid candidates never overlap: accept them all and classify
            # the invalid ones (spurious syncs inside accepted frames are
            # payload bytes, not drops) without a python loop
            accepted = vstarts
            accepted_end = int(vstarts[-1]) + FRAME_LEN if vstarts.size else 0
            invalid = complete[~valid]
            if invalid.size:
                if accepted.size:
                    pos = np.searchsorted(accepted, invalid, side="right") - 1
                    prev = np.where(pos >= 0, accepted[np.maximum(pos, 0)], -FRAME_LEN)
                    outside = invalid >= prev + FRAME_LEN
                else:
                    outside = np.ones(invalid.size, dtype=bool)
                for off in invalid[outside].tolist():
                    self.diagnostics.note_drop(self._offset + off)
        else:
            taken = []
            accepted_end = 0
            for i, ok in zip(complete.tolist(), valid.tolist()):
                if i < accepted_end:
                    continue
                if ok:
                    taken.append(i)
                    accepted_end = i + FRAME_LEN
                else:
                    self.diagnostics.note_drop(self._offset + i)
            accepted = np.asarray(taken, dtype=np.intp)

        frames = self._extract(buf, accepted)

        # keep any suffix that could still become a frame: an incomplete
        # candidate, or a trailing partial sync
        keep_from = n
        incomplete = sync_hits[sync_hits + FRAME_LEN > n]
        pending = incomplete[incomplete >= accepted_end]
        if pending.size:
            keep_from = int(pending[0])
        elif n and buf[-1] == 0xAA and n - 1 >= accepted_end:
            keep_from = n - 1
        keep_from = max(keep_from, accepted_end)

        self.diagnostics.frames += len(frames)
        # everything before keep_from is final; whatever is not an
        # accepted frame in there was junk
        self.diagnostics.bytes_discarded += keep_from - FRAME_LEN * len(frames)

        self._tail = data[keep_from:]
        self._offset += keep_from
        return frames

    @staticmethod
    def _extract(buf: np.ndarray, starts: np.ndarray) -> "FrameBatch":
        """Columnar field extraction for accepted frame offsets."""
        if starts.size == 0:
            return FrameBatch.empty()
        le32 = np.array([1, 1 << 8, 1 << 16, 1 << 24], dtype=np.uint64)
        ticks = buf[np.add.outer(starts, np.arange(4, 8))].astype(np.uint64) @ le32
        caps = (
            (buf[np.add.outer(starts, np.arange(8, 12))].astype(np.uint64) @ le32)
            .astype(np.uint32)
            .view(np.int32)
        )
        return FrameBatch(
            line_id=buf[starts + 3].copy(),
            tick=ticks,
            capacitance_af=caps,
            capdac_index=buf[starts + 12].copy(),
            flags=buf[starts + 13].copy(),
        )

    def finish(self) -> list[Frame]:
        """Flush: any retained partial data is junk once the stream ends."""
        if self._tail:
            self.diagnostics.bytes_discarded += len(self._tail)
            self._tail = b""
        return []


def parse_stream(data: bytes) -> tuple[list[Frame], ParseDiagnostics]:
    """One-shot parse of a whole byte buffer."""
    parser = FrameParser()
    frames = parser.feed(data)
    parser.finish()
    return frames, parser.diagnostics
