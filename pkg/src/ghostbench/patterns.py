"""Seeded binary illumination pattern sequences and the GPAT1 stack format.

Every cell bit is a pure function of ``(seed, pattern index, cell index)``,
so any prefix or subset of a sequence can be regenerated independently.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .cellmaps import CellMap, RetinaSpec, cell_map_for_stage
from .core import RoiSpec

FAMILIES = ("uniform", "temporal", "spatial", "tsv")
_FAMILY_TAG = {name: i for i, name in enumerate(FAMILIES)}
MAGIC = b"GPAT"
VERSION = 1
_TAG_SCHEDULE = 1
_TAG_RETINA = 2


class PatternError(ValueError):
    pass


class StackFormatError(PatternError):
    """Malformed, truncated, or corrupted GPAT1 file."""


@dataclass(frozen=True)
class Schedule:
    """Resolution ladder ``[(m_k, n_k), ...]`` for temporally variable sequences."""

    actual_resolution: int
    stages: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((int(m), int(n)) for m, n in self.stages))
        total = 0
        for k, (m, n) in enumerate(self.stages):
            if k and m != 2 * self.stages[k - 1][0]:
                raise PatternError(f"stage sizes must double, got {self.stages}")
            total += n
            if n <= 0 or total != m * m:
                raise PatternError(f"stage {k} count {n} breaks cumulative m_k^2 rule")
        if not self.stages or self.stages[-1][0] > self.actual_resolution:
            raise PatternError("schedule must be non-empty and not exceed the actual resolution")

    @property
    def total(self) -> int:
        return sum(n for _, n in self.stages)

    def boundaries(self) -> list[int]:
        """Cumulative pattern count at the end of each stage."""
        return [int(v) for v in np.cumsum([n for _, n in self.stages])]

    def stage_of(self, count: int) -> np.ndarray:
        """Stage index of each of the first ``count`` patterns."""
        reps = [n for _, n in self.stages]
        idx = np.repeat(np.arange(len(reps)), reps)
        if count > idx.size:
            raise PatternError(f"schedule holds {idx.size} patterns, {count} requested")
        return idx[:count]


def build_schedule(actual_resolution: int, lowest_resolution: int) -> Schedule:
    """Doubling ladder from ``lowest_resolution`` to ``actual_resolution`` cells per side."""
    M, m = int(actual_resolution), int(lowest_resolution)
    if m < 1 or m > M:
        raise PatternError(f"lowest resolution {m} must be in [1, {M}]")
    ratio = M // m
    if M % m or ratio & (ratio - 1):
        raise PatternError(f"{M}/{m} is not a power of two; no doubling ladder exists")
    stages, done = [], 0
    while m <= M:
        stages.append((m, m * m - done))
        done = m * m
        m *= 2
    return Schedule(M, tuple(stages))


@dataclass(frozen=True)
class Pattern:
    """One binary mask ``S_i`` with the cell map it was drawn on."""

    width: int
    height: int
    bits: np.ndarray
    source_cell_map: CellMap
    index: int

    def mask(self) -> np.ndarray:
        return self.bits.reshape(self.height, self.width)

    def packed(self) -> bytes:
        return np.packbits(self.mask(), axis=1).tobytes()


def _pattern_keys(seed: int, start: int, count: int) -> np.ndarray:
    base = kernels.mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    return kernels.stream_words(np.uint64(base), start, count)


@dataclass(frozen=True, eq=False)
class PatternSequence:
    """Ordered stack of binary masks plus the metadata that generated them.

    ``masks`` is a read-only ``(T, height, width)`` uint8 array of 0/1 values;
    ``stage_index[i]`` selects the entry of ``cell_maps`` used by pattern ``i``.
    """

    masks: np.ndarray
    family: str
    seed: int
    actual_resolution: int
    cell_maps: tuple[CellMap, ...]
    stage_index: np.ndarray
    schedule: Schedule | None = None
    retina: RetinaSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.uint8)
        masks.setflags(write=False)
        stage = np.asarray(self.stage_index, dtype=np.int64)
        stage.setflags(write=False)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "stage_index", stage)
        if masks.ndim != 3 or len(stage) != len(masks):
            raise PatternError("masks must be (T, H, W) with one stage index per pattern")

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i: int) -> Pattern:
        i = range(len(self))[i]
        return Pattern(self.width, self.height, self.masks[i].ravel(),
                       self.cell_maps[self.stage_index[i]], i)

    @property
    def count(self) -> int:
        return len(self.masks)

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    def matrix(self, dtype=np.float64) -> np.ndarray:
        """``(T, height*width)`` measurement matrix (cached per dtype)."""
        key = np.dtype(dtype).str
        if key not in self._cache:
            m = self.masks.reshape(len(self), -1).astype(dtype)
            m.setflags(write=False)
            self._cache[key] = m
        return self._cache[key]

    def cell_blocks(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per-stage factorization ``S[rows] = B @ C``.

        Returns ``(rows, B, cell_of_pixel)`` triples where ``B`` is the
        ``(len(rows), cell_count)`` 0/1 matrix of cell bits and ``C`` is the
        pixel-to-cell indicator given by ``cell_of_pixel``.
        """
        if "blocks" not in self._cache:
            flat = self.masks.reshape(len(self), -1)
            blocks = []
            for k, cmap in enumerate(self.cell_maps):
                rows = np.flatnonzero(self.stage_index == k)
                if not rows.size:
                    continue
                first = cmap.cell_rects[:, 1] * self.width + cmap.cell_rects[:, 0]
                B = flat[rows][:, first].astype(np.float64)
                blocks.append((rows, B, cmap.cell_of_pixel))
            self._cache["blocks"] = blocks
        return self._cache["blocks"]

    @cached_property
    def digest(self) -> str:
        """SHA-256 over the packed masks and generation metadata."""
        h = hashlib.sha256()
        h.update(_header_bytes(self))
        h.update(np.packbits(self.masks, axis=2).tobytes())
        return h.hexdigest()

    def identifier(self) -> str:
        return f"{self.family}-M{self.actual_resolution}-T{self.count}-seed{self.seed}"

    def __eq__(self, other):
        if not isinstance(other, PatternSequence):
            return NotImplemented
        return (
            self.family == other.family and self.seed == other.seed
            and self.schedule == other.schedule and self.retina == other.retina
            and self.actual_resolution == other.actual_resolution
            and np.array_equal(self.masks, other.masks)
            and np.array_equal(self.stage_index, other.stage_index)
        )

    __hash__ = None


def _stage_plan(family, actual_resolution, schedule, retina):
    """Return ``(cell_maps, per-stage counts or None)`` for a family."""
    M = actual_resolution
    if family == "uniform":
        return (cell_map_for_stage(None, M, M),), None
    if family == "spatial":
        return (cell_map_for_stage(retina, M, M),), None
    base = None if family == "temporal" else retina
    maps = tuple(cell_map_for_stage(base, M, m) for m, _ in schedule.stages)
    return maps, [n for _, n in schedule.stages]


def generate_sequence(family: str, actual_resolution: int, count: int,
                      schedule: Schedule | None = None, retina: RetinaSpec | None = None,
                      seed: int = 0) -> PatternSequence:
    """Draw ``count`` seeded Bernoulli(1/2)-per-cell patterns for one family.

    ``uniform`` uses 1-pixel cells and ``spatial`` the finest retina map for all
    patterns. ``temporal`` and ``tsv`` walk ``schedule`` stage by stage and
    stop after ``count`` patterns.
    """
    if family not in FAMILIES:
        raise PatternError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if count <= 0:
        raise PatternError("pattern count must be positive")
    if family in ("temporal", "tsv") and schedule is None:
        raise PatternError(f"family {family!r} requires a schedule")
    if family in ("spatial", "tsv") and retina is None:
        raise PatternError(f"family {family!r} requires a retina spec")
    if schedule is not None and schedule.actual_resolution != actual_resolution:
        raise PatternError("schedule resolution differs from the actual resolution")
    if family in ("uniform", "spatial"):
        schedule = None
    if family in ("uniform", "temporal"):
        retina = None

    maps, counts = _stage_plan(family, actual_resolution, schedule, retina)
    if counts is None:
        stage = np.zeros(count, dtype=np.int64)
    else:
        stage = schedule.stage_of(count)
    keys = _pattern_keys(seed, 0, count)
    M = actual_resolution
    masks = np.empty((count, M, M), dtype=np.uint8)
    for k, cmap in enumerate(maps):
        sel = np.flatnonzero(stage == k)
        if sel.size:
            masks[sel] = kernels.pattern_masks(keys[sel], cmap.cell_of_pixel).reshape(-1, M, M)
    return PatternSequence(masks, family, int(seed), M, maps, stage, schedule, retina)


# -- GPAT1 stack format -----------------------------------------------------------
#
#   "GPAT" | u8 version=1 | u32 width | u32 height | u32 count | u8 family | u64 seed
#   u32 tlv_length | TLV entries (u8 tag, u32 length, payload)
#   count * height * ceil(width/8) bytes of masks, rows MSB-first, byte padded
#   u32 CRC32 of everything above
# All integers little-endian.

def _tlv_block(seq: PatternSequence) -> bytes:
    out = b""
    if seq.schedule is not None:
        s = seq.schedule
        payload = struct.pack("<II", s.actual_resolution, len(s.stages))
        payload += b"".join(struct.pack("<II", m, n) for m, n in s.stages)
        out += struct.pack("<BI", _TAG_SCHEDULE, len(payload)) + payload
    if seq.retina is not None:
        r = seq.retina
        payload = struct.pack("<dddIdI", r.roi.center_x, r.roi.center_y, r.roi.radius,
                              r.roi_cell_size, r.ring_growth, r.max_cell_size)
        out += struct.pack("<BI", _TAG_RETINA, len(payload)) + payload
    return out


def _header_bytes(seq: PatternSequence) -> bytes:
    tlv = _tlv_block(seq)
    return (MAGIC + struct.pack("<BIIIBQ", VERSION, seq.width, seq.height, seq.count,
                                _FAMILY_TAG[seq.family], seq.seed & 0xFFFFFFFFFFFFFFFF)
            + struct.pack("<I", len(tlv)) + tlv)


def stack_payload_size(width: int, height: int, count: int) -> int:
    return count * height * ((width + 7) // 8)


def write_pattern_stack(seq: PatternSequence, path) -> None:
    """Write ``seq`` as a GPAT1 file (atomically, via a temporary sibling)."""
    body = _header_bytes(seq) + np.packbits(seq.masks, axis=2).tobytes()
    data = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _parse_tlv(block: bytes):
    schedule = retina = None
    pos = 0
    while pos < len(block):
        if pos + 5 > len(block):
            raise StackFormatError("truncated TLV entry")
        tag, length = struct.unpack_from("<BI", block, pos)
        pos += 5
        payload = block[pos:pos + length]
        if len(payload) != length:
            raise StackFormatError("truncated TLV payload")
        pos += length
        if tag == _TAG_SCHEDULE:
            M, n = struct.unpack_from("<II", payload)
            if len(payload) != 8 + 8 * n:
                raise StackFormatError("bad schedule entry length")
            stages = [struct.unpack_from("<II", payload, 8 + 8 * k) for k in range(n)]
            schedule = Schedule(M, tuple(stages))
        elif tag == _TAG_RETINA:
            if length != struct.calcsize("<dddIdI"):
                raise StackFormatError("bad retina entry length")
            cx, cy, r, rcs, g, mcs = struct.unpack("<dddIdI", payload)
            retina = RetinaSpec(RoiSpec(cx, cy, r), rcs, g, mcs)
        # unknown tags are skipped for forward compatibility
    return schedule, retina


def read_pattern_stack(path) -> PatternSequence:
    """Read a GPAT1 file; raises :class:`StackFormatError` on any defect."""
    data = Path(path).read_bytes()
    fixed = struct.calcsize("<BIIIBQ")
    if len(data) < 4 + fixed + 4 + 4 or data[:4] != MAGIC:
        raise StackFormatError("not a GPAT stack (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    version, width, height, count, fam, seed = struct.unpack_from("<BIIIBQ", data, 4)
    if version != VERSION:
        raise StackFormatError(f"unsupported GPAT version {version}")
    if fam >= len(FAMILIES):
        raise StackFormatError(f"unknown family tag {fam}")
    pos = 4 + fixed
    (tlv_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tlv = body[pos:pos + tlv_len]
    if len(tlv) != tlv_len:
        raise StackFormatError("truncated metadata block")
    pos += tlv_len
    payload = body[pos:]
    if len(payload) != stack_payload_size(width, height, count):
        raise StackFormatError(
            f"payload holds {len(payload)} bytes, expected {stack_payload_size(width, height, count)}"
        )
    if zlib.crc32(body) != crc:
        raise StackFormatError("checksum mismatch")
    try:
        schedule, retina = _parse_tlv(tlv)
    except (PatternError, ValueError, struct.error) as exc:
        raise StackFormatError(f"invalid metadata: {exc}") from exc
    family = FAMILIES[fam]
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(count, height, -1)
    masks = np.unpackbits(packed, axis=2, count=width)
    if width != height:
        raise StackFormatError("only square stacks are supported")
    maps, counts = _stage_plan(family, width, schedule, retina)
    stage = np.zeros(count, dtype=np.int64) if counts is None else schedule.stage_of(count)
    return PatternSequence(masks, family, int(seed), width, maps, stage, schedule, retina)


__all__ = [
    "FAMILIES", "Pattern", "PatternError", "PatternSequence", "Schedule", "StackFormatError",
    "build_schedule", "generate_sequence", "read_pattern_stack", "write_pattern_stack",
    "stack_payload_size",
]
