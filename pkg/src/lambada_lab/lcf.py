"""LCF: a little columnar format with row groups, chunk stats and a footer.

Files are laid out as ``[row group chunks]* [footer] [footer_len: u32 LE]
[magic "LCF1"]``; everything is little-endian.  See FORMAT.md for a
hex-annotated example.  Numeric-only: INT64 and FLOAT64 columns, no nulls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import errors

MAGIC = b"LCF1"
FORMAT_VERSION = 1
FOOTER_TAIL_WINDOW = 64 * 1024

INT64 = 0
FLOAT64 = 1

ENC_PLAIN = 0
ENC_RLE = 1

_VALUE_PACK = {INT64: "<q", FLOAT64: "<d"}


@dataclass(frozen=True)
class Schema:
    columns: tuple[tuple[str, int], ...]  # (name, type)

    def __post_init__(self):
        if not self.columns:
            raise ValueError("schema needs at least one column")
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        for _, typ in self.columns:
            if typ not in (INT64, FLOAT64):
                raise ValueError(f"unknown column type {typ}")

    def index_of(self, name: str) -> int:
        for i, (col, _) in enumerate(self.columns):
            if col == name:
                return i
        raise errors.UnknownColumn(name)

    def __len__(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class ColumnStats:
    min_value: int | float
    max_value: int | float


@dataclass(frozen=True)
class ColumnChunkMeta:
    offset: int
    compressed_len: int
    uncompressed_len: int
    encoding: int
    stats: ColumnStats


@dataclass(frozen=True)
class RowGroupMeta:
    row_count: int
    chunks: tuple[ColumnChunkMeta, ...]


@dataclass(frozen=True)
class FileFooter:
    schema: Schema
    row_groups: tuple[RowGroupMeta, ...]
    version: int = FORMAT_VERSION


def _check_value(value, typ) -> None:
    if typ == INT64 and not isinstance(value, int):
        raise errors.TypeMismatch(f"expected int for INT64 column, got {value!r}")
    if typ == FLOAT64 and not isinstance(value, float):
        raise errors.TypeMismatch(f"expected float for FLOAT64 column, got {value!r}")


def encode_chunk(values, typ: int, encoding: int) -> bytes:
    pack = _VALUE_PACK[typ]
    if encoding == ENC_PLAIN:
        return b"".join(struct.pack(pack, v) for v in values)
    if encoding == ENC_RLE:
        out = []
        run_value, run_len = values[0], 0
        for v in values:
            if v == run_value and run_len < 0xFFFFFFFF:
                run_len += 1
            else:
                out.append(struct.pack(pack, run_value) + struct.pack("<I", run_len))
                run_value, run_len = v, 1
        out.append(struct.pack(pack, run_value) + struct.pack("<I", run_len))
        return b"".join(out)
    raise ValueError(f"unknown encoding {encoding}")


def decode_chunk(meta: ColumnChunkMeta, data: bytes, typ: int, row_count: int) -> list:
    """Inverse of the writer's encoder; yields exactly `row_count` values."""
    if len(data) != meta.compressed_len:
        raise errors.CorruptChunk(
            f"chunk has {len(data)} bytes, metadata says {meta.compressed_len}"
        )
    pack = _VALUE_PACK[typ]
    if meta.encoding == ENC_PLAIN:
        if len(data) != 8 * row_count:
            raise errors.CorruptChunk("plain chunk length does not match row count")
        return [v[0] for v in struct.iter_unpack(pack, data)]
    if meta.encoding == ENC_RLE:
        if len(data) % 12 != 0:
            raise errors.CorruptChunk("RLE chunk length not a multiple of 12")
        values: list = []
        for off in range(0, len(data), 12):
            (value,) = struct.unpack_from(pack, data, off)
            (count,) = struct.unpack_from("<I", data, off + 8)
            values.extend([value] * count)
        if len(values) != row_count:
            raise errors.CorruptChunk(
                f"RLE chunk decoded to {len(values)} rows, expected {row_count}"
            )
        return values
    raise errors.CorruptChunk(f"unknown encoding id {meta.encoding}")


class EncodingPolicy:
    """Picks an encoding per chunk.  `rle_columns` lists column names that
    should use run-length encoding; everything else is plain."""

    def __init__(self, rle_columns: tuple[str, ...] = ()):
        self.rle_columns = set(rle_columns)

    def encoding_for(self, name: str) -> int:
        return ENC_RLE if name in self.rle_columns else ENC_PLAIN


def write_file(schema: Schema, row_groups, policy: EncodingPolicy | None = None) -> bytes:
    """Serialize column-major row groups into one LCF byte string.

    `row_groups` is a list of tables; each table is a list of per-column value
    lists in schema order.
    """
    policy = policy or EncodingPolicy()
    body = bytearray()
    metas = []
    for table in row_groups:
        if len(table) != len(schema):
            raise errors.TypeMismatch(
                f"row group has {len(table)} columns, schema has {len(schema)}"
            )
        row_count = len(table[0])
        if row_count == 0:
            raise errors.EmptyRowGroup("row groups must be non-empty")
        chunks = []
        for (name, typ), values in zip(schema.columns, table):
            if len(values) != row_count:
                raise errors.TypeMismatch("ragged row group")
            for v in values:
                _check_value(v, typ)
            encoding = policy.encoding_for(name)
            encoded = encode_chunk(values, typ, encoding)
            chunks.append(
                ColumnChunkMeta(
                    offset=len(body),
                    compressed_len=len(encoded),
                    uncompressed_len=8 * row_count,
                    encoding=encoding,
                    stats=ColumnStats(min(values), max(values)),
                )
            )
            body.extend(encoded)
        metas.append(RowGroupMeta(row_count=row_count, chunks=tuple(chunks)))
    footer = encode_footer(FileFooter(schema, tuple(metas)))
    return bytes(body) + footer + struct.pack("<I", len(footer)) + MAGIC


def encode_footer(footer: FileFooter) -> bytes:
    out = bytearray()
    out += struct.pack("<H", footer.version)
    out += struct.pack("<H", len(footer.schema))
    for name, typ in footer.schema.columns:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", typ)
    out += struct.pack("<I", len(footer.row_groups))
    for rg in footer.row_groups:
        out += struct.pack("<Q", rg.row_count)
        for (name, typ), chunk in zip(footer.schema.columns, rg.chunks):
            pack = _VALUE_PACK[typ]
            out += struct.pack("<QQQB", chunk.offset, chunk.compressed_len,
                               chunk.uncompressed_len, chunk.encoding)
            out += struct.pack(pack, chunk.stats.min_value)
            out += struct.pack(pack, chunk.stats.max_value)
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise errors.CorruptFooter("footer truncated")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise errors.CorruptFooter("footer truncated")
        raw = self.data[self.pos : self.pos + n]
        self.pos += n
        return raw


def decode_footer(raw: bytes) -> FileFooter:
    cur = _Cursor(raw)
    version = cur.take("<H")
    if version != FORMAT_VERSION:
        raise errors.CorruptFooter(f"unsupported format version {version}")
    ncols = cur.take("<H")
    columns = []
    for _ in range(ncols):
        name_len = cur.take("<H")
        name = cur.take_bytes(name_len).decode("utf-8")
        typ = cur.take("<B")
        columns.append((name, typ))
    try:
        schema = Schema(tuple(columns))
    except ValueError as err:
        raise errors.CorruptFooter(str(err))
    ngroups = cur.take("<I")
    groups = []
    prev_end = 0
    for _ in range(ngroups):
        row_count = cur.take("<Q")
        chunks = []
        for _, typ in schema.columns:
            offset, clen, ulen, encoding = cur.take("<QQQB")
            pack = _VALUE_PACK[typ]
            min_v = cur.take(pack)
            max_v = cur.take(pack)
            if min_v > max_v:
                raise errors.CorruptFooter("chunk stats have min > max")
            if offset < prev_end:
                raise errors.CorruptFooter("column chunks overlap")
            prev_end = offset + clen
            chunks.append(
                ColumnChunkMeta(offset, clen, ulen, encoding, ColumnStats(min_v, max_v))
            )
        groups.append(RowGroupMeta(row_count, tuple(chunks)))
    if cur.pos != len(raw):
        raise errors.CorruptFooter("trailing bytes after footer")
    return FileFooter(schema, tuple(groups), version)


def split_trailer(tail: bytes, file_size: int) -> tuple[int, int]:
    """Validate magic and return (footer_offset, footer_len) within the file."""
    if len(tail) < 8 or tail[-4:] != MAGIC:
        raise errors.BadMagic("missing LCF1 magic")
    (footer_len,) = struct.unpack("<I", tail[-8:-4])
    if footer_len + 8 > file_size:
        raise errors.CorruptFooter("footer length exceeds file size")
    return file_size - 8 - footer_len, footer_len


def read_footer(data: bytes) -> FileFooter:
    """Decode the footer of a complete in-memory LCF file."""
    footer_off, footer_len = split_trailer(data[-FOOTER_TAIL_WINDOW:], len(data))
    return decode_footer(data[footer_off : footer_off + footer_len])


def read_footer_ranged(sim, ctx, bucket: str, key: str):
    """Read a footer through the object store using the tail window.

    Issues exactly one suffix-range GET for footers smaller than the window
    and one extra GET otherwise.  Returns (footer, file_size, requests).
    """
    tail, receipt = yield from sim.store.get_object(
        ctx, bucket, key, (-FOOTER_TAIL_WINDOW, None)
    )
    tail = bytes(tail)
    size = len(sim.store.bucket(bucket).objects[key])
    footer_off, footer_len = split_trailer(tail, size)
    requests = 1
    tail_start = size - len(tail)
    if footer_off >= tail_start:
        raw = tail[footer_off - tail_start : footer_off - tail_start + footer_len]
    else:
        raw, _ = yield from sim.store.get_object(
            ctx, bucket, key, (footer_off, footer_off + footer_len)
        )
        raw = bytes(raw)
        requests += 1
    return decode_footer(raw), size, requests


def read_table(data: bytes) -> list[list]:
    """Decode a whole file into one column-major table (test/oracle path)."""
    footer = read_footer(data)
    columns: list[list] = [[] for _ in footer.schema.columns]
    for rg in footer.row_groups:
        for i, ((_, typ), chunk) in enumerate(zip(footer.schema.columns, rg.chunks)):
            raw = data[chunk.offset : chunk.offset + chunk.compressed_len]
            columns[i].extend(decode_chunk(chunk, raw, typ, rg.row_count))
    return columns
