"""Minimal scanline OpenEXR codec for 32-bit float images.

Supports exactly what the pipeline needs: single-part scanline files,
FLOAT (and HALF on read) channels, NONE/ZIP/ZIPS compression. Channel
sets are either R,G,B or a single luminance channel. Everything else
(tiles, deep data, multi-part, subsampling) is rejected with a clear
error rather than mis-read.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = 20000630
VERSION = 2

COMPRESSION_NONE = 0
COMPRESSION_ZIPS = 2
COMPRESSION_ZIP = 3

_PIXEL_UINT = 0
_PIXEL_HALF = 1
_PIXEL_FLOAT = 2

_LINES_PER_CHUNK = {COMPRESSION_NONE: 1, COMPRESSION_ZIPS: 1, COMPRESSION_ZIP: 16}

_COMPRESSION_NAMES = {"none": COMPRESSION_NONE, "zips": COMPRESSION_ZIPS, "zip": COMPRESSION_ZIP}


class ExrError(ValueError):
    """Raised for files this codec cannot read or arguments it cannot write."""


def _read_cstring(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.index(b"\x00", pos)
    return buf[pos:end].decode("latin-1"), end + 1


def _parse_channels(payload: bytes) -> list[tuple[str, int]]:
    channels = []
    pos = 0
    while payload[pos] != 0:
        name, pos = _read_cstring(payload, pos)
        pixel_type, = struct.unpack_from("<i", payload, pos)
        x_samp, y_samp = struct.unpack_from("<ii", payload, pos + 8)
        if x_samp != 1 or y_samp != 1:
            raise ExrError(f"subsampled channel {name!r} not supported")
        channels.append((name, pixel_type))
        pos += 16
    return channels


def _zip_undo_predictor(data: bytes) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    # invert the running delta (d[i] += d[i-1] - 128), then de-interleave halves
    decoded = (np.cumsum(raw - 128) + 128).astype(np.uint8)
    out = np.empty_like(decoded)
    half = (decoded.size + 1) // 2
    out[0::2] = decoded[:half]
    out[1::2] = decoded[half:]
    return out


def _zip_apply_predictor(data: np.ndarray) -> bytes:
    flat = data.reshape(-1)
    half = (flat.size + 1) // 2
    tmp = np.empty_like(flat)
    tmp[:half] = flat[0::2]
    tmp[half:] = flat[1::2]
    delta = np.empty_like(tmp)
    delta[0] = tmp[0]
    delta[1:] = (tmp[1:].astype(np.int16) - tmp[:-1].astype(np.int16) + 128).astype(np.uint8)
    return delta.tobytes()


def read_exr(path) -> np.ndarray:
    """Read a scanline EXR into a float32 array of shape (H, W, C).

    C follows the file's channel count; 3-channel files must carry R, G, B
    (returned in that order), 1-channel files may use any channel name.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise ExrError(f"{path}: truncated file")
    magic, version = struct.unpack_from("<ii", buf, 0)
    if magic != MAGIC:
        raise ExrError(f"{path}: not an OpenEXR file (bad magic)")
    if version & 0x200:
        raise ExrError(f"{path}: tiled files not supported")
    if version & 0x800 or version & 0x1000:
        raise ExrError(f"{path}: deep/multi-part files not supported")

    pos = 8
    channels: list[tuple[str, int]] | None = None
    compression = None
    data_window = None
    while True:
        name, pos = _read_cstring(buf, pos)
        if name == "":
            break
        _type_name, pos = _read_cstring(buf, pos)
        size, = struct.unpack_from("<i", buf, pos)
        pos += 4
        payload = buf[pos:pos + size]
        pos += size
        if name == "channels":
            channels = _parse_channels(payload)
        elif name == "compression":
            compression = payload[0]
        elif name == "dataWindow":
            data_window = struct.unpack("<iiii", payload)

    if channels is None or compression is None or data_window is None:
        raise ExrError(f"{path}: missing required header attribute")
    if compression not in _LINES_PER_CHUNK:
        raise ExrError(f"{path}: compression type {compression} not supported "
                       "(only none/zip/zips)")
    x_min, y_min, x_max, y_max = data_window
    width = x_max - x_min + 1
    height = y_max - y_min + 1
    if width <= 0 or height <= 0:
        raise ExrError(f"{path}: empty data window")

    names = [c[0] for c in channels]
    if len(channels) == 3:
        if sorted(names) != ["B", "G", "R"]:
            raise ExrError(f"{path}: expected R,G,B channels, found {names}")
    elif len(channels) != 1:
        raise ExrError(f"{path}: {len(channels)} channels; only 1- or 3-channel "
                       "files are supported")
    for cname, ptype in channels:
        if ptype not in (_PIXEL_HALF, _PIXEL_FLOAT):
            raise ExrError(f"{path}: channel {cname!r} is not floating point")

    lines_per_chunk = _LINES_PER_CHUNK[compression]
    n_chunks = (height + lines_per_chunk - 1) // lines_per_chunk
    offsets = struct.unpack_from(f"<{n_chunks}Q", buf, pos)

    # channels are stored in header (alphabetical) order within each scanline
    chan_dtypes = [np.dtype("<f2") if t == _PIXEL_HALF else np.dtype("<f4")
                   for _, t in channels]
    out = np.empty((height, width, len(channels)), dtype=np.float32)

    for chunk_idx, off in enumerate(offsets):
        y, size = struct.unpack_from("<ii", buf, off)
        data = buf[off + 8:off + 8 + size]
        first = y - y_min
        n_lines = min(lines_per_chunk, height - first)
        raw_size = sum(width * n_lines * dt.itemsize for dt in chan_dtypes)
        if compression == COMPRESSION_NONE or size == raw_size:
            raw = np.frombuffer(data, dtype=np.uint8)
        else:
            raw = _zip_undo_predictor(zlib.decompress(data))
        if raw.size != raw_size:
            raise ExrError(f"{path}: chunk {chunk_idx} has wrong size")
        cursor = 0
        for line in range(n_lines):
            for ci, dt in enumerate(chan_dtypes):
                nbytes = width * dt.itemsize
                row = raw[cursor:cursor + nbytes].view(dt)
                out[first + line, :, ci] = row.astype(np.float32)
                cursor += nbytes

    if len(channels) == 3:
        order = [names.index(c) for c in ("R", "G", "B")]
        out = out[:, :, order]
    return np.ascontiguousarray(out)


def write_exr(path, data: np.ndarray, compression: str = "zip") -> None:
    """Write a float32 array of shape (H, W), (H, W, 1) or (H, W, 3) as EXR.

    3-channel data is stored as R,G,B; 1-channel data as Y. No transfer
    function is applied; samples round-trip bit-exactly through read_exr.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ExrError(f"cannot write array of shape {data.shape}; "
                       "need (H, W), (H, W, 1) or (H, W, 3)")
    comp = _COMPRESSION_NAMES.get(compression)
    if comp is None:
        raise ExrError(f"unknown compression {compression!r}")
    height, width, n_chan = arr.shape
    if n_chan == 3:
        names = ["B", "G", "R"]          # header order is alphabetical
        planes = [arr[:, :, 2], arr[:, :, 1], arr[:, :, 0]]
    else:
        names = ["Y"]
        planes = [arr[:, :, 0]]

    header = bytearray()

    def attr(name: str, type_name: str, payload: bytes) -> None:
        header.extend(name.encode() + b"\x00")
        header.extend(type_name.encode() + b"\x00")
        header.extend(struct.pack("<i", len(payload)))
        header.extend(payload)

    chlist = bytearray()
    for name in names:
        chlist.extend(name.encode() + b"\x00")
        chlist.extend(struct.pack("<i", _PIXEL_FLOAT))
        chlist.extend(b"\x00\x00\x00\x00")   # pLinear + reserved
        chlist.extend(struct.pack("<ii", 1, 1))
    chlist.extend(b"\x00")
    box = struct.pack("<iiii", 0, 0, width - 1, height - 1)

    attr("channels", "chlist", bytes(chlist))
    attr("compression", "compression", bytes([comp]))
    attr("dataWindow", "box2i", box)
    attr("displayWindow", "box2i", box)
    attr("lineOrder", "lineOrder", b"\x00")
    attr("pixelAspectRatio", "float", struct.pack("<f", 1.0))
    attr("screenWindowCenter", "v2f", struct.pack("<ff", 0.0, 0.0))
    attr("screenWindowWidth", "float", struct.pack("<f", 1.0))
    header.extend(b"\x00")

    lines_per_chunk = _LINES_PER_CHUNK[comp]
    n_chunks = (height + lines_per_chunk - 1) // lines_per_chunk
    chunks = []
    for chunk_idx in range(n_chunks):
        y0 = chunk_idx * lines_per_chunk
        n_lines = min(lines_per_chunk, height - y0)
        rows = []
        for line in range(n_lines):
            for plane in planes:
                rows.append(plane[y0 + line].astype("<f4").tobytes())
        raw = b"".join(rows)
        if comp == COMPRESSION_NONE:
            payload = raw
        else:
            packed = zlib.compress(
                _zip_apply_predictor(np.frombuffer(raw, dtype=np.uint8)), 6)
            payload = packed if len(packed) < len(raw) else raw
        chunks.append((y0, payload))

    preamble = struct.pack("<ii", MAGIC, VERSION)
    offset_table_pos = len(preamble) + len(header)
    data_start = offset_table_pos + 8 * n_chunks
    offsets = []
    cursor = data_start
    for _, payload in chunks:
        offsets.append(cursor)
        cursor += 8 + len(payload)

    with open(path, "wb") as fh:
        fh.write(preamble)
        fh.write(header)
        fh.write(struct.pack(f"<{n_chunks}Q", *offsets))
        for (y0, payload) in chunks:
            fh.write(struct.pack("<ii", y0, len(payload)))
            fh.write(payload)
