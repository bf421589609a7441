"""Binary file formats for feature maps, flow fields and volumes.

All integers are little-endian u32, all arrays row-major little-endian.

    FMAP  magic "FMAP", version=1, H, W, D, u8 dtype (0=f32, 1=f64), data (i, j, d)
    FLOW  magic "FLOW", H, W, f32 (u, v) pairs, optional u8 mask plane (H*W bytes)
    CVOL  magic "CVOL", version=1, u8 kind (0=global, 1=local), H, W, radius,
          u8 dtype, data (i, j, k, l)
"""

import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from gocor.corrvol import CorrespondenceVolume, CorrMode, VolumeKind, check_feature_map, check_volume
from gocor.errors import FormatError, NonFiniteInputError
from gocor.metrics import FlowField

PathLike = Union[str, Path]

FORMAT_VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
KIND_CODES = {0: VolumeKind.GLOBAL, 1: VolumeKind.LOCAL}


def _dtype_code(dtype: np.dtype) -> int:
    return 0 if np.dtype(dtype) == np.float32 else 1


class _Reader:
    """Cursor over a byte buffer that reports offsets on failure"""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.offset)
        chunk = self.buf[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def magic(self, expected: bytes):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", 0)

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def array(self, dtype: np.dtype, shape: Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * dtype.itemsize, what)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def dtype(self) -> np.dtype:
        at = self.offset
        code = self.u8("dtype")
        if code not in DTYPE_CODES:
            raise FormatError(f"unknown dtype code {code}", at)
        return DTYPE_CODES[code]

    def version(self):
        at = self.offset
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}", at)

    def positive(self, what: str) -> int:
        at = self.offset
        value = self.u32(what)
        if value == 0:
            raise FormatError(f"{what} must be positive", at)
        return value

    def finish(self):
        if self.offset != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.offset} trailing bytes", self.offset)


def encode_feature_map(f: np.ndarray, dtype=np.float64) -> bytes:
    f = check_feature_map(f)
    h, w, d = f.shape
    header = b"FMAP" + struct.pack("<IIIIB", FORMAT_VERSION, h, w, d, _dtype_code(dtype))
    return header + np.ascontiguousarray(f, dtype=DTYPE_CODES[_dtype_code(dtype)]).tobytes()


def decode_feature_map(buf: bytes) -> np.ndarray:
    reader = _Reader(buf)
    reader.magic(b"FMAP")
    reader.version()
    h, w, d = reader.positive("H"), reader.positive("W"), reader.positive("D")
    dtype = reader.dtype()
    at = reader.offset
    data = reader.array(dtype, (h, w, d), "feature data")
    reader.finish()
    if not np.all(np.isfinite(data)):
        raise FormatError("feature data contains non-finite values", at)
    return data.astype(dtype.newbyteorder("="))


def encode_flow(flow: FlowField) -> bytes:
    h, w = flow.shape
    body = np.ascontiguousarray(flow.flow, dtype="<f4").tobytes()
    if flow.mask is not None:
        body += np.ascontiguousarray(flow.mask, dtype=np.uint8).tobytes()
    return b"FLOW" + struct.pack("<II", h, w) + body


def decode_flow(buf: bytes) -> FlowField:
    reader = _Reader(buf)
    reader.magic(b"FLOW")
    h, w = reader.positive("H"), reader.positive("W")
    flow = reader.array(np.dtype("<f4"), (h, w, 2), "flow data")
    mask = None
    if reader.offset < len(buf):
        mask = reader.array(np.dtype(np.uint8), (h, w), "mask plane").astype(bool)
    reader.finish()
    return FlowField(flow.astype(np.float64), mask)


def encode_volume(volume: CorrespondenceVolume, dtype=np.float64) -> bytes:
    check_volume(volume)
    kind = 0 if volume.kind is VolumeKind.GLOBAL else 1
    header = b"CVOL" + struct.pack("<IBIIIB", FORMAT_VERSION, kind, volume.height, volume.width,
                                   volume.radius, _dtype_code(dtype))
    return header + np.ascontiguousarray(volume.data, dtype=DTYPE_CODES[_dtype_code(dtype)]).tobytes()


def decode_volume(buf: bytes) -> CorrespondenceVolume:
    reader = _Reader(buf)
    reader.magic(b"CVOL")
    reader.version()
    at = reader.offset
    code = reader.u8("kind")
    if code not in KIND_CODES:
        raise FormatError(f"unknown volume kind {code}", at)
    h, w = reader.positive("H"), reader.positive("W")
    radius = reader.u32("radius")
    mode = CorrMode(KIND_CODES[code], radius)
    dtype = reader.dtype()
    at = reader.offset
    data = reader.array(dtype, mode.volume_shape(h, w), "volume data")
    reader.finish()
    volume = CorrespondenceVolume(mode.kind, data.astype(dtype.newbyteorder("=")), radius)
    try:
        return check_volume(volume)
    except NonFiniteInputError as e:
        raise FormatError(str(e), at) from e


def save_feature_map(path: PathLike, f: np.ndarray, dtype=np.float64):
    Path(path).write_bytes(encode_feature_map(f, dtype))


def load_feature_map(path: PathLike) -> np.ndarray:
    return decode_feature_map(Path(path).read_bytes())


def save_flow(path: PathLike, flow: FlowField):
    Path(path).write_bytes(encode_flow(flow))


def load_flow(path: PathLike) -> FlowField:
    return decode_flow(Path(path).read_bytes())


def save_volume(path: PathLike, volume: CorrespondenceVolume, dtype=np.float64):
    Path(path).write_bytes(encode_volume(volume, dtype))


def load_volume(path: PathLike) -> CorrespondenceVolume:
    return decode_volume(Path(path).read_bytes())


def heatmap_bytes(scores: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D slice to 0..255; a constant slice maps to 0"""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        return np.zeros(scores.shape, dtype=np.uint8)
    return np.round((scores - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray):
    """Binary P5 graymap with maxval 255"""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5" or parts[3] != b"255":
        raise FormatError("not a binary PGM with maxval 255", 0)
    w, h = int(parts[1]), int(parts[2])
    pixels = buf[len(buf) - w * h:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_slice_csv(path: PathLike, scores: np.ndarray):
    np.savetxt(path, np.asarray(scores, dtype=np.float64), fmt="%.17g", delimiter=",")


def probe_heatmap(volume: CorrespondenceVolume, i: int, j: int) -> Tuple[np.ndarray, np.ndarray]:
    """The probe's raw slice and its 8-bit heatmap"""
    if not (0 <= i < volume.height and 0 <= j < volume.width):
        raise ValueError(f"probe ({i}, {j}) is outside the {volume.height}x{volume.width} grid")
    scores = volume.probe_slice(i, j)
    return scores, heatmap_bytes(scores)
