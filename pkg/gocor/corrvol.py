"""Feature maps, correspondence volumes and the correlation operators.

A feature map is an ``(H, W, D)`` float array. A global volume has shape
``(H, W, H, W)`` indexed ``[i, j, k, l]`` with absolute query positions;
a local volume has shape ``(H, W, 2R+1, 2R+1)`` where ``[i, j, k+R, l+R]``
holds displacement ``(k, l)``. Query positions outside the map are zero.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from gocor.errors import DimensionError, NonFiniteInputError

logger = logging.getLogger(__name__)


class VolumeKind(Enum):
    GLOBAL = "global"
    LOCAL = "local"


def check_feature_map(f, name: str = "feature map") -> np.ndarray:
    """Validate and return a feature map as a float array"""
    arr = np.asarray(f)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DimensionError(f"{name} must have shape (H, W, D) with positive sizes, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite values")
    return arr


def check_same_shape(w: np.ndarray, f: np.ndarray):
    if w.shape != f.shape:
        raise DimensionError(f"feature maps differ in shape: {w.shape} vs {f.shape}")


@dataclass(frozen=True)
class CorrMode:
    """Which correlation a volume comes from: global, or local with radius R"""
    kind: VolumeKind = VolumeKind.GLOBAL
    radius: int = 0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")

    @classmethod
    def global_(cls) -> "CorrMode":
        return cls(VolumeKind.GLOBAL, 0)

    @classmethod
    def local(cls, radius: int) -> "CorrMode":
        return cls(VolumeKind.LOCAL, radius)

    @property
    def is_global(self) -> bool:
        return self.kind is VolumeKind.GLOBAL

    def volume_shape(self, height: int, width: int) -> Tuple[int, int, int, int]:
        if self.is_global:
            return (height, width, height, width)
        side = 2 * self.radius + 1
        return (height, width, side, side)

    def corr(self, w, f) -> np.ndarray:
        if self.is_global:
            return global_corr(w, f).data
        return local_corr(w, f, self.radius).data

    def adjoint(self, v: np.ndarray, f) -> np.ndarray:
        return corr_adjoint(CorrespondenceVolume(self.kind, v, self.radius), f)

    def distance_field(self, height: int, width: int) -> np.ndarray:
        """Grid distance between (i, j) and the query position of every entry"""
        if self.is_global:
            ii = np.arange(height, dtype=np.float64)[:, None, None, None]
            jj = np.arange(width, dtype=np.float64)[None, :, None, None]
            kk = np.arange(height, dtype=np.float64)[None, None, :, None]
            ll = np.arange(width, dtype=np.float64)[None, None, None, :]
            dist = np.sqrt((ii - kk) ** 2 + (jj - ll) ** 2)
        else:
            disp = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
            dist = np.sqrt(disp[:, None] ** 2 + disp[None, :] ** 2)
            dist = np.broadcast_to(dist, self.volume_shape(height, width))
        return np.ascontiguousarray(dist)


@dataclass
class CorrespondenceVolume:
    kind: VolumeKind
    data: np.ndarray
    radius: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4:
            raise DimensionError(f"volume must be 4-D, got shape {self.data.shape}")
        if self.kind is VolumeKind.GLOBAL:
            h, w, k, l = self.data.shape
            if (h, w) != (k, l):
                raise DimensionError(f"global volume must be (H, W, H, W), got {self.data.shape}")
        else:
            side = 2 * self.radius + 1
            if self.data.shape[2:] != (side, side):
                raise DimensionError(
                    f"local volume with radius {self.radius} must end in ({side}, {side}), "
                    f"got {self.data.shape}")

    @property
    def mode(self) -> CorrMode:
        return CorrMode(self.kind, self.radius)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def probe_slice(self, i: int, j: int) -> np.ndarray:
        return self.data[i, j]


def check_volume(v: CorrespondenceVolume) -> CorrespondenceVolume:
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteInputError("correspondence volume contains non-finite values")
    return v


def _prepare_pair(w, f) -> Tuple[np.ndarray, np.ndarray]:
    w = check_feature_map(w, "filter map")
    f = check_feature_map(f, "feature map")
    check_same_shape(w, f)
    return w, f


def global_corr(w, f) -> CorrespondenceVolume:
    """All-pairs scalar products: out[i, j, k, l] = <w[i, j], f[k, l]>"""
    w, f = _prepare_pair(w, f)
    h, wd, d = w.shape
    out = w.reshape(h * wd, d) @ f.reshape(h * wd, d).T
    return CorrespondenceVolume(VolumeKind.GLOBAL, out.reshape(h, wd, h, wd))


def _pad_query(f: np.ndarray, radius: int) -> np.ndarray:
    return np.pad(f, ((radius, radius), (radius, radius), (0, 0)))


def local_corr(w, f, radius: int) -> CorrespondenceVolume:
    """Scalar products restricted to displacements within ``radius``"""
    w, f = _prepare_pair(w, f)
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    h, wd, _ = w.shape
    side = 2 * radius + 1
    f_pad = _pad_query(f, radius)
    out = np.zeros((h, wd, side, side), dtype=np.result_type(w, f))
    for a in range(side):
        for b in range(side):
            window = f_pad[a:a + h, b:b + wd]
            out[:, :, a, b] = np.einsum("ijd,ijd->ij", w, window)
    return CorrespondenceVolume(VolumeKind.LOCAL, out, radius)


def corr_adjoint(v: CorrespondenceVolume, f) -> np.ndarray:
    """Apply the transposed Jacobian of corr(., f) to a volume.

    Satisfies <corr(w, f), v> = <w, corr_adjoint(v, f)> for every w.
    """
    f = check_feature_map(f)
    check_volume(v)
    h, wd, d = f.shape
    data = np.asarray(v.data)
    expected = CorrMode(v.kind, v.radius).volume_shape(h, wd)
    if data.shape != expected:
        raise DimensionError(f"volume shape {data.shape} does not fit feature map {f.shape}, expected {expected}")
    if v.kind is VolumeKind.GLOBAL:
        g = data.reshape(h * wd, h * wd) @ f.reshape(h * wd, d)
        return g.reshape(h, wd, d)
    side = 2 * v.radius + 1
    f_pad = _pad_query(f, v.radius)
    g = np.zeros((h, wd, d), dtype=np.result_type(data, f))
    for a in range(side):
        for b in range(side):
            g += data[:, :, a, b, None] * f_pad[a:a + h, b:b + wd]
    return g


def spatial_mean(f) -> np.ndarray:
    """Per-channel mean over all H*W locations"""
    f = check_feature_map(f)
    return f.mean(axis=(0, 1))
