"""Flow evaluation metrics: AEPE, PCK-T and the F1 outlier rate.

A flow field stores per-location displacements (u, v) in pixels, u
horizontal and v vertical, with an optional validity mask.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from gocor.corrvol import CorrespondenceVolume
from gocor.errors import DimensionError, EmptyInputError, NonFiniteInputError

F1_ABS_THRESHOLD = 3.0
F1_REL_THRESHOLD = 0.05


@dataclass
class FlowField:
    flow: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise DimensionError(f"flow must have shape (H, W, 2), got {self.flow.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.flow.shape[:2]:
                raise DimensionError(f"mask shape {self.mask.shape} does not match grid {self.flow.shape[:2]}")
        if not np.all(np.isfinite(self.flow[self.valid])):
            raise NonFiniteInputError("flow holds non-finite values at valid locations")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.flow.shape[:2]

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> "FlowField":
        flow = np.empty((height, width, 2))
        flow[..., 0] = u
        flow[..., 1] = v
        return cls(flow)


def _valid_errors(est: FlowField, gt: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    if est.shape != gt.shape:
        raise DimensionError(f"flow fields differ in shape: {est.shape} vs {gt.shape}")
    valid = est.valid & gt.valid
    if not np.any(valid):
        raise EmptyInputError("no valid pixels to evaluate")
    diff = est.flow[valid] - gt.flow[valid]
    return np.sqrt(np.sum(diff * diff, axis=-1)), gt.flow[valid]


def endpoint_error(est: FlowField, gt: FlowField) -> np.ndarray:
    """Per-pixel endpoint error over the pixels valid in both fields"""
    return _valid_errors(est, gt)[0]


def aepe(est: FlowField, gt: FlowField) -> float:
    return float(np.mean(endpoint_error(est, gt)))


def pck(est: FlowField, gt: FlowField, threshold: float) -> float:
    """Percentage of valid pixels with endpoint error <= threshold"""
    if not threshold > 0:
        raise ValueError(f"PCK threshold must be positive, got {threshold}")
    epe = endpoint_error(est, gt)
    return 100.0 * float(np.count_nonzero(epe <= threshold)) / epe.size


def f1_outlier_rate(est: FlowField, gt: FlowField) -> float:
    """Percentage of pixels whose error exceeds 3 px and 5 % of the true flow length.

    Where the true flow is zero only the absolute test applies.
    """
    epe, gt_flow = _valid_errors(est, gt)
    mag = np.sqrt(np.sum(gt_flow * gt_flow, axis=-1))
    relative = np.ones_like(epe, dtype=bool)
    nonzero = mag > 0
    relative[nonzero] = epe[nonzero] / mag[nonzero] > F1_REL_THRESHOLD
    outliers = (epe > F1_ABS_THRESHOLD) & relative
    return 100.0 * float(np.count_nonzero(outliers)) / epe.size


def dataset_pck(pairs: Iterable[Tuple[FlowField, FlowField]], threshold: float, pooled: bool = False) -> float:
    """PCK over a dataset: mean of per-image values, or pooled over all valid pixels"""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError("no image pairs to evaluate")
    if not pooled:
        return float(np.mean([pck(est, gt, threshold) for est, gt in pairs]))
    errors = np.concatenate([endpoint_error(est, gt) for est, gt in pairs])
    return 100.0 * float(np.count_nonzero(errors <= threshold)) / errors.size


def flow_from_volume(volume: CorrespondenceVolume) -> FlowField:
    """Argmax correspondence of every reference location as a flow field.

    Ties resolve to the first maximum in row-major order. For local
    volumes out-of-bounds displacements are never selected.
    """
    data = volume.data
    h, w = volume.height, volume.width
    flow = np.zeros((h, w, 2))
    if volume.mode.is_global:
        best = np.argmax(data.reshape(h, w, -1), axis=-1)
        k, l = np.divmod(best, w)
        flow[..., 0] = l - np.arange(w)[None, :]
        flow[..., 1] = k - np.arange(h)[:, None]
        return FlowField(flow)

    r = volume.radius
    disp = np.arange(-r, r + 1)
    ii = np.arange(h)[:, None, None, None] + disp[None, None, :, None]
    jj = np.arange(w)[None, :, None, None] + disp[None, None, None, :]
    inside = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
    masked = np.where(inside, data, -np.inf)
    best = np.argmax(masked.reshape(h, w, -1), axis=-1)
    dk, dl = np.divmod(best, 2 * r + 1)
    flow[..., 0] = dl - r
    flow[..., 1] = dk - r
    return FlowField(flow)
