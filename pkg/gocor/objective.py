"""Reference-frame and query-frame objectives of the filter-map solve.

The reference term is a robust least-squares fit of corr(w, f_r) to a
distance-dependent target, with separate slopes for positive and
negative correlations. The query term penalizes a 4-D filtered version
of corr(w, f_q). Weight functions of the match distance are expressed
with triangular (hat) basis functions.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from gocor.corrvol import CorrMode, check_feature_map
from gocor.errors import DimensionError

logger = logging.getLogger(__name__)

DEFAULT_BASIS_COUNT = 10
DEFAULT_BASIS_DELTA = 0.5


class Squash(Enum):
    NONE = "none"
    SIGMOID = "sigmoid"


def rho_basis(d, k: int, count: int = DEFAULT_BASIS_COUNT, delta: float = DEFAULT_BASIS_DELTA):
    """Triangular basis function k of ``count`` knots spaced ``delta`` apart.

    Interior knots are hats of half-width ``delta``; the last knot ramps up
    and saturates to 1 for every d beyond it.
    """
    if not 0 <= k < count:
        raise ValueError(f"knot index {k} out of range for {count} knots")
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if k < count - 1:
        return np.maximum(0.0, 1.0 - np.abs(d - k * delta) / delta)
    return np.clip(1.0 + (d - k * delta) / delta, 0.0, 1.0)


@dataclass
class WeightFunction:
    """Piecewise-linear function of match distance, one coefficient per knot"""
    coefficients: np.ndarray
    delta: float = DEFAULT_BASIS_DELTA
    squash: Squash = Squash.NONE

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if self.coefficients.size < 2:
            raise ValueError(f"a weight function needs at least 2 knots, got {self.coefficients.size}")
        if not self.delta > 0:
            raise ValueError(f"knot spacing must be positive, got {self.delta}")

    @property
    def count(self) -> int:
        return self.coefficients.size

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.count) * self.delta

    def __call__(self, d) -> np.ndarray:
        return eval_weight_fn(self, d)

    @classmethod
    def constant(cls, value: float, count: int = DEFAULT_BASIS_COUNT,
                 delta: float = DEFAULT_BASIS_DELTA) -> "WeightFunction":
        return cls(np.full(count, value, dtype=np.float64), delta)

    @classmethod
    def gaussian(cls, count: int = DEFAULT_BASIS_COUNT, delta: float = DEFAULT_BASIS_DELTA,
                 sigma: float = 1.0) -> "WeightFunction":
        """Zero-mean Gaussian profile exp(-d^2 / 2 sigma^2) sampled at the knots"""
        knots = np.arange(count) * delta
        return cls(np.exp(-knots ** 2 / (2.0 * sigma ** 2)), delta)

    @classmethod
    def scaled_tanh(cls, count: int = DEFAULT_BASIS_COUNT, delta: float = DEFAULT_BASIS_DELTA,
                    scale: float = 1.0, eps: float = 1e-3) -> "WeightFunction":
        """Sigmoid-squashed function whose knot values are tanh(scale * d).

        tanh(0) = 0 is outside the open range of the Sigmoid, so knot
        values are clipped to [eps, 1 - eps] before taking the logit.
        """
        knots = np.arange(count) * delta
        values = np.clip(np.tanh(scale * knots), eps, 1.0 - eps)
        return cls(logit(values), delta, Squash.SIGMOID)


def eval_weight_fn(wf: WeightFunction, d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    total = np.zeros_like(d)
    for k, coeff in enumerate(wf.coefficients):
        total += coeff * rho_basis(d, k, wf.count, wf.delta)
    if wf.squash is Squash.SIGMOID:
        return expit(total)
    return total


def sigma_eta(c, vp, vn, eta: float = 0.0):
    """Smoothed asymmetric penalty; slope vp for c >= 0 and vn for c < 0 when eta = 0"""
    c = np.asarray(c, dtype=np.float64)
    return (vp - vn) / 2.0 * (np.sqrt(c * c + eta * eta) - eta) + (vp + vn) / 2.0 * c


def sigma_eta_prime(c, vp, vn, eta: float = 0.0):
    """Derivative of sigma_eta in c; (vp + vn) / 2 at the kink when eta = 0"""
    c = np.asarray(c, dtype=np.float64)
    root = np.sqrt(c * c + eta * eta)
    ratio = np.divide(c, root, out=np.zeros_like(root), where=root > 0)
    return (vp - vn) / 2.0 * ratio + (vp + vn) / 2.0


@dataclass
class ReferenceObjectiveParams:
    y_prime: WeightFunction
    v_plus: WeightFunction
    m: WeightFunction
    eta: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")

    @classmethod
    def default(cls, count: int = DEFAULT_BASIS_COUNT, delta: float = DEFAULT_BASIS_DELTA,
                eta: float = 0.0) -> "ReferenceObjectiveParams":
        return cls(
            y_prime=WeightFunction.gaussian(count, delta),
            v_plus=WeightFunction.constant(1.0, count, delta),
            m=WeightFunction.scaled_tanh(count, delta),
            eta=eta,
        )

    @classmethod
    def quadratic(cls, y_prime: Optional[WeightFunction] = None, count: int = DEFAULT_BASIS_COUNT,
                  delta: float = DEFAULT_BASIS_DELTA) -> "ReferenceObjectiveParams":
        """v+ = v- = 1 and eta = 0, turning the reference term into linear regression"""
        return cls(
            y_prime=y_prime if y_prime is not None else WeightFunction.gaussian(count, delta),
            v_plus=WeightFunction.constant(1.0, count, delta),
            m=WeightFunction.constant(1.0, count, delta),
            eta=0.0,
        )

    def weight_fields(self, dist: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate (v+, v-, y) over a distance field, with v- = v+ m and y = v+ y'"""
        vp = self.v_plus(dist)
        vn = vp * self.m(dist)
        y = vp * self.y_prime(dist)
        return vp, vn, y


@dataclass
class QueryObjectiveParams:
    """4-D kernel R factorized as two 2-D convolutions.

    ``kernel_a`` has shape (Q', 1, K, K) and runs over the query dims
    (k, l) of every (i, j); ``kernel_b`` has shape (Q, Q', K, K) and runs
    over (i, j). Both are cross-correlations with zero padding (K-1)/2
    and no bias.
    """
    kernel_a: np.ndarray
    kernel_b: np.ndarray

    def __post_init__(self):
        self.kernel_a = np.asarray(self.kernel_a, dtype=np.float64)
        self.kernel_b = np.asarray(self.kernel_b, dtype=np.float64)
        if self.kernel_a.ndim != 4 or self.kernel_a.shape[1] != 1:
            raise DimensionError(f"kernel_a must have shape (Q', 1, K, K), got {self.kernel_a.shape}")
        if self.kernel_b.ndim != 4 or self.kernel_b.shape[1] != self.kernel_a.shape[0]:
            raise DimensionError(
                f"kernel_b must have shape (Q, {self.kernel_a.shape[0]}, K, K), got {self.kernel_b.shape}")
        k = self.kernel_a.shape[2]
        if self.kernel_a.shape[2:] != (k, k) or self.kernel_b.shape[2:] != (k, k):
            raise DimensionError("both kernels must share one square spatial size K")
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")

    @property
    def kernel_size(self) -> int:
        return self.kernel_a.shape[2]

    @property
    def channels(self) -> int:
        return self.kernel_b.shape[0]

    @property
    def mid_channels(self) -> int:
        return self.kernel_a.shape[0]

    @classmethod
    def default(cls, kernel_size: int = 3, channels: int = 16, mid_channels: int = 16,
                std: float = 0.01, seed: int = 0) -> "QueryObjectiveParams":
        rng = np.random.default_rng(seed)
        kernel_a = rng.normal(0.0, std, size=(mid_channels, 1, kernel_size, kernel_size))
        kernel_b = rng.normal(0.0, std, size=(channels, mid_channels, kernel_size, kernel_size))
        return cls(kernel_a, kernel_b)

    @classmethod
    def identity(cls, kernel_size: int = 3) -> "QueryObjectiveParams":
        delta = np.zeros((1, 1, kernel_size, kernel_size))
        delta[0, 0, kernel_size // 2, kernel_size // 2] = 1.0
        return cls(delta, delta.copy())


@dataclass
class ObjectiveParams:
    reference: ReferenceObjectiveParams = field(default_factory=ReferenceObjectiveParams.default)
    query: Optional[QueryObjectiveParams] = None


def _check_field(x: np.ndarray, ndim: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {x.shape}")
    return x


def _conv_query_dims(x: np.ndarray, kernel_a: np.ndarray) -> np.ndarray:
    # (H, W, A, B) -> (Q', H, W, A, B), filtering over (A, B)
    k = kernel_a.shape[2]
    p = k // 2
    _, _, a, b = x.shape
    x_pad = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((kernel_a.shape[0],) + x.shape)
    for u in range(k):
        for v in range(k):
            out += kernel_a[:, 0, u, v, None, None, None, None] * x_pad[None, :, :, u:u + a, v:v + b]
    return out


def _conv_query_dims_t(y: np.ndarray, kernel_a: np.ndarray) -> np.ndarray:
    # transpose of _conv_query_dims: (Q', H, W, A, B) -> (H, W, A, B)
    k = kernel_a.shape[2]
    p = k // 2
    _, h, w, a, b = y.shape
    acc = np.zeros((h, w, a + 2 * p, b + 2 * p))
    for u in range(k):
        for v in range(k):
            acc[:, :, u:u + a, v:v + b] += np.tensordot(kernel_a[:, 0, u, v], y, axes=(0, 0))
    return acc[:, :, p:p + a, p:p + b]


def _conv_ref_dims(y: np.ndarray, kernel_b: np.ndarray) -> np.ndarray:
    # (Q', H, W, A, B) -> (Q, H, W, A, B), filtering over (H, W)
    k = kernel_b.shape[2]
    p = k // 2
    _, h, w, _, _ = y.shape
    y_pad = np.pad(y, ((0, 0), (p, p), (p, p), (0, 0), (0, 0)))
    out = np.zeros((kernel_b.shape[0],) + y.shape[1:])
    for u in range(k):
        for v in range(k):
            out += np.tensordot(kernel_b[:, :, u, v], y_pad[:, u:u + h, v:v + w], axes=(1, 0))
    return out


def _conv_ref_dims_t(z: np.ndarray, kernel_b: np.ndarray) -> np.ndarray:
    # transpose of _conv_ref_dims: (Q, H, W, A, B) -> (Q', H, W, A, B)
    k = kernel_b.shape[2]
    p = k // 2
    _, h, w, a, b = z.shape
    acc = np.zeros((kernel_b.shape[1], h + 2 * p, w + 2 * p, a, b))
    for u in range(k):
        for v in range(k):
            acc[:, u:u + h, v:v + w] += np.tensordot(kernel_b[:, :, u, v], z, axes=(0, 0))
    return acc[:, p:p + h, p:p + w]


def apply_query_kernel(x: np.ndarray, q: QueryObjectiveParams) -> np.ndarray:
    """R * x for a volume-shaped field x, giving a Q-channel field"""
    x = _check_field(x, 4, "volume field")
    return _conv_ref_dims(_conv_query_dims(x, q.kernel_a), q.kernel_b)


def conv_adjoint(y: np.ndarray, q: QueryObjectiveParams) -> np.ndarray:
    """[R *]^T applied to a Q-channel field"""
    y = _check_field(y, 5, "query residual")
    if y.shape[0] != q.channels:
        raise DimensionError(f"field has {y.shape[0]} channels, kernel produces {q.channels}")
    return _conv_query_dims_t(_conv_ref_dims_t(y, q.kernel_b), q.kernel_a)


def reference_residual(w, f_r, p: ReferenceObjectiveParams, mode: CorrMode) -> np.ndarray:
    f_r = check_feature_map(f_r, "reference features")
    c = mode.corr(w, f_r)
    vp, vn, y = p.weight_fields(mode.distance_field(*f_r.shape[:2]))
    return sigma_eta(c, vp, vn, p.eta) - y


def reference_loss(w, f_r, p: ReferenceObjectiveParams, mode: CorrMode) -> float:
    r = reference_residual(w, f_r, p, mode)
    return float(np.sum(r * r))


def query_residual(w, f_q, q: QueryObjectiveParams, mode: CorrMode) -> np.ndarray:
    return apply_query_kernel(mode.corr(w, f_q), q)


def query_loss(w, f_q, q: QueryObjectiveParams, mode: CorrMode) -> float:
    r = query_residual(w, f_q, q, mode)
    return float(np.sum(r * r))


def total_loss(w, f_r, f_q, params: ObjectiveParams, lam: float, mode: CorrMode,
               use_query: bool) -> float:
    w = check_feature_map(w, "filter map")
    loss = reference_loss(w, f_r, params.reference, mode)
    if use_query:
        if params.query is None:
            raise ValueError("use_query is set but no query kernels were given")
        loss += query_loss(w, f_q, params.query, mode)
    return loss + float(np.sum((lam * w) ** 2))
