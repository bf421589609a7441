"""Filter-map initialization and the unrolled steepest-descent solve.

``run_gocor`` starts from a closed-form filter map and takes a fixed
number of gradient steps on the total objective, each with the step
length that minimizes the Gauss-Newton model along the gradient.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from gocor.corrvol import CorrespondenceVolume, CorrMode, check_feature_map, check_same_shape, spatial_mean
from gocor.objective import (
    ObjectiveParams,
    apply_query_kernel,
    conv_adjoint,
    sigma_eta,
    sigma_eta_prime,
)
from gocor.errors import DimensionError

logger = logging.getLogger(__name__)

STATIONARY_GRAD_NORM = 1e-12
DEGENERATE_CURVATURE = 1e-12


class InitializerVariant(Enum):
    ZERO = "zero"
    SIMPLE = "simple"
    FLEXIBLE_SIMPLE = "flexible_simple"
    CONTEXT_AWARE = "context_aware"
    FLEXIBLE_CONTEXT_AWARE = "flexible_context_aware"


@dataclass
class InitializerConfig:
    variant: InitializerVariant = InitializerVariant.SIMPLE
    beta: Union[float, np.ndarray] = 1.0
    gamma: Union[float, np.ndarray] = 0.0
    # relative threshold on |f_bar|^2 |f|^2 - (f^T f_bar)^2
    eps: float = 1e-10

    @property
    def is_flexible(self) -> bool:
        return self.variant in (InitializerVariant.FLEXIBLE_SIMPLE, InitializerVariant.FLEXIBLE_CONTEXT_AWARE)

    @property
    def is_context_aware(self) -> bool:
        return self.variant in (InitializerVariant.CONTEXT_AWARE, InitializerVariant.FLEXIBLE_CONTEXT_AWARE)

    def coefficients(self, depth: int) -> Tuple[np.ndarray, np.ndarray]:
        """beta and gamma, as scalars or as length-D vectors for flexible variants"""
        beta = np.asarray(self.beta, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if not self.is_flexible:
            if beta.ndim or gamma.ndim:
                raise ValueError(f"{self.variant.value} initializer takes scalar beta and gamma")
            return beta, gamma
        beta = np.broadcast_to(beta, (depth,)) if beta.ndim == 0 else beta
        gamma = np.broadcast_to(gamma, (depth,)) if gamma.ndim == 0 else gamma
        if beta.shape != (depth,) or gamma.shape != (depth,):
            raise DimensionError(f"flexible beta/gamma must have length {depth}")
        return beta, gamma


@dataclass
class SolverConfig:
    num_iter: int = 3
    lam: float = 0.1
    use_query: bool = False
    # 2 gives the exact line-search minimizer of the Gauss-Newton model, 1 the un-halved step
    curvature_scale: float = 2.0
    mode: CorrMode = field(default_factory=CorrMode.global_)

    def __post_init__(self):
        if self.num_iter < 0:
            raise ValueError(f"num_iter must be nonnegative, got {self.num_iter}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.curvature_scale > 0:
            raise ValueError(f"curvature_scale must be positive, got {self.curvature_scale}")

    @classmethod
    def for_mode(cls, mode: CorrMode, **kwargs) -> "SolverConfig":
        kwargs.setdefault("num_iter", 3 if mode.is_global else 7)
        return cls(mode=mode, **kwargs)


@dataclass
class SolveTrace:
    # losses[0] is at w0, losses[n] after step n
    losses: List[float] = field(default_factory=list)
    alphas: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    init_fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "losses": list(self.losses),
            "alphas": list(self.alphas),
            "grad_norms": list(self.grad_norms),
            "init_fallbacks": self.init_fallbacks,
        }


def _initialize(f_r, cfg: InitializerConfig) -> Tuple[np.ndarray, int]:
    f = np.asarray(check_feature_map(f_r, "reference features"), dtype=np.float64)
    if cfg.variant is InitializerVariant.ZERO:
        return np.zeros_like(f), 0
    beta, gamma = cfg.coefficients(f.shape[2])
    norm = np.linalg.norm(f, axis=-1, keepdims=True)
    unit = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
    simple = beta * unit
    if not cfg.is_context_aware:
        return simple, int(np.count_nonzero(norm == 0))

    f_bar = spatial_mean(f)
    ff = norm ** 2
    fb = (f @ f_bar)[..., None]
    bb = float(f_bar @ f_bar)
    den = bb * ff - fb ** 2
    num = (beta * bb - gamma * fb) * f - (beta * fb - gamma * ff) * f_bar
    degenerate = den <= cfg.eps * bb * ff
    safe_den = np.where(degenerate, 1.0, den)
    w0 = np.where(degenerate, simple, num / safe_den)
    return w0, int(np.count_nonzero(degenerate))


def init_filter_map(f_r, cfg: InitializerConfig) -> np.ndarray:
    """Closed-form starting filter map w0.

    Zero gives w0 = 0. Simple variants give beta * f_ij / |f_ij|.
    Context-aware variants solve w0_ij = a f_ij + b f_bar with w0_ij^T f_ij = beta and
    w0_ij^T f_bar = gamma; locations where that system is degenerate
    fall back to the simple form.
    """
    w0, fallbacks = _initialize(f_r, cfg)
    if fallbacks:
        logger.warning(f"initializer fell back to the simple form at {fallbacks} locations")
    return w0


class _Problem:
    """One solve's inputs with the distance-dependent weights evaluated once"""

    def __init__(self, f_r, f_q, params: ObjectiveParams, cfg: SolverConfig):
        self.f_r = np.asarray(check_feature_map(f_r, "reference features"), dtype=np.float64)
        self.f_q = np.asarray(check_feature_map(f_q, "query features"), dtype=np.float64)
        check_same_shape(self.f_r, self.f_q)
        if cfg.use_query and params.query is None:
            raise ValueError("use_query is set but no query kernels were given")
        self.params = params
        self.cfg = cfg
        self.mode = cfg.mode
        dist = self.mode.distance_field(*self.f_r.shape[:2])
        self.vp, self.vn, self.y = params.reference.weight_fields(dist)
        self.eta = params.reference.eta

    def check_filter(self, w) -> np.ndarray:
        w = np.asarray(check_feature_map(w, "filter map"), dtype=np.float64)
        check_same_shape(w, self.f_r)
        return w

    def loss(self, w: np.ndarray) -> float:
        c = self.mode.corr(w, self.f_r)
        r = sigma_eta(c, self.vp, self.vn, self.eta) - self.y
        loss = float(np.sum(r * r))
        if self.cfg.use_query:
            rq = apply_query_kernel(self.mode.corr(w, self.f_q), self.params.query)
            loss += float(np.sum(rq * rq))
        return loss + float(np.sum((self.cfg.lam * w) ** 2))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        c = self.mode.corr(w, self.f_r)
        r = sigma_eta(c, self.vp, self.vn, self.eta) - self.y
        slope = sigma_eta_prime(c, self.vp, self.vn, self.eta)
        grad = 2.0 * self.mode.adjoint(slope * r, self.f_r)
        if self.cfg.use_query:
            rq = apply_query_kernel(self.mode.corr(w, self.f_q), self.params.query)
            grad += 2.0 * self.mode.adjoint(conv_adjoint(rq, self.params.query), self.f_q)
        return grad + 2.0 * self.cfg.lam ** 2 * w

    def step_length(self, w: np.ndarray, g: np.ndarray) -> float:
        num = float(np.sum(g * g))
        if num == 0.0:
            return 0.0
        slope = sigma_eta_prime(self.mode.corr(w, self.f_r), self.vp, self.vn, self.eta)
        jr = slope * self.mode.corr(g, self.f_r)
        curvature = float(np.sum(jr * jr))
        if self.cfg.use_query:
            jq = apply_query_kernel(self.mode.corr(g, self.f_q), self.params.query)
            curvature += float(np.sum(jq * jq))
        curvature += float(np.sum((self.cfg.lam * g) ** 2))
        if self.cfg.curvature_scale * curvature <= DEGENERATE_CURVATURE * num:
            logger.warning("step length denominator is degenerate, taking no step")
            return 0.0
        return num / (self.cfg.curvature_scale * curvature)

    def iterate(self, w: np.ndarray) -> Tuple[np.ndarray, float, float, float]:
        g = self.gradient(w)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= STATIONARY_GRAD_NORM:
            return w, 0.0, self.loss(w), grad_norm
        alpha = self.step_length(w, g)
        w_next = w - alpha * g
        return w_next, alpha, self.loss(w_next), grad_norm


def grad_total(w, f_r, f_q, params: ObjectiveParams, cfg: SolverConfig) -> np.ndarray:
    """Gradient of the total loss in w"""
    problem = _Problem(f_r, f_q, params, cfg)
    return problem.gradient(problem.check_filter(w))


def step_length(w, g, f_r, f_q, params: ObjectiveParams, cfg: SolverConfig) -> float:
    """|g|^2 / (curvature_scale * |J g|^2), or 0 when J g vanishes"""
    problem = _Problem(f_r, f_q, params, cfg)
    return problem.step_length(problem.check_filter(w), problem.check_filter(g))


def sd_iteration(w, f_r, f_q, params: ObjectiveParams, cfg: SolverConfig) -> Tuple[np.ndarray, float, float]:
    problem = _Problem(f_r, f_q, params, cfg)
    w_next, alpha, loss, _ = problem.iterate(problem.check_filter(w))
    return w_next, alpha, loss


def run_gocor(f_r, f_q, params: ObjectiveParams, cfg: SolverConfig, init_cfg: InitializerConfig,
              callback: Optional[Callable[[int, np.ndarray], None]] = None) -> Tuple[np.ndarray, SolveTrace]:
    """Initialize the filter map and run ``cfg.num_iter`` steepest-descent steps.

    ``callback(n, w)`` is called with every iterate, n = 0 being w0.
    """
    problem = _Problem(f_r, f_q, params, cfg)
    w, fallbacks = _initialize(problem.f_r, init_cfg)
    if fallbacks:
        logger.warning(f"initializer fell back to the simple form at {fallbacks} locations")
    trace = SolveTrace(init_fallbacks=fallbacks)
    trace.losses.append(problem.loss(w))
    if callback is not None:
        callback(0, w)
    for n in range(1, cfg.num_iter + 1):
        w, alpha, loss, grad_norm = problem.iterate(w)
        trace.alphas.append(alpha)
        trace.grad_norms.append(grad_norm)
        trace.losses.append(loss)
        logger.debug(f"iteration {n}: loss={loss:.6g} alpha={alpha:.6g} |grad|={grad_norm:.6g}")
        if callback is not None:
            callback(n, w)
    logger.info(f"solved {cfg.mode.kind.value} filter map in {cfg.num_iter} iterations, "
                f"loss {trace.losses[0]:.6g} -> {trace.losses[-1]:.6g}")
    return w, trace


def gocor_correlation(f_r, f_q, params: ObjectiveParams, cfg: SolverConfig,
                      init_cfg: InitializerConfig) -> CorrespondenceVolume:
    """Correspondence volume corr(w*, f_q) from the optimized filter map"""
    w, _ = run_gocor(f_r, f_q, params, cfg, init_cfg)
    return CorrespondenceVolume(cfg.mode.kind, cfg.mode.corr(w, f_q), cfg.mode.radius)
