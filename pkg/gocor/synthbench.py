"""Synthetic repeated-pattern scenes and the disambiguation experiment.

A scene holds ``n_repeats`` copies of one patch on a smooth low-amplitude
background. All copies share the same patch vectors. Each copy after the
first also carries one context vector, orthogonal to the patch subspace
and shared by all of its cells, so plain correlation against a patch
vector scores every copy identically while the reference objective can
still tell them apart. The query map is the reference map translated by
``shift``.

The context is what makes the experiment meaningful. Global correlation
compares single feature vectors, so if the twin of the probe carried
exactly the probe's vector, every filter w would give corr(w, f_probe)
== corr(w, f_twin) and the margin would stay 0 at every iteration.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.ndimage import gaussian_filter

from gocor.corrvol import CorrespondenceVolume
from gocor.errors import EmptyInputError, SceneGeometryError
from gocor.metrics import FlowField, aepe, f1_outlier_rate, flow_from_volume, pck
from gocor.objective import ObjectiveParams
from gocor.solver import InitializerConfig, SolverConfig, run_gocor

logger = logging.getLogger(__name__)

Coord = Tuple[int, int]

MAX_PLACEMENT_TRIES = 1000


@dataclass
class SyntheticScene:
    f_r: np.ndarray
    f_q: np.ndarray
    gt_flow: FlowField
    # query-frame positions of the probe's twins in the other copies
    distractor_locations: List[Coord]
    probe: Coord
    shift: Coord
    patch_size: int
    copy_origins: List[Coord] = field(default_factory=list)

    @property
    def true_loc(self) -> Coord:
        return (self.probe[0] + self.shift[0], self.probe[1] + self.shift[1])

    def copy_mask(self, copy: int = 0) -> np.ndarray:
        """Reference locations covered by one copy of the patch"""
        mask = np.zeros(self.f_r.shape[:2], dtype=bool)
        y0, x0 = self.copy_origins[copy]
        mask[y0:y0 + self.patch_size, x0:x0 + self.patch_size] = True
        return mask


def _place_copies(rng: np.random.Generator, height: int, width: int, patch_size: int,
                  shift: Coord, n_repeats: int, min_sep: float) -> List[Coord]:
    dy, dx = shift
    y_lo, y_hi = max(0, -dy), min(height, height - dy) - patch_size
    x_lo, x_hi = max(0, -dx), min(width, width - dx) - patch_size
    if y_hi < y_lo or x_hi < x_lo:
        raise SceneGeometryError(f"a {patch_size}x{patch_size} patch shifted by {shift} "
                                 f"does not fit a {height}x{width} grid")
    origins: List[Coord] = []
    for _ in range(MAX_PLACEMENT_TRIES):
        cand = (int(rng.integers(y_lo, y_hi + 1)), int(rng.integers(x_lo, x_hi + 1)))
        if all(math.hypot(cand[0] - o[0], cand[1] - o[1]) >= min_sep for o in origins):
            origins.append(cand)
            if len(origins) == n_repeats:
                return origins
    raise SceneGeometryError(f"could not place {n_repeats} copies at least {min_sep} cells apart "
                             f"in a {height}x{width} grid")


def make_repetitive_scene(height: int = 32, width: int = 32, depth: int = 16, n_repeats: int = 2,
                          shift: Coord = (2, 1), noise_std: float = 0.0, seed: int = 0,
                          patch_size: int = 3, context_norm: float = 2.0,
                          background_level: float = 0.1, smoothing: float = 0.5,
                          rho_excl: float = 2.0) -> SyntheticScene:
    """Build a seeded reference/query pair with ``n_repeats`` copies of one patch.

    Patch vectors are orthonormal, so they have unit norm. After Gaussian
    smoothing the background is scaled to an RMS feature norm of
    ``background_level``. With a weak background and one context vector per
    copy the exact Gauss-Newton step does not overshoot along the context
    direction, so the probe margin grows at every iteration.
    """
    if n_repeats < 2:
        raise SceneGeometryError(f"need at least 2 repeats, got {n_repeats}")
    cells = patch_size * patch_size
    if cells >= depth:
        raise SceneGeometryError(f"a {patch_size}x{patch_size} patch needs depth > {cells}, got {depth}")
    dy, dx = shift
    margin = max(abs(dy), abs(dx))
    rng = np.random.default_rng(seed)

    canvas = rng.normal(size=(height + 2 * margin, width + 2 * margin, depth))
    if smoothing > 0:
        canvas = gaussian_filter(canvas, sigma=(smoothing, smoothing, 0))
    canvas *= background_level / (canvas.std() * math.sqrt(depth))

    basis, _ = np.linalg.qr(rng.normal(size=(depth, depth)))
    patch = basis[:, :cells].T.reshape(patch_size, patch_size, depth)
    complement = basis[:, cells:]

    min_sep = 2 * patch_size + rho_excl
    origins = _place_copies(rng, height, width, patch_size, shift, n_repeats, min_sep)
    for n, (y0, x0) in enumerate(origins):
        block = patch.copy()
        if n > 0:
            ctx = complement @ rng.normal(size=complement.shape[1])
            block += context_norm * ctx / np.linalg.norm(ctx)
        canvas[margin + y0:margin + y0 + patch_size, margin + x0:margin + x0 + patch_size] = block

    f_r = np.ascontiguousarray(canvas[margin:margin + height, margin:margin + width])
    f_q = np.ascontiguousarray(canvas[margin - dy:margin - dy + height, margin - dx:margin - dx + width])
    if noise_std > 0:
        f_q = f_q + noise_std * rng.normal(size=f_q.shape)

    centre = patch_size // 2
    probe = (origins[0][0] + centre, origins[0][1] + centre)
    distractors = [(y0 + centre + dy, x0 + centre + dx) for y0, x0 in origins[1:]]
    return SyntheticScene(
        f_r=f_r,
        f_q=f_q,
        gt_flow=FlowField.constant(height, width, u=dx, v=dy),
        distractor_locations=distractors,
        probe=probe,
        shift=(dy, dx),
        patch_size=patch_size,
        copy_origins=origins,
    )


def margin_statistic(volume: CorrespondenceVolume, probe: Coord, true_loc: Coord, rho_excl: float = 2.0) -> float:
    """Confidence at the true match minus the best confidence farther than rho_excl from it"""
    pi, pj = probe
    h, w = volume.height, volume.width
    if not (0 <= true_loc[0] < h and 0 <= true_loc[1] < w):
        raise ValueError(f"true location {true_loc} is outside the {h}x{w} grid")
    scores = volume.probe_slice(pi, pj)
    if volume.mode.is_global:
        kk, ll = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        inside = np.ones((h, w), dtype=bool)
        true_score = scores[true_loc]
    else:
        r = volume.radius
        ti, tj = true_loc[0] - pi, true_loc[1] - pj
        if max(abs(ti), abs(tj)) > r:
            raise ValueError(f"true location {true_loc} is outside the search radius {r} of {probe}")
        disp = np.arange(-r, r + 1)
        kk, ll = np.meshgrid(pi + disp, pj + disp, indexing="ij")
        inside = (kk >= 0) & (kk < h) & (ll >= 0) & (ll < w)
        true_score = scores[ti + r, tj + r]
    far = inside & (np.hypot(kk - true_loc[0], ll - true_loc[1]) > rho_excl)
    if not np.any(far):
        raise EmptyInputError(f"no locations farther than {rho_excl} from {true_loc}")
    return float(true_score - np.max(scores[far]))


class IterationResult(BaseModel):
    iteration: int
    margin: float
    true_confidence: float
    argmax_correct: bool
    loss: float


class DisambiguationReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    seed: Optional[int] = None
    probe: Tuple[int, int]
    true_loc: Tuple[int, int]
    iterations: List[IterationResult]
    region_aepe: float
    region_pck: float
    region_f1: float
    # wall-clock seconds per phase, kept out of the serialized report
    timings: Dict[str, float] = Field(default_factory=dict, exclude=True)
    # (estimated, ground truth) flow over the probe copy, for dataset-level PCK
    flow_pair: Optional[Tuple[FlowField, FlowField]] = Field(None, exclude=True)

    @property
    def margins(self) -> List[float]:
        return [it.margin for it in self.iterations]

    @property
    def final_correct(self) -> bool:
        return self.iterations[-1].argmax_correct


def run_disambiguation_experiment(scene: SyntheticScene, params: ObjectiveParams, cfg: SolverConfig,
                                  init_cfg: Optional[InitializerConfig] = None, rho_excl: float = 2.0,
                                  pck_threshold: float = 1.0, seed: Optional[int] = None) -> DisambiguationReport:
    """Track margin and argmax at the probe after every solver iteration 0..num_iter.

    Iterate n of a single solve equals the filter map gocor_correlation
    produces with num_iter = n, so one solve covers every count.
    """
    init_cfg = init_cfg or InitializerConfig()
    mode = cfg.mode
    volumes: List[CorrespondenceVolume] = []
    volume_time = 0.0

    def record(n: int, w: np.ndarray):
        nonlocal volume_time
        start = time.perf_counter()
        volumes.append(CorrespondenceVolume(mode.kind, mode.corr(w, scene.f_q), mode.radius))
        volume_time += time.perf_counter() - start

    start = time.perf_counter()
    _, trace = run_gocor(scene.f_r, scene.f_q, params, cfg, init_cfg, callback=record)
    solve_time = time.perf_counter() - start - volume_time

    start = time.perf_counter()
    expected = (scene.shift[1], scene.shift[0])
    iterations = []
    final_flow = None
    for n, volume in enumerate(volumes):
        final_flow = flow_from_volume(volume)
        hit = tuple(final_flow.flow[scene.probe]) == expected
        if mode.is_global:
            true_conf = volume.probe_slice(*scene.probe)[scene.true_loc]
        else:
            r = mode.radius
            true_conf = volume.probe_slice(*scene.probe)[scene.shift[0] + r, scene.shift[1] + r]
        iterations.append(IterationResult(
            iteration=n,
            margin=margin_statistic(volume, scene.probe, scene.true_loc, rho_excl),
            true_confidence=float(true_conf),
            argmax_correct=bool(hit),
            loss=trace.losses[n],
        ))
    region = FlowField(final_flow.flow, mask=scene.copy_mask(0))
    report = DisambiguationReport(
        seed=seed,
        probe=scene.probe,
        true_loc=scene.true_loc,
        iterations=iterations,
        region_aepe=aepe(region, scene.gt_flow),
        region_pck=pck(region, scene.gt_flow, pck_threshold),
        region_f1=f1_outlier_rate(region, scene.gt_flow),
    )
    report.flow_pair = (region, scene.gt_flow)
    report.timings = {
        "solve": solve_time,
        "volumes": volume_time,
        "evaluate": time.perf_counter() - start,
    }
    logger.info(f"disambiguation margins {[round(m, 6) for m in report.margins]}, "
                f"final argmax {'correct' if report.final_correct else 'wrong'}")
    return report
