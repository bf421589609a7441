"""Brute-force reference implementations for checking the fast paths.

Everything here is written with explicit loops over plain Python floats
and shares no numerics with corrvol, objective or solver. Only meant for
small problems (up to about 8x8x6).
"""

import math
from itertools import product
from typing import Callable, Tuple

import numpy as np

from gocor.corrvol import CorrespondenceVolume, CorrMode
from gocor.errors import DimensionError
from gocor.objective import ObjectiveParams, QueryObjectiveParams, Squash, WeightFunction


def brute_corr(w, f, mode: CorrMode) -> CorrespondenceVolume:
    w = np.asarray(w, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if w.ndim != 3 or w.shape != f.shape:
        raise DimensionError(f"feature maps differ in shape: {w.shape} vs {f.shape}")
    h, wd, depth = w.shape
    if mode.is_global:
        out = np.zeros((h, wd, h, wd))
        for i, j, k, l in product(range(h), range(wd), range(h), range(wd)):
            s = 0.0
            for d in range(depth):
                s += float(w[i, j, d]) * float(f[k, l, d])
            out[i, j, k, l] = s
        return CorrespondenceVolume(mode.kind, out)

    r = mode.radius
    out = np.zeros((h, wd, 2 * r + 1, 2 * r + 1))
    for i, j in product(range(h), range(wd)):
        for dk, dl in product(range(-r, r + 1), range(-r, r + 1)):
            k, l = i + dk, j + dl
            if not (0 <= k < h and 0 <= l < wd):
                continue
            s = 0.0
            for d in range(depth):
                s += float(w[i, j, d]) * float(f[k, l, d])
            out[i, j, dk + r, dl + r] = s
    return CorrespondenceVolume(mode.kind, out, r)


def naive_conv4d_seq(volume, q: QueryObjectiveParams) -> np.ndarray:
    """Two zero-padded 2-D cross-correlations, first over (k, l) then over (i, j)"""
    x = np.asarray(volume.data if isinstance(volume, CorrespondenceVolume) else volume, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"volume must be 4-D, got shape {x.shape}")
    ka, kb = q.kernel_a, q.kernel_b
    size = ka.shape[2]
    pad = size // 2
    h, wd, na, nb = x.shape
    mid, out_ch = ka.shape[0], kb.shape[0]

    stage = np.zeros((mid, h, wd, na, nb))
    for c, i, j, a, b in product(range(mid), range(h), range(wd), range(na), range(nb)):
        s = 0.0
        for u, v in product(range(size), range(size)):
            aa, bb = a + u - pad, b + v - pad
            if 0 <= aa < na and 0 <= bb < nb:
                s += float(ka[c, 0, u, v]) * float(x[i, j, aa, bb])
        stage[c, i, j, a, b] = s

    out = np.zeros((out_ch, h, wd, na, nb))
    for o, i, j, a, b in product(range(out_ch), range(h), range(wd), range(na), range(nb)):
        s = 0.0
        for c in range(mid):
            for u, v in product(range(size), range(size)):
                ii, jj = i + u - pad, j + v - pad
                if 0 <= ii < h and 0 <= jj < wd:
                    s += float(kb[o, c, u, v]) * float(stage[c, ii, jj, a, b])
        out[o, i, j, a, b] = s
    return out


def numeric_grad(loss_fn: Callable[[np.ndarray], float], w, h: float = 1e-6) -> np.ndarray:
    """Central differences (L(w + h e) - L(w - h e)) / 2h per coordinate"""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    w = np.array(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + h
        up = loss_fn(w)
        w[idx] = orig - h
        down = loss_fn(w)
        w[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def _hat_sum(wf: WeightFunction, d: float) -> float:
    n, delta = wf.count, wf.delta
    total = 0.0
    for k in range(n):
        if k < n - 1:
            rho = max(0.0, 1.0 - abs(d - k * delta) / delta)
        else:
            rho = max(0.0, min(1.0, 1.0 + (d - k * delta) / delta))
        total += float(wf.coefficients[k]) * rho
    if wf.squash is Squash.SIGMOID:
        return 1.0 / (1.0 + math.exp(-total))
    return total


def _entry_distance(mode: CorrMode, i: int, j: int, a: int, b: int) -> float:
    if mode.is_global:
        return math.sqrt((i - a) ** 2 + (j - b) ** 2)
    return math.sqrt((a - mode.radius) ** 2 + (b - mode.radius) ** 2)


def _reference_blocks(w, g, f_r, params: ObjectiveParams, mode: CorrMode) -> Tuple[np.ndarray, np.ndarray]:
    # residual r and directional Jacobian product J g of the reference term
    ref = params.reference
    c = brute_corr(w, f_r, mode).data
    cg = brute_corr(g, f_r, mode).data
    r = np.zeros_like(c)
    jg = np.zeros_like(c)
    eta = ref.eta
    for idx in np.ndindex(c.shape):
        dist = _entry_distance(mode, *idx)
        vp = _hat_sum(ref.v_plus, dist)
        vn = vp * _hat_sum(ref.m, dist)
        y = vp * _hat_sum(ref.y_prime, dist)
        x = float(c[idx])
        root = math.sqrt(x * x + eta * eta)
        r[idx] = 0.5 * (vp - vn) * (root - eta) + 0.5 * (vp + vn) * x - y
        slope = 0.5 * (vp - vn) * (x / root if root > 0 else 0.0) + 0.5 * (vp + vn)
        jg[idx] = slope * float(cg[idx])
    return r, jg


def line_search_oracle(w, g, f_r, f_q, params: ObjectiveParams, cfg) -> float:
    """Exact minimizer along -g of the linearized squared-residual model.

    Builds phi(alpha) = sum_b |r_b - alpha J_b g|^2 + |lam (w - alpha g)|^2
    from brute-force blocks and solves phi'(alpha) = 0.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    mode = cfg.mode
    lam2 = cfg.lam * cfg.lam

    r, jg = _reference_blocks(w, g, f_r, params, mode)
    linear = float(np.sum(r * jg))
    quad = float(np.sum(jg * jg))
    if cfg.use_query:
        rq = naive_conv4d_seq(brute_corr(w, f_q, mode), params.query)
        jq = naive_conv4d_seq(brute_corr(g, f_q, mode), params.query)
        linear += float(np.sum(rq * jq))
        quad += float(np.sum(jq * jq))
    linear += lam2 * float(np.sum(w * g))
    quad += lam2 * float(np.sum(g * g))
    if quad <= 0.0:
        return 0.0
    return linear / quad
