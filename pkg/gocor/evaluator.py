import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List

import numpy as np

from gocor.corrvol import CorrMode, global_corr, local_corr, spatial_mean
from gocor.objective import (
    ObjectiveParams,
    QueryObjectiveParams,
    ReferenceObjectiveParams,
    Squash,
    WeightFunction,
    apply_query_kernel,
    conv_adjoint,
    rho_basis,
    total_loss,
)
from gocor.oracle import brute_corr, line_search_oracle, naive_conv4d_seq, numeric_grad
from gocor.solver import (
    InitializerConfig,
    InitializerVariant,
    SolverConfig,
    grad_total,
    init_filter_map,
    run_gocor,
    step_length,
)

logger = logging.getLogger(__name__)


@dataclass
class CheckCase:
    """One named check; ``run`` returns an error value compared against ``tolerance``"""
    case_id: str
    run: Callable[[], float]
    tolerance: float


class CheckSuiteEvaluator:
    def __init__(self, name: str):
        self.name = name
        self.results_history: List[Dict] = []

    def evaluate_cases(self, cases: Iterable[CheckCase]) -> Dict:
        """Run every case, print failures, and return the suite result"""
        cases = list(cases)
        passed = 0
        results = []

        print(f"\n=== Running {self.name} suite: {len(cases)} checks ===")

        for case in cases:
            start_time = time.time()
            try:
                value = float(case.run())
                success = math.isfinite(value) and value <= case.tolerance
                reason = f"error {value:.3e} vs tolerance {case.tolerance:.1e}"
            except Exception as e:
                value = float("nan")
                success = False
                reason = f"Exception: {str(e)}"
            elapsed_time = time.time() - start_time

            results.append({
                "case_id": case.case_id,
                "success": success,
                "value": value if math.isfinite(value) else None,
                "tolerance": case.tolerance,
                "reason": reason,
                "elapsed_time": elapsed_time,
            })
            if success:
                passed += 1
                logger.debug(f"{case.case_id}: {reason}")
            else:
                print(f"❌ FAILED {case.case_id}: {reason}")

        suite_result = {
            "suite": self.name,
            "timestamp": time.time(),
            "num_checks": len(cases),
            "passed": passed,
            "success": passed == len(cases),
            "worst_value": max((r["value"] for r in results if r["value"] is not None), default=None),
            "results": results,
        }
        self.results_history.append(suite_result)

        status = "✅ PASSED" if suite_result["success"] else "❌ FAILED"
        print(f"=== {status}: {passed}/{len(cases)} checks ===")
        return suite_result

    def get_summary(self) -> Dict:
        """Totals over every suite run so far"""
        total = sum(r["num_checks"] for r in self.results_history)
        passed = sum(r["passed"] for r in self.results_history)
        return {
            "suites": len(self.results_history),
            "total_checks": total,
            "passed": passed,
            "failed": total - passed,
            "success": total == passed,
        }

    def export_results(self, filename="check_results.json"):
        path = Path(filename)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({
                "evaluation_history": self.results_history,
                "summary": self.get_summary(),
            }, f, indent=2)
        print(f"📊 Results exported to {path}")


def _mode_for(index: int, radius: int = 2) -> CorrMode:
    return CorrMode.global_() if index % 2 == 0 else CorrMode.local(radius)


def random_reference_params(rng: np.random.Generator, eta: float) -> ReferenceObjectiveParams:
    """Default-shaped weight functions with randomized coefficients"""
    base = ReferenceObjectiveParams.default(eta=eta)
    n = base.y_prime.count
    return ReferenceObjectiveParams(
        y_prime=WeightFunction(base.y_prime.coefficients + rng.normal(0.0, 0.1, n)),
        v_plus=WeightFunction(rng.uniform(0.5, 1.5, n)),
        m=WeightFunction(rng.normal(0.0, 1.0, n), squash=Squash.SIGMOID),
        eta=eta,
    )


def random_query_params(rng: np.random.Generator, channels: int = 2, mid_channels: int = 2,
                        kernel_size: int = 3, integer: bool = False) -> QueryObjectiveParams:
    shape_a = (mid_channels, 1, kernel_size, kernel_size)
    shape_b = (channels, mid_channels, kernel_size, kernel_size)
    if integer:
        return QueryObjectiveParams(rng.integers(-3, 4, shape_a), rng.integers(-3, 4, shape_b))
    return QueryObjectiveParams(rng.normal(0.0, 0.5, shape_a), rng.normal(0.0, 0.5, shape_b))


def _in_bounds_mask(mode: CorrMode, shape) -> np.ndarray:
    ones = np.ones(shape)
    return mode.corr(ones, ones) > 0


def _avoid_kink(w: np.ndarray, f_r: np.ndarray, mode: CorrMode, h: float,
                rng: np.random.Generator, tries: int = 50) -> np.ndarray:
    # keep every in-bounds correlation farther from 0 than a finite-difference step can move it
    mask = _in_bounds_mask(mode, f_r.shape)
    limit = 4.0 * h * float(np.max(np.abs(f_r)))
    for _ in range(tries):
        if np.min(np.abs(mode.corr(w, f_r)[mask])) > limit:
            return w
        w = w + 1e-3 * rng.normal(size=w.shape)
    logger.warning("could not move all correlations away from the kink")
    return w


def gradient_cases(seeds: Iterable[int], eta: float = 0.1, lam: float = 0.1, step: float = 1e-6,
                   tolerance: float = 1e-5, allow_kink: bool = False,
                   corrupt_gradient: bool = False) -> List[CheckCase]:
    """grad_total against central differences of total_loss.

    Instances alternate global/local and with/without the query term.
    """
    if eta == 0 and not allow_kink:
        logger.warning("eta = 0 makes the loss non-smooth at corr = 0; "
                       "perturbing evaluation points away from the kink")
    cases = []
    for n, seed in enumerate(seeds):
        mode = _mode_for(n)
        use_query = (n // 2) % 2 == 1

        def run(seed=seed, mode=mode, use_query=use_query) -> float:
            rng = np.random.default_rng(seed)
            h, w, d = int(rng.integers(3, 6)), int(rng.integers(3, 6)), int(rng.integers(2, 5))
            f_r, f_q, w0 = (rng.normal(size=(h, w, d)) for _ in range(3))
            params = ObjectiveParams(random_reference_params(rng, eta), random_query_params(rng))
            cfg = SolverConfig(lam=lam, use_query=use_query, mode=mode)
            if eta == 0 and not allow_kink:
                w0 = _avoid_kink(w0, f_r, mode, step, rng)
            analytic = grad_total(w0, f_r, f_q, params, cfg)
            if corrupt_gradient:
                analytic = analytic * 1.001
            numeric = numeric_grad(lambda x: total_loss(x, f_r, f_q, params, lam, mode, use_query), w0, step)
            return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-300))

        tag = f"{mode.kind.value}-{'query' if use_query else 'ref'}"
        cases.append(CheckCase(f"gradient-{tag}-{seed}", run, tolerance))
    return cases


def _convex_instance(rng: np.random.Generator, mode: CorrMode, use_query: bool, max_size: int = 8):
    h, w, d = int(rng.integers(2, max_size + 1)), int(rng.integers(2, max_size + 1)), int(rng.integers(1, 7))
    f_r, f_q, w0 = (rng.normal(size=(h, w, d)) for _ in range(3))
    params = ObjectiveParams(ReferenceObjectiveParams.quadratic(), random_query_params(rng))
    cfg = SolverConfig(num_iter=10, lam=float(rng.uniform(0.05, 1.0)), use_query=use_query, mode=mode)
    return f_r, f_q, w0, params, cfg


def oracle_cases(seeds: Iterable[int]) -> List[CheckCase]:
    """Adjoint identities, brute-force equivalence, step length, descent and initializer checks"""
    seeds = list(seeds)
    cases = []
    for n, seed in enumerate(seeds):
        mode = _mode_for(n)
        kind = mode.kind.value

        def corr_adjoint_gap(seed=seed, mode=mode) -> float:
            rng = np.random.default_rng(seed)
            h, w, d = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 7))
            wm, f = rng.normal(size=(h, w, d)), rng.normal(size=(h, w, d))
            v = rng.normal(size=mode.volume_shape(h, w))
            lhs = float(np.sum(mode.corr(wm, f) * v))
            rhs = float(np.sum(wm * mode.adjoint(v, f)))
            return abs(lhs - rhs)

        def conv_adjoint_gap(seed=seed, mode=mode) -> float:
            rng = np.random.default_rng(seed)
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            q = random_query_params(rng, channels=3, mid_channels=2)
            x = rng.normal(size=mode.volume_shape(h, w))
            y = rng.normal(size=(q.channels,) + x.shape)
            return abs(float(np.sum(apply_query_kernel(x, q) * y)) - float(np.sum(x * conv_adjoint(y, q))))

        def brute_corr_gap(seed=seed, mode=mode) -> float:
            rng = np.random.default_rng(seed)
            h, w, d = int(rng.integers(1, 7)), int(rng.integers(1, 7)), int(rng.integers(1, 7))
            wm = rng.integers(-9, 10, (h, w, d)).astype(np.float64)
            f = rng.integers(-9, 10, (h, w, d)).astype(np.float64)
            fast = global_corr(wm, f) if mode.is_global else local_corr(wm, f, mode.radius)
            return float(np.max(np.abs(fast.data - brute_corr(wm, f, mode).data)))

        def conv_oracle_gap(seed=seed, mode=mode) -> float:
            rng = np.random.default_rng(seed)
            h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            q = random_query_params(rng, integer=True)
            x = rng.integers(-9, 10, mode.volume_shape(h, w)).astype(np.float64)
            return float(np.max(np.abs(apply_query_kernel(x, q) - naive_conv4d_seq(x, q))))

        cases += [
            CheckCase(f"corr-adjoint-{kind}-{seed}", corr_adjoint_gap, 1e-10),
            CheckCase(f"conv-adjoint-{kind}-{seed}", conv_adjoint_gap, 1e-10),
            CheckCase(f"brute-corr-{kind}-{seed}", brute_corr_gap, 0.0),
            CheckCase(f"conv-oracle-{kind}-{seed}", conv_oracle_gap, 0.0),
        ]

    for n, seed in enumerate(seeds):
        mode = _mode_for(n)
        use_query = (n // 2) % 2 == 1

        def step_gap(seed=seed, mode=mode, use_query=use_query) -> float:
            rng = np.random.default_rng(seed)
            f_r, f_q, w0, params, cfg = _convex_instance(rng, mode, use_query, max_size=5)
            g = grad_total(w0, f_r, f_q, params, cfg)
            oracle = line_search_oracle(w0, g, f_r, f_q, params, cfg)
            exact = step_length(w0, g, f_r, f_q, params, cfg)
            cfg.curvature_scale = 1.0
            literal = step_length(w0, g, f_r, f_q, params, cfg)
            return max(abs(exact - oracle) / oracle, abs(literal - 2.0 * oracle) / (2.0 * oracle))

        def descent_violation(seed=seed, mode=mode, use_query=use_query) -> float:
            rng = np.random.default_rng(seed)
            f_r, f_q, _, params, cfg = _convex_instance(rng, mode, use_query)
            _, trace = run_gocor(f_r, f_q, params, cfg, InitializerConfig())
            losses = np.asarray(trace.losses)
            return float(np.max(np.diff(losses) / np.maximum(losses[:-1], 1e-300), initial=0.0))

        def initializer_gap(seed=seed) -> float:
            rng = np.random.default_rng(seed)
            d = 4
            f = rng.normal(size=(5, 5, d))
            beta, gamma = float(rng.uniform(0.5, 2.0)), float(rng.uniform(-0.5, 0.5))
            w0 = init_filter_map(f, InitializerConfig(InitializerVariant.CONTEXT_AWARE, beta, gamma))
            f_bar = spatial_mean(f)
            return max(float(np.max(np.abs(np.sum(w0 * f, axis=-1) - beta))),
                       float(np.max(np.abs(w0 @ f_bar - gamma))))

        tag = f"{mode.kind.value}-{'query' if use_query else 'ref'}"
        cases += [
            CheckCase(f"step-length-{tag}-{seed}", step_gap, 1e-8),
            CheckCase(f"descent-{tag}-{seed}", descent_violation, 1e-12),
            CheckCase(f"initializer-{seed}", initializer_gap, 1e-9),
        ]

    def partition_gap() -> float:
        d = np.random.default_rng(0).uniform(0.0, 6.0, 1000)
        total = sum(rho_basis(d, k, 10, 0.5) for k in range(10))
        return float(np.max(np.abs(total - 1.0)))

    cases.append(CheckCase("partition-of-unity", partition_gap, 1e-12))
    return cases
