import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel

from config.settings import RunConfig, Settings, load_run_config
from gocor.archive import RunArchive
from gocor.corrvol import CorrespondenceVolume, CorrMode
from gocor.errors import GOCorError
from gocor.evaluator import CheckSuiteEvaluator, gradient_cases, oracle_cases
from gocor.fileio import load_feature_map, load_volume, probe_heatmap, save_feature_map, save_flow, \
    save_volume, write_pgm, write_slice_csv
from gocor.metrics import dataset_pck
from gocor.objective import ObjectiveParams, QueryObjectiveParams, ReferenceObjectiveParams
from gocor.solver import InitializerConfig, InitializerVariant, SolverConfig, run_gocor
from gocor.synthbench import DisambiguationReport, make_repetitive_scene, run_disambiguation_experiment

logger = logging.getLogger(__name__)


class BenchSummary(BaseModel):
    num_seeds: int
    final_correct: int
    margin_increased: int
    mean_margins: List[float]
    mean_region_aepe: float
    dataset_pck: float
    pooled_pck: bool


class BenchReport(BaseModel):
    config: Dict
    summary: BenchSummary
    runs: List[DisambiguationReport]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class GOCorCommandLine:
    def __init__(self, config: RunConfig, settings: Optional[Settings] = None,
                 archive: Optional[RunArchive] = None):
        self.config = config
        self.settings = settings or Settings()
        self.archive = archive

    @property
    def mode(self) -> CorrMode:
        return CorrMode.global_() if self.config.mode == "global" else CorrMode.local(self.config.radius)

    @property
    def storage_dtype(self):
        return np.float32 if self.config.precision == "f32" else np.float64

    def solver_config(self) -> SolverConfig:
        c = self.config
        return SolverConfig(num_iter=c.num_iter, lam=c.lam, use_query=c.use_query,
                            curvature_scale=c.curvature_scale, mode=self.mode)

    def initializer_config(self) -> InitializerConfig:
        c = self.config
        return InitializerConfig(InitializerVariant(c.initializer), np.asarray(c.beta), np.asarray(c.gamma))

    def objective_params(self) -> ObjectiveParams:
        c = self.config
        reference = ReferenceObjectiveParams.default(c.basis_count, c.basis_delta, c.eta)
        query = None
        if c.use_query:
            query = QueryObjectiveParams.default(c.kernel_size, c.query_channels, c.query_mid_channels,
                                                 c.query_init_std, c.query_seed)
        return ObjectiveParams(reference, query)

    def _archive(self, command: str, passed: bool, summary: Dict):
        if self.archive is not None:
            self.archive.save_run(command, passed, self.config.model_dump(mode="json"), summary)

    def _run_suite(self, name: str, cases, report_path: Optional[Path]) -> int:
        evaluator = CheckSuiteEvaluator(name)
        result = evaluator.evaluate_cases(cases)
        evaluator.export_results(report_path or self.settings.EVAL_DIR / f"{name}.json")
        summary = evaluator.get_summary()
        self._archive(name, result["success"], summary)
        return 0 if result["success"] else 1

    def cmd_gradcheck(self, report_path: Optional[Path] = None) -> int:
        """Analytic gradient against central differences; exit 1 on any failure"""
        c = self.config
        cases = gradient_cases(range(c.grad_instances), eta=c.eta, lam=c.lam, step=c.grad_step,
                               tolerance=c.grad_tol, allow_kink=c.allow_kink,
                               corrupt_gradient=c.corrupt_gradient)
        return self._run_suite("gradcheck", cases, report_path)

    def cmd_oracle(self, report_path: Optional[Path] = None) -> int:
        return self._run_suite("oracle", oracle_cases(range(self.config.oracle_instances)), report_path)

    def cmd_solve(self, ref_path: Path, query_path: Path, out_path: Path,
                  trace_path: Optional[Path] = None) -> int:
        f_r = load_feature_map(ref_path)
        f_q = load_feature_map(query_path)
        cfg = self.solver_config()
        w, trace = run_gocor(f_r, f_q, self.objective_params(), cfg, self.initializer_config())
        volume = CorrespondenceVolume(cfg.mode.kind, cfg.mode.corr(w, f_q), cfg.mode.radius)

        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_volume(out_path, volume, self.storage_dtype)
        print(f"✅ Wrote {cfg.mode.kind.value} volume {volume.data.shape} to {out_path}")

        trace_path = Path(trace_path) if trace_path else out_path.with_suffix(".trace.json")
        _write_json(trace_path, {"config": self.config.model_dump(mode="json"), "trace": trace.to_dict()})
        print(f"📊 Loss {trace.losses[0]:.6g} -> {trace.losses[-1]:.6g}, trace in {trace_path}")
        self._archive("solve", True, {"losses": trace.losses, "init_fallbacks": trace.init_fallbacks})
        return 0

    def _bench_seed(self, seed: int) -> DisambiguationReport:
        c = self.config
        scene = make_repetitive_scene(
            height=c.scene_height, width=c.scene_width, depth=c.scene_depth, n_repeats=c.n_repeats,
            shift=c.shift, noise_std=c.noise_std, seed=seed, patch_size=c.patch_size,
            context_norm=c.context_norm, rho_excl=c.rho_excl,
        )
        return run_disambiguation_experiment(scene, self.objective_params(), self.solver_config(),
                                             self.initializer_config(), rho_excl=c.rho_excl,
                                             pck_threshold=c.pck_threshold, seed=seed)

    def cmd_bench(self, report_path: Optional[Path] = None) -> int:
        """Disambiguation experiment over every configured seed"""
        c = self.config
        print(f"\n🧪 Disambiguation bench: {len(c.seeds)} seeds, {c.num_iter} {c.mode} iterations")
        if c.serial:
            runs = [self._bench_seed(seed) for seed in c.seeds]
        else:
            with ThreadPoolExecutor() as pool:
                runs = list(pool.map(self._bench_seed, c.seeds))

        margins = np.array([run.margins for run in runs])
        summary = BenchSummary(
            num_seeds=len(runs),
            final_correct=sum(run.final_correct for run in runs),
            margin_increased=int(np.count_nonzero(margins[:, -1] > margins[:, 0])),
            mean_margins=[float(m) for m in margins.mean(axis=0)],
            mean_region_aepe=float(np.mean([run.region_aepe for run in runs])),
            dataset_pck=dataset_pck([run.flow_pair for run in runs], c.pck_threshold, c.pooled_pck),
            pooled_pck=c.pooled_pck,
        )
        report = BenchReport(config=c.model_dump(mode="json"), summary=summary, runs=runs)

        report_path = Path(report_path or self.settings.EVAL_DIR / "bench.json")
        _write_json(report_path, report.model_dump(mode="json"))
        _write_json(report_path.with_suffix(".timings.json"),
                    {str(run.seed): run.timings for run in runs})

        print(f"🏅 Final argmax correct: {summary.final_correct}/{summary.num_seeds}")
        print(f"📈 Margin increased: {summary.margin_increased}/{summary.num_seeds}")
        print(f"📊 Results exported to {report_path}")
        self._archive("bench", True, summary.model_dump(mode="json"))
        return 0

    def cmd_export_heatmap(self, volume_path: Path, i: int, j: int, out_path: Path,
                           csv_path: Optional[Path] = None) -> int:
        volume = load_volume(volume_path)
        scores, image = probe_heatmap(volume, i, j)
        write_pgm(out_path, image)
        print(f"✅ Wrote {image.shape[1]}x{image.shape[0]} heatmap of probe ({i}, {j}) to {out_path}")
        if csv_path is not None:
            write_slice_csv(csv_path, scores)
            print(f"📊 Raw slice exported to {csv_path}")
        return 0

    def cmd_make_scene(self, out_dir: Path, seed: Optional[int] = None) -> int:
        """Write a synthetic reference/query pair and its ground-truth flow"""
        c = self.config
        seed = c.seeds[0] if seed is None else seed
        scene = make_repetitive_scene(
            height=c.scene_height, width=c.scene_width, depth=c.scene_depth, n_repeats=c.n_repeats,
            shift=c.shift, noise_std=c.noise_std, seed=seed, patch_size=c.patch_size,
            context_norm=c.context_norm, rho_excl=c.rho_excl,
        )
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_feature_map(out_dir / "reference.fmap", scene.f_r, self.storage_dtype)
        save_feature_map(out_dir / "query.fmap", scene.f_q, self.storage_dtype)
        save_flow(out_dir / "gt.flow", scene.gt_flow)
        print(f"✅ Scene seed {seed} written to {out_dir} (probe {scene.probe}, true match {scene.true_loc})")
        return 0

    def cmd_runs(self, limit: int = 5, command: Optional[str] = None, as_json: bool = False) -> int:
        """Print archive statistics and the latest recorded runs"""
        archive = self.archive or RunArchive(str(self.settings.ARCHIVE_DIR / "runs.db"))
        stats = archive.get_statistics()
        latest = archive.get_latest_runs(limit, command)
        if as_json:
            print(json.dumps({"statistics": stats, "latest": latest}, indent=2, sort_keys=True))
            return 0
        print(f"📊 {stats['total_runs']} runs archived, pass rate {stats['pass_rate']:.2%}")
        for name, counts in stats["per_command"].items():
            print(f"   {name}: {counts['passed']}/{counts['runs']} passed")
        for run in latest:
            status = "✅" if run["passed"] else "❌"
            print(f"{status} #{run['id']} {run['command']} at {run['created_at']}")
        return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--no-archive", action="store_true", help="do not record the run in the archive")
    common.add_argument("--serial", dest="serial", action="store_const", const=True)
    common.add_argument("--parallel", dest="serial", action="store_const", const=False)
    common.add_argument("--mode", choices=["global", "local"])
    common.add_argument("--radius", type=int)
    common.add_argument("--num-iter", dest="num_iter", type=int)
    common.add_argument("--eta", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--curvature-scale", dest="curvature_scale", type=float)
    common.add_argument("--use-query", dest="use_query", action="store_const", const=True)
    common.add_argument("--initializer")
    common.add_argument("--beta")
    common.add_argument("--gamma")
    common.add_argument("--seeds")
    common.add_argument("--precision", choices=["f32", "f64"])
    common.add_argument("--noise-std", dest="noise_std", type=float)
    common.add_argument("--allow-kink", dest="allow_kink", action="store_const", const=True)
    common.add_argument("--corrupt-gradient", dest="corrupt_gradient", action="store_const", const=True)
    common.add_argument("--pooled-pck", dest="pooled_pck", action="store_const", const=True)

    parser = argparse.ArgumentParser(description="Globally-optimized correlation volumes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--report", type=Path)

    p = sub.add_parser("oracle", parents=[common], help="oracle-equivalence suite")
    p.add_argument("--report", type=Path)

    p = sub.add_parser("solve", parents=[common], help="optimize a filter map and write its volume")
    p.add_argument("reference", type=Path)
    p.add_argument("query", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trace", type=Path)

    p = sub.add_parser("bench", parents=[common], help="synthetic disambiguation experiment")
    p.add_argument("--report", type=Path)

    p = sub.add_parser("export-heatmap", parents=[common], help="probe slice as a PGM image")
    p.add_argument("volume", type=Path)
    p.add_argument("i", type=int)
    p.add_argument("j", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path)

    p = sub.add_parser("make-scene", parents=[common], help="write a synthetic feature-map pair")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("runs", parents=[common], help="archived run statistics and latest runs")
    p.add_argument("--limit", type=int, default=5)
    p.add_argument("--command", dest="only_command")
    p.add_argument("--json", dest="as_json", action="store_true")
    return parser


OVERRIDE_KEYS = (
    "serial", "mode", "radius", "num_iter", "eta", "lam", "curvature_scale", "use_query", "initializer",
    "beta", "gamma", "seeds", "precision", "noise_std", "allow_kink", "corrupt_gradient", "pooled_pck",
)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    try:
        config = load_run_config(args.config, {key: getattr(args, key) for key in OVERRIDE_KEYS})
        settings = Settings()
        archive = None if args.no_archive else RunArchive(str(settings.ARCHIVE_DIR / "runs.db"))
        cli = GOCorCommandLine(config, settings, archive)

        if args.command == "gradcheck":
            return cli.cmd_gradcheck(args.report)
        if args.command == "oracle":
            return cli.cmd_oracle(args.report)
        if args.command == "solve":
            return cli.cmd_solve(args.reference, args.query, args.out, args.trace)
        if args.command == "bench":
            return cli.cmd_bench(args.report)
        if args.command == "export-heatmap":
            return cli.cmd_export_heatmap(args.volume, args.i, args.j, args.out, args.csv)
        if args.command == "runs":
            return cli.cmd_runs(args.limit, args.only_command, args.as_json)
        return cli.cmd_make_scene(args.out_dir, args.seed)
    except (GOCorError, ValueError, OSError) as e:
        print(f"❌ {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
