"""
multiFAMM command line

Usage:
    python -m multifamm fit --config data/toy/config.json --output output/toy
    python -m multifamm fpca --config data/toy/config.json
    python -m multifamm simulate --preset setting1-desk --replicates 50 --jobs 4
    python -m multifamm coarsen --input data/trajectory_sample.csv --lead-dims hand.x,hand.y --rstar 0.003 --output kept.csv
    python -m multifamm config --defaults

Exit codes: 0 ok, 2 configuration, 3 data, 4 numerics.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from .artifacts import ArtifactWriter, NumpyEncoder
from .coarsen import StopRule, coarsen_dataset, coarsen_frame
from .config import PipelineConfig, TermKind
from .errors import ConfigError, DataError, FammError, NumericError
from .fundata import FunDataset, load_dataset
from .mfamm import ModelFit, confidence_band, predictor_variance, residual_urrmse, scalar_intercept
from .pipeline import FammPipeline
from .simeval import run_harness, setting_preset, summarize

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(output_dir, verbose: bool = False):
    """Console plus <output_dir>/run.log"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(output_dir / "run.log", mode="w", encoding="utf-8"),
            logging.StreamHandler(),
        ],
        force=True,
    )


# === Helpers ===

def stop_rule(config: PipelineConfig) -> StopRule:
    c = config.coarsen
    return StopRule(target_size=c.target_size, relative_threshold=c.rstar, absolute_threshold=c.sstar)


def load_configured_dataset(config: PipelineConfig) -> FunDataset:
    data = config.data
    if not data.points_file or not data.meta_file:
        raise ConfigError("data.points_file and data.meta_file are required")
    for path in (data.points_file, data.meta_file):
        if not Path(path).exists():
            raise DataError(f"data file not found: {path}")
    ds = load_dataset(data.points_file, data.meta_file, data.layers or None, data.rescale, data.curve_layer)
    if config.coarsen.enabled:
        ds, report = coarsen_dataset(ds, config.coarsen.lead_dims, stop_rule(config))
        logger.info(f"Coarsened to {ds.n_observations} observations "
                    f"(median {report['n_after'].median():.0f} points per curve)")
    return ds


def _effect_x(ds: FunDataset, term) -> Optional[float]:
    """Smooth terms are reported at the median covariate value"""
    if term.kind != TermKind.SMOOTH:
        return None
    return float(np.median([c.covariates[term.covariates[0]] for c in ds.curves]))


def write_effects(writer: ArtifactWriter, fit: ModelFit, ds: FunDataset, level: float = 0.95):
    grid = np.linspace(0.0, 1.0, 100)
    intercepts = []
    for term in fit.spec.formula.terms:
        x = _effect_x(ds, term)
        for dim in fit.dims:
            band = confidence_band(fit, term.name, dim, grid, level, x)
            if x is not None:
                band.insert(1, term.covariates[0], x)
            writer.write_csv(f"effects/{term.name}__{dim}.csv", band)
    for dim in fit.dims:
        value, se = scalar_intercept(fit, dim)
        intercepts.append({"dim": dim, "value": value, "se": se})
    writer.write_csv("scalar_intercepts.csv", pd.DataFrame(intercepts))


def write_eigenfunctions(writer: ArtifactWriter, bases):
    for g, basis in bases.items():
        if not basis.truncation:
            continue
        frame = pd.DataFrame({"t": basis.grid})
        for m in range(basis.truncation):
            for j, dim in enumerate(basis.dims):
                frame[f"psi{m + 1}:{dim}"] = basis.functions[m, j]
        writer.write_csv(f"eigenfunctions/{g}.csv", frame)


# === Commands ===

def run_fit(config: PipelineConfig) -> int:
    """Step 1 + Step 2 on the configured dataset, artifacts under output_dir"""
    ds = load_configured_dataset(config)
    writer = ArtifactWriter(config.output_dir, config)
    writer.write_config(config)

    pipeline = FammPipeline(config)
    result = pipeline.run(ds)
    step1, fit = result.step1, result.fit

    writer.write_json("validation.json", result.validation.to_dict())
    writer.write_json("step1.json", step1.to_dict())
    writer.write_csv("variance_table.csv", step1.variance.table.rename_axis("row"), index=True)
    write_eigenfunctions(writer, step1.bases)
    if config.dump_crossproducts:
        for dim, table in step1.crossproducts.items():
            writer.write_csv(f"crossproducts/{dim}.csv", table.to_frame())

    payload = fit.to_dict()
    payload["summary"] = result.summary()
    payload["residual_urrmse"] = residual_urrmse(fit)
    writer.write_json("model_fit.json", payload)
    write_effects(writer, fit, ds, config.step1.level)
    writer.write_csv("predictor_variance.csv", predictor_variance(fit, ds), index=True)
    writer.write_json("timings.json", [t.to_dict() for t in result.timings])

    if config.plots:
        from .reports import effect_figure, eigenfunction_figure, save_figure
        out = Path(config.output_dir) / "plots"
        for term in fit.spec.formula.terms:
            for dim in fit.dims:
                save_figure(effect_figure(fit, term.name, dim, x=_effect_x(ds, term)),
                            out / f"{term.name}__{dim}.html")
        for g, basis in step1.bases.items():
            if basis.truncation:
                save_figure(eigenfunction_figure(basis), out / f"eigenfunctions_{g}.html")

    writer.write_json("manifest.json", writer.manifest())
    logger.info(f"✅ Fit complete: {len(writer.written)} artifacts in {config.output_dir} "
                f"({result.total_seconds:.1f}s)")
    return 0


def run_fpca(config: PipelineConfig) -> int:
    """Step 1 only: covariance, eigenbases, truncation and variance table"""
    ds = load_configured_dataset(config)
    writer = ArtifactWriter(config.output_dir, config)
    writer.write_config(config)
    step1 = FammPipeline(config).run_step1(ds)
    writer.write_json("step1.json", step1.to_dict())
    writer.write_csv("variance_table.csv", step1.variance.table.rename_axis("row"), index=True)
    write_eigenfunctions(writer, step1.bases)
    writer.write_json("manifest.json", writer.manifest())
    return 0


def run_simulate(config: PipelineConfig) -> int:
    """Simulation harness; one metrics row per replicate and component"""
    sim = config.simulation
    setting = replace(setting_preset(sim.preset), seed=config.seed)
    writer = ArtifactWriter(config.output_dir, config)
    writer.write_config(config)

    report = run_harness(setting, config, sim.replicates, config.jobs, sim.scenario)
    summary = summarize(report)

    writer.write_csv("metrics.csv", report.metrics)
    writer.write_csv("coverage.csv", report.coverage)
    writer.write_csv("fpc_counts.csv", report.fpc_counts)
    writer.write_json("summary.json", {
        "setting": report.setting,
        "scenario": report.scenario,
        "replicates": sim.replicates,
        "failed": report.failed,
        **summary.to_dict(),
    })
    if config.plots and len(report.metrics):
        from .reports import metric_boxplot, save_figure
        save_figure(metric_boxplot(report), Path(config.output_dir) / "plots" / "mrrmse.html")

    writer.write_json("manifest.json", writer.manifest())
    logger.info(f"✅ Simulation complete: {report.n_replicates}/{sim.replicates} replicates")
    return 0


def run_coarsen(config: PipelineConfig, input_file, output_file=None) -> int:
    """Coarsen a long point table on the configured lead dimensions"""
    input_file = Path(input_file)
    if not input_file.exists():
        raise DataError(f"points file not found: {input_file}")
    points = pd.read_csv(input_file, comment="#", dtype={"curve_id": str, "dim": str})
    kept, report = coarsen_frame(points, config.coarsen.lead_dims, stop_rule(config))

    kept_path = Path(output_file) if output_file else \
        Path(config.output_dir) / f"{input_file.stem}_coarsened.csv"
    writer = ArtifactWriter(kept_path.parent, config)
    writer.write_csv(kept_path.name, kept)
    writer.write_csv("coarsen_report.csv", report)
    logger.info(f"✅ Kept {len(kept)} of {len(points)} rows -> {kept_path}")
    return 0


# === Entry point ===

def comma_list(value: str) -> List[str]:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multifamm", description="Multivariate functional additive mixed models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_help="output directory"):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--output", help=output_help)
        p.add_argument("--jobs", type=int, help="worker threads")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--plots", action="store_true", help="write HTML figures")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    fit = common(sub.add_parser("fit", help="fit the full model"))
    fit.add_argument("--dump-crossproducts", action="store_true", help="write crossproduct tables")
    common(sub.add_parser("fpca", help="run Step 1 only"))

    sim = common(sub.add_parser("simulate", help="simulation harness"))
    sim.add_argument("--preset", help="1-6 or setting1-desk")
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--scenario", choices=["A", "B", "C", "D", "E", "F"])

    co = common(sub.add_parser("coarsen", help="coarsen a long point table"),
                output_help="coarsened CSV; report and run.log go next to it")
    co.add_argument("--input", required=True, help="CSV with curve_id, dim, t, y")
    co.add_argument("--lead-dims", type=comma_list, help="comma-separated trajectory dimensions, e.g. hand.x,hand.y")
    co.add_argument("--rstar", type=float, help="relative loss threshold")
    co.add_argument("--sstar", type=float, help="absolute loss threshold")
    co.add_argument("--target-size", type=int, help="points to keep per curve")

    cfg = sub.add_parser("config", help="print configuration")
    cfg.add_argument("--defaults", action="store_true", help="print the default configuration")
    cfg.add_argument("--config", help="print the resolved form of this file")
    return parser


def resolve_config(args) -> PipelineConfig:
    """defaults < file < environment < command line"""
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig.default()
    config.apply_env_overrides()
    if getattr(args, "output", None):
        # coarsen --output names the kept CSV itself
        config.output_dir = str(Path(args.output).parent) if args.command == "coarsen" else args.output
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config.jobs = args.jobs
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "plots", False):
        config.plots = True
    if getattr(args, "dump_crossproducts", False):
        config.dump_crossproducts = True

    if args.command == "simulate":
        if args.preset:
            config.simulation.preset = args.preset
        if args.replicates is not None:
            if args.replicates < 0:
                raise ConfigError("--replicates must be >= 0")
            config.simulation.replicates = args.replicates
        if args.scenario:
            config.simulation.scenario = args.scenario
    if args.command == "coarsen":
        if args.lead_dims:
            config.coarsen.lead_dims = list(args.lead_dims)
        if args.rstar is not None or args.sstar is not None or args.target_size is not None:
            config.coarsen.rstar = args.rstar
            config.coarsen.sstar = args.sstar
            config.coarsen.target_size = args.target_size
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "config":
        try:
            config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig.default()
        except FammError as e:
            print(f"❌ {e}", file=sys.stderr)
            return e.exit_code
        print(json.dumps(config.to_dict(), indent=2, sort_keys=True, cls=NumpyEncoder))
        return 0

    try:
        config = resolve_config(args)
    except FammError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code

    setup_logging(config.output_dir, args.verbose)
    logger.info(f"multifamm {args.command}: config_hash={config.config_hash()} seed={config.seed} "
                f"jobs={config.jobs}")
    try:
        if args.command == "fit":
            return run_fit(config)
        if args.command == "fpca":
            return run_fpca(config)
        if args.command == "simulate":
            return run_simulate(config)
        return run_coarsen(config, args.input, args.output)
    except FammError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except np.linalg.LinAlgError as e:
        logger.error(f"❌ LinAlgError: {e}")
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
