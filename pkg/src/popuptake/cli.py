"""Command-line pipeline: simulate -> impute -> ingest -> fit -> evaluate.

Every subcommand reads a flat key = value config, writes its artifacts under
out_dir, and drops a manifest with content hashes of its inputs so a run can
be audited and reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import dataio
from .dataio import DataError
from .evaluation import report
from .hsgp import HsgpSpec
from .imputation import ImputedCounts, build_imputation_target, impute, imputation_ppc, make_model_spec
from .inference.diagnostics import summarize
from .inference.nuts import SamplerConfig, sample
from .ingest import (
    RasterGrid,
    apply_radiance_floor,
    apportion_tile_counts,
    assign_duc,
    build_dataset,
    zonal_mean_radiance,
)
from .models import (
    MODEL_KINDS,
    betabin_target,
    binomial_target,
    fixed_hsgp_spec,
    full_target,
    pointwise_loglik,
    posterior_predict,
)
from .simulate import SimConfig, simulate_world

log = logging.getLogger("popuptake")


@dataclass
class PipelineConfig:
    out_dir: str = "runs/out"
    seed: int = 20200504
    reference_date: str = "2020-05-04"
    window: int = 0
    n_units: int = 192
    n_days: int = 151
    split_fraction: float = 0.8
    chains: int = 4
    warmup: int = 400
    samples: int = 400
    target_accept: float = 0.8
    max_tree_depth: int = 10
    threads: int = 1
    models: str = "bin,betabin,full"
    basis: int = 16
    imputations: int = 1

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise DataError("config", 0, "split_fraction must lie in (0, 1)")
        if self.window not in (0, 1, 2):
            raise DataError("config", 0, "window must be 0, 1 or 2")
        for m in self.model_list:
            if m not in MODEL_KINDS:
                raise DataError("config", 0, f"unknown model kind {m!r}")

    @property
    def model_list(self) -> list[str]:
        return [m.strip() for m in self.models.split(",") if m.strip()]

    def sampler(self, seed_offset: int = 0) -> SamplerConfig:
        return SamplerConfig(
            chains=self.chains,
            warmup_iters=self.warmup,
            sampling_iters=self.samples,
            seed=self.seed + seed_offset,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            threads=self.threads,
        )


def load_config(path: str | None) -> PipelineConfig:
    values: dict = {}
    if path is not None:
        known = {f.name: f.type for f in fields(PipelineConfig)}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(path, lineno, "expected 'key = value'")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in known:
                    raise DataError(path, lineno, f"unknown config key {key!r}")
                caster = {"int": int, "float": float, "str": str}[known[key]]
                try:
                    values[key] = caster(value)
                except ValueError:
                    raise DataError(path, lineno, f"bad value for {key}: {value!r}") from None
    return PipelineConfig(**values)


def _reference_timestamp(cfg: PipelineConfig) -> str:
    return f"{cfg.reference_date}T{8 * cfg.window:02d}:00:00"


def _manifest(cfg: PipelineConfig, command: str, inputs: list[Path]):
    out = Path(cfg.out_dir)
    payload = {
        "command": command,
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
        "inputs": {p.name: dataio.sha256_of(p) for p in inputs if p.exists()},
        "versions": {
            "popuptake": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    dataio.write_json(out / f"manifest_{command}.json", payload)


def cmd_simulate(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = simulate_world(SimConfig(
        n_units=cfg.n_units,
        n_days=cfg.n_days,
        train_fraction=cfg.split_fraction,
        seed=cfg.seed,
    ))
    dataio.write_tiles(out / "tiles.csv", world.tiles)
    dataio.write_observations(out / "observations.csv", world.observations)
    dataio.write_unit_attributes(out / "units.csv", world.units)
    dataio.write_unit_polygons(out / "units.json", world.unit_polygons)
    origin, cs = world.raster_origin, world.raster_cellsize
    dataio.write_raster(out / "duc.grid", RasterGrid(origin, cs, world.duc_raster))
    dataio.write_raster(out / "pop.grid", RasterGrid(origin, cs, world.pop_raster))
    dataio.write_raster(out / "radiance.grid", RasterGrid(origin, cs, world.radiance_raster))
    dataio.write_dataset(out / "dataset.csv", world.dataset, out / "dataset_constants.json")
    truth = world.truth
    dataio.write_json(out / "truth.json", {
        "coefficients": {
            "a": list(truth.config.a), "b_w": list(truth.config.b_w),
            "b_l": list(truth.config.b_l), "rho": list(truth.config.rho),
            "sigma": truth.config.sigma, "delta": truth.config.delta,
        },
        "p_bar": truth.p_bar.tolist(),
        "spatial_effect": truth.spatial_effect.tolist(),
        "tile_mu": {k: float(v) for k, v in sorted(world.tile_mu.items())},
        "constants": truth.constants,
    })
    _manifest(cfg, "simulate", [])
    print(f"simulate: wrote {len(world.units)} units, {len(world.tiles)} tiles to {out}")
    return 0


def cmd_impute(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    tiles = dataio.read_tiles(out / "tiles.csv")
    observations = dataio.read_observations(out / "observations.csv")
    histories = dataio.histories_from_observations(observations, window=cfg.window)

    censored_ref = {
        obs.tile_id for obs in observations
        if obs.date == cfg.reference_date and obs.window == cfg.window and obs.censored
    }
    if not censored_ref:
        print("impute: nothing censored at the reference timestamp")
        dataio.write_imputed(out / "imputed.csv", _reference_timestamp(cfg),
                             ImputedCounts({}, {}, (0, 0)))
        _manifest(cfg, "impute", [out / "tiles.csv", out / "observations.csv"])
        return 0
    model_histories = [histories[tid] for tid in sorted(censored_ref) if tid in histories]

    spec = make_model_spec(model_histories)
    target = build_imputation_target(model_histories, spec)
    draws = sample(target, cfg.sampler(seed_offset=1))
    summary = summarize(draws)

    tile_by_id = {t.tile_id: t for t in tiles}
    impute_tiles = [tile_by_id[h.tile_id] for h in model_histories]
    for m in range(cfg.imputations):
        imputed = impute(draws, impute_tiles, spec, seed=cfg.seed + 100 + m)
        name = "imputed.csv" if m == 0 else f"imputed_{m + 1:03d}.csv"
        dataio.write_imputed(out / name, _reference_timestamp(cfg), imputed)

    ppc = imputation_ppc(draws, model_histories, spec, seed=cfg.seed + 7)
    dataio.write_json(out / "imputation_summary.json", {
        "n_tiles": len(model_histories),
        "n_individual": len(spec.tile_params),
        "n_groups": len(spec.group_params),
        "sampler": summary,
        "ppc": [
            {
                "tile_id": r.tile_id,
                "n_entries": r.n_entries,
                "n_observed": r.n_observed,
                "predictive_median": r.predictive_median,
                "observed_median": r.observed_median,
            }
            for r in ppc
        ],
    })
    _manifest(cfg, "impute", [out / "tiles.csv", out / "observations.csv"])
    print(f"impute: {len(model_histories)} censored tiles "
          f"({len(spec.tile_params)} individual, {len(spec.group_params)} groups)")
    return 0



def cmd_ingest(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    tiles = dataio.read_tiles(out / "tiles.csv")
    observations = dataio.read_observations(out / "observations.csv")
    attributes = dataio.read_unit_attributes(out / "units.csv")
    polygons = dataio.read_unit_polygons(out / "units.json")
    units = dataio.build_admin_units(attributes, polygons)
    duc_raster = dataio.read_raster(out / "duc.grid")
    pop_raster = dataio.read_raster(out / "pop.grid")
    radiance_raster = dataio.read_raster(out / "radiance.grid")

    counts: dict[str, float] = {}
    censored = []
    for obs in observations:
        if obs.date != cfg.reference_date or obs.window != cfg.window:
            continue
        if obs.censored:
            censored.append(obs.tile_id)
        else:
            counts[obs.tile_id] = float(obs.count)
    if censored:
        imputed_path = out / "imputed.csv"
        if not imputed_path.exists():
            raise DataError(imputed_path, 0, "censored counts present; run impute first")
        imputed = dataio.read_imputed(imputed_path)
        missing = [t for t in censored if t not in imputed]
        if missing:
            log.warning("%d censored tiles missing from imputed.csv; treated as absent", len(missing))
        counts.update({t: imputed[t] for t in censored if t in imputed})

    for unit in units:
        unit.duc = assign_duc(unit, duc_raster, pop_raster)
    radiances = apply_radiance_floor(
        np.array([zonal_mean_radiance(u, radiance_raster) for u in units])
    )
    for unit, radiance in zip(units, radiances):
        unit.radiance = float(radiance)

    apportioned = apportion_tile_counts(tiles, counts, units)
    data = build_dataset(units, apportioned.unit_counts, split_seed=cfg.seed,
                         train_fraction=cfg.split_fraction)
    dataio.write_dataset(out / "dataset_ingested.csv", data,
                         out / "dataset_ingested_constants.json")
    dataio.write_json(out / "ingest_summary.json", {
        "n_units": len(units),
        "n_tiles_with_counts": len(counts),
        "n_orphan_tiles": len(apportioned.orphan_counts),
        "orphaned_users": apportioned.total_orphaned,
        "assigned_users": apportioned.total_assigned,
    })
    _manifest(cfg, "ingest", [
        out / "tiles.csv", out / "observations.csv", out / "units.csv",
        out / "units.json", out / "duc.grid", out / "pop.grid",
        out / "radiance.grid", out / "imputed.csv",
    ])
    print(f"ingest: dataset with {len(data)} units "
          f"({int(data.is_train.sum())} train); {len(apportioned.orphan_counts)} orphan tiles")
    return 0


def _load_fit_dataset(cfg: PipelineConfig):
    out = Path(cfg.out_dir)
    path = out / "dataset_ingested.csv"
    constants = out / "dataset_ingested_constants.json"
    if not path.exists():
        path, constants = out / "dataset.csv", out / "dataset_constants.json"
    return dataio.read_dataset(path, constants), path


def _make_target(kind: str, data, basis: int):
    if kind == "bin":
        return binomial_target(data), None
    if kind == "betabin":
        return betabin_target(data), None
    spec = fixed_hsgp_spec(data, HsgpSpec(n_b=basis))
    return full_target(data, spec), spec


def cmd_fit(cfg: PipelineConfig, model: str | None = None, basis: int | None = None) -> int:
    out = Path(cfg.out_dir)
    kinds = [model] if model else cfg.model_list
    basis = basis or cfg.basis
    data, dataset_path = _load_fit_dataset(cfg)
    for i, kind in enumerate(kinds):
        if kind not in MODEL_KINDS:
            raise DataError("config", 0, f"unknown model kind {kind!r}")
        target, _ = _make_target(kind, data, basis)
        draws = sample(target, cfg.sampler(seed_offset=10 + i))
        dataio.write_draws(out / f"draws_{kind}.csv", draws)
        summary = summarize(draws)
        summary["model"] = kind
        summary["basis"] = basis if kind == "full" else None
        dataio.write_json(out / f"summary_{kind}.json", summary)
        print(f"fit[{kind}]: {draws.n_chains}x{draws.n_iterations} draws, "
              f"{draws.n_divergent()} divergences")
    _manifest(cfg, "fit", [dataset_path])
    return 0


def cmd_evaluate(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    data, dataset_path = _load_fit_dataset(cfg)
    train, test = data.train(), data.test()
    rate_samples, logliks = {}, {}
    inputs = [dataset_path]
    for kind in cfg.model_list:
        draws_path = out / f"draws_{kind}.csv"
        if not draws_path.exists():
            log.warning("no draws for model %s; skipping", kind)
            continue
        inputs.append(draws_path)
        draws = dataio.read_draws(draws_path)
        spec = None
        if kind == "full":
            basis = cfg.basis
            summary_path = out / "summary_full.json"
            if summary_path.exists():  # trust the fit, not the current config
                basis = json.loads(summary_path.read_text()).get("basis") or basis
            spec = fixed_hsgp_spec(data, HsgpSpec(n_b=basis))
        pred = posterior_predict(kind, draws, test, seed=cfg.seed + 400, hsgp_spec=spec)
        rate_samples[kind] = pred.rates
        logliks[kind] = pointwise_loglik(kind, draws, train, hsgp_spec=spec)

        dataio.write_csv(out / f"predictions_{kind}.csv",
                          ["unit_id", "duc", "observed_rate", "pred_mean", "pred_median",
                           "hdi_low", "hdi_high"],
                          [
                              (test.unit_ids[j], test.duc[j], test.rate[j], pred.mean[j],
                               pred.median[j], pred.hdi_low[j], pred.hdi_high[j])
                              for j in range(len(test.unit_ids))
                          ])
        train_pred = posterior_predict(kind, draws, train, seed=cfg.seed + 401, hsgp_spec=spec)
        n_keep = min(500, train_pred.rates.shape[0])
        dataio.write_csv(out / f"rate_draws_{kind}.csv",
                          ["draw", "unit_id", "rate"],
                          [
                              (d, train.unit_ids[j], train_pred.rates[d, j])
                              for d in range(n_keep) for j in range(len(train.unit_ids))
                          ])
    if not rate_samples:
        raise DataError(out / "draws_*.csv", 0, "no fitted draws found; run fit first")
    rep = report(rate_samples, test.rate, test.duc, loglik=logliks)
    dataio.write_metrics(out / "metrics.csv", rep.rows())
    for kind, loo_result in rep.loo.items():
        dataio.write_loo(out / f"loo_{kind}.csv", train.unit_ids, loo_result)
    dataio.write_json(out / "comparison.json", {
        "loo_elpd": rep.loo_elpd,
        "loo_differences": rep.loo_differences,
        "pareto_k_counts": rep.pareto_k_counts,
        "mean_fb_rate": {str(k): v for k, v in rep.mean_rate.items()},
    })
    _manifest(cfg, "evaluate", inputs)
    print(f"evaluate: metrics for {sorted(rate_samples)} over {len(test)} test units")
    return 0


def cmd_diagnose(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    wrote = []
    for kind in cfg.model_list:
        path = out / f"draws_{kind}.csv"
        if not path.exists():
            continue
        draws = dataio.read_draws(path)
        summary = summarize(draws)
        summary["model"] = kind
        summary.pop("divergences", None)  # not recoverable from the CSV alone
        dataio.write_json(out / f"diagnostics_{kind}.json", summary)
        wrote.append(kind)
    if not wrote:
        raise DataError(out / "draws_*.csv", 0, "no draws files to diagnose")
    _manifest(cfg, "diagnose", [out / f"draws_{k}.csv" for k in wrote])
    print(f"diagnose: wrote summaries for {wrote}")
    return 0


def cmd_pipeline(cfg: PipelineConfig) -> int:
    cmd_simulate(cfg)
    cmd_impute(cfg)
    cmd_ingest(cfg)
    cmd_fit(cfg)
    cmd_evaluate(cfg)
    cmd_diagnose(cfg)
    print("pipeline: done")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popuptake",
        description="Censored-count imputation and platform-uptake modelling pipeline",
    )
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="threads for chain-parallel sampling")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="generate a synthetic input file set")
    sub.add_parser("impute", help="fit the censored-count model and impute")
    sub.add_parser("ingest", help="harmonize inputs into the model dataset")
    fit = sub.add_parser("fit", help="sample an uptake model posterior")
    fit.add_argument("--model", choices=MODEL_KINDS)
    fit.add_argument("--basis", type=int, choices=(4, 8, 16, 32))
    sub.add_parser("evaluate", help="score fitted models on the test split")
    sub.add_parser("diagnose", help="recompute sampler diagnostics from draws")
    sub.add_parser("pipeline", help="run every stage in order")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "impute":
            return cmd_impute(cfg)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, model=args.model, basis=args.basis)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        if args.command == "pipeline":
            return cmd_pipeline(cfg)
        parser.error(f"unknown command {args.command!r}")
    except (DataError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
