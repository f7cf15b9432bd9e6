"""Single `wavecaster` executable exposing the full pipeline.

Subcommands: synth, train, rollout, evaluate, case-study. Exit codes:
0 success, 2 usage/config, 3 data/format, 4 contract. Diagnostics go to
stderr; stdout carries paths and metrics only. Every run echoes its
resolved configuration (run-config.echo) and a VERSION stamp into its
output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig
from .errors import (ConfigError, ContractError, DataError, DomainError,
                     FormatError, ShapeError)


def _log(msg):
    print(msg, file=sys.stderr)


def _build_config(args, overrides):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key, value in overrides:
        cfg.set(key, value)
    return cfg


def _parse_overrides(extra):
    """Turn trailing `--key value` pairs into (key, value) tuples."""
    out = []
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or i + 1 >= len(extra):
            raise ConfigError(f"expected '--key value' pairs, got {extra[i:]}")
        out.append((token[2:], extra[i + 1]))
        i += 2
    return out


def _stamp_out_dir(out_dir, cfg: RunConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run-config.echo").write_text(cfg.render())
    (out / "VERSION").write_text(__version__ + "\n")
    return out


def _load_dataset(path):
    from .dataset import WaveDataset
    return WaveDataset.load(path)


def _context_from_checkpoint(ckpt_path, dataset, expect_kind=None):
    from .training import ModelContext, load_model_from_checkpoint
    model, meta, stats, _, _ = load_model_from_checkpoint(ckpt_path, expect_kind)
    if (meta["lat_count"], meta["lon_count"]) != dataset.depth.values.shape:
        raise ContractError(
            f"checkpoint grid {(meta['lat_count'], meta['lon_count'])} does not "
            f"match dataset grid {dataset.depth.values.shape}")
    return ModelContext.create(model, dataset)


def _wind_source(spec, dataset):
    from .rollout import FileWindSource, TruthWindSource
    if spec == "truth":
        return TruthWindSource(dataset)
    if spec.startswith("file:"):
        return FileWindSource(spec[len("file:"):])
    raise ConfigError(f"wind source must be 'truth' or 'file:<dir>', got {spec!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, overrides):
    from .synthwave import gen_dataset
    cfg = _build_config(args, overrides)
    out = _stamp_out_dir(args.out, cfg)
    synth_cfg = cfg.synth_config()
    t_in = max(cfg.get_int("vit.t_in"), cfg.get_int("convlstm.t_in"))
    gen_dataset(synth_cfg, out, ratios=cfg.split_ratios(), t_in=t_in)
    _log(f"generated {synth_cfg.n_steps} steps on a "
         f"{synth_cfg.lat_count}x{synth_cfg.lon_count} grid")
    print(str(out / "manifest.txt"))
    return 0


def cmd_train(args, overrides):
    from .training import train
    cfg = _build_config(args, overrides)
    if args.model:
        cfg.set("model", args.model)
    out = _stamp_out_dir(args.out, cfg)
    dataset = _load_dataset(args.data)
    best = train(dataset, cfg.train_config(), out,
                 model_cfg=cfg.model_config(),
                 resume=args.resume,
                 run_config_text=cfg.render(),
                 log=_log)
    print(str(best))
    return 0


def cmd_rollout(args, overrides):
    from . import gridio
    from .rollout import rollout, write_forecast
    cfg = _build_config(args, overrides)
    out = _stamp_out_dir(args.out, cfg)
    dataset = _load_dataset(args.data)
    ctx = _context_from_checkpoint(args.checkpoint, dataset)
    source = _wind_source(args.wind, dataset)
    leads = args.leads if args.leads else cfg.get_int("rollout.leads")
    if args.init_time == "all":
        # keep only inits whose full lead range stays inside the archive
        last = max(dataset.times)
        init_times = [t for t in dataset.sample_times("test")
                      if t + leads * dataset.dt <= last]
        if not init_times:
            raise DataError(
                f"no test init supports {leads} leads within the archive")
    else:
        init_times = [gridio.parse_iso_time(args.init_time)]
    series = [rollout(ctx, t, source, leads) for t in init_times]
    write_forecast(series, out)
    print(str(out / "forecast_manifest.txt"))
    return 0


def cmd_evaluate(args, overrides):
    from .evaluation import run_evaluation
    from .rollout import read_forecast
    cfg = _build_config(args, overrides)
    out = _stamp_out_dir(args.out, cfg)
    dataset = _load_dataset(args.data)
    labeled = {}
    for spec in args.forecast:
        if "=" not in spec:
            raise ConfigError(f"--forecast expects label=dir, got {spec!r}")
        label, path = spec.split("=", 1)
        labeled[label] = read_forecast(path)
    report = run_evaluation(dataset, labeled, out,
                            lat_weight=cfg.get_bool("metrics.lat_weight"),
                            mre_thresh=cfg.get_float("metrics.mre_threshold"))
    for lead in sorted(report.per_lead):
        scores = report.per_lead[lead]
        print(f"lead {lead}: rmse_swh={scores['rmse_swh']:.4f} "
              f"rmse_mwp={scores['rmse_mwp']:.4f} rmse_mwd={scores['rmse_mwd']:.2f}")
    print(str(out / "fig7_skill_curves.csv"))
    return 0


def cmd_case_study(args, overrides):
    from . import gridio
    from .evaluation import case_study
    cfg = _build_config(args, overrides)
    out = _stamp_out_dir(args.out, cfg)
    dataset = _load_dataset(args.data)
    ctx = _context_from_checkpoint(args.checkpoint, dataset)
    init_time = gridio.parse_iso_time(args.init_time)
    window = (args.lat_min, args.lat_max, args.lon_min, args.lon_max)
    rows = case_study(ctx, init_time, window, out)
    for row in rows:
        print(f"lead {row['lead']}: max_swh_error={row['max_swh_error']:.3f} m "
              f"center_displacement={row['center_displacement_cells']:.1f} cells")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wavecaster",
        description="Wind-forced transformer ocean-wave forecasting, desk scale.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the selected model")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=["vit", "convlstm"])
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rollout", help="autoregressive forecast from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init-time", required=True,
                   help="ISO time, or 'all' for every test-split init")
    p.add_argument("--wind", default="truth", help="truth | file:<dir>")
    p.add_argument("--leads", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("evaluate", help="score forecasts and emit figure CSVs")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--forecast", action="append", required=True,
                   help="label=dir, repeatable; first label drives the maps")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("case-study", help="storm-window field dump + max-SWH report")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init-time", required=True)
    p.add_argument("--lat-min", type=float, required=True)
    p.add_argument("--lat-max", type=float, required=True)
    p.add_argument("--lon-min", type=float, required=True)
    p.add_argument("--lon-max", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_case_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(extra)
        return args.fn(args, overrides)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except (DataError, FormatError) as exc:
        _log(f"data error: {exc}")
        return 3
    except (ContractError, ShapeError, DomainError) as exc:
        _log(f"contract error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
