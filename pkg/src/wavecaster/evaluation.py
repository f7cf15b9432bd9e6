"""Figure-product emission: per-lead RMSE maps, thresholded MRE, height-binned
RMSE, skill curves, ACC, and the storm case-study extraction."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import gridio, metrics
from .dataset import WaveDataset
from .errors import ContractError, DataError, DomainError
from .gridio import GridField
from .metrics import HeightBins, MetricsReport


def _check_grid(series_list, dataset: WaveDataset):
    for series in series_list:
        for state in series.predictions.values():
            if state.swh.values.shape != dataset.depth.values.shape:
                raise ContractError(
                    f"forecast grid {state.swh.values.shape} does not match "
                    f"truth grid {dataset.depth.values.shape}")
            return  # one check per series set is enough


def run_evaluation(dataset: WaveDataset, labeled_forecasts: dict, out_dir,
                   lat_weight: bool = True, mre_thresh: float = 1.0,
                   include_persistence: bool = True) -> MetricsReport:
    """Score forecasts and write the four figure-analogue CSV families.

    Maps/MRE/height tables come from the first label; skill curves cover
    all labels plus a persistence baseline over the same init times.
    """
    if not labeled_forecasts:
        raise DomainError("no forecast sets supplied")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for series_list in labeled_forecasts.values():
        _check_grid(series_list, dataset)

    primary_label = next(iter(labeled_forecasts))
    primary = labeled_forecasts[primary_label]
    leads = sorted({lead for s in primary for lead in s.predictions})
    report = MetricsReport()

    clim = {v: metrics.climatology_from_train(dataset, v) for v in ("swh", "mwp")}

    height_tables = {}
    for lead in leads:
        preds, truths = metrics.pair_with_truth(primary, dataset, lead)
        if not preds:
            raise DataError(f"no truth available at lead {lead}")
        scores = {}
        for variable in metrics.VARIABLES:
            fld = metrics.rmse_map(preds, truths, dataset.mask, variable)
            report.maps[(variable, lead)] = fld
            metrics.write_rmse_map_csv(fld, out / f"fig3_rmse_map_{variable}_{lead}.csv")
            scores[f"rmse_{variable}"] = metrics.global_rmse(
                preds, truths, dataset.mask, variable, lat_weight)
        for variable in ("swh", "mwp"):
            try:
                scalar, mre_map = metrics.mre_threshold(
                    preds, truths, dataset.mask, variable, mre_thresh)
                scores[f"mre_{variable}"] = scalar
                metrics.write_rmse_map_csv(mre_map, out / f"fig4_mre_{variable}_{lead}.csv")
            except DomainError:
                scores[f"mre_{variable}"] = None
            truth_mean = clim[variable]
            accs = []
            for p, t in zip(preds, truths):
                fld_p = p.swh if variable == "swh" else p.mwp
                fld_t = t.swh if variable == "swh" else t.mwp
                try:
                    accs.append(metrics.acc(fld_p, fld_t, truth_mean, dataset.mask,
                                            lat_weight))
                except DomainError:
                    pass
            scores[f"acc_{variable}"] = float(np.mean(accs)) if accs else None
        height_tables[lead] = metrics.rmse_by_height(preds, truths, dataset.mask)
        report.per_lead[lead] = scores
    metrics.write_height_csv(height_tables, out / "fig5_rmse_by_height.csv")
    report.height_table = height_tables

    labeled = dict(labeled_forecasts)
    if include_persistence:
        from .rollout import persistence_forecast
        labeled["persistence"] = [
            persistence_forecast(dataset, s.init_time, max(leads)) for s in primary]
    report.skill = metrics.skill_curves(labeled, dataset, leads, lat_weight)
    metrics.write_skill_csv(report.skill, out / "fig7_skill_curves.csv")

    payload = {
        "per_lead": {str(k): v for k, v in report.per_lead.items()},
        "skill": {f"{label}/{variable}/{lead}": rmse
                  for (label, variable, lead), rmse in sorted(report.skill.items())},
    }
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=2))
    return report


# ---------------------------------------------------------------------------
# storm case study


def _window_slices(fld: GridField, lat_min, lat_max, lon_min, lon_max):
    lats, lons = fld.lats, fld.lons
    jsel = np.where((lats >= lat_min) & (lats <= lat_max))[0]
    isel = np.where((lons >= lon_min) & (lons <= lon_max))[0]
    if jsel.size == 0 or isel.size == 0:
        raise DataError(
            f"window lat[{lat_min},{lat_max}] lon[{lon_min},{lon_max}] "
            f"lies outside the grid (lat {lats[0]:.2f}..{lats[-1]:.2f}, "
            f"lon {lons[0]:.2f}..{lons[-1]:.2f})")
    return slice(jsel[0], jsel[-1] + 1), slice(isel[0], isel[-1] + 1)


def _max_swh_cell(swh: np.ndarray):
    flat = np.nanargmax(swh)
    return np.unravel_index(flat, swh.shape)


def case_study(ctx, init_time: int, window, out_dir, leads=(1, 4, 7)):
    """Extract a storm-centered window at the given leads plus truth.

    window = (lat_min, lat_max, lon_min, lon_max) in degrees. Writes the
    windowed SWH/MWP/MWD fields as WGF and a JSON report with per-lead
    max-SWH magnitude error (m) and center displacement (cells).
    """
    from .rollout import rollout, TruthWindSource

    dataset = ctx.dataset
    js, is_ = _window_slices(dataset.depth, *window)
    series = rollout(ctx, init_time, TruthWindSource(dataset), max(leads))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def crop(fld: GridField) -> GridField:
        sub = fld.values[js, is_]
        return GridField(var_id=fld.var_id, values=sub,
                         lat0=fld.lat0 + fld.dlat * js.start, dlat=fld.dlat,
                         lon0=fld.lon0 + fld.dlon * is_.start, dlon=fld.dlon,
                         units=fld.units, valid_time=fld.valid_time)

    rows = []
    for lead in leads:
        t_valid = init_time + dataset.dt * lead
        truth = dataset.wave_state(t_valid)
        pred = series.predictions[lead]
        for tag, state in (("truth", truth), ("pred", pred)):
            for name, fld in (("swh", state.swh), ("mwp", state.mwp),
                              ("mwd", state.mwd_degrees())):
                gridio.write_wgf(crop(fld), out / f"lead{lead}_{tag}_{name}.wgf")
        tj, ti = _max_swh_cell(truth.swh.values[js, is_])
        pj, pi = _max_swh_cell(pred.swh.values[js, is_])
        rows.append({
            "lead": lead,
            "max_swh_truth": float(truth.swh.values[js, is_][tj, ti]),
            "max_swh_pred": float(pred.swh.values[js, is_][pj, pi]),
            "max_swh_error": float(abs(pred.swh.values[js, is_][pj, pi]
                                       - truth.swh.values[js, is_][tj, ti])),
            "center_displacement_cells": float(np.hypot(pj - tj, pi - ti)),
        })
    (out / "case_study.json").write_text(json.dumps(rows, indent=2))
    return rows
