"""Forecast verification: RMSE maps, thresholded MRE, height-binned RMSE,
anomaly correlation, circular direction errors and skill-curve tables.

All metrics treat land as NaN/excluded, score every forecast source through
the same code path, and optionally weight global means by cos(latitude).
Direction errors are circular (degrees in [0, 180]) and are evaluated only
where truth SWH >= 0.1 m, since the direction of near-zero waves is noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import WaveDataset
from .errors import ContractError, DomainError
from .gridio import GridField, LandMask, WaveState

MIN_SWH_FOR_DIRECTION = 0.1  # m

VARIABLES = ("swh", "mwp", "mwd")


def circ_diff(a_deg, b_deg):
    """Smallest angular separation in degrees, in [0, 180]."""
    d = np.abs(np.asarray(a_deg, dtype=float) - np.asarray(b_deg, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def _variable_values(state: WaveState, variable: str) -> np.ndarray:
    if variable == "swh":
        return state.swh.values
    if variable == "mwp":
        return state.mwp.values
    if variable == "mwd":
        return state.mwd_degrees().values
    raise ContractError(f"unknown variable {variable!r}")


def _errors(pred: WaveState, truth: WaveState, variable: str) -> np.ndarray:
    """Per-cell signed (or circular absolute) error with NaN where undefined."""
    pv = _variable_values(pred, variable)
    tv = _variable_values(truth, variable)
    if variable == "mwd":
        err = circ_diff(pv, tv)
        err = np.where(truth.swh.values >= MIN_SWH_FOR_DIRECTION, err, np.nan)
        return err
    return pv - tv


def cos_lat_weights(fld: GridField) -> np.ndarray:
    w = np.cos(np.deg2rad(fld.lats))[:, None]
    return np.broadcast_to(w, fld.values.shape)


def rmse_map(preds, truths, mask: LandMask, variable: str) -> GridField:
    """Per-cell RMSE over forecast instances; land (and never-defined cells) NaN."""
    if len(preds) == 0 or len(preds) != len(truths):
        raise DomainError(f"rmse_map needs matched non-empty instance lists, "
                          f"got {len(preds)} and {len(truths)}")
    sq = np.zeros_like(preds[0].swh.values)
    count = np.zeros_like(sq)
    for p, t in zip(preds, truths):
        err = _errors(p, t, variable)
        good = np.isfinite(err)
        sq[good] += err[good] ** 2
        count[good] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(sq / count)
    out[count == 0] = np.nan
    out[mask.land] = np.nan
    template = preds[0].swh
    units = {"swh": "m", "mwp": "s", "mwd": "deg"}[variable]
    return template.with_values(out, units=units)


def global_rmse(preds, truths, mask: LandMask, variable: str,
                lat_weight: bool = True) -> float:
    """Scalar RMSE over all (instance, ocean cell) pairs, optionally cos-lat weighted."""
    if len(preds) == 0:
        raise DomainError("global_rmse needs at least one instance")
    w_grid = cos_lat_weights(preds[0].swh) if lat_weight else np.ones_like(
        preds[0].swh.values)
    num = 0.0
    den = 0.0
    for p, t in zip(preds, truths):
        err = _errors(p, t, variable)
        good = np.isfinite(err) & mask.ocean
        num += float((w_grid[good] * err[good] ** 2).sum())
        den += float(w_grid[good].sum())
    if den == 0.0:
        raise DomainError(f"global_rmse: no valid cells for {variable}")
    return float(np.sqrt(num / den))


def mre_threshold(preds, truths, mask: LandMask, variable: str,
                  threshold: float = 1.0):
    """Mean relative error where truth SWH >= threshold.

    Returns (scalar MRE, per-cell MRE map with NaN where the filter never
    passes). The filter is always on truth SWH, for MWP too.
    """
    if threshold <= 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    if variable not in ("swh", "mwp"):
        raise ContractError(f"mre is defined for swh/mwp, got {variable!r}")
    num_map = np.zeros_like(preds[0].swh.values)
    cnt_map = np.zeros_like(num_map)
    for p, t in zip(preds, truths):
        pv = _variable_values(p, variable)
        tv = _variable_values(t, variable)
        sel = mask.ocean & np.isfinite(tv) & np.isfinite(pv) \
            & (t.swh.values >= threshold) & (tv > 0)
        rel = np.zeros_like(num_map)
        rel[sel] = np.abs(pv[sel] - tv[sel]) / tv[sel]
        num_map += rel
        cnt_map += sel.astype(float)
    total = float(cnt_map.sum())
    if total == 0:
        raise DomainError(
            f"no (cell, instance) passes the {threshold} m truth-SWH filter")
    scalar = float(num_map.sum() / total)
    with np.errstate(invalid="ignore", divide="ignore"):
        mre = num_map / cnt_map
    mre[cnt_map == 0] = np.nan
    template = preds[0].swh
    return scalar, template.with_values(mre, units="")


@dataclass(frozen=True)
class HeightBins:
    """Truth-SWH bins centered 1..8 m with half-width 0.5 m, covering [0.5, 8.5)."""

    centers: tuple = tuple(range(1, 9))
    half_width: float = 0.5

    def assign(self, swh: np.ndarray) -> np.ndarray:
        """Bin center per cell, NaN outside all bins."""
        out = np.full(swh.shape, np.nan)
        for c in self.centers:
            sel = (swh >= c - self.half_width) & (swh < c + self.half_width)
            out[sel] = c
        return out


def rmse_by_height(preds, truths, mask: LandMask, bins: HeightBins = HeightBins()):
    """dict: (variable, bin center) -> (rmse, count); empty bins are absent."""
    sums: dict = {}
    counts: dict = {}
    for p, t in zip(preds, truths):
        binned = bins.assign(t.swh.values)
        for variable in VARIABLES:
            err = _errors(p, t, variable)
            good = mask.ocean & np.isfinite(err) & np.isfinite(binned)
            for c in bins.centers:
                sel = good & (binned == c)
                n = int(sel.sum())
                if n == 0:
                    continue
                key = (variable, c)
                sums[key] = sums.get(key, 0.0) + float((err[sel] ** 2).sum())
                counts[key] = counts.get(key, 0) + n
    return {key: (float(np.sqrt(sums[key] / counts[key])), counts[key])
            for key in sums}


def acc(pred: GridField, truth: GridField, climatology: GridField, mask: LandMask,
        lat_weight: bool = True) -> float:
    """Cos-latitude-weighted anomaly correlation over ocean cells."""
    w = cos_lat_weights(pred) if lat_weight else np.ones_like(pred.values)
    sel = mask.ocean & np.isfinite(pred.values) & np.isfinite(truth.values) \
        & np.isfinite(climatology.values)
    pa = pred.values[sel] - climatology.values[sel]
    ta = truth.values[sel] - climatology.values[sel]
    ws = w[sel]
    pa = pa - (ws * pa).sum() / ws.sum()
    ta = ta - (ws * ta).sum() / ws.sum()
    var_p = float((ws * pa * pa).sum())
    var_t = float((ws * ta * ta).sum())
    if var_p <= 0.0 or var_t <= 0.0:
        raise DomainError("anomaly variance is zero; ACC undefined")
    return float((ws * pa * ta).sum() / np.sqrt(var_p * var_t))


# ---------------------------------------------------------------------------
# reporting


@dataclass
class MetricsReport:
    per_lead: dict = field(default_factory=dict)   # lead -> {metric: value}
    maps: dict = field(default_factory=dict)       # (variable, lead) -> GridField
    height_table: dict = field(default_factory=dict)  # lead -> rmse_by_height dict
    skill: dict = field(default_factory=dict)      # (label, variable, lead) -> rmse


def pair_with_truth(series_list, dataset: WaveDataset, lead: int):
    """(preds, truths) at one lead, skipping inits whose truth is missing."""
    dt = dataset.dt
    preds, truths = [], []
    for series in series_list:
        if lead not in series.predictions:
            continue
        t_valid = series.init_time + dt * lead
        try:
            truth = dataset.wave_state(t_valid)
        except Exception:
            continue
        preds.append(series.predictions[lead])
        truths.append(truth)
    return preds, truths


def skill_curves(labeled_series: dict, dataset: WaveDataset, leads,
                 lat_weight: bool = True) -> dict:
    """(label, variable, lead) -> global RMSE; all labels share one code path."""
    grids = set()
    out = {}
    for label, series_list in labeled_series.items():
        for lead in leads:
            preds, truths = pair_with_truth(series_list, dataset, lead)
            if not preds:
                raise ContractError(
                    f"series {label!r} covers no test instances at lead {lead}")
            grids.add(preds[0].swh.values.shape)
            for variable in VARIABLES:
                out[(label, variable, lead)] = global_rmse(
                    preds, truths, dataset.mask, variable, lat_weight)
    if len(grids) > 1:
        raise ContractError(f"skill_curves saw mismatched grids: {sorted(grids)}")
    return out


def climatology_from_train(dataset: WaveDataset, variable: str) -> GridField:
    """All-training-time mean field (per-cell) of the given variable."""
    times = dataset.sample_times("train")
    acc_v = None
    count = 0
    for t in times:
        state = dataset.wave_state(t)
        v = _variable_values(state, variable)
        acc_v = v.copy() if acc_v is None else acc_v + v
        count += 1
    return dataset.template.with_values(acc_v / count)


# ---------------------------------------------------------------------------
# CSV emission, one file per figure analogue


def write_rmse_map_csv(fld: GridField, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "value"])
        lats, lons = fld.lats, fld.lons
        for j in range(fld.lat_count):
            for i in range(fld.lon_count):
                v = fld.values[j, i]
                w.writerow([f"{lats[j]:.4f}", f"{lons[i]:.4f}",
                            "nan" if np.isnan(v) else f"{v:.6f}"])


def write_height_csv(tables: dict, path, bins: HeightBins = HeightBins()) -> None:
    """tables: lead -> rmse_by_height dict."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "bin", "lead", "value", "count"])
        for lead in sorted(tables):
            table = tables[lead]
            for variable in VARIABLES:
                for c in bins.centers:
                    if (variable, c) in table:
                        rmse, n = table[(variable, c)]
                        w.writerow([variable, c, lead, f"{rmse:.6f}", n])
                    else:
                        w.writerow([variable, c, lead, "", 0])


def write_skill_csv(skill: dict, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "variable", "lead", "rmse"])
        for (label, variable, lead) in sorted(skill):
            w.writerow([label, variable, lead, f"{skill[(label, variable, lead)]:.6f}"])
