"""Autoregressive multi-lead forecasting with pluggable wind sources.

Each lead feeds its prediction back as wave history for the next step;
wind at every step comes from the declared source (truth archive or a
directory of WGF wind files), so forecasts use only information available
at init time plus that source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gridio
from .dataset import WaveDataset
from .errors import DataError
from .gridio import GridField, VarId, WaveState, denormalize_wave, normalize_wind
from .training import ModelContext


class TruthWindSource:
    """Winds straight from the truth archive."""

    def __init__(self, dataset: WaveDataset):
        self.dataset = dataset
        self.tag = "truth"

    def wind_at(self, t: int):
        try:
            return self.dataset.wind(t)
        except DataError:
            raise DataError(
                f"wind source 'truth' has no fields at {gridio.iso_time(t)}") from None


class FileWindSource:
    """Winds read from a directory holding its own manifest of U10/V10 files."""

    def __init__(self, root):
        self.root = Path(root)
        self.tag = f"file:{root}"
        manifest = self.root / "manifest.txt"
        if not manifest.exists():
            raise DataError(f"wind source directory {root} has no manifest.txt")
        self.index = {}
        for t, var, rel in gridio.read_manifest(manifest):
            if var in (VarId.U10, VarId.V10):
                self.index[(t, var)] = rel

    def wind_at(self, t: int):
        try:
            u = gridio.read_wgf(self.root / self.index[(t, VarId.U10)])
            v = gridio.read_wgf(self.root / self.index[(t, VarId.V10)])
        except KeyError:
            raise DataError(
                f"wind source {self.root} has no fields at {gridio.iso_time(t)}") from None
        return u, v


@dataclass
class ForecastSeries:
    init_time: int
    wind_source: str
    predictions: dict = field(default_factory=dict)  # lead (1..L) -> WaveState

    @property
    def leads(self):
        return sorted(self.predictions)


def rollout(ctx: ModelContext, init_time: int, wind_source, n_leads: int) -> ForecastSeries:
    """Roll the model forward n_leads steps from the truth state at init_time."""
    ds = ctx.dataset
    dt = ds.dt
    t_in = getattr(ctx.model.config, "t_in", 2)
    t_force = getattr(ctx.model.config, "t_force", 1)
    hist = [ctx.norm_wave_at(init_time - dt * k) for k in range(t_in - 1, -1, -1)]
    series = ForecastSeries(init_time=init_time, wind_source=wind_source.tag)
    for lead in range(1, n_leads + 1):
        t_valid = init_time + dt * lead
        force = []
        for k in range(t_force):
            u, v = wind_source.wind_at(t_valid - dt * (t_force - 1 - k))
            force.append(normalize_wind(u, v, ds.stats, ds.mask))
        pred = ctx.predict(np.stack(hist), np.stack(force))
        channels = pred.data
        template = ds.template.with_values(ds.template.values, var_id=VarId.SWH)
        state = denormalize_wave(channels, ds.stats, ds.mask, template)
        state = WaveState(
            swh=_stamp(state.swh, t_valid),
            mwp=_stamp(state.mwp, t_valid),
            mwd_sin=_stamp(state.mwd_sin, t_valid),
            mwd_cos=_stamp(state.mwd_cos, t_valid),
        )
        series.predictions[lead] = state
        hist = hist[1:] + [channels]
    return series


def _stamp(fld: GridField, t: int) -> GridField:
    from dataclasses import replace
    return replace(fld, valid_time=t)


def persistence_forecast(ctx_or_dataset, init_time: int, n_leads: int) -> ForecastSeries:
    """Skill baseline: every lead repeats the init-time truth state."""
    ds = ctx_or_dataset.dataset if isinstance(ctx_or_dataset, ModelContext) else ctx_or_dataset
    init_state = ds.wave_state(init_time)
    series = ForecastSeries(init_time=init_time, wind_source="persistence")
    for lead in range(1, n_leads + 1):
        series.predictions[lead] = init_state
    return series


# ---------------------------------------------------------------------------
# forecast archive I/O (WGF + manifest per spec'd variable set)


_STATE_VARS = ("SWH", "MWP", "MWD")


def write_forecast(series_list, out_dir, mask=None) -> None:
    """Serialize forecasts as WGF files plus forecast_manifest.txt.

    Manifest lines: `<init-iso> <lead> <variable> <relative-path>`.
    """
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    lines = []
    for series in series_list:
        for lead, state in sorted(series.predictions.items()):
            fields = {
                VarId.SWH: state.swh,
                VarId.MWP: state.mwp,
                VarId.MWD: state.mwd_degrees(),
            }
            for var, fld in fields.items():
                rel = (f"fields/init{series.init_time}_lead{lead}_"
                       f"{var.name.lower()}.wgf")
                gridio.write_wgf(fld, out / rel)
                lines.append(f"{gridio.iso_time(series.init_time)} {lead} {var.name} {rel}")
        lines.append(f"# wind_source {series.wind_source}")
    (out / "forecast_manifest.txt").write_text("\n".join(lines) + "\n")


def read_forecast(root) -> list:
    """Inverse of write_forecast; direction is re-encoded to (sin, cos)."""
    root = Path(root)
    manifest = root / "forecast_manifest.txt"
    if not manifest.exists():
        raise DataError(f"{root}: no forecast_manifest.txt")
    per_init: dict = {}
    wind_source = "unknown"
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("# wind_source"):
            wind_source = line.split(None, 2)[2]
            continue
        iso, lead, var, rel = line.split()
        t = gridio.parse_iso_time(iso)
        per_init.setdefault(t, {}).setdefault(int(lead), {})[var] = gridio.read_wgf(root / rel)
    out = []
    for t in sorted(per_init):
        series = ForecastSeries(init_time=t, wind_source=wind_source)
        for lead, fields in sorted(per_init[t].items()):
            missing = [v for v in _STATE_VARS if v not in fields]
            if missing:
                raise DataError(f"{root}: init {gridio.iso_time(t)} lead {lead} "
                                f"missing {missing}")
            series.predictions[lead] = WaveState.from_mwd_degrees(
                fields["SWH"], fields["MWP"], fields["MWD"])
        out.append(series)
    return out
