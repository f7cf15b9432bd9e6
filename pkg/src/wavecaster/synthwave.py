"""Deterministic synthetic wind-wave world for desk-scale training and tests.

The dynamics are a relaxation-to-equilibrium toy, not physics: per ocean
cell with wind speed s, SWH relaxes toward alpha*s^2 at rate lam and is
then advected a fraction of the wind displacement (periodic in longitude,
clamped in latitude, land absorbs); MWP = max(0.5, beta*s); MWD is the
instantaneous wind direction (direction of travel, degrees clockwise from
north). Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gridio
from .errors import ConfigError, DomainError
from .gridio import GridField, LandMask, NormStats, VarId, WaveState

EPOCH0 = 1577836800  # 2020-01-01T00:00:00Z, start of the synthetic timeline


@dataclass
class SynthConfig:
    lat_count: int = 32
    lon_count: int = 64
    n_steps: int = 200
    dt_hours: float = 24.0
    seed: int = 0
    alpha: float = 0.025      # equilibrium SWH = alpha * wind_speed^2
    lam: float = 0.3          # relaxation rate per step, in (0, 1]
    beta: float = 0.55        # MWP = max(0.5, beta * wind_speed)
    n_storms: int = 3
    land_fraction: float = 0.15
    bg_wind_amp: float = 6.0  # background zonal flow amplitude (m/s)
    advect_fraction: float = 0.3

    def validate(self):
        if self.lat_count < 4 or self.lon_count < 4:
            raise ConfigError("grid must be at least 4x4")
        if not (0.0 < self.lam <= 1.0):
            raise ConfigError(f"relaxation rate must be in (0,1], got {self.lam}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.land_fraction >= 1.0:
            raise ConfigError(f"land_fraction must be < 1, got {self.land_fraction}")
        if self.land_fraction < 0.0:
            raise ConfigError("land_fraction must be >= 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")

    @property
    def dlat(self):
        return 150.0 / self.lat_count

    @property
    def lat0(self):
        return -75.0 + 0.5 * self.dlat

    @property
    def dlon(self):
        return 360.0 / self.lon_count

    @property
    def dt_seconds(self):
        return self.dt_hours * 3600.0

    def grid_template(self, var_id=VarId.GENERIC, valid_time=-1) -> GridField:
        return GridField(
            var_id=var_id,
            values=np.zeros((self.lat_count, self.lon_count)),
            lat0=self.lat0,
            dlat=self.dlat,
            lon0=0.0,
            dlon=self.dlon,
            units=gridio.DEFAULT_UNITS[var_id],
            valid_time=valid_time,
        )

    def time_at(self, step: int) -> int:
        return int(EPOCH0 + step * self.dt_seconds)


@dataclass
class StormTrack:
    lat_cell: float   # start position, cell coordinates (exactly on a cell)
    lon_cell: float
    vel_lat: float    # cells per step
    vel_lon: float
    radius: float     # cells
    peak: float       # m/s

    def center_at(self, step: int, h: int, w: int):
        lat = self.lat_cell + self.vel_lat * step
        # bounce off latitude edges
        span = h - 1
        lat = abs(((lat + span) % (2 * span)) - span)
        lon = (self.lon_cell + self.vel_lon * step) % w
        return lat, lon


@dataclass
class WorldState:
    wind_u: GridField
    wind_v: GridField
    wave: WaveState
    depth: GridField
    step: int


@dataclass
class World:
    config: SynthConfig
    depth: GridField
    mask: LandMask
    storms: list = field(default_factory=list)


def _make_storms(cfg: SynthConfig, rng: np.random.Generator):
    storms = []
    for _ in range(cfg.n_storms):
        storms.append(StormTrack(
            lat_cell=float(rng.integers(cfg.lat_count // 4, 3 * cfg.lat_count // 4)),
            lon_cell=float(rng.integers(0, cfg.lon_count)),
            vel_lat=float(rng.uniform(-0.3, 0.3)),
            vel_lon=float(rng.uniform(0.4, 1.2)),
            radius=float(rng.uniform(2.0, 4.0)),
            peak=float(rng.uniform(14.0, 24.0)),
        ))
    return storms


def _make_depth(cfg: SynthConfig, rng: np.random.Generator) -> GridField:
    h, w = cfg.lat_count, cfg.lon_count
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    f = np.zeros((h, w))
    n_blobs = max(3, (h * w) // 128)
    for _ in range(n_blobs):
        cj = rng.uniform(0, h)
        ci = rng.uniform(0, w)
        r = rng.uniform(1.5, 5.0)
        amp = rng.uniform(0.5, 1.0)
        dlon = np.minimum(np.abs(ii - ci), w - np.abs(ii - ci))
        d2 = (jj - cj) ** 2 + dlon ** 2
        f += amp * np.exp(-0.5 * d2 / r ** 2)
    if cfg.land_fraction <= 0.0:
        elev = -3000.0 - 1000.0 * f / max(f.max(), 1e-12)
    else:
        thresh = np.quantile(f, 1.0 - cfg.land_fraction)
        elev = (f - thresh) * 4000.0
        elev = np.where(elev >= 0.0, elev + 1.0, np.maximum(elev, -5500.0))
    fld = cfg.grid_template(VarId.DEPTH)
    fld = fld.with_values(elev)
    if not (fld.values < 0).any():
        raise DomainError("generated terrain left no ocean cells; lower land_fraction")
    return fld


def wind_at(world: World, step: int):
    """Wind fields at a step: smooth background flow + translating storm jets."""
    cfg = world.config
    h, w = cfg.lat_count, cfg.lon_count
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    amp = cfg.bg_wind_amp
    u = amp * np.sin(2.0 * np.pi * jj / h) * (1.0 + 0.3 * np.sin(2.0 * np.pi * step / 41.0))
    v = 0.3 * amp * np.cos(2.0 * np.pi * ii / w + 0.15 * step)
    for storm in world.storms:
        cj, ci = storm.center_at(step, h, w)
        dlon = np.minimum(np.abs(ii - ci), w - np.abs(ii - ci))
        d2 = (jj - cj) ** 2 + dlon ** 2
        mag = storm.peak * np.exp(-0.5 * d2 / storm.radius ** 2)
        speed = np.hypot(storm.vel_lon, storm.vel_lat)
        if speed < 1e-12:
            du, dv = 1.0, 0.0
        else:
            du, dv = storm.vel_lon / speed, storm.vel_lat / speed
        u = u + mag * du
        v = v + mag * dv
    t = cfg.time_at(step)
    uf = cfg.grid_template(VarId.U10, valid_time=t).with_values(u)
    vf = cfg.grid_template(VarId.V10, valid_time=t).with_values(v)
    return uf, vf


def _wind_direction_degrees(u, v):
    # direction of travel, degrees clockwise from north
    return np.degrees(np.arctan2(u, v)) % 360.0


def _equilibrium_wave(cfg: SynthConfig, mask: LandMask, u: GridField, v: GridField,
                      valid_time: int) -> WaveState:
    speed = np.hypot(u.values, v.values)
    swh = cfg.alpha * speed ** 2
    mwp = np.maximum(0.5, cfg.beta * speed)
    mwd = _wind_direction_degrees(u.values, v.values)
    land = mask.land
    for arr in (swh, mwp, mwd):
        arr[land] = np.nan
    tmpl = cfg.grid_template(VarId.SWH, valid_time=valid_time)
    return WaveState.from_mwd_degrees(
        tmpl.with_values(swh),
        tmpl.with_values(mwp, var_id=VarId.MWP, units="s"),
        tmpl.with_values(mwd, var_id=VarId.MWD, units="deg"),
    )


def gen_world(cfg: SynthConfig):
    """Build terrain, storm tracks and the equilibrium initial state."""
    cfg.validate()
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    depth = _make_depth(cfg, rng)
    mask = gridio.derive_mask(depth)
    storms = _make_storms(cfg, rng)
    world = World(config=cfg, depth=depth, mask=mask, storms=storms)
    u, v = wind_at(world, 0)
    wave = _equilibrium_wave(cfg, mask, u, v, cfg.time_at(0))
    state = WorldState(wind_u=u, wind_v=v, wave=wave, depth=depth, step=0)
    return world, state


def step_wave(world: World, wave: WaveState, wind_u: GridField, wind_v: GridField,
              valid_time: int) -> WaveState:
    """Advance the wave one step under the given (next-step) wind."""
    cfg = world.config
    mask = world.mask
    h, w = cfg.lat_count, cfg.lon_count
    land = mask.land
    speed = np.hypot(wind_u.values, wind_v.values)

    swh = wave.swh.values.copy()
    swh[land] = 0.0
    swh = swh + cfg.lam * (cfg.alpha * speed ** 2 - swh)

    # semi-Lagrangian advection: sample upstream at a fraction of the wind
    # displacement, bilinear with land-aware weights
    meters_per_deg = 111320.0
    lat_rad = np.deg2rad(cfg.lat0 + cfg.dlat * np.arange(h))[:, None]
    coslat = np.maximum(np.cos(lat_rad), 0.2)
    disp_lon = cfg.advect_fraction * wind_u.values * cfg.dt_seconds / (meters_per_deg * cfg.dlon * coslat)
    disp_lat = cfg.advect_fraction * wind_v.values * cfg.dt_seconds / (meters_per_deg * cfg.dlat)

    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_j = np.clip(jj - disp_lat, 0.0, h - 1.0)
    src_i = (ii - disp_lon) % w
    j0 = np.floor(src_j).astype(int)
    i0 = np.floor(src_i).astype(int)
    fj = src_j - j0
    fi = src_i - i0
    i0 %= w  # float modulo can land exactly on w
    j1 = np.minimum(j0 + 1, h - 1)
    i1 = (i0 + 1) % w
    ocean_f = mask.ocean.astype(float)
    acc = np.zeros((h, w))
    wsum = np.zeros((h, w))
    for (ja, ia, wgt) in (
        (j0, i0, (1 - fj) * (1 - fi)),
        (j0, i1, (1 - fj) * fi),
        (j1, i0, fj * (1 - fi)),
        (j1, i1, fj * fi),
    ):
        o = ocean_f[ja, ia]
        acc += wgt * o * swh[ja, ia]
        wsum += wgt * o
    advected = np.where(wsum > 1e-9, acc / np.maximum(wsum, 1e-12), swh)

    mwp = np.maximum(0.5, cfg.beta * speed)
    mwd = _wind_direction_degrees(wind_u.values, wind_v.values)
    swh_out = np.maximum(advected, 0.0)
    for arr in (swh_out, mwp, mwd):
        arr[land] = np.nan
    tmpl = cfg.grid_template(VarId.SWH, valid_time=valid_time)
    return WaveState.from_mwd_degrees(
        tmpl.with_values(swh_out),
        tmpl.with_values(mwp, var_id=VarId.MWP, units="s"),
        tmpl.with_values(mwd, var_id=VarId.MWD, units="deg"),
    )


def run_world(cfg: SynthConfig):
    """Yield WorldStates for steps 0..n_steps-1."""
    world, state = gen_world(cfg)
    yield world, state
    wave = state.wave
    for k in range(1, cfg.n_steps):
        u, v = wind_at(world, k)
        wave = step_wave(world, wave, u, v, cfg.time_at(k))
        yield world, WorldState(wind_u=u, wind_v=v, wave=wave, depth=world.depth, step=k)


def gen_dataset(cfg: SynthConfig, out_dir, ratios=(0.8, 0.1, 0.1), t_in: int = 2):
    """Write the full synthetic archive: WGF fields, manifest, splits, norm stats.

    A sample inits at step i (needing waves at i-t_in+1..i) and targets step
    i+1; the split is chronological on the target with train earliest.
    """
    cfg.validate()
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n_samples = cfg.n_steps - t_in
    if n_samples < 3:
        raise ConfigError(
            f"n_steps={cfg.n_steps} leaves only {n_samples} samples; need at least 3")

    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)

    records = []
    world = None
    train_steps = None
    step_fields = {}
    for world, state in run_world(cfg):
        k = state.step
        t = cfg.time_at(k)
        mwd = state.wave.mwd_degrees()
        fields = {
            VarId.U10: state.wind_u,
            VarId.V10: state.wind_v,
            VarId.SWH: state.wave.swh,
            VarId.MWP: state.wave.mwp,
            VarId.MWD: mwd,
        }
        step_fields[k] = fields
        for var, fld in fields.items():
            rel = f"fields/step{k:06d}_{var.name.lower()}.wgf"
            gridio.write_wgf(fld, out / rel)
            records.append((t, var, rel))
    gridio.write_wgf(world.depth, out / "depth.wgf")
    gridio.write_manifest(records, out / "manifest.txt")

    # chronological split over sample init steps
    init_steps = list(range(t_in - 1, cfg.n_steps - 1))
    n_train = int(round(ratios[0] * n_samples))
    n_val = int(round(ratios[1] * n_samples))
    n_train = min(n_train, n_samples - 2)
    n_val = min(max(n_val, 1), n_samples - n_train - 1)
    splits = {
        "train": init_steps[:n_train],
        "val": init_steps[n_train:n_train + n_val],
        "test": init_steps[n_train + n_val:],
    }
    for name, steps in splits.items():
        lines = [gridio.iso_time(cfg.time_at(s)) for s in steps]
        (out / f"samples_{name}.txt").write_text("\n".join(lines) + "\n")

    # normalization statistics from the training span only
    train_steps = set()
    for s in splits["train"]:
        train_steps.update(range(s - t_in + 1, s + 2))
    fields_by_var = {v.name: [] for v in (VarId.SWH, VarId.MWP, VarId.U10, VarId.V10)}
    for k in sorted(train_steps):
        for var in (VarId.SWH, VarId.MWP, VarId.U10, VarId.V10):
            fields_by_var[var.name].append(step_fields[k][var].values)
    stats = NormStats.compute(fields_by_var, world.mask)
    (out / "norm_stats.json").write_text(stats.to_json())
    return splits
