import numpy as np
import pytest

from wavecaster import gridio, synthwave
from wavecaster.errors import ConfigError
from wavecaster.gridio import VarId
from wavecaster.synthwave import (EPOCH0, SynthConfig, gen_dataset, gen_world,
                                  run_world, step_wave, wind_at)


def _small_cfg(**kw):
    base = dict(lat_count=8, lon_count=16, n_steps=12, seed=3)
    base.update(kw)
    return SynthConfig(**base)


def _uniform_wind(cfg, u_val, v_val, step=0):
    t = cfg.time_at(step)
    u = cfg.grid_template(VarId.U10, valid_time=t).with_values(
        np.full((cfg.lat_count, cfg.lon_count), float(u_val)))
    v = cfg.grid_template(VarId.V10, valid_time=t).with_values(
        np.full((cfg.lat_count, cfg.lon_count), float(v_val)))
    return u, v


# ---------------------------------------------------------------------------
# configuration and timeline


def test_validate_rejects_bad_values():
    with pytest.raises(ConfigError):
        _small_cfg(lam=0.0).validate()
    with pytest.raises(ConfigError):
        _small_cfg(lam=1.5).validate()
    with pytest.raises(ConfigError):
        _small_cfg(alpha=-1.0).validate()
    with pytest.raises(ConfigError):
        _small_cfg(land_fraction=1.0).validate()
    with pytest.raises(ConfigError):
        _small_cfg(lat_count=2).validate()


def test_time_axis():
    cfg = _small_cfg(dt_hours=24.0)
    assert cfg.time_at(0) == EPOCH0
    assert cfg.time_at(3) - cfg.time_at(2) == 86400
    assert gridio.iso_time(cfg.time_at(0)) == "2020-01-01T00:00:00Z"


def test_grid_geometry_covers_globe_in_longitude():
    cfg = _small_cfg()
    tmpl = cfg.grid_template()
    assert tmpl.lons[0] == 0.0
    assert tmpl.lons[-1] + cfg.dlon == pytest.approx(360.0)
    assert tmpl.lats[0] == pytest.approx(-75.0 + cfg.dlat / 2)


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_same_world():
    cfg = _small_cfg()
    states_a = [(s.wave.swh.values.copy(), s.wind_u.values.copy())
                for _, s in run_world(cfg)]
    states_b = [(s.wave.swh.values.copy(), s.wind_u.values.copy())
                for _, s in run_world(_small_cfg())]
    for (swh_a, u_a), (swh_b, u_b) in zip(states_a, states_b):
        np.testing.assert_array_equal(swh_a, swh_b)
        np.testing.assert_array_equal(u_a, u_b)


def test_different_seed_different_world():
    swh_a = next(iter(run_world(_small_cfg(seed=1))))[1].wave.swh.values
    swh_b = next(iter(run_world(_small_cfg(seed=2))))[1].wave.swh.values
    assert not np.array_equal(np.nan_to_num(swh_a), np.nan_to_num(swh_b))


def test_gen_dataset_byte_identical(tmp_path):
    cfg = _small_cfg()
    gen_dataset(cfg, tmp_path / "a", t_in=2)
    gen_dataset(_small_cfg(), tmp_path / "b", t_in=2)
    for rel in ("manifest.txt", "norm_stats.json", "samples_train.txt",
                "depth.wgf", "fields/step000005_swh.wgf"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


# ---------------------------------------------------------------------------
# dynamics: relaxation law


def test_zero_wind_geometric_decay():
    cfg = _small_cfg(land_fraction=0.0, lam=0.3)
    world, state = gen_world(cfg)
    u, v = _uniform_wind(cfg, 0.0, 0.0)
    swh0 = np.full((cfg.lat_count, cfg.lon_count), 4.0)
    tmpl = cfg.grid_template(VarId.SWH)
    wave = gridio.WaveState.from_mwd_degrees(
        tmpl.with_values(swh0),
        tmpl.with_values(np.full_like(swh0, 6.0), var_id=VarId.MWP, units="s"),
        tmpl.with_values(np.zeros_like(swh0), var_id=VarId.MWD, units="deg"))
    for k in range(1, 5):
        wave = step_wave(world, wave, u, v, cfg.time_at(k))
        np.testing.assert_allclose(wave.swh.values, 4.0 * (1 - cfg.lam) ** k,
                                   atol=1e-12)


def test_equilibrium_fixed_point_under_uniform_wind():
    # |wind| = 10 m/s -> SWH fixed point alpha*100 = 2.5 m, MWP = 5.5 s
    cfg = _small_cfg(land_fraction=0.0, alpha=0.025, beta=0.55)
    world, _ = gen_world(cfg)
    u, v = _uniform_wind(cfg, 10.0, 0.0)
    swh_eq = np.full((cfg.lat_count, cfg.lon_count), 2.5)
    tmpl = cfg.grid_template(VarId.SWH)
    wave = gridio.WaveState.from_mwd_degrees(
        tmpl.with_values(swh_eq),
        tmpl.with_values(np.full_like(swh_eq, 5.5), var_id=VarId.MWP, units="s"),
        tmpl.with_values(np.full_like(swh_eq, 90.0), var_id=VarId.MWD, units="deg"))
    nxt = step_wave(world, wave, u, v, cfg.time_at(1))
    np.testing.assert_allclose(nxt.swh.values, 2.5, atol=1e-9)
    np.testing.assert_allclose(nxt.mwp.values, 5.5, atol=1e-12)


def test_mwp_floor():
    cfg = _small_cfg(land_fraction=0.0)
    world, state = gen_world(cfg)
    u, v = _uniform_wind(cfg, 0.1, 0.0)  # beta*0.1 = 0.055 << floor
    nxt = step_wave(world, state.wave, u, v, cfg.time_at(1))
    np.testing.assert_allclose(nxt.mwp.values, 0.5, atol=1e-12)


def test_mwd_equals_wind_direction():
    cfg = _small_cfg(land_fraction=0.0)
    world, state = gen_world(cfg)
    for (uv, expect) in (((0.0, 10.0), 0.0), ((10.0, 0.0), 90.0),
                         ((0.0, -10.0), 180.0), ((-10.0, 0.0), 270.0)):
        u, v = _uniform_wind(cfg, *uv)
        nxt = step_wave(world, state.wave, u, v, cfg.time_at(1))
        np.testing.assert_allclose(nxt.mwd_degrees().values, expect, atol=1e-9)


def test_advection_moves_bump_downwind():
    # nearly pure transport: tiny relaxation, strong uniform eastward wind
    cfg = _small_cfg(land_fraction=0.0, lam=1e-9)
    world, _ = gen_world(cfg)
    u, v = _uniform_wind(cfg, 15.0, 0.0)
    swh = np.zeros((cfg.lat_count, cfg.lon_count))
    swh[:, 3] = 2.0  # a longitude ridge
    tmpl = cfg.grid_template(VarId.SWH)
    wave = gridio.WaveState.from_mwd_degrees(
        tmpl.with_values(swh),
        tmpl.with_values(np.full_like(swh, 5.0), var_id=VarId.MWP, units="s"),
        tmpl.with_values(np.full_like(swh, 90.0), var_id=VarId.MWD, units="deg"))
    nxt = step_wave(world, wave, u, v, cfg.time_at(1))
    row = nxt.swh.values[cfg.lat_count // 2]
    # ridge mass leaks east (column 4), never west (column 2)
    assert row[4] > 0.01
    assert row[2] < 1e-6
    assert row[3] < 2.0


def test_wave_field_never_negative_and_land_is_nan():
    cfg = _small_cfg(land_fraction=0.3)
    for world, state in run_world(cfg):
        swh = state.wave.swh.values
        assert np.isnan(swh[world.mask.land]).all()
        assert (swh[world.mask.ocean] >= 0.0).all()


# ---------------------------------------------------------------------------
# wind construction


def test_storm_jet_peaks_near_center():
    cfg = _small_cfg(bg_wind_amp=0.0, n_storms=1)
    world, _ = gen_world(cfg)
    storm = world.storms[0]
    u, v = wind_at(world, 0)
    speed = np.hypot(u.values, v.values)
    cj, ci = storm.center_at(0, cfg.lat_count, cfg.lon_count)
    jm, im = np.unravel_index(np.argmax(speed), speed.shape)
    assert np.hypot(jm - cj, im - ci) <= 1.5
    assert abs(speed.max() - storm.peak) < 1e-6 * storm.peak + 1e-9


def test_storm_track_bounces_and_wraps():
    cfg = _small_cfg()
    storm = synthwave.StormTrack(lat_cell=6.0, lon_cell=15.0, vel_lat=0.5,
                                 vel_lon=1.0, radius=2.0, peak=20.0)
    h, w = cfg.lat_count, cfg.lon_count
    lats = [storm.center_at(k, h, w)[0] for k in range(40)]
    lons = [storm.center_at(k, h, w)[1] for k in range(40)]
    assert min(lats) >= 0.0 and max(lats) <= h - 1
    assert min(lons) >= 0.0 and max(lons) < w
    assert lons[2] == pytest.approx(1.0)  # wrapped past the seam


# ---------------------------------------------------------------------------
# dataset layout


def test_dataset_layout_and_chronological_splits(tmp_path):
    cfg = _small_cfg(n_steps=20)
    out = tmp_path / "ds"
    gen_dataset(cfg, out, ratios=(0.6, 0.2, 0.2), t_in=2)
    records = gridio.read_manifest(out / "manifest.txt")
    times = sorted({t for t, _, _ in records})
    assert len(times) == 20
    per_time = {t: {v for tt, v, _ in records if tt == t} for t in times}
    for t in times:
        assert per_time[t] == {VarId.SWH, VarId.MWP, VarId.MWD, VarId.U10, VarId.V10}

    splits = {}
    for name in ("train", "val", "test"):
        lines = (out / f"samples_{name}.txt").read_text().split()
        splits[name] = [gridio.parse_iso_time(s) for s in lines]
        assert splits[name] == sorted(splits[name])
    assert max(splits["train"]) < min(splits["val"]) < min(splits["test"])
    assert max(splits["val"]) < min(splits["test"])

    depth = gridio.read_wgf(out / "depth.wgf")
    assert depth.var_id == VarId.DEPTH
    stats = gridio.NormStats.from_json((out / "norm_stats.json").read_text())
    assert set(stats.stats) == {"SWH", "MWP", "U10", "V10"}
    for name in stats.stats:
        assert stats.std(name) > 0


def test_norm_stats_use_training_span_only(tmp_path):
    cfg = _small_cfg(n_steps=20)
    out = tmp_path / "ds"
    gen_dataset(cfg, out, ratios=(0.6, 0.2, 0.2), t_in=2)
    stats = gridio.NormStats.from_json((out / "norm_stats.json").read_text())
    # recompute over the training span (inits + their history and targets)
    train_times = [gridio.parse_iso_time(s)
                   for s in (out / "samples_train.txt").read_text().split()]
    steps = set()
    for t in train_times:
        k = (t - EPOCH0) // int(cfg.dt_seconds)
        steps.update(range(k - 1, k + 2))
    mask = gridio.derive_mask(gridio.read_wgf(out / "depth.wgf"))
    vals = []
    for k in sorted(steps):
        fld = gridio.read_wgf(out / f"fields/step{k:06d}_swh.wgf")
        vals.append(fld.values[mask.ocean])
    vals = np.concatenate(vals)
    assert stats.mean("SWH") == pytest.approx(vals.mean(), abs=1e-12)
    assert stats.std("SWH") == pytest.approx(vals.std(), abs=1e-12)


def test_gen_dataset_rejects_bad_ratios(tmp_path):
    with pytest.raises(ConfigError):
        gen_dataset(_small_cfg(), tmp_path / "x", ratios=(0.5, 0.2, 0.2))


def test_gen_dataset_needs_enough_steps(tmp_path):
    with pytest.raises(ConfigError):
        gen_dataset(_small_cfg(n_steps=4), tmp_path / "x", t_in=2)
