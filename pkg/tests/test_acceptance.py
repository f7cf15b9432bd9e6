"""End-to-end acceptance suite.

Each test prints one `ACCEPTANCE <n>: PASS/SOFT ...` line (visible with
`pytest -s` or `-rA`). The heavy fixtures (full-scale dataset, trained
models, rollouts) are session-scoped and shared across criteria 4-6.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from wavecaster import autodiff as ad
from wavecaster import gridio
from wavecaster.autodiff import Parameter, Tensor
from wavecaster.cli import main as cli_main
from wavecaster.dataset import WaveDataset
from wavecaster.errors import FormatError
from wavecaster.gridio import VarId, read_wgf, write_wgf
from wavecaster.metrics import (HeightBins, acc, circ_diff, global_rmse,
                                mre_threshold, pair_with_truth, rmse_by_height,
                                rmse_map, skill_curves)
from wavecaster.rollout import (FileWindSource, TruthWindSource,
                                persistence_forecast, rollout)
from wavecaster.synthwave import SynthConfig, gen_dataset
from wavecaster.training import (ModelContext, TrainConfig, build_model,
                                 load_checkpoint, load_model_from_checkpoint,
                                 save_checkpoint, train)
from wavecaster.vit import patchify, unpatchify

from test_metrics import _cell_error, _instances

TOY_VIT = dict(patch=4, d_model=8, n_heads=2, n_enc_blocks=1, n_dec_blocks=1,
               t_in=2, t_force=1, conv_layers=1, mlp_ratio=2)

N_LEADS = 7


# ---------------------------------------------------------------------------
# heavy shared fixtures (criteria 4-6)


@pytest.fixture(scope="session")
def full_dataset(tmp_path_factory):
    """Default-scale world: 32x64, seed 7, >= 1500 training samples."""
    root = tmp_path_factory.mktemp("acceptance-ds")
    cfg = SynthConfig(lat_count=32, lon_count=64, n_steps=1880, seed=7)
    gen_dataset(cfg, root, ratios=(0.8, 0.1, 0.1), t_in=2)
    ds = WaveDataset.load(root)
    assert len(ds.sample_times("train")) >= 1500
    return ds


@pytest.fixture(scope="session")
def trained_vit(full_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance-vit")
    cfg = TrainConfig(epochs=15, batch_size=8, seed=7, model="vit")
    t0 = time.monotonic()
    best = train(full_dataset, cfg, out, model_cfg=dict(residual=True),
                 log=lambda m: None)
    elapsed = time.monotonic() - t0
    model, _, _, _, _ = load_model_from_checkpoint(best, "vit")
    return ModelContext.create(model, full_dataset), elapsed


@pytest.fixture(scope="session")
def trained_convlstm(full_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance-convlstm")
    cfg = TrainConfig(epochs=1, batch_size=8, seed=7, model="convlstm")
    best = train(full_dataset, cfg, out, log=lambda m: None)
    model, _, _, _, _ = load_model_from_checkpoint(best, "convlstm")
    return ModelContext.create(model, full_dataset)


@pytest.fixture(scope="session")
def test_inits(full_dataset):
    last = max(full_dataset.times)
    dt = full_dataset.dt
    return [t for t in full_dataset.sample_times("test")
            if t + N_LEADS * dt <= last]


@pytest.fixture(scope="session")
def degraded_wind_dir(full_dataset, tmp_path_factory):
    """Truth winds plus Gaussian noise, written as a standalone archive."""
    out = tmp_path_factory.mktemp("acceptance-wind")
    rng = np.random.default_rng(123)
    records = []
    for t in full_dataset.times:
        for var in (VarId.U10, VarId.V10):
            fld = full_dataset.fields[(t, var)]
            rel = f"w{t}_{var.name.lower()}.wgf"
            write_wgf(fld.with_values(
                fld.values + rng.normal(0.0, 1.5, fld.values.shape)), out / rel)
            records.append((t, var, rel))
    gridio.write_manifest(records, out / "manifest.txt")
    return out


@pytest.fixture(scope="session")
def vit_truth_rollouts(trained_vit, full_dataset, test_inits):
    ctx, _ = trained_vit
    src = TruthWindSource(full_dataset)
    return [rollout(ctx, t, src, N_LEADS) for t in test_inits]


@pytest.fixture(scope="session")
def vit_degraded_rollouts(trained_vit, degraded_wind_dir, test_inits):
    ctx, _ = trained_vit
    src = FileWindSource(degraded_wind_dir)
    return [rollout(ctx, t, src, N_LEADS) for t in test_inits]


def _lead_rmses(forecasts, dataset, leads):
    out = []
    for lead in leads:
        preds, truths = pair_with_truth(forecasts, dataset, lead)
        out.append(global_rmse(preds, truths, dataset.mask, "swh", True))
    return out


# ---------------------------------------------------------------------------
# criterion 1: gradient fidelity


def test_acceptance_1_gradient_fidelity():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    depth = rng.normal(size=(16, 16))
    depth[0, 0] = 1.0
    ocean = (depth < 0).astype(float)
    hist = rng.normal(size=(2, 4, 16, 16))
    wind = rng.normal(size=(1, 2, 16, 16))
    target = rng.normal(size=(4, 16, 16))

    results = {}
    for kind, cfg in (("vit", TOY_VIT), ("convlstm", dict(hidden=2, t_in=2))):
        model = build_model(kind, 16, 16, np.random.default_rng(1), cfg)
        if kind == "vit":
            from wavecaster.vit import terrain_features
            feats = terrain_features(depth, depth < 0, 4)
        else:
            feats = None

        def loss_fn():
            out = model.forward(hist, wind, feats, ocean)
            diff = ad.sub(out, target)
            return ad.mean_all(ad.mul(diff, diff))

        err = ad.grad_check(loss_fn, list(model.params.values()), h=1e-5,
                            samples_per_param=1, rng=np.random.default_rng(2))
        results[kind] = err
        assert err < 1e-4, f"{kind} full-model gradient error {err:.2e}"

    # per-op spot checks at the tighter tolerance
    op_errs = []
    x = Parameter(rng.normal(size=(3, 4)), "x")
    y = Parameter(rng.normal(size=(4, 3)), "y")
    k = Parameter(rng.normal(size=(2, 3, 3, 3)), "k")
    xs = Parameter(rng.normal(size=(3, 5, 6)), "xs")
    w = rng.normal(size=(3, 3))
    wc = rng.normal(size=(2, 5, 6))
    op_errs.append(ad.grad_check(lambda: ad.tsum(ad.matmul(x, y)), [x, y]))
    wl = rng.normal(size=(3, 4))
    op_errs.append(ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.layer_norm(x, Parameter(np.ones(4), "g4"),
                                             Parameter(np.zeros(4), "b4")),
                        wl)), [x]))
    op_errs.append(ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.softmax_lastdim(ad.gelu(ad.matmul(x, y))), w)),
        [x, y]))
    op_errs.append(ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.conv2d(xs, k), wc)), [xs, k]))
    worst_op = max(op_errs)
    assert worst_op < 1e-5, f"per-op gradient error {worst_op:.2e}"
    elapsed = time.monotonic() - t0
    assert elapsed < 300
    print(f"\nACCEPTANCE 1: PASS (vit={results['vit']:.2e}, "
          f"convlstm={results['convlstm']:.2e}, per-op={worst_op:.2e}, "
          f"{elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 2: attention / structure invariants


def test_acceptance_2_structure_invariants():
    rng = np.random.default_rng(3)
    # softmax row sums
    sm = ad.softmax_lastdim(Tensor(rng.normal(size=(64, 17)) * 10.0)).data
    sm_err = np.abs(sm.sum(axis=-1) - 1.0).max()
    assert sm_err <= 1e-12

    # spatial-attention permutation equivariance (terrain plays no role here)
    model = build_model("vit", 8, 8, np.random.default_rng(4), TOY_VIT)
    tokens = rng.normal(size=(2, 4, 8))
    perm = rng.permutation(4)
    base = model.spatial_attention(Tensor(tokens), "enc.block0").data
    permed = model.spatial_attention(Tensor(tokens[:, perm]), "enc.block0").data
    perm_err = np.abs(permed - base[:, perm]).max()
    assert perm_err < 1e-9

    # patchify/unpatchify bit-exact
    x = rng.normal(size=(4, 16, 24))
    back = unpatchify(patchify(x, 4), 4, 4, 16, 24).data
    assert back.tobytes() == x.tobytes()

    # conv longitude-shift equivariance
    xs = rng.normal(size=(2, 6, 10))
    k = rng.normal(size=(3, 2, 3, 3))
    direct = ad.conv2d(Tensor(np.roll(xs, 3, axis=2)), Tensor(k)).data
    rolled = np.roll(ad.conv2d(Tensor(xs), Tensor(k)).data, 3, axis=2)
    shift_err = np.abs(direct - rolled).max()
    assert shift_err < 1e-12
    print(f"\nACCEPTANCE 2: PASS (softmax={sm_err:.1e}, perm={perm_err:.1e}, "
          f"patchify bit-exact, shift={shift_err:.1e})")


# ---------------------------------------------------------------------------
# criterion 3: metric oracle equivalence


def test_acceptance_3_metric_oracles():
    assert float(circ_diff(350.0, 10.0)) == 20.0
    worst = 0.0
    H, W = 6, 8
    bins = HeightBins()
    for seed in range(10):
        preds, truths, mask = _instances(seed)
        # rmse_map
        for variable in ("swh", "mwp", "mwd"):
            got = rmse_map(preds, truths, mask, variable).values
            for j in range(H):
                for i in range(W):
                    errs = [_cell_error(p, t, variable, j, i)
                            for p, t in zip(preds, truths)]
                    errs = [e for e in errs if e is not None]
                    if mask.ocean[j, i] and errs:
                        expect = np.sqrt(sum(e * e for e in errs) / len(errs))
                        worst = max(worst, abs(got[j, i] - expect))
        # mre
        got_scalar, _ = mre_threshold(preds, truths, mask, "swh", 1.0)
        tot, cnt = 0.0, 0
        for p, t in zip(preds, truths):
            for j in range(H):
                for i in range(W):
                    pv, tv = p.swh.values[j, i], t.swh.values[j, i]
                    if (mask.ocean[j, i] and np.isfinite(pv) and np.isfinite(tv)
                            and tv >= 1.0 and tv > 0):
                        tot += abs(pv - tv) / tv
                        cnt += 1
        worst = max(worst, abs(got_scalar - tot / cnt))
        # rmse_by_height
        got_tbl = rmse_by_height(preds, truths, mask, bins)
        sums, counts = {}, {}
        for p, t in zip(preds, truths):
            for j in range(H):
                for i in range(W):
                    if not mask.ocean[j, i]:
                        continue
                    swh_t = t.swh.values[j, i]
                    center = next((c for c in bins.centers
                                   if c - 0.5 <= swh_t < c + 0.5), None)
                    if center is None or np.isnan(swh_t):
                        continue
                    for variable in ("swh", "mwp", "mwd"):
                        e = _cell_error(p, t, variable, j, i)
                        if e is None:
                            continue
                        key = (variable, center)
                        sums[key] = sums.get(key, 0.0) + e * e
                        counts[key] = counts.get(key, 0) + 1
        assert set(got_tbl) == set(sums)
        for key in sums:
            worst = max(worst, abs(got_tbl[key][0]
                                   - np.sqrt(sums[key] / counts[key])))
        # acc (weighted centered correlation against an explicit loop)
        rng = np.random.default_rng(500 + seed)
        pred_f = preds[0].swh.with_values(rng.normal(2, 1, (H, W)))
        truth_f = preds[0].swh.with_values(rng.normal(2, 1, (H, W)))
        clim_f = preds[0].swh.with_values(rng.normal(2, 0.5, (H, W)))
        got_acc = acc(pred_f, truth_f, clim_f, mask, True)
        w = np.cos(np.deg2rad(pred_f.lats))[:, None]
        pa, ta, ws = [], [], []
        for j in range(H):
            for i in range(W):
                if mask.ocean[j, i]:
                    pa.append(pred_f.values[j, i] - clim_f.values[j, i])
                    ta.append(truth_f.values[j, i] - clim_f.values[j, i])
                    ws.append(w[j, 0])
        pa, ta, ws = np.array(pa), np.array(ta), np.array(ws)
        pa -= (ws * pa).sum() / ws.sum()
        ta -= (ws * ta).sum() / ws.sum()
        expect_acc = (ws * pa * ta).sum() / np.sqrt(
            (ws * pa * pa).sum() * (ws * ta * ta).sum())
        worst = max(worst, abs(got_acc - expect_acc))
    assert worst < 1e-10
    print(f"\nACCEPTANCE 3: PASS (worst oracle deviation {worst:.1e}, "
          f"circ_diff(350,10)=20 exact)")


# ---------------------------------------------------------------------------
# criterion 4: learning signal


def test_acceptance_4_learning_signal(full_dataset, trained_vit,
                                      vit_truth_rollouts, test_inits):
    _, train_seconds = trained_vit
    assert train_seconds < 3600, f"training took {train_seconds:.0f}s"
    persist = [persistence_forecast(full_dataset, t, 1) for t in test_inits]
    pv, tv = pair_with_truth(vit_truth_rollouts, full_dataset, 1)
    pp, tp = pair_with_truth(persist, full_dataset, 1)
    vit_rmse = global_rmse(pv, tv, full_dataset.mask, "swh", True)
    per_rmse = global_rmse(pp, tp, full_dataset.mask, "swh", True)
    ratio = vit_rmse / per_rmse
    assert vit_rmse < per_rmse
    assert ratio <= 0.75, (f"lead-1 SWH RMSE {vit_rmse:.4f} vs persistence "
                           f"{per_rmse:.4f}: only {100 * (1 - ratio):.1f}% better")
    print(f"\nACCEPTANCE 4: PASS (vit={vit_rmse:.4f} m, "
          f"persistence={per_rmse:.4f} m, {100 * (1 - ratio):.1f}% better, "
          f"train {train_seconds / 60:.1f} min)")


# ---------------------------------------------------------------------------
# criterion 5: wind-source ordering + baseline comparison


def test_acceptance_5_wind_source_ordering(full_dataset, vit_truth_rollouts,
                                           vit_degraded_rollouts,
                                           trained_convlstm, test_inits):
    leads = list(range(1, N_LEADS + 1))
    truth_curve = _lead_rmses(vit_truth_rollouts, full_dataset, leads)
    degraded_curve = _lead_rmses(vit_degraded_rollouts, full_dataset, leads)
    for lead, (a, b) in enumerate(zip(truth_curve, degraded_curve), start=1):
        assert a <= b, (f"lead {lead}: truth-wind RMSE {a:.4f} exceeds "
                        f"degraded-wind RMSE {b:.4f}")

    # (b) both models flow through skill_curves; ViT vs ConvLSTM is soft
    src = TruthWindSource(full_dataset)
    lstm_rollouts = [rollout(trained_convlstm, t, src, 3) for t in test_inits]
    skill = skill_curves({"vit": vit_truth_rollouts, "convlstm": lstm_rollouts},
                         full_dataset, [1, 2, 3], True)
    soft_ok = all(skill[("vit", "swh", lead)] <= skill[("convlstm", "swh", lead)]
                  for lead in (1, 2, 3))
    soft = "ViT<=ConvLSTM at leads 1-3" if soft_ok else \
        "SOFT-CHECK NOT MET: ConvLSTM beats ViT at some lead"
    pairs = ", ".join(
        f"lead{lead} vit={skill[('vit', 'swh', lead)]:.3f}/"
        f"lstm={skill[('convlstm', 'swh', lead)]:.3f}" for lead in (1, 2, 3))
    print(f"\nACCEPTANCE 5: PASS (truth<=degraded at all {N_LEADS} leads; "
          f"{soft}; {pairs})")


# ---------------------------------------------------------------------------
# criterion 6: rollout degradation


def test_acceptance_6_rollout_degradation(full_dataset, vit_truth_rollouts):
    leads = list(range(1, N_LEADS + 1))
    curve = _lead_rmses(vit_truth_rollouts, full_dataset, leads)
    rho = spearmanr(leads, curve).statistic
    assert rho >= 0.9, f"Spearman(lead, RMSE) = {rho:.3f}"
    print(f"\nACCEPTANCE 6: PASS (Spearman={rho:.3f}, curve="
          + " ".join(f"{r:.3f}" for r in curve) + ")")


# ---------------------------------------------------------------------------
# criterion 7: reproducibility


def test_acceptance_7_reproducibility(tmp_path):
    from wavecaster.evaluation import run_evaluation
    ds_dir = tmp_path / "ds"
    gen_dataset(SynthConfig(lat_count=8, lon_count=16, n_steps=24, seed=11),
                ds_dir, ratios=(0.6, 0.2, 0.2), t_in=2)
    dataset = WaveDataset.load(ds_dir)
    cfg = lambda e: TrainConfig(epochs=e, batch_size=4, seed=13, model="vit")
    outs = {}
    for name in ("a", "b"):
        out = tmp_path / name
        best = train(dataset, cfg(2), out, model_cfg=TOY_VIT, log=lambda m: None)
        model, _, _, _, _ = load_model_from_checkpoint(best, "vit")
        ctx = ModelContext.create(model, dataset)
        src = TruthWindSource(dataset)
        inits = dataset.sample_times("val")[:2]
        fcs = [rollout(ctx, t, src, 2) for t in inits]
        run_evaluation(dataset, {"model": fcs}, out / "eval")
        outs[name] = out
    a, b = outs["a"], outs["b"]
    assert (a / "best.wckp").read_bytes() == (b / "best.wckp").read_bytes()
    assert (a / "loss_log.csv").read_bytes() == (b / "loss_log.csv").read_bytes()
    for csv_path in sorted((a / "eval").glob("*.csv")):
        assert csv_path.read_bytes() == (b / "eval" / csv_path.name).read_bytes()

    # resume bit-exactness
    split = tmp_path / "split"
    train(dataset, cfg(1), split, model_cfg=TOY_VIT, log=lambda m: None)
    train(dataset, cfg(2), split, model_cfg=TOY_VIT,
          resume=split / "last.wckp", log=lambda m: None)
    assert (a / "last.wckp").read_bytes() == (split / "last.wckp").read_bytes()
    print("\nACCEPTANCE 7: PASS (train+evaluate byte-identical; resume bit-exact)")


# ---------------------------------------------------------------------------
# criterion 8: format robustness


def test_acceptance_8_format_robustness(tmp_path):
    rng = np.random.default_rng(14)
    # WGF roundtrip
    fld = gridio.GridField(var_id=VarId.SWH, values=rng.normal(size=(5, 7)),
                           lat0=-60.0, dlat=10.0, lon0=0.0, dlon=30.0,
                           units="m", valid_time=777)
    wgf = tmp_path / "f.wgf"
    write_wgf(fld, wgf)
    back = read_wgf(wgf)
    assert back.values.tobytes() == fld.values.tobytes()
    write_wgf(back, tmp_path / "f2.wgf")
    assert wgf.read_bytes() == (tmp_path / "f2.wgf").read_bytes()

    # checkpoint roundtrip
    ck = tmp_path / "c.wckp"
    tensors = {"param.w": rng.normal(size=(3, 3))}
    save_checkpoint(ck, tensors, {"meta": b"{}"})
    t2, b2 = load_checkpoint(ck)
    save_checkpoint(tmp_path / "c2.wckp", t2, b2)
    assert ck.read_bytes() == (tmp_path / "c2.wckp").read_bytes()

    # corrupted headers raise FormatError...
    bad_wgf = tmp_path / "bad.wgf"
    raw = bytearray(wgf.read_bytes())
    raw[:4] = b"JUNK"
    bad_wgf.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_wgf(bad_wgf)
    bad_ck = tmp_path / "bad.wckp"
    raw = bytearray(ck.read_bytes())
    raw[:4] = b"JUNK"
    bad_ck.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(bad_ck)

    # ...and the CLI maps them to exit code 3
    ds_dir = tmp_path / "ds"
    gen_dataset(SynthConfig(lat_count=8, lon_count=16, n_steps=12, seed=15),
                ds_dir, ratios=(0.6, 0.2, 0.2), t_in=2)
    target = next((ds_dir / "fields").glob("*_swh.wgf"))
    raw = bytearray(target.read_bytes())
    raw[:4] = b"JUNK"
    target.write_bytes(bytes(raw))
    code = cli_main(["train", "--data", str(ds_dir), "--out",
                     str(tmp_path / "out")])
    assert code == 3
    print("\nACCEPTANCE 8: PASS (roundtrips bit-exact; corrupted headers -> "
          "FormatError, exit code 3)")
