"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one [ACCEPTANCE] line on success. Criteria 4-7 train the
frozen experiment matrices (the heavy part); they reuse session-scoped
fixtures so each cell trains exactly once.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from ptclab import config as C
from ptclab import experiments as X
from ptclab import metrics as ME
from ptclab import tensor as T
from ptclab.cli import main
from ptclab.disruption import lift_radar
from ptclab.geometry import CameraIntrinsics, rasterize
from ptclab.model import DepthNet
from ptclab.seeding import rng_for
from ptclab.train import TrainConfig, smooth_l1, total_loss

ACCEPT_SEED = 0
JOBS = 2


def report(n, detail):
    print(f"\n[ACCEPTANCE] criterion {n} PASS: {detail}")


# ---------------------------------------------------------------------------
# heavy fixtures: each experiment cell trains exactly once per session


@pytest.fixture(scope="session")
def demo_results(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    cells = X.demo_cells(ACCEPT_SEED)
    return X.run_cells(cells, jobs=JOBS, out_root=str(out))


@pytest.fixture(scope="session")
def compensation_results():
    return X.run_cells(X.compensation_cells(ACCEPT_SEED), jobs=JOBS)


@pytest.fixture(scope="session")
def supervision_results():
    return X.run_cells(X.supervision_cells(ACCEPT_SEED), jobs=JOBS)


# ---------------------------------------------------------------------------
# criterion 1: gradient suite, >=100 seeded random shapes per op, < 30 s


def _fd_check(build, arrays, tol=1e-6, h=1e-5):
    with T.precision(T.Precision.F64):
        tensors = [T.parameter(a) for a in arrays]
        loss = build(tensors)
        loss.backward()
        for index, t in enumerate(tensors):
            analytic = t.grad if t.grad is not None else np.zeros_like(arrays[index])
            fd = np.zeros_like(arrays[index])
            flat_src = arrays[index].reshape(-1)
            flat_fd = fd.reshape(-1)
            for i in range(flat_src.size):
                orig = flat_src[i]
                vals = []
                for sign in (+h, -h):
                    flat_src[i] = orig + sign
                    probe = [T.parameter(a) for a in arrays]
                    vals.append(build(probe).item())
                flat_src[i] = orig
                flat_fd[i] = (vals[0] - vals[1]) / (2 * h)
            denom = max(np.abs(fd).max(initial=0.0),
                        np.abs(analytic).max(initial=0.0), 1e-12)
            assert np.abs(analytic - fd).max(initial=0.0) / denom < tol


def _random_readout(rng, shape):
    w = rng.normal(size=shape)
    return lambda out: T.masked_smooth_l1(T.mul(out, T.as_tensor(w)),
                                          np.zeros(shape), np.ones(shape))


def test_criterion_1_gradient_suite():
    start = time.time()
    trials = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)

        # conv2d, both strides
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(2, 4)) * 2
        w = int(rng.integers(2, 4)) * 2
        x = rng.normal(size=(1, cin, h, w))
        k = rng.normal(size=(cout, cin, 3, 3))
        stride = 1 if seed % 2 == 0 else 2
        ho = (h + 2 - 3) // stride + 1
        wo = (w + 2 - 3) // stride + 1
        read = _random_readout(rng, (1, cout, ho, wo))
        _fd_check(lambda ts: read(T.conv2d(ts[0], ts[1], stride=stride)), [x, k])

        # elementwise family (inputs nudged off the relu kink)
        v = rng.normal(size=(5,))
        v = np.where(np.abs(v) < 1e-2, v + 0.1, v)
        b = rng.normal(size=(5,))
        readv = _random_readout(rng, (5,))
        _fd_check(lambda ts: readv(T.relu(ts[0])), [v])
        _fd_check(lambda ts: readv(T.leaky_relu(ts[0])), [v])
        _fd_check(lambda ts: readv(T.sigmoid(ts[0])), [v])
        _fd_check(lambda ts: readv(T.add(ts[0], ts[1])), [v, b])
        _fd_check(lambda ts: readv(T.mul(ts[0], ts[1])), [v, b])
        a4 = rng.normal(size=(1, 1, 2, 2))
        b4 = rng.normal(size=(1, 2, 2, 2))
        readc = _random_readout(rng, (1, 3, 2, 2))
        _fd_check(lambda ts: readc(T.concat_channels(ts)), [a4, b4])

        # resample
        xs = rng.normal(size=(1, 1, 4, 4))
        read_dn = _random_readout(rng, (1, 1, 2, 2))
        read_up = _random_readout(rng, (1, 1, 8, 8))
        _fd_check(lambda ts: read_dn(T.down2(ts[0])), [xs])
        _fd_check(lambda ts: read_up(T.up2(ts[0])), [xs])

        # linear
        xl = rng.normal(size=(2, 3))
        wl = rng.normal(size=(2, 3))
        bl = rng.normal(size=(2,))
        readl = _random_readout(rng, (2, 2))
        _fd_check(lambda ts: readl(T.linear(ts[0], ts[1], ts[2])), [xl, wl, bl])

        # backward through a composite chain
        xc = rng.normal(size=(3,))
        xc = np.where(np.abs(xc) < 1e-2, xc + 0.1, xc)
        _fd_check(lambda ts: T.masked_smooth_l1(T.sigmoid(T.relu(T.mul(ts[0], 2.0))),
                                                np.zeros(3), np.ones(3)), [xc])
        trials += 1
    elapsed = time.time() - start
    assert trials >= 100
    assert elapsed < 30.0
    report(1, f"all ops vs central differences (rel err < 1e-6), "
              f"{trials} seeded trials per op family in {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criteria 2 and 3: loss unit values, sparse-supervision blindness


def _pred(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def test_criterion_2_loss_unit_values():
    gt = np.array([[10.0]], dtype=np.float32)
    assert smooth_l1(_pred([[10.5]]), gt).item() == pytest.approx(0.125, abs=1e-9)
    assert smooth_l1(_pred([[13.0]]), gt).item() == pytest.approx(2.5, abs=1e-6)
    lo = smooth_l1(_pred([[10.0 + 1 - 1e-6]]), gt).item()
    hi = smooth_l1(_pred([[10.0 + 1 + 1e-6]]), gt).item()
    assert abs(lo - 0.5) < 1e-5 and abs(hi - 0.5) < 1e-5

    from ptclab.model import ModelOutput
    rng = np.random.default_rng(0)
    gts = np.where(rng.random((1, 8, 8)) > 0.5, 20.0, 0.0).astype(np.float32)
    preds = [rng.uniform(0, 80, size=(1, 1, 8, 8)),
             rng.uniform(0, 80, size=(1, 1, 4, 4)),
             rng.uniform(0, 80, size=(1, 1, 2, 2))]

    def value(l1, l2, l3):
        out = ModelOutput(depth=[_pred(p) for p in preds], scales=(1.0, 0.5, 0.25))
        cfg = TrainConfig(lambda1=l1, lambda2=l2, lambda3=l3, lambda_mask=0.0)
        return total_loss(out, gts, None, cfg).item()

    with T.precision(T.Precision.F64):     # 1e-7 identity needs verification mode
        base = value(1.0, 0.5, 0.25)
        parts = (value(1.0, 0.0, 0.0), value(0.0, 0.5, 0.0), value(0.0, 0.0, 0.25))
        assert abs(base - sum(parts)) < 1e-7
        assert abs(value(2.0, 1.0, 0.5) - 2.0 * base) < 1e-7
    report(2, "smooth-L1 0.5->0.125, 3->2.5, branch continuity at |x|=1, "
              "pyramid-weight linearity within 1e-7")


def test_criterion_3_sparse_supervision_blindness():
    rng = np.random.default_rng(1)
    gt = np.zeros((12, 12), dtype=np.float32)
    support = rng.random((12, 12)) > 0.85
    gt[support] = rng.uniform(1, 79, int(support.sum())).astype(np.float32)
    pred = rng.uniform(0, 80, (12, 12)).astype(np.float32)
    base = smooth_l1(_pred(pred), gt).item()
    changed = 0
    for r in range(12):
        for c in range(12):
            if gt[r, c] > 0:
                continue
            mutated = pred.copy()
            mutated[r, c] = rng.uniform(0, 80)
            if smooth_l1(_pred(mutated), gt).item() != base:
                changed += 1
    assert changed == 0
    report(3, "perturbing every off-support pixel changed the loss by exactly 0")


# ---------------------------------------------------------------------------
# criteria 4 and 5: collapse reproduction and cures (frozen thresholds)


def test_criterion_4_collapse_and_cure_mono(demo_results):
    collapse = demo_results["mono_sparse_no_disruption"]
    cured = demo_results["mono_sparse_2d_disruption"]
    walls = demo_results["_wall_time_s"]
    assert collapse["artifact_ratio"] >= 2.0
    assert collapse["stripe_score"] >= 0.3
    assert cured["artifact_ratio"] <= 1.3
    assert cured["stripe_score"] <= 0.1
    for name in ("mono_sparse_no_disruption", "mono_sparse_2d_disruption"):
        assert walls[name] < 600.0
    report(4, f"mono collapse ratio {collapse['artifact_ratio']:.2f} "
              f"stripe {collapse['stripe_score']:.2f}; with 2D disruption "
              f"{cured['artifact_ratio']:.2f} / {cured['stripe_score']:.2f} "
              f"(cells {walls['mono_sparse_no_disruption']:.0f}s / "
              f"{walls['mono_sparse_2d_disruption']:.0f}s)")


def test_criterion_5_collapse_and_cure_radar(demo_results):
    collapse = demo_results["rc_2d_only"]
    lift = demo_results["rc_2d_lift"]
    rh = demo_results["rc_2d_random_height"]
    assert collapse["artifact_ratio"] >= 2.0
    assert lift["artifact_ratio"] <= 1.3
    assert rh["artifact_ratio"] <= 1.3
    report(5, f"radar-camera with 2D-only ratio {collapse['artifact_ratio']:.2f}; "
              f"lift {lift['artifact_ratio']:.2f}, "
              f"random-height {rh['artifact_ratio']:.2f}")


# ---------------------------------------------------------------------------
# criteria 6 and 7: compensation and supervision study directions


def test_criterion_6_compensation_direction(compensation_results):
    rows = X.table_rows(X.COMPENSATION_ROWS, compensation_results)
    means = {row[0]: row[4] for row in rows}
    base = means["disruption_only"]
    inj = means["injection"]
    both = means["injection_mask"]
    assert inj <= base * 0.98
    assert both <= inj * 0.98
    report(6, f"mean dense-GT MAE {base:.0f} -> {inj:.0f} -> {both:.0f} mm "
              f"(>=2% margin per step, 3 seeds)")


def test_criterion_7_supervision_direction(supervision_results):
    rows = X.table_rows(X.SUPERVISION_ROWS, supervision_results)
    means = {row[0]: row[4] for row in rows}
    sparse = means["sparse_disruption"]
    accumulated = means["accumulated_dense"]
    interpolated = means["interpolated_dense"]
    assert sparse <= accumulated * 0.95
    assert sparse <= interpolated * 0.95
    report(7, f"sparse+disruption {sparse:.0f} mm vs accumulated "
              f"{accumulated:.0f} mm and interpolated {interpolated:.0f} mm "
              f"(>=5% margins, 3 seeds)")


# ---------------------------------------------------------------------------
# criterion 8: plug-and-play mask decoder


def test_criterion_8_plug_and_play():
    cfg_on = C.preset("full_framework").network
    cfg_off = dataclasses.replace(cfg_on, use_mask_decoder=False)
    net_on = DepthNet(cfg_on, rng_for("pp", 1))
    net_off = DepthNet(cfg_off, rng_for("pp", 2))
    for name, p in net_off.params.items():
        p.data = net_on.params[name].data.copy()
    rng = np.random.default_rng(3)
    image = rng.uniform(0, 1, (2, 48, 64)).astype(np.float32)
    radar = np.where(rng.random((2, 48, 64)) > 0.97,
                     rng.uniform(1, 79, (2, 48, 64)), 0.0).astype(np.float32)
    points = [rng.uniform(-5, 5, (20, 3)) + [0, 0, 12] for _ in range(2)]
    out_on = net_on.forward(image, radar, points)
    out_off = net_off.forward(image, radar, points)
    for a, b in zip(out_on.depth, out_off.depth):
        assert a.data.tobytes() == b.data.tobytes()
    assert out_on.mask_logits is not None
    report(8, "depth outputs bitwise identical with the mask decoder "
              "attached vs detached")


# ---------------------------------------------------------------------------
# criterion 9: oracle equivalence


def test_criterion_9_oracle_equivalence():
    rng = np.random.default_rng(4)
    k = CameraIntrinsics(fx=24.0, fy=24.0, cx=15.5, cy=11.5, width=32, height=24)

    for trial in range(20):
        # mae/rmse vs scalar loop
        gt = np.where(rng.random((10, 12)) > 0.4,
                      rng.uniform(0.5, 90, (10, 12)), 0.0).astype(np.float32)
        pred = rng.uniform(0, 80, (10, 12)).astype(np.float32)
        cap = float(rng.choice([50.0, 70.0, 80.0]))
        mae, rmse, n = ME.mae_rmse(pred, gt, cap)
        errs = [abs(float(pred[r, c]) - float(gt[r, c]))
                for r in range(10) for c in range(12) if 0 < gt[r, c] <= cap]
        if errs:
            assert abs(mae - np.mean(errs) * 1000) / max(mae, 1e-9) < 1e-6
            assert abs(rmse - np.sqrt(np.mean(np.square(errs))) * 1000) / \
                max(rmse, 1e-9) < 1e-6
        else:
            assert n == 0 and np.isnan(mae)

        # rasterize z-buffer vs dict-based min
        pts = np.column_stack([rng.uniform(-4, 4, 60), rng.uniform(-3, 3, 60),
                               rng.uniform(0.5, 30, 60)])
        raster = rasterize(pts, k)
        best = {}
        for x, y, z in pts:
            col = int(np.floor(k.cx + k.fx * x / z + 0.5))
            row = int(np.floor(k.cy + k.fy * y / z + 0.5))
            if 0 <= row < k.height and 0 <= col < k.width:
                best[(row, col)] = min(best.get((row, col), np.inf), z)
        expected = np.zeros((k.height, k.width), dtype=np.float32)
        for (row, col), z in best.items():
            expected[row, col] = np.float32(z)
        assert np.array_equal(raster, expected)

        # lift_radar vs per-column min loop
        lifted = lift_radar(pts, k)
        col_best = {}
        for x, y, z in pts:
            col = int(np.floor(k.cx + k.fx * x / z + 0.5))
            if 0 <= col < k.width and z > 0:
                col_best[col] = min(col_best.get(col, np.inf), z)
        expected = np.zeros((k.height, k.width), dtype=np.float32)
        for col, z in col_best.items():
            expected[:, col] = np.float32(z)
        assert np.array_equal(lifted, expected)

        # support split vs scalar loop
        dense = rng.uniform(1, 79, (10, 12)).astype(np.float32)
        support = rng.random((10, 12)) > 0.7
        support[0, 0] = True
        on, off, ratio, _, _ = ME.support_split_mae(pred, dense, support, 80.0)
        ons = [abs(float(pred[r, c]) - float(dense[r, c])) * 1000
               for r in range(10) for c in range(12) if support[r, c]]
        offs = [abs(float(pred[r, c]) - float(dense[r, c])) * 1000
                for r in range(10) for c in range(12) if not support[r, c]]
        assert abs(on - np.mean(ons)) / max(on, 1e-9) < 1e-6
        assert abs(off - np.mean(offs)) / max(off, 1e-9) < 1e-6
        assert abs(ratio - (np.mean(offs) + 1) / (np.mean(ons) + 1)) / ratio < 1e-6
    report(9, "mae/rmse, z-buffer rasterize, lift, support-split all match "
              "brute-force recomputation (20 randomized instances)")


# ---------------------------------------------------------------------------
# criterion 10: byte-level determinism of commands


def test_criterion_10_determinism(tmp_path):
    data = json.loads(json.dumps(C.PRESETS["full_framework"]))
    data["train"]["steps"] = 3
    data["eval_cfg"] = {"benchmark_scenes": 3}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(data))

    pairs = []
    for tag in ("a", "b"):
        gen = tmp_path / f"gen_{tag}"
        run = tmp_path / f"run_{tag}"
        assert main(["gen-data", "--config", str(cfg), "--n", "2",
                     "--out", str(gen), "--seed", "11"]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(run),
                     "--seed", "11"]) == 0
        pairs.append((gen, run))
    (gen_a, run_a), (gen_b, run_b) = pairs
    for sub in ("bundle_0000", "bundle_0001"):
        for f in ("image.dcr1", "lidar.dcr1", "radar_raster.dcr1", "mask.dcr1",
                  "dense_gt.dcr1", "sidecar.json"):
            assert (gen_a / sub / f).read_bytes() == (gen_b / sub / f).read_bytes()
    for f in ("checkpoint.dcw1", "loss.csv", "metrics.csv"):
        assert (run_a / f).read_bytes() == (run_b / f).read_bytes()
    report(10, "gen-data and train rerun with the same seed produced "
               "byte-identical rasters, CSVs and checkpoints")
