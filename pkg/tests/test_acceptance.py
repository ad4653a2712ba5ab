"""Top-level acceptance suite: one test per release criterion.

Each test prints a PASS line with its measured values (run pytest -s to
see them inline).  The model-comparison and placement-sweep criteria
retrain networks at desk scale and dominate the suite's runtime.
"""

import json
import subprocess
import sys
import time
from importlib import resources

import numpy as np
import pytest

from flowcast import estimators as es
from flowcast import evaluation as ev
from flowcast import lse
from flowcast import measurement as ms
from flowcast import netmodel as nm
from flowcast import nn, placement as pl, powerflow as pf, scenario as sc
from flowcast.config import load_config, subseed

DESK_SIZES = {"train": 5000, "val": 500, "test": 1500}
SEEDS = (1, 2, 3)


def _report(name, detail):
    print(f"\nPASS {name}: {detail}")


# --------------------------------------------------------------------------
# criterion 1: power-flow solutions match the committed independent solver

def test_criterion_1_powerflow_oracle():
    start = time.time()
    worst = 0.0
    for name in ("toy3", "wscc9", "ieee118"):
        model = nm.load_case(name)
        state = pf.solve_powerflow(model)
        fix = resources.files("flowcast.data").joinpath(f"fixtures/pf_{name}.csv")
        rows = [line.split(",") for line in fix.read_text().splitlines()[1:]]
        vm = np.array([float(r[1]) for r in rows])
        va = np.array([float(r[2]) for r in rows])
        err = max(np.max(np.abs(state.v_mag - vm)), np.max(np.abs(state.v_ang - va)))
        assert err < 1e-6, f"{name}: {err:.2e} pu vs independent solver"
        worst = max(worst, err)
    elapsed = time.time() - start
    assert elapsed < 5.0, f"runtime {elapsed:.1f}s"
    _report("criterion-1 power-flow oracle",
            f"max deviation {worst:.2e} pu across 3 fixtures, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# criterion 2: conservation identity on generated samples

def test_criterion_2_conservation(model118):
    scen = sc.generate_scenarios(model118, 1050, seed=77)
    cache = sc.solve_scenarios(model118, scen)
    assert cache.voltages.shape[0] >= 1000
    y = cache.y[:1000]
    conv = cache.conv
    gap = np.max(np.abs(y[:, conv.n_flows:] - y[:, :conv.n_flows] @ conv.a.T))
    assert gap < 1e-6, f"conservation gap {gap:.2e} MW"
    p = nm.pseudo_inverse(conv.b)
    pinv_err = np.max(np.abs(p @ conv.b - np.eye(conv.n_flows)))
    assert pinv_err < 1e-10
    _report("criterion-2 conservation",
            f"max |inj - A@flow| = {gap:.2e} MW over 1000 samples, "
            f"|P@B - I| = {pinv_err:.2e}")


# --------------------------------------------------------------------------
# criterion 3: linear state estimation noise table

def test_criterion_3_lse_table(model118):
    start = time.time()
    placement = pl.greedy_dominating_set(model118)
    scen = sc.generate_scenarios(model118, 300, seed=11)
    cache = sc.solve_scenarios(model118, scen)
    table = lse.lse_noise_study(model118, placement, cache.voltages, noise_seed=4)
    elapsed = time.time() - start

    assert table["flow"]["none"] < 1e-6
    g = table["flow"]["gaussian"]
    assert 0.4 <= g <= 4.0, f"gaussian flow RMSE {g:.3f} MW out of band"
    ratio_f = table["flow"]["gmm"] / table["flow"]["gaussian"]
    ratio_i = table["injection"]["gmm"] / table["injection"]["gaussian"]
    assert ratio_f >= 1.5, f"flow degradation ratio {ratio_f:.2f}"
    assert ratio_i >= 1.5, f"injection degradation ratio {ratio_i:.2f}"
    assert elapsed < 120.0, f"runtime {elapsed:.1f}s"
    _report("criterion-3 LSE noise table",
            f"flow: none {table['flow']['none']:.1e}, gaussian {g:.3f} MW, "
            f"mixture ratio {ratio_f:.2f}x (inj {ratio_i:.2f}x), {elapsed:.0f}s")


# --------------------------------------------------------------------------
# criterion 4: mixture-noise calibration moments

def test_criterion_4_gmm_calibration():
    start = time.time()
    noise = ms.default_gmm_model(seed=3)
    z = np.ones(1_000_000, dtype=complex)
    noisy = ms.apply_gmm_noise(z, noise)
    mean_mag = 100.0 * float(np.mean(np.abs(noisy) - 1.0))
    rms_ang = float(np.rad2deg(np.sqrt(np.mean(np.angle(noisy) ** 2))))
    rms_tve = 100.0 * float(np.sqrt(np.mean(ms.compute_tve(z, noisy) ** 2)))
    elapsed = time.time() - start
    assert abs(mean_mag - 0.20) < 0.02, f"mean magnitude error {mean_mag:.4f}%"
    assert abs(rms_ang - 0.2905) < 0.01, f"rms angle error {rms_ang:.4f} deg"
    assert 0.70 <= rms_tve <= 0.85, f"rms TVE {rms_tve:.4f}%"
    assert elapsed < 30.0, f"runtime {elapsed:.1f}s"
    _report("criterion-4 mixture calibration",
            f"mean mag {mean_mag:+.3f}%, rms angle {rms_ang:.4f} deg, "
            f"rms TVE {rms_tve:.3f}% over 1e6 draws, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# criterion 5: analytic gradients match central finite differences

def test_criterion_5_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(1)
    worst = 0.0
    for dims in ((10, 8, 5), (7, 13, 6, 4), (3, 9, 2)):
        net = nn.init_network(dims, seed=int(rng.integers(1000)))
        x = rng.standard_normal((5, dims[0]))
        g_out = rng.standard_normal((5, dims[-1]))
        gw, gb = nn.backward(net, x, g_out)

        def scalar():
            return float(np.sum(nn.forward(net, x) * g_out))

        h = 1e-5
        for li in range(net.n_layers):
            for arr, grad in ((net.weights[li], gw[li]), (net.biases[li], gb[li])):
                flat = arr.reshape(-1)
                gflat = grad.reshape(-1)
                for k in range(0, flat.size, max(1, flat.size // 12)):
                    old = flat[k]
                    flat[k] = old + h
                    fp = scalar()
                    flat[k] = old - h
                    fm = scalar()
                    flat[k] = old
                    fd = (fp - fm) / (2 * h)
                    worst = max(worst, abs(gflat[k] - fd) / max(abs(gflat[k]),
                                                                abs(fd), 1e-8))
    assert worst < 1e-5, f"network gradient relative error {worst:.2e}"

    # projected loss on the 7x4 toy conversion matrix
    a = np.zeros((3, 4))
    a[0, 0] = a[1, 1] = a[1, 2] = a[2, 3] = 1.0
    conv = nm.ConversionMatrix(a=a, b=np.vstack([np.eye(4), a]),
                               flow_index=tuple((i, "from") for i in range(4)),
                               injection_index=(1, 2, 3))
    y = rng.standard_normal((6, 7))
    f = rng.standard_normal((6, 4))
    _, grad = es.pic_loss(y, f, conv)
    worst_pic = 0.0
    h = 1e-6
    for idx in np.ndindex(f.shape):
        fp = f.copy()
        fp[idx] += h
        fm = f.copy()
        fm[idx] -= h
        lp, _ = es.pic_loss(y, fp, conv)
        lm, _ = es.pic_loss(y, fm, conv)
        worst_pic = max(worst_pic, abs(grad[idx] - (lp - lm) / (2 * h)))
    assert worst_pic < 1e-6, f"projected-loss gradient error {worst_pic:.2e}"
    elapsed = time.time() - start
    assert elapsed < 30.0, f"runtime {elapsed:.1f}s"
    _report("criterion-5 gradients",
            f"network rel err {worst:.1e}, projected-loss abs err {worst_pic:.1e}, "
            f"{elapsed:.1f}s")


# --------------------------------------------------------------------------
# criteria 6-8: desk-scale model comparison (shared fixture)

@pytest.fixture(scope="module")
def desk_runs(model118):
    placement = ms.default_hv_placement(model118)
    cfg = load_config(None)
    params = cfg.scenario_params()
    runs = []
    start = time.time()
    for master in SEEDS:
        scen = sc.generate_scenarios(model118, sc.oversampled_count(DESK_SIZES),
                                     params, seed=subseed(master, "scenario"))
        ds = sc.build_dataset(model118, scen, placement, DESK_SIZES,
                              seed=subseed(master, "split"))
        noise = ms.default_gmm_model(seed=subseed(master, "noise"))
        ests = {}
        reports = {}
        for kind in ("lr", "direct", "indirect", "pic"):
            tc = nn.TrainConfig(epochs=200, seed=subseed(master, "train", kind))
            ests[kind] = es.train_kind(kind, ds, noise, tc, n_bin=5)
            reports[kind] = ev.run_trials(ests[kind], ds, trials=100,
                                          subset_size=1000, noise=noise,
                                          seed=subseed(master, "trials", kind))
        runs.append({"ds": ds, "noise": noise, "ests": ests, "reports": reports})
    runs.append(time.time() - start)
    return runs


def test_criterion_6_structural_conservation(desk_runs):
    run = desk_runs[0]
    ds, noise = run["ds"], run["noise"]
    rows = ds.rows("test")
    z = ms.noisy_features(ds.z[rows], ds.channels, noise.reseeded(99),
                          ds.row_ids[rows])
    conv = run["ests"]["pic"].conv
    pred = es.predict(run["ests"]["pic"], z)
    gap = np.max(np.abs(pred[:, conv.n_flows:] - pred[:, :conv.n_flows] @ conv.a.T))
    assert gap <= 1e-9, f"constrained model conservation gap {gap:.2e} MW"
    pred_d = es.predict(run["ests"]["direct"], z)
    gap_d = np.max(np.abs(pred_d[:, conv.n_flows:]
                          - pred_d[:, :conv.n_flows] @ conv.a.T))
    assert gap_d > 1e-3, f"direct model gap unexpectedly small: {gap_d:.2e}"
    _report("criterion-6 structural conservation",
            f"constrained gap {gap:.1e} MW vs direct gap {gap_d:.2f} MW "
            f"on {len(rows)} samples")


def test_criterion_7_model_ordering(desk_runs):
    elapsed = desk_runs[-1]
    pic_beats_direct = pic_beats_indirect = indirect_worst_dnn = 0
    means = []
    for run in desk_runs[:-1]:
        rep = run["reports"]
        pic_beats_direct += rep["pic"].rmse_mean < rep["direct"].rmse_mean
        pic_beats_indirect += rep["pic"].rmse_mean < rep["indirect"].rmse_mean
        indirect_worst_dnn += (rep["indirect"].rmse_mean
                               > max(rep["pic"].rmse_mean, rep["direct"].rmse_mean))
        means.append({k: r.rmse_mean for k, r in rep.items()})
    for seed_means in means:
        for kind, value in seed_means.items():
            assert 1.0 <= value <= 25.0, f"{kind} mean RMSE {value:.2f} MW out of band"
    assert pic_beats_direct >= 2, f"constrained beat direct in {pic_beats_direct}/3"
    assert pic_beats_indirect >= 2, \
        f"constrained beat state-first in {pic_beats_indirect}/3"
    assert indirect_worst_dnn >= 2, f"state-first worst in {indirect_worst_dnn}/3"
    assert elapsed < 1800.0, f"runtime {elapsed:.0f}s"
    summary = "; ".join(
        "seed{}: ".format(s) + " ".join(f"{k}={v:.2f}" for k, v in m.items())
        for s, m in zip(SEEDS, means))
    _report("criterion-7 model ordering", f"{summary}; {elapsed:.0f}s")


def test_criterion_8_consistency_advantage(desk_runs):
    wins = sum(run["reports"]["pic"].rmse_std <= run["reports"]["direct"].rmse_std
               for run in desk_runs[:-1])
    stds = ["seed{}: pic {:.4f} vs direct {:.4f}".format(
        s, run["reports"]["pic"].rmse_std, run["reports"]["direct"].rmse_std)
        for s, run in zip(SEEDS, desk_runs[:-1])]
    assert wins >= 2, f"constrained std lower in only {wins}/3 seeds"
    _report("criterion-8 consistency", "; ".join(stds))


# --------------------------------------------------------------------------
# criterion 9: placement sweep trend

def test_criterion_9_sweep_trend(model118):
    start = time.time()
    sizes = {"train": 2000, "val": 400, "test": 400}
    scen = sc.generate_scenarios(model118, sc.oversampled_count(sizes),
                                 load_config(None).scenario_params(),
                                 seed=subseed(5, "scenario", "sweep"))
    cache = sc.solve_scenarios(model118, scen)
    noise = ms.default_gmm_model(seed=subseed(5, "noise", "sweep"))
    hv = ms.default_hv_placement(model118)
    trends = {}
    for kind in ("lr", "pic"):
        reduced = nn.TrainConfig(epochs=50, seed=subseed(5, "sweep", kind))
        full = nn.TrainConfig(epochs=200, seed=subseed(5, "sweep", kind))
        res = pl.incremental_search(model118, cache, kind, hv, steps=4,
                                    config=reduced, noise=noise, seed=5,
                                    sizes=sizes, candidate_pool_size=6, n_bin=5,
                                    full_budget_config=full)
        errs = [err for _, err in res.sequence]
        ds0 = sc.build_dataset(model118, None, hv, sizes, seed=5, cache=cache)
        base_cfg = full
        est0 = es.train_kind(kind, ds0, noise, base_cfg, n_bin=5)
        base = es.validation_rmse(est0, ds0, noise)
        seq = [base] + errs
        for prev, nxt in zip(seq, seq[1:]):
            assert nxt <= prev + 0.2, f"{kind}: step rose {prev:.3f} -> {nxt:.3f} MW"
        trends[kind] = seq
    elapsed = time.time() - start
    assert elapsed < 2700.0, f"runtime {elapsed:.0f}s"
    detail = "; ".join(f"{k}: " + " -> ".join(f"{v:.2f}" for v in seq)
                       for k, seq in trends.items())
    _report("criterion-9 sweep trend", f"{detail} (MW); {elapsed:.0f}s")


# --------------------------------------------------------------------------
# criterion 10: projected-target identity and 1-bin equivalence

def test_criterion_10_projected_targets(model118, model2):
    scen = sc.generate_scenarios(model118, 220, seed=19)
    placement = ms.default_hv_placement(model118)
    ds = sc.build_dataset(model118, scen, placement,
                          {"train": 150, "val": 30, "test": 30}, seed=7)
    conv = ds.grid[2]
    p = nm.pseudo_inverse(conv.b)
    ident = np.max(np.abs(ds.y @ p.T - ds.y[:, :conv.n_flows]))
    assert ident < 1e-6, f"projected targets deviate {ident:.2e} MW"

    # 1-bin constrained training == flow-only MSE on projected targets
    scen2 = sc.generate_scenarios(model2, 260, seed=8)
    ds2 = sc.build_dataset(model2, scen2, ms.default_hv_placement(model2),
                           {"train": 200, "val": 30, "test": 20}, seed=4)
    noise = ms.default_gmm_model(seed=17)
    cfg = nn.TrainConfig(epochs=60, seed=33)
    pic = es.train_pic_dnn(ds2, noise, cfg, n_bin=1)
    conv2 = ds2.grid[2]
    pinv2 = nm.pseudo_inverse(conv2.b)
    rows_tr, rows_va = ds2.rows("train"), ds2.rows("val")
    x_tr = es.training_features(ds2, noise, rows_tr)
    s_in = nn.Scaler.fit(x_tr)
    proj = ds2.y[rows_tr] @ pinv2.T
    s_out = nn.Scaler.fit(proj)
    net = nn.init_network(nn.layer_dims_for(ds2.n_features, conv2.n_flows, cfg),
                          seed=es._bin_seed(cfg.seed, 0))
    best, _ = nn.train(net, s_in.transform(x_tr), s_out.transform(proj),
                       s_in.transform(es.training_features(ds2, noise, rows_va)),
                       s_out.transform(ds2.y[rows_va] @ pinv2.T), cfg,
                       feature_stream=es._noise_stream(ds2, noise, rows_tr, s_in))
    dev = max(float(np.max(np.abs(a - b))) for a, b in
              zip(pic.payload["nets"][0].weights + pic.payload["nets"][0].biases,
                  best.weights + best.biases))
    assert dev < 1e-10, f"1-bin equivalence deviates by {dev:.2e}"
    _report("criterion-10 projected targets",
            f"P@y vs flows {ident:.2e} MW; 1-bin equivalence {dev:.2e}")


# --------------------------------------------------------------------------
# criterion 11: byte-identical reruns

def test_criterion_11_determinism(tmp_path):
    cfg_text = (
        '[case]\npath = "wscc9"\n'
        '[placement]\nkind = "list"\nbuses = [1, 2, 3]\n'
        "[dataset]\ntrain = 100\nval = 20\ntest = 30\n"
        "[train]\nepochs = 3\n"
        "[eval]\ntrials = 3\nsubset = 15\n"
        "[sweep]\nsteps = 1\ncandidate_pool = 2\nepochs = 2\n"
        'train = 80\nval = 15\ntest = 15\nmodels = ["lr"]\n'
        f"[run]\nseed = 9\nout = '{tmp_path}/out'\nmodels = ['lr', 'pic']\n")
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(cfg_text)

    env = {"PATH": "/usr/bin:/bin"}
    commands = [
        ["gen", "-c", str(cfg_path)],
        ["train", "-c", str(cfg_path), "--model", "all"],
        ["eval", "-c", str(cfg_path)],
        ["lse", "-c", str(cfg_path), "--samples", "40"],
        ["sweep", "-c", str(cfg_path)],
        ["report", "-c", str(cfg_path)],
    ]

    def run_all():
        outputs = {}
        for cmd in commands:
            proc = subprocess.run([sys.executable, "-m", "flowcast.cli"] + cmd,
                                  capture_output=True, text=True, env=env)
            assert proc.returncode == 0, f"{cmd}: {proc.stderr}"
        out_dir = tmp_path / "out"
        for path in sorted(out_dir.rglob("*")):
            if path.is_file():
                outputs[str(path.relative_to(out_dir))] = path.read_bytes()
        return outputs

    first = run_all()
    second = run_all()
    assert first.keys() == second.keys()
    diffs = [name for name in first if first[name] != second[name]]
    assert not diffs, f"artifacts changed across reruns: {diffs}"

    selftests = [subprocess.run([sys.executable, "-m", "flowcast.cli", "selftest"],
                                capture_output=True, text=True, env=env)
                 for _ in range(2)]
    assert all(p.returncode == 0 for p in selftests)
    assert selftests[0].stdout == selftests[1].stdout
    _report("criterion-11 determinism",
            f"{len(first)} artifacts byte-identical across two full pipeline runs")
