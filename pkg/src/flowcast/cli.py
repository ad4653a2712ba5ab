"""Command-line front end: gen / train / eval / lse / sweep / report / selftest.

Every command is driven by one TOML config (see docs/config.md) plus flag
overrides, and is idempotent under a fixed master seed: rerunning writes
byte-identical artifacts.  Exit codes: 0 success, 1 internal error,
2 input/config error, 3 unsupported request.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, estimators, evaluation, kernels, lse, measurement
from . import netmodel, nn, placement as placement_mod, scenario
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_UNSUPPORTED = 3


def _pool_map(threads):
    if threads <= 1:
        return None

    def mapper(fn, items):
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return mapper


def _load_model(cfg):
    try:
        return netmodel.load_case(cfg["case.path"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def _placement(cfg, model, kind=None):
    kind = kind or cfg["placement.kind"]
    if kind == "hv":
        return measurement.default_hv_placement(model)
    if kind == "greedy-dominating":
        return placement_mod.greedy_dominating_set(model)
    if kind == "list":
        return measurement.placement_for_buses(model, cfg["placement.buses"])
    raise ConfigError(f"unknown placement kind {kind!r}")


def _dataset_dir(cfg):
    return cfg.out_dir() / "dataset"


def _load_dataset(cfg, model):
    ddir = _dataset_dir(cfg)
    if not (ddir / "meta.json").is_file():
        raise ConfigError(f"no dataset at {ddir}; run 'flowcast gen' first")
    return scenario.attach_grid(scenario.load_dataset(ddir), model)


# --------------------------------------------------------------------------
# commands

def cmd_gen(cfg):
    model = _load_model(cfg)
    place = _placement(cfg, model)
    sizes = cfg.sizes()
    count = int(cfg["scenario.count"]) or scenario.oversampled_count(sizes)
    scen = scenario.generate_scenarios(model, count, cfg.scenario_params(),
                                       seed=cfg.seed("scenario"))
    ds = scenario.build_dataset(model, scen, place, sizes, seed=cfg.seed("split"),
                                pool_map=_pool_map(int(cfg["run.threads"])))
    scenario.save_dataset(ds, _dataset_dir(cfg))
    print(f"dataset: {ds.z.shape[0]} rows, {ds.n_features} features, "
          f"{ds.n_targets} targets -> {_dataset_dir(cfg)}")
    return EXIT_OK


def cmd_train(cfg, kinds):
    model = _load_model(cfg)
    ds = _load_dataset(cfg, model)
    noise = cfg.noise_model()
    est_dir = cfg.out_dir() / "estimators"
    est_dir.mkdir(parents=True, exist_ok=True)
    if kinds == ["all"]:
        kinds = list(cfg["run.models"])
    for kind in kinds:
        tc = cfg.train_config(kind)
        est = estimators.train_kind(kind, ds, noise, tc,
                                    n_bin=int(cfg["train.n_bin"]))
        path = est_dir / f"{kind}.json"
        estimators.save_estimator(est, path)
        history = est.meta.get("history")
        if history:
            lines = ["epoch,train_loss,val_loss"]
            for e, (tr, va) in enumerate(zip(history["train"], history["val"])):
                lines.append(f"{e},{tr!r},{va!r}")
            evaluation._write_lines(est_dir / f"{kind}_history.csv", lines)
        print(f"trained {kind} -> {path}")
    return EXIT_OK


def cmd_eval(cfg):
    model = _load_model(cfg)
    ds = _load_dataset(cfg, model)
    noise = cfg.noise_model()
    est_dir = cfg.out_dir() / "estimators"
    kinds = list(cfg["eval.models"]) or list(cfg["run.models"])
    reports = {}
    for kind in kinds:
        path = est_dir / f"{kind}.json"
        if not path.is_file():
            raise ConfigError(f"missing estimator file {path}; run 'flowcast train'")
        est = estimators.load_estimator(path, model)
        reports[kind] = evaluation.run_trials(
            est, ds, trials=int(cfg["eval.trials"]),
            subset_size=int(cfg["eval.subset"]),
            noise=noise, seed=cfg.seed("trials", kind))
        print(f"{kind}: rmse mean {reports[kind].rmse_mean:.4f} MW, "
              f"std {reports[kind].rmse_std:.4f} MW")
    out = cfg.out_dir() / "report" / "table3.csv"
    evaluation.table3_report(reports, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_lse(cfg, placement_kind=None, samples=300):
    model = _load_model(cfg)
    place = _placement(cfg, model, kind=placement_kind or "greedy-dominating")
    scen = scenario.generate_scenarios(model, samples, cfg.scenario_params(),
                                       seed=cfg.seed("scenario", "lse"))
    cache = scenario.solve_scenarios(model, scen,
                                     pool_map=_pool_map(int(cfg["run.threads"])))
    table = lse.lse_noise_study(model, place, cache.voltages,
                                noise_seed=cfg.seed("noise", "lse"))
    out = cfg.out_dir() / "report" / "table1.csv"
    evaluation.table1_report(table, out)
    for row, cols in table.items():
        print(f"{row:10s} " + "  ".join(f"{k}={v:.6g}" for k, v in cols.items()))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(cfg, kinds=None, steps=None):
    model = _load_model(cfg)
    start = _placement(cfg, model)
    sizes = {k: int(cfg[f"sweep.{k}"]) for k in ("train", "val", "test")}
    count = scenario.oversampled_count(sizes)
    scen = scenario.generate_scenarios(model, count, cfg.scenario_params(),
                                       seed=cfg.seed("scenario", "sweep"))
    cache = scenario.solve_scenarios(model, scen,
                                     pool_map=_pool_map(int(cfg["run.threads"])))
    noise = cfg.noise_model(seed_labels=("noise", "sweep"))
    results = []
    for kind in (kinds or list(cfg["sweep.models"])):
        reduced = cfg.train_config(kind, epochs=int(cfg["sweep.epochs"]),
                                   seed_labels=("sweep", "train"))
        full = cfg.train_config(kind, seed_labels=("sweep", "train"))
        res = placement_mod.incremental_search(
            model, cache, kind, start,
            steps=int(steps if steps is not None else cfg["sweep.steps"]),
            config=reduced, noise=noise, seed=cfg.seed("split", "sweep"),
            sizes=sizes, candidate_pool_size=int(cfg["sweep.candidate_pool"]),
            n_bin=int(cfg["train.n_bin"]), full_budget_config=full,
            pool_map=_pool_map(int(cfg["run.threads"])))
        results.append(res)
        seq = ", ".join(f"{bus}:{err:.2f}" for bus, err in res.sequence)
        print(f"{kind}: {seq}")
    rep = cfg.out_dir() / "report"
    evaluation.sweep_report(results, rep / "sweep.csv", rep / "sweep.svg")
    print(f"wrote {rep / 'sweep.csv'} and sweep.svg")
    return EXIT_OK


def cmd_report(cfg):
    rep = cfg.out_dir() / "report"
    expected = ["table1.csv", "table3.csv", "sweep.csv", "sweep.svg"]
    missing = [name for name in expected if not (rep / name).is_file()]
    if missing:
        raise ConfigError("missing report artifacts: " + ", ".join(missing)
                          + " (run lse/eval/sweep first)")
    manifest = {
        "version": __version__,
        "kernel_backend": kernels.backend_name(),
        "master_seed": cfg.master_seed,
        "config": cfg.tree,
        "overrides": cfg.overrides,
        "sub_seeds": {name: cfg.seed(name) for name in
                      ("scenario", "split", "noise", "trials")},
        "artifacts": expected,
    }
    evaluation.run_manifest(rep / "run-manifest.json", manifest)
    print(f"wrote {rep / 'run-manifest.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# selftest: quick analytic and oracle checks

def cmd_selftest(cfg):
    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"PASS {name}")
        except AssertionError as exc:
            failures.append(name)
            print(f"FAIL {name}: {exc}")

    check("admittance: 2-bus pure reactance", _st_admittance_2bus)
    check("admittance: tap/shift fixture", _st_admittance_tap)
    check("conversion: structure and pseudoinverse identity", _st_conversion)
    check("power flow: independent-solver fixtures", _st_powerflow_fixtures)
    check("power flow: injection = A @ flow on scenarios", _st_conservation)
    check("branch flow: closed-form value", _st_flow_closed_form)
    check("noise: mixture moments", _st_gmm_moments)
    check("noise: gaussian TVE split", _st_gaussian_model)
    check("gradients: network finite differences", _st_nn_gradients)
    check("gradients: projected-loss finite differences", _st_pic_gradients)
    check("optimizer: bias-corrected first step", _st_adam_first_step)
    check("determinism: scenario regeneration", _st_determinism)
    if failures:
        print(f"{len(failures)} of 12 checks failed")
        return EXIT_INTERNAL
    print("all 12 checks passed")
    return EXIT_OK


def _st_admittance_2bus():
    model = netmodel.parse_case(
        "mpc.baseMVA = 100;\n"
        "mpc.bus = [1 3 0 0 0 0 1 1 0 138 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 138 1 1.1 0.9];\n"
        "mpc.gen = [1 0 0 99 -99 1.0 100 1 99 0];\n"
        "mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1 -360 360];\n")
    y = netmodel.build_admittance(model).y_bus.toarray()
    want = np.array([[-10j, 10j], [10j, -10j]])
    assert np.allclose(y, want, atol=1e-12), f"got {y}"


def _st_admittance_tap():
    model = netmodel.load_case("toy3")
    y = netmodel.build_admittance(model).y_bus.toarray()
    from importlib import resources
    ref = np.zeros((3, 3), dtype=complex)
    fix = resources.files("flowcast.data").joinpath("fixtures/ybus_toy3.csv")
    for line in fix.read_text().splitlines()[1:]:
        i, j, re, im = line.split(",")
        ref[int(i), int(j)] = float(re) + 1j * float(im)
    assert np.allclose(y, ref, atol=1e-12), "tap/shift admittance mismatch"
    ys = 1.0 / (model.branches[1].r + 1j * model.branches[1].x)
    assert np.isclose(abs(y[0, 2]), abs(ys) / 1.05, rtol=1e-12), "off-diagonal tap scale"


def _st_conversion():
    model = netmodel.load_case("ieee118")
    conv = netmodel.build_conversion(model)
    assert conv.a.shape == (118, 372) and conv.b.shape == (490, 372), "shape"
    assert np.all(conv.a.sum(axis=0) == 1.0), "column sums"
    p = netmodel.pseudo_inverse(conv.b)
    assert np.max(np.abs(p @ conv.b - np.eye(372))) < 1e-10, "pinv identity"


def _st_powerflow_fixtures():
    from importlib import resources
    from .powerflow import solve_powerflow
    for name in ("toy3", "wscc9", "ieee118"):
        model = netmodel.load_case(name)
        state = solve_powerflow(model)
        fix = resources.files("flowcast.data").joinpath(f"fixtures/pf_{name}.csv")
        rows = [line.split(",") for line in fix.read_text().splitlines()[1:]]
        vm = np.array([float(r[1]) for r in rows])
        va = np.array([float(r[2]) for r in rows])
        err = max(np.max(np.abs(state.v_mag - vm)), np.max(np.abs(state.v_ang - va)))
        assert err < 1e-6, f"{name}: {err:.2e} pu"


def _st_conservation():
    from .powerflow import branch_flows_from_voltages, bus_injections_from_voltages
    model = netmodel.load_case("wscc9")
    scen = scenario.generate_scenarios(model, 50, seed=2)
    cache = scenario.solve_scenarios(model, scen)
    gap = np.max(np.abs(cache.y[:, cache.conv.n_flows:]
                        - cache.y[:, :cache.conv.n_flows] @ cache.conv.a.T))
    assert gap < 1e-6, f"gap {gap:.2e} MW"


def _st_flow_closed_form():
    model = netmodel.parse_case(
        "mpc.baseMVA = 100;\n"
        "mpc.bus = [1 3 0 0 0 0 1 1 0 138 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 138 1 1.1 0.9];\n"
        "mpc.gen = [1 0 0 99 -99 1.0 100 1 99 0];\n"
        "mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1 -360 360];\n")
    adm = netmodel.build_admittance(model)
    from .powerflow import branch_flows_from_voltages
    v = np.array([1.0, np.exp(-0.1j)])
    flows = branch_flows_from_voltages(v, model, adm)
    assert np.isclose(flows[0], 1000.0 * np.sin(0.1), rtol=1e-12), f"{flows[0]}"


def _st_gmm_moments():
    noise = measurement.default_gmm_model(seed=123)
    z = np.ones(200_000, dtype=complex)
    noisy = measurement.apply_gmm_noise(z, noise)
    mean_mag = 100.0 * float(np.mean(np.abs(noisy) - 1.0))
    rms_ang = float(np.rad2deg(np.sqrt(np.mean(np.angle(noisy) ** 2))))
    assert abs(mean_mag - 0.20) < 0.03, f"mean magnitude error {mean_mag:.4f}%"
    assert abs(rms_ang - 0.2905) < 0.01, f"rms angle error {rms_ang:.4f} deg"


def _st_gaussian_model():
    g = measurement.gaussian_noise_model(0.01)
    assert np.isclose(g.mag_stds[0], 0.7071, atol=5e-4), "magnitude sigma"
    assert np.isclose(g.ang_stds[0], 0.4051, atol=5e-4), "angle sigma"


def _st_nn_gradients():
    rng = np.random.default_rng(5)
    net = nn.init_network((6, 5, 3), seed=8)
    x = rng.standard_normal((4, 6))
    g_out = rng.standard_normal((4, 3))
    gw, gb = nn.backward(net, x, g_out)
    h = 1e-6
    w = net.weights[1]
    i, j = 2, 1
    old = w[i, j]
    w[i, j] = old + h
    fp = float(np.sum(nn.forward(net, x) * g_out))
    w[i, j] = old - h
    fm = float(np.sum(nn.forward(net, x) * g_out))
    w[i, j] = old
    fd = (fp - fm) / (2 * h)
    assert abs(gw[1][i, j] - fd) < 1e-5 * max(1.0, abs(fd)), "finite differences"


def _st_pic_gradients():
    rng = np.random.default_rng(9)
    a = np.zeros((3, 4))
    a[0, 0] = a[1, 1] = a[1, 2] = a[2, 3] = 1.0
    conv = netmodel.ConversionMatrix(a=a, b=np.vstack([np.eye(4), a]),
                                     flow_index=((0, "from"),) * 4,
                                     injection_index=(1, 2, 3))
    y = rng.standard_normal((5, 7))
    f = rng.standard_normal((5, 4))
    loss, grad = estimators.pic_loss(y, f, conv)
    h = 1e-6
    fd = np.zeros_like(f)
    for idx in np.ndindex(f.shape):
        fp = f.copy()
        fp[idx] += h
        lp, _ = estimators.pic_loss(y, fp, conv)
        fm = f.copy()
        fm[idx] -= h
        lm, _ = estimators.pic_loss(y, fm, conv)
        fd[idx] = (lp - lm) / (2 * h)
    assert np.max(np.abs(grad - fd)) < 1e-6, "projected-loss gradient"


def _st_adam_first_step():
    p = np.array([1.0])
    g = np.array([0.5])
    m = np.zeros(1)
    v = np.zeros(1)
    kernels.adam_step(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8)
    want = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)
    assert np.isclose(p[0], want, rtol=1e-12), f"{p[0]} vs {want}"


def _st_determinism():
    model = netmodel.load_case("toy3")
    a = scenario.generate_scenarios(model, 100, seed=42).multipliers
    b = scenario.generate_scenarios(model, 100, seed=42).multipliers
    assert np.array_equal(a, b), "scenario multipliers differ"


# --------------------------------------------------------------------------
# argument parsing

def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="synthetic PMU datasets and flow/injection estimators")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--threads", type=int, help="worker pool size")
        p.add_argument("--case", help="case file path or bundled name")
        p.add_argument("--noise", choices=["none", "gaussian", "gmm"],
                       help="measurement noise family")

    p = sub.add_parser("gen", help="generate a labeled dataset")
    common(p)
    p = sub.add_parser("train", help="train estimators on the dataset")
    common(p)
    p.add_argument("--model", default="all",
                   help="estimator kind (lr, direct, indirect, pic, lse, all)")
    p.add_argument("--epochs", type=int, help="training epochs override")
    p = sub.add_parser("eval", help="repeated-trial evaluation (model table)")
    common(p)
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--subset", type=int, help="samples per trial")
    p = sub.add_parser("lse", help="linear state estimation noise study")
    common(p)
    p.add_argument("--placement", choices=["hv", "greedy-dominating", "list"],
                   help="placement for the study (default greedy-dominating)")
    p.add_argument("--samples", type=int, default=300)
    p = sub.add_parser("sweep", help="incremental placement search")
    common(p)
    p.add_argument("--model", help="comma-separated kinds (default from config)")
    p.add_argument("--steps", type=int, help="buses to add")
    p.add_argument("--start", choices=["hv", "greedy-dominating", "list"],
                   help="starting placement (default from config)")
    p = sub.add_parser("report", help="collect artifacts and write the manifest")
    common(p)
    p = sub.add_parser("selftest", help="run built-in analytic/oracle checks")
    common(p)
    return parser


def _overrides(args):
    mapping = {"seed": "run.seed", "out": "run.out", "threads": "run.threads",
               "case": "case.path", "noise": "noise.kind", "trials": "eval.trials",
               "subset": "eval.subset", "epochs": "train.epochs",
               "start": "placement.kind"}
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            kinds = [k.strip() for k in args.model.split(",")]
            return cmd_train(cfg, kinds)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "lse":
            return cmd_lse(cfg, placement_kind=args.placement, samples=args.samples)
        if args.command == "sweep":
            kinds = [k.strip() for k in args.model.split(",")] if args.model else None
            return cmd_sweep(cfg, kinds=kinds, steps=args.steps)
        if args.command == "report":
            return cmd_report(cfg)
        if args.command == "selftest":
            return cmd_selftest(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except estimators.UnsupportedModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
