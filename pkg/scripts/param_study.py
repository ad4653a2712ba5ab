#!/usr/bin/env python3
"""Scenario-parameter study: find load-variation settings where the model
comparison behaves like the reference experiment (constrained net best,
state-first net worst, linear model above 1 MW)."""

import sys
import time

import numpy as np

from flowcast import estimators as es
from flowcast import evaluation as ev
from flowcast import measurement as ms
from flowcast import nn, scenario as sc
from flowcast.config import subseed
from flowcast.netmodel import load_case


def run_config(model, placement, params, master, epochs, trials=30):
    sizes = {"train": 5000, "val": 500, "test": 1500}
    scen = sc.generate_scenarios(model, sc.oversampled_count(sizes), params,
                                 seed=subseed(master, "scenario"))
    ds = sc.build_dataset(model, scen, placement, sizes, seed=subseed(master, "split"))
    noise = ms.default_gmm_model(seed=subseed(master, "noise"))
    out = {}
    nf = ds.grid[2].n_flows
    for kind in ("lr", "direct", "indirect", "pic"):
        cfg = nn.TrainConfig(epochs=epochs, seed=subseed(master, "train", kind))
        est = es.train_kind(kind, ds, noise, cfg, n_bin=5)
        rep = ev.run_trials(est, ds, trials=trials, subset_size=1000,
                            noise=noise, seed=subseed(master, "trials", kind))
        out[kind] = rep
        # flow/injection split on one fresh draw for diagnosis
        rows = ds.rows("test")
        z = ms.noisy_features(ds.z[rows], ds.channels, noise.reseeded(123),
                              ds.row_ids[rows])
        pred = es.predict(est, z)
        pf = np.mean(np.sqrt(np.mean((pred[:, :nf] - ds.y[rows][:, :nf])**2, axis=0)))
        pi = np.mean(np.sqrt(np.mean((pred[:, nf:] - ds.y[rows][:, nf:])**2, axis=0)))
        print(f"    {kind:9s} mean={rep.rmse_mean:7.3f} std={rep.rmse_std:.4f} "
              f"flowRMSE={pf:.3f} injRMSE={pi:.3f}")
        sys.stdout.flush()
    return out


def main():
    model = load_case("ieee118")
    placement = ms.default_hv_placement(model)
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
    configs = [
        ("wide-uncorr", sc.ScenarioParams(0.25, 0.20, 0.3)),
        ("wide-veryuncorr", sc.ScenarioParams(0.25, 0.30, 0.15)),
        ("huge-sigma", sc.ScenarioParams(0.30, 0.40, 0.2)),
    ]
    for label, params in configs:
        print(f"== {label}: amp={params.diurnal_amplitude} sigma={params.noise_sigma} "
              f"rho={params.correlation}")
        t0 = time.time()
        reps = run_config(model, placement, params, master=1, epochs=epochs)
        print(f"   pic<direct: {reps['pic'].rmse_mean < reps['direct'].rmse_mean}, "
              f"indirect worst: {reps['indirect'].rmse_mean == max(r.rmse_mean for r in reps.values())}, "
              f"lr>=1: {reps['lr'].rmse_mean >= 1.0}  ({time.time()-t0:.0f}s)")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
