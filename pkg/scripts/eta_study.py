#!/usr/bin/env python3
"""Width/epoch study for the constrained-vs-direct comparison."""

import sys
import time

import numpy as np

from flowcast import estimators as es
from flowcast import evaluation as ev
from flowcast import measurement as ms
from flowcast import nn, scenario as sc
from flowcast.config import subseed
from flowcast.netmodel import load_case


def main():
    model = load_case("ieee118")
    placement = ms.default_hv_placement(model)
    params = sc.ScenarioParams(0.25, 0.20, 0.3)
    master = 1
    sizes = {"train": 5000, "val": 500, "test": 1500}
    scen = sc.generate_scenarios(model, sc.oversampled_count(sizes), params,
                                 seed=subseed(master, "scenario"))
    ds = sc.build_dataset(model, scen, placement, sizes, seed=subseed(master, "split"))
    noise = ms.default_gmm_model(seed=subseed(master, "noise"))
    nf = ds.grid[2].n_flows
    rows = ds.rows("test")
    z = ms.noisy_features(ds.z[rows], ds.channels, noise.reseeded(123),
                          ds.row_ids[rows])

    jobs = []
    for eta in (2.0, 3.0):
        jobs.append(("direct", eta, 200, 5))
        jobs.append(("pic", eta, 200, 5))
    jobs.append(("pic", 2.0, 200, 1))   # binning ablation

    for kind, eta, epochs, n_bin in jobs:
        t0 = time.time()
        cfg = nn.TrainConfig(epochs=epochs, width_factor=eta,
                             seed=subseed(master, "train", kind))
        est = es.train_kind(kind, ds, noise, cfg, n_bin=n_bin)
        pred = es.predict(est, z)
        pf = np.mean(np.sqrt(np.mean((pred[:, :nf] - ds.y[rows][:, :nf])**2, axis=0)))
        pi = np.mean(np.sqrt(np.mean((pred[:, nf:] - ds.y[rows][:, nf:])**2, axis=0)))
        tot = np.mean(np.sqrt(np.mean((pred - ds.y[rows])**2, axis=0)))
        best = est.meta["history"]["best_epoch"]
        print(f"{kind:7s} eta={eta} ep={epochs} bins={n_bin}: total={tot:.3f} "
              f"flow={pf:.3f} inj={pi:.3f} best_ep={best} ({time.time()-t0:.0f}s)")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
