#!/usr/bin/env python3
"""Desk-scale model comparison dry run (timing + ordering check)."""

import sys
import time

import numpy as np

from flowcast import estimators as es
from flowcast import evaluation as ev
from flowcast import measurement as ms
from flowcast import nn, scenario as sc
from flowcast.config import subseed
from flowcast.netmodel import load_case


def one_seed(master, model, placement, epochs=200):
    t0 = time.time()
    sizes = {"train": 5000, "val": 500, "test": 1500}
    scen = sc.generate_scenarios(model, sc.oversampled_count(sizes),
                                 sc.ScenarioParams(), seed=subseed(master, "scenario"))
    ds = sc.build_dataset(model, scen, placement, sizes, seed=subseed(master, "split"))
    t_gen = time.time() - t0
    noise = ms.default_gmm_model(seed=subseed(master, "noise"))

    reports = {}
    times = {"gen": t_gen}
    for kind in ("lr", "direct", "indirect", "pic"):
        t1 = time.time()
        cfg = nn.TrainConfig(epochs=epochs, seed=subseed(master, "train", kind))
        est = es.train_kind(kind, ds, noise, cfg, n_bin=5)
        t_train = time.time() - t1
        t2 = time.time()
        reports[kind] = ev.run_trials(est, ds, trials=100, subset_size=1000,
                                      noise=noise, seed=subseed(master, "trials", kind))
        times[kind] = (t_train, time.time() - t2)
    return reports, times


def main():
    model = load_case("ieee118")
    placement = ms.default_hv_placement(model)
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    seeds = [int(s) for s in sys.argv[2:]] or [1, 2, 3]
    for master in seeds:
        reps, times = one_seed(master, model, placement, epochs)
        print(f"--- seed {master} (gen {times['gen']:.0f}s)")
        for kind, rep in reps.items():
            tt, te = times[kind]
            print(f"{kind:9s} mean={rep.rmse_mean:7.3f} std={rep.rmse_std:.4f} "
                  f"(train {tt:.0f}s, eval {te:.0f}s)")
        ordering = (reps["pic"].rmse_mean < reps["direct"].rmse_mean,
                    reps["pic"].rmse_mean < reps["indirect"].rmse_mean,
                    reps["indirect"].rmse_mean > reps["direct"].rmse_mean,
                    reps["indirect"].rmse_mean > reps["lr"].rmse_mean)
        print(f"pic<direct {ordering[0]}, pic<indirect {ordering[1]}, "
              f"indirect worst {ordering[2] and ordering[3]}, "
              f"pic std<=direct std {reps['pic'].rmse_std <= reps['direct'].rmse_std}")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
