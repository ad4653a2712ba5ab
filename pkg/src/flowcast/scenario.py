"""Correlated load scenarios and labeled dataset assembly.

Each scenario scales every load by diurnal(s) * (1 + eps(s, l)): a smooth
daily-shape factor sampled at a random time of day, times a zero-mean
disturbance with configurable per-load sigma and cross-load correlation.
Scenarios are solved independently; the solved complex voltages are cached
so features for any PMU placement can be re-extracted without re-solving.

Samples are drawn i.i.d. over the diurnal process (no time series), and all
randomness is reproducible from the scenario seed.
"""

import json
import logging
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import measurement
from .netmodel import build_admittance, build_conversion
from .powerflow import (ConvergenceError, PowerFlowError, apply_scenario,
                        branch_flows_from_voltages, bus_injections_from_voltages,
                        solve_powerflow)

log = logging.getLogger(__name__)

MULTIPLIER_FLOOR = 0.3
MULTIPLIER_CEIL = 1.7


@dataclass(frozen=True)
class ScenarioParams:
    diurnal_amplitude: float = 0.25
    noise_sigma: float = 0.20
    correlation: float = 0.3
    sigma_spread: float = 4.0    # max/min ratio of per-load sigmas

    def __post_init__(self):
        if self.diurnal_amplitude < 0 or self.diurnal_amplitude >= 1:
            raise ValueError("diurnal_amplitude must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [0, 1]")
        if self.sigma_spread < 1.0:
            raise ValueError("sigma_spread must be at least 1")


@dataclass(frozen=True)
class LoadScenarioSet:
    multipliers: np.ndarray      # scenarios x loads, dimensionless
    seed: int
    params: ScenarioParams


def _diurnal_shape(hours):
    """Smooth daily demand shape in [-1, 1] with morning/evening structure."""
    t = 2.0 * np.pi * hours / 24.0
    raw = 0.75 * np.sin(t - 2.0 * np.pi * 8.5 / 24.0) + 0.25 * np.sin(2.0 * t - 1.0)
    return raw


def load_sigmas(params, n_loads):
    """Per-load disturbance sigmas.

    Loads differ in volatility; a low-discrepancy (golden-ratio) pattern
    spreads sigmas log-uniformly over [sigma/sqrt(spread),
    sigma*sqrt(spread)], deterministically per load position.
    """
    u = np.modf(np.arange(n_loads) * 0.6180339887498949)[0]
    return params.noise_sigma * params.sigma_spread ** (u - 0.5)


def diurnal_moments(params, n_loads, n_grid=20001):
    """Per-load analytic multiplier mean/variance (by quadrature).

    With m = d * (1 + eps_l), Var(m_l) = E[d^2] (1 + sigma_l^2) - E[d]^2
    for zero-mean eps_l of std sigma_l.
    """
    hours = np.linspace(0.0, 24.0, n_grid)
    d = 1.0 + params.diurnal_amplitude * _diurnal_shape(hours)
    e_d = np.trapezoid(d, hours) / 24.0
    e_d2 = np.trapezoid(d * d, hours) / 24.0
    var = e_d2 * (1.0 + load_sigmas(params, n_loads) ** 2) - e_d**2
    return e_d, var


def generate_scenarios(model, count, params=ScenarioParams(), seed=0):
    """Sample a (count x load-count) multiplier matrix."""
    if count < 1:
        raise ValueError("count must be at least 1")
    n_loads = len(model.load_buses())
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C]))
    hours = rng.uniform(0.0, 24.0, size=count)
    diurnal = 1.0 + params.diurnal_amplitude * _diurnal_shape(hours)

    shared = rng.standard_normal(size=(count, 1))
    individual = rng.standard_normal(size=(count, n_loads))
    rho = params.correlation
    eps = load_sigmas(params, n_loads) * (np.sqrt(rho) * shared
                                          + np.sqrt(1.0 - rho) * individual)

    mult = diurnal[:, None] * (1.0 + eps)
    mult = np.clip(mult, MULTIPLIER_FLOOR, MULTIPLIER_CEIL)
    return LoadScenarioSet(multipliers=mult, seed=int(seed), params=params)


# --------------------------------------------------------------------------
# solving and caching

@dataclass(frozen=True)
class SolutionCache:
    """Solved scenario voltages plus flow/injection labels.

    voltages: scenarios x n_bus complex; y: scenarios x (m_b + n_bus) MW;
    scenario_ids index into the originating LoadScenarioSet.
    """
    model: object
    adm: object
    conv: object
    voltages: np.ndarray
    y: np.ndarray
    states_vm: np.ndarray
    states_va: np.ndarray
    scenario_ids: np.ndarray


def solve_scenarios(model, scenarios, tol=1e-8, max_iter=20, pool_map=None):
    """Solve every scenario; non-convergent ones are dropped and logged."""
    adm = build_admittance(model)
    conv = build_conversion(model)
    mult = scenarios.multipliers

    def solve_one(idx):
        scen_model = apply_scenario(model, mult[idx])
        try:
            state = solve_powerflow(scen_model, tol=tol, max_iter=max_iter)
        except (ConvergenceError, PowerFlowError) as exc:
            return idx, None, str(exc)
        return idx, state.complex_voltages(), None

    mapper = pool_map if pool_map is not None else map
    voltages, kept = [], []
    for idx, v, err in mapper(solve_one, range(mult.shape[0])):
        if v is None:
            log.warning("scenario %d dropped: %s", idx, err)
            continue
        kept.append(idx)
        voltages.append(v)

    v = np.array(voltages)
    flows = branch_flows_from_voltages(v, model, adm)
    injections = bus_injections_from_voltages(v, model, adm)
    return SolutionCache(model=model, adm=adm, conv=conv, voltages=v,
                         y=np.hstack([flows, injections]),
                         states_vm=np.abs(v), states_va=np.angle(v),
                         scenario_ids=np.array(kept))


# --------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class Dataset:
    z: np.ndarray                # samples x n, noiseless phasor features
    y: np.ndarray                # samples x m, flows then injections, MW
    states_vm: np.ndarray        # samples x n_bus (per unit)
    states_va: np.ndarray        # samples x n_bus (radians)
    feature_names: tuple
    target_names: tuple
    channels: tuple
    splits: dict                 # name -> index array into rows
    row_ids: np.ndarray          # stable sample identities for noise streams
    meta: dict = field(default_factory=dict)
    grid: tuple = None           # (model, adm, conv); not serialized

    @property
    def n_features(self):
        return self.z.shape[1]

    @property
    def n_targets(self):
        return self.y.shape[1]

    def rows(self, split):
        return self.splits[split]


def target_names(model, conv):
    names = [f"flow.br{pos}.{end}" for pos, end in conv.flow_index]
    names += [f"inj.bus{b}" for b in conv.injection_index]
    return tuple(names)


def build_dataset(model, scenarios, placement, sizes, seed=0, cache=None,
                  tol=1e-8, pool_map=None):
    """Assemble a labeled dataset for one placement.

    sizes is a {train, val, test} mapping; converged scenarios are shuffled
    by seed and dealt into the splits in order.  Raises ValueError when too
    few scenarios converged to fill the requested sizes.
    """
    if cache is None:
        cache = solve_scenarios(model, scenarios, tol=tol, pool_map=pool_map)
    needed = sizes["train"] + sizes["val"] + sizes["test"]
    n_ok = cache.voltages.shape[0]
    if n_ok < needed:
        raise ValueError(f"only {n_ok} converged scenarios for {needed} requested rows")

    phasors = measurement.true_phasors(cache.voltages, model, cache.adm, placement)
    z = measurement.phasors_to_features(phasors)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD5]))
    order = rng.permutation(n_ok)
    splits = {
        "train": np.sort(order[:sizes["train"]]),
        "val": np.sort(order[sizes["train"]:sizes["train"] + sizes["val"]]),
        "test": np.sort(order[sizes["train"] + sizes["val"]:needed]),
    }
    meta = {
        "model": model.name,
        "base_power_mva": model.base_power,
        "bus_ids": [b.id for b in model.buses],
        "placement_buses": list(placement.buses),
        "seed": int(seed),
        "sizes": dict(sizes),
    }
    return Dataset(z=z, y=cache.y, states_vm=cache.states_vm, states_va=cache.states_va,
                   feature_names=tuple(measurement.feature_names(placement.channels)),
                   target_names=target_names(model, cache.conv),
                   channels=placement.channels, splits=splits,
                   row_ids=cache.scenario_ids.copy(), meta=meta,
                   grid=(model, cache.adm, cache.conv))


def attach_grid(ds, model):
    """Re-attach grid objects to a dataset loaded from disk."""
    from dataclasses import replace
    if model.name != ds.meta["model"]:
        raise ValueError(f"dataset was generated from {ds.meta['model']!r}, "
                         f"not {model.name!r}")
    return replace(ds, grid=(model, build_admittance(model), build_conversion(model)))


def oversampled_count(sizes, margin=0.05):
    """Scenario count to request so droppable non-convergent cases still
    leave enough rows."""
    needed = sizes["train"] + sizes["val"] + sizes["test"]
    return int(np.ceil(needed * (1.0 + margin)))


# --------------------------------------------------------------------------
# on-disk form: features.csv / targets.csv / states.csv / meta.json

def save_dataset(ds, outdir):
    out = pathlib.Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    def write_csv(path, header, rows):
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(repr(float(x)) for x in row) + "\n")

    write_csv(out / "features.csv", ds.feature_names, ds.z)
    write_csv(out / "targets.csv", ds.target_names, ds.y)
    bus_ids = ds.meta["bus_ids"]
    state_head = [f"vm.bus{b}" for b in bus_ids] + [f"va.bus{b}" for b in bus_ids]
    write_csv(out / "states.csv", state_head, np.hstack([ds.states_vm, ds.states_va]))
    meta = dict(ds.meta)
    meta["splits"] = {k: v.tolist() for k, v in ds.splits.items()}
    meta["row_ids"] = ds.row_ids.tolist()
    meta["channels"] = [{"kind": c.kind, "bus": c.bus, "branch": c.branch, "end": c.end}
                        for c in ds.channels]
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_dataset(outdir):
    out = pathlib.Path(outdir)

    def read_csv(path):
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n").split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        return header, data

    f_names, z = read_csv(out / "features.csv")
    t_names, y = read_csv(out / "targets.csv")
    _, states = read_csv(out / "states.csv")
    n_bus = states.shape[1] // 2
    with open(out / "meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    splits = {k: np.array(v, dtype=int) for k, v in meta.pop("splits").items()}
    row_ids = np.array(meta.pop("row_ids"), dtype=int)
    channels = tuple(measurement.Channel(kind=c["kind"], bus=c["bus"],
                                         branch=c["branch"], end=c["end"])
                     for c in meta.pop("channels"))
    return Dataset(z=z, y=y, states_vm=states[:, :n_bus], states_va=states[:, n_bus:],
                   feature_names=tuple(f_names), target_names=tuple(t_names),
                   channels=channels, splits=splits, row_ids=row_ids, meta=meta)
