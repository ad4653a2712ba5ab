"""Run configuration: one human-editable TOML tree drives the pipeline.

Every command reads the same file; CLI flags override individual keys.  A
single master seed fans out to named sub-seeds (scenario, split, noise,
per-model training, trials, sweep) so one randomness source can be varied
while the others stay frozen.  The FLOWCAST_SEED environment variable
overrides the master seed.
"""

import os
import pathlib
import zlib
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .nn import TrainConfig
from .scenario import ScenarioParams


class ConfigError(ValueError):
    pass


def subseed(master, *labels):
    """Deterministic named sub-seed of the master seed."""
    entropy = [int(master)] + [zlib.crc32(str(l).encode()) for l in labels]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


_DEFAULTS = {
    "case": {"path": "ieee118"},
    "placement": {"kind": "hv", "buses": []},
    "scenario": {"count": 0, "diurnal_amplitude": 0.25, "noise_sigma": 0.20,
                 "correlation": 0.3, "sigma_spread": 4.0},
    "dataset": {"train": 5000, "val": 500, "test": 1500},
    "noise": {"kind": "gmm", "tve": 0.01},
    "train": {"learning_rate": 1e-3, "epochs": 200, "batch_size": 64,
              "hidden_layers": 3, "width_factor": 2.0, "n_bin": 5},
    "eval": {"trials": 100, "subset": 1000, "models": []},
    "sweep": {"steps": 4, "candidate_pool": 6, "epochs": 50,
              "models": ["lr", "pic"], "train": 2000, "val": 400, "test": 400},
    "run": {"seed": 1, "out": "runs/run", "threads": 1,
            "models": ["lr", "direct", "indirect", "pic"]},
}


@dataclass
class RunConfig:
    tree: dict
    path: str = ""
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, dotted):
        section, key = dotted.split(".", 1)
        if dotted in self.overrides:
            return self.overrides[dotted]
        return self.tree[section][key]

    @property
    def master_seed(self):
        env = os.environ.get("FLOWCAST_SEED")
        if env is not None:
            return int(env)
        return int(self["run.seed"])

    def seed(self, *labels):
        return subseed(self.master_seed, *labels)

    def out_dir(self):
        return pathlib.Path(self["run.out"])

    def scenario_params(self):
        return ScenarioParams(diurnal_amplitude=self["scenario.diurnal_amplitude"],
                              noise_sigma=self["scenario.noise_sigma"],
                              correlation=self["scenario.correlation"],
                              sigma_spread=self["scenario.sigma_spread"])

    def sizes(self):
        return {k: int(self[f"dataset.{k}"]) for k in ("train", "val", "test")}

    def train_config(self, kind, epochs=None, seed_labels=("train",)):
        return TrainConfig(learning_rate=self["train.learning_rate"],
                           epochs=int(self["train.epochs"] if epochs is None else epochs),
                           batch_size=int(self["train.batch_size"]),
                           hidden_layers=int(self["train.hidden_layers"]),
                           width_factor=self["train.width_factor"],
                           seed=self.seed(*seed_labels, kind))

    def noise_model(self, seed_labels=("noise",)):
        from .measurement import default_gmm_model, gaussian_noise_model
        kind = self["noise.kind"]
        seed = self.seed(*seed_labels)
        if kind == "none":
            return None
        if kind == "gaussian":
            return gaussian_noise_model(self["noise.tve"], seed=seed)
        if kind == "gmm":
            return default_gmm_model(seed=seed)
        raise ConfigError(f"unknown noise kind {kind!r}")


def _merge(base, update, path=""):
    out = dict(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a table")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None):
    tree = {k: dict(v) for k, v in _DEFAULTS.items()}
    if path is not None:
        p = pathlib.Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(p, "rb") as f:
            try:
                user = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        tree = _merge(tree, user)
    cfg = RunConfig(tree=tree, path=str(path or ""), overrides=dict(overrides or {}))
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["placement.kind"] not in ("hv", "list", "greedy-dominating"):
        raise ConfigError(f"unknown placement kind {cfg['placement.kind']!r}")
    if cfg["placement.kind"] == "list" and not cfg["placement.buses"]:
        raise ConfigError("placement.kind = 'list' requires placement.buses")
    sizes = cfg.sizes()
    if min(sizes.values()) < 1:
        raise ConfigError("dataset sizes must be positive")
    if int(cfg["run.threads"]) < 1:
        raise ConfigError("run.threads must be at least 1")
    cfg.scenario_params()  # range checks
    for kind in list(cfg["run.models"]) + list(cfg["sweep.models"]):
        if kind not in ("lr", "direct", "indirect", "pic", "lse", "svr"):
            raise ConfigError(f"unknown model kind {kind!r}")
