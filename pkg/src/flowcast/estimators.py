"""Flow/injection estimators trained on PMU features.

Five kinds share one predict contract (n noisy features in, m megawatt
outputs: flows then injections):

* lse       - linear state estimation composed with the power equations
              (needs an observable placement; no training data)
* lr        - linear regression with intercept and tiny ridge damping
* direct    - one MLP mapping features straight to all m outputs
* indirect  - MLP mapping features to bus states, then the power equations
* pic       - conservation-constrained MLPs: flow outputs only, split into
              bins of similar training variability; a static 0/1 layer
              rebuilds injections, and the loss projects the combined
              residual through the pseudoinverse of the stack matrix, so
              predicted injections satisfy injection = A @ flow exactly

Training features carry one deterministic noise draw (keyed by sample id
and channel identity); evaluation draws fresh noise per trial elsewhere.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import measurement, nn
from .netmodel import build_admittance, build_conversion, pseudo_inverse
from .powerflow import branch_flows_from_voltages, bus_injections_from_voltages
from . import lse as lse_mod

KINDS = ("lse", "lr", "direct", "indirect", "pic")


class UnsupportedModelError(ValueError):
    """Requested estimator kind is recognized but deliberately not provided."""


@dataclass
class TrainedEstimator:
    kind: str
    payload: dict
    channels: tuple
    model: object
    adm: object
    conv: object
    scaler_in: object = None
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return 2 * len(self.channels)

    @property
    def n_outputs(self):
        return self.conv.b.shape[0]


def training_features(ds, noise, rows, stream=0):
    """Noisy features for the given dataset rows (deterministic per stream)."""
    return measurement.noisy_features(ds.z[rows], ds.channels, noise,
                                      ds.row_ids[rows], stream=stream)


def _noise_stream(ds, noise, rows, scaler):
    """Per-epoch standardized noisy-feature stream (noise augmentation).

    Measurements arrive as a stream in deployment, so every training epoch
    sees a fresh counter-keyed noise draw on the same true phasors; the
    validation draw stays fixed.  Returns None when there is no noise.
    """
    if noise is None:
        return None

    def stream(epoch):
        return scaler.transform(training_features(ds, noise, rows, stream=epoch))
    return stream


# --------------------------------------------------------------------------
# linear regression

def train_lr(ds, noise=None, ridge=1e-8):
    rows = ds.rows("train")
    x = training_features(ds, noise, rows)
    y = ds.y[rows]
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    gram = xc.T @ xc + ridge * np.eye(x.shape[1])
    try:
        w = np.linalg.solve(gram, xc.T @ (y - y_mean))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"degenerate feature matrix: {exc}") from exc
    intercept = y_mean - x_mean @ w
    model, adm, conv = _grid_objects(ds)
    return TrainedEstimator(kind="lr", payload={"w": w, "intercept": intercept},
                            channels=ds.channels, model=model, adm=adm, conv=conv,
                            meta={"ridge": ridge})


# --------------------------------------------------------------------------
# direct MLP

def train_direct_dnn(ds, noise, config):
    rows_tr, rows_va = ds.rows("train"), ds.rows("val")
    x_tr = training_features(ds, noise, rows_tr)
    x_va = training_features(ds, noise, rows_va)
    scaler_in = nn.Scaler.fit(x_tr)
    scaler_out = nn.Scaler.fit(ds.y[rows_tr])

    net = nn.init_network(nn.layer_dims_for(ds.n_features, ds.n_targets, config),
                          seed=config.seed)
    best, history = nn.train(net,
                             scaler_in.transform(x_tr), scaler_out.transform(ds.y[rows_tr]),
                             scaler_in.transform(x_va), scaler_out.transform(ds.y[rows_va]),
                             config,
                             feature_stream=_noise_stream(ds, noise, rows_tr, scaler_in))
    model, adm, conv = _grid_objects(ds)
    return TrainedEstimator(kind="direct", payload={"net": best, "scaler_out": scaler_out},
                            channels=ds.channels, model=model, adm=adm, conv=conv,
                            scaler_in=scaler_in, meta={"history": history})


# --------------------------------------------------------------------------
# indirect MLP (states first, then the power equations)

def train_indirect_dnn(ds, noise, config):
    rows_tr, rows_va = ds.rows("train"), ds.rows("val")
    x_tr = training_features(ds, noise, rows_tr)
    x_va = training_features(ds, noise, rows_va)
    states = np.hstack([ds.states_vm, ds.states_va])
    scaler_in = nn.Scaler.fit(x_tr)
    scaler_out = nn.Scaler.fit(states[rows_tr])

    net = nn.init_network(nn.layer_dims_for(ds.n_features, states.shape[1], config),
                          seed=config.seed)
    best, history = nn.train(net,
                             scaler_in.transform(x_tr), scaler_out.transform(states[rows_tr]),
                             scaler_in.transform(x_va), scaler_out.transform(states[rows_va]),
                             config,
                             feature_stream=_noise_stream(ds, noise, rows_tr, scaler_in))
    model, adm, conv = _grid_objects(ds)
    return TrainedEstimator(kind="indirect", payload={"net": best, "scaler_out": scaler_out},
                            channels=ds.channels, model=model, adm=adm, conv=conv,
                            scaler_in=scaler_in, meta={"history": history})


# --------------------------------------------------------------------------
# conservation-constrained MLPs

@dataclass(frozen=True)
class BinPartition:
    n_bin: int
    assignment: np.ndarray       # flow position -> bin id
    criterion_values: np.ndarray  # per-flow training std, MW

    def members(self, j):
        return np.flatnonzero(self.assignment == j)


def make_bins(flow_targets, n_bin):
    """Partition flow variables into n_bin groups of similar variability.

    Flows are sorted by training standard deviation and split into
    contiguous, near-equal-count groups (larger groups first).
    """
    flow_targets = np.asarray(flow_targets)
    m_b = flow_targets.shape[1]
    if not 1 <= n_bin <= m_b:
        raise ValueError(f"n_bin must lie in [1, {m_b}]")
    stds = flow_targets.std(axis=0)
    order = np.lexsort((np.arange(m_b), stds))  # by std, ties by position
    assignment = np.empty(m_b, dtype=int)
    for j, chunk in enumerate(np.array_split(order, n_bin)):
        assignment[chunk] = j
    return BinPartition(n_bin=n_bin, assignment=assignment, criterion_values=stds)


def pic_loss(y_true, flow_pred, conv, pinv=None):
    """Pseudoinverse-projected squared loss and its analytic gradient.

    loss = mean over batch and flow components of [P (y_true - B f)]^2 with
    P = (B^T B)^-1 B^T.  The gradient w.r.t. f is -2/(batch*m_b) * P r
    because B^T P^T P = P, i.e. the error signal to backpropagate is the
    projected residual itself.
    """
    p = pseudo_inverse(conv.b) if pinv is None else pinv
    resid = y_true - flow_pred @ conv.b.T
    delta = resid @ p.T
    denom = delta.size
    loss = float(np.mean(delta * delta))
    grad = (-2.0 / denom) * delta
    return loss, grad


def train_pic_dnn(ds, noise, config, n_bin=5):
    """Binned flow networks trained under the projected-residual loss.

    Every epoch: evaluate all bins on the batch, assemble flow predictions
    in flow order, apply the static stack layer y_hat = B f, project the
    residual through P, and backpropagate each bin's slice.  Residuals are
    measured in standardized units (per-flow training sigma), which by
    P B = I equals plain MSE against standardized projected targets.

    Validation selection is per bin: the projected loss decomposes exactly
    along bin slices, so each specialist network keeps the parameters of
    its own best epoch.
    """
    model, adm, conv = _grid_objects(ds)
    pinv = pseudo_inverse(conv.b)
    rows_tr, rows_va = ds.rows("train"), ds.rows("val")

    x_tr = training_features(ds, noise, rows_tr)
    x_va = training_features(ds, noise, rows_va)
    scaler_in = nn.Scaler.fit(x_tr)
    xs_tr = np.ascontiguousarray(scaler_in.transform(x_tr))
    xs_va = np.ascontiguousarray(scaler_in.transform(x_va))

    m_b = conv.n_flows
    bins = make_bins(ds.y[rows_tr][:, :m_b], n_bin)
    proj_tr = ds.y[rows_tr] @ pinv.T
    scaler_out = nn.Scaler.fit(proj_tr)

    members = [bins.members(j) for j in range(n_bin)]
    nets = [nn.init_network(nn.layer_dims_for(ds.n_features, len(mem), config),
                            seed=_bin_seed(config.seed, j))
            for j, mem in enumerate(members)]
    states = [nn.AdamState.for_network(net) for net in nets]

    y_tr = ds.y[rows_tr]
    y_va = ds.y[rows_va]
    sigma = scaler_out.stds
    mu = scaler_out.means

    def epoch_val_losses(current):
        """Overall and per-bin validation loss (the projected residual
        decomposes exactly along bin slices)."""
        f_std = np.empty((xs_va.shape[0], m_b))
        for j, net in enumerate(current):
            f_std[:, members[j]] = nn.forward_cached(net, xs_va)[-1]
        _, delta_w = _projected_residual(y_va, f_std, sigma, mu, conv, pinv)
        per_bin = np.array([float(np.mean(delta_w[:, mem] ** 2)) for mem in members])
        return float(np.mean(delta_w * delta_w)), per_bin

    history = {"train": [], "val": [], "best_epoch": -1}
    val_loss, per_bin = epoch_val_losses(nets)
    best = [net.copy() for net in nets]
    best_per_bin = per_bin
    best_epochs = [-1] * n_bin

    n = xs_tr.shape[0]
    if config.epochs > 0 and config.batch_size > n:
        raise ValueError("batch_size exceeds the training-set size")
    stream = _noise_stream(ds, noise, rows_tr, scaler_in)
    for epoch, epoch_batches in enumerate(
            nn.minibatch_plan(n, config.batch_size, config.epochs, config.seed)):
        xs_epoch = xs_tr if stream is None else np.ascontiguousarray(stream(epoch))
        running = 0.0
        for batch in epoch_batches:
            xb = np.ascontiguousarray(xs_epoch[batch])
            acts = [nn.forward_cached(net, xb) for net in nets]
            f_std = np.empty((len(batch), m_b))
            for j in range(n_bin):
                f_std[:, members[j]] = acts[j][-1]
            loss_val, delta_w = _projected_residual(y_tr[batch], f_std, sigma, mu,
                                                    conv, pinv)
            if not np.isfinite(loss_val):
                raise nn.TrainingDivergedError(
                    f"loss became {loss_val} at epoch {len(history['train'])}")
            grad_std = (-2.0 / delta_w.size) * delta_w
            for j, net in enumerate(nets):
                gw, gb = nn.backward_from_cache(net, xb, acts[j],
                                                np.ascontiguousarray(grad_std[:, members[j]]))
                nn.adam_step(net, gw, gb, states[j], config)
            running += loss_val * len(batch)
        val_loss, per_bin = epoch_val_losses(nets)
        history["train"].append(running / n)
        history["val"].append(val_loss)
        epoch = len(history["val"]) - 1
        # each specialist keeps its own best-validation parameters
        for j in range(n_bin):
            if per_bin[j] < best_per_bin[j]:
                best_per_bin[j] = per_bin[j]
                best[j] = nets[j].copy()
                best_epochs[j] = epoch
    history["best_epoch"] = max(best_epochs)
    history["best_epoch_per_bin"] = best_epochs

    return TrainedEstimator(kind="pic",
                            payload={"nets": best, "bins": bins,
                                     "scaler_out": scaler_out},
                            channels=ds.channels, model=model, adm=adm, conv=conv,
                            scaler_in=scaler_in,
                            meta={"history": history, "n_bin": n_bin})


def _projected_residual(y_mw, f_std, sigma, mu, conv, pinv):
    """Standardized projected residual via the explicit stack/project route.

    Returns (loss, delta) where delta = P (y - B f) / sigma; loss is its
    mean square.  By P B = I this equals (t_std - f_std) up to roundoff,
    with t_std the standardized projected targets.
    """
    f_mw = f_std * sigma + mu
    resid = y_mw - f_mw @ conv.b.T
    delta = (resid @ pinv.T) / sigma
    return float(np.mean(delta * delta)), delta


def _bin_seed(seed, j):
    return int(np.random.SeedSequence([int(seed), 0xB1, int(j)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# LSE adapter

def make_lse_estimator(ds, model=None):
    model, adm, conv = _grid_objects(ds, model)
    placement = measurement.PmuPlacement(
        buses=tuple(sorted({c.bus for c in ds.channels})), channels=ds.channels)
    lmm = lse_mod.build_measurement_model(model, adm, placement)
    if not lse_mod.check_observability(lmm):
        raise lse_mod.ObservabilityError(
            "LSE estimator requires a fully observable placement")
    return TrainedEstimator(kind="lse", payload={"h": lmm.h},
                            channels=ds.channels, model=model, adm=adm, conv=conv)


# --------------------------------------------------------------------------
# prediction

def predict(est, z):
    """Estimate flows and injections (MW) for noisy feature rows z (S x n)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != est.n_features:
        raise ValueError(f"expected {est.n_features} features, got {z.shape[1]}")

    if est.kind == "lr":
        return z @ est.payload["w"] + est.payload["intercept"]

    if est.kind == "direct":
        zs = est.scaler_in.transform(z)
        out = nn.forward(est.payload["net"], np.ascontiguousarray(zs))
        return est.payload["scaler_out"].inverse(out)

    if est.kind == "indirect":
        zs = est.scaler_in.transform(z)
        out = nn.forward(est.payload["net"], np.ascontiguousarray(zs))
        states = est.payload["scaler_out"].inverse(out)
        n_bus = states.shape[1] // 2
        v = states[:, :n_bus] * np.exp(1j * states[:, n_bus:])
        flows = branch_flows_from_voltages(v, est.model, est.adm)
        injections = bus_injections_from_voltages(v, est.model, est.adm)
        return np.hstack([flows, injections])

    if est.kind == "pic":
        zs = np.ascontiguousarray(est.scaler_in.transform(z))
        bins = est.payload["bins"]
        m_b = est.conv.n_flows
        f_std = np.empty((z.shape[0], m_b))
        for j, net in enumerate(est.payload["nets"]):
            f_std[:, bins.members(j)] = nn.forward(net, zs)
        flows = est.payload["scaler_out"].inverse(f_std)
        return np.hstack([flows, flows @ est.conv.a.T])

    if est.kind == "lse":
        phasors = measurement.features_to_phasors(z)
        h = est.payload["h"]
        q, r = np.linalg.qr(h)
        x = np.linalg.solve(r, np.conj(q.T) @ phasors.T).T
        slack = est.model.slack_position
        x = x * np.exp(-1j * np.angle(x[:, slack]))[:, None]
        flows = branch_flows_from_voltages(x, est.model, est.adm)
        injections = bus_injections_from_voltages(x, est.model, est.adm)
        return np.hstack([flows, injections])

    raise UnsupportedModelError(f"unknown estimator kind {est.kind!r}")


def timed_predict(est, z):
    """predict() plus wall-clock seconds per row."""
    start = time.perf_counter()
    out = predict(est, z)
    elapsed = time.perf_counter() - start
    return out, elapsed / max(1, out.shape[0])


def validation_rmse(est, ds, noise):
    """Scalar validation RMSE in MW (per-feature RMSE averaged over targets)."""
    rows = ds.rows("val")
    z = training_features(ds, noise, rows)
    pred = predict(est, z)
    per_feature = np.sqrt(np.mean((pred - ds.y[rows]) ** 2, axis=0))
    return float(np.mean(per_feature))


def train_kind(kind, ds, noise, config, n_bin=5):
    """Train one estimator by kind name (the CLI/search entry point)."""
    if kind == "lr":
        return train_lr(ds, noise)
    if kind == "direct":
        return train_direct_dnn(ds, noise, config)
    if kind == "indirect":
        return train_indirect_dnn(ds, noise, config)
    if kind == "pic":
        return train_pic_dnn(ds, noise, config, n_bin=n_bin)
    if kind == "lse":
        return make_lse_estimator(ds)
    if kind == "svr":
        raise UnsupportedModelError("svr: not implemented (out of scope)")
    raise UnsupportedModelError(f"unknown estimator kind {kind!r}")


# --------------------------------------------------------------------------
# shared grid objects and serialization

def _grid_objects(ds, model=None):
    """Model/admittance/conversion backing a dataset."""
    if model is not None:
        return model, build_admittance(model), build_conversion(model)
    if ds.grid is None:
        raise ValueError("dataset has no attached grid; use scenario.attach_grid")
    return ds.grid


def conversion_checksum(conv):
    return hashlib.sha256(np.ascontiguousarray(conv.b).tobytes()).hexdigest()[:16]


def save_estimator(est, path):
    doc = {
        "kind": est.kind,
        "model": est.model.name,
        "placement_buses": sorted({c.bus for c in est.channels}),
        "channels": [{"kind": c.kind, "bus": c.bus, "branch": c.branch, "end": c.end}
                     for c in est.channels],
        "conversion_checksum": conversion_checksum(est.conv),
        "meta": {k: v for k, v in est.meta.items() if k != "history"},
    }
    if est.scaler_in is not None:
        doc["scaler_in"] = nn.scaler_to_dict(est.scaler_in)
    payload = {}
    if est.kind == "lr":
        payload = {"w": est.payload["w"].tolist(),
                   "intercept": est.payload["intercept"].tolist()}
    elif est.kind in ("direct", "indirect"):
        payload = {"net": nn.network_to_dict(est.payload["net"]),
                   "scaler_out": nn.scaler_to_dict(est.payload["scaler_out"])}
    elif est.kind == "pic":
        bins = est.payload["bins"]
        payload = {"nets": [nn.network_to_dict(n) for n in est.payload["nets"]],
                   "scaler_out": nn.scaler_to_dict(est.payload["scaler_out"]),
                   "bins": {"n_bin": bins.n_bin,
                            "assignment": bins.assignment.tolist(),
                            "criterion_values": bins.criterion_values.tolist()}}
    elif est.kind == "lse":
        payload = {"h_re": est.payload["h"].real.tolist(),
                   "h_im": est.payload["h"].imag.tolist()}
    doc["payload"] = payload
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_estimator(path, model):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    adm = build_admittance(model)
    conv = build_conversion(model)
    if doc["conversion_checksum"] != conversion_checksum(conv):
        raise ValueError("estimator was trained against a different network topology")
    channels = tuple(measurement.Channel(kind=c["kind"], bus=c["bus"],
                                         branch=c["branch"], end=c["end"])
                     for c in doc["channels"])
    kind = doc["kind"]
    raw = doc["payload"]
    if kind == "lr":
        payload = {"w": np.array(raw["w"]), "intercept": np.array(raw["intercept"])}
    elif kind in ("direct", "indirect"):
        payload = {"net": nn.network_from_dict(raw["net"]),
                   "scaler_out": nn.scaler_from_dict(raw["scaler_out"])}
    elif kind == "pic":
        payload = {"nets": [nn.network_from_dict(d) for d in raw["nets"]],
                   "scaler_out": nn.scaler_from_dict(raw["scaler_out"]),
                   "bins": BinPartition(n_bin=raw["bins"]["n_bin"],
                                        assignment=np.array(raw["bins"]["assignment"]),
                                        criterion_values=np.array(
                                            raw["bins"]["criterion_values"]))}
    elif kind == "lse":
        payload = {"h": np.array(raw["h_re"]) + 1j * np.array(raw["h_im"])}
    else:
        raise UnsupportedModelError(f"unknown estimator kind {kind!r}")
    scaler_in = nn.scaler_from_dict(doc["scaler_in"]) if "scaler_in" in doc else None
    return TrainedEstimator(kind=kind, payload=payload, channels=channels,
                            model=model, adm=adm, conv=conv, scaler_in=scaler_in,
                            meta=doc.get("meta", {}))
