"""Purely PMU-based linear state estimation and its baseline noise study.

With PMUs reporting complex voltage and current phasors, the measurement
map from complex bus voltages to channel phasors is linear.  States are
recovered by complex least squares through a QR factorization (never the
normal equations), then rebased so the slack angle is zero.

The baseline study tabulates estimation error under no noise, Gaussian
noise, and mixture noise at a fully observable placement.  The Gaussian
column is calibrated by reading the 1% total-vector-error figure as a
compliance bound sitting at three sigma (RMS TVE = 1/3 %); see
docs/noise-calibration.md for why an RMS-matched Gaussian cannot serve as
the degraded-performance comparator for a linear estimator.
"""

from dataclasses import dataclass

import numpy as np

from . import measurement
from .netmodel import build_admittance, build_conversion
from .powerflow import (BusStateVector, branch_flows_from_voltages,
                        bus_injections_from_voltages, FlowInjectionVector)

# 1% TVE read as a ~3-sigma compliance bound for the Gaussian comparator
TVE_BOUND = 0.01
GAUSSIAN_RMS_TVE = TVE_BOUND / 3.0


class ObservabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearMeasurementModel:
    h: np.ndarray               # channels x n_bus, complex
    placement: measurement.PmuPlacement


def build_measurement_model(model, adm, placement):
    n = model.n_bus
    rows = {pos: k for k, pos in enumerate(adm.branch_rows)}
    yf = adm.y_from.toarray()
    yt = adm.y_to.toarray()
    h = np.zeros((len(placement.channels), n), dtype=complex)
    for c, ch in enumerate(placement.channels):
        if ch.kind == measurement.VOLTAGE:
            h[c, model.bus_position(ch.bus)] = 1.0
        else:
            k = rows[ch.branch]
            h[c] = yf[k] if ch.end == "from" else yt[k]
    return LinearMeasurementModel(h=h, placement=placement)


def check_observability(lmm):
    """True iff the measurement map has full column rank over bus voltages."""
    n = lmm.h.shape[1]
    if lmm.h.shape[0] < n:
        return False
    s = np.linalg.svd(lmm.h, compute_uv=False)
    return bool(np.sum(s > n * np.finfo(float).eps * s[0]) == n)


def solve_states_complex(lmm, z):
    """Complex least-squares states for z of shape (channels,) or (S, channels).

    Returns raw (un-rebased) complex voltages minimizing ||z - h x||_2.
    """
    q, r = np.linalg.qr(lmm.h)
    rhs = np.conj(q.T) @ (np.asarray(z, dtype=complex).T if np.ndim(z) > 1 else z)
    x = np.linalg.solve(r, rhs)
    return x.T if np.ndim(z) > 1 else x


def estimate_states(lmm, z, slack_position):
    """Least-squares state estimate in polar form, slack angle rebased to 0."""
    if not check_observability(lmm):
        raise ObservabilityError("placement does not observe every bus voltage")
    x = solve_states_complex(lmm, z)
    x = x * np.exp(-1j * np.angle(x[..., slack_position]))[..., None] \
        if np.ndim(z) > 1 else x * np.exp(-1j * np.angle(x[slack_position]))
    return BusStateVector(v_mag=np.abs(x), v_ang=np.angle(x))


def lse_flow_injection(lmm, z, model, adm=None):
    """Flows and injections computed from the estimated states (the indirect
    voltage-first path)."""
    if adm is None:
        adm = build_admittance(model)
    state = estimate_states(lmm, z, model.slack_position)
    v = state.v_mag * np.exp(1j * state.v_ang)
    return FlowInjectionVector(flows=branch_flows_from_voltages(v, model, adm),
                               injections=bus_injections_from_voltages(v, model, adm))


# --------------------------------------------------------------------------
# baseline study: error vs noise family

def _rmse(err_matrix):
    """Pooled root mean square error over all samples and features.

    One scalar per quantity class, the usual convention when a table
    reports a single RMSE per row.
    """
    return float(np.sqrt(np.mean(np.asarray(err_matrix) ** 2)))


def lse_noise_study(model, placement, voltages, noise_seed=0):
    """Estimation error of the LSE path per noise family.

    voltages: solved complex states (samples x n_bus).  Returns a nested
    dict: rows v_mag (pu), v_ang (deg), flow (MW), injection (MW); columns
    none / gaussian / gmm.
    """
    adm = build_admittance(model)
    lmm = build_measurement_model(model, adm, placement)
    if not check_observability(lmm):
        raise ObservabilityError("baseline study needs an observable placement")

    truth = measurement.true_phasors(voltages, model, adm, placement)
    keys = np.array([ch.key() for ch in placement.channels], dtype=np.uint64)
    sample_ids = np.arange(truth.shape[0])

    flows_true = branch_flows_from_voltages(voltages, model, adm)
    inj_true = bus_injections_from_voltages(voltages, model, adm)
    vm_true = np.abs(voltages)
    va_true = np.angle(voltages)

    noises = {
        "none": None,
        "gaussian": measurement.gaussian_noise_model(GAUSSIAN_RMS_TVE, seed=noise_seed),
        "gmm": measurement.default_gmm_model(seed=noise_seed + 1),
    }
    table = {row: {} for row in ("v_mag", "v_ang", "flow", "injection")}
    slack = model.slack_position
    for col, noise in noises.items():
        z = truth if noise is None else measurement.apply_gmm_noise(
            truth, noise, sample_ids=sample_ids, channel_keys=keys)
        x = solve_states_complex(lmm, z)
        x = x * np.exp(-1j * np.angle(x[:, slack]))[:, None]
        flows = branch_flows_from_voltages(x, model, adm)
        inj = bus_injections_from_voltages(x, model, adm)
        table["v_mag"][col] = _rmse(np.abs(x) - vm_true)
        table["v_ang"][col] = _rmse(np.rad2deg(_wrap(np.angle(x) - va_true)))
        table["flow"][col] = _rmse(flows - flows_true)
        table["injection"][col] = _rmse(inj - inj_true)
    return table


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi
