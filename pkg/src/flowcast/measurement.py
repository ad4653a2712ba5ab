"""PMU placements, phasor channel evaluation, and measurement noise.

A PMU placed on a bus reports that bus's voltage phasor plus one current
phasor per incident in-service branch end.  Noise is applied per phasor in
polar form: relative magnitude error in percent, additive angle error in
degrees, drawn from a two-component Gaussian mixture whose component index
is shared between a phasor's magnitude and angle draws.

Randomness is counter-based (see counterrng): keyed by (sample id, channel
identity), so draws are independent of evaluation order and of how many
other channels exist.
"""

from dataclasses import dataclass

import numpy as np

from . import counterrng

VOLTAGE = "v"
CURRENT = "i"


@dataclass(frozen=True)
class Channel:
    kind: str              # VOLTAGE or CURRENT
    bus: int               # bus id owning the channel
    branch: int = -1       # branch position (CURRENT only)
    end: str = ""          # "from" / "to" (CURRENT only)

    def key(self):
        """Stable integer identity used for counter-based noise streams."""
        if self.kind == VOLTAGE:
            return int(self.bus)
        return (1 << 40) | (int(self.branch) << 1) | (1 if self.end == "to" else 0)

    def label(self):
        if self.kind == VOLTAGE:
            return f"V{self.bus}"
        return f"I{self.bus}.br{self.branch}.{self.end}"


@dataclass(frozen=True)
class PmuPlacement:
    buses: tuple
    channels: tuple


def placement_for_buses(model, buses):
    """Build the full channel set for PMUs on the given bus ids."""
    buses = tuple(sorted(dict.fromkeys(buses)))
    known = {b.id for b in model.buses}
    missing = [b for b in buses if b not in known]
    if missing:
        raise ValueError(f"placement references unknown buses {missing}")
    channels = [Channel(kind=VOLTAGE, bus=b) for b in buses]
    placed = set(buses)
    for pos, br in enumerate(model.branches):
        if not br.in_service:
            continue
        if br.from_bus in placed:
            channels.append(Channel(kind=CURRENT, bus=br.from_bus, branch=pos, end="from"))
        if br.to_bus in placed:
            channels.append(Channel(kind=CURRENT, bus=br.to_bus, branch=pos, end="to"))
    return PmuPlacement(buses=buses, channels=tuple(channels))


def default_hv_placement(model):
    """PMUs on every bus at the network's highest voltage level."""
    top_kv = max(b.base_kv for b in model.buses)
    return placement_for_buses(model, [b.id for b in model.buses if b.base_kv == top_kv])


def true_phasors(voltages, model, adm, placement):
    """Noiseless channel phasors for complex voltages (... x n_bus).

    Voltage channels return the bus voltage; current channels the branch-end
    current, both per unit.
    """
    v = np.asarray(voltages)
    rows = {pos: k for k, pos in enumerate(adm.branch_rows)}
    i_from = v @ adm.y_from.T.toarray() if v.ndim > 1 else adm.y_from @ v
    i_to = v @ adm.y_to.T.toarray() if v.ndim > 1 else adm.y_to @ v
    out = np.empty(v.shape[:-1] + (len(placement.channels),), dtype=complex)
    for c, ch in enumerate(placement.channels):
        if ch.kind == VOLTAGE:
            out[..., c] = v[..., model.bus_position(ch.bus)]
        else:
            if ch.branch not in rows:
                raise ValueError(f"channel {ch.label()} references an out-of-service branch")
            k = rows[ch.branch]
            out[..., c] = i_from[..., k] if ch.end == "from" else i_to[..., k]
    return out


def feature_names(channels):
    names = []
    for ch in channels:
        names.append(ch.label() + ".re")
        names.append(ch.label() + ".im")
    return names


def phasors_to_features(phasors):
    """Interleave re/im per channel: (..., C) complex -> (..., 2C) real."""
    z = np.empty(phasors.shape[:-1] + (2 * phasors.shape[-1],))
    z[..., 0::2] = phasors.real
    z[..., 1::2] = phasors.imag
    return z


def features_to_phasors(features):
    return features[..., 0::2] + 1j * features[..., 1::2]


# --------------------------------------------------------------------------
# noise models

@dataclass(frozen=True)
class GmmNoiseModel:
    """Mixture noise: magnitudes in percent (relative), angles in degrees."""
    weights: tuple
    mag_means: tuple
    mag_stds: tuple
    ang_means: tuple
    ang_stds: tuple
    seed: int = 0

    def __post_init__(self):
        if not np.isclose(sum(self.weights), 1.0):
            raise ValueError("mixture weights must sum to 1")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError("mixture weights must lie in [0, 1]")
        if any(s < 0 for s in self.mag_stds + self.ang_stds):
            raise ValueError("standard deviations must be nonnegative")

    def reseeded(self, seed):
        from dataclasses import replace
        return replace(self, seed=int(seed))


def default_gmm_model(seed=0):
    """Two-component mixture representative of field PMU error studies;
    stays within the 1% total-vector-error class (sampled RMS TVE 0.77%)."""
    return GmmNoiseModel(weights=(0.4, 0.6),
                         mag_means=(-0.4, 0.6), mag_stds=(0.25, 0.25),
                         ang_means=(-0.2, 0.3), ang_stds=(0.12, 0.12),
                         seed=seed)


def gaussian_noise_model(tve_target, seed=0):
    """Single-component zero-mean noise with analytic RMS TVE = tve_target.

    The TVE variance is split equally between magnitude and angle, so
    sigma_mag (fraction) = sigma_ang (radians) = tve_target / sqrt(2).
    """
    if tve_target < 0:
        raise ValueError("tve_target must be nonnegative")
    sigma = tve_target / np.sqrt(2.0)
    return GmmNoiseModel(weights=(1.0, 0.0),
                         mag_means=(0.0, 0.0), mag_stds=(100.0 * sigma, 0.0),
                         ang_means=(0.0, 0.0), ang_stds=(np.rad2deg(sigma), 0.0),
                         seed=seed)


def apply_gmm_noise(phasors, noise, sample_ids=None, channel_keys=None, stream=0):
    """Corrupt phasors with mixture noise; shape and ordering are preserved.

    phasors may be 1-D (one sample) or 2-D (samples x channels).  sample_ids
    and channel_keys fix the counter-based random streams; they default to
    positional indices.  stream selects an independent draw for the same
    (sample, channel) keys, e.g. one per training epoch.
    """
    z = np.asarray(phasors, dtype=complex)
    samples = z.reshape(1, -1) if z.ndim == 1 else z
    n_s, n_c = samples.shape
    if sample_ids is None:
        sample_ids = np.arange(n_s)
    if channel_keys is None:
        channel_keys = np.arange(n_c)
    sid = np.asarray(sample_ids, dtype=np.uint64).reshape(-1, 1)
    cid = np.asarray(channel_keys, dtype=np.uint64).reshape(1, -1)
    if sid.shape[0] != n_s or cid.shape[1] != n_c:
        raise ValueError("sample_ids/channel_keys lengths do not match phasor block")

    base = 8 * int(stream)
    u = counterrng.uniform(noise.seed, sid, cid, base + 0)
    comp = (u >= noise.weights[0]).astype(int)
    z_mag = counterrng.normal(noise.seed, sid, cid, base + 1)
    z_ang = counterrng.normal(noise.seed, sid, cid, base + 3)

    mag_mean = np.take(noise.mag_means, comp)
    mag_std = np.take(noise.mag_stds, comp)
    ang_mean = np.take(noise.ang_means, comp)
    ang_std = np.take(noise.ang_stds, comp)

    dmag = (mag_mean + mag_std * z_mag) / 100.0
    dang = np.deg2rad(ang_mean + ang_std * z_ang)
    noisy = np.abs(samples) * (1.0 + dmag) * np.exp(1j * (np.angle(samples) + dang))
    return noisy.reshape(z.shape)


def noisy_features(features, channels, noise, sample_ids=None, stream=0):
    """Apply phasor noise to an interleaved re/im feature block."""
    if noise is None:
        return np.array(features, copy=True)
    phasors = features_to_phasors(np.asarray(features))
    keys = np.array([ch.key() for ch in channels], dtype=np.uint64)
    return phasors_to_features(apply_gmm_noise(phasors, noise, sample_ids, keys,
                                               stream=stream))


def compute_tve(true, measured):
    """Total vector error per element: |measured - true| / |true|."""
    true = np.asarray(true, dtype=complex)
    measured = np.asarray(measured, dtype=complex)
    if true.shape != measured.shape:
        raise ValueError("shape mismatch")
    mag = np.abs(true)
    if np.any(mag == 0):
        raise ValueError("TVE undefined for zero true phasor")
    return np.abs(measured - true) / mag
