"""AC power flow (polar Newton-Raphson) and flow/injection evaluation.

The solver uses a full Jacobian, flat start, and no reactive-limit
switching; it exists to generate large numbers of solved operating points,
so robustness and determinism matter more than operational fidelity.

Internally everything is per-unit; megawatts appear only at the
flow/injection boundary.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netmodel import BusKind, build_admittance, require_zero_shunt_conductance


class PowerFlowError(RuntimeError):
    pass


class ConvergenceError(PowerFlowError):
    def __init__(self, iterations, mismatch):
        super().__init__(f"no convergence after {iterations} iterations "
                         f"(max mismatch {mismatch:.3e} pu)")
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass(frozen=True)
class BusStateVector:
    """Polar bus voltages; the slack angle is exactly zero."""
    v_mag: np.ndarray
    v_ang: np.ndarray

    def complex_voltages(self):
        return self.v_mag * np.exp(1j * self.v_ang)


@dataclass(frozen=True)
class FlowInjectionVector:
    flows: np.ndarray        # MW, ordered by ConversionMatrix.flow_index
    injections: np.ndarray   # MW, bus order


def _specified_injections(model):
    """Net complex power injection (per unit) specified at each bus."""
    n = model.n_bus
    p = np.zeros(n)
    q = np.zeros(n)
    for i, bus in enumerate(model.buses):
        p[i] -= bus.load_p
        q[i] -= bus.load_q
    for g in model.generators:
        if g.in_service:
            i = model.bus_position(g.bus)
            p[i] += g.p_mw
            q[i] += g.q_mvar
    return (p + 1j * q) / model.base_power


def solve_powerflow(model, tol=1e-8, max_iter=20, adm=None, with_stats=False):
    """Newton-Raphson solution in polar coordinates.

    Returns a BusStateVector with max |power mismatch| below tol at every
    PV/PQ equation (and a stats dict when with_stats is set).  Raises
    ConvergenceError or PowerFlowError (singular Jacobian).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if adm is None:
        adm = build_admittance(model)
    ybus = adm.y_bus.tocsr()
    n = model.n_bus

    kinds = np.array([b.kind for b in model.buses], dtype=object)
    pv = np.flatnonzero(kinds == BusKind.PV)
    pq = np.flatnonzero(kinds == BusKind.PQ)
    slack = model.slack_position
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(n)
    va = np.zeros(n)
    setpoints = np.array([b.v_setpoint for b in model.buses])
    fixed = np.concatenate([pv, [slack]]).astype(int)
    vm[fixed] = setpoints[fixed]

    s_spec = _specified_injections(model)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        ds = s - s_spec
        return np.concatenate([ds.real[pvpq], ds.imag[pq]]), v

    f, v = mismatch(vm, va)
    iterations = 0
    while np.max(np.abs(f)) >= tol:
        if iterations >= max_iter:
            raise ConvergenceError(max_iter, float(np.max(np.abs(f))))
        iterations += 1

        ibus = ybus @ v
        diag_v = sp.diags(v).tocsr()
        diag_i = sp.diags(ibus).tocsr()
        diag_vn = sp.diags(v / vm).tocsr()
        ds_dvm = diag_v @ (ybus @ diag_vn).conjugate() + diag_i.conjugate() @ diag_vn
        ds_dva = (1j * diag_v) @ (diag_i - ybus @ diag_v).conjugate()
        ds_dvm = ds_dvm.tocsr()
        ds_dva = ds_dva.tocsr()

        j11 = ds_dva[pvpq, :][:, pvpq].real
        j12 = ds_dvm[pvpq, :][:, pq].real
        j21 = ds_dva[pq, :][:, pvpq].imag
        j22 = ds_dvm[pq, :][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")

        try:
            dx = spla.spsolve(jac, -f)
        except RuntimeError as exc:
            raise PowerFlowError(f"Jacobian solve failed: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular Jacobian")

        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        f, v = mismatch(vm, va)

    va = va - va[slack]
    state = BusStateVector(v_mag=vm, v_ang=va)
    if with_stats:
        return state, {"iterations": iterations, "mismatch": float(np.max(np.abs(f)))}
    return state


# --------------------------------------------------------------------------
# flow and injection evaluation

def branch_flows_from_voltages(v, model, adm):
    """Directed-end active flows in MW for complex voltages v (... x n_bus)."""
    v = np.asarray(v)
    rows = adm.branch_rows
    f_idx = np.array([model.bus_position(model.branches[p].from_bus) for p in rows])
    t_idx = np.array([model.bus_position(model.branches[p].to_bus) for p in rows])
    i_from = v @ adm.y_from.T.toarray() if v.ndim > 1 else adm.y_from @ v
    i_to = v @ adm.y_to.T.toarray() if v.ndim > 1 else adm.y_to @ v
    p_from = (v[..., f_idx] * np.conj(i_from)).real * model.base_power
    p_to = (v[..., t_idx] * np.conj(i_to)).real * model.base_power
    flows = np.empty(p_from.shape[:-1] + (2 * len(rows),))
    flows[..., 0::2] = p_from
    flows[..., 1::2] = p_to
    return flows


def bus_injections_from_voltages(v, model, adm):
    """Net active injections in MW via the admittance double sum.

    Requires zero shunt conductance so that the result equals the sum of
    incident branch-end flows exactly.
    """
    require_zero_shunt_conductance(model)
    v = np.asarray(v)
    if v.ndim > 1:
        s = v * np.conj(v @ adm.y_bus.T.toarray())
    else:
        s = v * np.conj(adm.y_bus @ v)
    return s.real * model.base_power


def branch_flows(state, model, adm=None):
    if adm is None:
        adm = build_admittance(model)
    if len(state.v_mag) != model.n_bus:
        raise ValueError("state dimension does not match model")
    return branch_flows_from_voltages(state.complex_voltages(), model, adm)


def bus_injections(state, model, adm=None):
    if adm is None:
        adm = build_admittance(model)
    if len(state.v_mag) != model.n_bus:
        raise ValueError("state dimension does not match model")
    return bus_injections_from_voltages(state.complex_voltages(), model, adm)


def flow_injection_vector(state, model, adm=None):
    if adm is None:
        adm = build_admittance(model)
    return FlowInjectionVector(flows=branch_flows(state, model, adm),
                               injections=bus_injections(state, model, adm))


# --------------------------------------------------------------------------
# scenario dispatch

def apply_scenario(model, load_multipliers):
    """Scale loads and redispatch generation for one scenario.

    load_multipliers maps bus positions of load buses (model.load_buses()
    order) to dimensionless factors.  Generator outputs scale
    proportionally so total generation tracks total scenario load times the
    base-case loss allowance; the slack absorbs the residual.
    """
    load_pos = model.load_buses()
    if len(load_multipliers) != len(load_pos):
        raise ValueError("one multiplier per load bus required")

    base_load = sum(model.buses[i].load_p for i in load_pos)
    base_gen = sum(g.p_mw for g in model.generators if g.in_service)
    loss_allowance = base_gen / base_load if base_load > 0 else 1.0

    buses = list(model.buses)
    new_load = 0.0
    for mult, pos in zip(load_multipliers, load_pos):
        b = buses[pos]
        buses[pos] = replace(b, load_p=b.load_p * mult, load_q=b.load_q * mult)
        new_load += b.load_p * mult

    k = (new_load * loss_allowance) / base_gen if base_gen > 0 else 1.0
    gens = tuple(replace(g, p_mw=g.p_mw * k) if g.in_service else g
                 for g in model.generators)
    return replace(model, buses=tuple(buses), generators=gens)
