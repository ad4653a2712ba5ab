#!/usr/bin/env python3
"""Regenerate the committed power-flow fixtures.

The fixtures are produced by a solver that shares no code with the package
solver: admittance assembly is re-derived here from the branch model,
voltages are rectangular (e + jf) instead of polar, the equations are solved
by scipy.optimize.root (MINPACK hybrd with forward-difference Jacobian)
instead of a hand-written Newton iteration, and convergence is accepted only
after an explicit residual check.  Agreement between the package solver and
these files therefore checks the physics, not the implementation.

Usage: python scripts/make_fixtures.py
"""

import pathlib

import numpy as np
from scipy.optimize import root

from flowcast.netmodel import BusKind, load_case

FIXDIR = pathlib.Path(__file__).resolve().parent.parent / "src/flowcast/data/fixtures"


def assemble_ybus(model):
    """Independent pi-model admittance assembly (dense, loop-based)."""
    n = model.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in model.branches:
        if not br.in_service:
            continue
        i = model.bus_position(br.from_bus)
        j = model.bus_position(br.to_bus)
        ys = 1.0 / (br.r + 1j * br.x)
        bc = 1j * br.total_charging_b / 2.0
        t = br.tap_ratio * np.exp(1j * br.phase_shift)
        y[i, i] += (ys + bc) / (t * np.conj(t))
        y[j, j] += ys + bc
        y[i, j] += -ys / np.conj(t)
        y[j, i] += -ys / t
    for k, bus in enumerate(model.buses):
        y[k, k] += bus.shunt_g + 1j * bus.shunt_b
    return y


def solve_rectangular(model, xtol=1e-13):
    y = assemble_ybus(model)
    n = model.n_bus
    slack = model.slack_position

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for i, bus in enumerate(model.buses):
        p_spec[i] -= bus.load_p / model.base_power
        q_spec[i] -= bus.load_q / model.base_power
    for g in model.generators:
        if g.in_service:
            i = model.bus_position(g.bus)
            p_spec[i] += g.p_mw / model.base_power
            q_spec[i] += g.q_mvar / model.base_power

    kinds = [b.kind for b in model.buses]
    pv = [i for i in range(n) if kinds[i] is BusKind.PV]
    pq = [i for i in range(n) if kinds[i] is BusKind.PQ]
    vset = np.array([b.v_setpoint for b in model.buses])
    others = [i for i in range(n) if i != slack]

    def unpack(x):
        v = np.empty(n, dtype=complex)
        v[slack] = vset[slack]
        v[others] = x[: n - 1] + 1j * x[n - 1:]
        return v

    def residual(x):
        v = unpack(x)
        s = v * np.conj(y @ v)
        res = []
        for i in others:
            res.append(s.real[i] - p_spec[i])
            if i in set(pv):
                res.append(abs(v[i]) ** 2 - vset[i] ** 2)
            else:
                res.append(s.imag[i] - q_spec[i])
        return np.array(res)

    x0 = np.concatenate([np.where([i in set(pv) for i in others], vset[others], 1.0),
                         np.zeros(n - 1)])
    sol = root(residual, x0, method="hybr", options={"xtol": xtol, "maxfev": 400 * len(x0)})
    res = residual(sol.x)
    if np.max(np.abs(res)) > 1e-9:
        raise RuntimeError(f"oracle residual too large: {np.max(np.abs(res)):.3e}")
    v = unpack(sol.x)
    v = v * np.exp(-1j * np.angle(v[slack]))  # slack angle rebased to zero
    return v, float(np.max(np.abs(res)))


def main():
    FIXDIR.mkdir(parents=True, exist_ok=True)
    for name in ("toy3", "wscc9", "ieee118"):
        model = load_case(name)
        v, res = solve_rectangular(model)
        out = FIXDIR / f"pf_{name}.csv"
        with open(out, "w", encoding="utf-8") as f:
            f.write("bus_id,v_mag_pu,v_ang_rad\n")
            for bus, vi in zip(model.buses, v):
                f.write(f"{bus.id},{float(abs(vi))!r},{float(np.angle(vi))!r}\n")
        print(f"{out.name}: residual {res:.2e}, "
              f"vm range [{np.abs(v).min():.4f}, {np.abs(v).max():.4f}]")

    # admittance fixture for the tapped/shifted 3-bus case
    model = load_case("toy3")
    y = assemble_ybus(model)
    out = FIXDIR / "ybus_toy3.csv"
    with open(out, "w", encoding="utf-8") as f:
        f.write("row,col,real,imag\n")
        for i in range(model.n_bus):
            for j in range(model.n_bus):
                if y[i, j] != 0:
                    f.write(f"{i},{j},{float(y[i, j].real)!r},{float(y[i, j].imag)!r}\n")
    print(f"{out.name}: {np.count_nonzero(y)} entries")


if __name__ == "__main__":
    main()
