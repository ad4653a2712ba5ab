"""Transmission network model: case-file parsing and matrix construction.

The case format is a documented subset of the widely used matrix-based
transmission case format (see docs/case-format.md): a baseMVA scalar plus
bus/gen/branch tables.  From a parsed model this module builds

* the complex bus admittance matrix and the per-branch-end current maps,
* the 0/1 conversion matrices relating directed branch-end flows to bus
  injections (injection = sum of incident branch-end flows).

All constructed objects are immutable after construction and safe to share
across threads.
"""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np
import scipy.sparse as sp


class CaseSyntaxError(ValueError):
    """Malformed case text; message carries the offending line number."""


class CaseSemanticError(ValueError):
    """Structurally invalid network (dangling branch, no slack, ...)."""


class BusKind(Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    load_p: float          # MW
    load_q: float          # MVAr
    shunt_g: float         # per-unit conductance
    shunt_b: float         # per-unit susceptance
    base_kv: float
    v_setpoint: float      # per-unit, meaningful for PV/slack


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float               # per-unit
    x: float               # per-unit
    total_charging_b: float
    tap_ratio: float       # 1.0 when no transformer
    phase_shift: float     # radians
    in_service: bool


@dataclass(frozen=True)
class Generator:
    bus: int
    p_mw: float
    q_mvar: float
    v_setpoint: float
    in_service: bool


@dataclass(frozen=True)
class NetworkModel:
    name: str
    base_power: float      # MVA
    buses: tuple
    branches: tuple
    generators: tuple
    _bus_pos: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_pos", {b.id: i for i, b in enumerate(self.buses)})

    def bus_position(self, bus_id):
        return self._bus_pos[bus_id]

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def slack_position(self):
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def in_service_branches(self):
        """Positions (into self.branches) of in-service branches, in order."""
        return [i for i, br in enumerate(self.branches) if br.in_service]

    def load_buses(self):
        """Positions of buses carrying load (nonzero P or Q demand)."""
        return [i for i, b in enumerate(self.buses) if b.load_p != 0.0 or b.load_q != 0.0]


# --------------------------------------------------------------------------
# parsing

_ASSIGN_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line):
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_number(token, lineno):
    try:
        return float(token)
    except ValueError:
        raise CaseSyntaxError(f"line {lineno}: expected a number, got {token!r}") from None


def parse_case(text, name="case"):
    """Parse case text into a validated NetworkModel.

    Raises CaseSyntaxError for malformed text (with a line number) and
    CaseSemanticError for structural problems.
    """
    base_mva = None
    tables = {}

    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        line = raw.strip()
        i += 1
        if not line:
            continue
        m = _ASSIGN_RE.match(line)
        if m is None:
            # function header or stray matlab syntax; tolerate known forms
            if line.startswith("function") or line == "];" or line.endswith(";") and "=" not in line:
                continue
            raise CaseSyntaxError(f"line {i}: unrecognized statement {line!r}")
        key, rest = m.group(1), m.group(2).strip()
        if rest.startswith("["):
            rows = []
            body = rest[1:]
            lineno = i
            closed = "]" in body
            chunks = [(body, lineno)]
            while not closed:
                if i >= len(lines):
                    raise CaseSyntaxError(f"line {lineno}: unterminated matrix for mpc.{key}")
                nxt = _strip_comment(lines[i])
                i += 1
                chunks.append((nxt, i))
                closed = "]" in nxt
            for chunk, ln in chunks:
                chunk = chunk.split("]")[0]
                for rowtext in chunk.split(";"):
                    rowtext = rowtext.strip()
                    if not rowtext:
                        continue
                    rows.append([_parse_number(t, ln) for t in rowtext.split()])
            tables[key] = rows
        else:
            value = rest.rstrip(";").strip()
            if key == "baseMVA":
                base_mva = _parse_number(value, i)
            # other scalar/string assignments (version, names) are ignored

    if base_mva is None:
        raise CaseSyntaxError("missing mpc.baseMVA assignment")
    if base_mva <= 0:
        raise CaseSemanticError(f"baseMVA must be positive, got {base_mva}")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseSyntaxError(f"missing mpc.{required} table")

    gen_rows = tables.get("gen", [])
    gen_v = {}
    generators = []
    for row in gen_rows:
        if len(row) < 10:
            raise CaseSyntaxError("gen row needs at least 10 columns")
        g = Generator(bus=int(row[0]), p_mw=row[1], q_mvar=row[2],
                      v_setpoint=row[5], in_service=row[7] != 0)
        generators.append(g)
        if g.in_service:
            gen_v[g.bus] = g.v_setpoint

    buses = []
    for row in tables["bus"]:
        if len(row) < 13:
            raise CaseSyntaxError("bus row needs at least 13 columns")
        bus_id = int(row[0])
        kind_code = int(row[1])
        try:
            kind = BusKind(kind_code)
        except ValueError:
            raise CaseSemanticError(f"bus {bus_id}: unknown bus type {kind_code}") from None
        base_kv = row[9]
        if base_kv <= 0:
            raise CaseSemanticError(f"bus {bus_id}: base_kv must be positive")
        vset = gen_v.get(bus_id, row[7] if row[7] > 0 else 1.0)
        if kind is not BusKind.PQ and not 0.5 < vset < 1.5:
            raise CaseSemanticError(f"bus {bus_id}: voltage setpoint {vset} out of range")
        buses.append(Bus(id=bus_id, kind=kind, load_p=row[2], load_q=row[3],
                         shunt_g=row[4] / base_mva, shunt_b=row[5] / base_mva,
                         base_kv=base_kv, v_setpoint=vset))

    branches = []
    for row in tables["branch"]:
        if len(row) < 11:
            raise CaseSyntaxError("branch row needs at least 11 columns")
        ratio = row[8] if row[8] != 0 else 1.0
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]),
                               r=row[2], x=row[3], total_charging_b=row[4],
                               tap_ratio=ratio, phase_shift=np.deg2rad(row[9]),
                               in_service=row[10] != 0))

    model = NetworkModel(name=name, base_power=base_mva, buses=tuple(buses),
                         branches=tuple(branches), generators=tuple(generators))
    validate(model)
    return model


def validate(model):
    ids = [b.id for b in model.buses]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseSemanticError(f"duplicate bus ids: {dupes}")
    known = set(ids)
    for k, br in enumerate(model.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseSemanticError(f"branch {k}: endpoint bus {end} does not exist")
        if br.r == 0.0 and br.x == 0.0:
            raise CaseSemanticError(f"branch {k} ({br.from_bus}-{br.to_bus}): r = x = 0")
        if br.tap_ratio <= 0:
            raise CaseSemanticError(f"branch {k}: tap ratio must be positive")
    for g in model.generators:
        if g.bus not in known:
            raise CaseSemanticError(f"generator references unknown bus {g.bus}")
    slacks = [b.id for b in model.buses if b.kind is BusKind.SLACK]
    if len(slacks) != 1:
        raise CaseSemanticError(f"expected exactly one slack bus, found {slacks or 'none'}")
    return model


def load_case(path_or_name):
    """Load a case from a file path or a bundled case name (e.g. 'ieee118')."""
    name = str(path_or_name)
    if name.endswith(".m"):
        with open(name, encoding="utf-8") as f:
            return parse_case(f.read(), name=name.rsplit("/", 1)[-1][:-2])
    ref = resources.files("flowcast.data").joinpath(f"cases/{name}.m")
    if not ref.is_file():
        raise FileNotFoundError(f"no such case file or bundled case: {path_or_name}")
    return parse_case(ref.read_text(encoding="utf-8"), name=name)


def bundled_case_names():
    base = resources.files("flowcast.data").joinpath("cases")
    return sorted(p.name[:-2] for p in base.iterdir() if p.name.endswith(".m"))


# --------------------------------------------------------------------------
# JSON round trip

def model_to_json(model):
    doc = {
        "name": model.name,
        "base_power_mva": model.base_power,
        "buses": [
            {"id": b.id, "kind": b.kind.name, "load_p_mw": b.load_p, "load_q_mvar": b.load_q,
             "shunt_g_pu": b.shunt_g, "shunt_b_pu": b.shunt_b, "base_kv": b.base_kv,
             "v_setpoint_pu": b.v_setpoint}
            for b in model.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r_pu": br.r, "x_pu": br.x,
             "charging_b_pu": br.total_charging_b, "tap_ratio": br.tap_ratio,
             "phase_shift_rad": br.phase_shift, "in_service": br.in_service}
            for br in model.branches
        ],
        "generators": [
            {"bus": g.bus, "p_mw": g.p_mw, "q_mvar": g.q_mvar,
             "v_setpoint_pu": g.v_setpoint, "in_service": g.in_service}
            for g in model.generators
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text):
    doc = json.loads(text)
    buses = tuple(
        Bus(id=d["id"], kind=BusKind[d["kind"]], load_p=d["load_p_mw"], load_q=d["load_q_mvar"],
            shunt_g=d["shunt_g_pu"], shunt_b=d["shunt_b_pu"], base_kv=d["base_kv"],
            v_setpoint=d["v_setpoint_pu"])
        for d in doc["buses"]
    )
    branches = tuple(
        Branch(from_bus=d["from"], to_bus=d["to"], r=d["r_pu"], x=d["x_pu"],
               total_charging_b=d["charging_b_pu"], tap_ratio=d["tap_ratio"],
               phase_shift=d["phase_shift_rad"], in_service=d["in_service"])
        for d in doc["branches"]
    )
    generators = tuple(
        Generator(bus=d["bus"], p_mw=d["p_mw"], q_mvar=d["q_mvar"],
                  v_setpoint=d["v_setpoint_pu"], in_service=d["in_service"])
        for d in doc["generators"]
    )
    return validate(NetworkModel(name=doc["name"], base_power=doc["base_power_mva"],
                                 buses=buses, branches=branches, generators=generators))


# --------------------------------------------------------------------------
# admittance construction

@dataclass(frozen=True)
class AdmittanceSet:
    """Bus admittance matrix and branch-end current maps (per unit).

    y_from/y_to rows follow branch_rows (positions of in-service branches);
    a row applied to the complex bus-voltage vector yields the current
    flowing into the branch at that end.
    """
    y_bus: sp.csr_matrix
    y_from: sp.csr_matrix
    y_to: sp.csr_matrix
    branch_rows: tuple


def build_admittance(model):
    n = model.n_bus
    rows = model.in_service_branches()
    nb = len(rows)

    yff = np.zeros(nb, dtype=complex)
    yft = np.zeros(nb, dtype=complex)
    ytf = np.zeros(nb, dtype=complex)
    ytt = np.zeros(nb, dtype=complex)
    f_idx = np.zeros(nb, dtype=int)
    t_idx = np.zeros(nb, dtype=int)

    for k, pos in enumerate(rows):
        br = model.branches[pos]
        if br.r == 0.0 and br.x == 0.0:
            raise CaseSemanticError(f"branch {pos}: singular impedance")
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.total_charging_b
        tap = br.tap_ratio * np.exp(1j * br.phase_shift)
        ytt[k] = ys + bc
        yff[k] = (ys + bc) / (tap * np.conj(tap))
        yft[k] = -ys / np.conj(tap)
        ytf[k] = -ys / tap
        f_idx[k] = model.bus_position(br.from_bus)
        t_idx[k] = model.bus_position(br.to_bus)

    k_range = np.arange(nb)
    y_from = sp.csr_matrix(
        (np.concatenate([yff, yft]), (np.concatenate([k_range, k_range]),
                                      np.concatenate([f_idx, t_idx]))),
        shape=(nb, n), dtype=complex)
    y_to = sp.csr_matrix(
        (np.concatenate([ytf, ytt]), (np.concatenate([k_range, k_range]),
                                      np.concatenate([f_idx, t_idx]))),
        shape=(nb, n), dtype=complex)

    shunt = np.array([complex(b.shunt_g, b.shunt_b) for b in model.buses])
    cf = sp.csr_matrix((np.ones(nb), (k_range, f_idx)), shape=(nb, n))
    ct = sp.csr_matrix((np.ones(nb), (k_range, t_idx)), shape=(nb, n))
    y_bus = cf.T @ y_from + ct.T @ y_to + sp.diags(shunt)
    return AdmittanceSet(y_bus=y_bus.tocsr(), y_from=y_from, y_to=y_to,
                         branch_rows=tuple(rows))


# --------------------------------------------------------------------------
# flow/injection conversion matrices

FROM_END = "from"
TO_END = "to"


@dataclass(frozen=True)
class ConversionMatrix:
    """0/1 maps from directed branch-end flows to bus injections.

    flow_index orders the flow variables: both ends of every in-service
    branch, from-end first, in branch order.  a has one row per bus;
    a[i, k] = 1 iff flow k is measured at bus i's end.  b stacks the
    identity above a, so [flows; injections] = b @ flows.
    """
    a: np.ndarray
    b: np.ndarray
    flow_index: tuple      # (branch position, end) pairs
    injection_index: tuple  # bus ids in model order

    @property
    def n_flows(self):
        return self.a.shape[1]


def build_conversion(model):
    rows = model.in_service_branches()
    flow_index = []
    owners = []
    for pos in rows:
        br = model.branches[pos]
        flow_index.append((pos, FROM_END))
        owners.append(model.bus_position(br.from_bus))
        flow_index.append((pos, TO_END))
        owners.append(model.bus_position(br.to_bus))

    m_b = len(flow_index)
    a = np.zeros((model.n_bus, m_b))
    a[owners, np.arange(m_b)] = 1.0
    b = np.vstack([np.eye(m_b), a])
    return ConversionMatrix(a=a, b=b, flow_index=tuple(flow_index),
                            injection_index=tuple(bus.id for bus in model.buses))


def pseudo_inverse(b):
    """(b^T b)^-1 b^T for a full-column-rank 0/1 stack matrix."""
    btb = b.T @ b
    return np.linalg.solve(btb, b.T)


def require_zero_shunt_conductance(model):
    bad = [b.id for b in model.buses if b.shunt_g != 0.0]
    if bad:
        raise CaseSemanticError(
            f"buses {bad} have nonzero shunt conductance; bus injections would "
            "no longer equal the sum of incident branch-end flows")
