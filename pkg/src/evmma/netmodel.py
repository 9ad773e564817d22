"""Static network: bus/branch data, Y-bus assembly, Newton-Raphson power flow
and Kron reduction onto dynamic-device nodes.

All quantities are per-unit on the network's system MVA base.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

SLACK, PV, PQ = "slack", "pv", "pq"


class NetworkError(ValueError):
    pass


class PowerFlowError(RuntimeError):
    def __init__(self, message, mismatch=None, iterations=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = PQ
    v_mag: float = 1.0
    v_ang: float = 0.0
    p_inj: float = 0.0
    q_inj: float = 0.0
    shunt: complex = 0j


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_z: complex
    charging_b: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class Load:
    bus: int
    p: float
    q: float = 0.0


@dataclass
class AdmittanceMatrix:
    y: np.ndarray
    labels: list

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=complex)
        if self.y.ndim != 2 or self.y.shape[0] != self.y.shape[1]:
            raise NetworkError("admittance matrix must be square")
        if self.y.shape[0] != len(self.labels):
            raise NetworkError("labels do not match matrix size")

    def index(self, label):
        return self.labels.index(label)


@dataclass
class PowerFlowSolution:
    v: np.ndarray
    mismatch: float
    iterations: int
    bus_ids: list

    def s_injection(self, ybus: AdmittanceMatrix) -> np.ndarray:
        return self.v * np.conj(ybus.y @ self.v)

    def voltage(self, bus_id) -> complex:
        return self.v[self.bus_ids.index(bus_id)]


@dataclass
class Network:
    """Buses, branches and loads plus the generator records of a dataset.

    ``generators`` keeps the raw per-machine dictionaries (bus, dispatch and
    dynamic parameters); the dynamics module interprets them.
    """

    name: str
    base_mva: float
    buses: list
    branches: list
    loads: list = field(default_factory=list)
    generators: list = field(default_factory=list)

    def bus_ids(self):
        return [b.id for b in self.buses]

    def load_at(self, bus_id):
        p = sum(ld.p for ld in self.loads if ld.bus == bus_id)
        q = sum(ld.q for ld in self.loads if ld.bus == bus_id)
        return p, q

    def with_load(self, bus_id, p, q=None):
        """Copy with the total load at ``bus_id`` replaced by (p, q)."""
        if q is None:
            q = self.load_at(bus_id)[1]
        loads = [ld for ld in self.loads if ld.bus != bus_id]
        loads.append(Load(bus_id, p, q))
        return replace(self, loads=loads)

    def with_extra_load(self, bus_id, p, q=0.0):
        return replace(self, loads=list(self.loads) + [Load(bus_id, p, q)])

    def scheduled_buses(self):
        """Buses with generation and load folded into ``p_inj``/``q_inj``."""
        gen_p = {}
        for g in self.generators:
            gen_p[g["bus"]] = gen_p.get(g["bus"], 0.0) + g.get("p", 0.0)
        out = []
        for b in self.buses:
            pl, ql = self.load_at(b.id)
            out.append(replace(b, p_inj=b.p_inj + gen_p.get(b.id, 0.0) - pl,
                               q_inj=b.q_inj - ql))
        return out


def _check_ids(buses, branches):
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError(f"duplicate bus id(s): {dup}")
    known = set(ids)
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise NetworkError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus} connects a bus to itself")
        if abs(br.series_z) == 0:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
    return ids


def build_ybus(buses, branches) -> AdmittanceMatrix:
    """Nodal admittance matrix with Y[i, j] = -y_ij / tap off the diagonal.

    Off-nominal taps sit on the ``from`` side (MATPOWER convention).
    """
    ids = _check_ids(buses, branches)
    pos = {bid: k for k, bid in enumerate(ids)}
    y = np.zeros((len(ids), len(ids)), dtype=complex)
    for b in buses:
        y[pos[b.id], pos[b.id]] += b.shunt
    for br in branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / br.series_z
        half_b = 0.5j * br.charging_b
        a = br.tap if br.tap else 1.0
        y[f, f] += (ys + half_b) / a**2
        y[t, t] += ys + half_b
        y[f, t] -= ys / a
        y[t, f] -= ys / a
    return AdmittanceMatrix(y, ids)


def solve_power_flow(buses, branches, tol=1e-8, max_iter=50) -> PowerFlowSolution:
    """Polar Newton-Raphson from a flat start.

    Slack and PV buses start at their set-point magnitude; every angle except
    the slack's starts at the slack angle.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    kinds = [b.kind for b in buses]
    if kinds.count(SLACK) != 1:
        raise NetworkError("network needs exactly one slack bus")
    ybus = build_ybus(buses, branches)
    Y = ybus.y
    n = len(buses)
    slack = kinds.index(SLACK)
    pv = [k for k in range(n) if kinds[k] == PV]
    pq = [k for k in range(n) if kinds[k] == PQ]
    vm = np.array([b.v_mag if b.kind in (SLACK, PV) else 1.0 for b in buses])
    if np.any(vm[[slack] + pv] <= 0):
        raise NetworkError("slack/PV voltage set-points must be positive")
    va = np.full(n, buses[slack].v_ang)
    s_spec = np.array([complex(b.p_inj, b.q_inj) for b in buses])

    pvpq = pv + pq
    npvpq = len(pvpq)

    def mismatch(v):
        s = v * np.conj(Y @ v)
        ds = s - s_spec
        return np.concatenate([ds.real[pvpq], ds.imag[pq]])

    v = vm * np.exp(1j * va)
    f = mismatch(v)
    it = 0
    while np.max(np.abs(f), initial=0.0) > tol:
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(max mismatch {np.max(np.abs(f)):.3e} pu)",
                mismatch=float(np.max(np.abs(f))), iterations=it)
        ibus = Y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
        ds_dvm = diag_v @ np.conj(Y @ vnorm) + np.conj(diag_i) @ vnorm
        J = np.block([
            [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
            [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -f)
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        it += 1
    return PowerFlowSolution(v=v, mismatch=float(np.max(np.abs(f), initial=0.0)),
                             iterations=it, bus_ids=[b.id for b in buses])


def kron_reduce(ybus: AdmittanceMatrix, keep_nodes) -> AdmittanceMatrix:
    """y_red = y_kk - y_ke y_ee^-1 y_ek over the kept labels (in given order)."""
    labels = ybus.labels
    missing = [k for k in keep_nodes if k not in labels]
    if missing:
        raise NetworkError(f"keep_nodes not in matrix: {missing}")
    k_idx = [labels.index(k) for k in keep_nodes]
    e_idx = [i for i in range(len(labels)) if i not in set(k_idx)]
    Y = ybus.y
    ykk = Y[np.ix_(k_idx, k_idx)]
    if not e_idx:
        return AdmittanceMatrix(ykk.copy(), list(keep_nodes))
    yee = Y[np.ix_(e_idx, e_idx)]
    yke = Y[np.ix_(k_idx, e_idx)]
    yek = Y[np.ix_(e_idx, k_idx)]
    if np.linalg.cond(yee) > 1e14:
        raise NetworkError("eliminated block is singular")
    y_red = ykk - yke @ np.linalg.solve(yee, yek)
    return AdmittanceMatrix(y_red, list(keep_nodes))


def eliminated_voltage_map(ybus: AdmittanceMatrix, keep_nodes, wanted):
    """Matrix R with V[wanted] = R @ V[keep] for a Kron-reduced network."""
    labels = ybus.labels
    k_idx = [labels.index(k) for k in keep_nodes]
    e_idx = [i for i in range(len(labels)) if i not in set(k_idx)]
    R = np.zeros((len(wanted), len(k_idx)), dtype=complex)
    if e_idx:
        Y = ybus.y
        full = -np.linalg.solve(Y[np.ix_(e_idx, e_idx)], Y[np.ix_(e_idx, k_idx)])
    for r, w in enumerate(wanted):
        if w in keep_nodes:
            R[r, list(keep_nodes).index(w)] = 1.0
        else:
            R[r] = full[e_idx.index(labels.index(w))]
    return R


# -- dataset I/O -------------------------------------------------------------

def network_from_dict(data) -> Network:
    base = float(data.get("base_mva", 100.0))
    buses = []
    for b in data["buses"]:
        sh = b.get("shunt", [0.0, 0.0])
        buses.append(Bus(id=int(b["id"]), kind=b.get("kind", PQ),
                         v_mag=float(b.get("v_mag", 1.0)),
                         v_ang=float(b.get("v_ang", 0.0)),
                         shunt=complex(sh[0], sh[1])))
    branches = []
    for br in data["branches"]:
        n_par = int(br.get("circuits", 1))
        z = complex(br.get("r", 0.0), br["x"]) / n_par
        branches.append(Branch(int(br["from"]), int(br["to"]), z,
                               float(br.get("b", 0.0)) * n_par,
                               float(br.get("tap", 1.0)) or 1.0))
    loads = [Load(int(ld["bus"]), float(ld["p"]), float(ld.get("q", 0.0)))
             for ld in data.get("loads", [])]
    gens = [dict(g) for g in data.get("generators", [])]
    return Network(data.get("name", "network"), base, buses, branches, loads, gens)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


DATASETS = {"kundur2area": "kundur2area.json", "ieee39": "ieee39.json"}


def builtin_network(name) -> Network:
    if name not in DATASETS:
        raise KeyError(f"unknown dataset {name!r}; available: {sorted(DATASETS)}")
    ref = resources.files("evmma") / "data" / DATASETS[name]
    return network_from_dict(json.loads(ref.read_text()))


def resolve_network(spec) -> Network:
    """Accept a built-in name, a JSON path or an inline dict."""
    if isinstance(spec, Network):
        return spec
    if isinstance(spec, dict):
        return network_from_dict(spec)
    if spec in DATASETS:
        return builtin_network(spec)
    return load_network(Path(spec))
