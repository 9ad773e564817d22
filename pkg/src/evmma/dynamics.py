"""Device models, network interface and the fixed-step simulation engine.

Generators use the third-order flux-decay model with a first-order static
exciter. The aggregated charging pile is a six-state grid-following
converter (PLL + PQ control + lagged current loop) in load convention: the
current it draws and the power it consumes are positive when charging.

Angles live in the synchronous reference frame; rotor speed is in rad/s.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .netmodel import (
    Branch, Bus, Load, NetworkError, PQ, build_ybus, kron_reduce,
    eliminated_voltage_map, solve_power_flow,
)

OMEGA0_60HZ = 2 * math.pi * 60.0


class SimulationError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


# -- parameter and state records ---------------------------------------------

@dataclass(frozen=True)
class GeneratorParams:
    t_j: float
    d: float
    t_d0p: float
    x_d: float
    x_dp: float
    x_q: float
    k_a: float
    t_a: float
    omega0: float = OMEGA0_60HZ
    p_m0: float = 0.0
    u_ref: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.t_j) <= 0) or np.any(np.asarray(self.t_d0p) <= 0) \
                or np.any(np.asarray(self.t_a) <= 0):
            raise ValueError("t_j, t_d0p and t_a must be positive")
        if np.any(np.asarray(self.k_a) < 1):
            raise ValueError("exciter gain k_a must be >= 1")


@dataclass(frozen=True)
class GeneratorState:
    delta: float
    omega: float
    e_qp: float
    e_f: float


@dataclass(frozen=True)
class GeneratorAlgebraic:
    i_d: float
    i_q: float
    u_t: float
    p_e: float


@dataclass(frozen=True)
class PileParams:
    kp1: float = 0.25
    ki1: float = 1.0
    kp2: float = 0.25
    ki2: float = 1.0
    kp3: float = 5.0225
    ki3: float = 80.52
    tau1: float = 0.02
    tau2: float = 0.02
    q_ref: float = 0.0
    x_f: float = 0.1

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("current-loop delays must be positive")


@dataclass(frozen=True)
class PileState:
    x_pll: float
    theta_pll: float
    x1: float
    i_d: float
    x2: float
    i_q: float

    def as_array(self):
        return np.array([self.x_pll, self.theta_pll, self.x1, self.i_d, self.x2, self.i_q])


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 20.0
    integrator: str = "rk4"
    record_signals: tuple = ()
    record_every: int = 1

    def __post_init__(self):
        if not 0 < self.dt <= 0.01:
            raise ConfigurationError("dt must lie in (0, 0.01] s")
        if self.t_end <= 0:
            raise ConfigurationError("t_end must be positive")
        if self.integrator not in ("rk4", "trapezoidal"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")


@dataclass
class Trace:
    time: np.ndarray
    channels: dict

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        for name, values in self.channels.items():
            if len(values) != len(self.time):
                raise ValueError(f"channel {name} length mismatch")

    def __getitem__(self, name):
        return self.channels[name]

    def window(self, t0, t1=None):
        mask = self.time >= t0
        if t1 is not None:
            mask &= self.time <= t1
        return Trace(self.time[mask], {k: v[mask] for k, v in self.channels.items()})

    def to_csv(self, path):
        names = list(self.channels)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + names)
            cols = [self.time] + [self.channels[n] for n in names]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    def to_json(self, path=None):
        data = {"time": self.time.tolist(),
                "channels": {k: np.asarray(v).tolist() for k, v in self.channels.items()}}
        if path is None:
            return json.dumps(data)
        with open(path, "w") as fh:
            json.dump(data, fh)

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        return cls(body[:, 0], {n: body[:, k + 1] for k, n in enumerate(header[1:])})


# -- device equations -----------------------------------------------------------

def generator_derivatives(state, params, algebraic, u_e=0.0):
    """(d delta, d omega, d E'q, d Ef) of the flux-decay machine + static exciter.

    Works element-wise, so array-valued fields evaluate a whole fleet at once.
    """
    p = params
    d_delta = state.omega - p.omega0
    d_omega = p.omega0 / p.t_j * (p.p_m0 - algebraic.p_e) - p.d / p.t_j * (state.omega - p.omega0)
    d_eqp = (-(state.e_qp + (p.x_d - p.x_dp) * algebraic.i_d) + state.e_f) / p.t_d0p
    d_ef = (-state.e_f + p.k_a * (p.u_ref - algebraic.u_t) + p.k_a * u_e) / p.t_a
    return np.array([d_delta, d_omega, d_eqp, d_ef])


def park(grid_voltage, theta):
    """(u_gd, u_gq) of a network-frame phasor in the PLL frame."""
    z = grid_voltage * np.exp(-1j * theta)
    return -z.imag, z.real


def pile_current(state):
    """Network-frame current drawn by the pile (pile per-unit)."""
    return (state.i_q - 1j * state.i_d) * np.exp(1j * state.theta_pll)


def pile_powers(u_gd, u_gq, i_d, i_q):
    return u_gd * i_d + u_gq * i_q, u_gq * i_d - u_gd * i_q


def pile_derivatives(state, params, p_ref, grid_voltage):
    """Six state derivatives of the charging-pile converter model.

    ``grid_voltage`` is the complex voltage at the converter terminal, the
    point where the PLL measures. Power and voltages are in pile per-unit.
    """
    k = params
    u_gd, u_gq = park(grid_voltage, state.theta_pll)
    p_e, q_e = pile_powers(u_gd, u_gq, state.i_d, state.i_q)
    i_qref = state.x1 + k.kp1 * (p_ref - p_e)
    i_dref = state.x2 + k.kp2 * (k.q_ref - q_e)
    return np.array([
        -u_gd,
        -k.kp3 * u_gd + k.ki3 * state.x_pll,
        k.ki1 * (p_ref - p_e),
        (i_dref - state.i_d) / k.tau2,
        k.ki2 * (k.q_ref - q_e),
        (i_qref - state.i_q) / k.tau1,
    ])


@dataclass
class ReducedNetwork:
    """Kron-reduced admittance over voltage sources plus the pile terminal.

    Sources are generator internal nodes (behind x'_d) followed by any fixed
    voltage sources; the optional last node is the pile terminal.
    """

    y: np.ndarray
    n_gen: int
    n_fixed: int = 0
    has_pile: bool = True
    fixed_voltage: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    def __post_init__(self):
        ns = self.n_gen + self.n_fixed
        self.y = np.asarray(self.y, dtype=complex)
        if self.y.shape != (ns + self.has_pile,) * 2:
            raise NetworkError("reduced matrix size does not match device count")
        self.y_ss = self.y[:ns, :ns]
        if self.has_pile:
            self.y_sp = self.y[:ns, ns]
            self.y_ps = self.y[ns, :ns]
            self.y_pp = self.y[ns, ns]
            if abs(self.y_pp) < 1e-12:
                raise NetworkError("pile node is isolated")


def network_interface(delta, e_qp, x_dp, net: ReducedNetwork, i_pile=0j):
    """Solve the reduced network for machine currents and the pile voltage.

    ``i_pile`` is the current drawn at the pile node in system per-unit.
    Returns (GeneratorAlgebraic with array fields, pile terminal voltage).
    """
    e = e_qp * np.exp(1j * np.asarray(delta))
    src = np.concatenate([e, net.fixed_voltage]) if net.n_fixed else e
    if net.has_pile:
        v_p = (-i_pile - net.y_ps @ src) / net.y_pp
        i_src = net.y_ss @ src + net.y_sp * v_p
    else:
        v_p = None
        i_src = net.y_ss @ src
    i_g = i_src[:net.n_gen]
    rot = i_g * np.exp(-1j * np.asarray(delta))
    i_q, i_d = rot.real, -rot.imag
    v_t = e - 1j * x_dp * i_g
    p_e = e_qp * i_q
    return GeneratorAlgebraic(i_d=i_d, i_q=i_q, u_t=np.abs(v_t), p_e=p_e), v_p


# -- assembled system -----------------------------------------------------------

GEN_STATES = ("delta", "omega", "Eqp", "Efd")
PILE_STATES = ("x_pll", "theta_pll", "x1", "i_d", "x2", "i_q")


class _Vec:
    """Attribute view over slices of a state vector."""

    __slots__ = ("delta", "omega", "e_qp", "e_f")

    def __init__(self, delta, omega, e_qp, e_f):
        self.delta, self.omega, self.e_qp, self.e_f = delta, omega, e_qp, e_f


@dataclass
class DynamicSystem:
    """Generators, optional aggregated pile and their reduced network.

    ``pile_rating`` is the pile base in system per-unit; the pile equations
    run in pile per-unit and the network in system per-unit.
    """

    gen_names: list
    gen: GeneratorParams  # array-valued fields
    net: ReducedNetwork
    pile: PileParams | None = None
    pile_rating: float = 1.0
    x0: np.ndarray | None = None
    p_ref0: float = 0.0
    bus_map: np.ndarray | None = None
    bus_labels: list = field(default_factory=list)

    @property
    def n_gen(self):
        return len(self.gen_names)

    @property
    def n_states(self):
        return 4 * self.n_gen + (6 if self.pile is not None else 0)

    def state_labels(self):
        labels = [f"{g}.{s}" for s in GEN_STATES for g in self.gen_names]
        if self.pile is not None:
            labels += [f"pile.{s}" for s in PILE_STATES]
        return labels

    def split(self, x):
        m = self.n_gen
        g = _Vec(x[:m], x[m:2 * m], x[2 * m:3 * m], x[3 * m:4 * m])
        p = PileState(*x[4 * m:4 * m + 6]) if self.pile is not None else None
        return g, p

    def evaluate(self, x, p_ref=None, u_e=0.0):
        """Return (dx/dt, algebraics dict) at state ``x``.

        ``p_ref`` is the pile active-power command in pile per-unit.
        """
        g, ps = self.split(x)
        if p_ref is None:
            p_ref = self.p_ref0
        i_sys = 0j
        if ps is not None:
            i_sys = pile_current(ps) * self.pile_rating
        alg, v_p = network_interface(g.delta, g.e_qp, self.gen.x_dp, self.net, i_sys)
        dx = np.empty_like(x)
        m = self.n_gen
        if m:
            dx[:4 * m] = generator_derivatives(g, self.gen, alg, u_e).ravel()
        out = {"alg": alg, "v_pile": v_p}
        if ps is not None:
            dx[4 * m:] = pile_derivatives(ps, self.pile, p_ref, v_p)
            u_gd, u_gq = park(v_p, ps.theta_pll)
            pe, qe = pile_powers(u_gd, u_gq, ps.i_d, ps.i_q)
            out.update(pile_pe=pe, pile_qe=qe, u_gd=u_gd)
        return dx, out

    def f(self, x, p_ref=None, u_e=0.0):
        return self.evaluate(x, p_ref, u_e)[0]

    def bus_voltages(self, x):
        """Voltages at the recorded network buses (system per-unit)."""
        g, ps = self.split(x)
        i_sys = pile_current(ps) * self.pile_rating if ps is not None else 0j
        e = g.e_qp * np.exp(1j * g.delta)
        src = np.concatenate([e, self.net.fixed_voltage]) if self.net.n_fixed else e
        _, v_p = network_interface(g.delta, g.e_qp, self.gen.x_dp, self.net, i_sys)
        kept = np.concatenate([src, [v_p]]) if self.net.has_pile else src
        return self.bus_map @ kept

    def shifted(self, x, angle):
        """State with every rotor angle and the PLL angle advanced by ``angle``."""
        y = np.array(x, dtype=float)
        m = self.n_gen
        y[:m] += angle
        if self.pile is not None:
            y[4 * m + 1] += angle
        return y


def _gen_params_from_records(records, omega0):
    arr = lambda key, default=None: np.array([float(r.get(key, default)) for r in records])
    h = arr("h")
    return GeneratorParams(
        t_j=2.0 * h, d=arr("d", 0.0), t_d0p=arr("t_d0p"), x_d=arr("x_d"),
        x_dp=arr("x_dp"), x_q=arr("x_q"), k_a=arr("k_a"), t_a=arr("t_a"),
        omega0=omega0, p_m0=np.zeros(len(records)), u_ref=np.ones(len(records)))


def build_system(network, pile=None, pile_bus=None, pile_load=0.0, pile_rating=None,
                 gen_overrides=None, record_buses=(), omega0=OMEGA0_60HZ, pf_tol=1e-10):
    """Power flow, load-to-admittance conversion, Kron reduction and state init.

    The pile (if any) connects to ``pile_bus`` through its filter reactance
    and draws ``pile_load`` (system per-unit) at unity power factor at its
    terminal. Every other load becomes a constant admittance.
    """
    records = [dict(g) for g in network.generators]
    for rec in records:
        rec.update((gen_overrides or {}).get(rec["name"], {}))
    names = [r["name"] for r in records]
    gp = _gen_params_from_records(records, omega0)
    if np.any(gp.k_a < 1):
        raise ValueError("exciter gain k_a must be >= 1")

    buses = list(network.scheduled_buses())
    # PV set-points may be overridden per generator record
    vset = {r["bus"]: r["v"] for r in records if "v" in r}
    buses = [replace(b, v_mag=vset.get(b.id, b.v_mag)) if b.kind != PQ else b for b in buses]
    branches = list(network.branches)
    loads = list(network.loads)

    has_pile = pile is not None
    if has_pile:
        if pile_bus not in network.bus_ids():
            raise NetworkError(f"pile bus {pile_bus} not in network")
        rating = float(pile_rating if pile_rating else pile_load)
        if rating <= 0:
            raise ValueError("pile rating must be positive")
        term = "pile"
        buses.append(Bus(id=term, kind=PQ, p_inj=-pile_load, q_inj=0.0))
        branches.append(Branch(pile_bus, term, complex(0.0, pile.x_f / rating)))
    else:
        rating = 1.0

    sol = solve_power_flow(buses, branches, tol=pf_tol)
    v = dict(zip(sol.bus_ids, sol.v))

    # constant-admittance loads at the operating point
    shunt_add = {}
    for ld in loads:
        shunt_add[ld.bus] = shunt_add.get(ld.bus, 0j) + complex(ld.p, -ld.q) / abs(v[ld.bus]) ** 2
    dyn_buses = [replace(b, shunt=b.shunt + shunt_add.get(b.id, 0j)) for b in buses]
    int_nodes = [f"{n}:int" for n in names]
    dyn_buses += [Bus(id=lab, kind=PQ) for lab in int_nodes]
    dyn_branches = branches + [Branch(r["bus"], lab, complex(0.0, float(r["x_dp"])))
                               for r, lab in zip(records, int_nodes)]
    ybus = build_ybus(dyn_buses, dyn_branches)
    keep = int_nodes + (["pile"] if has_pile else [])
    y_red = kron_reduce(ybus, keep)
    net = ReducedNetwork(y_red.y, n_gen=len(names), has_pile=has_pile)
    bus_map = eliminated_voltage_map(ybus, keep, list(record_buses)) if record_buses else None

    # machine initial conditions from terminal conditions
    yfull = build_ybus(buses, branches)
    s_inj = sol.s_injection(yfull)
    e0 = np.empty(len(names), complex)
    for k, r in enumerate(records):
        vt = v[r["bus"]]
        pl, ql = network.load_at(r["bus"])
        s_gen = s_inj[sol.bus_ids.index(r["bus"])] + complex(pl, ql)
        i_g = np.conj(s_gen / vt)
        e0[k] = vt + 1j * float(r["x_dp"]) * i_g
    delta0, eqp0 = np.angle(e0), np.abs(e0)

    if has_pile:
        vt = v["pile"]
        i_draw = np.conj(complex(pile_load, 0.0) / vt) / rating
        th = np.angle(vt)
        rot = i_draw * np.exp(-1j * th)
        p0 = PileState(0.0, th, rot.real, -rot.imag, -rot.imag, rot.real)
        i_sys = i_draw * rating
    else:
        i_sys = 0j
    alg, v_p = network_interface(delta0, eqp0, gp.x_dp, net, i_sys)
    ef0 = eqp0 + (gp.x_d - gp.x_dp) * alg.i_d
    gp = replace(gp, p_m0=alg.p_e.copy(), u_ref=alg.u_t + ef0 / gp.k_a)
    x0 = np.concatenate([delta0, np.full(len(names), omega0), eqp0, ef0])
    p_ref0 = 0.0
    if has_pile:
        # align the PLL with the voltage the network actually returns
        th = np.angle(v_p)
        rot = (i_sys / rating) * np.exp(-1j * th)
        p0 = PileState(0.0, th, rot.real, -rot.imag, -rot.imag, rot.real)
        x0 = np.concatenate([x0, p0.as_array()])
        p_ref0 = pile_load / rating
    system = DynamicSystem(names, gp, net, pile, rating, x0, p_ref0,
                           bus_map=bus_map, bus_labels=list(record_buses))
    if has_pile:
        # refine: one Newton pass on the pile's own algebraic loop
        _settle_pile(system)
    system.power_flow = sol
    return system


def _settle_pile(system):
    """Polish the pile initial state so its derivatives vanish to round-off."""
    from scipy.optimize import fsolve

    m = system.n_gen
    x = system.x0.copy()

    def resid(z):
        y = x.copy()
        y[4 * m + 1] = z[0]
        y[4 * m + 3] = z[1]
        y[4 * m + 5] = z[2]
        dx, out = system.evaluate(y)
        return [out["u_gd"], out["pile_qe"] - system.pile.q_ref, out["pile_pe"] - system.p_ref0]

    z0 = [x[4 * m + 1], x[4 * m + 3], x[4 * m + 5]]
    with warnings.catch_warnings():
        # round-off floor reached before xtol: the residual is already ~1e-16
        warnings.simplefilter("ignore", RuntimeWarning)
        z = fsolve(resid, z0, xtol=1e-14)
    x[4 * m + 1], x[4 * m + 3], x[4 * m + 5] = z
    x[4 * m + 2] = z[2]
    x[4 * m + 4] = z[1]
    x[4 * m + 0] = 0.0
    system.x0 = x
    # machines see the refined pile current; re-derive their balance
    g, _ = system.split(x)
    i_sys = pile_current(PileState(*x[4 * m:])) * system.pile_rating
    alg, _ = network_interface(g.delta, g.e_qp, system.gen.x_dp, system.net, i_sys)
    if m:
        ef0 = g.e_qp + (system.gen.x_d - system.gen.x_dp) * alg.i_d
        x[3 * m:4 * m] = ef0
        system.gen = replace(system.gen, p_m0=alg.p_e.copy(),
                             u_ref=alg.u_t + ef0 / system.gen.k_a)


def stiff_source_system(pile, p_ref, v_source=1.0):
    """A single pile behind its filter reactance on an infinite bus (pile base)."""
    y = 1.0 / complex(0.0, pile.x_f)
    net = ReducedNetwork(np.array([[y, -y], [-y, y]]), n_gen=0, n_fixed=1, has_pile=True,
                         fixed_voltage=np.array([complex(v_source)]))
    empty = np.zeros(0)
    gp = GeneratorParams.__new__(GeneratorParams)
    object.__setattr__(gp, "x_dp", empty)
    system = DynamicSystem([], gp, net, pile, 1.0, None, p_ref)
    i0 = complex(p_ref / v_source, 0.0)
    vt = v_source - 1j * pile.x_f * i0
    th = np.angle(vt)
    rot = i0 * np.exp(-1j * th)
    system.x0 = np.array([0.0, th, rot.real, -rot.imag, -rot.imag, rot.real])
    _settle_pile(system)
    return system


# -- time integration -----------------------------------------------------------

def _rk4_step(f, t, x, dt):
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _trap_step(f, t, x, dt):
    """Trapezoidal rule solved by fixed-point/Newton-free iteration (Heun start)."""
    fx = f(t, x)
    y = x + dt * fx
    for _ in range(20):
        y_new = x + 0.5 * dt * (fx + f(t + dt, y))
        if np.max(np.abs(y_new - y)) < 1e-12:
            return y_new
        y = y_new
    return y


@dataclass
class Controls:
    """Time-varying inputs of a run.

    ``p_ref(t)`` returns the pile command in system per-unit. Controllers
    expose ``period``, ``measure(system, x, out)`` and ``update(t, y)``
    returning the per-generator supplementary exciter signal.
    """

    p_ref: object = None
    controllers: list = field(default_factory=list)


def simulate(system: DynamicSystem, config: SimConfig, controls: Controls | None = None,
             x0=None) -> Trace:
    """Fixed-step integration of ``system`` from ``x0`` (default: equilibrium)."""
    controls = controls or Controls()
    x = np.array(system.x0 if x0 is None else x0, dtype=float)
    dt = config.dt
    n_steps = int(round(config.t_end / dt))
    m = system.n_gen
    rating = system.pile_rating
    p_fun = controls.p_ref

    for c in controls.controllers:
        ratio = c.period / dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigurationError(
                f"integration step {dt} s does not divide controller period {c.period} s")
    ctrl_every = [int(round(c.period / dt)) for c in controls.controllers]
    u_e = np.zeros(m)

    def rhs(t, state):
        pr = p_fun(t) / rating if p_fun is not None else None
        return system.evaluate(state, pr, u_e)[0]

    step = _rk4_step if config.integrator == "rk4" else _trap_step
    every = max(1, int(config.record_every))
    n_rec = n_steps // every + 1
    wanted = list(config.record_signals) or default_signals(system)
    rec = {name: np.empty(n_rec) for name in wanted}
    t_rec = np.empty(n_rec)

    k_rec = 0
    for k in range(n_steps + 1):
        t = k * dt
        need_ctrl = any(k % e == 0 for e in ctrl_every)
        need_rec = k % every == 0
        if need_ctrl or need_rec:
            pr = p_fun(t) / rating if p_fun is not None else None
            _, out = system.evaluate(x, pr, u_e)
            if need_ctrl:
                u_e = u_e.copy()
                for c, e in zip(controls.controllers, ctrl_every):
                    if k % e == 0:
                        u_e = c.update(t, c.measure(system, x, out), u_e)
            if need_rec:
                if not np.all(np.isfinite(x)):
                    raise SimulationError(f"simulation diverged at t = {t:.4f} s")
                _record(system, x, out, u_e, pr, controls, rec, k_rec)
                t_rec[k_rec] = t
                k_rec += 1
        if k == n_steps:
            break
        x = step(rhs, t, x, dt)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"simulation diverged at t = {t + dt:.4f} s")
    trace = Trace(t_rec[:k_rec], {k: v[:k_rec] for k, v in rec.items()})
    trace.final_state = x
    return trace


def default_signals(system):
    names = []
    for g in system.gen_names:
        names += [f"{g}.Pe", f"{g}.omega", f"{g}.ut", f"{g}.delta", f"{g}.ue"]
    if system.pile is not None:
        names += ["pile.Pe", "pile.Pref", "pile.Qe", "pile.V"]
    return names


def _record(system, x, out, u_e, p_ref_pile, controls, rec, k):
    m = system.n_gen
    alg = out["alg"]
    names = system.gen_names
    for name, arr in rec.items():
        dev, _, sig = name.partition(".")
        if dev == "pile":
            r = system.pile_rating
            if sig == "Pe":
                arr[k] = out["pile_pe"] * r
            elif sig == "Qe":
                arr[k] = out["pile_qe"] * r
            elif sig == "Pref":
                arr[k] = (system.p_ref0 if p_ref_pile is None else p_ref_pile) * r
            elif sig == "V":
                arr[k] = abs(out["v_pile"])
            elif sig in PILE_STATES:
                arr[k] = x[4 * m + PILE_STATES.index(sig)]
            else:
                raise KeyError(name)
            continue
        if dev.startswith("bus"):
            lab = dev[3:]
            labels = [str(b) for b in system.bus_labels]
            arr[k] = abs(system.bus_voltages(x)[labels.index(lab)])
            continue
        i = names.index(dev)
        if sig == "Pe":
            arr[k] = alg.p_e[i]
        elif sig == "ut":
            arr[k] = alg.u_t[i]
        elif sig == "omega":
            arr[k] = x[m + i]
        elif sig == "delta":
            arr[k] = x[i]
        elif sig == "Eqp":
            arr[k] = x[2 * m + i]
        elif sig == "Efd":
            arr[k] = x[3 * m + i]
        elif sig == "ue":
            arr[k] = u_e[i]
        elif sig.startswith("miadrc."):
            arr[k] = _controller_internal(controls, i, sig[7:])
        else:
            raise KeyError(name)


def _controller_internal(controls, gen_index, key):
    for c in controls.controllers:
        if hasattr(c, "internal"):
            val = c.internal(gen_index, key)
            if val is not None:
                return val
    return 0.0
