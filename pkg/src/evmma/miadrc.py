"""Multi-index active disturbance rejection control of generator exciters.

Each controlled machine runs a discrete tracking differentiator (TD), a
third-order extended state observer (ESO) and a nonlinear state feedback
(NSF) on the measurement y = c1 du_t + c2 d omega + c3 dP_e. The output
u_e enters the exciter as a supplementary signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


def fhan(x1, x2, r, h):
    """Han's discrete time-optimal synthesis function (scalar or array)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = r * h
    d0 = d * h
    y = x1 + h * x2
    a0 = np.sqrt(d * d + 8.0 * r * np.abs(y))
    a = np.where(np.abs(y) > d0, x2 + np.sign(y) * (a0 - d) / 2.0, x2 + y / h)
    out = np.where(np.abs(a) > d, -r * np.sign(a), -r * a / d)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MultiIndexCoeffs:
    c1: float = 1.0
    c2: float = -0.1
    c3: float = 0.5

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if not self.c2 * self.c3 < 0:
            raise ValueError("c2 and c3 must have opposite signs")


@dataclass(frozen=True)
class MiadrcGains:
    """Controller constants; beta gains follow the observer bandwidth unless given.

    The default step h = 1 ms keeps the explicit ESO stable at w_c = 100 pi
    (its error poles sit at 1 - h w_c).
    """

    h: float = 0.001
    c: float = 0.5
    r0: float = 0.01
    r_ref: float = 0.0
    w_c: float = 100 * math.pi
    b: float = 4600.0
    beta1: float | None = None
    beta2: float | None = None
    beta3: float | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.b == 0 or not math.isfinite(self.b):
            raise ValueError("b must be finite and nonzero")
        if self.beta1 is None:
            object.__setattr__(self, "beta1", 3.0 * self.w_c)
        if self.beta2 is None:
            object.__setattr__(self, "beta2", 3.0 * self.w_c ** 2)
        if self.beta3 is None:
            object.__setattr__(self, "beta3", self.w_c ** 3)


@dataclass(frozen=True)
class MiadrcState:
    td: tuple = (0.0, 0.0)
    eso: tuple = (0.0, 0.0, 0.0)
    last_u: float = 0.0
    enabled: bool = False


def multi_index_output(d_ut, d_omega, d_pe, coeffs: MultiIndexCoeffs):
    """y = c1 du_t + c2 d omega + c3 dP_e (deviations from equilibrium)."""
    return coeffs.c1 * d_ut + coeffs.c2 * d_omega + coeffs.c3 * d_pe


def controller_step(state: MiadrcState, gains: MiadrcGains, y_measured):
    """One controller period; returns (new state, u_e)."""
    if not state.enabled:
        return state, 0.0
    g = gains
    v1, v2 = state.td
    fh = fhan(v1 - g.r_ref, v2, g.r0, g.h)
    v1n = v1 + g.h * v2
    v2n = v2 + g.h * fh
    x1, x2, x3 = state.eso
    e = x1 - y_measured
    x1n = x1 + g.h * (x2 - g.beta1 * e)
    x2n = x2 + g.h * (x3 - g.beta2 * e + state.last_u)
    x3n = x3 + g.h * (-g.beta3 * e)
    e1 = v1n - x1n
    e2 = v2n - x2n
    u = -fhan(e1, g.c * e2, g.r0, g.h) - x3n
    new = MiadrcState((v1n, v2n), (x1n, x2n, x3n), float(u), True)
    return new, float(u) / g.b


# -- operating-point gain ---------------------------------------------------------

def _machine_self_admittance(system):
    """Reduced admittance among machine internal nodes with the pile node removed."""
    net = system.net
    y = net.y_ss[:system.n_gen, :system.n_gen]
    if net.has_pile:
        y = y - np.outer(net.y_sp[:system.n_gen], net.y_ps[:system.n_gen]) / net.y_pp
    return y


def compute_b(system, gen_index, coeffs: MultiIndexCoeffs, x=None, x_d=None, x_q=None):
    """Input gain L_g L_f y of one machine at state ``x``.

    Uses the self-admittance form of the terminal-voltage and power partial
    derivatives. The network interface places x'_d on both axes, so x_d and
    x_q default to the machine's x'_d.
    """
    from .dynamics import network_interface, pile_current, PileState

    x = system.x0 if x is None else x
    g, ps = system.split(x)
    i = gen_index
    i_sys = pile_current(ps) * system.pile_rating if ps is not None else 0j
    alg, _ = network_interface(g.delta, g.e_qp, system.gen.x_dp, system.net, i_sys)
    y = _machine_self_admittance(system)
    gii, bii = y[i, i].real, y[i, i].imag
    xd = system.gen.x_dp[i] if x_d is None else x_d
    xq = system.gen.x_dp[i] if x_q is None else x_q
    e = g.e_qp[i]
    iq, id_ = alg.i_q[i], alg.i_d[i]
    ut = math.hypot(xq * iq, e - xd * id_)
    if ut == 0:
        raise ValueError("terminal voltage is zero; derivative undefined")
    dut = (xq ** 2 * iq * gii + (e - xd * id_) * (1.0 + xd * bii)) / ut
    dpe = gii * e + iq
    p = system.gen
    scale = p.k_a[i] / (p.t_d0p[i] * p.t_a[i])
    b = (coeffs.c1 * dut + coeffs.c3 * dpe) * scale
    if b == 0:
        raise ValueError("input gain b is zero")
    return float(b)


# -- zero dynamics -----------------------------------------------------------------

@dataclass
class KConstants:
    k1: float
    k2: float
    k3: float
    k4: float


@dataclass
class ZeroDynamicsReport:
    a1: np.ndarray
    k1: float
    k2: float
    k3: float
    k4: float
    d_e: float
    k_e: float
    w: float
    eigenvalues: np.ndarray


def k_constants(system, gen_index, x=None, step=1e-6):
    """Linearisation constants of one machine at ``x`` (others held fixed).

    K1 = dPe/d delta, K2 = dPe/dE'q, K3 = 1 + (x_d - x'_d) dI_d/dE'q and
    K4 = (x_d - x'_d) dI_d/d delta, so that
    T'_d0 dE'q/dt = -K3 dE'q - K4 d delta + dE_f.
    """
    from .dynamics import network_interface, pile_current

    x = np.array(system.x0 if x is None else x, dtype=float)
    m = system.n_gen
    i = gen_index
    g, ps = system.split(x)
    i_sys = pile_current(ps) * system.pile_rating if ps is not None else 0j

    def alg_at(dd, de):
        delta = g.delta.copy()
        eqp = g.e_qp.copy()
        delta[i] += dd
        eqp[i] += de
        a, _ = network_interface(delta, eqp, system.gen.x_dp, system.net, i_sys)
        return a.p_e[i], a.i_d[i]

    pp, dp = alg_at(step, 0)
    pm, dm = alg_at(-step, 0)
    k1 = (pp - pm) / (2 * step)
    did_dd = (dp - dm) / (2 * step)
    pp, dp = alg_at(0, step)
    pm, dm = alg_at(0, -step)
    k2 = (pp - pm) / (2 * step)
    did_de = (dp - dm) / (2 * step)
    xdd = system.gen.x_d[i] - system.gen.x_dp[i]
    return KConstants(k1, k2, 1.0 + xdd * did_de, xdd * did_dd)


def zero_dynamics(gen_params, k, w, coeffs: MultiIndexCoeffs, omega0=None, k_factor="k4"):
    """Zero-dynamics matrix of one machine and its damping/synchronising torques.

    ``gen_params`` needs t_j, d, t_d0p, k_a and t_a (scalars). Speed is in
    per-unit, so the angle row carries omega0. ``k_factor`` selects the
    numerator factor of the damping expression: "k4" evaluates it as
    printed, "k_a" uses the exciter gain that the block diagram produces.
    """
    p = gen_params
    w0 = float(omega0 if omega0 is not None else getattr(p, "omega0", 2 * math.pi * 60))
    tj, d, td0, ka, ta = (float(p.t_j), float(p.d), float(p.t_d0p), float(p.k_a), float(p.t_a))
    r2 = coeffs.c2 / coeffs.c1
    r3 = coeffs.c3 / coeffs.c1
    a1 = np.array([
        [0.0, w0, 0.0, 0.0],
        [-k.k1 / tj, -d / tj, -k.k2 / tj, 0.0],
        [-k.k4 / td0, 0.0, -k.k3 / td0, 1.0 / td0],
        [ka * r3 * k.k1 / ta, ka * r2 / ta, ka * r3 * k.k2 / ta, -1.0 / ta],
    ])
    real = -ka * r3 * k.k2 + k.k3 - w ** 2 * ta * td0
    quad = k.k3 * ta + td0
    den = real ** 2 + w ** 2 * quad ** 2
    if den == 0:
        raise ZeroDivisionError(f"damping expression has a zero denominator at w = {w}")
    factor = k.k4 if k_factor == "k4" else ka
    d_e = k.k2 * factor * (r2 * real - r3 * k.k1 * quad) / den
    k_e = k.k1 + k.k2 * factor * (r3 * k.k1 * real + w ** 2 * r2 * quad) / den
    return ZeroDynamicsReport(a1, k.k1, k.k2, k.k3, k.k4, float(d_e), float(k_e), float(w),
                              np.linalg.eigvals(a1))


def block_diagram_polynomial(gen_params, k, coeffs: MultiIndexCoeffs, omega0=None):
    """Characteristic polynomial of the zero-dynamics block diagram.

    (Tj s^2 + D s + w0 K1)((1 + T_A s)(K3 + T'_d0 s) - K_A r3 K2)
      + w0 K2 ((r3 K1 K_A - K4 (1 + T_A s)) + K_A r2 s / w0) = 0
    with r2 = c2/c1, r3 = c3/c1, assembled from the torque loop by hand.
    """
    p = gen_params
    w0 = float(omega0 if omega0 is not None else getattr(p, "omega0", 2 * math.pi * 60))
    tj, d, td0, ka, ta = (float(p.t_j), float(p.d), float(p.t_d0p), float(p.k_a), float(p.t_a))
    r2 = coeffs.c2 / coeffs.c1
    r3 = coeffs.c3 / coeffs.c1
    mech = np.array([tj, d, w0 * k.k1])
    field_ = np.polysub(np.polymul([ta, 1.0], [td0, k.k3]), [ka * r3 * k.k2])
    feed = np.polyadd([ka * r3 * k.k1 - k.k4], np.polymul([k.k4 * ta], [1.0, 0.0]) * -1)
    feed = np.polyadd(feed, [ka * r2 / w0, 0.0])
    return np.polyadd(np.polymul(mech, field_), w0 * k.k2 * np.asarray(feed))


def damping_grid(coeffs: MultiIndexCoeffs, k_a_values, t_a_values, k_values, w_values,
                 t_d0p=8.0, k_factor="k4"):
    """Evaluate D_e over a grid; returns (all results, counterexamples with D_e <= 0)."""
    import itertools
    from types import SimpleNamespace

    results, bad = [], []
    for ka, ta, k1, k2, k3, k4, w in itertools.product(
            k_a_values, t_a_values, k_values, k_values, k_values, k_values, w_values):
        p = SimpleNamespace(t_j=10.0, d=0.0, t_d0p=t_d0p, k_a=ka, t_a=ta, omega0=1.0)
        rep = zero_dynamics(p, KConstants(k1, k2, k3, k4), w, coeffs, k_factor=k_factor)
        row = dict(k_a=ka, t_a=ta, k1=k1, k2=k2, k3=k3, k4=k4, w=w, d_e=rep.d_e)
        results.append(row)
        if not rep.d_e > 0:
            bad.append(row)
    return results, bad


# -- detection gate ------------------------------------------------------------------

@dataclass
class DetectionGate:
    """Sliding-window Prony detector of sustained, nearly undamped oscillation.

    A window counts as a hit when it contains a mode in [fmin, fmax] Hz with
    |zeta| < zeta_max and amplitude above ``amp_min``. The gate closes after
    ``on_count`` consecutive hits and opens again after ``off_count``
    consecutive misses.
    """

    window_s: float = 2.0
    step_s: float = 0.5
    zeta_max: float = 0.02
    amp_min: float = 0.01
    fmin: float = 0.1
    fmax: float = 3.0
    on_count: int = 2
    off_count: int = 3
    order: int = 4
    state: bool = False
    _hits: int = 0
    _misses: int = 0

    def window_hit(self, values, dt):
        from .oscillation import prony_identify

        v = np.asarray(values, dtype=float)
        v = v - v.mean()
        if np.max(np.abs(v)) < self.amp_min:
            return False
        res = prony_identify(v, self.order, dt=dt, detrend=False)
        for f, zeta, amp, _ in res.modes:
            if self.fmin <= f <= self.fmax and abs(zeta) < self.zeta_max and amp > self.amp_min:
                return True
        return False

    def update(self, values, dt):
        hit = self.window_hit(values, dt)
        if hit:
            self._hits += 1
            self._misses = 0
        else:
            self._misses += 1
            self._hits = 0
        if not self.state and self._hits >= self.on_count:
            self.state = True
        elif self.state and self._misses >= self.off_count:
            self.state = False
        return self.state

    def reset(self):
        self.state = False
        self._hits = self._misses = 0


def detection_gate(values, dt, gate: DetectionGate | None = None, return_time=False):
    """Run a fresh gate over a whole record; True if it is closed at the end.

    With ``return_time`` also returns the first time the gate closed (or None).
    """
    gate = replace(gate) if gate is not None else DetectionGate()
    gate.reset()
    v = np.asarray(values, dtype=float)
    n_win = int(round(gate.window_s / dt))
    n_step = max(1, int(round(gate.step_s / dt)))
    first = None
    state = False
    for end in range(n_win, len(v) + 1, n_step):
        state = gate.update(v[end - n_win:end], dt)
        if state and first is None:
            first = end * dt
    return (state, first) if return_time else state


# -- simulator adaptor ----------------------------------------------------------------

@dataclass
class MiadrcBank:
    """MIADRC on a set of machines, driven by the simulator clock.

    Enabled either at ``enable_time`` or by a DetectionGate watching
    ``monitor`` (a generator name) when ``auto_detect`` is set.
    """

    gen_names: list
    gains: MiadrcGains | list = field(default_factory=MiadrcGains)
    coeffs: MultiIndexCoeffs | list = field(default_factory=MultiIndexCoeffs)
    enable_time: float | None = 0.0
    auto_detect: bool = False
    gate: DetectionGate = field(default_factory=DetectionGate)
    monitor: str | None = None

    def __post_init__(self):
        n = len(self.gen_names)
        self.gains = list(self.gains) if isinstance(self.gains, (list, tuple)) else [self.gains] * n
        self.coeffs = list(self.coeffs) if isinstance(self.coeffs, (list, tuple)) else [self.coeffs] * n
        if len(self.gains) != n or len(self.coeffs) != n:
            raise ValueError("one gains/coeffs entry per controlled machine")
        periods = {g.h for g in self.gains}
        if len(periods) != 1:
            raise ValueError("controlled machines must share one controller period")
        self.period = periods.pop()
        self.states = [MiadrcState() for _ in range(n)]
        self.enabled = False
        self.enabled_at = None
        self._index = None
        self._ref = None
        self._buffer = []
        self._last_out = np.zeros(n)

    def bind(self, system):
        self._index = [system.gen_names.index(n) for n in self.gen_names]
        _, out = system.evaluate(system.x0)
        m = system.n_gen
        alg = out["alg"]
        self._ref = (alg.u_t[self._index].copy(), system.x0[m:2 * m][self._index].copy(),
                     alg.p_e[self._index].copy())
        self._mon = system.gen_names.index(self.monitor or self.gen_names[0])
        self._gate_every = None

    def measure(self, system, x, out):
        if self._index is None:
            self.bind(system)
        m = system.n_gen
        alg = out["alg"]
        ut0, w0, pe0 = self._ref
        idx = self._index
        y = np.array([multi_index_output(alg.u_t[k] - ut0[j], x[m + k] - w0[j], alg.p_e[k] - pe0[j],
                                         self.coeffs[j]) for j, k in enumerate(idx)])
        if self.auto_detect:
            self._buffer.append(alg.p_e[self._mon])
        return y

    def _switch(self, t):
        if not self.auto_detect:
            return self.enable_time is not None and t >= self.enable_time - 1e-12
        if self._gate_every is None:
            self._gate_every = max(1, int(round(self.gate.step_s / self.period)))
            self._n_win = int(round(self.gate.window_s / self.period))
        buf = self._buffer
        if len(buf) >= self._n_win and (len(buf) - self._n_win) % self._gate_every == 0:
            self.gate.update(buf[-self._n_win:], self.period)
            if len(buf) > 4 * self._n_win:
                del buf[:len(buf) - self._n_win]
        return self.gate.state

    def update(self, t, y, u_e):
        on = self._switch(t)
        if on and not self.enabled:
            self.enabled_at = t
        if not on:
            # S1 open: reset to the quiescent state for the next engagement
            self.states = [MiadrcState() for _ in self.states]
            self.enabled = False
            self._last_out[:] = 0.0
            u_e[self._index] = 0.0
            return u_e
        self.enabled = True
        for j, k in enumerate(self._index):
            st = self.states[j]
            if not st.enabled:
                st = replace(st, enabled=True)
            self.states[j], ue = controller_step(st, self.gains[j], y[j])
            self._last_out[j] = ue
            u_e[k] = ue
        return u_e

    def internal(self, gen_index, key):
        if self._index is None or gen_index not in self._index:
            return None
        j = self._index.index(gen_index)
        st = self.states[j]
        table = {"v1": st.td[0], "v2": st.td[1], "chi1": st.eso[0], "chi2": st.eso[1],
                 "chi3": st.eso[2], "u": st.last_u, "ue": self._last_out[j]}
        return table.get(key)
