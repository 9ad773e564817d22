"""Linearisation, eigen-analysis in modal coordinates and parameter sweeps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize


class ModalError(RuntimeError):
    pass


@dataclass
class LinearModel:
    """x' = A x + B u, y = C x + D u around an equilibrium."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_labels: list
    output_labels: list

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        n = self.a.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(n, -1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1, n)
        self.d = np.asarray(self.d, dtype=float).reshape(self.c.shape[0], self.b.shape[1])
        if self.a.shape != (n, n):
            raise ValueError("A must be square")
        if len(self.state_labels) != n or len(self.output_labels) != self.c.shape[0]:
            raise ValueError("label counts do not match matrix dimensions")
        if len(set(self.state_labels)) != n or len(set(self.output_labels)) != len(self.output_labels):
            raise ValueError("labels must be unique")

    def output_index(self, label):
        return self.output_labels.index(label)

    def select_output(self, label):
        k = self.output_index(label)
        return replace(self, c=self.c[k:k + 1], d=self.d[k:k + 1], output_labels=[label])


@dataclass
class ModalDecomposition:
    lam: np.ndarray
    u_right: np.ndarray
    v_left: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    state_labels: list = field(default_factory=list)
    output_labels: list = field(default_factory=list)

    @property
    def alpha(self):
        return self.lam.real

    @property
    def omega(self):
        return self.lam.imag

    def frequency_hz(self, i):
        return abs(self.lam[i].imag) / (2 * np.pi)

    def damping_ratio(self, i):
        return damping_ratio(self.lam[i])

    def mode(self, i):
        return mode_info(self, i)

    def oscillatory(self, fmin=0.05, fmax=5.0):
        """Indices of modes with positive frequency in [fmin, fmax] Hz."""
        f = self.lam.imag / (2 * np.pi)
        return [i for i in range(len(self.lam)) if fmin <= f[i] <= fmax]


@dataclass
class ModeInfo:
    frequency: float
    damping_ratio: float
    eigenvalue: complex = 0j
    shape: dict = field(default_factory=dict)
    participation: dict = field(default_factory=dict)
    index: int | None = None

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")

    def to_dict(self):
        return {
            "frequency_hz": float(self.frequency),
            "damping_ratio": float(self.damping_ratio),
            "eigenvalue": [float(np.real(self.eigenvalue)), float(np.imag(self.eigenvalue))],
            "shape": [{"state": k, "re": float(v.real), "im": float(v.imag)}
                      for k, v in self.shape.items()],
            "participation": [{"state": k, "value": float(v)} for k, v in self.participation.items()],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def damping_ratio(lam):
    lam = complex(lam)
    mag = abs(lam)
    return -lam.real / mag if mag > 0 else 1.0


# -- linearisation -------------------------------------------------------------

DEFAULT_OUTPUTS = ("Pe", "omega", "ut")


def _outputs(system, x, p_ref, names):
    _, out = system.evaluate(x, p_ref)
    alg = out["alg"]
    vals = []
    for name in names:
        dev, _, sig = name.partition(".")
        if dev == "pile":
            r = system.pile_rating
            vals.append({"Pe": out["pile_pe"] * r, "Qe": out["pile_qe"] * r,
                         "V": abs(out["v_pile"])}[sig])
            continue
        i = system.gen_names.index(dev)
        m = system.n_gen
        vals.append({"Pe": alg.p_e[i], "ut": alg.u_t[i], "omega": x[m + i],
                     "delta": x[i]}[sig])
    return np.array(vals, dtype=float)


def default_output_labels(system):
    labels = [f"{g}.{s}" for s in DEFAULT_OUTPUTS for g in system.gen_names]
    if system.pile is not None:
        labels += ["pile.Pe"]
    return labels


def linearize(system, step=1e-6, outputs=None, x0=None, eq_tol=1e-6) -> LinearModel:
    """Central-difference A, B, C, D around the equilibrium of ``system``.

    The single input is the pile active-power command in system per-unit;
    generator-only systems get a zero B column.
    """
    x0 = np.array(system.x0 if x0 is None else x0, dtype=float)
    p0 = system.p_ref0
    f0 = system.f(x0, p0)
    if np.max(np.abs(f0)) > eq_tol:
        raise ModalError(f"start point is not an equilibrium (|f(x0)| = {np.max(np.abs(f0)):.3e})")
    names = list(outputs) if outputs is not None else default_output_labels(system)
    n = len(x0)
    a = np.empty((n, n))
    c = np.empty((len(names), n))
    for j in range(n):
        xp, xm = x0.copy(), x0.copy()
        xp[j] += step
        xm[j] -= step
        a[:, j] = (system.f(xp, p0) - system.f(xm, p0)) / (2 * step)
        c[:, j] = (_outputs(system, xp, p0, names) - _outputs(system, xm, p0, names)) / (2 * step)
    if system.pile is not None:
        h = step * system.pile_rating
        rp, rm = p0 + step, p0 - step
        b = ((system.f(x0, rp) - system.f(x0, rm)) / (2 * h)).reshape(n, 1)
        d = ((_outputs(system, x0, rp, names) - _outputs(system, x0, rm, names)) / (2 * h)).reshape(-1, 1)
    else:
        b = np.zeros((n, 1))
        d = np.zeros((len(names), 1))
    return LinearModel(a, b, c, d, system.state_labels(), names)


# -- eigen-decomposition -------------------------------------------------------

def decompose(model: LinearModel, cond_limit=1e10) -> ModalDecomposition:
    """Eigen-triplets with V^T U = I, sorted by ascending frequency then decay."""
    a = model.a
    lam, vl, vr = linalg.eig(a, left=True, right=True)
    order = np.lexsort((lam.real, np.round(lam.imag, 10)))
    lam, vl, vr = lam[order], vl[:, order], vr[:, order]
    vr = vr / np.linalg.norm(vr, axis=0)
    if np.linalg.cond(vr) > cond_limit:
        # find the eigenvalue that coincides with another
        dist = np.abs(lam[:, None] - lam[None, :]) + np.eye(len(lam)) * np.inf
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        raise ModalError(f"state matrix is defective near repeated eigenvalue {lam[i]:.6g}")
    # left eigenvectors as rows of U^-1, then V = (U^-1)^T so that V^T U = I
    v = np.linalg.inv(vr).T
    psi = v.T @ model.b
    phi = model.c @ vr
    return ModalDecomposition(lam, vr, v, psi, phi, list(model.state_labels), list(model.output_labels))


def participation_factors(dec: ModalDecomposition, mode_index, normalize=True):
    """|u_ki v_ki| over states, scaled to a maximum of one."""
    p = np.abs(dec.u_right[:, mode_index] * dec.v_left[:, mode_index])
    if normalize and p.max() > 0:
        p = p / p.max()
    return p


def mode_info(dec: ModalDecomposition, i) -> ModeInfo:
    lam = dec.lam[i]
    u = dec.u_right[:, i]
    speed = [k for k, lab in enumerate(dec.state_labels) if lab.endswith(".omega")]
    if speed:
        shp = u[speed]
        ref = shp[np.argmax(np.abs(shp))]
        shp = shp / ref if abs(ref) > 0 else shp
        shape = {dec.state_labels[k]: complex(s) for k, s in zip(speed, shp)}
    else:
        shape = {}
    pf = participation_factors(dec, i)
    part = {lab: float(p) for lab, p in zip(dec.state_labels, pf)}
    return ModeInfo(abs(lam.imag) / (2 * np.pi), damping_ratio(lam), complex(lam), shape, part, i)


def mac(u1, u2):
    """Modal assurance criterion between two complex vectors."""
    num = abs(np.vdot(u1, u2)) ** 2
    den = np.real(np.vdot(u1, u1) * np.vdot(u2, u2))
    return float(num / den) if den > 0 else 0.0


def find_mode(dec, freq_hz=None, speed_states=False, fmin=0.05, fmax=5.0, key="damping"):
    """Index of the oscillatory mode nearest ``freq_hz`` (or least damped)."""
    idx = dec.oscillatory(fmin, fmax)
    if not idx:
        raise ModalError("no oscillatory mode in range")
    if freq_hz is not None:
        return min(idx, key=lambda i: abs(dec.frequency_hz(i) - freq_hz))
    return min(idx, key=lambda i: dec.damping_ratio(i))


def electromechanical_modes(dec, fmin=0.1, fmax=3.0, min_speed_share=0.3):
    """Oscillatory modes whose participation is dominated by rotor states."""
    out = []
    rotor = np.array([lab.endswith((".omega", ".delta")) for lab in dec.state_labels])
    for i in dec.oscillatory(fmin, fmax):
        p = participation_factors(dec, i, normalize=False)
        if p[rotor].sum() / p.sum() >= min_speed_share:
            out.append(i)
    return out


def inter_area_mode(dec, fmin=0.2, fmax=1.0):
    """Least-damped electromechanical mode in the inter-area band."""
    idx = electromechanical_modes(dec, fmin, fmax)
    if not idx:
        raise ModalError("no inter-area mode found")
    return min(idx, key=lambda i: dec.damping_ratio(i))


# -- sweeps --------------------------------------------------------------------

def mode_sweep(build, values, start_index=None, select=None, mac_threshold=0.7, outputs=None):
    """Re-linearise ``build(value)`` per value and follow one mode by MAC.

    ``build`` maps a parameter value to a DynamicSystem. The first point picks
    the mode through ``start_index`` or the callable ``select(dec)``.
    Raises ModalError naming the value where tracking is lost.
    """
    infos = []
    prev_u = None
    for val in values:
        system = build(val)
        dec = decompose(linearize(system, outputs=outputs))
        if prev_u is None:
            i = start_index if start_index is not None else (select(dec) if select else inter_area_mode(dec))
        else:
            if len(dec.lam) != len(prev_u):
                raise ModalError(f"state dimension changed at value {val}")
            scores = [mac(prev_u, dec.u_right[:, k]) if dec.lam[k].imag >= 0 else -1
                      for k in range(len(dec.lam))]
            i = int(np.argmax(scores))
            if scores[i] < mac_threshold:
                raise ModalError(f"mode tracking lost at value {val} (best MAC {scores[i]:.3f})")
        prev_u = dec.u_right[:, i]
        info = mode_info(dec, i)
        info.value = val
        infos.append(info)
    return infos


# -- pile calibration ----------------------------------------------------------

PILE_MODE_BAND = (0.5, 5.0)


def pile_mode(dec):
    """The PLL-dominated oscillatory mode of a pile model."""
    idx = dec.oscillatory(*PILE_MODE_BAND)
    if not idx:
        raise ModalError("pile model has no oscillatory mode")
    pll = [k for k, lab in enumerate(dec.state_labels) if lab.endswith(("x_pll", "theta_pll"))]

    def share(i):
        p = participation_factors(dec, i, normalize=False)
        return p[pll].sum() / p.sum()
    return max(idx, key=share)


@dataclass
class CalibrationResult:
    kp3: float
    ki3: float
    frequency: float
    damping_ratio: float
    converged: bool

    def __iter__(self):
        return iter((self.kp3, self.ki3))


def calibrate_pile(target_freq_hz=1.370, target_damping=0.2797, pile=None, p_ref=0.5,
                   x0=(5.0, 80.0), freq_tol=0.05, damp_tol=0.02):
    """Choose (kp3, ki3) so the PLL mode of a stiff-source pile hits the target.

    Solves the two-equation root problem in log-gain space; if it does not
    reach tolerance the best point found is returned with converged=False.
    """
    from .dynamics import PileParams, stiff_source_system

    if target_freq_hz <= 0 or target_damping <= 0:
        raise ValueError("targets must be positive")
    base = pile or PileParams()

    def mode_of(kp3, ki3):
        sys_ = stiff_source_system(replace(base, kp3=kp3, ki3=ki3), p_ref)
        dec = decompose(linearize(sys_))
        i = pile_mode(dec)
        return dec.frequency_hz(i), dec.damping_ratio(i)

    def resid(z):
        f, zeta = mode_of(*np.exp(z))
        return [(f - target_freq_hz) / target_freq_hz, zeta - target_damping]

    start = np.log([base.kp3, base.ki3]) if pile is not None else np.log(x0)
    sol = optimize.root(resid, start, method="hybr", options={"xtol": 1e-10})
    z = sol.x
    if not np.all(np.isfinite(z)):
        z = start
    kp3, ki3 = np.exp(z)
    f, zeta = mode_of(kp3, ki3)
    ok = abs(f - target_freq_hz) < freq_tol and abs(zeta - target_damping) < damp_tol
    return CalibrationResult(float(kp3), float(ki3), f, zeta, bool(ok))


def modes_report(dec, indices):
    return [mode_info(dec, i).to_dict() for i in indices]
