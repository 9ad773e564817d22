"""Malicious mode attack command and the stochastic base charging load."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

BUTTER_ORDER = 4


@dataclass(frozen=True)
class MmaCommand:
    """Cosine modulation ``1 + i_pct cos(omega t + phi)`` inside [t_start, t_stop)."""

    i_pct: float
    omega: float
    phi: float = 0.0
    t_start: float = 0.0
    t_stop: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.i_pct <= 1.0:
            raise ValueError("i_pct must lie in [0, 1]")
        if not self.omega > 0:
            raise ValueError("attack frequency must be positive")
        if not self.t_stop > self.t_start:
            raise ValueError("t_stop must exceed t_start")

    @property
    def freq_hz(self):
        return self.omega / (2 * math.pi)

    @classmethod
    def from_hz(cls, i_pct, freq_hz, phi=0.0, t_start=0.0, t_stop=math.inf):
        return cls(i_pct, 2 * math.pi * freq_hz, phi, t_start, t_stop)

    def active(self, t):
        t = np.asarray(t)
        return (t >= self.t_start) & (t < self.t_stop)

    def modulation(self, t):
        """The zero-mean factor i_pct cos(omega t + phi), gated by the window."""
        t = np.asarray(t, dtype=float)
        return np.where(self.active(t), self.i_pct * np.cos(self.omega * t + self.phi), 0.0)


@dataclass(frozen=True)
class LoadProcess:
    p_a0_mean: float
    sigma: float = 0.0
    bandwidth_w: float = 2 * math.pi * 5.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.bandwidth_w > 0:
            raise ValueError("bandwidth must be positive")


def attack_reference(t, base_p, cmd: MmaCommand | None):
    """Aggregated command base_p * (1 + i_pct cos(omega t + phi)) in the window."""
    if cmd is None:
        return base_p * np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else base_p
    out = base_p * (1.0 + cmd.modulation(t))
    return out if np.ndim(out) else float(out)


def _lowpass(bandwidth_w, dt):
    nyq = math.pi / dt
    wn = min(bandwidth_w / nyq, 0.99)
    return signal.butter(BUTTER_ORDER, wn, output="sos")


def _impulse_energy(sos, n=1 << 15):
    imp = np.zeros(n)
    imp[0] = 1.0
    return float(np.sum(signal.sosfilt(sos, imp) ** 2))


def filtered_noise(sigma, bandwidth_w, dt, n, rng, size=None):
    """Zero-mean band-limited Gaussian noise with standard deviation ``sigma``.

    ``size`` adds a leading trial dimension. A burn-in of the filter memory is
    discarded so the output is stationary from the first sample.
    """
    shape = (n,) if size is None else (size, n)
    if sigma == 0:
        return np.zeros(shape)
    sos = _lowpass(bandwidth_w, dt)
    burn = int(math.ceil(20 * 2 * math.pi / bandwidth_w / dt)) + 16
    white = rng.standard_normal(shape[:-1] + (n + burn,))
    out = signal.sosfilt(sos, white, axis=-1)[..., burn:]
    return out * (sigma / math.sqrt(_impulse_energy(sos)))


def sample_base_load(process: LoadProcess, t_grid):
    """Base load P_a0(t) on a uniform grid; identical for identical seeds."""
    t = np.asarray(t_grid, dtype=float)
    if t.size > 1:
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(t[-1])):
            raise ValueError("time grid must be uniform")
        dt = float(steps[0])
    else:
        dt = 1e-3
    rng = np.random.default_rng(process.seed)
    return process.p_a0_mean + filtered_noise(process.sigma, process.bandwidth_w, dt, t.size, rng)


def noise_psd(sigma, bandwidth_w, omega):
    """Two-sided PSD (per rad/s) of the band-limited load noise.

    Uses the analog Butterworth shape; the level makes the integral over all
    frequencies equal sigma**2.
    """
    n = BUTTER_ORDER
    kappa = (math.pi / (2 * n)) / math.sin(math.pi / (2 * n))
    gain = 1.0 / (1.0 + (np.asarray(omega, dtype=float) / bandwidth_w) ** (2 * n))
    return sigma ** 2 / (2 * bandwidth_w * kappa) * gain


def attack_schedule_from_mode(mode, i_pct, window=(0.0, math.inf), phi=0.0):
    """Attack aimed at ``mode`` (anything with a ``frequency`` in Hz)."""
    f = getattr(mode, "frequency", mode)
    if not f > 0:
        raise ValueError("mode frequency must be positive to aim an attack")
    return MmaCommand(i_pct, 2 * math.pi * f, phi, window[0], window[1])


class CommandStream:
    """p_ref(t) for the simulator: base load with optional attack modulation.

    The stochastic base load is held constant between samples of ``dt``.
    """

    def __init__(self, process: LoadProcess, cmd: MmaCommand | None, dt, t_end):
        self.process = process
        self.cmd = cmd
        self.dt = dt
        n = int(round(t_end / dt)) + 2
        self.base = sample_base_load(process, np.arange(n) * dt)

    def base_at(self, t):
        k = min(int(t / self.dt + 1e-9), len(self.base) - 1)
        return self.base[k]

    def __call__(self, t):
        p = self.base_at(t)
        if self.cmd is None:
            return p
        if self.cmd.t_start <= t < self.cmd.t_stop:
            return p * (1.0 + self.cmd.i_pct * math.cos(self.cmd.omega * t + self.cmd.phi))
        return p
