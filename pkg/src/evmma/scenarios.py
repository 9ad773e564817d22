"""Scenario files, experiment orchestration and figure/table recipes.

A scenario is a JSON document (``"schema": 1``) naming a network, generator
overrides, the aggregated pile, the attack, controllers and the run settings.
``run_scenario`` turns it into an :class:`ExperimentReport`; ``reproduce``
writes the data behind one figure or table together with a manifest.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .attack import CommandStream, LoadProcess, MmaCommand
from .dynamics import Controls, PileParams, SimConfig, build_system, simulate, stiff_source_system
from .miadrc import DetectionGate, MiadrcBank, MiadrcGains, MultiIndexCoeffs, compute_b, detection_gate
from .modal import (ModalError, calibrate_pile, decompose, inter_area_mode, linearize, mode_info,
                    mode_sweep, participation_factors, pile_mode)
from .netmodel import NetworkError, resolve_network
from .oscillation import (beat_frequency, law_checks, lockin_phasor, mean_response,
                          monte_carlo_variance, predict_variance, prony_identify, shape_correlation,
                          steady_amplitude, variance_pem, variance_spectrum)

SCHEMA_VERSION = 1
USER_DIR_ENV = "EVMMA_SCENARIO_DIR"


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- schema ------------------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_GEN_FIELDS = {k: _num for k in ("h", "d", "x_d", "x_dp", "x_q", "t_d0p", "k_a", "t_a", "v", "p")}
_GEN_FIELDS.update(h_scale=_pos, d_per_h={"type": "number", "minimum": 0})


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCENARIO_SCHEMA = _obj({
    "schema": {"const": SCHEMA_VERSION},
    "name": {"type": "string"},
    "description": {"type": "string"},
    "network": {"oneOf": [{"type": "string"}, {"type": "object"}]},
    "loads": {"type": "object", "additionalProperties": {"oneOf": [
        _num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}},
    "generators": {"type": "object", "additionalProperties": _obj(_GEN_FIELDS)},
    "pile": _obj({
        "bus": {"type": ["integer", "string"]},
        "load": _pos,
        "rating": _pos,
        "params": _obj({k: _num for k in ("kp1", "ki1", "kp2", "ki2", "kp3", "ki3",
                                            "tau1", "tau2", "q_ref", "x_f")}),
    }, required=["bus", "load"]),
    "attack": {"oneOf": [{"type": "null"}, _obj({
        "i_pct": {"type": "number", "minimum": 0, "maximum": 1},
        "freq_hz": {"oneOf": [_pos, {"const": "mode"}]},
        "phi": _num,
        "t_start": {"type": "number", "minimum": 0},
        "t_stop": _num,
    }, required=["i_pct", "freq_hz"])]},
    "load_process": _obj({
        "sigma": {"type": "number", "minimum": 0},
        "bandwidth_hz": _pos,
        "seed": {"type": "integer", "minimum": 0},
    }),
    "controllers": {"oneOf": [{"type": "null"}, _obj({
        "miadrc": _obj({
            "generators": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "enable_time": {"type": ["number", "null"]},
            "auto_detect": {"type": "boolean"},
            "coeffs": _obj({"c1": _num, "c2": _num, "c3": _num}),
            "gains": _obj({"h": _pos, "c": _pos, "r0": _pos, "r_ref": _num, "w_c": _pos,
                           "b": {"oneOf": [_num, {"const": "auto"}]}}),
        }, required=["generators"]),
    })]},
    "sim": _obj({
        "dt": _pos,
        "t_end": _pos,
        "integrator": {"enum": ["rk4", "trapezoidal"]},
        "record_every": {"type": "integer", "minimum": 1},
    }),
    "outputs": {"type": "array", "items": {"type": "string"}},
    "analysis": _obj({
        "modal": {"type": "boolean"},
        "mode_band_hz": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "mode_freq_hz": _pos,
        "metric_channel": {"type": "string"},
        "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "baseline": {"type": "boolean"},
    }),
}, required=["schema", "name", "network", "sim"])


def _json_path(err):
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate_scenario(data):
    """Schema check plus cross-field checks; raises ScenarioError with a field path."""
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ScenarioError(err.message, _json_path(err)) from None
    t_end = data["sim"]["t_end"]
    att = data.get("attack")
    if att:
        t0 = att.get("t_start", 0.0)
        t1 = att.get("t_stop", t_end)
        if not 0 <= t0 < t1 <= t_end + 1e-9:
            raise ScenarioError("attack window must lie inside [0, t_end]", "$.attack")
        if att["freq_hz"] == "mode" and not data.get("analysis", {}).get("modal", True):
            raise ScenarioError("freq_hz 'mode' needs modal analysis", "$.attack.freq_hz")
    return data


# -- scenario object -----------------------------------------------------------------

@dataclass
class Scenario:
    data: dict
    source: str | None = None

    @property
    def name(self):
        return self.data["name"]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def canonical(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_value(self, dotted, value):
        """Copy with the field at ``dotted`` (e.g. ``pile.load``) replaced."""
        data = copy.deepcopy(self.data)
        keys = dotted.split(".")
        node = data
        for k in keys[:-1]:
            if not isinstance(node, dict):
                raise ScenarioError("not an object", "$." + dotted)
            node = node.setdefault(k, {})
        node[keys[-1]] = value
        return load_scenario(data)


def bundled_dir():
    return resources.files("evmma") / "scenario_data"


def user_dir():
    d = os.environ.get(USER_DIR_ENV)
    return Path(d) if d else None


def list_scenarios(user_path=None):
    """Sorted scenario names: bundled ones plus any ``*.json`` in the user directory."""
    names = {p.name[:-5] for p in bundled_dir().iterdir() if p.name.endswith(".json")}
    ud = Path(user_path) if user_path is not None else user_dir()
    if ud is not None and ud.is_dir():
        names |= {p.stem for p in ud.glob("*.json")}
    return sorted(names)


def find_scenario(name, user_path=None):
    """Path-like for a scenario name or file path."""
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return p
    stem = p.stem if p.suffix == ".json" else name
    ud = Path(user_path) if user_path is not None else user_dir()
    if ud is not None and (ud / f"{stem}.json").exists():
        return ud / f"{stem}.json"
    ref = bundled_dir() / f"{stem}.json"
    if ref.is_file():
        return ref
    raise ScenarioError(f"unknown scenario {name!r}; available: {', '.join(list_scenarios(user_path))}")


def load_scenario(spec) -> Scenario:
    """Scenario from a dict, a file path or a bundled/user scenario name."""
    if isinstance(spec, Scenario):
        return spec
    if isinstance(spec, dict):
        return Scenario(validate_scenario(copy.deepcopy(spec)))
    path = find_scenario(str(spec))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"invalid JSON: {err}") from None
    return Scenario(validate_scenario(data), str(path))


# -- building -------------------------------------------------------------------------

def _generator_overrides(network, spec):
    """Per-machine override dicts; ``"*"`` applies to every machine first."""
    spec = spec or {}
    names = [g["name"] for g in network.generators]
    for key in spec:
        if key != "*" and key not in names:
            raise ScenarioError(f"unknown generator {key!r}", f"$.generators.{key}")
    out = {}
    for g in network.generators:
        rec = {}
        for layer in (spec.get("*", {}), spec.get(g["name"], {})):
            rec.update(layer)
        h0 = float(g["h"])
        if "d_per_h" in rec:
            rec["d"] = rec.pop("d_per_h") * h0
        if "h_scale" in rec:
            rec["h"] = rec.get("h", h0) * rec.pop("h_scale")
        out[g["name"]] = rec
    return out


def _bus_key(network, key, path):
    ids = network.bus_ids()
    for cand in (key, str(key)):
        if cand in ids:
            return cand
    try:
        if int(key) in ids:
            return int(key)
    except (TypeError, ValueError):
        pass
    raise ScenarioError(f"bus {key!r} not in network", path)


def build_network(scn: Scenario):
    try:
        net = resolve_network(scn.data["network"])
    except (KeyError, FileNotFoundError, NetworkError) as err:
        raise ScenarioError(str(err), "$.network") from None
    for bus, val in (scn.get("loads") or {}).items():
        b = _bus_key(net, bus, f"$.loads.{bus}")
        net = net.with_load(b, *val) if isinstance(val, list) else net.with_load(b, val)
    return net


def build_scenario_system(scn: Scenario, pile_load=None):
    """Power flow and initialisation for the scenario's operating point."""
    net = build_network(scn)
    overrides = _generator_overrides(net, scn.get("generators"))
    ps = scn.get("pile")
    if ps is None:
        return build_system(net, gen_overrides=overrides)
    bus = _bus_key(net, ps["bus"], "$.pile.bus")
    pile = replace(PileParams(), **ps.get("params", {}))
    load = ps["load"] if pile_load is None else pile_load
    return build_system(net, pile, bus, load, ps.get("rating"), gen_overrides=overrides)


def _target_mode(dec, analysis):
    if "mode_freq_hz" in analysis:
        cand = [i for i in dec.oscillatory(0.05, 5.0) if dec.lam[i].imag > 0]
        if not cand:
            raise ModalError("no oscillatory mode")
        return min(cand, key=lambda i: abs(dec.frequency_hz(i) - analysis["mode_freq_hz"]))
    lo, hi = analysis.get("mode_band_hz", (0.2, 1.0))
    return inter_area_mode(dec, lo, hi)


def _controllers(scn, system):
    spec = (scn.get("controllers") or {}).get("miadrc")
    if not spec:
        return []
    for g in spec["generators"]:
        if g not in system.gen_names:
            raise ScenarioError(f"unknown generator {g!r}", "$.controllers.miadrc.generators")
    coeffs = MultiIndexCoeffs(**spec.get("coeffs", {}))
    gspec = dict(spec.get("gains", {}))
    b = gspec.pop("b", "auto")
    gains = []
    for g in spec["generators"]:
        bg = compute_b(system, system.gen_names.index(g), coeffs) if b == "auto" else b
        gains.append(MiadrcGains(b=bg, **gspec))
    return [MiadrcBank(spec["generators"], gains, coeffs,
                       enable_time=spec.get("enable_time", 0.0),
                       auto_detect=spec.get("auto_detect", False),
                       gate=DetectionGate())]


def _attack(scn, mode_freq):
    a = scn.get("attack")
    if not a:
        return None
    f = mode_freq if a["freq_hz"] == "mode" else a["freq_hz"]
    if f is None:
        raise ScenarioError("attack frequency 'mode' but no mode was found", "$.attack.freq_hz")
    return MmaCommand.from_hz(a["i_pct"], f, a.get("phi", 0.0), a.get("t_start", 0.0),
                              a.get("t_stop", scn.data["sim"]["t_end"]))


def _process(scn, base, seed=None):
    lp = scn.get("load_process") or {}
    return LoadProcess(base, lp.get("sigma", 0.0), 2 * math.pi * lp.get("bandwidth_hz", 5.0),
                       lp.get("seed", 0) if seed is None else seed)


# -- report -----------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    scenario: str
    scenario_hash: str
    seed: int
    traces: dict = field(default_factory=dict)
    modal: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    laws: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def report_hash(self):
        h = hashlib.sha256()
        h.update(self.scenario_hash.encode())
        h.update(str(self.seed).encode())
        for name in sorted(self.traces):
            tr = self.traces[name]
            h.update(name.encode())
            h.update(np.ascontiguousarray(tr.time).tobytes())
            for ch in sorted(tr.channels):
                h.update(ch.encode())
                h.update(np.ascontiguousarray(tr.channels[ch], dtype=float).tobytes())
        h.update(json.dumps(_plain(self.metrics), sort_keys=True).encode())
        return h.hexdigest()

    @property
    def suppression_rate(self):
        return self.metrics.get("suppression_rate")

    def to_dict(self):
        return _plain({"scenario": self.scenario, "scenario_hash": self.scenario_hash,
                       "report_hash": self.report_hash, "seed": self.seed,
                       "version": __version__, "modal": self.modal,
                       "predictions": self.predictions, "laws": self.laws,
                       "metrics": self.metrics, "traces": sorted(self.traces)})

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for name, tr in self.traces.items():
            p = out / f"traces_{name}.csv"
            tr.to_csv(p)
            files.append({"path": p.name, "kind": "trace", "columns": ["time"] + list(tr.channels)})
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        files.append({"path": "report.json", "kind": "report"})
        write_manifest(out, f"run:{self.scenario}", files, {"scenario_hash": self.scenario_hash,
                                                            "seed": self.seed})
        return files


def _plain(obj):
    """JSON-friendly copy (numpy scalars/arrays, complex, tuples)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _window(scn, cmd, t_end):
    """Steady-state window: explicit, else the last 5 s of the attack window."""
    w = (scn.get("analysis") or {}).get("window")
    if w:
        return float(w[0]), float(w[1])
    t1 = min(cmd.t_stop, t_end) if cmd is not None else t_end
    return max(0.0, t1 - 5.0), t1


def run_scenario(spec, seed=None, out_dir=None) -> ExperimentReport:
    """Power flow, initialisation, optional modal analysis, simulation and metrics.

    With controllers configured an uncontrolled baseline run is made as well
    (unless ``analysis.baseline`` is false) so the suppression rate can be
    computed over the same window.
    """
    scn = load_scenario(spec)
    analysis = scn.get("analysis") or {}
    system = build_scenario_system(scn)
    rep = ExperimentReport(scn.name, scn.digest(), int((scn.get("load_process") or {}).get("seed", 0)
                                                       if seed is None else seed))

    mode_freq = None
    dec = lm = None
    if analysis.get("modal", True):
        lm = linearize(system)
        dec = decompose(lm)
        try:
            i = _target_mode(dec, analysis)
            info = mode_info(dec, i)
            mode_freq = info.frequency
            rep.modal = {"mode": info.to_dict(),
                         "modes": [{"frequency_hz": dec.frequency_hz(k), "damping_ratio": dec.damping_ratio(k)}
                                   for k in dec.oscillatory(0.1, 3.0) if dec.lam[k].imag > 0]}
        except ModalError as err:
            rep.modal = {"error": str(err)}

    cmd = _attack(scn, mode_freq)
    sim = scn.data["sim"]
    ctrls = _controllers(scn, system)
    dt = sim.get("dt", 0.001 if ctrls else 0.01)
    cfg = SimConfig(dt=dt, t_end=sim["t_end"], integrator=sim.get("integrator", "rk4"),
                    record_signals=tuple(scn.get("outputs") or ()), record_every=sim.get("record_every", 1))
    base = system.p_ref0 * system.pile_rating
    process = _process(scn, base, rep.seed)

    def run(controllers):
        stream = CommandStream(process, cmd, dt, sim["t_end"])
        return simulate(system, cfg, Controls(p_ref=stream, controllers=controllers))

    rep.traces["main"] = run(ctrls)
    if ctrls and analysis.get("baseline", True):
        rep.traces["baseline"] = run([])
    if ctrls:
        rep.metrics["enabled_at"] = ctrls[0].enabled_at

    tr = rep.traces["main"]
    t0, t1 = _window(scn, cmd, sim["t_end"])
    rep.metrics["window"] = [t0, t1]
    rep.metrics["amplitude"] = {ch: steady_amplitude(tr.time, v, t0, t1) for ch, v in tr.channels.items()}
    metric = analysis.get("metric_channel") or next(iter(tr.channels))
    rep.metrics["metric_channel"] = metric
    if "baseline" in rep.traces:
        bt = rep.traces["baseline"]
        a_un = steady_amplitude(bt.time, bt[metric], t0, t1)
        a_c = rep.metrics["amplitude"][metric]
        rep.metrics["baseline_amplitude"] = a_un
        rep.metrics["suppression_rate"] = suppression_rate(a_c, a_un)

    if cmd is not None and dec is not None:
        t_pred = np.arange(0.0, sim["t_end"] + 1e-9, 0.05)
        mr = mean_response(dec, cmd, base, t_pred)
        rep.predictions["mean_response"] = mr.to_dict()
        rep.predictions["attack_freq_hz"] = cmd.freq_hz
        if process.sigma > 0 and metric in lm.output_labels:
            k = lm.output_index(metric)
            var = predict_variance(dec, cmd, process.sigma, process.bandwidth_w, t_pred, output=k)
            rep.predictions["variance_mean"] = float(np.mean(var.total[(t_pred >= t0) & (t_pred <= t1)]))
            rep.laws = law_checks(mean_amplitude=mr.steady_amplitude(k),
                                  stochastic_std=math.sqrt(max(rep.predictions["variance_mean"], 0.0)))
    if out_dir is not None:
        rep.write(out_dir)
    return rep


def suppression_rate(controlled_amp, uncontrolled_amp):
    """1 - controlled / uncontrolled steady amplitude."""
    if uncontrolled_amp <= 0:
        raise ValueError("uncontrolled amplitude must be positive")
    return 1.0 - controlled_amp / uncontrolled_amp


def run_batch(specs, max_workers=None, **kw):
    """Run several scenarios, one per worker thread; results keep input order."""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda s: run_scenario(s, **kw), specs))


def modal_report(spec):
    """Modal analysis only: target mode plus all electromechanical-range modes."""
    scn = load_scenario(spec)
    system = build_scenario_system(scn)
    dec = decompose(linearize(system))
    i = _target_mode(dec, scn.get("analysis") or {})
    return {"scenario": scn.name, "mode": mode_info(dec, i).to_dict(),
            "modes": [mode_info(dec, k).to_dict() for k in dec.oscillatory(0.1, 3.0) if dec.lam[k].imag > 0]}


def sweep(spec, param, values, modal_only=True, max_workers=None, substeps=4):
    """Vary one dotted scenario field. Modal sweeps follow the target mode by MAC.

    Numeric modal sweeps track through ``substeps`` intermediate points per
    interval so large jumps do not lose the mode; only ``values`` are returned.
    """
    scn = load_scenario(spec)
    if not modal_only:
        variants = [scn.with_value(param, v) for v in values]
        reports = run_batch(variants, max_workers=max_workers)
        return [{"value": v, **_plain(r.metrics)} for v, r in zip(values, reports)]
    numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)
    grid, keep = list(values), list(range(len(values)))
    if numeric and substeps > 1 and len(values) > 1:
        grid, keep = [values[0]], [0]
        for a, b in zip(values[:-1], values[1:]):
            grid += [a + (b - a) * k / substeps for k in range(1, substeps + 1)]
            keep.append(len(grid) - 1)
    analysis = scn.get("analysis") or {}
    infos = mode_sweep(lambda v: build_scenario_system(scn.with_value(param, v)), grid,
                       select=lambda dec: _target_mode(dec, analysis))
    return [{"value": values[n], "frequency_hz": infos[k].frequency,
             "damping_ratio": infos[k].damping_ratio,
             "real": float(np.real(infos[k].eigenvalue)), "imag": float(np.imag(infos[k].eigenvalue))}
            for n, k in enumerate(keep)]


# -- output helpers -------------------------------------------------------------------------

MANIFEST_SCHEMA = _obj({
    "figure": {"type": "string"},
    "version": {"type": "string"},
    "parameters": {"type": "object"},
    "files": {"type": "array", "items": {
        "type": "object",
        "properties": {"path": {"type": "string"}, "kind": {"enum": ["trace", "table", "report"]},
                       "columns": {"type": "array", "items": {"type": "string"}}},
        "required": ["path", "kind"], "additionalProperties": False}},
}, required=["figure", "version", "parameters", "files"])


def write_manifest(out_dir, figure, files, parameters):
    data = _plain({"figure": figure, "version": __version__, "parameters": parameters, "files": files})
    jsonschema.validate(data, MANIFEST_SCHEMA)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(data, indent=2))
    return path


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return {"path": Path(path).name, "kind": "table", "columns": list(columns)}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_plain(obj), indent=2))
    return {"path": Path(path).name, "kind": "report"}


def _trace_file(out, name, trace):
    p = Path(out) / f"{name}.csv"
    trace.to_csv(p)
    return {"path": p.name, "kind": "trace", "columns": ["time"] + list(trace.channels)}


# -- recipes ---------------------------------------------------------------------------------

def _scenario_data(name):
    return copy.deepcopy(load_scenario(name).data)


def _run_attack(data, i_pct=None, freq_hz=None, outputs=None, t_end=None):
    d = copy.deepcopy(data)
    if i_pct is not None:
        d["attack"]["i_pct"] = i_pct
    if freq_hz is not None:
        d["attack"]["freq_hz"] = freq_hz
    if outputs is not None:
        d["outputs"] = outputs
    if t_end is not None:
        d["sim"]["t_end"] = t_end
        d["attack"]["t_stop"] = t_end
    return run_scenario(d)


def pile_step_response(system, p0=0.2, p1=0.5, t_step=0.1, t_end=4.0):
    """Pile command step p0 -> p1 (pile pu) on ``system``; records power and PLL states."""
    rec = ("pile.Pe", "pile.Pref", "pile.Qe", "pile.x_pll", "pile.theta_pll")
    return simulate(system, SimConfig(dt=1e-3, t_end=t_end, record_signals=rec),
                    Controls(p_ref=lambda t: p0 if t < t_step else p1))


def identify_pile_mode(trace, t_step=0.1, channel="pile.x_pll", decimate=10, order=6):
    """Prony estimate of the PLL mode from a step response.

    The PLL integrator state carries the mode cleanly; the active power is
    dominated by the fast, real current-loop poles.
    """
    mask = trace.time >= t_step
    y = np.asarray(trace[channel])[mask][::decimate]
    dt = decimate * (trace.time[1] - trace.time[0])
    pr = prony_identify(y - y[-1], order, dt=dt)
    return dict(zip(("frequency_hz", "damping_ratio", "amplitude", "phase"), pr.dominant(0.5, 5.0)))


def _table2(out):
    cal = calibrate_pile()
    pile = replace(PileParams(), kp3=cal.kp3, ki3=cal.ki3)
    sys_ = stiff_source_system(pile, 0.2)
    dec = decompose(linearize(sys_))
    i = pile_mode(dec)
    # step of the command 0.2 -> 0.5 pu, as on the test bench
    tr = pile_step_response(sys_)
    fit = identify_pile_mode(tr)
    files = [_trace_file(out, "pile_step", tr),
             _write_json(out / "table2.json", {
                 "kp3": cal.kp3, "ki3": cal.ki3, "converged": cal.converged,
                 "eigen": {"frequency_hz": dec.frequency_hz(i), "damping_ratio": dec.damping_ratio(i)},
                 "prony": fit})]
    return files, {"target_frequency_hz": 1.370, "target_damping": 0.2797, "step": [0.2, 0.5]}


def _fig8(out):
    sys_ = stiff_source_system(PileParams(), 0.5)
    dec = decompose(linearize(sys_))
    i = pile_mode(dec)
    pf = participation_factors(dec, i)
    rows = [(lab, float(v)) for lab, v in zip(dec.state_labels, pf)]
    return [write_table(out / "fig8.csv", ["state", "participation"], rows)], {"p_ref": 0.5}


def _fig9(out):
    base = PileParams()
    rows = []
    for name, vals in (("kp3", np.linspace(0.5, 2.0, 7) * base.kp3), ("ki3", np.linspace(0.5, 2.0, 7) * base.ki3)):
        for v in vals:
            dec = decompose(linearize(stiff_source_system(replace(base, **{name: float(v)}), 0.5)))
            k = pile_mode(dec)
            lam = dec.lam[k] if dec.lam[k].imag > 0 else np.conj(dec.lam[k])
            rows.append((name, float(v), lam.real, lam.imag, dec.frequency_hz(k), dec.damping_ratio(k)))
    cols = ["parameter", "value", "real", "imag", "frequency_hz", "damping_ratio"]
    return [write_table(out / "fig9.csv", cols, rows)], {"scale": [0.5, 2.0], "points": 7}


def _fig12(out):
    values = [0.5, 1, 2, 3, 4, 5, 6, 7, 8]
    rows = sweep("kundur2area_base", "pile.load", values)
    cols = ["pile_load", "frequency_hz", "damping_ratio", "real", "imag"]
    f = write_table(out / "fig12.csv", cols,
                    [(r["value"], r["frequency_hz"], r["damping_ratio"], r["real"], r["imag"]) for r in rows])
    return [f], {"scenario": "kundur2area_base", "pile_load": values}


def daily_charging_profile(hours=None, base=0.5, peak=8.0):
    """Synthetic coordinated-charging demand (system pu) over a day.

    Valley-filling shape: low during the day, a ramp after 19:00, a plateau
    near ``peak`` around midnight and a decline to ``base`` by 07:00.
    """
    h = np.arange(24.0) if hours is None else np.asarray(hours, float)
    night = np.exp(-0.5 * (((h - 0.5 + 12) % 24 - 12) / 2.6) ** 2)
    return base + (peak - base) * night


def _fig13(out):
    hours = np.arange(24.0)
    prof = daily_charging_profile(hours, peak=7.0)
    order = np.argsort(prof)
    res = sweep("kundur2area_base", "pile.load", [float(prof[k]) for k in order])
    by_hour = {int(hours[k]): r for k, r in zip(order, res)}
    rows = [(h, prof[h], by_hour[h]["frequency_hz"], by_hour[h]["damping_ratio"]) for h in range(24)]
    f = write_table(out / "fig13.csv", ["hour", "pile_load", "frequency_hz", "damping_ratio"], rows)
    return [f], {"scenario": "kundur2area_base", "profile": "synthetic valley-filling, peak 7.0 pu"}


def _fig14(out):
    data = _scenario_data("kundur2area_base")
    files, amps = [], {}
    for ip in (0.1, 0.2, 0.3):
        rep = _run_attack(data, i_pct=ip)
        files.append(_trace_file(out, f"fig14_I{int(ip * 100)}", rep.traces["main"]))
        amps[ip] = rep.metrics["amplitude"][rep.metrics["metric_channel"]]
    files.append(_write_json(out / "fig14.json", {"amplitude": amps}))
    return files, {"scenario": "kundur2area_base", "i_pct": [0.1, 0.2, 0.3]}


def _fig15(out):
    files, amps = [], {}
    for name in ("kundur2area_base", "kundur2area_heavy"):
        rep = run_scenario(name)
        files.append(_trace_file(out, f"fig15_{name}", rep.traces["main"]))
        amps[name] = {"amplitude": rep.metrics["amplitude"][rep.metrics["metric_channel"]],
                      "mode": rep.modal.get("mode")}
    files.append(_write_json(out / "fig15.json", amps))
    return files, {"scenarios": ["kundur2area_base", "kundur2area_heavy"]}


def frequency_study(data, freqs, t_end=60.0, window=(40.0, 60.0)):
    """Steady amplitude, shape correlation and beat frequency per attack frequency."""
    scn = load_scenario(data)
    system = build_scenario_system(scn)
    dec = decompose(linearize(system))
    i = _target_mode(dec, scn.get("analysis") or {})
    f_mode = dec.frequency_hz(i)
    labels = system.state_labels()
    shape = dec.u_right[[labels.index(f"{g}.omega") for g in system.gen_names], i]
    metric = (scn.get("analysis") or {}).get("metric_channel", "G1.Pe")
    outs = [f"{g}.{s}" for g in system.gen_names for s in ("Pe", "omega")]
    rows, traces = [], {}
    for f in freqs:
        d = copy.deepcopy(scn.data)
        d["attack"].update(freq_hz=f, t_stop=t_end)
        d["sim"].update(t_end=t_end)
        d["outputs"] = outs
        d["analysis"] = {**d.get("analysis", {}), "modal": False, "window": list(window)}
        rep = run_scenario(d)
        tr = rep.traces["main"]
        traces[f] = tr
        ph = [lockin_phasor(tr.time, tr[f"{g}.omega"], f, *window) for g in system.gen_names]
        t_on = d["attack"].get("t_start", 0.0)
        beat = beat_frequency(tr.time, tr[metric], t_on, window[0], abs(f - f_mode)) \
            if abs(f - f_mode) > 0.01 else (0.0, 0.0)
        rows.append({"f_att": f, "amplitude": steady_amplitude(tr.time, tr[metric], *window),
                     "shape_corr": shape_correlation(ph, shape), "beat_hz": beat[0],
                     "expected_beat_hz": abs(f - f_mode)})
    return {"mode_freq": f_mode, "cases": rows}, traces


def _fig16(out):
    res, traces = frequency_study("kundur_heavy_mma", [0.57, 0.62, 0.65])
    files = [_trace_file(out, f"fig16_{int(round(f * 100))}", tr) for f, tr in traces.items()]
    res["laws"] = law_checks(mode_freq=res["mode_freq"],
                             frequency_cases=[(c["f_att"], c["amplitude"], c["shape_corr"]) for c in res["cases"]],
                             beat_cases=[(c["f_att"], c["beat_hz"]) for c in res["cases"]])
    files.append(_write_json(out / "fig16.json", res))
    return files, {"scenario": "kundur_heavy_mma", "freqs_hz": [0.57, 0.62, 0.65]}


def stochastic_study(name="kundur2area_base", sigma=2.4, n_trials=500, t_end=20.0, dt=0.01,
                     output="G1.Pe", seed=1, pem_every=10):
    """Monte Carlo, SRS+CQC and PEM variance of one output on the linearised model."""
    scn = load_scenario(name)
    system = build_scenario_system(scn)
    lm = linearize(system)
    dec = decompose(lm)
    f = dec.frequency_hz(_target_mode(dec, scn.get("analysis") or {}))
    a = scn.get("attack") or {}
    cmd = MmaCommand.from_hz(a.get("i_pct", 0.3), f, 0.0, 0.0)
    w_bw = 2 * math.pi * (scn.get("load_process") or {}).get("bandwidth_hz", 5.0)
    t = np.arange(0.0, t_end, dt)
    k = lm.output_index(output)
    base = system.p_ref0 * system.pile_rating
    mean, var = monte_carlo_variance(lm, n_trials, t, seed, cmd, sigma=sigma, w_bandwidth=w_bw,
                                     p_a0_mean=base, output=k)
    pred = predict_variance(dec, cmd, sigma, w_bw, t, output=k)
    pem = np.interp(t, t[::pem_every], variance_pem(dec, cmd, sigma, w_bw, t[::pem_every], output=k))
    return {"t": t, "mc_mean": mean, "mc_var": var, "srs": pred.sigma_sq_srs, "cqc": pred.sigma_sq_cqc,
            "pem": pem, "attack_freq": f, "pairs": pred.mode_pair_set, "xi": pred.xi}


def _fig17(out):
    r = stochastic_study()
    t = r["t"]
    files = [write_table(out / "fig17_variance.csv", ["time", "mc_mean", "mc_var", "srs", "cqc", "pem"],
                         zip(t, r["mc_mean"], r["mc_var"], r["srs"], r["cqc"], r["pem"]))]
    t0 = 8.0
    fr, sp = variance_spectrum(t, r["mc_var"] - r["mc_var"][t >= t0].mean(), t0=t0)
    files.append(write_table(out / "fig17_spectrum.csv", ["frequency_hz", "amplitude"], zip(fr, sp)))
    w = t >= t0
    laws = law_checks(variance_t=t[w], variance=r["mc_var"][w], attack_freq=r["attack_freq"])
    files.append(_write_json(out / "fig17.json", {"law5": laws["law5"], "pairs": r["pairs"],
                                                   "xi": r["xi"], "attack_freq_hz": r["attack_freq"]}))
    return files, {"scenario": "kundur2area_base", "sigma": 2.4, "n_trials": 500, "seed": 1}


def _miadrc_case(out, name, tag, extra_outputs=()):
    data = _scenario_data(name)
    if extra_outputs:
        data["outputs"] = list(dict.fromkeys(list(data.get("outputs", [])) + list(extra_outputs)))
    rep = run_scenario(data)
    files = [_trace_file(out, f"{tag}_controlled", rep.traces["main"]),
             _trace_file(out, f"{tag}_uncontrolled", rep.traces["baseline"]),
             _write_json(out / f"{tag}.json", {"metrics": rep.metrics, "mode": rep.modal.get("mode")})]
    return files, rep


def _fig18_19(out):
    files = []
    base = _scenario_data("kundur_heavy_mma_miadrc")
    base.update(name="kundur_base_mma_miadrc", loads={"9": 13.67})
    base["pile"]["load"] = 0.5
    for tag, spec in (("fig18", base), ("fig19", "kundur_heavy_mma_miadrc")):
        rep = run_scenario(spec)
        files += [_trace_file(out, f"{tag}_controlled", rep.traces["main"]),
                  _trace_file(out, f"{tag}_uncontrolled", rep.traces["baseline"]),
                  _write_json(out / f"{tag}.json", {"metrics": rep.metrics})]
    return files, {"scenarios": ["kundur_base_mma_miadrc (derived)", "kundur_heavy_mma_miadrc"]}


def _fig20(out):
    files, rep = _miadrc_case(out, "kundur_heavy_mma_miadrc", "fig20",
                              ("G1.ut", "G1.ue", "G1.miadrc.chi3"))
    bt = rep.traces["baseline"]
    dt = bt.time[1] - bt.time[0]
    t_det = detection_gate(bt[rep.metrics["metric_channel"]], dt, return_time=True)
    files.append(_write_json(out / "fig20_detection.json", {"detected_at": t_det,
                                                           "enabled_at": rep.metrics.get("enabled_at")}))
    return files, {"scenario": "kundur_heavy_mma_miadrc"}


def _fig21(out):
    files, rep = _miadrc_case(out, "ieee39_mma_miadrc", "fig21")
    return files, {"scenario": "ieee39_mma_miadrc"}


RECIPES = {
    "table2": _table2, "fig8": _fig8, "fig9": _fig9, "fig12": _fig12, "fig13": _fig13,
    "fig14": _fig14, "fig15": _fig15, "fig16": _fig16, "fig17": _fig17,
    "fig18_19": _fig18_19, "fig20": _fig20, "fig21": _fig21,
}


def reproduce(figure_id, out_dir="results"):
    """Write the data behind ``figure_id`` plus ``manifest.json``; returns the paths."""
    if figure_id not in RECIPES:
        raise ScenarioError(f"unknown figure id {figure_id!r}; available: {', '.join(RECIPES)}",
                            "$.figure_id")
    out = Path(out_dir) / figure_id
    out.mkdir(parents=True, exist_ok=True)
    files, params = RECIPES[figure_id](out)
    man = write_manifest(out, figure_id, files, params)
    return [out / f["path"] for f in files] + [man]
