import csv
import json
import time
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from evmma import cli
from evmma.scenarios import (MANIFEST_SCHEMA, RECIPES, ScenarioError, list_scenarios, load_scenario,
                             reproduce, run_batch, run_scenario, suppression_rate, sweep)

BUNDLED = ["ieee39_mma", "ieee39_mma_miadrc", "kundur2area_base", "kundur2area_heavy",
           "kundur_heavy_mma", "kundur_heavy_mma_miadrc"]


@lru_cache(maxsize=None)
def _run(name):
    t0 = time.perf_counter()
    rep = run_scenario(name)
    return rep, time.perf_counter() - t0


def _raw(name):
    return json.loads(Path(load_scenario(name).source).read_text())


# -- listing -----------------------------------------------------------------------

def test_list_bundled(monkeypatch):
    monkeypatch.delenv("EVMMA_SCENARIO_DIR", raising=False)
    names = list_scenarios()
    assert {"kundur2area_base", "kundur2area_heavy", "ieee39_mma"} <= set(names)
    assert names == BUNDLED


def test_list_includes_user_files(tmp_path):
    data = _raw("kundur2area_base")
    data["name"] = "my_case"
    (tmp_path / "my_case.json").write_text(json.dumps(data))
    assert "my_case" in list_scenarios(tmp_path)


def test_user_scenario_by_env(tmp_path, monkeypatch):
    data = _raw("kundur2area_base")
    data["name"] = "env_case"
    (tmp_path / "env_case.json").write_text(json.dumps(data))
    monkeypatch.setenv("EVMMA_SCENARIO_DIR", str(tmp_path))
    assert "env_case" in list_scenarios()
    assert load_scenario("env_case").name == "env_case"


def test_empty_user_dir_lists_only_bundled(tmp_path):
    assert list_scenarios(tmp_path) == BUNDLED


# -- validation ----------------------------------------------------------------------

def test_unknown_key_rejected_with_path():
    data = _raw("kundur2area_base")
    data["pile"]["lod"] = 1.0
    with pytest.raises(ScenarioError) as err:
        load_scenario(data)
    assert err.value.path == "$.pile"


def test_bad_type_rejected_with_path():
    data = _raw("kundur_heavy_mma")
    data["attack"]["i_pct"] = "high"
    with pytest.raises(ScenarioError) as err:
        load_scenario(data)
    assert err.value.path == "$.attack.i_pct"


def test_attack_window_must_fit_simulation():
    data = _raw("kundur_heavy_mma")
    data["attack"]["t_stop"] = data["sim"]["t_end"] + 5
    with pytest.raises(ScenarioError, match="attack"):
        load_scenario(data)


def test_unknown_bus_rejected():
    data = _raw("kundur2area_base")
    data["pile"]["bus"] = 999
    with pytest.raises(Exception, match="999"):
        run_scenario(data)


def test_unknown_scenario_lists_available():
    with pytest.raises(ScenarioError, match="kundur2area_base"):
        load_scenario("no_such_case")


def test_with_value_and_digest():
    a = load_scenario("kundur2area_base")
    b = a.with_value("pile.load", 1.5)
    assert b.data["pile"]["load"] == 1.5 and a.data["pile"]["load"] != 1.5
    assert a.digest() != b.digest()
    assert a.digest() == load_scenario("kundur2area_base").digest()


# -- running -------------------------------------------------------------------------

@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_run_quickly(name):
    rep, secs = _run(name)
    assert secs < 60
    assert rep.traces and all(np.all(np.isfinite(v)) for v in rep.traces["main"].channels.values())


def test_heavy_attack_produces_forced_oscillation():
    rep, _ = _run("kundur_heavy_mma")
    m = rep.metrics
    assert m["amplitude"][m["metric_channel"]] > 0.1


def test_report_hash_is_deterministic():
    a = run_scenario("kundur_heavy_mma")
    b = run_scenario("kundur_heavy_mma")
    assert a.report_hash == b.report_hash
    assert a.report_hash == _run("kundur_heavy_mma")[0].report_hash


def test_seed_changes_stochastic_runs():
    scn = load_scenario("kundur_heavy_mma").with_value("load_process.sigma", 0.2)
    scn = scn.with_value("attack.t_stop", 5.0).with_value("sim.t_end", 5.0)
    a = run_scenario(scn, seed=1)
    b = run_scenario(scn, seed=1)
    c = run_scenario(scn, seed=2)
    assert a.report_hash == b.report_hash != c.report_hash


def test_ieee39_miadrc_enables_at_five_seconds():
    rep, _ = _run("ieee39_mma_miadrc")
    assert rep.metrics["enabled_at"] == pytest.approx(5.0, abs=1e-9)
    ue = rep.traces["main"]["G2.ue"]
    t = rep.traces["main"].time
    assert np.all(ue[t < 5.0 - 1e-9] == 0.0)
    assert np.any(ue[t > 5.5] != 0.0)


def test_suppression_rate_definition():
    assert suppression_rate(0.05, 1.0) == pytest.approx(0.95)
    rep, _ = _run("kundur_heavy_mma_miadrc")
    m = rep.metrics
    assert m["suppression_rate"] == pytest.approx(1 - m["amplitude"][m["metric_channel"]] / m["baseline_amplitude"])


def test_run_writes_outputs(tmp_path):
    scn = load_scenario("kundur_heavy_mma").with_value("attack.t_stop", 4.0).with_value("sim.t_end", 4.0)
    run_scenario(scn, out_dir=tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    _check_files(tmp_path, manifest)


def test_batch_matches_serial():
    scns = [load_scenario("kundur_heavy_mma").with_value("attack.t_stop", 4.0).with_value("sim.t_end", 4.0)
            .with_value("attack.i_pct", v) for v in (0.1, 0.2)]
    batch = run_batch(scns, max_workers=2)
    assert [r.report_hash for r in batch] == [run_scenario(s).report_hash for s in scns]


def test_modal_sweep_endpoints():
    rows = sweep("kundur2area_base", "pile.load", [0.5, 8.0])
    assert rows[0]["damping_ratio"] > rows[-1]["damping_ratio"]


# -- reproduce ----------------------------------------------------------------------------

def _check_files(out, manifest):
    for entry in manifest["files"]:
        p = Path(out) / entry["path"]
        assert p.exists(), entry
        if entry["kind"] in ("trace", "table"):
            with open(p) as fh:
                header = next(csv.reader(fh))
            assert header == entry["columns"]
        else:
            json.loads(p.read_text())


@pytest.mark.parametrize("fig", ["table2", "fig14", "fig17"])
def test_reproduce_manifest_schema(fig, tmp_path):
    files = reproduce(fig, tmp_path)
    out = tmp_path / fig
    manifest = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    assert manifest["figure"] == fig
    _check_files(out, manifest)
    assert files


def test_reproduce_table2_values(tmp_path):
    reproduce("table2", tmp_path)
    text = (tmp_path / "table2").glob("*.json")
    reports = [json.loads(p.read_text()) for p in text if p.name != "manifest.json"]
    blob = json.dumps(reports)
    assert "1.37" in blob


def test_reproduce_fig14_monotone(tmp_path):
    reproduce("fig14", tmp_path)
    out = tmp_path / "fig14"
    table = json.loads((out / "fig14.json").read_text())["amplitude"]
    amps = [table[k] for k in sorted(table, key=float)]
    assert all(b > a for a, b in zip(amps, amps[1:]))


def test_reproduce_unknown_figure_lists_ids(tmp_path):
    with pytest.raises(ScenarioError) as err:
        reproduce("fig99", tmp_path)
    assert "table2" in str(err.value)


def test_recipe_inventory():
    assert set(RECIPES) == {"table2", "fig8", "fig9", "fig12", "fig13", "fig14", "fig15", "fig16",
                            "fig17", "fig18_19", "fig20", "fig21"}


# -- command line -----------------------------------------------------------------------

def test_cli_list(capsys):
    assert cli.main(["list"]) == 0
    assert "kundur2area_base" in json.loads(capsys.readouterr().out)["scenarios"]


def test_cli_modal(capsys):
    assert cli.main(["modal", "kundur2area_base"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out


def test_cli_sweep(capsys):
    assert cli.main(["sweep", "kundur2area_base", "--param", "pile.load", "--values", "0.5,1.0"]) == 0
    assert len(json.loads(capsys.readouterr().out)["rows"]) == 2


def test_cli_error_is_json(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    data = _raw("kundur2area_base")
    data["sim"]["dt"] = "fast"
    bad.write_text(json.dumps(data))
    assert cli.main(["run", str(bad)]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ScenarioError" and err["path"] == "$.sim.dt"


def test_cli_unknown_figure(capsys, tmp_path):
    assert cli.main(["reproduce", "nope", "--out", str(tmp_path)]) == 1
    assert "table2" in json.loads(capsys.readouterr().err)["message"]


def test_cli_run_writes_report(capsys, tmp_path):
    src = _raw("kundur_heavy_mma")
    src["sim"]["t_end"] = 3.0
    src["attack"]["t_stop"] = 3.0
    p = tmp_path / "short.json"
    p.write_text(json.dumps(src))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["seed"] == 3 and (tmp_path / "o" / "manifest.json").exists()
