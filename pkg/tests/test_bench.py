import csv
import io
import math

import numpy as np
import pytest
import yaml

from eemcast.bench import experiment
from eemcast.bench.cli import main
from eemcast.bench.config import ConfigError, load_config, parse_config
from eemcast.bench.experiment import (
    INCOMPLETE_MARKER,
    SCHEMA,
    bootstrap_ci,
    read_records,
    run_experiment,
    summarize,
)
from eemcast.bench.plots import emit_plots, plot_convergence, read_traces
from eemcast.netmodel import db_to_linear, generate_channels

BASE = {
    "name": "tiny",
    "network": {"num_bs": 2, "antennas": 2, "groups_per_bs": 1, "users_per_group": 1, "sinr_target_db": -10},
    "power": {"rf_chain_power": 2.0},
    "trials": 2,
    "seed": 7,
}


def _cfg(tmp_path, **extra):
    data = {**BASE, **extra, "output": {"dir": str(tmp_path)}}
    return parse_config(data)


def _write_yaml(tmp_path, **extra):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({**BASE, **extra, "output": {"dir": "out"}}))
    return path


def test_parse_defaults_and_units(tmp_path):
    cfg = parse_config({"power": {"max_antenna_power_dbw": 9}})
    assert cfg.power.max_antenna_power == pytest.approx(db_to_linear(9.0))
    assert cfg.grid() == [{}]
    assert cfg.variants == ("full", "simple", "no-as")
    cfg = _cfg(tmp_path, sweep={"alpha": [1, 2], "P_RF": [0.5, 1]})
    assert len(cfg.grid()) == 4
    net, pm, opts = cfg.at({"alpha": 2, "P_RF": 0.5})
    assert opts.alpha == 2.0 and pm.rf_chain_power == 0.5
    net, _, _ = cfg.at({"N": 5, "gamma_bar_db": 10})
    assert net.antennas_per_bs == (5, 5)
    np.testing.assert_allclose(net.sinr_targets, 10.0)


@pytest.mark.parametrize(
    "bad",
    [
        {"bogus": 1},
        {"network": {"antennas": 0}},
        {"network": {"colour": 1}},
        {"power": {"pa_efficiency": 2}},
        {"sca": {"alpha": 0.5}},
        {"sweep": {"beta": [1]}},
        {"sweep": {"alpha": [0.9]}},
        {"sweep": {"P_RF": []}},
        {"trials": 0},
        {"variants": ["fast"]},
        {"output": {"file": "x"}},
        [1, 2],
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_load_config_relative_output(tmp_path):
    cfg = load_config(_write_yaml(tmp_path))
    assert cfg.csv_path == tmp_path / "out" / "tiny.csv"
    (tmp_path / "broken.yaml").write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.yaml")


def test_env_overrides(tmp_path, monkeypatch):
    cfg = _cfg(tmp_path)
    monkeypatch.setenv("EEMCAST_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("EEMCAST_WORKERS", "3")
    assert cfg.csv_path == tmp_path / "env" / "tiny.csv"
    assert cfg.num_workers == 3


def test_single_trial_no_as(tmp_path):
    cfg = _cfg(tmp_path, trials=1, variants=["no-as"])
    axes, rows = read_records(run_experiment(cfg))
    assert axes == [] and len(rows) == 1
    assert rows[0]["variant"] == "no-as"
    assert rows[0]["active_per_bs"] in ("2;2", "")


def test_alpha_sweep_shape_and_content(tmp_path):
    cfg = _cfg(tmp_path, sweep={"alpha": [1.0, 2.0], "P_RF": [1.0, 2.0]}, variants=["full", "simple"])
    path = run_experiment(cfg)
    text = path.read_text()
    assert text.startswith(f"# {SCHEMA} name=tiny")
    axes, rows = read_records(path)
    assert axes == ["alpha", "P_RF"]
    assert len(rows) == 2 * 2 * 2 * cfg.trials
    for r in rows:
        if r["status"] in ("ok", "refit-infeasible-fallback"):
            assert abs(r["ee_nats"] - r["sum_rate_nats"] / r["total_power_w"]) <= 1e-9
            assert r["ee_bits"] == pytest.approx(r["ee_nats"] / math.log(2), rel=1e-12)
            assert r["active_total"] == sum(int(c) for c in r["active_per_bs"].split(";"))
        assert r["seed"] == 7
    # every variant of a trial saw the same channel draw
    hashes = {}
    for r in rows:
        hashes.setdefault(r["trial"], set()).add(r["channel_hash"])
    assert all(len(v) == 1 for v in hashes.values())
    assert len({next(iter(v)) for v in hashes.values()}) == cfg.trials
    cfg0, _, _ = cfg.at({})
    assert rows[0]["channel_hash"] == generate_channels(cfg0, experiment.channel_seed(7, 0)).digest()
    assert path.with_suffix(".traces.csv").exists()
    assert path.with_suffix(".timing.csv").exists()


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    cfg = _cfg(tmp_path, sweep={"alpha": [1.0, 1.5]})
    first = run_experiment(cfg).read_bytes()
    traces = cfg.csv_path.with_suffix(".traces.csv").read_bytes()
    assert run_experiment(cfg).read_bytes() == first
    monkeypatch.setenv("EEMCAST_WORKERS", "2")
    assert run_experiment(cfg).read_bytes() == first
    assert cfg.csv_path.with_suffix(".traces.csv").read_bytes() == traces


def test_interrupt_and_resume(tmp_path, monkeypatch):
    cfg = _cfg(tmp_path, trials=3, variants=["full"])
    reference = run_experiment(cfg).read_bytes()

    real, calls = experiment._task, []

    def flaky(args):
        calls.append(args)
        if len(calls) == 2:
            raise KeyboardInterrupt
        return real(args)

    monkeypatch.setattr(experiment, "_task", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(cfg)
    partial = cfg.csv_path.read_text()
    assert partial.rstrip().endswith(INCOMPLETE_MARKER)
    monkeypatch.setattr(experiment, "_task", real)
    assert run_experiment(cfg, resume=True).read_bytes() == reference


def test_bootstrap_ci():
    assert bootstrap_ci([]) != bootstrap_ci([])  # nan pair
    assert bootstrap_ci([2.0]) == (2.0, 2.0)
    vals = np.random.default_rng(0).normal(5, 1, 200)
    lo, hi = bootstrap_ci(vals)
    assert lo < vals.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 / math.sqrt(200), rel=0.25)
    assert bootstrap_ci(vals) == (lo, hi)


def test_summarize_and_plots(tmp_path):
    cfg = _cfg(tmp_path, sweep={"alpha": [1.0, 2.0]}, variants=["full", "no-as"])
    path = run_experiment(cfg)
    axes, table = summarize(path)
    assert axes == ["alpha"] and len(table) == 4
    for entry in table:
        assert entry["n"] == cfg.trials
        if entry["n_ok"]:
            assert entry["ci_lo"] <= entry["mean_ee_nats"] <= entry["ci_hi"]
            assert entry["mean_ee_bits"] == pytest.approx(entry["mean_ee_nats"] / math.log(2))
        assert entry["mean_oracle_gap"] is None
    out = emit_plots(axes, table, tmp_path / "plots", stem="tiny")
    assert [p.name for p in out] == ["tiny_alpha.svg"]
    svg = out[0].read_bytes()
    assert emit_plots(axes, table, tmp_path / "plots", stem="tiny")[0].read_bytes() == svg
    traces = read_traces(path.with_suffix(".traces.csv"))
    assert all(set(ph) <= {"relaxed", "refit"} for ph in traces.values())
    conv = plot_convergence({"t": next(iter(traces.values()))}, tmp_path / "conv.svg")
    assert conv.read_text().lstrip().startswith("<?xml")


def test_summary_oracle_gap(tmp_path):
    cfg = _cfg(tmp_path, trials=2, variants=["full"], oracle=True)
    axes, table = summarize(run_experiment(cfg))
    _, rows = read_records(cfg.csv_path)
    assert all(r["status"] == "ok" and r["oracle_ee"] is not None for r in rows)
    assert table[0]["mean_oracle_gap"] >= -1e-4


def test_infeasible_rows_are_recorded(tmp_path):
    net = {**BASE["network"], "sinr_target_db": 60}
    cfg = _cfg(tmp_path, trials=1, network=net)
    axes, table = summarize(run_experiment(cfg))
    _, rows = read_records(cfg.csv_path)
    assert [r["status"] for r in rows] == ["infeasible-qos"] * 3
    assert all(e["n"] == 1 and e["n_ok"] == 0 and math.isnan(e["mean_ee_nats"]) for e in table)


def test_cli_verbs(tmp_path, capsys, monkeypatch):
    path = _write_yaml(tmp_path, sweep={"alpha": [1.5]}, trials=1)
    assert main(["run", str(path)]) == 0
    csv_path = tmp_path / "out" / "tiny.csv"
    assert csv_path.exists()

    capsys.readouterr()
    assert main(["summarize", str(csv_path)]) == 0
    out = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(out)))
    assert {r["variant"] for r in rows} == {"full", "simple", "no-as"}
    assert main(["summarize", str(csv_path), "-o", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").exists()

    assert main(["plot", str(csv_path), "--out-dir", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "tiny_alpha.svg").exists()
    assert (tmp_path / "p" / "tiny_convergence.svg").exists()

    capsys.readouterr()
    assert main(["check", str(path), "--csv", str(csv_path)]) == 0
    assert "PASS" in capsys.readouterr().out

    assert main(["oracle", str(path), "--chain", "--alphas", "1,2"]) == 0
    out = capsys.readouterr().out
    assert "gap=" in out and "EE_bin=" in out
    assert (tmp_path / "out" / "tiny_oracle_p0_t0.csv").exists()

    monkeypatch.setenv("EEMCAST_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert main(["run", str(path)]) == 0
    assert (tmp_path / "elsewhere" / "tiny.csv").read_bytes() == csv_path.read_bytes()


def test_cli_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"trials": 0}))
    assert main(["run", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    big = _write_yaml(tmp_path, network={**BASE["network"], "antennas": 7})
    assert main(["oracle", str(big)]) == 2
    with pytest.raises(SystemExit):
        main([])


def test_check_flags_inconsistent_csv(tmp_path, capsys):
    path = _write_yaml(tmp_path, trials=1, variants=["full", "no-as"])
    assert main(["run", str(path)]) == 0
    csv_path = tmp_path / "out" / "tiny.csv"
    lines = csv_path.read_text().splitlines()
    header = lines[1].split(",")
    row = lines[2].split(",")
    row[header.index("ee_nats")] = repr(float(row[header.index("ee_nats")]) + 1.0)
    row[header.index("status")] = "ok"
    other = lines[3].split(",")
    other[header.index("channel_hash")] = "deadbeef"
    csv_path.write_text("\n".join(lines[:2] + [",".join(row), ",".join(other)]) + "\n")
    assert main(["check", str(path), "--csv", str(csv_path)]) == 1
    out = capsys.readouterr().out
    assert "EE column inconsistent" in out and "different channels" in out
