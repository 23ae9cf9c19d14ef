import json

import numpy as np
import pytest

from tradenet import pipeline, reports
from tradenet.cli import main
from tradenet.matching import replay
from tradenet.powerlaw import sample_discrete_powerlaw
from tradenet.synth import MarketConfig, random_plan
from tradenet.tape import parse_order_tape, read_trades

CONFIG = {"n_stocks": 2, "n_days": 6, "n_background_traders": 400, "order_rate": 4.0, "seed": 5}


@pytest.fixture(scope="module")
def market(tmp_path_factory):
    root = tmp_path_factory.mktemp("market")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    plan = root / "plan.json"
    plan.write_text(json.dumps(random_plan(MarketConfig(**CONFIG), 10, seed=1).to_dict()))
    assert main(["pipeline", "--config", str(cfg), "--plan", str(plan), "--out", str(root / "run"), "--group-size", "5"]) == 0
    return root


def hashes(d):
    return {p.relative_to(d).as_posix(): reports.sha256(p) for p in sorted(d.rglob("*")) if p.is_file()}


def test_pipeline_outputs_validate_in_full(market):
    run = market / "run"
    reports.validate(reports.load_json(run / "motifs" / "motifs.json"), "motif_report")
    reports.validate(reports.load_json(run / "eventstudy" / "event_study.json"), "event_study_report")
    reports.validate(reports.load_json(run / "impact" / "impact.json"), "impact_report")
    for m in run.rglob("manifest_*.json"):
        reports.validate(reports.load_json(m), "manifest")


def test_pipeline_is_reproducible(market):
    before = hashes(market / "run")
    args = ["pipeline", "--config", str(market / "config.json"), "--plan", str(market / "plan.json"), "--group-size", "5"]
    assert main(args + ["--out", str(market / "run")]) == 0
    assert hashes(market / "run") == before
    # a different output directory changes only the paths recorded in manifests
    assert main(args + ["--out", str(market / "again")]) == 0
    strip = lambda h: {k: v for k, v in h.items() if "manifest_" not in k}
    assert strip(hashes(market / "again")) == strip(before)
    # the memo handoff is invisible: running stages one at a time gives the same files
    staged = market / "staged"
    assert main(["replay", str(market / "run" / "synth" / "tape.csv"), "--out", str(staged)]) == 0
    assert strip(hashes(staged)) == strip(hashes(market / "run" / "replay"))
    assert main(["motifs", str(staged / "trades.csv"), "--out", str(staged / "m")]) == 0
    assert reports.sha256(staged / "m" / "motifs.json") == reports.sha256(market / "run" / "motifs" / "motifs.json")


def test_replay_matches_library(market):
    parsed = parse_order_tape(market / "run" / "synth" / "tape.csv")
    n = sum(len(replay(evs).trades) for evs in parsed.streams().values())
    assert len(read_trades(market / "run" / "replay" / "trades.csv")) == n


def test_motif_report_matches_library(market):
    trades = read_trades(market / "run" / "replay" / "trades.csv")
    assert reports.load_json(market / "run" / "motifs" / "motifs.json") == pipeline.motif_report(trades)


def test_eventstudy_flags(market, tmp_path):
    r = market / "run" / "replay"
    m = market / "run" / "motifs" / "motifs.json"
    base = ["eventstudy", str(r / "trades.csv"), str(r / "quotes.csv"), str(m), "--group-size", "3"]
    assert main(base + ["--side", "seller", "--fit-range", "5:150", "--out", str(tmp_path / "a")]) == 0
    man = reports.load_json(tmp_path / "a" / "manifest_eventstudy.json")
    assert man["params"] == {"group_size": 3, "fit_range": [5, 150], "side": "seller"}
    assert main(base + ["--fit-range", "9:3", "--out", str(tmp_path / "b")]) == 2


def test_jsonl_format_round_trip(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_days": 2, "order_rate": 3.0, "seed": 1}))
    assert main(["synth", "--config", str(cfg), "--format", "jsonl", "--out", str(tmp_path / "s")]) == 0
    assert main(["replay", str(tmp_path / "s" / "tape.jsonl"), "--format", "jsonl", "--out", str(tmp_path / "r")]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s2")]) == 0
    assert main(["replay", str(tmp_path / "s2" / "tape.csv"), "--out", str(tmp_path / "r2")]) == 0
    assert read_trades(tmp_path / "r" / "trades.jsonl") == read_trades(tmp_path / "r2" / "trades.csv")


def test_seed_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_days": 1, "order_rate": 2.0, "seed": 1}))
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["synth", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "b")])
    assert reports.sha256(tmp_path / "a" / "tape.csv") != reports.sha256(tmp_path / "b" / "tape.csv")
    assert reports.load_json(tmp_path / "b" / "manifest_synth.json")["seed"] == 2


def test_empty_tape(tmp_path):
    tape = tmp_path / "empty.csv"
    tape.write_text("stock,day,timestamp_ms,trader,action,side,price_ticks,size,order_ref\n")
    assert main(["replay", str(tape), "--out", str(tmp_path / "r")]) == 0
    assert read_trades(tmp_path / "r" / "trades.csv") == []
    assert main(["motifs", str(tmp_path / "r" / "trades.csv"), "--out", str(tmp_path / "m")]) == 0
    assert reports.load_json(tmp_path / "m" / "motifs.json") == {"stocks": {}}


def test_fit_subcommand(tmp_path):
    x = sample_discrete_powerlaw(3.19, 1, 5000, np.random.default_rng(0))
    sample = tmp_path / "x.txt"
    sample.write_text("\n".join(map(str, x)))
    assert main(["fit", str(sample), "--out", str(tmp_path / "f")]) == 0
    rep = reports.load_json(tmp_path / "f" / "fit.json")
    reports.validate(rep, "fit_report")
    assert abs(rep["exponent"] - 3.19) < 0.2
    (tmp_path / "flat.json").write_text("[3, 3, 3, 3]")
    assert main(["fit", str(tmp_path / "flat.json"), "--out", str(tmp_path / "g")]) == 2


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert "no such file" in capsys.readouterr().err
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"n_days": 0}))
    assert main(["synth", "--config", str(bad_cfg), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["synth", "--config", str(tmp_path / "junk.json"), "--out", str(tmp_path / "o")]) == 2
    bad_tape = tmp_path / "t.csv"
    bad_tape.write_text("stock,day\nS1,2024-01-02\n")
    assert main(["replay", str(bad_tape), "--out", str(tmp_path / "o")]) == 2
    bad_motifs = tmp_path / "m.json"
    bad_motifs.write_text(json.dumps({"stocks": {"S1": {"census": "x"}}}))
    empty_trades = tmp_path / "trades.csv"
    empty_trades.write_text("stock,day,timestamp_ms,seller,buyer,price_ticks,size,aggressor,seq\n")
    assert main(["impact", str(empty_trades), str(bad_motifs), "--out", str(tmp_path / "o")]) == 2
    assert main(["nonsense"]) == 2

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "motif_report", boom)
    assert main(["motifs", str(empty_trades), "--out", str(tmp_path / "o")]) == 1
