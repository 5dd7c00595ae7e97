import csv
import filecmp
from pathlib import Path

import pytest
import yaml

from poisson_clt.cli import ExperimentConfig, ConfigError, main

BASE = {
    "model": {"id": "compound_sum", "params": {"marks": "rademacher"}},
    "scales": [25, 100, 400],
    "seed": 7,
    "plan": {"n_outer": 20, "n_inner": 4, "n_samples": 400, "n_cov": 200,
             "budget": 20, "gauss_n": 20000},
    "bounds": ["d3", "d3_compound"],
    "distances": ["dK"],
    "checks": ["poincare"],
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _run(tmp_path, cfg, out, *extra):
    return main(["rates", "--config", _write(tmp_path, cfg), "--out", str(out), *extra])


def _same_tree(a: Path, b: Path):
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []


def test_unknown_key_is_config_error(tmp_path):
    assert _run(tmp_path, dict(BASE, bogus=1), tmp_path / "o") == 2


def test_unknown_model_param(tmp_path):
    cfg = dict(BASE, model={"id": "compound_sum", "params": {"colour": "red"}})
    assert _run(tmp_path, cfg, tmp_path / "o") == 2


def test_missing_config_file(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_bad_scale_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(dict(BASE, scales=[-1]))


def test_full_run_outputs(tmp_path):
    out = tmp_path / "run"
    assert _run(tmp_path, BASE, out) == 0
    for stem in ("bounds", "gammas", "distances", "samples", "poincare"):
        for s in ("s25", "s100", "s400"):
            assert (out / f"{stem}_{s}.csv").exists()
    rows = list(csv.DictReader((out / "summary.csv").open()))
    d3 = [r for r in rows if r["quantity"] == "bound_d3_compound"]
    assert d3 and float(d3[0]["slope_or_lhs"]) == pytest.approx(-0.5, abs=1e-9)


def test_reruns_are_byte_identical(tmp_path):
    assert _run(tmp_path, BASE, tmp_path / "a") == 0
    assert _run(tmp_path, BASE, tmp_path / "b") == 0
    _same_tree(tmp_path / "a", tmp_path / "b")


def test_worker_count_does_not_change_output(tmp_path):
    assert _run(tmp_path, BASE, tmp_path / "one") == 0
    assert _run(tmp_path, BASE, tmp_path / "two", "--workers", "2") == 0
    _same_tree(tmp_path / "one", tmp_path / "two")


def test_seed_override_changes_samples(tmp_path):
    assert _run(tmp_path, BASE, tmp_path / "a") == 0
    assert _run(tmp_path, BASE, tmp_path / "b", "--seed", "8") == 0
    a = (tmp_path / "a" / "samples_s25.csv").read_bytes()
    assert a != (tmp_path / "b" / "samples_s25.csv").read_bytes()


def test_replay_recovers_recorded_value(tmp_path, capsys):
    out = tmp_path / "run"
    assert _run(tmp_path, BASE, out) == 0
    rc = main(["replay", "--witness", str(out / "witness_dK_s100.txt"),
               "--samples", str(out / "samples_s100.csv")])
    assert rc == 0
    assert "replayed=" in capsys.readouterr().out


def test_replay_empty_samples(tmp_path):
    out = tmp_path / "run"
    assert _run(tmp_path, BASE, out) == 0
    empty = tmp_path / "empty.csv"
    empty.write_text("x1\n")
    assert main(["replay", "--witness", str(out / "witness_dK_s100.txt"),
                 "--samples", str(empty)]) == 2
