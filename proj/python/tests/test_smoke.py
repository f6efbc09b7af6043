# Copyright 2026 The siitbench Authors
# SPDX-License-Identifier: Apache-2.0

import csv
import itertools
import json
import pathlib

import jsonschema
import pytest

import siitbench as sb

SCHEMAS = pathlib.Path(__file__).resolve().parents[2] / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def validate(name, doc):
    jsonschema.validate(doc, schema(name), cls=jsonschema.Draft202012Validator)


def test_tasks():
    assert sb.task_names() == ["frac_x", "open_close", "dedup", "ioi"]
    info = sb.task_info("frac_x")
    assert info["task_type"] == "Regression"
    with pytest.raises(sb.ConfigError):
        sb.task_info("sort")


def test_high_level_interchange():
    base, source = sb.sample_inputs("open_close", 2, seed=3)
    var = sb.task_info("open_close")["variables"][0]
    _, source_cache = sb.run_high_level("open_close", source)
    expected, _ = sb.run_high_level("open_close", base, {var: source_cache[var]})
    assert sb.int_inv("open_close", base, source, var) == expected
    with pytest.raises(sb.NodeError):
        sb.run_high_level("open_close", base, {"nope": [0.0]})


def test_stats():
    u, p, exact = sb.mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert (u, exact) == (0.0, True)
    assert p == pytest.approx(0.1)
    a, mag = sb.vargha_delaney_a12([4, 5, 6], [1, 2, 3])
    assert (a, mag) == (1.0, "large")
    with pytest.raises(sb.DomainError):
        sb.mann_whitney_u([], [1.0])


def test_roc_matches_pair_count():
    edges = ["embed->a0.h0", "embed->m0", "a0.h0->m0", "a0.h0->output", "m0->output", "embed->output"]
    labels = dict(zip(edges, [True, False, True, False, True, False]))
    scores = dict(zip(edges, [0.9, 0.1, 0.4, 0.4, 0.3, 0.8]))
    pos = [scores[e] for e in edges if labels[e]]
    neg = [scores[e] for e in edges if not labels[e]]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    assert sb.roc_auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)
    assert sb.pair_statistic(scores, labels) == pytest.approx(wins / 9, abs=1e-12)


def test_sweep():
    param, values = sb.parse_sweep("tau=1e-3..1e-1:log3")
    assert param == "tau"
    assert values == pytest.approx([1e-3, 1e-2, 1e-1])
    with pytest.raises(sb.ConfigError):
        sb.parse_sweep("tau=")


def test_cli_pipeline(tmp_path):
    model = tmp_path / "m"
    code, _, err = sb.run_cli(["train", "--task", "frac_x", "--samples", "40", "--max-epochs", "1",
                               "--n-interventions", "4", "--out", str(model)])
    assert code == 0, err
    for name, doc in [("model_config", "config.json"), ("weights_manifest", "weights.manifest.json"),
                      ("alignment", "alignment.json"), ("edges", "edges.json"), ("training_meta", "meta.json")]:
        validate(name, json.loads((model / doc).read_text()))

    m = sb.Model.load(model)
    assert m.task == "frac_x"
    rows = sb.sample_inputs("frac_x", 3, seed=1)
    out = m.forward(rows)
    assert len(out) == 3 and len(out[0]) == len(rows[0])
    assert m.forward(rows[:1])[0] == out[0]
    assert any(m.edge_labels.values())

    disc = tmp_path / "d.json"
    code, _, err = sb.run_cli(["discover", "--model", str(model), "--algo", "eap", "--samples", "8",
                               "--out", str(disc)])
    assert code == 0, err
    validate("discovery", json.loads(disc.read_text()))

    code, _, err = sb.run_cli(["eval", "--model", str(tmp_path / "absent")])
    assert code == 1
    assert err.startswith("error: integrity: ")
    assert sb.run_cli(["frobnicate"])[0] == 2


def test_corrupted_weights_raise(tmp_path):
    model = tmp_path / "m"
    assert sb.run_cli(["train", "--task", "dedup", "--samples", "20", "--max-epochs", "1",
                       "--n-interventions", "2", "--out", str(model)])[0] == 0
    blob = bytearray((model / "weights.bin").read_bytes())
    blob[len(blob) // 2] ^= 1
    (model / "weights.bin").write_bytes(bytes(blob))
    with pytest.raises(sb.IntegrityError):
        sb.Model.load(model)


def test_metadata_schema_accepts_csv_rows(tmp_path):
    rows = [{"case": "c", "task_type": "Regression", "description": "d", "weight_siit": 1.0,
             "iia": None, "siia": None, "n_nodes": 8, "n_circuit_nodes": 3}]
    validate("metadata", rows)
    path = tmp_path / "x.csv"
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerow(rows[0])
    assert path.read_text().splitlines()[0].startswith("case,task_type")
