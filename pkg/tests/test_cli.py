"""Tests for result documents and the command-line tool."""

import csv
import io
import json

import numpy as np
import pytest

from delqg import cli, corpus
from delqg.documents import (BUNDLE_FORMAT, RunRecord, canonical_json, dumps, gain_bundle,
                             policy_from_bundle, scenario_hash)
from delqg.model import scenario_document
from delqg.policy import noiseless_cost, synthesize
from delqg.sim import exact_closed_loop_cost


def write_scenario(tmp_path, doc, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestDocuments:
    def test_bundle_round_trip(self, scenario):
        syn = synthesize(scenario.model, scenario.pattern, scenario.mode)
        text = dumps(gain_bundle(syn, scenario.document))
        bundle = json.loads(text)
        assert bundle["format"] == BUNDLE_FORMAT and bundle["cost"] == syn.cost
        pol = policy_from_bundle(scenario.model, bundle)
        assert exact_closed_loop_cost(scenario.model, pol) == pytest.approx(syn.cost, rel=1e-12)
        np.testing.assert_array_equal(np.array(bundle["schedules"]["F"]), syn.F)

    def test_bundle_schedule_lengths(self, nested_2x2):
        syn = synthesize(nested_2x2.model, nested_2x2.pattern, nested_2x2.mode)
        s = gain_bundle(syn)["schedules"]
        N = nested_2x2.model.N
        for key in ("K", "J", "F", "Rg", "Theta"):
            assert len(s[key]) == N
        assert len(s["Sigma"]) == len(s["P"]) == N + 1

    def test_not_a_bundle(self, nested_2x2):
        with pytest.raises(ValueError, match="gain bundle"):
            policy_from_bundle(nested_2x2.model, {"format": "other"})

    def test_hash_is_canonical(self, nested_2x2):
        doc = nested_2x2.document
        shuffled = json.loads(json.dumps(doc, sort_keys=False))
        shuffled = dict(reversed(list(shuffled.items())))
        assert scenario_hash(doc) == scenario_hash(shuffled)
        assert len(scenario_hash(doc)) == 64
        changed = dict(doc, horizon=doc["horizon"] + 1)
        assert scenario_hash(changed) != scenario_hash(doc)

    def test_canonical_json_compact(self):
        assert canonical_json({"b": 1, "a": [0.1]}) == '{"a":[0.1],"b":1}'

    def test_run_record(self):
        rec = RunRecord("h", "verify", "one_inf", "state", 1.0, 1.0, checks={"a": True})
        assert rec.passed
        doc = rec.to_document()
        assert doc["format"] == "delqg-run/1" and doc["checks"] == {"a": True}
        assert not RunRecord("h", "verify", "p", "m", 1.0, 1.0, checks={"a": False}).passed

    def test_scenario_document_round_trip(self, scenario):
        from delqg.model import parse_scenario

        doc = scenario_document(scenario.model, scenario.pattern, scenario.mode)
        back = parse_scenario(json.loads(json.dumps(doc)))
        np.testing.assert_array_equal(back.model.A, scenario.model.A)
        np.testing.assert_array_equal(back.model.V, scenario.model.V)


class TestValidate:
    def test_valid(self, capsys):
        assert cli.main(["validate", str(corpus.path("nested_2x2"))]) == cli.EXIT_OK

    def test_violation(self, tmp_path, capsys):
        doc = json.loads(corpus.text("nested_2x2"))
        doc["A"][0][1] = 0.5
        assert cli.main(["validate", write_scenario(tmp_path, doc)]) == cli.EXIT_FAIL
        assert "A" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["validate", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE

    def test_parse_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.main(["validate", str(path)]) == cli.EXIT_USAGE


class TestSynth:
    def test_prints_cost_and_writes_bundle(self, tmp_path, capsys):
        out = tmp_path / "g.json"
        assert cli.main(["synth", str(corpus.path("nested_2x2")), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        bundle = json.loads(out.read_text())
        assert f"J* = {bundle['cost']!r}" in printed
        assert bundle["scenario_hash"] == scenario_hash(corpus.load("nested_2x2").document)

    def test_noiseless_is_lqr(self, tmp_path, capsys):
        doc = json.loads(corpus.text("nested_2x2"))
        x0 = np.array([1.0, -0.5])
        doc["V"] = [[0, 0], [0, 0]]
        doc["cov0"] = np.outer(x0, x0).tolist()
        path = write_scenario(tmp_path, doc)
        assert cli.main(["synth", path]) == 0
        J = float(capsys.readouterr().out.split("=")[1])
        model = corpus.load("nested_2x2").model
        assert J == pytest.approx(noiseless_cost(model, x0), rel=1e-12)

    def test_unwritable_output(self, tmp_path, capsys):
        out = tmp_path / "missing" / "g.json"
        assert cli.main(["synth", str(corpus.path("nested_2x2")), "--out", str(out)]) == 2

    def test_invalid_scenario(self, tmp_path, capsys):
        doc = json.loads(corpus.text("nested_2x2"))
        doc["A"][0][1] = 0.5
        assert cli.main(["synth", write_scenario(tmp_path, doc)]) == cli.EXIT_FAIL


class TestVerify:
    def test_passes(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        code = cli.main(["verify", str(corpus.path("nested_2x2")), "--rollouts", "100000",
                         "--seed", "42", "--oracle", "--out", str(out)])
        text = capsys.readouterr().out
        assert code == cli.EXIT_OK, text
        assert "FAIL" not in text and text.count("PASS") >= 8
        rec = json.loads(out.read_text())
        assert rec["seed"] == 42 and rec["rollouts"] == 100000 and all(rec["checks"].values())

    def test_corrupted_gain_detected(self, capsys):
        code = cli.main(["verify", str(corpus.path("nested_2x2")), "--rollouts", "20000",
                         "--seed", "42", "--oracle", "--corrupt-gain", "0.3"])
        assert code == cli.EXIT_FAIL
        assert "FAIL" in capsys.readouterr().out

    def test_deterministic(self, tmp_path, capsys):
        docs = []
        for k in range(2):
            out = tmp_path / f"r{k}.json"
            cli.main(["verify", str(corpus.path("partial_2x2")), "--rollouts", "5000",
                      "--seed", "7", "--out", str(out)])
            doc = json.loads(out.read_text())
            assert set(doc.pop("timing")) >= {"synth", "exact", "monte_carlo"}
            docs.append(doc)
        assert docs[0] == docs[1]


class TestSweep:
    def rows(self, text):
        return list(csv.DictReader(io.StringIO(text)))

    def test_noise_sweep(self, capsys):
        code = cli.main(["sweep", str(corpus.path("correlated_2x2")), "--param", "noise",
                         "--values", "0,0.5,1"])
        assert code == cli.EXIT_OK
        rows = self.rows(capsys.readouterr().out)
        assert [float(r["value"]) for r in rows] == [0.0, 0.5, 1.0]
        costs = [float(rows[0][k]) for k in rows[0] if k.startswith("J_")]
        assert len(costs) == 4 and len(set(costs)) == 1
        for r in rows:
            J = {k: float(v) for k, v in r.items() if k.startswith("J_")}
            assert J["J_centralized"] <= J["J_no_delay"] * (1 + 1e-9)
            assert J["J_no_delay"] <= J["J_one_inf"] * (1 + 1e-9)
            assert J["J_one_zero"] <= J["J_one_inf"] * (1 + 1e-9)
        # costs grow linearly with the noise scale
        assert float(rows[2]["J_one_inf"]) == pytest.approx(2 * float(rows[1]["J_one_inf"]))

    def test_horizon_sweep_with_oracle(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        code = cli.main(["sweep", str(corpus.path("nested_2x2")), "--param", "horizon",
                         "--values", "1,2,3", "--oracle", "--restarts", "4", "--out", str(out)])
        assert code == cli.EXIT_OK
        rows = self.rows(out.read_text())
        for r in rows:
            for p in ("one_zero", "one_inf"):
                assert float(r[f"oracle_{p}"]) == pytest.approx(float(r[f"J_{p}"]), rel=1e-5)

    def test_pattern_sweep(self, capsys):
        assert cli.main(["sweep", str(corpus.path("nested_2x2")), "--param", "pattern",
                         "--values", "one_inf,centralized"]) == 0
        rows = self.rows(capsys.readouterr().out)
        assert rows[0]["J_one_inf"] and not rows[0]["J_centralized"]
        assert rows[1]["J_centralized"] and not rows[1]["J_one_inf"]

    def test_unknown_parameter(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["sweep", str(corpus.path("nested_2x2")), "--param", "delay",
                      "--values", "1"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_bad_values(self, capsys):
        assert cli.main(["sweep", str(corpus.path("nested_2x2")), "--param", "horizon",
                         "--values", "0"]) == cli.EXIT_USAGE


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "delqg" in capsys.readouterr().out
