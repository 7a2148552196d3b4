"""Config parsing, experiment dispatch, persistence, and CLI behavior."""

import json
from pathlib import Path

import numpy as np
import pytest

from mskd.core import ParseError
from mskd.runner import (
    EXPERIMENT_KINDS,
    emit_summary,
    main,
    parse_config,
    parse_config_dict,
    run_experiment,
    world_to_dict,
)
from mskd.worlds import appendix_world

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def minimal_doc(**overrides):
    doc = {
        "kind": "appendix_a",
        "seed": 0,
        "world": world_to_dict(appendix_world()),
        "bounds": {"w_min": 0.01, "w_max": 0.99, "lipschitz": 25.0},
        "operators": {"token": {"family": "inverse_entropy"},
                      "task": {"family": "uniform"},
                      "context": {"family": "uniform"}},
        "params": {},
    }
    doc.update(overrides)
    return doc


class TestParseConfig:
    def test_bundled_appendix_config(self):
        cfg = parse_config(CONFIGS / "appendix_a.json")
        assert cfg.kind == "appendix_a"
        assert cfg.world.bank.k == 2
        assert cfg.world.vocab.size == 3
        np.testing.assert_allclose(cfg.world.bank.dists(0, 0)[0], [0.8, 0.15, 0.05])

    def test_missing_file(self):
        with pytest.raises(ParseError):
            parse_config(CONFIGS / "does_not_exist.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            parse_config(p)

    def test_infeasible_bounds_named(self):
        doc = minimal_doc(bounds={"w_min": 0.6, "w_max": 0.9})
        with pytest.raises(ParseError) as exc:
            parse_config_dict(doc)
        assert "0.6" in str(exc.value)

    def test_unresolved_teacher_reference(self):
        doc = minimal_doc()
        doc["world"]["teachers"]["table"] = doc["world"]["teachers"]["table"][:0]
        with pytest.raises(ParseError) as exc:
            parse_config_dict(doc)
        assert "missing cell" in str(exc.value)

    def test_all_errors_collected(self):
        doc = minimal_doc(kind="nonsense", bounds={"w_min": 0.9, "w_max": 0.2})
        doc["world"]["tasks"][0]["importance"] = -1.0
        with pytest.raises(ParseError) as exc:
            parse_config_dict(doc)
        msg = str(exc.value)
        assert "kind" in msg and "bounds" in msg and "world" in msg

    def test_unknown_label_reference(self):
        doc = minimal_doc(kind="safety")
        doc["params"] = {"s_min": 0.5,
                         "labels": [{"input": 42, "context": 0, "token": 0}]}
        with pytest.raises(ParseError) as exc:
            parse_config_dict(doc)
        assert "unknown input 42" in str(exc.value)

    def test_hash_ignores_output_path(self):
        a = parse_config_dict(minimal_doc())
        b = parse_config_dict(minimal_doc(out="/somewhere/else"))
        assert a.config_hash == b.config_hash

    def test_hash_changes_with_seed(self):
        a = parse_config_dict(minimal_doc(seed=0))
        b = parse_config_dict(minimal_doc(seed=1))
        assert a.config_hash != b.config_hash


class TestRunExperiment:
    def test_every_kind_has_a_bundled_config(self):
        for kind in EXPERIMENT_KINDS:
            assert (CONFIGS / f"{kind}.json").exists(), kind
            assert parse_config(CONFIGS / f"{kind}.json").kind == kind

    @pytest.mark.parametrize("kind", ["appendix_a", "conformance", "fixed_point",
                                      "perturbation", "variance", "safety", "pareto"])
    def test_bundled_config_passes(self, kind, tmp_path):
        record = run_experiment(parse_config(CONFIGS / f"{kind}.json"))
        assert record.passed, [a for a in record.assertions if not a["pass"]]
        out = emit_summary(record, tmp_path / kind, quiet=True)
        assert (out / "summary.json").exists()

    def test_rate_dispatch_reduced(self, tmp_path):
        # the bundled rate config runs the full ten-seed study (exercised by
        # the acceptance suite); here only the dispatch path, shrunk
        doc = json.loads((CONFIGS / "rate.json").read_text())
        doc["trainer"]["steps"] = 6000
        doc["trainer"]["eval_every"] = 100
        doc["params"]["n_seeds"] = 3
        doc["params"]["slope_low"] = -2.0
        doc["params"]["slope_high"] = -0.3
        record = run_experiment(parse_config_dict(doc))
        assert record.passed, [a for a in record.assertions if not a["pass"]]
        emit_summary(record, tmp_path, quiet=True)

    def test_train_config_bitwise_comparison(self, tmp_path):
        record = run_experiment(parse_config(CONFIGS / "train.json"))
        names = {a["name"]: a["pass"] for a in record.assertions}
        assert names["uniform_equals_classic_bitwise"]
        emit_summary(record, tmp_path / "train", quiet=True)

    def test_csv_bodies_are_deterministic(self, tmp_path):
        cfg = parse_config(CONFIGS / "appendix_a.json")
        out1 = emit_summary(run_experiment(cfg), tmp_path / "run1", quiet=True)
        out2 = emit_summary(run_experiment(cfg), tmp_path / "run2", quiet=True)
        for f1 in sorted(out1.iterdir()):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes(), f1.name

    def test_summary_schema(self, tmp_path):
        record = run_experiment(parse_config(CONFIGS / "appendix_a.json"))
        out = emit_summary(record, tmp_path, quiet=True)
        doc = json.loads((out / "summary.json").read_text())
        assert set(doc) == {"config_hash", "kind", "assertions"}
        assert all({"name", "expected", "measured", "tol", "pass"} <= set(a)
                   for a in doc["assertions"])

    def test_empty_record_refused(self, tmp_path):
        from mskd.core import MskdError
        from mskd.runner import RunRecord
        empty = RunRecord("x", "appendix_a", "0", "now")
        with pytest.raises(MskdError):
            emit_summary(empty, tmp_path)


class TestCli:
    def test_list_kinds(self, capsys):
        assert main(["list-kinds"]) == 0
        out = capsys.readouterr().out.split()
        assert set(out) == set(EXPERIMENT_KINDS)

    def test_validate_ok(self, capsys):
        assert main(["validate", str(CONFIGS / "appendix_a.json")]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(minimal_doc(kind="nope")))
        assert main(["validate", str(p)]) == 2

    def test_run_pass_exit_zero(self, tmp_path):
        code = main(["run", str(CONFIGS / "appendix_a.json"),
                     "--out", str(tmp_path / "o"), "--quiet"])
        assert code == 0

    def test_run_failure_exit_one(self, tmp_path):
        doc = minimal_doc()
        doc["params"] = {"given_entropies": [0.2, 1.9]}  # wrong givens: assertions fail
        p = tmp_path / "fail.json"
        p.write_text(json.dumps(doc))
        assert main(["run", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 1

    def test_config_error_exit_two(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{]")
        assert main(["run", str(p)]) == 2

    def test_seed_override_changes_hash(self, tmp_path, capsys):
        p = CONFIGS / "appendix_a.json"
        main(["run", str(p), "--out", str(tmp_path / "a"), "--quiet"])
        main(["run", str(p), "--seed", "99", "--out", str(tmp_path / "b"), "--quiet"])
        ha = json.loads((tmp_path / "a" / "summary.json").read_text())["config_hash"]
        hb = json.loads((tmp_path / "b" / "summary.json").read_text())["config_hash"]
        assert ha != hb

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AWKD_OUT", str(tmp_path / "envout"))
        assert main(["run", str(CONFIGS / "appendix_a.json"), "--quiet"]) == 0
        produced = list((tmp_path / "envout").glob("appendix_a-*/summary.json"))
        assert len(produced) == 1
