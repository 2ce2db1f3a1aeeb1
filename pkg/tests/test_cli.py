import json
import shutil

import numpy as np
import pytest

from conftest import PIPELINE, TINY_CONFIG, run_cli, snapshot
from eegcf.cli import ConfigError, main, merge_config, read_jsonl, stage_seed


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


class TestConfig:
    def test_unknown_block(self):
        with pytest.raises(ConfigError, match="unknown config block"):
            merge_config({"bogus": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key train.lr"):
            merge_config({"train": {"lr": 1.0}})

    def test_defaults_untouched(self):
        merge_config({"train": {"epochs": 3}})
        assert merge_config({})["train"]["epochs"] == 30

    def test_stage_seeds_differ_and_follow_seed(self):
        a = merge_config({"global": {"seed": 1}})
        b = merge_config({"global": {"seed": 2}})
        assert stage_seed(a, "synth") != stage_seed(a, "train")
        assert stage_seed(a, "synth") != stage_seed(b, "synth")
        assert stage_seed(a, "synth") == stage_seed(merge_config({"global": {"seed": 1}}), "synth")

    def test_unknown_key_cli_error(self, tmp_path, capsys):
        codes = run_cli(tmp_path, {"synth": {"nope": 1}}, ["synth"])
        assert codes == [1]
        err = _error(capsys)
        assert err["command"] == "synth" and "unknown config key" in err["message"]


class TestPipeline:
    def test_outputs_present(self, tiny_run):
        out = tiny_run / "out"
        for cmd in PIPELINE:
            echo = json.loads((out / f"{cmd}.config.json").read_text())
            assert echo["synth"]["n_trials_per_class"] == 24
        for regime in ("underfit", "well_trained", "overfit"):
            assert (out / f"model_{regime}.eegcf").is_file()
            for mode in ("single", "all"):
                assert (out / f"explain_{regime}_{mode}.jsonl").is_file()
            for kind in ("hist", "kde", "marginals"):
                assert (out / f"fig3_{regime}_{kind}.csv").is_file()
        assert (out / "fig3_grid.svg").is_file()

    def test_cardinality(self, tiny_run):
        out = tiny_run / "out"
        trials = json.loads((out / "trials.json").read_text())
        specs = json.loads((out / "spectrograms.json").read_text())
        assert trials["n_trials"] == specs["n_trials"] == 48
        assert specs["n_samples"] == 224 * 224

    def test_underfit_history_one_epoch(self, tiny_run):
        lines = (tiny_run / "out" / "history_underfit.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_overfit_runs_ten_times_longer(self, tiny_run):
        lines = (tiny_run / "out" / "history_overfit.csv").read_text().splitlines()
        assert len(lines) == 1 + 10 * TINY_CONFIG["train"]["epochs"]

    def test_table1(self, tiny_run):
        lines = (tiny_run / "out" / "table1.csv").read_text().splitlines()
        assert lines[0].startswith("regime,class_mode,n_train,n_val")
        row = lines[1].split(",")
        assert row[1] == "2-class" and (row[2], row[3], row[4]) == ("24", "12", "12")

    def test_explain_mode_contracts(self, tiny_run):
        out = tiny_run / "out"
        for regime in ("underfit", "well_trained", "overfit"):
            single = read_jsonl(out / f"explain_{regime}_single.jsonl")
            assert single and all(len(r.edits) == 1 and r.mode == "single" for r in single)
            for r in read_jsonl(out / f"explain_{regime}_all.jsonl"):
                assert r.flipped or len(r.edits) == 49

    def test_table2_layout(self, tiny_run):
        lines = (tiny_run / "out" / "table2.csv").read_text().splitlines()
        assert lines[0] == "setting,class_mode,near_kp,same_kp,edits,flip_rate,n_pairs,regime"
        singles = [ln for ln in lines[1:] if ln.startswith("Single Edit")]
        assert singles and all(ln.split(",")[4] == "-" for ln in singles)
        metrics = json.loads((tiny_run / "out" / "metrics.json").read_text())
        assert metrics["reference"]["2-class"]["all"]["edits"] == 2.08

    def test_evaluate_invariant_to_line_order(self, tiny_run, tmp_path):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        out = work / "out"
        before = (out / "metrics.json").read_bytes()
        for p in out.glob("explain_*.jsonl"):
            lines = p.read_text().splitlines(keepends=True)
            p.write_text("".join(lines[::-1]))
        assert run_cli(work, TINY_CONFIG, ["evaluate"]) == [0]
        assert (out / "metrics.json").read_bytes() == before

    def test_evaluate_all_keypoint_results(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        run_cli(tmp_path, {"synth": {"n_trials_per_class": 4, "n_channels": 2}}, ["synth"])
        rec = {"query_id": 0, "distractor_id": 1, "c": 0, "c_prime": 1, "edits": [[8, 9], [1, 2]],
               "prob_trace": [0.2, 0.4, 0.6], "flipped": True, "predicted_class_after": 1, "mode": "all"}
        (out / "explain_well_trained_all.jsonl").write_text(json.dumps(rec) + "\n")
        assert run_cli(tmp_path, {"synth": {"n_trials_per_class": 4, "n_channels": 2}}, ["evaluate"]) == [0]
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["well_trained/all"]["near_kp_pct"] == 100.0

    def test_evaluate_mode_mismatch(self, tiny_run, tmp_path, capsys):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        src = work / "out" / "explain_overfit_all.jsonl"
        dst = work / "out" / "explain_overfit_single.jsonl"
        dst.write_text(src.read_text())
        assert run_cli(work, TINY_CONFIG, ["evaluate"]) == [1]
        assert "mode mismatch" in _error(capsys)["message"]

    def test_report_missing_regime(self, tiny_run, tmp_path, capsys):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        (work / "out" / "explain_overfit_all.jsonl").unlink()
        assert run_cli(work, TINY_CONFIG, ["report"]) == [1]
        err = _error(capsys)
        assert err["command"] == "report" and "overfit" in err["message"]


class TestCache:
    def test_cache_hit_and_invalidation(self, tiny_run, tmp_path, capsys):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        cache = work / "out" / "spectrograms.bin"
        before = cache.read_bytes()
        capsys.readouterr()
        assert run_cli(work, TINY_CONFIG, ["preprocess"]) == [0]
        assert "cache hit" in capsys.readouterr().out
        cfg = json.loads(json.dumps(TINY_CONFIG))
        cfg["tfa"] = {"clip_percentile": 90.0}
        assert run_cli(work, cfg, ["preprocess"]) == [0]
        assert "built 48 spectrograms" in capsys.readouterr().out
        assert cache.read_bytes() != before
        manifest = json.loads((work / "out" / "spectrograms.json").read_text())
        assert manifest["tfa_config"]["clip_percentile"] == 90.0

    def test_stale_cache_blocks_train(self, tiny_run, tmp_path, capsys):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        cfg = json.loads(json.dumps(TINY_CONFIG))
        cfg["tfa"] = {"clip_percentile": 95.0}
        assert run_cli(work, cfg, ["train"]) == [1]
        assert "stale" in _error(capsys)["message"]


class TestErrors:
    def test_empty_dataset(self, tmp_path, capsys):
        assert run_cli(tmp_path, {"synth": {"n_trials_per_class": 0}}, ["synth"]) == [1]
        err = _error(capsys)
        assert "empty dataset" in err["message"] and set(err) == {"error", "command", "message"}

    @pytest.mark.parametrize("cmd", ["preprocess", "train", "explain", "evaluate", "report"])
    def test_missing_inputs(self, tmp_path, capsys, cmd):
        assert run_cli(tmp_path, {}, [cmd]) == [1]
        err = _error(capsys)
        assert err["command"] == cmd and "missing" in err["message"]

    def test_single_line_error(self, tmp_path, capsys):
        run_cli(tmp_path, {}, ["train"])
        err = capsys.readouterr().err
        assert err.count("\n") == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["nope"])


class TestDeterminism:
    def test_seed_override(self, tmp_path):
        run_cli(tmp_path / "a", {"synth": {"n_trials_per_class": 4, "n_channels": 2}}, ["synth"], extra=("--seed", "5"))
        run_cli(tmp_path / "b", {"synth": {"n_trials_per_class": 4, "n_channels": 2}}, ["synth"], extra=("--seed", "6"))
        a = snapshot(tmp_path / "a" / "out")
        b = snapshot(tmp_path / "b" / "out")
        assert a["trials.bin"] != b["trials.bin"]
        assert json.loads(a["synth.config.json"])["global"]["seed"] == 5

    def test_worker_count_does_not_change_results(self, tiny_run, tmp_path):
        work = tmp_path / "w"
        shutil.copytree(tiny_run, work)
        before = snapshot(work / "out")
        from conftest import working_dir
        with working_dir(work):
            assert main(["explain", "--config", "cfg.json", "--output-dir", "out", "--workers", "1"]) == 0
        after = snapshot(work / "out")
        for name in before:
            if name.startswith("explain_"):
                assert before[name] == after[name], name
        assert np.all([before[n] == after[n] for n in before if n.endswith(".svg") and n.startswith("overlay")])
