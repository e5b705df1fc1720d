"""CLI tests: run, lexicon build, and analyze subcommands end to end."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from cgrs.backend import overthinking_spec
from cgrs.cli import main
from cgrs.controller import GenerationConfig, generate
from cgrs.lexicon import (
    TriggerCategory,
    TriggerWord,
    save_trigger_config,
)

from conftest import TOY_PROMPT


@pytest.fixture
def toy_assets(tmp_path):
    spec_path = tmp_path / "toy.json"
    spec_path.write_text(json.dumps(overthinking_spec().to_json_dict()))
    dataset_path = tmp_path / "problems.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for i in range(3):
            fh.write(
                json.dumps(
                    {"id": f"toy-{i}", "prompt": TOY_PROMPT, "gold_answer": "42"}
                )
                + "\n"
            )
    return spec_path, dataset_path


def run_cli(args):
    return main([str(a) for a in args])


class TestRunCommand:
    def test_default_modes(self, toy_assets, tmp_path, capsys):
        spec_path, dataset_path = toy_assets
        out = tmp_path / "out"
        rc = run_cli(
            [
                "run",
                "--dataset", dataset_path,
                "--backend", f"toy:{spec_path}",
                "--temperature", "1.0",
                "--top-p", "1.0",
                "--seeds", "0,1",
                "--reps", "2",
                "--out", out,
            ]
        )
        assert rc == 0
        captured = capsys.readouterr().out
        assert "vanilla" in captured and "cgrs" in captured
        assert (out / "vanilla.json").exists()
        assert (out / "cgrs.json").exists()
        assert (out / "summary.csv").exists()

    def test_explicit_modes_and_csv(self, toy_assets, tmp_path):
        spec_path, dataset_path = toy_assets
        out = tmp_path / "out"
        run_cli(
            [
                "run",
                "--dataset", dataset_path,
                "--backend", f"toy:{spec_path}",
                "--mode", "vanilla",
                "--mode", "fixed-p=1.0",
                "--mode", "cgrs",
                "--temperature", "1.0",
                "--top-p", "1.0",
                "--seeds", "0,1,2",
                "--reps", "3",
                "--out", out,
            ]
        )
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["dataset", "mode", "acc", "len", "lr"]
        by_mode = {row[1]: row for row in rows[1:]}
        assert set(by_mode) == {"vanilla", "fixed_p_1", "cgrs"}
        assert by_mode["vanilla"][2] == "100.0"
        assert by_mode["fixed_p_1"][3] == "6.0"
        assert by_mode["vanilla"][4] == "0.0"

    def test_run_byte_identical(self, toy_assets, tmp_path):
        spec_path, dataset_path = toy_assets
        args = [
            "run",
            "--dataset", dataset_path,
            "--backend", f"toy:{spec_path}",
            "--temperature", "1.0",
            "--top-p", "1.0",
            "--seeds", "0,1",
            "--reps", "2",
        ]
        run_cli(args + ["--out", tmp_path / "a"])
        run_cli(args + ["--out", tmp_path / "b"])
        for name in ("vanilla.json", "cgrs.json", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seeds_reps_mismatch(self, toy_assets, tmp_path):
        spec_path, dataset_path = toy_assets
        with pytest.raises(SystemExit, match="reps"):
            run_cli(
                [
                    "run",
                    "--dataset", dataset_path,
                    "--backend", f"toy:{spec_path}",
                    "--seeds", "0,1,2",
                    "--reps", "2",
                    "--out", tmp_path / "o",
                ]
            )

    def test_unknown_backend(self, toy_assets, tmp_path):
        _, dataset_path = toy_assets
        with pytest.raises(SystemExit, match="backend"):
            run_cli(
                [
                    "run",
                    "--dataset", dataset_path,
                    "--backend", "quantum",
                    "--out", tmp_path / "o",
                ]
            )

    def test_remote_requires_vocab(self, toy_assets, tmp_path):
        _, dataset_path = toy_assets
        with pytest.raises(SystemExit, match="remote-vocab"):
            run_cli(
                [
                    "run",
                    "--dataset", dataset_path,
                    "--backend", "remote",
                    "--out", tmp_path / "o",
                ]
            )

    def test_custom_trigger_config(self, toy_assets, tmp_path):
        spec_path, dataset_path = toy_assets
        config_path = tmp_path / "triggers.json"
        save_trigger_config(
            config_path,
            [TriggerWord("Wait", TriggerCategory.HESITATION_TRANSITION)],
            min_count=1,
        )
        out = tmp_path / "out"
        run_cli(
            [
                "run",
                "--dataset", dataset_path,
                "--backend", f"toy:{spec_path}",
                "--mode", "vanilla",
                "--temperature", "1.0",
                "--top-p", "1.0",
                "--seeds", "0",
                "--reps", "1",
                "--trigger-config", config_path,
                "--out", out,
            ]
        )
        data = json.loads((out / "vanilla.json").read_text())
        assert set(data["trigger_frequencies"]) == {"Wait"}

    def test_default_seed_list(self, toy_assets, tmp_path):
        spec_path, dataset_path = toy_assets
        out = tmp_path / "out"
        run_cli(
            [
                "run",
                "--dataset", dataset_path,
                "--backend", f"toy:{spec_path}",
                "--mode", "vanilla",
                "--temperature", "1.0",
                "--top-p", "1.0",
                "--reps", "2",
                "--out", out,
            ]
        )
        data = json.loads((out / "vanilla.json").read_text())
        assert data["seeds"] == [0, 1]


class TestLexiconBuild:
    def test_build_from_traces(self, tmp_path, capsys):
        vocab_path = tmp_path / "vocab.json"
        vocab_path.write_text(json.dumps(["Wait", "wait", "But", "x"]))
        traces_dir = tmp_path / "traces"
        traces_dir.mkdir()
        (traces_dir / "a.json").write_text(json.dumps([[0, 3, 0], [1, 3]]))
        (traces_dir / "b.jsonl").write_text(json.dumps([2, 3]) + "\n")
        out = tmp_path / "lex"
        rc = run_cli(
            [
                "lexicon", "build",
                "--traces", traces_dir,
                "--vocab", vocab_path,
                "--min-count", "2",
                "--out", out,
            ]
        )
        assert rc == 0
        trig = json.loads((out / "triggers.json").read_text())
        assert trig["token_ids"] == [0]  # only "Wait" appears twice
        with open(out / "frequencies.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["token_id", "surface_form", "base_word", "count"]
        counts = {row[1]: int(row[3]) for row in rows[1:]}
        assert counts == {"Wait": 2, "wait": 1, "But": 1}
        assert "kept=1" in capsys.readouterr().out

    def test_min_count_from_config(self, tmp_path):
        vocab_path = tmp_path / "vocab.json"
        vocab_path.write_text(json.dumps(["Wait", "But"]))
        traces_dir = tmp_path / "traces"
        traces_dir.mkdir()
        (traces_dir / "t.json").write_text(json.dumps([0, 0, 1]))
        config_path = tmp_path / "cfg.json"
        save_trigger_config(
            config_path,
            [
                TriggerWord("Wait", TriggerCategory.HESITATION_TRANSITION),
                TriggerWord("But", TriggerCategory.HESITATION_TRANSITION),
            ],
            min_count=2,
        )
        out = tmp_path / "lex"
        run_cli(
            [
                "lexicon", "build",
                "--traces", traces_dir,
                "--vocab", vocab_path,
                "--config", config_path,
                "--out", out,
            ]
        )
        trig = json.loads((out / "triggers.json").read_text())
        assert trig["token_ids"] == [0]


class TestAnalyze:
    def test_report_table(self, toy_assets, tmp_path, capsys):
        spec_path, dataset_path = toy_assets
        out = tmp_path / "out"
        run_cli(
            [
                "run",
                "--dataset", dataset_path,
                "--backend", f"toy:{spec_path}",
                "--mode", "vanilla",
                "--temperature", "1.0",
                "--top-p", "1.0",
                "--seeds", "0",
                "--reps", "1",
                "--out", out,
            ]
        )
        capsys.readouterr()
        rc = run_cli(["analyze", "--trace", out / "vanilla.json"])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert "metric,value" in lines
        assert "mode,vanilla" in lines
        assert "runs,3" in lines
        assert "trigger_word,count" in lines

    def test_decode_trace_table(self, overthinking_backend, overthinking_triggers, tmp_path, capsys):
        cfg = GenerationConfig(temperature=1.0, top_p=1.0, delta=0.9, max_tokens=100, seed=0)
        trace = generate(overthinking_backend, TOY_PROMPT, cfg, overthinking_triggers)
        path = tmp_path / "trace.json"
        path.write_text(trace.to_json())
        rc = run_cli(["analyze", "--trace", path])
        assert rc == 0
        outp = capsys.readouterr().out
        assert f"token_count,{trace.token_count}" in outp
        assert "final_certainty,0.944538" in outp
        assert "final_p,0.445382" in outp


class TestEntryPoint:
    def test_console_script_installed(self):
        import shutil

        exe = shutil.which("cgrs")
        assert exe is not None

    def test_missing_subcommand_exits(self):
        with pytest.raises(SystemExit):
            main([])
