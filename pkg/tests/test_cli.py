import csv

import pytest

from wifihijack.cli import main, verdict
from wifihijack.formats import read_json_doc, read_probe_log, read_trace

QUIET = ["--set", "inference.port_range=[40000,40063]"]


def write_config(tmp_path, text="seed: 4\n"):
    path = tmp_path / "scenario.yaml"
    path.write_text(text)
    return str(path)


def table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# wifihijack ")
    return list(csv.DictReader(lines[1:]))


class TestRun:
    def test_success_writes_outputs(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", write_config(tmp_path), "--out", str(out), *QUIET]) == 0
        doc = read_json_doc(out / "summary.json", "summary")
        assert doc["outcome"] == "success"
        assert doc["inferred"]["client_port"] == doc["truth"]["client_port"]
        assert len(read_probe_log(out / "probes.csv")) == doc["probes_sent"]
        assert read_trace(out / "trace.txt")

    def test_attack_failure_exits_2(self, tmp_path):
        out = tmp_path / "out"
        args = ["run", "--config", write_config(tmp_path), "--out", str(out), *QUIET,
                "--set", "channel.ap_isolation=true"]
        assert main(args) == 2
        assert read_json_doc(out / "summary.json", "summary")["failed_phase"] == "scan"

    def test_malformed_config_exits_1(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", write_config(tmp_path, "seed: ["), "--out", str(out)]) == 1
        assert not out.exists()

    def test_unknown_override_exits_1(self, tmp_path):
        assert main(["run", "--config", write_config(tmp_path), "--set", "x.y=1",
                     "--out", str(tmp_path / "o")]) == 1

    def test_usage_error_exits_1(self):
        assert main(["run"]) == 1
        assert main([]) == 1

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WIFIHIJACK_OUT", str(tmp_path / "env"))
        assert main(["run", "--config", write_config(tmp_path), *QUIET]) == 0
        assert (tmp_path / "env" / "summary.json").exists()

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WIFIHIJACK_OUT", str(tmp_path / "env"))
        assert main(["run", "--config", write_config(tmp_path), "--out", str(tmp_path / "flag"), *QUIET]) == 0
        assert (tmp_path / "flag" / "summary.json").exists() and not (tmp_path / "env").exists()


class TestSweep:
    def test_writes_table(self, tmp_path):
        out = tmp_path / "out"
        assert main(["sweep", "--config", write_config(tmp_path), "--axis", "channel.loss_prob",
                     "--values", "0,0.1", "--trials", "2", "--out", str(out), *QUIET]) == 0
        rows = table(out / "sweep.csv")
        assert [r["channel.loss_prob"] for r in rows] == ["0", "0.1"]
        assert all(r["trials"] == "2" for r in rows)

    @pytest.mark.parametrize("extra", [["--values", ""], ["--values", "0", "--trials", "0"],
                                       ["--values", "0", "--axis", "channel.nope"]])
    def test_bad_arguments(self, tmp_path, extra):
        args = ["sweep", "--config", write_config(tmp_path), "--axis", "channel.loss_prob",
                "--out", str(tmp_path / "o")]
        assert main(args + extra) == 1


class TestReplay:
    def test_matches_probe_log(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out), *QUIET]) == 0
        assert main(["replay", "--config", cfg, "--trace", str(out / "trace.txt"),
                     "--out", str(tmp_path / "r"), *QUIET]) == 0
        rows = table(tmp_path / "r" / "replay.csv")
        probes = read_probe_log(out / "probes.csv")
        assert [r["observation"] for r in rows] == [p.observation for p in probes]

    def test_empty_trace(self, tmp_path):
        trace = tmp_path / "empty.txt"
        trace.write_text("# wifihijack trace v1\n")
        assert main(["replay", "--trace", str(trace), "--out", str(tmp_path / "r")]) == 0
        assert table(tmp_path / "r" / "replay.csv") == []

    def test_corrupt_trace(self, tmp_path, capsys):
        trace = tmp_path / "bad.txt"
        trace.write_text("# wifihijack trace v1\n1,2,3\n")
        assert main(["replay", "--trace", str(trace), "--out", str(tmp_path / "r")]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_trace(self, tmp_path):
        assert main(["replay", "--trace", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 1

    @pytest.mark.parametrize("lengths,expected", [([], "silence"), ([56, 68], "ambiguous"), ([80, 68], "sack"),
                                                  ([68], "challenge"), ([56], "rst"), ([99], "other")])
    def test_verdict(self, lengths, expected):
        assert verdict(lengths) == expected


class TestReport:
    def test_tables(self, tmp_path):
        runs = tmp_path / "runs"
        for seed in range(1, 4):
            assert main(["run", "--config", write_config(tmp_path), "--seed", str(seed),
                         "--out", str(runs / f"s{seed}"), *QUIET]) == 0
        assert main(["run", "--config", write_config(tmp_path), "--out", str(runs / "iso"), *QUIET,
                     "--set", "channel.ap_isolation=true"]) == 2
        assert main(["report", str(runs), "--out", str(tmp_path / "rep")]) == 0
        points = table(tmp_path / "rep" / "ecdf.csv")
        assert 1 <= len(points) <= 3
        fractions = [float(p["fraction"]) for p in points]
        assert fractions == sorted(fractions) and fractions[-1] == 1.0
        phases = {r["phase"]: r for r in table(tmp_path / "rep" / "phases.csv")}
        assert phases["scan"]["failures"] == "1" and phases["port"]["failures"] == "0"
        assert phases["seq"]["runs"] == "3"

    def test_no_summaries(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 1
