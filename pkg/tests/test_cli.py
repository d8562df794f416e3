import json

import pytest

from spectral_mup.cli import build_parser, cli_main
from spectral_mup.io import read_csv, read_manifest

TINY = ["--n", "32", "--L", "1", "--H", "4", "--vocab", "16", "--seq-len", "8"]


def run(*argv):
    return cli_main([str(a) for a in argv])


def test_every_subcommand_is_registered():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"cchk", "norms", "depth", "sweep", "train", "plot", "verify"}


def test_bad_flags_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run("cchk", "--scale", "bogus")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("nosuchcommand")
    assert exc.value.code == 2


def test_contract_violation_exits_2(tmp_path, capsys):
    # r=3 does not divide H=4
    assert run("cchk", *TINY, "--points", "1,3", "--seeds", "1", "--steps", "2", "--out", tmp_path) == 2
    assert "error:" in capsys.readouterr().err


def test_cchk_writes_outputs_and_replays_from_manifest(tmp_path, capsys):
    out = tmp_path / "a"
    argv = ["cchk", *TINY, "--scale", "reps", "--points", "1,2,4", "--seeds", "2", "--steps", "2",
            "--exp-samples", "8", "--out", str(out)]
    assert run(*argv) == 0
    rows = read_csv(out / "records.csv", "coordcheck")
    assert {r["scale_value"] for r in rows} == {1, 2, 4}
    verdicts = json.loads((out / "verdicts.json").read_text())
    assert verdicts and {"quantity", "role", "measured_slope", "pass"} <= set(verdicts[0])
    manifest = read_manifest(out)
    assert manifest["command"] == "cchk" and manifest["argv"] == argv
    assert "AttnKV" in manifest["config"]["groups"]

    replay = list(manifest["argv"])
    replay[replay.index("--out") + 1] = str(tmp_path / "b")
    assert run(*replay) == 0
    assert (tmp_path / "b" / "records.csv").read_bytes() == (out / "records.csv").read_bytes()


def test_norms_and_depth(tmp_path, capsys):
    assert run("norms", "--n", "48", "--reps", "1,2,4", "--samples", "16", "--out", tmp_path / "n") == 0
    assert len(read_csv(tmp_path / "n" / "normexp.csv", "normexp")) == 3
    assert run("depth", "--n", "32", "--depths", "2,4", "--probes", "2", "--out", tmp_path / "d") == 0
    assert [r["L"] for r in read_csv(tmp_path / "d" / "depthexp.csv", "depthexp")] == [2, 4]
    assert "ratio monotone" in capsys.readouterr().out


def test_sweep_and_rerun(tmp_path, capsys):
    out = tmp_path / "s"
    assert run("sweep", "--widths", "32,64", "--L", "1", "--vocab", "16", "--seq-len", "8",
               "--lr-grid=-4:-2", "--wd-grid=-8:-8", "--min-tokens", "512", "--batch-scale", "1",
               "--corpus-length", "8192", "--out", out) == 0
    rows = read_csv(out / "sweep.csv", "sweep")
    assert len(rows) == 6
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["optima"]) == 2
    capsys.readouterr()
    assert run("sweep", "--out", out, "--rerun", 4) == 0
    replay = json.loads(capsys.readouterr().out)
    original = next(r for r in rows if r["trial"] == 4)
    assert replay["final_loss"] == original["final_loss"]
    assert run("sweep", "--out", out, "--rerun", 999) == 2


def test_train_with_checkpoint(tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    assert run("train", *TINY, "--steps", "4", "--batch", "2", "--corpus-length", "4096",
               "--checkpoint", ck, "--out", tmp_path / "t") == 0
    lines = (tmp_path / "t" / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 5
    assert ck.exists()


def test_train_reads_a_text_file(tmp_path, capsys):
    txt = tmp_path / "doc.txt"
    txt.write_text("the quick brown fox jumps over the lazy dog\n" * 50)
    assert run("train", *TINY[:-4], "--vocab", "257", "--seq-len", "8", "--steps", "2", "--batch", "2",
               "--corpus", txt, "--out", tmp_path / "t") == 0


def test_config_file_sets_defaults(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[depth]\nn = 32\ndepths = 2,4,8\nprobes = 2\n")
    assert run("--config", ini, "depth", "--depths", "2,4", "--out", tmp_path / "d") == 0
    manifest = read_manifest(tmp_path / "d")
    assert manifest["config"]["args"]["n"] == 32
    assert manifest["config"]["args"]["depths"] == [2, 4]
    bad = tmp_path / "bad.ini"
    bad.write_text("[depth]\nwidth = 3\n")
    with pytest.raises(SystemExit) as exc:
        run("--config", bad, "depth")
    assert exc.value.code == 2


def test_plot_infers_schema(tmp_path, capsys):
    run("norms", "--n", "48", "--reps", "1,2,4", "--samples", "8", "--out", tmp_path)
    capsys.readouterr()
    assert run("plot", tmp_path / "normexp.csv") == 0
    assert capsys.readouterr().out.strip().endswith("normexp.svg")
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert run("plot", junk) == 2


def test_verify_only_exit_codes(tmp_path, capsys):
    assert run("verify", "--only", "1", "--json", tmp_path / "v.json") == 0
    out = capsys.readouterr().out
    assert out.startswith("[PASS] criterion  1")
    assert json.loads((tmp_path / "v.json").read_text())[0]["pass"] is True
    assert run("verify", "--only", "99") == 2
