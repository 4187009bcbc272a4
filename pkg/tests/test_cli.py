import hashlib

import pytest

from qcluster import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def data(tmp_path, capsys):
    f, l, c = tmp_path / "f.bin", tmp_path / "l.bin", tmp_path / "c.bin"
    assert run(capsys, "synth", "--out", f, "--labels-out", l, "--n-classes", 4, "--samples-per-class", 6,
               "--dim", 4)[0] == 0
    assert run(capsys, "build", "--features", f, "--labels", l, "--k", 4, "--out", c)[0] == 0
    return tmp_path, f, l, c


def test_pipeline(data, capsys):
    tmp, f, l, c = data
    ck = tmp / "m.ckpt"
    code, out, _ = run(capsys, "train", "--features", f, "--labels", l, "--clusters", c, "--out", ck,
                       "--epochs", 2, "--log", tmp / "train.log", "--depth", 1)
    assert code == 0
    assert out.count("mean_loss=") == 2
    log = (tmp / "train.log").read_text().splitlines()
    assert all(line.startswith("epoch=") and " loss=" in line and " lr=" in line for line in log)

    code, out, _ = run(capsys, "eval", "--checkpoint", ck, "--features", f, "--labels", l, "--clusters", c,
                       "--out", tmp / "r.txt")
    assert code == 0
    assert "pairwise_f=" in out and "bcubed_f=" in out and "BCubed" in out
    assert (tmp / "r.txt.manifest").exists()

    code, _, _ = run(capsys, "cluster", "--checkpoint", ck, "--features", f, "--clusters", c, "--out", tmp / "p.bin")
    assert code == 0

    code, out, _ = run(capsys, "baseline", "--features", f, "--labels", l, "--clusters", c)
    assert code == 0
    assert "kmeans.bcubed_f=" in out and "allkeep.bcubed_f=" in out


def test_build_without_k_is_usage_error(data, capsys):
    tmp, f, l, _ = data
    with pytest.raises(SystemExit) as exc:
        cli.main(["build", "--features", str(f), "--out", str(tmp / "x.bin")])
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err
    assert not (tmp / "x.bin").exists()


def test_help_for_every_subcommand(capsys):
    for name in ("synth", "build", "train", "eval", "cluster", "baseline"):
        with pytest.raises(SystemExit) as exc:
            cli.main([name, "--help"])
        assert exc.value.code == 0
        assert "--seed" in capsys.readouterr().out


def test_eval_dimension_mismatch_exits_1(data, capsys):
    tmp, f, l, c = data
    ck = tmp / "m.ckpt"
    assert run(capsys, "train", "--features", f, "--labels", l, "--clusters", c, "--out", ck, "--epochs", 1,
               "--depth", 1)[0] == 0
    f8, l8 = tmp / "f8.bin", tmp / "l8.bin"
    run(capsys, "synth", "--out", f8, "--labels-out", l8, "--n-classes", 4, "--samples-per-class", 6, "--dim", 8)
    code, out, err = run(capsys, "eval", "--checkpoint", ck, "--features", f8, "--labels", l8, "--clusters", c)
    assert code == 1
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("status=error type=ContractError message=")
    code, _, err = run(capsys, "eval", "--checkpoint", ck, "--features", f, "--labels", l, "--clusters", c,
                       "--sharing-mode", "1QK-1V")
    assert code == 1 and "sharing_mode" in err


def test_format_errors_exit_1(data, capsys):
    tmp, f, l, c = data
    bad = tmp / "bad.bin"
    bad.write_bytes(f.read_bytes()[:-3])
    code, _, err = run(capsys, "build", "--features", bad, "--k", 3, "--out", tmp / "x.bin")
    assert code == 1 and "FormatError" in err
    code, _, err = run(capsys, "build", "--features", tmp / "missing.bin", "--k", 3, "--out", tmp / "x.bin")
    assert code == 1
    assert not (tmp / "x.bin").exists()


def test_manifest_rerun_reproduces_outputs(data, capsys):
    tmp, f, l, c = data
    ck = tmp / "m.ckpt"
    assert run(capsys, "train", "--features", f, "--labels", l, "--clusters", c, "--out", ck, "--epochs", 2,
               "--depth", 1, "--seed", 11)[0] == 0
    first = sha(ck)
    manifest = (tmp / "m.ckpt.manifest").read_text()
    assert f"sha256.checkpoint={first}" in manifest
    assert "resolved.n_qubits=2" in manifest
    ck.unlink()
    assert run(capsys, "train", "--config", tmp / "m.ckpt.manifest")[0] == 0
    assert sha(ck) == first
    assert (tmp / "m.ckpt.manifest").read_text() == manifest


def test_flags_override_config_file(data, capsys):
    tmp, f, l, c = data
    cfg = tmp / "run.cfg"
    cfg.write_text(f"features={f}\nlabels={l}\nclusters={c}\nout={tmp / 'a.ckpt'}\nepochs=1\ndepth=1\nlr=0.5\n")
    assert run(capsys, "train", "--config", cfg, "--lr", 0.01)[0] == 0
    text = (tmp / "a.ckpt.manifest").read_text()
    assert "resolved.lr=0.01" in text and "resolved.epochs=1" in text


def test_config_file_errors(data, capsys):
    tmp, f, l, c = data
    cfg = tmp / "run.cfg"
    cfg.write_text("bogus=1\n")
    assert run(capsys, "build", "--config", cfg, "--features", f, "--k", 3, "--out", tmp / "x.bin")[0] == 1
    cfg.write_text("command=train\n")
    assert run(capsys, "build", "--config", cfg, "--features", f, "--k", 3, "--out", tmp / "x.bin")[0] == 1


def test_synth_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "synth", "--out", tmp_path / f"{name}.bin", "--seed", 5, "--n-classes", 3, "--samples-per-class", 4)
    assert sha(tmp_path / "a.bin") == sha(tmp_path / "b.bin")
