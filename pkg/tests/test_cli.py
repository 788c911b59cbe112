import subprocess
import sys

import numpy as np
import pytest

from masked_rpca.cli import EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main
from masked_rpca.data_io import read_keyvalue, read_raw, write_raw
from masked_rpca.metrics import binarity
from masked_rpca.prox import to_matrix

SCENE = """\
dims = 16,16,20
rank = 2
factor_magnitudes = 0.5,0.2
shape = kind=rect size=4,4 start=2,1 velocity=0.6,0.5 intensity=0.95
seed = 0
"""

EMPTY_SCENE = """\
dims = 8,8,6
rank = 2
factor_magnitudes = 0.5,0.2
seed = 4
"""


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scene.spec").write_text(SCENE)
    assert main(["synth", str(root / "scene.spec"), "--out-dir", str(root / "synth")]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def mrpca_run(scene_dir):
    out = scene_dir / "m"
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
                 "--lambda-w", "1e-3", "--trace", "--out-dir", str(out)])
    return code, out


# ---------------------------------------------------------------- synth

def test_synth_writes_volumes_and_manifest(scene_dir):
    out = scene_dir / "synth"
    for name in ("X.raw", "L_true.raw", "W_true.raw", "E_true.raw", "manifest.txt", "scene.txt"):
        assert (out / name).is_file()
    assert read_raw(out / "X.raw").shape == (16, 16, 20)
    assert len(list((out / "X").glob("*.pgm"))) == 20
    assert read_keyvalue(out / "manifest.txt")["command"] == "synth"


def test_synth_empty_foreground(tmp_path):
    (tmp_path / "s.spec").write_text(EMPTY_SCENE)
    assert main(["synth", str(tmp_path / "s.spec"), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert not read_raw(tmp_path / "o" / "W_true.raw").any()


def test_synth_is_reproducible(scene_dir, tmp_path):
    assert main(["synth", str(scene_dir / "scene.spec"), "--out-dir", str(tmp_path)]) == EXIT_OK
    first, again = _files(scene_dir / "synth"), _files(tmp_path)
    assert first == again


def test_synth_snr_reported_by_eval(tmp_path, capsys):
    (tmp_path / "n.spec").write_text(SCENE + "snr_db = 7.7\n")
    main(["synth", str(tmp_path / "n.spec"), "--out-dir", str(tmp_path / "o")])
    capsys.readouterr()
    o = tmp_path / "o"
    assert main(["eval", "--snr", str(o / "noise.raw"), "--signal", str(o / "clean.raw")]) == EXIT_OK
    value = float(capsys.readouterr().out.split("=")[1])
    assert abs(value - 7.7) < 0.1


def test_synth_bad_spec_is_io_error(tmp_path):
    (tmp_path / "b.spec").write_text("dims = 4,4\n")
    assert main(["synth", str(tmp_path / "b.spec"), "--out-dir", str(tmp_path)]) == EXIT_IO
    assert main(["synth", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == EXIT_IO


# ---------------------------------------------------------------- decompose

def test_decompose_mrpca(mrpca_run, scene_dir, capsys):
    code, out = mrpca_run
    assert code == EXIT_OK
    for name in ("L.raw", "W.raw", "trace.csv", "manifest.txt"):
        assert (out / name).is_file()
    man = read_keyvalue(out / "manifest.txt")
    assert man["config.method"] == "mrpca" and man["config.converged"] == "True"
    W = read_raw(out / "W.raw")
    truth = read_raw(scene_dir / "synth" / "W_true.raw")
    assert np.mean((W > 0.5) == (truth > 0.5)) > 0.99


def test_decompose_emrpca(scene_dir):
    out = scene_dir / "e"
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "emrpca",
                 "--lambda-w", "1e-2", "--lambda-z", "3e-3", "--lambda-e", "0.048",
                 "--max-iter", "1500", "--out-dir", str(out)])
    assert code == EXIT_OK
    assert read_raw(out / "E.raw").shape == (16, 16, 20)


def test_decompose_rpca(scene_dir):
    out = scene_dir / "r"
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "rpca",
                 "--out-dir", str(out)])
    assert code == EXIT_OK
    W = read_raw(out / "W.raw")
    assert set(np.unique(W)) <= {0.0, 1.0}
    assert (out / "S.raw").is_file()


def test_decompose_reads_pgm_directory(scene_dir, tmp_path):
    code = main(["decompose", str(scene_dir / "synth" / "X"), "--method", "rpca",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_OK


def test_missing_required_lambda_names_the_flag(scene_dir, tmp_path, capsys):
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "emrpca",
                 "--lambda-w", "1e-2", "--out-dir", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "--lambda-z" in capsys.readouterr().err


def test_unknown_method_is_usage_error(tmp_path):
    assert main(["decompose", "x", "--method", "pca", "--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_unreadable_input_is_io_error(tmp_path):
    code = main(["decompose", str(tmp_path / "nothing.raw"), "--method", "mrpca",
                 "--lambda-w", "1e-3", "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_IO


def test_out_of_range_input_is_rejected(tmp_path):
    write_raw(tmp_path / "big.raw", np.full((2, 2, 3), 2.0))
    code = main(["decompose", str(tmp_path / "big.raw"), "--method", "mrpca",
                 "--lambda-w", "1e-3", "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_IO


def test_non_convergence_exit_code_still_writes(scene_dir, tmp_path, capsys):
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
                 "--lambda-w", "1e-3", "--max-iter", "3", "--out-dir", str(tmp_path)])
    assert code == EXIT_NOT_CONVERGED
    assert "not converged" in capsys.readouterr().out
    assert (tmp_path / "W.raw").is_file() and (tmp_path / "manifest.txt").is_file()


def test_config_file_and_flag_override(scene_dir, tmp_path):
    cfg = tmp_path / "params.txt"
    cfg.write_text("lambda_w = 1e-3\nmax_iter = 4\n")
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
                 "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
    assert code == EXIT_NOT_CONVERGED
    assert read_keyvalue(tmp_path / "a" / "manifest.txt")["config.max_iters"] == "4"
    main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
          "--config", str(cfg), "--max-iter", "5", "--out-dir", str(tmp_path / "b")])
    assert read_keyvalue(tmp_path / "b" / "manifest.txt")["config.max_iters"] == "5"


def test_config_file_unknown_key(scene_dir, tmp_path):
    cfg = tmp_path / "params.txt"
    cfg.write_text("lambda_q = 1\n")
    code = main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
                 "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------- eval

def test_eval_identical_masks(scene_dir, tmp_path, capsys):
    truth = scene_dir / "synth" / "W_true.raw"
    assert main(["eval", "--mask", str(truth), "--truth", str(truth), "--roc",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    report = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert float(report["f1"]) == 1.0
    assert float(report["auc"]) == pytest.approx(1.0)
    assert (tmp_path / "roc.csv").is_file() and (tmp_path / "report.csv").is_file()


def test_eval_with_background(mrpca_run, scene_dir, capsys):
    _, out = mrpca_run
    s = scene_dir / "synth"
    assert main(["eval", "--mask", str(out / "W.raw"), "--truth", str(s / "W_true.raw"),
                 "--recovered-L", str(out / "L.raw"), "--true-L", str(s / "L_true.raw")]) == 0
    report = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert float(report["psnr"]) > 20


def test_eval_needs_something(capsys):
    assert main(["eval"]) == EXIT_USAGE
    assert main(["eval", "--mask", "w.raw"]) == EXIT_USAGE


# ---------------------------------------------------------------- convergence

def test_convergence_summary(mrpca_run, capsys):
    _, out = mrpca_run
    capsys.readouterr()
    assert main(["convergence", str(out / "trace.csv"), "--mask", str(out / "W.raw"),
                 "--plot-data", str(out / "plot.dat")]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("converged")
    shown = float(text.split("binarity: ")[1].split()[0])
    assert shown == pytest.approx(binarity(to_matrix(read_raw(out / "W.raw"))), abs=1e-4)
    assert (out / "plot.dat").read_text().startswith("# iter")


def test_convergence_flags_unconverged_trace(scene_dir, tmp_path, capsys):
    main(["decompose", str(scene_dir / "synth" / "X.raw"), "--method", "mrpca",
          "--lambda-w", "1e-3", "--max-iter", "3", "--trace", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    main(["convergence", str(tmp_path / "trace.csv")])
    assert capsys.readouterr().out.startswith("not converged")


def test_convergence_missing_trace(tmp_path):
    assert main(["convergence", str(tmp_path / "none.csv")]) == EXIT_IO


# ---------------------------------------------------------------- replay

def test_replay_is_byte_identical(mrpca_run, tmp_path):
    _, out = mrpca_run
    assert main(["replay", str(out / "manifest.txt"), "--out-dir", str(tmp_path)]) == EXIT_OK
    replayed = _files(tmp_path)
    original = {k: v for k, v in _files(out).items() if k != "plot.dat"}
    assert replayed == original


def test_replay_without_argv(tmp_path):
    (tmp_path / "manifest.txt").write_text("command=synth\n")
    assert main(["replay", str(tmp_path / "manifest.txt")]) == EXIT_IO


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "masked_rpca.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
