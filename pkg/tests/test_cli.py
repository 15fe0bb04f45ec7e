import json

import numpy as np
import pytest

from cocopnp.cli import derive_seed, main
from cocopnp.fileio import read_image_dump, save_png
from cocopnp.imaging import psnr

from conftest import piecewise_image


@pytest.fixture
def workspace(tmp_path):
    from cocopnp.denoisers import save_denoiser, symmetric_linear_denoiser

    clean = piecewise_image(16, 16, seed=42)
    save_png(clean, tmp_path / "clean.png")
    np.savetxt(tmp_path / "kernel.txt", np.ones((3, 3)) / 9.0, fmt="%.18e")
    save_denoiser(
        symmetric_linear_denoiser(256, gamma=0.25, seed=0), tmp_path / "lin25.cpnpden"
    )
    return tmp_path


def run(args):
    return main([str(a) for a in args])


def test_derive_seed_stable_and_stream_separated():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    assert derive_seed(7, 0) != derive_seed(7, 1)
    assert derive_seed(7, 3, 0) != derive_seed(7, 3, 1)


def test_simulate_writes_outputs_and_manifest(workspace):
    out = workspace / "sim"
    code = run(
        ["simulate", "--input", workspace / "clean.png", "--peak", "60",
         "--seed", "5", "--kernel", workspace / "kernel.txt", "--out-dir", out]
    )
    assert code == 0
    assert (out / "observation.png").exists()
    obs = read_image_dump(out / "observation.cpnpimg")
    assert obs.shape == (16, 16)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["peak"] == 60.0
    assert manifest["seed"] == 5
    assert manifest["kernel_hash"] is not None and len(manifest["kernel_hash"]) == 64


def test_simulate_replay_is_bit_exact(workspace):
    args = ["simulate", "--input", workspace / "clean.png", "--peak", "30", "--seed", "9"]
    run(args + ["--out-dir", workspace / "a"])
    run(args + ["--out-dir", workspace / "b"])
    a = (workspace / "a" / "observation.cpnpimg").read_bytes()
    b = (workspace / "b" / "observation.cpnpimg").read_bytes()
    assert a == b


def test_simulate_huge_peak_reproduces_clean(workspace):
    out = workspace / "hp"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "1e9",
         "--seed", "1", "--out-dir", out])
    obs = read_image_dump(out / "observation.cpnpimg")
    clean = piecewise_image(16, 16, seed=42)
    quant = np.round(clean * 255) / 255  # simulate read the 8-bit png
    assert np.max(np.abs(obs - quant)) <= 1e-3


def test_simulate_missing_kernel_is_validation_error(workspace, capsys):
    code = run(["simulate", "--input", workspace / "clean.png",
                "--kernel", workspace / "nope.txt", "--out-dir", workspace / "x"])
    assert code == 2
    assert "nope.txt" in capsys.readouterr().err


def test_restore_end_to_end_summary_matches_files(workspace):
    sim = workspace / "sim"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "2", "--out-dir", sim])
    out = workspace / "rest"
    code = run(
        ["restore", "--observation", sim / "observation.cpnpimg",
         "--reference", workspace / "clean.png",
         "--denoiser", "dct:2.0", "--sigma", "0.06", "--t", "0.4",
         "--lam", "2.0", "--max-iter", "60", "--out-dir", out]
    )
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    restored = read_image_dump(out / "restored.cpnpimg")
    clean = piecewise_image(16, 16, seed=42)
    quant = np.round(clean * 255) / 255
    assert abs(summary["final_psnr"] - psnr(quant, restored)) <= 1e-9
    rows = (out / "trace.csv").read_text().strip().splitlines()
    assert rows[0] == "iter,rel_change,psnr,fidelity,lyapunov,millis"
    assert len(rows) == summary["iterations"] + 1
    assert summary["params"]["beta"] == pytest.approx(1 / 0.06**2)
    assert summary["theory"]["pegd_step_bound"] is not None


def test_restore_theory_rejection_exit_code(workspace, capsys):
    sim = workspace / "sim2"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "3", "--out-dir", sim])
    # a gamma = 0.25 denoiser with t = 0.5 violates the descent bound t < 1/3
    code = run(
        ["restore", "--observation", sim / "observation.cpnpimg",
         "--denoiser", workspace / "lin25.cpnpden", "--t", "0.5",
         "--out-dir", workspace / "r2"]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "0.3333" in err


def test_restore_unknown_solver_is_validation_error(workspace):
    sim = workspace / "sim3"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "4", "--out-dir", sim])
    code = run(["restore", "--observation", sim / "observation.cpnpimg",
                "--solver", "coco-admm", "--denoiser", "dct:bad",
                "--out-dir", workspace / "r3"])
    assert code == 2


def test_certify_csv_schema(workspace):
    out = workspace / "cert.csv"
    code = run(["certify", "--denoiser", "dct", "--gamma", "1.0",
                "--points", "3", "--iters", "40", "--out", out])
    assert code == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "point_id,sigma,gamma,norm_coco,norm_symmetry,iterations_used"
    assert len(rows) == 4
    for i, row in enumerate(rows[1:]):
        cells = row.split(",")
        assert int(cells[0]) == i
        assert float(cells[3]) <= 1.0 + 1e-6  # prox of a convex function


def test_train_writes_checkpoint_and_loss(workspace):
    out = workspace / "train"
    code = run(["train", "--family", "linear", "--steps", "30",
                "--batch-size", "8", "--power-iters", "5",
                "--patch-size", "4", "--out-dir", out])
    assert code == 0
    assert (out / "linear.cpnpden").exists()
    rows = (out / "loss.csv").read_text().strip().splitlines()
    assert rows[0] == "step,data_l1,hamiltonian,spectral,total"
    assert len(rows) == 31
    from cocopnp.denoisers import load_denoiser

    d = load_denoiser(out / "linear.cpnpden")
    assert d.claimed_gamma == 0.25


def test_theory_json_keys(capsys):
    code = run(["theory", "--gamma", "0.5", "--t", "0.3", "--beta", "1.0", "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert list(payload.keys()) == [
        "gamma", "t", "beta", "r", "L", "case", "t0", "admm_margin", "pegd_step_bound",
    ]
    assert payload["t0"] == pytest.approx(0.3761, abs=5e-4)


def test_theory_text_output(capsys):
    code = run(["theory", "--gamma", "0.5", "--t", "0.3"])
    assert code == 0
    out = capsys.readouterr().out
    t0_line = next(line for line in out.splitlines() if line.startswith("t0"))
    assert float(t0_line.split()[-1]) == pytest.approx(0.3761, abs=5e-4)


def test_theory_validation_exit_code(capsys):
    assert run(["theory", "--gamma", "1.5", "--t", "0.3"]) == 2
    assert run(["theory", "--t", "0.3"]) == 2


def test_config_file_defaults_and_flag_precedence(workspace, capsys):
    sim = workspace / "sim4"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "6", "--out-dir", sim])
    ini = workspace / "conf.ini"
    ini.write_text(
        "[restore]\nsigma = 0.09\nmax-iter = 7\ndenoiser = dct:2.0\n"
    )
    out = workspace / "cfg"
    code = run(["--config", ini, "restore",
                "--observation", sim / "observation.cpnpimg",
                "--max-iter", "5", "--out-dir", out])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["params"]["sigma"] == 0.09  # from file
    assert summary["params"]["max_iter"] == 5  # flag wins
    bad = workspace / "bad.ini"
    bad.write_text("[restore]\nnot_a_key = 1\n")
    assert run(["--config", bad, "restore",
                "--observation", sim / "observation.cpnpimg",
                "--out-dir", out]) == 2
    assert run(["--config", workspace / "missing.ini", "theory",
                "--gamma", "0.5", "--t", "0.2"]) == 2


def test_sweep_emits_runs_and_table(workspace):
    sim = workspace / "sim5"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "7", "--out-dir", sim])
    out = workspace / "sweep"
    code = run(["sweep", "--observation", sim / "observation.cpnpimg",
                "--denoiser", "dct:2.0", "--sigma", "0.06", "--t", "0.4",
                "--param", "lam", "--values", "0.5,1,2",
                "--max-iter", "10", "--workers", "1", "--out-dir", out])
    assert code == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert rows[0] == "value,status,iterations,converged,final_psnr,final_rel_change"
    assert len(rows) == 4
    for v in ("0.5", "1", "2"):
        assert (out / f"lam_{v}" / "summary.json").exists()


def test_sweep_parallel_workers(workspace):
    sim = workspace / "sim6"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "8", "--out-dir", sim])
    out = workspace / "sweep2"
    code = run(["sweep", "--observation", sim / "observation.cpnpimg",
                "--denoiser", "dct:2.0", "--sigma", "0.06", "--t", "0.4",
                "--param", "t", "--values", "0.2,0.6",
                "--max-iter", "5", "--workers", "2", "--out-dir", out])
    assert code == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(rows) == 3


def test_sweep_reports_failed_values(workspace):
    sim = workspace / "sim7"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "9", "--out-dir", sim])
    out = workspace / "sweep3"
    # the gamma = 0.25 denoiser forbids t = 0.5; that value fails, exit code 3
    code = run(["sweep", "--observation", sim / "observation.cpnpimg",
                "--denoiser", workspace / "lin25.cpnpden", "--sigma", "0.06",
                "--param", "t", "--values", "0.2,0.5",
                "--max-iter", "5", "--workers", "1", "--out-dir", out])
    assert code == 3
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert any(",ok," in r for r in rows[1:])
    assert any(",error," in r for r in rows[1:])


def test_exit_code_numerical_failure(workspace, capsys, monkeypatch):
    sim = workspace / "sim8"
    run(["simulate", "--input", workspace / "clean.png", "--peak", "80",
         "--seed", "10", "--out-dir", sim])
    import cocopnp.cli as cli_mod
    from cocopnp.errors import NumericalError

    def boom(opts):
        raise NumericalError("synthetic blowup")

    monkeypatch.setattr(cli_mod, "run_restore", boom)
    code = run(["restore", "--observation", sim / "observation.cpnpimg",
                "--out-dir", workspace / "r9"])
    assert code == 3
    assert "synthetic blowup" in capsys.readouterr().err
