"""Command-line harness.

Subcommands: ``simulate`` (synthesize observations), ``restore`` (run a
solver), ``certify`` (spectral certification table), ``train`` (fit a
denoiser), ``theory`` (modulus report), ``sweep`` (fan restore runs over a
parameter grid).

Configuration comes from an INI file (section per subcommand, keys equal to
the long flag names) plus flags; flags win over file values.

Seeding: every run takes one root ``--seed``.  Child seeds derive from it
through ``derive_seed(root, *stream)``, which keys numpy's SeedSequence with
the root and a fixed per-purpose stream index: 0 for observation noise,
1 for spectral probe starts, 2 for training, and (3, i) for sweep run i.
Reruns with the same root therefore reproduce outputs bit-exactly.

Exit codes: 0 success, 2 validation error (bad flags, bad config, theory
violations), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .denoisers import DctSoftThresholdDenoiser, Denoiser, load_denoiser, save_denoiser
from .errors import NumericalError, ValidationError
from .fidelity import InnerAdmmConfig, PoissonFidelity
from .fileio import (
    load_kernel,
    load_png,
    read_image_dump,
    save_png,
    write_image_dump,
)
from .imaging import (
    CircularConvolution,
    Decimation,
    IdentityOperator,
    LinearOperator,
    NoiseSpec,
    psnr,
    simulate_poisson,
)
from .solvers import SolverConfig, coco_admm, coco_pegd
from .theory import TheoryParams, moduli, pegd_step_bound, solve_t0
from .training import (
    TrainingConfig,
    certify_denoiser,
    make_training_batch,
    synthetic_patches,
    train_linear,
    train_small_net,
    write_loss_csv,
)

__all__ = ["main", "derive_seed"]

_STREAM_NOISE = 0
_STREAM_SPECTRAL = 1
_STREAM_TRAINING = 2
_STREAM_SWEEP = 3


def derive_seed(root: int, *stream: int) -> int:
    """Child seed for a purpose stream under one root seed."""
    return int(np.random.SeedSequence((root, *stream)).generate_state(1)[0])


def _load_image_any(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"input image not found: {path}")
    if p.suffix.lower() == ".png":
        return load_png(p)
    return read_image_dump(p)


def _build_operator(kernel: str | None, decimate: int | None) -> LinearOperator:
    if kernel is not None and decimate is not None:
        raise ValidationError("choose either --kernel or --decimate, not both")
    if kernel is not None:
        return CircularConvolution(load_kernel(kernel))
    if decimate is not None:
        return Decimation(decimate)
    return IdentityOperator()


def _kernel_hash(kernel: str | None) -> str | None:
    if kernel is None:
        return None
    k = load_kernel(kernel)
    return hashlib.sha256(np.ascontiguousarray(k, dtype="<f8").tobytes()).hexdigest()


def _parse_denoiser(spec: str) -> Denoiser:
    """Checkpoint path, or the built-in 'dct' family ('dct' or 'dct:SCALE')."""
    if spec == "dct":
        return DctSoftThresholdDenoiser()
    if spec.startswith("dct:"):
        try:
            scale = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"bad dct threshold scale in {spec!r}") from exc
        return DctSoftThresholdDenoiser(threshold_scale=scale)
    if not Path(spec).exists():
        raise ValidationError(f"denoiser checkpoint not found: {spec}")
    return load_denoiser(spec)


def _json_safe(value: float | None) -> float | None:
    if value is None:
        return None
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.input is None:
        raise ValidationError("missing --input (flag or config file)")
    x = _load_image_any(args.input)
    op = _build_operator(args.kernel, args.decimate)
    noise_seed = derive_seed(args.seed, _STREAM_NOISE)
    obs = simulate_poisson(x, NoiseSpec(peak=args.peak, seed=noise_seed), op)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    png_path = out / "observation.png"
    dump_path = out / "observation.cpnpimg"
    save_png(obs, png_path)
    write_image_dump(obs, dump_path)
    manifest = {
        "command": "simulate",
        "input": str(args.input),
        "peak": args.peak,
        "seed": args.seed,
        "noise_seed": noise_seed,
        "kernel": args.kernel,
        "kernel_hash": _kernel_hash(args.kernel),
        "decimate": args.decimate,
        "outputs": {"png": str(png_path), "dump": str(dump_path)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"observation written to {dump_path} (peak={args.peak}, seed={args.seed})")
    return 0


def _restore_opts(args: argparse.Namespace) -> dict:
    return {
        "observation": args.observation,
        "reference": args.reference,
        "kernel": args.kernel,
        "decimate": args.decimate,
        "denoiser": args.denoiser,
        "solver": args.solver,
        "lam": args.lam,
        "sigma": args.sigma,
        "gamma": args.gamma,
        "t": args.t,
        "beta": args.beta,
        "max_iter": args.max_iter,
        "stop_tol": args.stop_tol,
        "inner_iterations": args.inner_iterations,
        "inner_rho": args.inner_rho,
        "enforce_theory": not args.no_enforce_theory,
        "out_dir": args.out_dir,
    }


def run_restore(opts: dict) -> dict:
    """Restoration pipeline shared by ``restore`` and ``sweep`` workers."""
    if opts["observation"] is None:
        raise ValidationError("missing --observation (flag or config file)")
    obs = _load_image_any(opts["observation"])
    op = _build_operator(opts["kernel"], opts["decimate"])
    d = _parse_denoiser(opts["denoiser"])
    gamma = opts["gamma"]
    if gamma is None:
        if d.claimed_gamma is None:
            raise ValidationError("denoiser claims no gamma; pass --gamma explicitly")
        gamma = d.claimed_gamma
    cfg = SolverConfig(
        sigma=opts["sigma"],
        gamma=gamma,
        t=opts["t"],
        lam=opts["lam"],
        max_iter=opts["max_iter"],
        stop_tol=opts["stop_tol"],
        inner=InnerAdmmConfig(
            rho=opts["inner_rho"], iterations=opts["inner_iterations"]
        ),
        enforce_theory=opts["enforce_theory"],
        beta=opts["beta"],
    )
    g = PoissonFidelity(observed=obs, op=op, lam=cfg.lam)
    reference = (
        _load_image_any(opts["reference"]) if opts["reference"] is not None else None
    )
    solver = opts["solver"]
    if solver == "coco-admm":
        result = coco_admm(g, d, cfg, reference=reference)
    elif solver == "coco-pegd":
        result = coco_pegd(g, d, cfg, reference=reference)
    else:
        raise ValidationError(f"unknown solver {solver!r}")
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    png_path = out / "restored.png"
    dump_path = out / "restored.cpnpimg"
    trace_path = out / "trace.csv"
    save_png(result.u, png_path)
    write_image_dump(result.u, dump_path)
    result.trace.to_csv(trace_path)
    t0 = solve_t0(gamma) if gamma < 1.0 else None
    margin = None
    if cfg.t < 1.0:
        margin = moduli(TheoryParams(gamma=gamma, t=cfg.t, beta=cfg.effective_beta)).admm_margin
    step_bound = pegd_step_bound(gamma, cfg.t, cfg.effective_beta) if cfg.t > 0 else None
    summary = {
        "solver": solver,
        "iterations": result.trace.iterations,
        "converged": result.trace.converged,
        "final_rel_change": result.trace.rel_change[-1],
        "final_psnr": _json_safe(result.trace.psnr[-1]),
        "observation_psnr": (
            _json_safe(psnr(reference, obs))
            if reference is not None and reference.shape == obs.shape
            else None
        ),
        "params": {
            "lambda": cfg.lam,
            "sigma": cfg.sigma,
            "beta": cfg.effective_beta,
            "gamma": gamma,
            "t": cfg.t,
            "max_iter": cfg.max_iter,
            "stop_tol": cfg.stop_tol,
            "inner_iterations": cfg.inner.iterations,
            "inner_rho": cfg.inner.rho,
            "enforce_theory": cfg.enforce_theory,
        },
        "theory": {
            "t0": _json_safe(t0),
            "admm_margin": _json_safe(margin),
            "pegd_step_bound": _json_safe(step_bound),
        },
        "outputs": {
            "png": str(png_path),
            "dump": str(dump_path),
            "trace": str(trace_path),
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_restore(args: argparse.Namespace) -> int:
    summary = run_restore(_restore_opts(args))
    psnr_txt = (
        f", psnr {summary['final_psnr']:.2f} dB" if summary["final_psnr"] is not None else ""
    )
    print(
        f"{summary['solver']}: {summary['iterations']} iterations, "
        f"rel change {summary['final_rel_change']:.3e}{psnr_txt}"
    )
    return 0


def cmd_certify(args: argparse.Namespace) -> int:
    if args.denoiser is None:
        raise ValidationError("missing --denoiser (flag or config file)")
    d = _parse_denoiser(args.denoiser)
    gamma = args.gamma if args.gamma is not None else d.claimed_gamma
    if gamma is None:
        raise ValidationError("denoiser claims no gamma; pass --gamma explicitly")
    seed = derive_seed(args.seed, _STREAM_SPECTRAL)
    size = args.patch_size
    if d.input_dim is not None:
        side = int(round(math.sqrt(d.input_dim)))
        if side * side != d.input_dim:
            raise ValidationError(
                f"denoiser dimension {d.input_dim} is not a square patch"
            )
        size = side
    patches = synthetic_patches(args.points, size, seed)
    rng = np.random.default_rng(seed + 1)
    lo, hi = args.sigma_range
    sigmas = rng.uniform(lo, hi, size=args.points)
    noisy = patches + rng.standard_normal(patches.shape) * sigmas[:, None, None]
    points = [(noisy[i], float(sigmas[i])) for i in range(args.points)]
    reports, summary = certify_denoiser(d, points, gamma, n=args.iters, seed=seed + 2)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("point_id,sigma,gamma,norm_coco,norm_symmetry,iterations_used\n")
        for i, rep in enumerate(reports):
            fh.write(
                f"{i},{sigmas[i]:.6f},{gamma},{rep.norm_coco:.6e},"
                f"{rep.norm_symmetry:.6e},{rep.iterations_used}\n"
            )
    print(
        f"certified {len(reports)} points: mean symmetry {summary['mean_symmetry']:.3e}, "
        f"max coco norm {summary['max_coco']:.6f}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainingConfig(
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        epsilon=args.epsilon,
        gamma=args.gamma,
        sigma_range=tuple(args.sigma_range),
        power_iters=args.power_iters,
        batch_size=args.batch_size,
        steps=args.steps,
        learning_rate=args.learning_rate,
        seed=derive_seed(args.seed, _STREAM_TRAINING),
        patch_size=args.patch_size,
        hidden=args.hidden,
        dataset_dir=args.dataset_dir,
        penalty_grad=args.penalty_grad,
    )
    batch = make_training_batch(cfg)
    if args.family == "linear":
        denoiser, history = train_linear(cfg, batch)
    elif args.family == "smallnet":
        denoiser, history = train_small_net(cfg, batch)
    else:
        raise ValidationError(f"unknown family {args.family!r}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{args.family}.cpnpden"
    save_denoiser(denoiser, ckpt)
    write_loss_csv(history, out / "loss.csv")
    final = history[-1]
    print(
        f"trained {args.family}: data {final.data_l1:.4f}, "
        f"hamiltonian {final.hamiltonian:.3e}, spectral {final.spectral:.4f} "
        f"-> {ckpt}"
    )
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    if args.gamma is None or args.t is None:
        raise ValidationError("theory needs --gamma and --t (flag or config file)")
    report = moduli(TheoryParams(gamma=args.gamma, t=args.t, beta=args.beta))
    payload = {
        "gamma": report.gamma,
        "t": report.t,
        "beta": report.beta,
        "r": report.r,
        "L": report.L,
        "case": report.case,
        "t0": _json_safe(report.t0),
        "admm_margin": report.admm_margin,
        "pegd_step_bound": report.pegd_step_bound,
    }
    if args.json:
        print(json.dumps(payload, indent=2))
        return 0
    for key, value in payload.items():
        if isinstance(value, float):
            print(f"{key:16s} {value:.6f}")
        else:
            print(f"{key:16s} {value}")
    return 0


def _sweep_worker(opts: dict) -> dict:
    try:
        summary = run_restore(opts)
        summary["status"] = "ok"
    except (ValidationError, NumericalError) as exc:
        summary = {"status": "error", "error": str(exc)}
    summary["sweep_value"] = opts["sweep_value"]
    return summary


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.param is None or args.values is None:
        raise ValidationError("sweep needs --param and --values (flag or config file)")
    if args.param not in ("lam", "sigma", "t", "beta", "gamma"):
        raise ValidationError(f"unsupported sweep parameter {args.param!r}")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad sweep values {args.values!r}") from exc
    if not values:
        raise ValidationError("sweep needs at least one value")
    base = _restore_opts(args)
    jobs = []
    for i, value in enumerate(values):
        opts = dict(base)
        opts[args.param] = value
        opts["sweep_value"] = value
        opts["out_dir"] = str(Path(args.out_dir) / f"{args.param}_{value:g}")
        _ = derive_seed(args.seed, _STREAM_SWEEP, i)
        jobs.append(opts)
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["value,status,iterations,converged,final_psnr,final_rel_change"]
    for res in results:
        if res["status"] == "ok":
            p = res["final_psnr"]
            rows.append(
                f"{res['sweep_value']:g},ok,{res['iterations']},{res['converged']},"
                f"{'' if p is None else f'{p:.4f}'},{res['final_rel_change']:.6e}"
            )
        else:
            rows.append(f"{res['sweep_value']:g},error,,,,")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print(f"swept {args.param} over {values}: results in {out / 'sweep.csv'}")
    failed = [r for r in results if r["status"] != "ok"]
    if failed:
        for r in failed:
            print(f"  value {r['sweep_value']:g} failed: {r['error']}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# parser construction and config-file merging
# ---------------------------------------------------------------------------

_OPTION_TYPES: dict[str, dict[str, type | str]] = {}


def _register(sub: str, dest: str, kind: type | str) -> None:
    _OPTION_TYPES.setdefault(sub, {})[dest] = kind


def _add_restore_options(p: argparse.ArgumentParser, sub: str) -> None:
    # Not argparse-required so the config file may supply it; validated later.
    p.add_argument("--observation", default=None, help="input observation (png or cpnpimg)")
    p.add_argument("--reference", default=None, help="clean reference for PSNR tracking")
    p.add_argument("--kernel", default=None, help="blur kernel (png or text matrix)")
    p.add_argument("--decimate", type=int, default=None, help="decimation factor")
    p.add_argument("--denoiser", default="dct", help="checkpoint path or dct[:SCALE]")
    p.add_argument("--solver", default="coco-admm", choices=["coco-admm", "coco-pegd"])
    p.add_argument("--lam", type=float, default=1.0, help="fidelity weight")
    p.add_argument("--sigma", type=float, default=0.1, help="denoiser noise level")
    p.add_argument("--gamma", type=float, default=None, help="cocoercivity constant")
    p.add_argument("--t", type=float, default=0.3, help="denoiser mixing weight")
    p.add_argument("--beta", type=float, default=None, help="override beta (default 1/sigma^2)")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--stop-tol", type=float, default=1e-6)
    p.add_argument("--inner-iterations", type=int, default=10)
    p.add_argument("--inner-rho", type=float, default=1.0)
    p.add_argument("--no-enforce-theory", action="store_true")
    for dest, kind in [
        ("observation", str), ("reference", str), ("kernel", str), ("decimate", int),
        ("denoiser", str), ("solver", str), ("lam", float), ("sigma", float),
        ("gamma", float), ("t", float), ("beta", float), ("max_iter", int),
        ("stop_tol", float), ("inner_iterations", int), ("inner_rho", float),
        ("no_enforce_theory", "bool"),
    ]:
        _register(sub, dest, kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cocopnp",
        description="Plug-and-play Poisson restoration with certified denoisers.",
    )
    parser.add_argument("--config", default=None, help="INI config file (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a Poisson observation")
    p.add_argument("--input", default=None, help="clean image (png or cpnpimg)")
    p.add_argument("--kernel", default=None)
    p.add_argument("--decimate", type=int, default=None)
    p.add_argument("--peak", type=float, default=50.0, help="peak photon count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out/simulate")
    for dest, kind in [
        ("input", str), ("kernel", str), ("decimate", int), ("peak", float),
        ("seed", int), ("out_dir", str),
    ]:
        _register("simulate", dest, kind)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("restore", help="restore an observation")
    _add_restore_options(p, "restore")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out/restore")
    _register("restore", "seed", int)
    _register("restore", "out_dir", str)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("certify", help="spectral certification table")
    p.add_argument("--denoiser", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--sigma-range", type=float, nargs=2, default=(0.0, 50.0 / 255.0))
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/certify.csv")
    for dest, kind in [
        ("denoiser", str), ("gamma", float), ("points", int), ("patch_size", int),
        ("iters", int), ("seed", int), ("out", str),
    ]:
        _register("certify", dest, kind)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("train", help="train a denoiser family")
    p.add_argument("--family", default="linear", choices=["linear", "smallnet"])
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--sigma-range", type=float, nargs=2, default=(0.0, 50.0 / 255.0))
    p.add_argument("--power-iters", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--steps", type=int, default=800)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--dataset-dir", default=None)
    p.add_argument("--penalty-grad", default="spsa", choices=["spsa", "fd"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out/train")
    for dest, kind in [
        ("family", str), ("alpha1", float), ("alpha2", float), ("epsilon", float),
        ("gamma", float), ("power_iters", int), ("batch_size", int), ("steps", int),
        ("learning_rate", float), ("patch_size", int), ("hidden", int),
        ("dataset_dir", str), ("penalty_grad", str), ("seed", int), ("out_dir", str),
    ]:
        _register("train", dest, kind)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("theory", help="modulus report for (gamma, t, beta)")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    for dest, kind in [("gamma", float), ("t", float), ("beta", float), ("json", "bool")]:
        _register("theory", dest, kind)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("sweep", help="fan restore runs over a parameter grid")
    _add_restore_options(p, "sweep")
    p.add_argument("--param", default=None, help="parameter to sweep (lam, sigma, t, beta, gamma)")
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out/sweep")
    for dest, kind in [
        ("param", str), ("values", str), ("workers", int), ("seed", int), ("out_dir", str),
    ]:
        _register("sweep", dest, kind)
    p.set_defaults(func=cmd_sweep)
    return parser


def _convert_ini_value(raw: str, kind: type | str):
    if kind == "bool":
        val = raw.strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"bad boolean value {raw!r} in config file")
    assert isinstance(kind, type)
    return kind(raw)


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> None:
    """Install INI section values as defaults for the active subcommand."""
    config_path = None
    command = None
    skip_next = False
    for i, tok in enumerate(argv):
        if skip_next:
            skip_next = False
            continue
        if tok == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
            skip_next = True
        elif tok.startswith("--config="):
            config_path = tok.split("=", 1)[1]
        elif not tok.startswith("-") and command is None:
            command = tok
            break
    if config_path is None or command is None:
        return
    ini = configparser.ConfigParser()
    read = ini.read(config_path)
    if not read:
        raise ValidationError(f"config file not found: {config_path}")
    if not ini.has_section(command):
        return
    types = _OPTION_TYPES.get(command, {})
    defaults = {}
    for key, raw in ini.items(command):
        dest = key.replace("-", "_")
        if dest == "sigma_range":
            defaults[dest] = tuple(float(v) for v in raw.split())
            continue
        if dest not in types:
            raise ValidationError(f"unknown config key {key!r} in section [{command}]")
        defaults[dest] = _convert_ini_value(raw, types[dest])
    # Locate the subparser and install defaults so explicit flags still win.
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            action.choices[command].set_defaults(**defaults)
            break


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(argv, parser)
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
