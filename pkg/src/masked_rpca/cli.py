"""Command-line interface: ``masked-rpca {synth,decompose,eval,convergence,replay}``.

Exit codes: 0 success, 2 usage error, 3 input/output error, 4 solver did not
converge (outputs are still written).
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from sklearn.exceptions import ConvergenceWarning

from . import __version__
from .baseline import MaskThresholdRule, RpcaConfig, mask_from_sparse, solve_pcp
from .data_io import (
    format_scene_spec,
    generate_scene,
    load_sequence,
    load_volume,
    measure_snr,
    parse_scene_spec,
    read_keyvalue,
    save_volume,
    write_keyvalue,
    write_raw,
)
from .emrpca import EmrpcaConfig, solve_emrpca
from .estimators import auto_rho
from .exceptions import MaskedRPCAError
from .metrics import binarity, evaluate
from .mrpca import MrpcaConfig, solve_mrpca
from .prox import to_matrix, to_volume
from .trace import IterationTrace

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# manifests

def _write_manifest(out_dir, command, argv, inputs, config, outputs):
    items = {
        "command": command,
        "tool_version": __version__,
        "argv": json.dumps(argv),
    }
    for i, path in enumerate(inputs):
        items[f"input.{i}"] = path
    for key, value in config.items():
        items[f"config.{key}"] = repr(float(value)) if isinstance(value, float) else value
    items["outputs"] = ",".join(outputs)
    write_keyvalue(Path(out_dir) / "manifest.txt", items)


def _strip_out_dir(argv):
    out = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out-dir":
            skip = True
            continue
        if tok.startswith("--out-dir="):
            continue
        out.append(tok)
    return out


# --------------------------------------------------------------------------
# synth

def cmd_synth(args, argv):
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise MaskedRPCAError(f"cannot read {args.spec}: {exc}") from exc
    spec = parse_scene_spec(text)
    X, truth = generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dims = spec.dims
    outputs = []
    for name, data in (
        ("X", X), ("L_true", truth["L"]), ("W_true", truth["W"]), ("S_true", truth["S"]),
        ("E_true", truth["E"]),
    ):
        save_volume(out, name, data, dims)
        outputs.append(f"{name}.raw")
    for name in ("clean", "noise"):
        write_raw(out / f"{name}.raw", to_volume(truth[name], dims))
        outputs.append(f"{name}.raw")
    (out / "scene.txt").write_text(format_scene_spec(spec))
    outputs.append("scene.txt")
    config = {"seed": spec.seed, "dims": ",".join(map(str, dims))}
    if spec.snr_db is not None:
        config["snr_db"] = spec.snr_db
        config["measured_snr_db"] = float(measure_snr(truth["clean"], truth["noise"]))
    _write_manifest(out, "synth", _strip_out_dir(argv), [args.spec], config, outputs)
    print(f"wrote scene {dims} to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# decompose

_PARAM_FLAGS = {
    "lambda_w": float, "lambda_z": float, "lambda_e": float, "rho_x": str, "rho_z": str,
    "tau_L": float, "tau_W": float, "max_iter": int, "tol_gap": float, "tol_change": float,
    "lambda_s": float, "mu": float, "tol": float, "threshold": str,
}

_REQUIRED = {
    "mrpca": ("lambda_w",),
    "emrpca": ("lambda_w", "lambda_z", "lambda_e"),
    "rpca": (),
}


def _flag(name):
    return "--" + name.replace("_", "-").lower()


def _resolve_params(args):
    params = {}
    if args.config:
        for key, value in read_keyvalue(args.config).items():
            key = key.replace("-", "_")
            if key == "tau_l":
                key = "tau_L"
            elif key == "tau_w":
                key = "tau_W"
            if key not in _PARAM_FLAGS:
                raise UsageError(f"unknown config key {key!r} in {args.config}")
            params[key] = value
    for key in _PARAM_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    try:
        params = {k: _PARAM_FLAGS[k](v) for k, v in params.items()}
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for key in _REQUIRED[args.method]:
        if key not in params:
            raise UsageError(f"method {args.method} requires {_flag(key)}")
    return params


def _rho(value, X):
    if value is None or value == "auto":
        return auto_rho(X)
    return float(value)


def cmd_decompose(args, argv):
    params = _resolve_params(args)
    X, dims = load_sequence(args.input)
    if X.min() < 0 or X.max() > 1:
        raise MaskedRPCAError("input values must lie in [0, 1]")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if args.method == "mrpca":
            cfg = MrpcaConfig(
                lambda_w=params["lambda_w"], rho_x=_rho(params.get("rho_x"), X),
                tau_L=params.get("tau_L", 0.5), tau_W=params.get("tau_W", 0.5),
                max_iters=params.get("max_iter", 500), tol_gap=params.get("tol_gap", 1e-4),
                tol_change=params.get("tol_change", 1e-4),
            )
            res = solve_mrpca(X, cfg)
            volumes = {"L": res.L, "W": res.W}
            config = vars(cfg)
        elif args.method == "emrpca":
            rho_x = _rho(params.get("rho_x"), X)
            rho_z = params.get("rho_z")
            rho_z = 10.0 * rho_x if rho_z in (None, "auto") else float(rho_z)
            cfg = EmrpcaConfig(
                lambda_w=params["lambda_w"], lambda_z=params["lambda_z"],
                lambda_e=params["lambda_e"], rho_x=rho_x, rho_z=rho_z,
                tau_L=params.get("tau_L", 0.5), tau_W=params.get("tau_W", 0.5),
                max_iters=params.get("max_iter", 800), tol_gap=params.get("tol_gap", 1e-4),
                tol_change=params.get("tol_change", 1e-4),
            )
            res = solve_emrpca(X, dims, cfg)
            volumes = {"L": res.L, "W": res.W, "E": res.E}
            config = vars(cfg)
        else:
            try:
                rule = MaskThresholdRule.parse(params.get("threshold", "otsu"))
            except ValueError as exc:
                raise UsageError(f"bad --threshold: {exc}") from exc
            cfg = RpcaConfig(
                lambda_s=params.get("lambda_s"), mu=params.get("mu"),
                max_iters=params.get("max_iter", 1000), tol=params.get("tol", 1e-7),
            )
            res = solve_pcp(X, cfg)
            volumes = {"L": res.L, "S": res.S, "W": mask_from_sparse(res.S, rule)}
            config = dict(vars(cfg), lambda_s=res.lambda_s, threshold=params.get("threshold", "otsu"))

    for name, data in volumes.items():
        save_volume(out, name, data, dims)
        outputs.append(f"{name}.raw")
    if args.trace:
        res.trace.to_csv(out / "trace.csv")
        outputs.append("trace.csv")
    config = {k: v for k, v in config.items() if v is not None}
    config["method"] = args.method
    config["converged"] = res.converged
    config["n_iter"] = res.n_iter
    _write_manifest(out, "decompose", _strip_out_dir(argv), [args.input], config, outputs)
    status = "converged" if res.converged else "not converged"
    print(f"{args.method}: {status} after {res.n_iter} iterations; outputs in {out}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# eval

def _load_matrix(path):
    return to_matrix(load_volume(path))


def cmd_eval(args, argv):
    report_items = {}
    out = Path(args.out_dir) if args.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if args.snr:
        if not args.signal:
            raise UsageError("--snr requires --signal")
        noise = _load_matrix(args.snr)
        signal = _load_matrix(args.signal)
        report_items["snr_db"] = float(measure_snr(signal, noise))

    report = None
    if args.mask:
        if not args.truth:
            raise UsageError("--mask requires --truth")
        W = _load_matrix(args.mask)
        truth = _load_matrix(args.truth) > 0.5
        ignore = _load_matrix(args.ignore) > 0.5 if args.ignore else None
        rec_L = _load_matrix(args.recovered_L) if args.recovered_L else None
        true_L = _load_matrix(args.true_L) if args.true_L else None
        if (rec_L is None) != (true_L is None):
            raise UsageError("--recovered-L and --true-L go together")
        report = evaluate(W, truth, ignore, rec_L, true_L, roc=args.roc)
        report.extra.update(report_items)
        report.extra["binarity"] = binarity(W)
        text = report.to_keyvalue()
    elif report_items:
        text = "".join(f"{k}={float(v)!r}\n" for k, v in report_items.items())
    else:
        raise UsageError("nothing to evaluate: give --mask/--truth and/or --snr/--signal")

    sys.stdout.write(text)
    if out is not None:
        (out / "report.txt").write_text(text)
        if report is not None:
            (out / "report.csv").write_text(report.to_csv())
            if report.roc is not None:
                (out / "roc.csv").write_text(report.roc_csv())
    return EXIT_OK


# --------------------------------------------------------------------------
# convergence

def convergence_summary(trace, tol=1e-4, W=None):
    """Summary dict of a trace: final gap, iterations, convergence and binarity."""
    if len(trace) == 0:
        return {"iterations": 0, "final_gap": float("nan"), "converged": False}
    last = trace.last()
    final = last["rel_gap"]
    if "residual_x" in last:
        final = max(last["residual_x"], last["residual_z"])
    summary = {
        "iterations": int(last["iter"]),
        "final_gap": float(final),
        "tol": tol,
        "converged": bool(final < tol),
    }
    if W is not None:
        summary["binarity"] = binarity(W)
    return summary


def cmd_convergence(args, argv):
    try:
        trace = IterationTrace.from_csv(args.trace)
    except OSError as exc:
        raise MaskedRPCAError(f"cannot read {args.trace}: {exc}") from exc
    W = _load_matrix(args.mask) if args.mask else None
    summary = convergence_summary(trace, args.tol, W)
    status = "converged" if summary["converged"] else "not converged"
    print(f"{status}: final gap {summary['final_gap']:.3e} after {summary['iterations']} iterations"
          f" (tol {args.tol:g})")
    if "binarity" in summary:
        print(f"binarity: {summary['binarity']:.4f} of W entries within 0.05 of {{0,1}}")
    if args.plot_data:
        with open(args.plot_data, "w") as fh:
            fh.write("# iter gap rel_gap dL dW\n")
            for i, g, rg, dl, dw in zip(trace["iter"], trace["gap"], trace["rel_gap"],
                                        trace["dL"], trace["dW"]):
                fh.write(f"{int(i)} {float(g)!r} {float(rg)!r} {float(dl)!r} {float(dw)!r}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# replay

def cmd_replay(args, argv):
    manifest = read_keyvalue(args.manifest)
    try:
        original = json.loads(manifest["argv"])
    except (KeyError, ValueError) as exc:
        raise MaskedRPCAError(f"{args.manifest} has no usable argv entry") from exc
    out_dir = args.out_dir or str(Path(args.manifest).parent)
    return main(original + ["--out-dir", out_dir])


# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="masked-rpca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic overlay scene")
    p.add_argument("spec", help="scene description (key = value lines)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="run a decomposition on a clip")
    p.add_argument("input", help="directory of PGM frames or a raw volume file")
    p.add_argument("--method", choices=("mrpca", "emrpca", "rpca"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value parameter file; flags override it")
    p.add_argument("--trace", action="store_true", help="write trace.csv")
    p.add_argument("--lambda-w", dest="lambda_w", type=float)
    p.add_argument("--lambda-z", dest="lambda_z", type=float)
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--rho-x", dest="rho_x", help="penalty or 'auto'")
    p.add_argument("--rho-z", dest="rho_z", help="penalty or 'auto'")
    p.add_argument("--tau-l", dest="tau_L", type=float)
    p.add_argument("--tau-w", dest="tau_W", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol-gap", dest="tol_gap", type=float)
    p.add_argument("--tol-change", dest="tol_change", type=float)
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--threshold", help="rpca mask rule: 'otsu' or a value in [0,1]")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("eval", help="score a mask / background / noise level")
    p.add_argument("--mask", help="soft or binary mask volume")
    p.add_argument("--truth", help="ground-truth mask volume")
    p.add_argument("--ignore", help="volume of pixels to exclude")
    p.add_argument("--recovered-L", dest="recovered_L")
    p.add_argument("--true-L", dest="true_L")
    p.add_argument("--roc", action="store_true")
    p.add_argument("--snr", help="noise volume to measure against --signal")
    p.add_argument("--signal")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convergence", help="summarize a trace.csv")
    p.add_argument("trace")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--mask", help="W volume for the binarity fraction")
    p.add_argument("--plot-data", help="write gnuplot-ready columns here")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"masked-rpca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MaskedRPCAError, OSError) as exc:
        print(f"masked-rpca {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
