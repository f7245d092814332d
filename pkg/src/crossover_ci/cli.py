"""Command-line interface: ``crossover-ci {optimize,table1,compare,simulate}``.

Configuration is an INI file with one section per concern.  Any key can be
overridden through the environment as CROSSOVER_CI_<SECTION>_<KEY>.
All outputs are assembled in memory and written only once the run succeeded.
"""

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compare import ComparisonSpec, DEFAULT_RHO_TILDE_GRID, scan_designs, scan_to_csv
from .mc import FiniteSampleConfig, mc_assess, results_to_csv
from .model import ratio_from_rho_tilde, rho_tilde_from_ratio
from .optimize import TABLE1_OMEGAS, OptConfig, OptimizationError, omega_table, optimize_interval
from .perf import QuadratureSpec, perf_curve
from .splines import IntervalFunctions
from .validation import DomainError

log = logging.getLogger("crossover_ci")

ENV_PREFIX = "CROSSOVER_CI_"

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_AUDIT = 0, 1, 2, 3

_FLOAT, _INT, _BOOL, _FLIST, _PATH = "float", "int", "bool", "floats", "path"

SCHEMA = {
    "interval": {
        "alpha": (_FLOAT, 0.05),
        "rho_tilde": (_FLOAT, None),
        "variance_ratio": (_FLOAT, 1.0),
        "d": (_FLOAT, 6.0),
        "n_knots": (_INT, 9),
        "knots": (_FLIST, None),
        "omega": (_FLOAT, 0.2),
    },
    "quadrature": {
        "panels": (_INT, 64),
        "nodes_per_panel": (_INT, 10),
        "gamma_step": (_FLOAT, 0.05),
        "gamma_max": (_FLOAT, None),
    },
    "optimizer": {
        "max_iter": (_INT, 500),
        "constraint_tol": (_FLOAT, 5e-5),
        "ftol": (_FLOAT, 1e-8),
        "multistarts": (_INT, 2),
        "perturbation": (_FLOAT, 0.05),
        "seed": (_INT, 0),
        "audit_step": (_FLOAT, 0.01),
    },
    "table1": {"omegas": (_FLIST, list(TABLE1_OMEGAS))},
    "compare": {
        "max_e2_bound": (_FLOAT, 1.25),
        "rho_tilde_grid": (_FLIST, list(DEFAULT_RHO_TILDE_GRID)),
        "anchors": (_FLIST, [0.0, 0.5, 1.0]),
    },
    "simulate": {
        "functions": (_PATH, None),
        "n_values": (_FLIST, [25, 50, 100, 200]),
        "gammas": (_FLIST, [0.0, 1.0, 3.0]),
        "reps": (_INT, 100_000),
        "chunk": (_INT, 10_000),
        "theta": (_FLOAT, 0.0),
        "known_variance": (_BOOL, False),
        "seed": (_INT, 0),
    },
}


class ConfigError(ValueError):
    pass


def _convert(kind, raw, where):
    raw = raw.strip()
    try:
        if raw.lower() in ("", "none"):
            return None
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == _FLIST:
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def load_config(path=None, environ=None):
    """Resolve defaults, file values and environment overrides into a nested dict."""
    environ = os.environ if environ is None else environ
    resolved = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
                resolved[sec][key] = _convert(SCHEMA[sec][key][0], raw, f"{path} [{sec}] {key}")
    for sec, keys in SCHEMA.items():
        for key, (kind, _) in keys.items():
            name = f"{ENV_PREFIX}{sec}_{key}".upper()
            if name in environ:
                resolved[sec][key] = _convert(kind, environ[name], f"environment {name}")
    return resolved


def build_opt_config(conf, seed=None):
    iv, qd, op = conf["interval"], conf["quadrature"], conf["optimizer"]
    rt = iv["rho_tilde"]
    if rt is None:
        rt = rho_tilde_from_ratio(iv["variance_ratio"])
    quad = QuadratureSpec(qd["panels"], qd["nodes_per_panel"], qd["gamma_step"], qd["gamma_max"])
    knots = tuple(iv["knots"]) if iv["knots"] else None
    return OptConfig(
        alpha=iv["alpha"],
        rho_tilde=rt,
        d=iv["d"],
        n_knots=iv["n_knots"],
        knots=knots,
        omega=iv["omega"],
        quad=quad,
        max_iter=op["max_iter"],
        constraint_tol=op["constraint_tol"],
        ftol=op["ftol"],
        multistarts=op["multistarts"],
        perturbation=op["perturbation"],
        seed=op["seed"] if seed is None else seed,
        audit_step=op["audit_step"],
    )


def _fig1_csv(f, points=601):
    xs = np.linspace(0.0, f.d, points)
    b = f.eval_b(xs)
    s = f.eval_s(xs)
    lines = ["x,b,s"] + [f"{x:.6g},{bv:.12g},{sv:.12g}" for x, bv, sv in zip(xs, b, s)]
    return "\n".join(lines) + "\n"


def _summary_text(cfg, res):
    rows = [
        ("alpha", cfg.alpha),
        ("rho_tilde", cfg.rho_tilde),
        ("d", cfg.d),
        ("knots", cfg.knot_grid.q),
        ("omega", cfg.omega),
    ] + list(res.summary().items())
    return "".join(f"{k}: {v:.10g}\n" if isinstance(v, float) else f"{k}: {v}\n" for k, v in rows)


def _audit_optimize(cfg, res):
    return res.min_coverage >= 1.0 - cfg.alpha - cfg.constraint_tol


def cmd_optimize(conf, args):
    cfg = build_opt_config(conf, args.seed)
    if cfg.omega == 0:
        log.warning("omega = 0: the criterion weights only gamma = 0")
    res = optimize_interval(cfg)
    grid = cfg.quad.gamma_grid(cfg.d)
    curve = perf_curve(res.f, cfg.rho_tilde, grid, cfg.quad)
    outputs = {
        "functions.json": res.f.to_json(),
        "fig1_functions.csv": _fig1_csv(res.f),
        "fig2_performance.csv": curve.to_csv(),
        "summary.txt": _summary_text(cfg, res),
    }
    return outputs, _audit_optimize(cfg, res)


def cmd_table1(conf, args):
    cfg = build_opt_config(conf, args.seed)
    omegas = conf["table1"]["omegas"]
    if not omegas:
        raise ConfigError("[table1] omegas must be nonempty")
    rows = omega_table(cfg, omegas, threads=args.threads)
    lines = ["omega,gain,loss,ratio"]
    ok = True
    for row in rows:
        if row.error:
            log.error("omega=%g failed: %s", row.omega, row.error)
            ok = False
        else:
            ok &= _audit_optimize(replace(cfg, omega=row.omega), row.result)
        lines.append(f"{row.omega:.6g},{row.gain:.10g},{row.loss:.10g},{row.ratio:.10g}")
    return {"table1.csv": "\n".join(lines) + "\n"}, ok


def cmd_compare(conf, args):
    cfg = build_opt_config(conf, args.seed)
    cp = conf["compare"]
    if not cp["rho_tilde_grid"]:
        raise ConfigError("[compare] rho_tilde_grid must be nonempty")
    spec = ComparisonSpec(
        alpha=cfg.alpha,
        max_e2_bound=cp["max_e2_bound"],
        rho_tilde_grid=tuple(cp["rho_tilde_grid"]),
        template=cfg,
        anchors=tuple(cp["anchors"]),
    )
    rows = scan_designs(spec, threads=args.threads)
    ok = True
    for row in rows:
        r = row.result
        if r is None:
            log.error("rho_tilde=%g failed: %s", row.rho_tilde, row.error)
            ok = False
        else:
            ok &= r.max_e2 <= spec.max_e2_bound + 1e-4 and r.min_coverage >= 1 - cfg.alpha - cfg.constraint_tol
            log.info("rho_tilde=%g min r^2=%.6f margin=%.6f", row.rho_tilde, r.min_r2, r.margin)
    return {"compare.csv": scan_to_csv(rows)}, ok


def cmd_simulate(conf, args):
    sm = conf["simulate"]
    if sm["reps"] < 1000:
        raise ConfigError("[simulate] reps must be at least 1000")
    cfg = build_opt_config(conf, None)
    ratio = conf["interval"]["variance_ratio"]
    if conf["interval"]["rho_tilde"] is not None:
        ratio = ratio_from_rho_tilde(conf["interval"]["rho_tilde"])
    if sm["functions"]:
        f = IntervalFunctions.from_json(sm["functions"])
    else:
        f = optimize_interval(cfg).f
    seed = sm["seed"] if args.seed is None else args.seed
    results = []
    for n in sm["n_values"]:
        for g in sm["gammas"]:
            fc = FiniteSampleConfig.at_gamma(
                int(n), g, f, ratio=ratio, theta=sm["theta"], reps=sm["reps"], seed=seed, chunk=sm["chunk"]
            )
            results.append(mc_assess(fc, known_variance=sm["known_variance"], threads=args.threads))
    return {"simulate.csv": results_to_csv(results)}, True


COMMANDS = {
    "optimize": cmd_optimize,
    "table1": cmd_table1,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="crossover-ci", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--out-dir", type=Path, default=Path("."))
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _jsonable(conf):
    return {sec: dict(vals) for sec, vals in conf.items()}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    start = time.time()
    try:
        conf = load_config(args.config)
        outputs, audit_ok = COMMANDS[args.command](conf, args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OptimizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.best is not None:
            print(exc.best.to_json(), file=sys.stderr)
        return EXIT_RUNTIME

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        with open(args.out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    manifest = {
        "subcommand": args.command,
        "config": _jsonable(conf),
        "config_path": None if args.config is None else str(args.config),
        "out_dir": str(args.out_dir),
        "outputs": sorted(outputs),
        "seed": args.seed,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - start, 3),
        "audit_passed": bool(audit_ok),
    }
    with open(args.out_dir / f"manifest_{args.command}.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if not audit_ok:
        print("error: feasibility audit failed", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
