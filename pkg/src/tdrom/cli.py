"""Command-line frontend.

Subcommands
-----------
offline   run the greedy construction and write an artifact plus the greedy history
online    evaluate the reduced model and its error estimate for many parameters
validate  compare the reduced model with full-order solves on a validation set
table1    MTI accuracy versus reduced dimension on the 1D advection problem
bench     time online evaluations against full-order solves

Configuration is JSON; see ``DEFAULT_CONFIG`` for the schema. CSV output
uses 17 significant digits. Exit codes: 0 success, 2 configuration error,
3 numerical failure. ``ROM_LOG=debug|info`` sets the log level.
"""

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .artifact import OfflineArtifact, config_hash, load_artifact, save_artifact
from .estimator import effectivity, evaluate_rom, relative_errors
from .exceptions import ConfigurationError, RomError, ShapeError, ValidationError
from .greedy import pod_greedy, t_greedy
from .integrate import solve_full
from .pod import pod
from .reduced import (build_time_independent_basis, compute_offline_quantities, reconstruct_trajectory,
                      solve_reduced)
from .testcases import BenchmarkSpec, build

__all__ = ["main", "DEFAULT_CONFIG", "load_config", "offline_section", "table1_rows", "REFERENCE_TABLE1"]

log = logging.getLogger("tdrom.cli")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULT_CONFIG = {
    "benchmark": {"case": "advection1d", "n": None, "ic": "continuous"},
    "method": "mtd",
    "greedy": {
        "eps": 1e-8,
        "r_max": None,
        "ell": 1,
        "eim_eps": 1e-10,
        "time_norm": "l2",
        "form": "consistent",
        "on_rank_deficiency": "raise",
    },
    "training": {"count": 30, "seed": 7, "points": None},
    "validation": {"count": 50, "seed": 3},
    "online": {"xis": None, "series": False},
    "bench": {"resolutions": None},
    "output": "out",
    "workers": 1,
}

# (r, E2, Einf) for the continuous and discontinuous initial states
REFERENCE_TABLE1 = {
    "continuous": {
        1: (0.027831, 0.76058),
        2: (0.024075, 0.95713),
        5: (0.0078461, 0.26984),
        10: (0.00021853, 0.0075156),
        20: (4.8616e-09, 1.6719e-07),
        50: (4.0924e-17, 1.4074e-15),
        100: (4.4353e-17, 1.5253e-15),
        200: (4.5623e-17, 1.569e-15),
    },
    "discontinuous": {
        1: (0.022116, 0.76058),
        2: (0.0135, 0.46427),
        5: (0.0060424, 0.2078),
        10: (0.0040044, 0.13771),
        20: (0.002043, 0.07026),
        50: (4.7139e-05, 0.0016211),
        100: (1.3891e-12, 4.7771e-11),
        200: (6.3966e-17, 2.1998e-15),
    },
}
TABLE1_XI = 0.65


# ---------------------------------------------------------------- configuration


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {path + key!r}")
        if isinstance(base[key], dict) and val is not None:
            if not isinstance(val, dict):
                raise ConfigurationError(f"configuration key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def _as_float(value, name):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a number, got {value!r}") from exc


def load_config(source=None, seed_override=None):
    """Merge a JSON file (path) or dict into the defaults and validate it."""
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"configuration {source} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, raw)
    BenchmarkSpec(**cfg["benchmark"])
    if cfg["method"] not in ("mtd", "mti"):
        raise ConfigurationError(f"method must be 'mtd' or 'mti', got {cfg['method']!r}")
    g = cfg["greedy"]
    g["eps"] = _as_float(g["eps"], "greedy.eps")
    g["eim_eps"] = _as_float(g["eim_eps"], "greedy.eim_eps")
    if g["time_norm"] not in ("l2", "linf"):
        raise ConfigurationError("greedy.time_norm must be 'l2' or 'linf'")
    if g["form"] not in ("consistent", "printed"):
        raise ConfigurationError("greedy.form must be 'consistent' or 'printed'")
    if g["on_rank_deficiency"] not in ("raise", "stop"):
        raise ConfigurationError("greedy.on_rank_deficiency must be 'raise' or 'stop'")
    if seed_override is not None:
        seed = int(seed_override)
        if not 0 <= seed < 2**64:
            raise ConfigurationError("--seed-override must be an unsigned 64-bit integer")
        cfg["training"]["seed"] = seed
        cfg["validation"]["seed"] = seed
    tr = cfg["training"]
    if tr["points"] is None and (tr["count"] is None or tr["seed"] is None):
        raise ConfigurationError("training needs explicit points or both count and seed")
    val = cfg["validation"]
    if val["count"] is None or val["seed"] is None:
        raise ConfigurationError("validation needs count and seed")
    if int(cfg["workers"]) < 1:
        raise ConfigurationError("workers must be at least 1")
    return cfg


def offline_section(cfg):
    """The part of the configuration that determines the offline artifact."""
    return {k: copy.deepcopy(cfg[k]) for k in ("benchmark", "method", "greedy", "training")}


def _setup(cfg):
    model, grid, domain = build(cfg["benchmark"])
    tr = cfg["training"]
    if tr["points"] is not None:
        train = domain.as_points(tr["points"])
    else:
        train = domain.sample(int(tr["count"]), int(tr["seed"]))
    try:
        domain = domain.with_training_set(train)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
    return model, grid, domain


def _parameters(cfg, domain):
    xis = cfg["online"]["xis"]
    if xis:
        return domain.as_points(xis)
    v = cfg["validation"]
    return domain.sample(int(v["count"]), int(v["seed"]))


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _xi_header(p):
    return [f"xi_{i + 1}" for i in range(p)]


def _pool_map(fn, items, workers):
    """Ordered map over ``items``; results come back in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- commands


def run_offline(cfg):
    """Run the configured greedy algorithm; returns ``(artifact, model, domain)``."""
    model, _, domain = _setup(cfg)
    g = cfg["greedy"]
    common = dict(eim_eps=g["eim_eps"], time_norm=g["time_norm"], form=g["form"])
    if cfg["method"] == "mtd":
        res = t_greedy(model, domain, g["eps"], r_max=g["r_max"], on_rank_deficiency=g["on_rank_deficiency"],
                       **common)
    else:
        res = pod_greedy(model, domain, g["eps"], r_max=g["r_max"], ell=int(g["ell"]), **common)
    return OfflineArtifact(offline_section(cfg), res), model, domain


def history_rows(result):
    """Greedy history: one row per iteration, row 0 being the empty space."""
    train_dim = result.selected.shape[1] if result.selected.ndim == 2 else 1
    ind = result.indicators_by_iteration
    rows = [[0] + [None] * train_dim + [ind[0], 0, 0]]
    for it in range(result.n_iterations):
        rows.append([it + 1] + list(result.selected[it]) + [ind[it + 1], result.dims[it], it + 1])
    return ["iteration"] + _xi_header(train_dim) + ["max_indicator", "dim", "full_solves"], rows


def cmd_offline(args, cfg):
    out = args.out or cfg["output"]
    art, _, _ = run_offline(cfg)
    path = args.artifact or os.path.join(out, "artifact.tdrom")
    header, rows = history_rows(art.result)
    write_csv(os.path.join(out, "greedy_history.csv"), header, rows)
    save_artifact(path, art)
    r = art.result
    dim = r.basis.r if r.basis is not None else 0
    print(f"method={cfg['method']} iterations={r.n_iterations} dim={dim} "
          f"max_indicator={r.final_max_indicator:.6e} stop={r.stop_reason or 'none'} artifact={path}")
    return EXIT_OK


def _load(args, cfg):
    if not args.artifact:
        raise ConfigurationError("--artifact is required")
    model, _, domain = _setup(cfg)
    art = load_artifact(args.artifact, expected_hash=config_hash(offline_section(cfg)), metric=domain.metric)
    res = art.result
    if res.offline is None or res.basis is None:
        raise ConfigurationError("the artifact holds an empty reduced space; nothing to evaluate")
    return art, model, domain


def _online_one(res, model, cfg):
    g = cfg["greedy"]

    def run(xi):
        t0 = time.perf_counter()
        traj, est = evaluate_rom(res.offline, model, xi[None], basis=res.basis, form=g["form"],
                                 time_norm=g["time_norm"])
        return traj, est[0], time.perf_counter() - t0

    return run


SERIES_COLUMNS = ["k", "t", "delta_tilde", "residual", "lip_A", "lip_h"]


def _series_rows(est, dt, exact=None, kappa=None):
    """Per-step estimator rows; the residual of step k drives the update k -> k+1 (none at k = K)."""
    rows = []
    for k, dk in enumerate(est.delta):
        res_k = est.residuals[k] if k < len(est.residuals) else None
        row = [k, k * dt, dk, res_k, est.lip_A[k], est.lip_h[k]]
        if exact is not None:
            row += [exact[k], kappa[k]]
        rows.append(row)
    return rows


def cmd_online(args, cfg):
    out = args.out or cfg["output"]
    art, model, domain = _load(args, cfg)
    xis = _parameters(cfg, domain)
    workers = args.workers or int(cfg["workers"])
    results = _pool_map(_online_one(art.result, model, cfg), list(xis), workers)
    p = domain.dim
    rows, timing, series = [], [], []
    dt = model.grid.dt
    for i, (xi, (_, est, secs)) in enumerate(zip(xis, results)):
        inside = domain.contains(xi)
        if not inside:
            log.warning("parameter %d outside the domain bounds: %s", i, xi)
        rows.append([i] + list(xi) + [inside, float(est.global_value)])
        timing.append([i, secs])
        if cfg["online"]["series"]:
            series.extend([i] + row for row in _series_rows(est, dt))
    write_csv(os.path.join(out, "online.csv"), ["index"] + _xi_header(p) + ["in_domain", "Delta_0T"], rows)
    write_csv(os.path.join(out, "online_timing.csv"), ["index", "runtime_s"], timing)
    if cfg["online"]["series"]:
        write_csv(os.path.join(out, "online_series.csv"), ["index"] + SERIES_COLUMNS, series)
    print(f"evaluated {len(rows)} parameters; output in {out}")
    return EXIT_OK


def validation_report(res, model, xis, cfg, workers=1):
    """Per-parameter errors, estimates and effectivities against full-order solves."""
    online = _online_one(res, model, cfg)

    def run(xi):
        u = solve_full(model, xi).states
        traj, est, _ = online(xi)
        ur = reconstruct_trajectory(res.basis, traj.alpha[0])
        err = np.linalg.norm(ur - u, axis=1)
        kappa = effectivity(est.delta, err)
        return {
            "E2": relative_errors(u, ur, 2),
            "Einf": relative_errors(u, ur, np.inf),
            "Delta_0T": float(est.global_value),
            "error": err,
            "estimate": est,
            "kappa": kappa,
        }

    return _pool_map(run, list(xis), workers)


def cmd_validate(args, cfg):
    out = args.out or cfg["output"]
    art, model, domain = _load(args, cfg)
    v = cfg["validation"]
    xis = domain.sample(int(v["count"]), int(v["seed"]))
    workers = args.workers or int(cfg["workers"])
    rep = validation_report(art.result, model, xis, cfg, workers)
    dt = model.grid.dt
    p = domain.dim
    rows, series = [], []
    for i, (xi, r) in enumerate(zip(xis, rep)):
        finite = r["kappa"][np.isfinite(r["kappa"])]
        kmean = float(finite.mean()) if finite.size else float("nan")
        rows.append([i] + list(xi) + [r["E2"], r["Einf"], r["Delta_0T"], kmean])
        series.extend([i] + row for row in _series_rows(r["estimate"], dt, r["error"], r["kappa"]))
    write_csv(os.path.join(out, "validate.csv"),
              ["index"] + _xi_header(p) + ["E2", "Einf", "Delta_0T", "kappa_mean"], rows)
    write_csv(os.path.join(out, "validate_series.csv"), ["index"] + SERIES_COLUMNS + ["exact_error", "kappa"],
              series)
    E2 = np.array([r["E2"] for r in rep])
    Ei = np.array([r["Einf"] for r in rep])
    summary = [["E2", np.mean(E2), np.max(E2)], ["Einf", np.mean(Ei), np.max(Ei)]]
    write_csv(os.path.join(out, "validate_summary.csv"), ["metric", "mean", "max"], summary)
    K = np.stack([r["kappa"] for r in rep])
    with np.errstate(all="ignore"):
        cnt = np.sum(np.isfinite(K), axis=0)
        kmean = np.where(cnt > 0, np.nansum(K, axis=0) / np.maximum(cnt, 1), np.nan)
    write_csv(os.path.join(out, "validate_kappa.csv"), ["k", "t", "kappa_mean"],
              [[k, k * dt, kmean[k]] for k in range(K.shape[1])])
    print(f"mean E2={np.mean(E2):.6e} max E2={np.max(E2):.6e} mean Einf={np.mean(Ei):.6e} max Einf={np.max(Ei):.6e}")
    return EXIT_OK


def table1_rows(n=2001, ranks=(1, 2, 5, 10, 20, 50, 100, 200), ics=("continuous", "discontinuous")):
    """MTI relative errors at ``xi = 0.65`` with POD bases of the trajectory itself.

    One SVD per initial state; requested ranks beyond the numerical rank of the
    trajectory use every available mode (column ``r_eff``).
    """
    rows = []
    xi = np.array([[TABLE1_XI]])
    for ic in ics:
        model, grid, _ = build({"case": "advection1d", "n": n, "ic": ic})
        U = solve_full(model, xi[0]).states
        modes = pod(U.T).modes
        for r in ranks:
            r_eff = min(r, modes.shape[1])
            basis = build_time_independent_basis(modes[:, :r_eff], grid)
            off = compute_offline_quantities(basis, model)
            ur = reconstruct_trajectory(basis, solve_reduced(off, model, xi).alpha[0])
            e2, ei = relative_errors(U, ur, 2), relative_errors(U, ur, np.inf)
            p2, pi = REFERENCE_TABLE1.get(ic, {}).get(r, (float("nan"), float("nan")))
            rows.append({"ic": ic, "r": r, "r_eff": r_eff, "E2": e2, "E2_ref": p2, "Einf": ei, "Einf_ref": pi})
    return rows


def cmd_table1(args, cfg):
    n = args.n or 2001
    rows = table1_rows(n)
    header = ["ic", "r", "r_eff", "E2", "E2_ref", "E2_ratio", "Einf", "Einf_ref", "Einf_ratio"]
    print(f"{'ic':<14}{'r':>5}{'r_eff':>6}{'E2':>13}{'E2 ref':>13}{'ratio':>10}{'Einf':>13}{'Einf ref':>13}{'ratio':>10}")
    table = []
    for row in rows:
        r2 = row["E2"] / row["E2_ref"]
        ri = row["Einf"] / row["Einf_ref"]
        print(f"{row['ic']:<14}{row['r']:>5}{row['r_eff']:>6}{row['E2']:>13.4e}{row['E2_ref']:>13.4e}{r2:>10.3g}"
              f"{row['Einf']:>13.4e}{row['Einf_ref']:>13.4e}{ri:>10.3g}")
        table.append([row["ic"], row["r"], row["r_eff"], row["E2"], row["E2_ref"], r2, row["Einf"],
                      row["Einf_ref"], ri])
    if args.out:
        write_csv(os.path.join(args.out, "table1.csv"), header, table)
    return EXIT_OK


def cmd_bench(args, cfg):
    out = args.out or cfg["output"]
    sizes = cfg["bench"]["resolutions"] or [cfg["benchmark"]["n"]]
    rows = []
    for n in sizes:
        c = copy.deepcopy(cfg)
        c["benchmark"]["n"] = n
        t0 = time.perf_counter()
        art, model, domain = run_offline(c)
        t_off = time.perf_counter() - t0
        res = art.result
        if res.offline is None:
            raise ConfigurationError("the greedy run produced an empty reduced space; nothing to time")
        xis = _parameters(c, domain)
        run = _online_one(res, model, c)
        t_on = [run(xi)[2] for xi in xis]
        t_full = []
        for xi in xis[: min(5, len(xis))]:
            t0 = time.perf_counter()
            solve_full(model, xi)
            t_full.append(time.perf_counter() - t0)
        rows.append([model.dim, res.basis.r, res.offline.m, t_off, float(np.mean(t_on)), float(np.mean(t_full)),
                     float(np.mean(t_full) / np.mean(t_on))])
        print(f"d={model.dim} r={res.basis.r} m={res.offline.m} offline={t_off:.3f}s "
              f"online={np.mean(t_on):.4e}s full={np.mean(t_full):.4e}s")
    write_csv(os.path.join(out, "bench.csv"),
              ["d", "r", "m", "offline_s", "online_mean_s", "full_mean_s", "speedup"], rows)
    return EXIT_OK


HELP = {
    "offline": "run the greedy construction and write the artifact",
    "online": "evaluate the reduced model and error estimate",
    "validate": "compare the reduced model with full-order solves",
    "table1": "MTI accuracy versus reduced dimension (1D advection)",
    "bench": "time online evaluations against full-order solves",
}

COMMANDS = {
    "offline": cmd_offline,
    "online": cmd_online,
    "validate": cmd_validate,
    "table1": cmd_table1,
    "bench": cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tdrom", description="Reduced-order models with time-dependent bases.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--artifact", help="offline artifact path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker threads for parameter sweeps")
        p.add_argument("--seed-override", type=int, help="replace every sampling seed")
        if name == "table1":
            p.add_argument("--n", type=int, help="number of grid points (default 2001)")
    return parser


def _configure_logging():
    level = os.environ.get("ROM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s", force=True)


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.workers is not None and args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        cfg = load_config(args.config, args.seed_override)
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, ValidationError, ShapeError) as exc:
        print(f"tdrom {args.command}: configuration error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tdrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RomError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"tdrom {args.command}: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
