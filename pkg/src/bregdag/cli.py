"""Command-line front end: generate, fit, eval, and sweep.

One JSON config document drives everything; every flag listed below
overrides the matching config field.  All file formats are plain text:

- data CSV: header row of variable names, then one sample per row of
  decimal 64-bit reals (shortest round-trip form).
- adjacency CSV: n rows of n comma-separated reals, no header.
- result JSON: top-level keys {weights, binary, traces, config_echo,
  timing, converged}.
- eval / sweep detail CSV columns:
  n,m,k,model,noise,lambda,seed,shd,fdr,tpr,time  (detail adds: error)
- sweep summary CSV columns:
  n,m,k,model,noise,runs,failures,shd_mean,shd_sd,fdr_mean,tpr_mean

Wall-clock columns make detail CSVs and result JSON vary across runs;
the summary CSV carries no timing and is byte-identical for a fixed
(config, seeds) pair.  ``generate`` writes a manifest with SHA-256
checksums next to its CSVs, and any command reading a file listed in a
sibling manifest refuses to proceed when the checksum disagrees.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import product

import numpy as np

from .metrics import evaluate
from .report import render_fit_traces, render_sweep_summary
from .simulate import (
    GraphSpec,
    NoiseSpec,
    file_sha256,
    generate,
    load_adjacency_csv,
    load_data_csv,
    save_adjacency_csv,
    save_data_csv,
)
from .solver import FitConfig, FitResult, fit


class CliError(Exception):
    """User-facing failure: printed to stderr, exit code 2."""


#: config keys and their defaults; grid keys accept a scalar or a list
_DEFAULTS: dict = {
    "n": 10,
    "m": 200,
    "k": 2.0,
    "model": "er",
    "noise": "gaussian",
    "noise_scale": 1.0,
    "weight_range": [0.5, 2.0],
    "positive_only": False,
    "lambda": 1e-4,
    "mode": "positive",
    "kernel": "bregman",
    "alpha": None,
    "mu": 100.0,
    "tau": 1e-7,
    "omega": 0.3,
    "gamma0": 1.0,
    "gamma_max": 1000.0,
    "max_outer": 500,
    "enforce_norm_floor": False,
    "seed": 0,
    "seeds": None,
    "jobs": 1,
    "output_dir": "bregdag-out",
}

#: argparse destination -> config key, for flag overrides
_FLAG_KEYS = {
    "seed": "seed",
    "output_dir": "output_dir",
    "jobs": "jobs",
    "mode": "mode",
    "kernel": "kernel",
    "lam": "lambda",
    "alpha": "alpha",
    "mu": "mu",
    "tau": "tau",
    "omega": "omega",
    "enforce_norm_floor": "enforce_norm_floor",
}

_DETAIL_COLUMNS = (
    "n", "m", "k", "model", "noise", "lambda", "seed",
    "shd", "fdr", "tpr", "time", "error",
)
_EVAL_COLUMNS = _DETAIL_COLUMNS[:-1]
_SUMMARY_COLUMNS = (
    "n", "m", "k", "model", "noise", "runs", "failures",
    "shd_mean", "shd_sd", "fdr_mean", "tpr_mean",
)


def load_config(args: argparse.Namespace) -> tuple[dict, set]:
    """Merge defaults <- JSON config <- explicit flags.

    Returns the merged mapping plus the set of keys the user actually
    provided (used where defaults would be misleading, e.g. eval rows).
    """
    cfg = dict(_DEFAULTS)
    provided: set = set()
    if args.config is not None:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(doc) - set(_DEFAULTS))
        if unknown:
            raise CliError(f"{args.config}: unknown config keys: {', '.join(unknown)}")
        cfg.update(doc)
        provided.update(doc)
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[key] = value
            provided.add(key)
    return cfg, provided


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _seed_list(cfg: dict) -> list[int]:
    if cfg["seeds"] is not None:
        seeds = [int(s) for s in _as_list(cfg["seeds"])]
        if not seeds:
            raise CliError("seeds list is empty")
        return seeds
    return [int(cfg["seed"])]


def _graph_spec(cfg: dict, n: int, k: float, model: str) -> GraphSpec:
    lo, hi = cfg["weight_range"]
    return GraphSpec(
        n=int(n), k=float(k), model=str(model),
        weight_range=(float(lo), float(hi)),
        positive_only=bool(cfg["positive_only"]),
    )


def _noise_spec(cfg: dict, family: str) -> NoiseSpec:
    return NoiseSpec(family=str(family), scale=float(cfg["noise_scale"]))


def _fit_config(cfg: dict, lam: float | None = None, seed: int | None = None) -> FitConfig:
    return FitConfig(
        lam=float(cfg["lambda"] if lam is None else lam),
        mu=float(cfg["mu"]),
        alpha=None if cfg["alpha"] is None else float(cfg["alpha"]),
        tau=float(cfg["tau"]),
        omega=float(cfg["omega"]),
        gamma0=float(cfg["gamma0"]),
        gamma_max=float(cfg["gamma_max"]),
        max_outer=int(cfg["max_outer"]),
        mode=str(cfg["mode"]),
        kernel=str(cfg["kernel"]),
        enforce_norm_floor=bool(cfg["enforce_norm_floor"]),
        seed=int(cfg["seed"] if seed is None else seed),
    )


def result_to_dict(res: FitResult) -> dict:
    echo = dataclasses.asdict(res.config)
    echo["inner"] = dataclasses.asdict(res.config.inner)
    echo["alpha_resolved"] = res.params.alpha
    return {
        "weights": res.weights.tolist(),
        "binary": res.binary.tolist(),
        "traces": {
            "objective": res.objective_trace.tolist(),
            "l2": res.l2_trace.tolist(),
            "gamma": res.gamma_trace.tolist(),
            "halvings": res.halvings_trace.tolist(),
        },
        "config_echo": echo,
        "timing": {
            "wall_time_seconds": res.wall_time_seconds,
            "outer_iterations": res.outer_iterations,
            "inner_iterations_total": res.inner_iterations_total,
        },
        "converged": res.converged,
    }


def _write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _verify_manifest(path) -> None:
    """Refuse to read a file whose sibling manifest checksum disagrees."""
    directory = os.path.dirname(os.path.abspath(path))
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        return
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"{manifest_path}: unreadable manifest: {exc}") from None
    want = manifest.get("files", {}).get(os.path.basename(path))
    if want is not None and file_sha256(path) != want:
        raise CliError(
            f"{path}: checksum does not match {manifest_path}; "
            "refusing to read a modified dataset"
        )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value.replace(",", ";").replace("\n", " ")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, columns: tuple, rows: list[dict]) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(row.get(c)) for c in columns) for row in rows)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- subcommands --------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args)
    for key in ("n", "m", "k", "model", "noise", "lambda"):
        if isinstance(cfg[key], (list, tuple)):
            raise CliError(f"generate needs a scalar {key!r}; lists are for sweep")
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    seed = int(cfg["seed"])
    spec = _graph_spec(cfg, cfg["n"], cfg["k"], cfg["model"])
    noise = _noise_spec(cfg, cfg["noise"])
    data = generate(spec, noise, m=int(cfg["m"]), seed=seed)

    data_path = os.path.join(out, "data.csv")
    truth_path = os.path.join(out, "truth.csv")
    save_data_csv(data_path, data.samples)
    save_adjacency_csv(truth_path, data.weights)
    manifest = {
        "kind": "bregdag-dataset",
        "graph": {
            "n": spec.n, "k": spec.k, "model": spec.model,
            "weight_range": list(spec.weight_range),
            "positive_only": spec.positive_only,
        },
        "noise": {"family": noise.family, "scale": noise.scale, "centered": noise.centered},
        "m": data.m,
        "seed": seed,
        "files": {
            "data.csv": file_sha256(data_path),
            "truth.csv": file_sha256(truth_path),
        },
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    for name in ("data.csv", "truth.csv", "manifest.json"):
        print(f"wrote {os.path.join(out, name)}")
    return 0


def _load_samples(path) -> np.ndarray:
    _verify_manifest(path)
    X, _ = load_data_csv(path)
    if not np.isfinite(X).all():
        raise CliError(f"{path}: non-finite values in data")
    if X.shape[1] < 3:
        raise CliError(f"{path}: need at least 3 variables, got {X.shape[1]}")
    return X


def cmd_fit(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args)
    X = _load_samples(args.data)
    res = fit(X, _fit_config(cfg))
    doc = result_to_dict(res)

    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "result.json"), doc)
    with open(args.data) as fh:
        names = fh.readline().rstrip("\n").split(",")
    edges = [
        {"source": names[i], "target": names[j]}
        for i, j in np.argwhere(res.binary).tolist()
    ]
    _write_csv(os.path.join(out, "edges.csv"), ("source", "target"), edges)
    render_fit_traces(doc, os.path.join(out, "traces.png"))

    status = "converged" if res.converged else "iteration cap reached"
    print(
        f"{status}: {res.outer_iterations} outer iterations, "
        f"{int(res.binary.sum())} edges, {res.wall_time_seconds:.2f}s"
    )
    for name in ("result.json", "edges.csv", "traces.png"):
        print(f"wrote {os.path.join(out, name)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, provided = load_config(args)
    row: dict = {c: None for c in _EVAL_COLUMNS}

    if args.pred.endswith(".json"):
        with open(args.pred) as fh:
            doc = json.load(fh)
        pred = np.asarray(doc["binary"])
        echo = doc.get("config_echo", {})
        row["lambda"] = echo.get("lam")
        row["seed"] = echo.get("seed")
        row["time"] = doc.get("timing", {}).get("wall_time_seconds")
    else:
        _verify_manifest(args.pred)
        pred = load_adjacency_csv(args.pred)

    _verify_manifest(args.truth)
    truth = load_adjacency_csv(args.truth)
    manifest_path = os.path.join(os.path.dirname(os.path.abspath(args.truth)), "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        row["m"] = manifest.get("m")
        graph = manifest.get("graph", {})
        row["k"] = graph.get("k")
        row["model"] = graph.get("model")
        row["noise"] = manifest.get("noise", {}).get("family")
        if row["seed"] is None:
            row["seed"] = manifest.get("seed")

    report = evaluate(pred, truth)
    row["n"] = truth.shape[0]
    row["shd"] = report.shd
    row["fdr"] = report.fdr
    row["tpr"] = report.tpr
    for key in ("lambda", "seed"):
        if key in provided:
            row[key] = cfg[key]

    print(",".join(_EVAL_COLUMNS))
    print(",".join(_fmt(row.get(c)) for c in _EVAL_COLUMNS))
    if "output_dir" in provided:
        os.makedirs(cfg["output_dir"], exist_ok=True)
        path = os.path.join(cfg["output_dir"], "eval.csv")
        _write_csv(path, _EVAL_COLUMNS, [row])
        print(f"wrote {path}")
    return 0


def _sweep_run(task: dict) -> dict:
    """One grid cell run; exceptions land in the row, not the sweep."""
    row = {c: None for c in _DETAIL_COLUMNS}
    row.update(
        n=task["n"], m=task["m"], k=task["k"], model=task["model"],
        noise=task["noise"], **{"lambda": task["lambda"]}, seed=task["seed"],
    )
    try:
        cfg = task["cfg"]
        spec = _graph_spec(cfg, task["n"], task["k"], task["model"])
        noise = _noise_spec(cfg, task["noise"])
        data = generate(spec, noise, m=int(task["m"]), seed=int(task["seed"]))
        res = fit(data.samples, _fit_config(cfg, lam=task["lambda"], seed=task["seed"]))
        report = evaluate(res.binary, data.weights)
        os.makedirs(task["run_dir"], exist_ok=True)
        _write_json(os.path.join(task["run_dir"], "result.json"), result_to_dict(res))
        row.update(shd=report.shd, fdr=report.fdr, tpr=report.tpr,
                   time=res.wall_time_seconds)
    except Exception as exc:  # noqa: BLE001 - recorded per row by contract
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _summarize(detail: list[dict]) -> list[dict]:
    """Aggregate detail rows per (n, m, k, model, noise) cell.

    Statistics pool seeds and lambda values; failed runs are counted but
    excluded from the means.  Cell order follows first appearance.
    """
    cells: dict[tuple, list[dict]] = {}
    for row in detail:
        cells.setdefault((row["n"], row["m"], row["k"], row["model"], row["noise"]), []).append(row)
    summary = []
    for (n, m, k, model, noise), rows in cells.items():
        good = [r for r in rows if r["error"] is None]
        rec = {
            "n": n, "m": m, "k": k, "model": model, "noise": noise,
            "runs": len(rows), "failures": len(rows) - len(good),
            "shd_mean": None, "shd_sd": None, "fdr_mean": None, "tpr_mean": None,
        }
        if good:
            shds = np.array([r["shd"] for r in good], dtype=float)
            rec["shd_mean"] = float(shds.mean())
            rec["shd_sd"] = float(shds.std())
            fdrs = [r["fdr"] for r in good if r["fdr"] is not None]
            tprs = [r["tpr"] for r in good if r["tpr"] is not None]
            if fdrs:
                rec["fdr_mean"] = float(np.mean(fdrs))
            if tprs:
                rec["tpr_mean"] = float(np.mean(tprs))
        summary.append(rec)
    return summary


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args)
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    seeds = _seed_list(cfg)
    grid = list(product(
        _as_list(cfg["n"]), _as_list(cfg["m"]), _as_list(cfg["k"]),
        _as_list(cfg["model"]), _as_list(cfg["noise"]), _as_list(cfg["lambda"]),
        seeds,
    ))
    if not grid:
        raise CliError("sweep grid is empty")

    tasks = []
    for n, m, k, model, noise, lam, seed in grid:
        tag = f"n{n}_m{m}_k{k:g}_{model}_{noise}_lam{lam:g}_seed{seed}"
        tasks.append({
            "n": int(n), "m": int(m), "k": float(k), "model": str(model),
            "noise": str(noise), "lambda": float(lam), "seed": int(seed),
            "run_dir": os.path.join(out, "runs", tag), "cfg": cfg,
        })

    jobs = max(1, int(cfg["jobs"]))
    if jobs == 1:
        detail = [_sweep_run(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            detail = list(pool.map(_sweep_run, tasks))

    summary = _summarize(detail)
    _write_csv(os.path.join(out, "detail.csv"), _DETAIL_COLUMNS, detail)
    _write_csv(os.path.join(out, "summary.csv"), _SUMMARY_COLUMNS, summary)
    render_sweep_summary(summary, os.path.join(out, "summary_shd.png"))

    failures = sum(1 for r in detail if r["error"] is not None)
    print(f"{len(detail)} runs, {failures} failed, {len(summary)} grid cells")
    for name in ("detail.csv", "summary.csv", "summary_shd.png"):
        print(f"wrote {os.path.join(out, name)}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bregdag",
        description="Sparse DAG structure learning from observational data.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="JSON config document")
        p.add_argument("--seed", type=int, help="generator seed / config echo")
        p.add_argument("--output-dir", metavar="PATH", help="directory for output files")
        p.add_argument("--jobs", type=int, help="parallel fits in a sweep")
        p.add_argument("--mode", choices=("positive", "split"))
        p.add_argument("--kernel", choices=("bregman", "euclidean"))
        p.add_argument("--lambda", dest="lam", type=float, help="l1 weight")
        p.add_argument("--alpha", type=float, help="penalty scale (default 0.1/n)")
        p.add_argument("--mu", type=float, help="penalty strength")
        p.add_argument("--tau", type=float, help="relative residual stop tolerance")
        p.add_argument("--omega", type=float, help="edge-reporting threshold")
        p.add_argument("--enforce-norm-floor", action="store_true", default=None,
                       help="keep iterates on or above the kernel norm floor")

    p = sub.add_parser("generate", help="write a synthetic dataset with manifest")
    add_common(p)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("fit", help="learn a weighted DAG from a data CSV")
    p.add_argument("data", help="samples CSV (header row of names)")
    add_common(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("eval", help="score a prediction against a truth adjacency CSV")
    p.add_argument("pred", help="result.json or adjacency CSV")
    p.add_argument("truth", help="ground-truth adjacency CSV")
    add_common(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="run a benchmark grid and aggregate metrics")
    add_common(p)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
