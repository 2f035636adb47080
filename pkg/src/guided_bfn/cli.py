"""Command-line entry point: ``guided-bfn run | compare | verify``.

Exit codes: 0 success, 1 verification failure, 2 invalid configuration or
mismatched runs, 3 sampler failure at runtime.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _faults
from .analysis import improvement_metric, trajectory_stats
from .config import RunConfig, config_from_dict, load_config, with_seed
from .errors import ConfigError, SamplingError
from .experiment import build_components, run_chain, terminal_score, world_digest
from .state import format_molecule, read_molecule
from .trajectory import dumps_jsonl, read_jsonl

log = logging.getLogger("guided_bfn")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_ROOT = "runs"
ENV_OUT = "GUIDED_BFN_OUT"
HEADER = "header.json"
STATS = "stats.csv"
FAILED = "FAILED"
STAT_NAMES = ("mean_score", "var_score", "mean_mu")


def _out_root() -> Path:
    return Path(os.environ.get(ENV_OUT, DEFAULT_ROOT))


def resolve_run_dir(cfg: RunConfig, config_path: str, out: str | None) -> Path:
    if out:
        return Path(out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return _out_root() / Path(config_path).stem


def _chain_job(args):
    cfg, index = args
    mol, records = run_chain(cfg, index)
    return index, format_molecule(mol), dumps_jsonl(records), records


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_run(config: str, out: str | None = None, jobs: int = 1, seed_override: int | None = None) -> int:
    try:
        cfg = load_config(config)
        if seed_override is not None:
            cfg = with_seed(cfg, seed_override)
        parts = build_components(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run_dir = resolve_run_dir(cfg, config, out)
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in [run_dir / FAILED, run_dir / STATS, *run_dir.glob("chain_*.jsonl"), *run_dir.glob("chain_*.mol")]:
        stale.unlink(missing_ok=True)

    g, sch = cfg.guidance, cfg.schedule
    header = {
        "version": __version__,
        "sampler": cfg.sampler,
        "seed": cfg.base_seed,
        "n_steps": cfg.n_steps,
        "lambda_x": g.lambda_coords,
        "lambda_v": g.lambda_types,
        "tau": g.gumbel_temperature,
        "M": g.ensemble_size,
        "uncertainty_scaling": g.uncertainty_scaling,
        "sigma1": sch.sigma1,
        "beta1": sch.beta1,
        "rho_0": sch.rho_0,
        "config": cfg.to_dict(),
        "target_label": parts.target,
        "world_sha256": world_digest(parts.world),
        "chain_seeds": [cfg.base_seed + i for i in range(cfg.n_chains)],
    }
    (run_dir / HEADER).write_text(_dump(header), encoding="utf-8")

    jobs_list = [(cfg, i) for i in range(cfg.n_chains)]
    trajectories = [None] * cfg.n_chains
    terminals = [None] * cfg.n_chains
    try:
        if jobs > 1 and cfg.n_chains > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_chain_job, jobs_list))
        else:
            results = map(_chain_job, jobs_list)
        for index, mol_text, jsonl, records in results:
            (run_dir / f"chain_{index:04d}.jsonl").write_text(jsonl, encoding="utf-8")
            mol_path = run_dir / f"chain_{index:04d}.mol"
            mol_path.write_text(mol_text, encoding="utf-8")
            trajectories[index] = records
            terminals[index] = terminal_score(read_molecule(mol_path), parts.world)
    except SamplingError as exc:
        msg = f"sampler failure in {exc}"
        print(msg, file=sys.stderr)
        (run_dir / FAILED).write_text(msg + "\n", encoding="utf-8")
        return EXIT_RUNTIME

    stats = trajectory_stats(trajectories, terminals)
    (run_dir / STATS).write_text(stats.to_csv(), encoding="utf-8")
    log.info("wrote %d chains to %s", cfg.n_chains, run_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


class RunMismatch(Exception):
    pass


def _load_run(path: Path) -> dict:
    header_path = path / HEADER
    if not header_path.exists():
        raise RunMismatch(f"{path} has no {HEADER}")
    if (path / FAILED).exists():
        raise RunMismatch(f"{path} is a failed run")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    cfg = config_from_dict(header["config"])
    parts = build_components(cfg)
    n = len(header["chain_seeds"])
    trajs = [read_jsonl(path / f"chain_{i:04d}.jsonl") for i in range(n)]
    terminals = [terminal_score(read_molecule(path / f"chain_{i:04d}.mol"), parts.world) for i in range(n)]
    return {"path": path, "header": header, "stats": trajectory_stats(trajs, terminals), "terminals": terminals}


def _labels(runs: list[dict]) -> list[str]:
    names = [r["header"]["sampler"] for r in runs]
    out = []
    for i, name in enumerate(names):
        out.append(name if names.count(name) == 1 else f"{name}#{names[:i + 1].count(name)}")
    return out


def _pairings(runs: list[dict], labels: list[str]) -> list[tuple[int, int]]:
    unguided = [i for i, r in enumerate(runs) if r["header"]["sampler"] == "bfn-unguided"]
    guided = [i for i in range(len(runs)) if i not in unguided]
    if unguided and guided:
        return [(g, u) for g in guided for u in unguided]
    # no guided/unguided split available: compare every later arm against the first
    return [(i, 0) for i in range(1, len(runs))]


def cmd_compare(run_dirs: list[str], out: str | None = None) -> int:
    if len(run_dirs) < 2:
        print("compare needs at least two run directories", file=sys.stderr)
        return EXIT_CONFIG
    try:
        runs = [_load_run(Path(p)) for p in run_dirs]
        steps = {r["header"]["n_steps"] for r in runs}
        worlds = {r["header"]["world_sha256"] for r in runs}
        if len(steps) != 1:
            raise RunMismatch(f"runs disagree on n_steps: {sorted(steps)}")
        if len(worlds) != 1:
            raise RunMismatch("runs were generated on different worlds")
    except (RunMismatch, ConfigError, OSError, KeyError, ValueError) as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    labels = _labels(runs)
    out_dir = Path(out) if out else _out_root() / "compare"
    out_dir.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "t"] + [f"{stat}[{lab}]" for stat in STAT_NAMES for lab in labels])
    first = runs[0]["stats"]
    for j in range(first.steps.size):
        row = [int(first.steps[j]), repr(float(first.t[j]))]
        for stat in STAT_NAMES:
            for r in runs:
                v = float(getattr(r["stats"], stat)[j])
                row.append(repr(v) if np.isfinite(v) else "")
        w.writerow(row)
    (out_dir / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")

    pairings = []
    for g, u in _pairings(runs, labels):
        tg, tu = runs[g]["terminals"], runs[u]["terminals"]
        if len(tg) != len(tu) or runs[g]["header"]["chain_seeds"] != runs[u]["header"]["chain_seeds"]:
            print(f"cannot pair {labels[g]} with {labels[u]}: chain seeds differ", file=sys.stderr)
            return EXIT_CONFIG
        delta, win = improvement_metric(tg, tu)
        pairings.append({"guided": labels[g], "unguided": labels[u], "mean_delta": delta, "win_rate": win, "n_pairs": len(tg)})
    summary = {
        "arms": [
            {
                "label": lab,
                "sampler": r["header"]["sampler"],
                "run_dir": str(r["path"]),
                "n_chains": len(r["terminals"]),
                "terminal_mean": r["stats"].terminal_mean,
                "terminal_median": r["stats"].terminal_median,
                "final_quarter_score_variance": _finite_or_none(r["stats"].final_quarter_variance()),
            }
            for lab, r in zip(labels, runs)
        ],
        "pairings": pairings,
    }
    (out_dir / "summary.json").write_text(_dump(summary), encoding="utf-8")
    return EXIT_OK


def _finite_or_none(v: float):
    return float(v) if np.isfinite(v) else None


# ---------------------------------------------------------------------------
# verify


def cmd_verify(inject_fault: str | None = None) -> int:
    from .verify import format_table, run_all

    if inject_fault is not None:
        if inject_fault not in _faults.KNOWN_FAULTS:
            print(f"unknown fault {inject_fault!r}", file=sys.stderr)
            return EXIT_CONFIG
        _faults.active.add(inject_fault)
    try:
        results = run_all()
    finally:
        _faults.active.discard(inject_fault)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guided-bfn", description="Guided BFN sampling experiments on a toy pocket world")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="sample chains from a config and write artifacts")
    run.add_argument("--config", required=True, help="TOML file, or a shipped config name (default, unguided, targetopt_x0, targetopt_xt)")
    run.add_argument("--out", help="output directory (overrides the config and $GUIDED_BFN_OUT)")
    run.add_argument("--jobs", type=int, default=1, help="parallel chain workers")
    run.add_argument("--seed-override", type=int, help="replace base_seed")

    cmp_ = sub.add_parser("compare", help="compare two or more run directories")
    cmp_.add_argument("runs", nargs="+", help="run directories")
    cmp_.add_argument("--out", help="directory for comparison.csv and summary.json")

    ver = sub.add_parser("verify", help="run the built-in oracle suite")
    ver.add_argument("--inject-fault", help=argparse.SUPPRESS)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        if args.jobs < 1:
            print("config error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        return cmd_run(args.config, args.out, args.jobs, args.seed_override)
    if args.command == "compare":
        return cmd_compare(args.runs, args.out)
    return cmd_verify(args.inject_fault)


if __name__ == "__main__":
    sys.exit(main())
