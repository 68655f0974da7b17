"""Pipeline entry point: ingest -> graph -> fit -> train -> eval -> report.

Every stage writes its outputs plus a ``manifest.json`` holding the resolved
config section and sha256 hashes of inputs and outputs. Downstream stages
refuse to run when an upstream file no longer matches its recorded hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import demand, eval as evalmod, graph as graphmod, ingest
from .config import ConfigError, RunConfig, StaleUpstreamError, check_stage, write_manifest
from .env import EnvError, make_envs
from .marl import ARCHS, TrainingDiverged, load_actor_critic, train
from .nn.checkpoint import CheckpointError

logger = logging.getLogger("retail_marl")

STAGES = ("ingest", "graph", "fit", "train", "eval", "report")


class StageError(RuntimeError):
    pass


def _dir(cfg: RunConfig, *parts: str) -> Path:
    d = cfg.work_dir.joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _lam_dir(lam: float) -> str:
    return f"lambda_{float(lam)!r}"


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg: RunConfig, stage: str, *upstream: str) -> None:
    for name in upstream:
        check_stage(cfg, cfg.work_dir / name, stage)


# -- stages ------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> None:
    raw = cfg.data["paths"]["raw_data"]
    if not raw:
        raise ConfigError("paths.raw_data is not set")
    raw = Path(raw)
    if not raw.is_file():
        raise FileNotFoundError(f"raw data file not found: {raw}")
    p = cfg.data["ingest"]
    window = cfg.window()
    rows, rejects = ingest.load_transactions(raw)
    cleaned = ingest.clean(rows)
    catalog, panel = ingest.trim(cleaned, window, int(p["top_n"]), float(p["cost_ratio"]), cfg.split())
    selected = ingest.select(cleaned, catalog)
    out = _dir(cfg, "ingest")
    files = [out / f for f in ("catalog.csv", "panel.csv", "transactions.csv", "rejects.csv", "summary.json")]
    ingest.write_catalog(catalog, files[0])
    ingest.write_panel(panel, files[1])
    ingest.write_transactions(selected, files[2])
    ingest.write_rejects(rejects, files[3])
    reasons: dict[str, int] = {}
    for r in rejects:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    summary = {
        "raw_rows": len(rows) + len(rejects),
        "rejected": reasons,
        "clean_rows": len(cleaned),
        "transactions": len(selected),
        "invoices": len({r.invoice_id for r in selected}),
        "customers": len({r.customer_id for r in selected}),
        "skus": len(catalog.skus),
        "days": panel.n_days,
    }
    _write_json(summary, files[4])
    write_manifest(out, "ingest", cfg, [raw], files)
    logger.info("ingest: %s", summary)


def cmd_graph(cfg: RunConfig) -> None:
    _require(cfg, "graph", "ingest")
    src = cfg.work_dir / "ingest"
    catalog = ingest.read_catalog(src / "catalog.csv")
    rows, _ = ingest.load_transactions(src / "transactions.csv")
    p = cfg.data["graph"]
    weights = graphmod.cooccurrence_counts(rows, catalog)
    if p["weight"] == "lift":
        counts, n_baskets = graphmod.basket_counts(rows, catalog)
        weights = graphmod.lift(weights, counts, n_baskets)
    elif p["weight"] != "count":
        raise ConfigError(f"graph.weight must be 'count' or 'lift', got {p['weight']!r}")
    g = graphmod.build_graph(weights, catalog.skus, tau=float(p["tau"]), k=int(p["k"]))
    comps = graphmod.weak_components(g)
    isolated = [catalog.skus[i] for i in range(g.n) if g.out_degree()[i] == 0]
    out = _dir(cfg, "graph")
    files = [out / "edges.csv", out / "graph.json", out / "summary.json"]
    graphmod.write_graph(g, files[0], files[1])
    summary = {"edges": g.num_edges, "nodes": g.n, "components": len(comps),
               "largest_component": len(comps[0]) if comps else 0, "isolated": isolated}
    _write_json(summary, files[2])
    write_manifest(out, "graph", cfg, [src / "catalog.csv", src / "transactions.csv"], files)
    logger.info("graph: %s", summary)


def _load_market(cfg: RunConfig):
    catalog = ingest.read_catalog(cfg.work_dir / "ingest" / "catalog.csv")
    panel = ingest.read_panel(cfg.work_dir / "ingest" / "panel.csv", catalog.skus)
    g = graphmod.read_graph(cfg.work_dir / "graph" / "edges.csv", cfg.work_dir / "graph" / "graph.json")
    return catalog, panel, g


def cmd_fit(cfg: RunConfig) -> None:
    _require(cfg, "fit", "ingest", "graph")
    catalog, panel, g = _load_market(cfg)
    oracle, diag = demand.fit(panel, g, catalog, cfg.split(), float(cfg.data["demand"]["ridge_penalty"]))
    out = _dir(cfg, "fit")
    files = [out / "oracle.json", out / "diagnostics.csv"]
    demand.save_oracle(oracle, files[0])
    demand.write_diagnostics(diag, files[1])
    inputs = [cfg.work_dir / "ingest" / "catalog.csv", cfg.work_dir / "ingest" / "panel.csv",
              cfg.work_dir / "graph" / "edges.csv", cfg.work_dir / "graph" / "graph.json"]
    write_manifest(out, "fit", cfg, inputs, files)
    logger.info("fit: held-out %s", {k: diag.aggregate[k] for k in ("r2_log1p", "rmse", "mape")})


def _envs(cfg: RunConfig, lam: float | None = None):
    catalog, panel, g = _load_market(cfg)
    oracle = demand.load_oracle(cfg.work_dir / "fit" / "oracle.json")
    e = cfg.data["env"]
    return make_envs(catalog, panel, g, oracle, cfg.split(), e["multipliers"], int(e["horizon"]),
                     e["lambda_stab"] if lam is None else lam, float(e["gamma"]), int(e["stride"]),
                     int(e["val_days"]))


def _market_inputs(cfg: RunConfig) -> list[Path]:
    w = cfg.work_dir
    return [w / "ingest" / "catalog.csv", w / "ingest" / "panel.csv", w / "graph" / "edges.csv",
            w / "graph" / "graph.json", w / "fit" / "oracle.json"]


def _lambdas(cfg: RunConfig) -> list[float]:
    lams = [float(cfg.data["env"]["lambda_stab"])]
    for lam in cfg.data["eval"]["lambda_grid"]:
        if float(lam) not in lams:
            lams.append(float(lam))
    return lams


def cmd_train(cfg: RunConfig) -> None:
    _require(cfg, "train", "ingest", "graph", "fit")
    seeds = [int(s) for s in cfg.data["train"]["seeds"]]
    archs = cfg.data["train"]["archs"]
    for arch in archs:
        if arch not in ARCHS:
            raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    n_ok = 0
    for arch in archs:
        for lam in _lambdas(cfg):
            envs = _envs(cfg, lam)
            stage = _dir(cfg, "train", arch, _lam_dir(lam))
            outputs, failures = [], {}
            for seed in seeds:
                run = _dir(cfg, "train", arch, _lam_dir(lam), f"seed_{seed}")
                tcfg = cfg.train_config(seed)
                try:
                    res = train(tcfg, envs.train, envs.val, arch, curve_path=run / "curve.csv")
                except TrainingDiverged as exc:
                    logger.error("%s seed %d lambda %s diverged: %s", arch, seed, lam, exc)
                    failures[str(seed)] = str(exc)
                    continue
                except Exception as exc:  # noqa: BLE001 - one seed must not sink the sweep
                    logger.exception("%s seed %d lambda %s failed", arch, seed, lam)
                    failures[str(seed)] = repr(exc)
                    continue
                model = res.best_model()
                extra = {"seed": seed, "lambda_stab": lam, "best_update": res.best_update,
                         "best_val_profit": res.best_val_profit, "reward_scale": res.reward_scale,
                         "train_config": tcfg.to_dict()}
                model.save(run / "checkpoint.json", extra)
                outputs += [run / "checkpoint.json", run / "curve.csv"]
                n_ok += 1
                logger.info("%s seed %d lambda %s: best val profit %.2f at update %d", arch, seed, lam,
                            res.best_val_profit, res.best_update)
            write_manifest(stage, "train", cfg, _market_inputs(cfg), outputs,
                           {"arch": arch, "lambda_stab": lam, "failures": failures})
    if n_ok == 0:
        raise StageError("every training run failed; see the train manifests")


def _load_policies(cfg: RunConfig, arch: str, lam: float, graph) -> dict[int, object]:
    stage = cfg.work_dir / "train" / arch / _lam_dir(lam)
    manifest = check_stage(cfg, stage, "eval", name=f"train ({arch}, lambda={lam})")
    policies = {}
    for seed in cfg.data["train"]["seeds"]:
        path = stage / f"seed_{seed}" / "checkpoint.json"
        if str(path.relative_to(cfg.work_dir)) not in manifest["outputs"]:
            logger.warning("no checkpoint for %s seed %s lambda %s; skipped", arch, seed, lam)
            continue
        policies[int(seed)] = load_actor_critic(path, graph)[0]
    if not policies:
        raise StageError(f"no trained checkpoints for {arch} at lambda={lam}")
    return policies


def cmd_eval(cfg: RunConfig) -> None:
    _require(cfg, "eval", "ingest", "graph", "fit")
    ev = cfg.data["eval"]
    episodes, ns = int(ev["episodes"]), ev["crn_namespace"]
    archs = cfg.data["train"]["archs"]
    lam0 = float(cfg.data["env"]["lambda_stab"])
    envs = _envs(cfg)
    out = _dir(cfg, "eval")
    files: list[Path] = []
    inputs = _market_inputs(cfg)
    results = {}
    for arch in archs:
        policies = _load_policies(cfg, arch, lam0, envs.test.graph)
        res = [r for s, pol in sorted(policies.items())
               for r in evalmod.evaluate(pol, envs.test, episodes, s, ns, arch)]
        results[arch] = res
        path = out / f"episodes_{arch}.csv"
        evalmod.write_episodes(res, path)
        files.append(path)
        inputs += [cfg.work_dir / "train" / arch / _lam_dir(lam0) / f"seed_{s}" / "checkpoint.json" for s in policies]
    if len(archs) >= 2:
        a, b = archs[0], archs[1]
        report = _paired(results[a], results[b], int(ev["n_boot"]))
        files += [out / "report.csv", out / "report.json"]
        evalmod.write_report(report, files[-2], files[-1])
        logger.info("eval: %s vs %s wins %d/%d, mean diff %.3f [%.3f, %.3f]", b, a, report.wins,
                    len(report.seeds), report.mean_diff, report.ci_low, report.ci_high)
    grid = [float(x) for x in ev["lambda_grid"]]
    if grid:
        for arch in archs:
            rows = evalmod.lambda_sweep(grid, lambda lam: _load_policies(cfg, arch, lam, envs.test.graph),
                                        lambda lam: _envs(cfg, lam).test, episodes,
                                        [int(s) for s in cfg.data["train"]["seeds"]], ns)
            path = out / f"frontier_{arch}.csv"
            evalmod.write_frontier(rows, path)
            files.append(path)
    write_manifest(out, "eval", cfg, inputs, files)


def _paired(res_a, res_b, n_boot: int) -> evalmod.EvalReport:
    common = {(r.seed, r.episode) for r in res_a} & {(r.seed, r.episode) for r in res_b}
    dropped = len(res_a) + len(res_b) - 2 * len(common)
    if dropped:
        logger.warning("pairing drops %d episode(s) from seeds missing in one architecture", dropped)
    return evalmod.paired_stats([r for r in res_a if (r.seed, r.episode) in common],
                                [r for r in res_b if (r.seed, r.episode) in common], n_boot)


def cmd_report(cfg: RunConfig) -> None:
    src = cfg.work_dir / "eval"
    manifest = check_stage(cfg, src, "report")
    if "eval/report.json" not in manifest["outputs"]:
        raise StageError("eval produced no paired report; evaluate two architectures first")
    archs = cfg.data["train"]["archs"][:2]
    res = [evalmod.read_episodes(src / f"episodes_{a}.csv") for a in archs]
    report = _paired(res[0], res[1], int(cfg.data["eval"]["n_boot"]))
    out = _dir(cfg, "report")
    files = evalmod.write_figure_data(report, out)
    for arch in archs:
        frontier = src / f"frontier_{arch}.csv"
        if frontier.is_file():
            dst = out / f"fig7_lambda_frontier_{arch}.csv"
            shutil.copyfile(frontier, dst)
            files.append(dst)
    inputs = [src / f"episodes_{a}.csv" for a in archs]
    write_manifest(out, "report", cfg, inputs, files)


COMMANDS = {"ingest": cmd_ingest, "graph": cmd_graph, "fit": cmd_fit, "train": cmd_train, "eval": cmd_eval,
            "report": cmd_report}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retail-marl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "all"):
        p = sub.add_parser(name, help="run every stage in order" if name == "all" else f"run the {name} stage")
        p.add_argument("--config", required=True, type=Path, help="JSON run config")
        p.add_argument("--seed-list", type=_ints, help="comma-separated training seeds, e.g. 0,1,2")
        p.add_argument("--arch", choices=ARCHS, action="append",
                       help="architecture to train/evaluate (repeatable; default: both)")
        p.add_argument("--lambda-grid", type=_floats, help="comma-separated stability penalty weights")
        p.add_argument("--out-dir", type=Path, help="work directory (overrides config and RETAIL_MARL_WORKDIR)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config).override(seeds=args.seed_list, archs=args.arch,
                                                  lambda_grid=args.lambda_grid, out_dir=args.out_dir)
        stages = STAGES if args.command == "all" else (args.command,)
        for stage in stages:
            COMMANDS[stage](cfg)
    except (ConfigError, StaleUpstreamError, StageError, FileNotFoundError, ingest.IngestError,
            demand.DemandError, EnvError, CheckpointError, evalmod.EvalError, ValueError) as exc:
        print(f"retail-marl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
