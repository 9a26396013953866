"""Command-line surface: train, scale-bench, analyze, gen-graph.

Configuration comes from `key = value` files plus flag overrides; every run
echoes its resolved config into the output directory so it can be rerun
verbatim. Tables are CSV with a header row, structured reports are JSON,
and each report also renders a matplotlib figure next to its data file.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, plots
from .errors import ConfigError, InvalidParameterError
from .graph import batch, random_regular, save_graph, token_dataset
from .metrics import fit_loglog_slope, measure_scaling, utilization_report
from .model import (
    ModelConfig,
    TrainConfig,
    dense_peak_estimate,
    evaluate_accuracy,
    forward,
    load_checkpoint,
    save_checkpoint,
    scaling_model_factory,
    train,
)

DEFAULT_SIZES = "1000,2000,4000,8000,16000,32000,64000"

_COMMON = {
    "seed": (int, 0),
    "out": (str, None),
}

_MODEL_KEYS = {
    "layers": (int, 2),
    "hidden_dim": (int, 64),
    "heads": (int, 4),
    "k": (int, 3),
    "hubs_ratio": (float, 1.0),
    "clustering": (str, "bfs_balanced"),
    "assignment": (str, "feature_similarity"),
    "reassignment": (str, "attention"),
    "hub_init": (str, "cluster_mean"),
    "spoke_encoder": (bool, True),
    "fc_mode": (bool, False),
    "layernorm": (bool, True),
}

_SCHEMAS = {
    "train": {
        **_COMMON,
        **_MODEL_KEYS,
        "task": (str, "token"),
        "model": (str, "rehub"),
        "path_length": (int, 32),
        "train_graphs": (int, 512),
        "test_graphs": (int, 256),
        "batch_size": (int, 32),
        "steps": (int, 1500),
        "lr": (float, 3e-4),
        "optimizer": (str, "adam"),
    },
    "scale-bench": {
        **_COMMON,
        "sizes": (str, DEFAULT_SIZES),
        "degree": (int, 3),
        "feature_dim": (int, 4),
        "layers": (int, 3),
        "hidden_dim": (int, 52),
        "heads": (int, 4),
        "k": (int, 3),
        "hubs_ratio": (float, 1.0),
        "dense_budget": (float, 1.5e8),
    },
    "analyze": {
        **_COMMON,
        "checkpoint": (str, None),
        "graphs": (int, 256),
        "path_length": (int, 32),
        "batch_size": (int, 32),
    },
    "gen-graph": {
        **_COMMON,
        "n": (int, 100),
        "d": (int, 3),
        "feature_dim": (int, 4),
        "edge_dim": (int, 4),
    },
}


def _parse_value(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from None


def _read_config_file(path: str, schema: dict) -> dict:
    values = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _parse_value(key, raw, schema[key][0])
    return values


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    schema = _SCHEMAS[command]
    cfg = {k: default for k, (_, default) in schema.items()}
    if args.config:
        cfg.update(_read_config_file(args.config, schema))
    for key in schema:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    if cfg["out"] is None:
        cfg["out"] = f"runs/{command}"
    return cfg


def _echo_config(cfg: dict, out: Path) -> None:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    (out / "config_resolved.txt").write_text("\n".join(lines) + "\n")


def _model_config(cfg: dict, arch: str) -> ModelConfig:
    return ModelConfig(
        hubs_ratio=cfg["hubs_ratio"], k=cfg["k"], layers=cfg["layers"],
        hidden_dim=cfg["hidden_dim"], heads=cfg["heads"],
        spoke_encoder=cfg["spoke_encoder"], hub_init=cfg["hub_init"],
        clustering=cfg["clustering"], assignment=cfg["assignment"],
        reassignment=cfg["reassignment"], fc_mode=cfg["fc_mode"],
        head="node_class", out_dim=2, layernorm=cfg["layernorm"], arch=arch,
    )


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _token_batches(n_graphs, length, batch_size, seed):
    graphs = token_dataset(n_graphs, length, seed)
    return [batch(graphs[i : i + batch_size])
            for i in range(0, len(graphs), batch_size)]


def cmd_train(cfg: dict) -> int:
    if cfg["task"] != "token":
        raise ConfigError(f"unknown task '{cfg['task']}'")
    if cfg["model"] not in ("rehub", "gcn_baseline"):
        raise ConfigError(f"unknown model '{cfg['model']}'")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)

    train_batches = _token_batches(cfg["train_graphs"], cfg["path_length"],
                                   cfg["batch_size"], cfg["seed"])
    test_batches = _token_batches(cfg["test_graphs"], cfg["path_length"],
                                  cfg["batch_size"], cfg["seed"] + cfg["train_graphs"])
    mcfg = _model_config(cfg, cfg["model"])
    tcfg = TrainConfig(lr=cfg["lr"], steps=cfg["steps"], seed=cfg["seed"],
                       optimizer=cfg["optimizer"])
    state, log = train(train_batches, mcfg, tcfg)
    accuracy, traces = evaluate_accuracy(test_batches, mcfg, state, with_trace=True)

    _write_csv(out / "loss.csv", ["step", "loss"],
               [(i + 1, f"{v:.10g}") for i, v in enumerate(log)])
    plots.loss_figure(log, out / "loss.png")
    save_checkpoint(state, mcfg, out / "checkpoint")

    per_layer = []
    if cfg["model"] == "rehub":
        per_graph = [u for t in traces for u in t.utilization]
        report = utilization_report(per_graph)
        per_layer = [
            {
                "layer": layer + 1,
                "mean_pct": float(np.mean(report.pct[layer])),
                "median_pct": float(np.median(report.pct[layer])),
                "histogram": report.histogram[layer].tolist(),
            }
            for layer in range(len(report.pct))
        ]
        plots.utilization_figure(report, out / "utilization.png")
    (out / "utilization.json").write_text(
        json.dumps({"per_layer": per_layer}, indent=2) + "\n")
    (out / "metrics.json").write_text(json.dumps({
        "model": cfg["model"],
        "accuracy": accuracy,
        "final_loss": log[-1] if log else None,
        "steps": cfg["steps"],
    }, indent=2, sort_keys=True) + "\n")
    print(f"test accuracy {accuracy:.4f} after {cfg['steps']} steps -> {out}")
    return 0


def cmd_scale_bench(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    sizes = [int(s) for s in str(cfg["sizes"]).split(",") if s.strip()]
    mcfg = ModelConfig(hubs_ratio=cfg["hubs_ratio"], k=cfg["k"],
                       layers=cfg["layers"], hidden_dim=cfg["hidden_dim"],
                       heads=cfg["heads"], head="node_class", out_dim=2)
    factory = scaling_model_factory(mcfg, seed=cfg["seed"])
    records = measure_scaling(factory, sizes, "rehub", cfg["seed"],
                              degree=cfg["degree"], feature_dim=cfg["feature_dim"])
    records += measure_scaling(factory, sizes, "dense_reference", cfg["seed"],
                               degree=cfg["degree"], feature_dim=cfg["feature_dim"],
                               element_budget=cfg["dense_budget"],
                               peak_estimate=dense_peak_estimate(mcfg))
    rows = [(r.n_nodes, r.peak_elems, r.op_count,
             None if r.wall_ms is None else f"{r.wall_ms:.3f}", r.mode)
            for r in records if not r.budget_exceeded]
    _write_csv(out / "scaling.csv",
               ["n_nodes", "peak_elems", "op_count", "wall_ms", "mode"], rows)
    slopes = {}
    for mode, key in (("rehub", "rehub_slope"), ("dense_reference", "dense_slope")):
        pts = [(r.n_nodes, r.peak_elems) for r in records
               if r.mode == mode and r.peak_elems is not None]
        slopes[key] = fit_loglog_slope(*zip(*pts)) if len(pts) >= 2 else None
    skipped = [r.n_nodes for r in records if r.budget_exceeded]
    if skipped:
        slopes["dense_budget_exceeded_sizes"] = skipped
    (out / "slopes.json").write_text(json.dumps(slopes, indent=2, sort_keys=True) + "\n")
    plots.scaling_figure(records, out / "scaling.png")
    shown = {k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in slopes.items()}
    print(f"slopes: {shown} -> {out}")
    return 0


def cmd_analyze(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("analyze requires a checkpoint prefix")
    prefix = cfg["checkpoint"]
    if not (Path(f"{prefix}.json").exists() and Path(f"{prefix}.bin").exists()):
        print(f"missing checkpoint at {prefix}", file=sys.stderr)
        return 3
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    mcfg, state = load_checkpoint(prefix)
    batches = _token_batches(cfg["graphs"], cfg["path_length"],
                             cfg["batch_size"], cfg["seed"])
    per_graph_util = []
    per_graph_assign = []
    for i, b in enumerate(batches):
        _, trace = forward(b, mcfg, state, seed=20_000 + i)
        per_graph_util.extend(trace.utilization)
        per_graph_assign.extend(trace.assignments)
    if not per_graph_util or not per_graph_util[0]:
        raise ConfigError("checkpoint has no hub trace (baseline model?)")

    report = utilization_report(per_graph_util)
    hist_rows = []
    for layer, hist in enumerate(report.histogram):
        for b10 in range(10):
            hist_rows.append((layer + 1, b10 * 10, (b10 + 1) * 10, f"{hist[b10]:.6g}"))
    _write_csv(out / "utilization_hist.csv",
               ["layer", "bin_lo", "bin_hi", "percent"], hist_rows)
    plots.utilization_figure(report, out / "utilization.png")

    bc_rows = []
    n_layers = len(per_graph_assign[0])
    per_layer_pcts = [[] for _ in range(n_layers)]
    for gid, layers in enumerate(per_graph_assign):
        for layer, assignment in enumerate(layers):
            p = metrics.spoke_load_distribution(assignment)
            q = np.full(assignment.n_hubs, 1.0 / assignment.n_hubs)
            pct = 100.0 * metrics.bhattacharyya(p, q)
            per_layer_pcts[layer].append(pct)
            bc_rows.append((gid, layer + 1, f"{pct:.6g}"))
    _write_csv(out / "bhattacharyya.csv", ["graph", "layer", "bc_pct"], bc_rows)
    plots.bhattacharyya_figure(per_layer_pcts, out / "bhattacharyya.png")
    medians = [float(np.median(p)) for p in report.pct]
    print(f"median utilization per layer: {[f'{m:.3f}' for m in medians]} -> {out}")
    return 0


def cmd_gen_graph(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    g = random_regular(cfg["n"], cfg["d"], cfg["seed"],
                       feature_dim=cfg["feature_dim"], edge_dim=cfg["edge_dim"])
    save_graph(g, out / "graph.json")
    print(f"wrote {out / 'graph.json'} ({cfg['n']} nodes, degree {cfg['d']})")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "scale-bench": cmd_scale_bench,
    "analyze": cmd_analyze,
    "gen-graph": cmd_gen_graph,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rehub",
        description="Hub-and-spoke graph attention: training, scaling "
                    "benchmarks, and utilization analytics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in _SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", type=str, default=None,
                       help="key = value config file")
        for key, (typ, _) in schema.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, type=str, default=None,
                               metavar="true|false",
                               dest=key)
            else:
                p.add_argument(flag, type=typ, default=None, dest=key)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        cfg = resolve_config(command, args)
        for key, (typ, _) in _SCHEMAS[command].items():
            if typ is bool and isinstance(cfg[key], str):
                cfg[key] = _parse_value(key, cfg[key], bool)
        return _COMMANDS[command](cfg)
    except (ConfigError, InvalidParameterError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
