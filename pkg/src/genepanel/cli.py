"""Command-line entry point: ``genepanel {synth,prefilter,select,evaluate,compare}``.

Every option can also come from a flat ``key=value`` file passed with
``--config``; explicit flags win over the file, the file wins over defaults.
Exit codes: 0 success, 2 usage, 3 data error, 4 budget abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .compare import compare_methods, format_table, panel_metrics, write_compare_csv
from .errors import DegenerateInput, DimensionMismatch, GenePanelError, ParseError
from .expr import ExpressionMatrix, GeneMask, load_csv, load_matrix_market, normalize, read_panel, write_csv, write_panel
from .graph import ClusterAssignment, ClusterParams
from .metrics import ari, nmi, silhouette
from .prefilter import METHODS, PrefilterConfig, prefilter_pipeline
from .selection import VARIANTS, SelectConfig, ablation_run
from .synth import SynthConfig, generate_planted

log = logging.getLogger("genepanel")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 2, 3, 4
TRACE_HEADER = ("iter", "n_selected", "r_s", "r_c", "r_total", "nmi")


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "null"):
        return None
    return float(text)


def _optional_str(text):
    if text is None or str(text).strip().lower() in ("", "none", "null"):
        return None
    return str(text)


def _methods(text) -> str:
    names = [t.strip() for t in str(text).split(",") if t.strip()]
    bad = [n for n in names if n not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    if not names:
        raise ValueError("method list is empty")
    return ",".join(names)


def _variant(text) -> str:
    if text not in VARIANTS:
        raise ValueError(f"unknown variant {text!r}; choose from {', '.join(VARIANTS)}")
    return text


def _genes_in(text):
    if text is None or text in ("", "none", "auto"):
        return None
    if text not in ("columns", "rows"):
        raise ValueError("genes-in must be 'columns' or 'rows'")
    return text


# key -> (parser, default, help). Keys double as config-file keys and, with
# underscores turned into dashes, as flag names.
OPTIONS = {
    "matrix": (_optional_str, None, "expression matrix (.csv or .mtx)"),
    "genes_in": (_genes_in, None, "'columns' (cells x genes) or 'rows' (genes x cells); default columns for CSV, rows for .mtx"),
    "gene_ids": (_optional_str, None, "gene id sidecar for .mtx input"),
    "cell_ids": (_optional_str, None, "cell id sidecar for .mtx input"),
    "labels": (_optional_str, None, "cell,label CSV with reference labels"),
    "panel": (_optional_str, None, "gene panel file, one gene id per line"),
    "predicted": (_optional_str, None, "cell,label CSV used as the clustering instead of clustering the panel"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "master seed"),
    "threads": (int, 1, "worker threads; results do not depend on it"),
    "normalize": (_bool, True, "library-size normalize and log1p the input"),
    "target_sum": (float, 1e4, "per-cell total after normalization"),
    "alpha": (float, 0.5, "weight of the cluster-agreement reward"),
    "lambda": (float, 0.7, "compactness penalty"),
    "gamma": (float, 0.9, "discount factor"),
    "epochs": (int, 400, "exploration/optimization iterations"),
    "minibatch": (int, 32, "replay minibatch size"),
    "lr": (float, 0.005, "Adam learning rate"),
    "warmup": (int, 64, "stored experiences per agent before optimizing"),
    "memory": (int, 400, "replay capacity per agent"),
    "hidden": (int, 8, "actor/critic hidden width"),
    "ae_epochs": (int, 10, "autoencoder epochs per state encoding"),
    "inject": (_bool, True, "seed replay memories with the scorers' panels"),
    "per_step_reference": (_bool, False, "recluster the reference after every step"),
    "warm_start_ae": (_bool, False, "keep one state autoencoder across steps"),
    "k_neighbors": (int, 15, "neighbors in the kNN graph"),
    "resolution": (float, 1.0, "Louvain resolution"),
    "metric": (str, "euclidean", "kNN distance: euclidean or cosine"),
    "methods": (_methods, ",".join(METHODS), "comma-separated gene scorers"),
    "min_genes": (int, 30, "floor on the pre-filtered set size"),
    "variant": (_variant, "full", "ablation variant"),
    "max_genes_f": (int, 2000, "gene cap for variant -f"),
    "budget_seconds": (_optional_float, None, "wall-clock budget for the selection loop"),
    "cells": (int, 300, "synthetic cells"),
    "genes": (int, 200, "synthetic genes"),
    "informative": (int, 30, "planted informative genes"),
    "clusters": (int, 4, "planted clusters"),
    "effect_size": (float, 2.0, "cluster shift of informative genes"),
    "dropout": (float, 0.2, "dropout probability"),
    "noise": (float, 1.0, "log-scale noise"),
    "imbalance": (float, 1.0, "largest/smallest cluster size ratio"),
}

INPUT_KEYS = ("matrix", "genes_in", "gene_ids", "cell_ids", "normalize", "target_sum")
CLUSTER_KEYS = ("k_neighbors", "resolution", "metric")
SELECT_KEYS = ("alpha", "lambda", "gamma", "epochs", "minibatch", "lr", "warmup", "memory", "hidden",
               "ae_epochs", "inject", "per_step_reference", "warm_start_ae", "budget_seconds")
COMMAND_KEYS = {
    "synth": ("out", "seed", "cells", "genes", "informative", "clusters", "effect_size", "dropout", "noise",
              "imbalance"),
    "prefilter": INPUT_KEYS + CLUSTER_KEYS + ("out", "seed", "threads", "methods", "min_genes"),
    "select": INPUT_KEYS + CLUSTER_KEYS + SELECT_KEYS + ("labels", "panel", "out", "seed", "threads", "methods",
                                                         "min_genes", "variant", "max_genes_f"),
    "evaluate": INPUT_KEYS + CLUSTER_KEYS + ("labels", "panel", "predicted", "out"),
    "compare": INPUT_KEYS + CLUSTER_KEYS + SELECT_KEYS + ("labels", "out", "seed", "threads", "methods",
                                                          "min_genes"),
}


def read_config_file(path) -> dict:
    """Parse a flat ``key=value`` file. Blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}, line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}, line {lineno}: unknown config key {key!r}")
        try:
            values[key] = OPTIONS[key][0](value)
        except ValueError as exc:
            raise UsageError(f"{path}, line {lineno}: {key}: {exc}") from None
    return values


def effective_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    keys = COMMAND_KEYS[command]
    cfg = {k: OPTIONS[k][1] for k in keys}
    if getattr(args, "config", None):
        from_file = read_config_file(args.config)
        cfg.update({k: v for k, v in from_file.items() if k in cfg})
    for k in keys:
        if hasattr(args, k):
            cfg[k] = getattr(args, k)
    return cfg


def _argtype(key):
    parse = OPTIONS[key][0]

    def convert(text):
        try:
            return parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    convert.__name__ = key
    return convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genepanel", description="Reinforced gene panel selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "write a planted synthetic dataset",
        "prefilter": "score genes and keep the meta-voted 2-sigma set",
        "select": "pre-filter then run the agent selection loop",
        "evaluate": "cluster on a panel and score against labels",
        "compare": "size-matched comparison of selectors",
    }
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command, help=helps[command], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("-v", "--verbose", action="count", default=0)
        for key in keys:
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=_argtype(key), help=OPTIONS[key][2],
                           metavar=key.upper())
    return parser


# ---------------------------------------------------------------------------
# io helpers


def load_input(cfg: dict) -> ExpressionMatrix:
    if not cfg.get("matrix"):
        raise UsageError("--matrix is required")
    path = Path(cfg["matrix"])
    if path.suffix == ".mtx":
        if not cfg.get("gene_ids") or not cfg.get("cell_ids"):
            raise UsageError("MatrixMarket input needs --gene-ids and --cell-ids")
        m = load_matrix_market(path, cfg["gene_ids"], cfg["cell_ids"], genes_in=cfg["genes_in"] or "rows")
    else:
        m = load_csv(path, genes_in=cfg["genes_in"] or "columns")
    return normalize(m, cfg["target_sum"]) if cfg["normalize"] else m


def read_labels(path, cell_ids) -> ClusterAssignment:
    """Read a ``cell,label`` CSV (header required) aligned to ``cell_ids``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty labels file", path)
    found = {}
    for lineno, record in enumerate(rows[1:], start=2):
        if not record or not "".join(record).strip():
            continue
        if len(record) != 2:
            raise ParseError("expected two columns: cell,label", path, lineno)
        cell, label = record[0].strip(), record[1].strip()
        if cell in found:
            raise ParseError(f"duplicate cell id {cell!r}", path, lineno)
        found[cell] = label
    if len(found) != len(cell_ids):
        raise DimensionMismatch(f"{path}: {len(found)} labels for {len(cell_ids)} cells")
    missing = [c for c in cell_ids if c not in found]
    if missing:
        raise DimensionMismatch(f"{path}: no label for cell {missing[0]!r}")
    return ClusterAssignment.from_raw([found[c] for c in cell_ids])


def write_labels(labels, cell_ids, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell", "label"])
        for cell, label in zip(cell_ids, labels):
            writer.writerow([cell, int(label)])


def write_trace(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow([row.iteration, row.n_selected, repr(row.r_s), repr(row.r_c), repr(row.r_total),
                             repr(row.nmi)])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _cluster_params(cfg) -> ClusterParams:
    return ClusterParams(k=cfg["k_neighbors"], metric=cfg["metric"], resolution=cfg["resolution"], seed=0)


def _prefilter_config(cfg) -> PrefilterConfig:
    return PrefilterConfig(methods=tuple(cfg["methods"].split(",")), min_genes=cfg["min_genes"],
                           cluster=_cluster_params(cfg), seed=cfg["seed"], threads=cfg["threads"])


def _select_config(cfg) -> SelectConfig:
    sc = SelectConfig(
        alpha=cfg["alpha"], lam=cfg["lambda"], gamma=cfg["gamma"], epochs=cfg["epochs"],
        minibatch=cfg["minibatch"], lr=cfg["lr"], warmup_experiences=cfg["warmup"], memory=cfg["memory"],
        hidden=cfg["hidden"], ae_epochs=cfg["ae_epochs"], master_seed=cfg["seed"], inject=cfg["inject"],
        inject_methods=tuple(cfg["methods"].split(",")), cluster=_cluster_params(cfg),
        warm_start_ae=cfg["warm_start_ae"], per_step_reference=cfg["per_step_reference"],
        threads=cfg["threads"], budget_seconds=cfg["budget_seconds"],
    )
    try:
        sc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return sc


def _versions() -> dict:
    return {"genepanel": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _prefilter_summary(result, n_genes) -> dict:
    return {
        "n_genes": n_genes,
        "n_selected": result.mask.n_selected,
        "k": result.k,
        "mu": float(result.mu),
        "sigma": float(result.sigma),
        "methods": [
            {"method": r.method_id, "p": float(r.p), "w": float(w)}
            for r, w in zip(result.reliabilities, result.weights)
        ],
    }


def _metrics(m, mask, labels, params) -> dict:
    score_nmi, score_ari, sil, predicted = panel_metrics(m, mask, labels, params)
    return {"nmi": score_nmi, "ari": score_ari, "silhouette": sil, "n_clusters": int(predicted.n_clusters)}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict) -> int:
    sc = SynthConfig(n_cells=cfg["cells"], n_genes=cfg["genes"], n_informative=cfg["informative"],
                     n_clusters=cfg["clusters"], effect_size=cfg["effect_size"], dropout_rate=cfg["dropout"],
                     noise_scale=cfg["noise"], seed=cfg["seed"], imbalance=cfg["imbalance"])
    try:
        sc.validate()
    except ValueError as exc:
        raise UsageError(f"invalid synth configuration: {exc}") from None
    ds = generate_planted(sc)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds.matrix, out / "matrix.csv")
    write_labels(ds.true_labels.labels, ds.matrix.cell_ids, out / "labels.csv")
    write_panel(ds.informative, ds.matrix.gene_ids, out / "informative.txt")
    print(f"wrote {out / 'matrix.csv'}, {out / 'labels.csv'}, {out / 'informative.txt'}")
    return EXIT_OK


def cmd_prefilter(cfg: dict) -> int:
    m = load_input(cfg)
    t0 = time.perf_counter()
    result = prefilter_pipeline(m, _prefilter_config(cfg))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_panel(result.mask, m.gene_ids, out / "prefilter_panel.txt")
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "prefilter",
        "config": cfg,
        "prefilter": _prefilter_summary(result, m.n_genes),
        "panel": [m.gene_ids[j] for j in result.mask.indices],
        "files": {"panel": "prefilter_panel.txt"},
        "versions": _versions(),
        "timing": {"prefilter_seconds": time.perf_counter() - t0},
    }
    write_json(report, out / "prefilter.json")
    print(f"pre-filtered {m.n_genes} genes to {result.mask.n_selected}")
    return EXIT_OK


def cmd_select(cfg: dict) -> int:
    t_start = time.perf_counter()
    m = load_input(cfg)
    labels = read_labels(cfg["labels"], m.cell_ids) if cfg.get("labels") else None
    sc = _select_config(cfg)
    variant = cfg["variant"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    prefilter, summary = None, None
    if variant not in ("-f", "-a"):
        if cfg.get("panel"):
            prefilter = read_panel(cfg["panel"], m.gene_ids)
            if prefilter.n_selected == 0:
                raise DegenerateInput(f"{cfg['panel']}: panel is empty")
            summary = {"n_genes": m.n_genes, "n_selected": prefilter.n_selected, "source": cfg["panel"]}
        else:
            prefilter = prefilter_pipeline(m, _prefilter_config(cfg))
            summary = _prefilter_summary(prefilter, m.n_genes)
    t_pre = time.perf_counter() - t0

    result = ablation_run(m, variant, sc, prefilter=prefilter, max_genes_f=cfg["max_genes_f"])
    write_trace(result.trace, out / "trace.csv")
    write_panel(result.best_mask, m.gene_ids, out / "panel.txt")
    write_panel(result.greedy_mask, m.gene_ids, out / "greedy_panel.txt")
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "select",
        "config": cfg,
        "seed": cfg["seed"],
        "prefilter": summary,
        "selection": {
            "variant": result.variant,
            "best_panel": [m.gene_ids[j] for j in result.best_mask.indices],
            "best_indices": [int(j) for j in result.best_mask.indices],
            "best_iteration": result.best_iteration,
            "best_reward": {"r_s": result.best.r_s, "r_c": result.best.r_c, "r_total": result.best.r_total},
            "greedy_panel": [m.gene_ids[j] for j in result.greedy_mask.indices],
            "n_iterations": len(result.trace),
            "aborted": result.aborted,
        },
        "metrics": _metrics(m, result.best_mask, labels, sc.cluster) if labels is not None else None,
        "files": {"trace": "trace.csv", "panel": "panel.txt", "greedy_panel": "greedy_panel.txt"},
        "versions": _versions(),
        "timing": {
            "prefilter_seconds": t_pre,
            "selection_seconds": result.runtime_seconds,
            "total_seconds": time.perf_counter() - t_start,
        },
    }
    write_json(report, out / "report.json")
    print(f"best panel: {result.best_mask.n_selected} genes, r_total={result.best.r_total:.4f}"
          f" (iteration {result.best_iteration})")
    if result.aborted:
        print(f"aborted: budget of {cfg['budget_seconds']}s exhausted after {len(result.trace)} iterations",
              file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    m = load_input(cfg)
    if not cfg.get("panel") or not cfg.get("labels"):
        raise UsageError("evaluate needs --panel and --labels")
    mask = read_panel(cfg["panel"], m.gene_ids)
    labels = read_labels(cfg["labels"], m.cell_ids)
    params = _cluster_params(cfg)
    if cfg.get("predicted"):
        predicted = read_labels(cfg["predicted"], m.cell_ids)
        try:
            sil = silhouette(m.values[:, mask.indices].toarray(), predicted) if mask.n_selected else None
        except DegenerateInput as exc:
            log.warning("silhouette reported as null: %s", exc)
            sil = None
        metrics = {"nmi": nmi(predicted, labels), "ari": ari(predicted, labels), "silhouette": sil,
                   "n_clusters": int(predicted.n_clusters)}
    else:
        metrics = _metrics(m, mask, labels, params)
    metrics["panel_size"] = mask.n_selected
    text = json.dumps(metrics, indent=2, allow_nan=False)
    print(text)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluate.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    m = load_input(cfg)
    labels = read_labels(cfg["labels"], m.cell_ids) if cfg.get("labels") else None
    sc = _select_config(cfg)
    prefilter = prefilter_pipeline(m, _prefilter_config(cfg))
    rows, extras = compare_methods(m, prefilter, sc, labels=labels)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_compare_csv(rows, out / "compare.csv")
    print(format_table(rows))
    if extras["rl"].aborted:
        return EXIT_BUDGET
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prefilter": cmd_prefilter,
    "select": cmd_select,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def _join_variant(argv):
    """Let ``--variant -r`` through; argparse would otherwise read ``-r`` as a flag."""
    out = []
    it = iter(argv)
    for token in it:
        if token == "--variant":
            value = next(it, None)
            out.append(token if value is None else f"--variant={value}")
        else:
            out.append(token)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_variant(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = effective_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"genepanel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GenePanelError, OSError, ValueError) as exc:
        print(f"genepanel {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
