"""Command line entry point: ``saug <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("saug")


class CommandError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(msg)
        self.stage = stage


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_graph(path, normalize: bool):
    from .graph import load_graph_dir
    return load_graph_dir(path, normalize=normalize)


def _load_emb(path):
    from .engine.pretrain import EmbeddingPair
    path = Path(path)
    if path.suffix == ".npz":
        d = np.load(path)
        return EmbeddingPair(d["z_link"], d["z_label"])
    return EmbeddingPair(np.load(path / "z_link.npy"), np.load(path / "z_label.npy"))


def _read_ids(path):
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


# -- commands ---------------------------------------------------------------

def cmd_pagerank(a):
    from .pagerank import pagerank
    g = _load_graph(a.graph, a.normalize)
    pr = pagerank(g, a.damping)
    if a.out:
        Path(a.out).write_text(json.dumps(pr.to_dict()) + "\n")
    v = pr.values
    _dump({"nodes": g.num_nodes, "iterations": pr.iterations_used, "residual": pr.residual,
           "mean": float(v.mean()), "max": float(v.max()), "min": float(v.min())})


def cmd_sample(a):
    from .pagerank import pagerank, partition_nodes
    g = _load_graph(a.graph, a.normalize)
    part = partition_nodes(pagerank(g, a.damping), a.K, a.M)
    d = part.to_dict()
    if a.out:
        Path(a.out).write_text(json.dumps(d) + "\n")
    _dump({"hubs": len(part.hubs), "tails": len(part.tails), "remainder": len(part.remainder())})


def cmd_pretrain(a):
    from .engine.nn import save_checkpoint
    from .engine.pretrain import (EncoderConfig, lp_defaults, nc_defaults, train_classifier,
                                  train_link_predictor)
    g = _load_graph(a.graph, a.normalize)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    nodes = _read_ids(a.train_nodes) if a.train_nodes else np.flatnonzero(g.labels >= 0)
    lp_cfg = EncoderConfig(**{**lp_defaults(backbone=a.backbone).to_dict(), "patience": None})
    nc_cfg = EncoderConfig(**{**nc_defaults(backbone=a.backbone).to_dict(), "patience": None})
    lp = train_link_predictor(g, lp_cfg, a.seed)
    nc = train_classifier(g, g.labels, nodes, nc_cfg, a.seed + 1)
    save_checkpoint(lp.model, out / "link_predictor.json")
    save_checkpoint(nc.model, out / "label_classifier.json")
    lp.write_trace(out / "link_trace.csv")
    nc.write_trace(out / "label_trace.csv")
    np.save(out / "z_link.npy", lp.model.forward(g).data)
    np.save(out / "z_label.npy", nc.model.forward(g).data)
    _dump({"out": str(out), "labeled_nodes": int(len(nodes))})


def cmd_augment(a):
    from .augment import AugmentConfig, augment
    from .graph import save_graph
    from .pagerank import pagerank, partition_nodes
    g = _load_graph(a.graph, a.normalize)
    emb = _load_emb(a.emb)
    part = partition_nodes(pagerank(g, a.damping), a.K, a.M)
    cfg = AugmentConfig(L=a.L, strategy=a.strategy, P=a.P, Q=a.Q, chunk_rows=a.chunk_rows)
    restricted = _read_ids(a.restricted) if a.restricted else None
    g2, plan = augment(g, emb, part, cfg, restricted)
    out = Path(a.out)
    save_graph(g2, out)
    plan.save(out / "plan.jsonl")
    _dump({"removed": len(plan.removals), "added": len(plan.additions), "edges": g2.num_edges})


def cmd_generate(a):
    from .engine.nn import predict_labels
    from .generate import (GenConfig, generator_checkpoint, inject_pseudo_nodes, save_manifest,
                           select_similar_neighbors, train_generative)
    from .graph import save_graph
    from .pagerank import resample_tails
    g = _load_graph(a.graph, a.normalize)
    tails = resample_tails(g, a.K, a.M, a.damping).tails
    labels = g.labels.copy()
    if a.emb:
        hidden = labels < 0
        labels[hidden] = predict_labels(_load_emb(a.emb).z_label)[hidden]
    targets = select_similar_neighbors(g, tails, labels)
    if len(targets) and np.any(targets.target_labels < 0):
        raise CommandError("generate", "some targets have no label; pass --emb to fill them from predictions")
    out = Path(a.out)
    cfg = GenConfig(epochs=a.epochs, seed=a.seed, adv_weight=a.adv_weight)
    if len(targets) == 0:
        save_graph(g, out)
        _dump({"pseudo": 0})
        return
    model = train_generative(g, targets, cfg)
    g2, manifest = inject_pseudo_nodes(g, model, targets)
    save_graph(g2, out)
    save_manifest(manifest, out / "manifest.jsonl")
    (out / "generator.json").write_text(json.dumps(generator_checkpoint(model)))
    _dump({"pseudo": len(manifest), "nodes": g2.num_nodes, "edges": g2.num_edges})


def cmd_train(a):
    from .engine.nn import save_checkpoint
    from .engine.pretrain import lp_defaults, nc_defaults, train_classifier, train_link_predictor
    g = _load_graph(a.graph, a.normalize)
    if a.task == "link":
        res = train_link_predictor(g, lp_defaults(backbone=a.backbone, epochs=a.epochs, patience=None), a.seed)
    else:
        nodes = _read_ids(a.train_nodes) if a.train_nodes else np.flatnonzero((g.labels >= 0) & g.pseudo_flags)
        val = _read_ids(a.val_nodes) if a.val_nodes else None
        res = train_classifier(g, g.labels, nodes, nc_defaults(backbone=a.backbone, epochs=a.epochs),
                               a.seed, val_nodes=val)
    save_checkpoint(res.model, a.out)
    if a.trace:
        res.write_trace(a.trace)
    _dump({"model": a.out, "best_epoch": res.best_epoch, "epochs_run": len(res.trace)})


def cmd_eval(a):
    from .engine.nn import load_checkpoint, predict_labels
    from .evaluation import classification_report
    from .metrics import auc_score
    g = _load_graph(a.graph, a.normalize)
    model = load_checkpoint(a.model)
    z = model.forward(g).data
    if a.pairs:
        rows = np.loadtxt(a.pairs, dtype=np.int64, ndmin=2)
        scores = np.einsum("ij,ij->i", z[rows[:, 0]], z[rows[:, 1]])
        _dump({"auc": auc_score(scores, rows[:, 2])})
        return
    nodes = _read_ids(a.nodes) if a.nodes else np.flatnonzero((g.labels >= 0) & g.pseudo_flags)
    rep = classification_report(predict_labels(z)[nodes], g.labels[nodes], g.num_classes)
    _dump(rep.to_dict())


def _config_from_args(a):
    from .pipeline import RunConfig
    cfg = RunConfig.load(a.config) if a.config else RunConfig()
    over = {}
    for item in a.set or []:
        if "=" not in item:
            raise CommandError("config", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = _parse_value(v)
    for name in ("dataset", "task", "K", "M", "L", "P", "Q", "strategy", "backbone"):
        v = getattr(a, name, None)
        if v is not None:
            over[name] = v
    if getattr(a, "seeds", None):
        over["seeds"] = [int(s) for s in a.seeds.split(",")]
    for flag, field_name in (("no_denoise", "enable_denoise"), ("no_discover", "enable_discover"),
                             ("no_generate", "enable_generate")):
        if getattr(a, flag, False):
            over[field_name] = False
    if getattr(a, "baseline", False):
        over.update(enable_denoise=False, enable_discover=False, enable_generate=False)
    try:
        return cfg.with_overrides(**over) if over else cfg
    except (TypeError, ValueError) as exc:
        raise CommandError("config", str(exc)) from exc


def cmd_pipeline(a):
    from . import plotting
    from .pipeline import run_pipeline
    cfg = _config_from_args(a)
    result = run_pipeline(cfg, a.runs_dir)
    if a.report:
        out = Path(a.report)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "macro", "micro", "auc", "removed", "added", "pseudo"])
            for r in result["runs"]:
                c = r["counts"]
                w.writerow([r["seed"], r["macro_f1"], r["micro_f1"], r["auc"], c["removed"], c["added"], c["pseudo"]])
        plotting.seed_metrics(result["runs"], out / "metrics.png")
        _pipeline_figures(cfg, result, out)
    _dump({"config_hash": result["config_hash"], "summary": result["summary"]})


def _pipeline_figures(cfg, result, out):
    from . import plotting
    from .pipeline import load_dataset
    traces = {}
    for r in result["runs"]:
        path = Path(r["run_dir"]) / "trace.csv"
        if path.exists():
            rows = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
            traces[f"seed {r['seed']}"] = rows
    if traces:
        plotting.training_curves(traces, out / "training.png")
    first = Path(result["runs"][0]["run_dir"]) / "plan.jsonl"
    if first.exists() and cfg.task != "link_pred":
        from .augment import EdgeEditPlan
        from .graph import apply_delta
        g = load_dataset(cfg)
        g2 = apply_delta(g, EdgeEditPlan.load(first).to_delta())
        plotting.degree_histogram({"original": g, "augmented": g2}, out / "degrees.png")


def cmd_sweep(a):
    from . import plotting
    from .pipeline import sweep
    cfg = _config_from_args(a)
    values = [_parse_value(v) for v in a.values.split(",")] if a.values else []
    if not values:
        raise CommandError("sweep", "empty value list")
    rows = sweep(cfg, a.axis, values, a.out, a.runs_dir)
    plotting.sweep_plot(rows, a.axis, Path(a.out).with_suffix(".png"))
    _dump({"rows": len(rows), "csv": a.out})


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saug", description="Selective structural augmentation for GNNs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_args(sp):
        sp.add_argument("--graph", required=True, help="directory with edges.txt / features.txt / labels.txt")
        sp.add_argument("--normalize", action="store_true", help="L1-normalize feature rows on load")

    def partition_args(sp):
        sp.add_argument("--damping", type=float, default=0.85)
        sp.add_argument("--K", type=float, default=2.0)
        sp.add_argument("--M", type=float, default=30.0)

    sp = sub.add_parser("pagerank", help="PageRank vector of a graph")
    graph_args(sp)
    sp.add_argument("--damping", type=float, default=0.85)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pagerank)

    sp = sub.add_parser("sample", help="hub / tail partition")
    graph_args(sp)
    partition_args(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("pretrain", help="pretrain the link predictor and label classifier")
    graph_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--train-nodes", help="file of labeled node ids (default: every labeled node)")
    sp.add_argument("--backbone", default="gcn", choices=["gcn", "sage-mean"])
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("augment", help="denoise hubs and add latent tail neighbors")
    graph_args(sp)
    partition_args(sp)
    sp.add_argument("--emb", required=True, help="pretrain output directory or .npz with z_link/z_label")
    sp.add_argument("--strategy", default="threshold", choices=["threshold", "topq"])
    sp.add_argument("--P", type=float, default=0.8)
    sp.add_argument("--Q", type=int, default=8)
    sp.add_argument("--L", type=float, default=0.1)
    sp.add_argument("--chunk-rows", type=int, default=256)
    sp.add_argument("--restricted", help="file of evaluation node ids to protect")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("generate", help="attach generated pseudo neighbors to tails")
    graph_args(sp)
    partition_args(sp)
    sp.add_argument("--emb", help="embeddings used to label targets whose label is hidden")
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--adv-weight", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a backbone on a (possibly augmented) graph")
    graph_args(sp)
    sp.add_argument("--task", default="nc", choices=["nc", "link"])
    sp.add_argument("--backbone", default="gcn", choices=["gcn", "sage-mean"])
    sp.add_argument("--train-nodes")
    sp.add_argument("--val-nodes")
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trace")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    graph_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--nodes", help="node ids to score (classification)")
    sp.add_argument("--pairs", help="rows 'u v label' to score with AUC (link prediction)")
    sp.set_defaults(func=cmd_eval)

    def run_args(sp):
        sp.add_argument("--config", help="JSON or YAML run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        sp.add_argument("--dataset")
        sp.add_argument("--task", choices=["tail_nc", "overall_nc", "link_pred"])
        sp.add_argument("--seeds", help="comma separated")
        sp.add_argument("--backbone", choices=["gcn", "sage-mean"])
        sp.add_argument("--strategy", choices=["threshold", "topq"])
        sp.add_argument("--K", type=float)
        sp.add_argument("--M", type=float)
        sp.add_argument("--L", type=float)
        sp.add_argument("--P", type=float)
        sp.add_argument("--Q", type=int)
        sp.add_argument("--no-denoise", action="store_true")
        sp.add_argument("--no-discover", action="store_true")
        sp.add_argument("--no-generate", action="store_true")
        sp.add_argument("--baseline", action="store_true", help="turn every augmentation off")
        sp.add_argument("--runs-dir", help="run directory root (default $SAUG_RUNS or ./runs)")

    sp = sub.add_parser("pipeline", help="end-to-end run for every configured seed")
    run_args(sp)
    sp.add_argument("--report", help="write metrics.csv and figures to this directory")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("sweep", help="grid over one of K, M, L, P, Q")
    run_args(sp)
    sp.add_argument("--axis", required=True, choices=["K", "M", "L", "P", "Q"])
    sp.add_argument("--values", required=True, help="comma separated")
    sp.add_argument("--out", required=True, help="CSV path (a PNG is written next to it)")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    from .pipeline import StageError
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"saug {args.command}: {exc}", file=sys.stderr)
        return 1
    except CommandError as exc:
        print(f"saug {args.command}: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"saug {args.command}: stage '{args.command}' failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
