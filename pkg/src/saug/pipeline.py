"""End-to-end orchestration: config, per-seed runs, artifacts and sweeps."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, EdgeEditPlan, augment
from .datasets import dataset_path
from .engine.nn import predict_labels, save_checkpoint
from .engine.pretrain import (EmbeddingPair, EncoderConfig, lp_defaults, nc_defaults,
                              train_classifier, train_link_predictor)
from .evaluation import (LinkSplit, MetricsReport, NodeSplit, aggregate, classification_report,
                         make_link_split, make_overall_split, make_tail_split)
from .generate import (GenConfig, discriminator_accuracy, generator_checkpoint, inject_pseudo_nodes,
                       save_manifest, select_similar_neighbors, train_generative)
from .graph import Graph, generate_powerlaw, load_graph_dir, pair_keys
from .metrics import auc_score
from .pagerank import pagerank, partition_nodes, resample_tails

log = logging.getLogger(__name__)

TASKS = ("tail_nc", "overall_nc", "link_pred")
SWEEP_AXES = ("K", "M", "L", "P", "Q")
RUNS_ENV = "SAUG_RUNS"
# fields that do not change results and are left out of the config hash
_NON_SEMANTIC = ("seeds", "workers")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    dataset: str = "cora"
    synthetic: dict | None = None  # {"n", "m", "d_x", "num_classes", "seed"} replaces dataset
    normalize_features: bool = False
    task: str = "tail_nc"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    # structure
    damping: float = 0.85
    K: float = 2.0
    M: float = 30.0
    L: float = 0.1
    strategy: str = "threshold"
    P: float = 0.8
    Q: int = 8
    chunk_rows: int = 256
    restrict_eval: bool = True
    # backbone training
    backbone: str = "gcn"
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    lam: float = 1e-4
    mu: float = 1e-4
    nc_hidden: int = 32
    nc_layers: int = 3
    nc_epochs: int = 200
    nc_patience: int = 30
    nc_input_dropout: float = 0.5
    lp_hidden: int = 32
    lp_out: int = 16
    lp_epochs: int = 500
    lp_patience: int = 150
    labels_per_class: int = 10
    resample_labels: bool = True
    overall_per_class: int = 20
    overall_val: int = 500
    overall_test: int = 1000
    # generator
    gen: GenConfig = field(default_factory=GenConfig)
    supervise_pseudo: bool = False
    # ablation switches
    enable_denoise: bool = True
    enable_discover: bool = True
    enable_generate: bool = True
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.gen, dict):
            self.gen = GenConfig(**self.gen)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        self.augment_config()  # validates L/P/Q

    # -- derived configs ---------------------------------------------------
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(L=self.L, strategy=self.strategy, P=self.P, Q=self.Q, chunk_rows=self.chunk_rows)

    def nc_config(self) -> EncoderConfig:
        return nc_defaults(hidden=self.nc_hidden, layers=self.nc_layers, backbone=self.backbone,
                           epochs=self.nc_epochs, lr=self.lr, weight_decay=self.weight_decay,
                           reg=self.mu, dropout=self.dropout, input_dropout=self.nc_input_dropout,
                           patience=self.nc_patience)

    def lp_config(self) -> EncoderConfig:
        return lp_defaults(hidden=self.lp_hidden, out_dim=self.lp_out, backbone=self.backbone,
                           epochs=self.lp_epochs, lr=self.lr, weight_decay=self.weight_decay,
                           reg=self.lam, dropout=self.dropout, patience=self.lp_patience)

    @property
    def any_augmentation(self) -> bool:
        return self.enable_denoise or self.enable_discover or self.enable_generate

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gen"] = self.gen.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            return cls.from_dict(yaml.safe_load(text) or {})
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        gen = dict(d.pop("gen"))
        for k, v in kw.items():
            if k.startswith("gen."):
                gen[k[4:]] = v
            else:
                d[k] = v
        d["gen"] = gen
        return RunConfig.from_dict(d)

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in _NON_SEMANTIC:
            d.pop(k, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def load_dataset(cfg: RunConfig) -> Graph:
    if cfg.synthetic:
        s = dict(cfg.synthetic)
        return generate_powerlaw(int(s["n"]), int(s.get("m", 2)), int(s.get("d_x", 32)),
                                 int(s.get("num_classes", 4)), int(s.get("seed", 0)))
    path = cfg.dataset if os.path.isdir(cfg.dataset) else dataset_path(cfg.dataset)
    return load_graph_dir(path, normalize=cfg.normalize_features)


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


def _seed_for(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class SeedResult:
    metrics: MetricsReport
    plan: EdgeEditPlan
    manifest: list
    counts: dict
    run_dir: Path | None = None


class _Stages:
    """Runs named stages, turning exceptions into StageError."""

    def __init__(self, run_dir: Path | None):
        self.run_dir = run_dir
        self.timing = {}

    def __call__(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timing[name] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", name, self.timing[name])
        return out

    def path(self, name) -> Path | None:
        return None if self.run_dir is None else self.run_dir / name


def _write_json(path, obj):
    if path is not None:
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def run_seed(g: Graph, cfg: RunConfig, seed: int, run_dir=None) -> SeedResult:
    """One full pass for one seed; artifacts go to ``run_dir`` when given."""
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.json")
    st = _Stages(run_dir)

    pr = st("pagerank", pagerank, g, cfg.damping)
    part = st("partition", partition_nodes, pr, cfg.K, cfg.M)
    if run_dir is not None:
        np.savetxt(run_dir / "pagerank.txt", pr.values, fmt="%.17g")
        _write_json(run_dir / "partition.json", part.to_dict())

    if cfg.task == "link_pred":
        split = st("split", make_link_split, g, seed)
        graph = g.with_edges(split.train)
        # the pretraining classifier still needs labels; no node set is held out for it
        label_nodes = st("split", make_overall_split, g, seed, cfg.overall_per_class, 0, 0).labeled
        sampler = None
    else:
        if cfg.task == "tail_nc":
            split = st("split", make_tail_split, g, part, seed, cfg.labels_per_class, cfg.resample_labels)
        else:
            split = st("split", make_overall_split, g, seed, cfg.overall_per_class, cfg.overall_val,
                       cfg.overall_test)
        graph = g
        label_nodes = split.labeled
        sampler = split.sampler()
    _write_json(st.path("split.json"), split.to_dict())

    plan = EdgeEditPlan()
    manifest = []
    g_tilde = graph
    counts = {"removed": 0, "added": 0, "pseudo": 0}
    if cfg.any_augmentation:
        aug_part = part
        if cfg.task == "link_pred":
            aug_part = st("partition", partition_nodes, pagerank(graph, cfg.damping), cfg.K, cfg.M)
        restricted = split.restricted if (cfg.restrict_eval and isinstance(split, NodeSplit)) else None
        visible = split.visible if isinstance(split, NodeSplit) else label_nodes
        emb = st("pretrain", _pretrain, graph, cfg, seed, label_nodes, sampler, run_dir)
        g_prime = graph
        if cfg.enable_denoise or cfg.enable_discover:
            g_prime, plan = st("augment", augment, graph, emb, aug_part, cfg.augment_config(), restricted,
                               cfg.enable_denoise, cfg.enable_discover)
            if run_dir is not None:
                plan.save(run_dir / "plan.jsonl")
        g_tilde = g_prime
        if cfg.enable_generate:
            g_tilde, manifest = st("generate", _generate, g_prime, emb, visible, cfg, seed, run_dir)
        counts = {"removed": len(plan.removals), "added": len(plan.additions), "pseudo": len(manifest)}

    if cfg.task == "link_pred":
        metrics = st("train", _train_eval_link, g_tilde, split, cfg, seed, run_dir)
    else:
        extra = np.array([m["pseudo_id"] for m in manifest], dtype=np.int64) if cfg.supervise_pseudo else None
        metrics = st("train", _train_eval_nodes, g_tilde, split, sampler, cfg, seed, extra, run_dir)
    metrics.seed = seed

    if run_dir is not None:
        report = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": seed,
                  "metrics": {k: v for k, v in metrics.to_dict().items() if k != "seconds"},
                  "counts": counts}
        _write_json(run_dir / "report.json", report)
        _write_json(run_dir / "timing.json", st.timing)
    return SeedResult(metrics, plan, manifest, counts, run_dir)


def _pretrain(graph, cfg, seed, label_nodes, sampler, run_dir) -> EmbeddingPair:
    lp_cfg = EncoderConfig(**{**cfg.lp_config().to_dict(), "patience": None})
    nc_cfg = EncoderConfig(**{**cfg.nc_config().to_dict(), "patience": None})
    lp = train_link_predictor(graph, lp_cfg, _seed_for(seed, "pretrain-link")).model
    nc = train_classifier(graph, graph.labels, label_nodes, nc_cfg, _seed_for(seed, "pretrain-label"),
                          label_sampler=sampler).model
    emb = EmbeddingPair(lp.forward(graph).data.copy(), nc.forward(graph).data.copy())
    if run_dir is not None:
        save_checkpoint(lp, run_dir / "link_predictor.json")
        save_checkpoint(nc, run_dir / "label_classifier.json")
        np.save(run_dir / "z_link.npy", emb.z_link)
        np.save(run_dir / "z_label.npy", emb.z_label)
    return emb


def _generate(g_prime: Graph, emb: EmbeddingPair, visible, cfg: RunConfig, seed: int, run_dir):
    tails = resample_tails(g_prime, cfg.K, cfg.M, cfg.damping).tails
    # labels the method may not read are replaced by the pretrained classifier's guess
    labels = predict_labels(emb.z_label)
    visible = np.asarray(visible, dtype=np.int64)
    labels[visible] = g_prime.labels[visible]
    targets = select_similar_neighbors(g_prime, tails, labels)
    if len(targets) == 0:
        return g_prime, []
    gen_cfg = dataclasses.replace(cfg.gen, seed=_seed_for(seed, "generate"))
    model = train_generative(g_prime, targets, gen_cfg, labeled_nodes=visible)
    g_tilde, manifest = inject_pseudo_nodes(g_prime, model, targets)
    if run_dir is not None:
        save_manifest(manifest, run_dir / "manifest.jsonl")
        _write_json(run_dir / "generator.json", generator_checkpoint(model))
        np.save(run_dir / "pseudo_features.npy", g_tilde.features[g_prime.num_nodes:])
        _write_json(run_dir / "discriminator.json",
                    {"heldout_balanced_accuracy": discriminator_accuracy(model, g_prime, targets)})
    return g_tilde, manifest


def _train_eval_nodes(g_tilde: Graph, split: NodeSplit, sampler, cfg: RunConfig, seed: int,
                      pseudo_rows, run_dir) -> MetricsReport:
    labeled = split.labeled
    if pseudo_rows is not None and len(pseudo_rows):
        labeled = np.concatenate([labeled, pseudo_rows])
        if sampler is not None:
            base = sampler
            sampler = lambda rng: np.concatenate([base(rng), pseudo_rows])  # noqa: E731
    res = train_classifier(g_tilde, g_tilde.labels, labeled, cfg.nc_config(), _seed_for(seed, "train"),
                           val_nodes=split.val, label_sampler=sampler)
    pred = predict_labels(res.model.forward(g_tilde))
    if run_dir is not None:
        save_checkpoint(res.model, run_dir / "classifier.json")
        res.write_trace(run_dir / "trace.csv")
    return classification_report(pred[split.test], g_tilde.labels[split.test], g_tilde.num_classes)


def _train_eval_link(g_tilde: Graph, split: LinkSplit, cfg: RunConfig, seed: int, run_dir) -> MetricsReport:
    val_pairs, val_y = split.pairs("val")
    test_pairs, test_y = split.pairs("test")
    # supervised positives are the split's train edges; augmentation only changes message passing.
    # Negatives avoid every known or added edge, held-out positives included, and never use a
    # pseudo node since evaluation pairs are real-real.
    known = np.vstack([split.train, split.val, split.test])
    forbidden = np.unique(np.concatenate([g_tilde.edge_keys, pair_keys(known, g_tilde.num_nodes)]))
    res = train_link_predictor(g_tilde, cfg.lp_config(), _seed_for(seed, "train"), pos_edges=split.train,
                               val_pairs=val_pairs, val_labels=val_y, forbidden_keys=forbidden,
                               neg_nodes=int(g_tilde.pseudo_flags.sum()))
    z = res.model.forward(g_tilde).data
    scores = np.einsum("ij,ij->i", z[test_pairs[:, 0]], z[test_pairs[:, 1]])
    if run_dir is not None:
        save_checkpoint(res.model, run_dir / "link_predictor_final.json")
        res.write_trace(run_dir / "trace.csv")
    return MetricsReport(auc=auc_score(scores, test_y))


def run_pipeline(cfg: RunConfig, root=None, g: Graph | None = None) -> dict:
    """Run every seed of ``cfg``; each seed writes to ``<root>/<hash>-seed<k>``.

    A failing stage raises StageError; artifacts of earlier stages and
    seeds stay on disk.
    """
    g = load_dataset(cfg) if g is None else g
    root = Path(root) if root is not None else runs_root()
    h = cfg.config_hash()
    runs = [run_seed(g, cfg, s, root / f"{h}-seed{s}") for s in cfg.seeds]  # StageError aborts
    out = {"config_hash": h, "summary": aggregate([r.metrics for r in runs]),
           "runs": [{"seed": r.metrics.seed, **r.metrics.to_dict(), "counts": r.counts,
                     "run_dir": str(r.run_dir)} for r in runs]}
    _write_json(root / f"{h}-summary.json", out)
    return out


def sweep(cfg: RunConfig, axis: str, values, out_csv, root=None, g: Graph | None = None) -> list:
    """One pipeline run per value and seed; writes CSV rows (value, seed, macro, micro, auc)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    g = load_dataset(cfg) if g is None else g
    extra = {"P": {"strategy": "threshold"}, "Q": {"strategy": "topq"}}.get(axis, {})
    rows = []
    for v in values:
        sub = cfg.with_overrides(**{axis: v}, **extra)
        result = run_pipeline(sub, root, g)
        for r in result["runs"]:
            rows.append({"value": v, "seed": r["seed"], "macro": r["macro_f1"],
                         "micro": r["micro_f1"], "auc": r["auc"]})
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["value", "seed", "macro", "micro", "auc"])
        w.writeheader()
        w.writerows(rows)
    return rows
