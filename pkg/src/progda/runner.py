"""Training orchestration: the alternating train / pseudo-label / mix-up loop.

Each step trains for a fixed number of epochs on episode graphs, then
freezes the model, extends the pseudo-label store by one quota, and
rebuilds episodes with mix-up replacement for the next step. Metrics are
appended to a CSV per epoch and per step boundary; checkpoints are
written at every step boundary. All randomness flows from the run seed
through named streams, so identical configurations produce byte-identical
metrics files.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import losses as losses_mod
from . import metrics as metrics_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_digest, from_dict, to_dict
from .episodes import build_initial_batch, build_mixup_batch
from .model import GraphAdaptationModel
from .pseudolabel import ProgressiveConfig, PseudoLabelStore, predict_openset, pseudo_label_step
from .synthgen import generate, holdout_split
from .utils import derive, stream

METRICS_COLUMNS = [
    "step", "epoch", "ALL", "OS", "OS_star", "acc_unknown",
    "loss_n", "loss_e", "loss_d", "n_pseudo_known", "n_pseudo_unknown", "lr",
]
METRICS_HEADER = ",".join(METRICS_COLUMNS)

ABLATION_VARIANTS = {
    "full": {},
    "no_progressive": {"no_progressive": True},
    "nll_loss": {"nll_loss": True},
    "no_gnn": {"no_gnn": True},
    "no_mixup": {"no_mixup": True},
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunManifest:
    config: dict
    artifact_version: str
    started: str
    finished: str | None
    steps: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final_metrics: dict | None = None
    metrics_csv: str | None = None
    counters: dict = field(default_factory=dict)
    aborted: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "artifact_version": self.artifact_version,
            "started": self.started,
            "finished": self.finished,
            "steps": self.steps,
            "checkpoints": self.checkpoints,
            "final_metrics": self.final_metrics,
            "metrics_csv": self.metrics_csv,
            "counters": self.counters,
            "aborted": self.aborted,
        }


def _fmt(value) -> str:
    return repr(float(value))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def make_score_fn(model: GraphAdaptationModel, anchor_features: np.ndarray,
                  depth: int | None):
    """Frozen-model scorer: max class probability and argmax per sample.

    Samples are scored in graphs of one class-balanced source anchor per
    class plus a chunk of query samples, mirroring the episode layout
    seen in training.
    """
    c = anchor_features.shape[0]

    def score(features):
        feats = np.asarray(features, dtype=np.float64)
        conf = np.empty(len(feats))
        yhat = np.empty(len(feats), dtype=np.int64)
        with ad.no_grad():
            for lo in range(0, len(feats), c):
                chunk = feats[lo:lo + c]
                nodes = np.vstack([anchor_features, chunk])
                state = model.forward(nodes, training=False, depth=depth)
                probs = model.classify(state.nodes[-1]).data[c:]
                conf[lo:lo + len(chunk)] = probs.max(axis=1)
                yhat[lo:lo + len(chunk)] = probs.argmax(axis=1) + 1
        return conf, yhat

    return score


def _mean_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


class Trainer:
    def __init__(self, config: RunConfig, outdir):
        self.config = config
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)

        pair = generate(config.gen)
        if config.transductive:
            self.train_pair = pair
            self.eval_features = pair.target_features
            self.eval_labels = pair.target_hidden_labels
            self.eval_ids = pair.target_ids
        else:
            self.train_pair, evalset = holdout_split(
                pair, config.eval_fraction, derive(config.seed, "holdout"))
            self.eval_features = evalset.features
            self.eval_labels = evalset.hidden_labels
            self.eval_ids = evalset.ids

        self.num_classes = config.gen.known_classes
        model_cfg = config.model.resolved(
            input_dim=config.gen.feature_dim, num_classes=self.num_classes)
        self.model = GraphAdaptationModel(model_cfg, seed=derive(config.seed, "model"))
        opt = config.optimizer
        head_params = self.model.adaptation_parameters()
        if config.ablation.no_gnn:
            # graph layers never run in this ablation, so they stay frozen
            head_params = {k: v for k, v in head_params.items()
                           if not (k.startswith("edge/") or k.startswith("node/"))}
        if config.weights.gamma == 0.0:
            # without the adversarial term the discriminator takes no gradient
            head_params = {k: v for k, v in head_params.items()
                           if not k.startswith("disc/")}
        self.opt_backbone = ad.Adam(self.model.backbone_parameters(),
                                    lr=opt.lr_backbone, weight_decay=opt.weight_decay)
        self.opt_head = ad.Adam(head_params,
                                lr=opt.lr_gnn, weight_decay=opt.weight_decay)
        self.progressive = ProgressiveConfig(
            alpha=config.effective_alpha(),
            beta=config.openness_belief,
            n_target=len(self.train_pair.target_ids),
        )
        self.store = PseudoLabelStore()
        anchor_rng = stream(config.seed, "anchors")
        rows = [int(anchor_rng.choice(self.train_pair.source_indices_for_class(cls)))
                for cls in range(1, self.num_classes + 1)]
        self.anchor_rows = rows
        self.anchor_features = self.train_pair.source_features[rows]
        self.episode_rng = stream(config.seed, "episodes")
        self.depth = 0 if config.ablation.no_gnn else None
        self.global_epoch = 0
        self.counters = {"clamped_logs": 0, "adversarial_skipped": 0,
                         "mixup_shortfall": 0}

    # -- loss assembly -----------------------------------------------------------

    def _graphs_from_batch(self, batch):
        """Yield (features, slot labels, supervised rows, source rows, target rows)."""
        c = self.num_classes
        if not self.config.graph_per_batch:
            for ep in batch.episodes:
                features = np.vstack([ep.slot_features, ep.target_features])
                sup = np.arange(c)
                src_rows = sup[~ep.slot_is_pseudo]
                tgt_rows = np.concatenate([
                    sup[ep.slot_is_pseudo],
                    np.arange(c, c + len(ep.target_ids)),
                ])
                yield features, ep.slot_labels, sup, src_rows, tgt_rows
            return
        feats, labels, sup, src_rows, tgt_rows = [], [], [], [], []
        offset = 0
        for ep in batch.episodes:
            n = c + len(ep.target_ids)
            feats.append(np.vstack([ep.slot_features, ep.target_features]))
            labels.append(ep.slot_labels)
            sup.append(offset + np.arange(c))
            src_rows.append(offset + np.flatnonzero(~ep.slot_is_pseudo))
            tgt_rows.append(offset + np.concatenate([
                np.flatnonzero(ep.slot_is_pseudo),
                np.arange(c, n),
            ]))
            offset += n
        yield (np.vstack(feats), np.concatenate(labels), np.concatenate(sup),
               np.concatenate(src_rows), np.concatenate(tgt_rows))

    def _batch_losses(self, batch):
        weights = self.config.weights
        rho = 0.0 if self.config.ablation.nll_loss else weights.rho
        node_terms, edge_terms, src_parts, tgt_parts = [], [], [], []
        for features, labels, sup, src_rows, tgt_rows in self._graphs_from_batch(batch):
            state = self.model.forward(features, training=True, depth=self.depth)
            layer_probs = [ad.gather_rows(p, sup)
                           for p in self.model.classify_layers(state)]
            node_terms.append(losses_mod.focal_node_loss(layer_probs, labels, rho))
            if state.edges:
                edge_terms.append(losses_mod.edge_loss(state.edges, labels, sup))
            v0 = state.nodes[0]
            if len(src_rows):
                src_parts.append(ad.gather_rows(v0, src_rows))
            if len(tgt_rows):
                tgt_parts.append(ad.gather_rows(v0, tgt_rows))
        node_loss = _mean_terms(node_terms)
        edge_loss = _mean_terms(edge_terms) if edge_terms else None
        adv_loss = None
        if src_parts and tgt_parts:
            src = src_parts[0] if len(src_parts) == 1 else ad.concat(src_parts, axis=0)
            tgt = tgt_parts[0] if len(tgt_parts) == 1 else ad.concat(tgt_parts, axis=0)
            adv_loss, clamped = losses_mod.adversarial_loss(
                self.model.discriminate, src, tgt)
            self.counters["clamped_logs"] += clamped
        else:
            # under heavy mix-up replacement a batch can lose all true-source
            # slots; the discriminator then sits out this step
            self.counters["adversarial_skipped"] += 1
            for k, p in self.model.params.items():
                if k.startswith("disc/") and p.grad is None:
                    p.grad = np.zeros_like(p.data)
        total = losses_mod.total_loss(node_loss, edge_loss, adv_loss, weights)
        return (total,
                float(node_loss.data),
                float(edge_loss.data) if edge_loss is not None else 0.0,
                float(adv_loss.data) if adv_loss is not None else 0.0)

    # -- schedule and loop -------------------------------------------------------

    def _current_lr(self, base: float) -> float:
        opt = self.config.optimizer
        return base * opt.lr_decay_factor ** (self.global_epoch // opt.lr_decay_every_epochs)

    def _train_epoch(self):
        cfg = self.config
        c = self.num_classes
        n_targets = len(self.train_pair.target_ids)
        episodes_per_epoch = math.ceil(n_targets / c)
        n_batches = math.ceil(episodes_per_epoch / cfg.batch_episodes)
        self.opt_backbone.lr = self._current_lr(cfg.optimizer.lr_backbone)
        self.opt_head.lr = self._current_lr(cfg.optimizer.lr_gnn)
        m = self.store.step
        sums = np.zeros(3)
        for _ in range(n_batches):
            batch_seed = int(self.episode_rng.integers(0, 1 << 63))
            if m == 0 or cfg.ablation.no_mixup:
                batch = build_initial_batch(self.train_pair, cfg.batch_episodes, batch_seed)
            else:
                batch = build_mixup_batch(self.train_pair, self.store, m, cfg.alpha,
                                          cfg.batch_episodes, batch_seed)
            self.counters["mixup_shortfall"] += batch.shortfall
            total, l_n, l_e, l_d = self._batch_losses(batch)
            if not np.isfinite(total.data):
                raise TrainingDiverged(
                    f"non-finite loss at step {m}, epoch {self.global_epoch}")
            total.backward()
            self.opt_backbone.step()
            self.opt_head.step()
            sums += (l_n, l_e, l_d)
        self.global_epoch += 1
        return sums / n_batches

    def _score_fn(self):
        return make_score_fn(self.model, self.anchor_features, self.depth)

    def evaluate(self) -> metrics_mod.MetricReport:
        pred = predict_openset(self._score_fn(), self.eval_features, self.eval_ids,
                               self.store, self.progressive, self.num_classes)
        return metrics_mod.score(self.eval_labels, pred, self.num_classes)

    def _metrics_row(self, report, epoch_losses) -> list[str]:
        n_known, n_unknown = self.store.counts()
        return [
            str(self.store.step),
            str(self.global_epoch - 1),
            _fmt(report.all_acc),
            _fmt(report.os_acc),
            _fmt(report.os_star),
            _fmt(report.acc_unknown),
            _fmt(epoch_losses[0]),
            _fmt(epoch_losses[1]),
            _fmt(epoch_losses[2]),
            str(n_known),
            str(n_unknown),
            _fmt(self.opt_head.lr),
        ]

    def _save_step_checkpoint(self) -> Path:
        path = self.outdir / f"step_{self.store.step:02d}.ckpt"
        arrays = self.model.state_arrays()
        arrays.update(self.opt_backbone.state_arrays("opt/backbone"))
        arrays.update(self.opt_head.state_arrays("opt/head"))
        extra = {
            "artifact_version": __version__,
            "config": to_dict(self.config),
            "store": self.store.snapshot(),
            "anchor_rows": [int(r) for r in self.anchor_rows],
            "rng": {
                "dropout": self.model.dropout_rng_state(),
                "episodes": self.episode_rng.bit_generator.state,
            },
            "global_epoch": self.global_epoch,
        }
        save_checkpoint(path, config_digest(self.config), self.store.step, arrays, extra)
        return path

    def run(self) -> RunManifest:
        cfg = self.config
        manifest = RunManifest(
            config=to_dict(cfg), artifact_version=__version__,
            started=_now(), finished=None,
        )
        csv_path = self.outdir / "metrics.csv"
        manifest.metrics_csv = str(csv_path)
        total_steps = self.progressive.total_steps
        stop = total_steps if cfg.early_stop_step is None else min(
            total_steps, cfg.early_stop_step)
        final_report = None
        with open(csv_path, "w", newline="") as fh:
            fh.write(METRICS_HEADER + "\n")
            try:
                for _ in range(stop):
                    epoch_losses = None
                    for _ in range(cfg.epochs_per_step):
                        epoch_losses = self._train_epoch()
                        report = self.evaluate()
                        fh.write(",".join(self._metrics_row(report, epoch_losses)) + "\n")
                    pseudo_label_step(self._score_fn(), self.train_pair.target_features,
                                      self.train_pair.target_ids, self.store,
                                      self.progressive)
                    ckpt = self._save_step_checkpoint()
                    manifest.checkpoints.append(str(ckpt))
                    report = self.evaluate()
                    final_report = report
                    fh.write(",".join(self._metrics_row(report, epoch_losses)) + "\n")
                    manifest.steps.append({
                        "step": self.store.step,
                        "epochs": self.global_epoch,
                        "ALL": report.all_acc,
                        "OS": report.os_acc,
                        "OS_star": report.os_star,
                        "acc_unknown": report.acc_unknown,
                        "n_pseudo_known": len(self.store.known),
                        "n_pseudo_unknown": len(self.store.unknown),
                    })
            except TrainingDiverged as exc:
                manifest.aborted = str(exc)
        if final_report is not None:
            manifest.final_metrics = {
                "ALL": final_report.all_acc,
                "OS": final_report.os_acc,
                "OS_star": final_report.os_star,
                "acc_unknown": final_report.acc_unknown,
            }
        manifest.counters = dict(self.counters)
        manifest.finished = _now()
        _write_manifest(self.outdir / "manifest.json", manifest)
        return manifest


def _write_manifest(path: Path, manifest: RunManifest):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    tmp.replace(path)


def train(config: RunConfig, outdir) -> RunManifest:
    return Trainer(config, outdir).run()


def untrained_report(config: RunConfig) -> metrics_mod.MetricReport:
    """Evaluate a freshly initialized model (the chance-level floor)."""
    trainer = Trainer(config, Path(_scratch_dir(config)))
    return trainer.evaluate()


def _scratch_dir(config: RunConfig) -> str:
    import tempfile

    return tempfile.mkdtemp(prefix="progda-scratch-")


# -- checkpoint-driven entry points ------------------------------------------------


def _rebuild(ckpt):
    cfg = from_dict(ckpt.extra["config"])
    trainer = Trainer(cfg, Path(_scratch_dir(cfg)))
    model_arrays = {k: v for k, v in ckpt.arrays.items() if not k.startswith("opt/")}
    trainer.model.load_state_arrays(model_arrays)
    trainer.opt_backbone.load_state_arrays("opt/backbone", ckpt.arrays)
    trainer.opt_head.load_state_arrays("opt/head", ckpt.arrays)
    trainer.store = PseudoLabelStore.from_snapshot(ckpt.extra["store"])
    trainer.model.set_dropout_rng_state(ckpt.extra["rng"]["dropout"])
    trainer.episode_rng.bit_generator.state = ckpt.extra["rng"]["episodes"]
    trainer.global_epoch = int(ckpt.extra["global_epoch"])
    return trainer


def evaluate_checkpoint(path, split: str = "run") -> dict:
    """Score a saved model; deterministic given the checkpoint.

    split: "run" scores the run's own evaluation pool, "train" the
    training target pool (these coincide for transductive runs).
    """
    ckpt = load_checkpoint(path)
    cfg = from_dict(ckpt.extra["config"])
    expected = config_digest(cfg)
    if expected != ckpt.config_digest:
        raise ValueError(
            f"checkpoint digest {ckpt.config_digest[:12]} does not match its "
            f"embedded config {expected[:12]}")
    trainer = _rebuild(ckpt)
    if split == "train":
        features = trainer.train_pair.target_features
        labels = trainer.train_pair.target_hidden_labels
        ids = trainer.train_pair.target_ids
    elif split == "run":
        features, labels, ids = (trainer.eval_features, trainer.eval_labels,
                                 trainer.eval_ids)
    else:
        raise ValueError(f"unknown split {split!r}; use 'run' or 'train'")
    pred = predict_openset(trainer._score_fn(), features, ids, trainer.store,
                           trainer.progressive, trainer.num_classes)
    report = metrics_mod.score(labels, pred, trainer.num_classes)
    n_known, n_unknown = trainer.store.counts()
    return {
        "split": split,
        "step": trainer.store.step,
        "ALL": report.all_acc,
        "OS": report.os_acc,
        "OS_star": report.os_star,
        "acc_unknown": report.acc_unknown,
        "n_pseudo_known": n_known,
        "n_pseudo_unknown": n_unknown,
    }


def export_edges(ckpt_path, out_path, episode_seed: int = 0):
    """Dump the final-layer normalized edge matrix of a probe episode as CSV."""
    trainer = _rebuild(load_checkpoint(ckpt_path))
    if trainer.depth == 0:
        raise ValueError("the GNN-free ablation has no edge matrices to export")
    batch = build_initial_batch(trainer.train_pair, 1,
                                derive(episode_seed, "edge-probe"))
    ep = batch.episodes[0]
    features = np.vstack([ep.slot_features, ep.target_features])
    with ad.no_grad():
        state = trainer.model.forward(features, training=False)
    e = state.edges[-1].data
    n = e.shape[0]
    c = trainer.num_classes
    with open(out_path, "w") as fh:
        fh.write("node,kind,label," + ",".join(f"e{j}" for j in range(n)) + "\n")
        for i in range(n):
            kind = "slot" if i < c else "target"
            label = str(ep.slot_labels[i]) if i < c else ""
            fh.write(f"{i},{kind},{label}," + ",".join(repr(float(x)) for x in e[i]) + "\n")


def export_embeddings(ckpt_path, out_path):
    """Dump 2-D projections of backbone features for external plotting."""
    trainer = _rebuild(load_checkpoint(ckpt_path))
    src = trainer.train_pair.source_features
    tgt = trainer.train_pair.target_features
    with ad.no_grad():
        v_src = trainer.model.backbone_forward(src, training=False).data
        v_tgt = trainer.model.backbone_forward(tgt, training=False).data
    stacked = np.vstack([v_src, v_tgt])
    centered = stacked - stacked.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    labels = np.concatenate([trainer.train_pair.source_labels,
                             trainer.train_pair.target_hidden_labels])
    domains = ["source"] * len(v_src) + ["target"] * len(v_tgt)
    with open(out_path, "w") as fh:
        fh.write("domain,hidden_label,e0,e1\n")
        for dom, lab, (x, y) in zip(domains, labels, coords):
            fh.write(f"{dom},{int(lab)},{x!r},{y!r}\n")


def ablate(config: RunConfig, variants: list[str], seeds: list[int], outdir) -> list[dict]:
    """Run each variant under shared seeds; emit a comparison CSV."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}; "
                         f"choose from {sorted(ABLATION_VARIANTS)}")
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = config.with_seed(seed).with_ablation(**ABLATION_VARIANTS[variant])
            manifest = train(cfg, outdir / variant / f"seed{seed}")
            final = manifest.final_metrics or {}
            rows.append({
                "variant": variant,
                "seed": seed,
                "UNK": final.get("acc_unknown"),
                "ALL": final.get("ALL"),
                "OS": final.get("OS"),
                "OS_star": final.get("OS_star"),
            })
    table = outdir / "ablation.csv"
    with open(table, "w") as fh:
        fh.write("variant,seed,UNK,ALL,OS,OS_star\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['seed']},{_fmt(r['UNK'])},{_fmt(r['ALL'])},"
                     f"{_fmt(r['OS'])},{_fmt(r['OS_star'])}\n")
        for variant in variants:
            rs = [r for r in rows if r["variant"] == variant]
            fh.write(f"{variant},mean,"
                     + ",".join(_fmt(np.mean([r[k] for r in rs]))
                                for k in ("UNK", "ALL", "OS", "OS_star")) + "\n")
    return rows
