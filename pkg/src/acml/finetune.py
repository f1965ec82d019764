"""Scaffold splits, ranking metrics and property fine-tuning of the graph encoder."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import tensor as T
from .encoders import GinConfig, batch_graphs, encode_batch, init_gin
from .errors import DimMismatch, EmptySplit, LengthMismatch, SingleClassTask
from .molgraph import MolGraph, scaffold_key
from .tensor import Tensor

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
LR_GRID = (1e-2, 1e-3, 1e-4, 1e-5)


@dataclass
class TaskSpec:
    kind: str  # "classification" (binary, multi-task) or "regression"
    n_tasks: int = 1

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")

    @property
    def metric_name(self) -> str:
        return "roc_auc" if self.kind == "classification" else "rmse"


def label_matrix(records, n_tasks: int) -> np.ndarray:
    """(n, n_tasks) float array; missing labels (None) become NaN."""
    out = np.full((len(records), n_tasks), np.nan)
    for i, r in enumerate(records):
        labels = r.labels or []
        if len(labels) > n_tasks:
            raise LengthMismatch(f"{r.id}: {len(labels)} labels for {n_tasks} tasks")
        for j, v in enumerate(labels):
            if v is not None:
                out[i, j] = float(v)
    return out


# ------------------------------------------------------------------ splits


def scaffold_split(graphs: list[MolGraph], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[str]:
    """Assign every molecule to train/valid/test without splitting a scaffold.

    Groups are filled largest first (ties by scaffold key), so the result
    does not depend on ``seed``; it is accepted for interface symmetry.
    Acyclic molecules have an empty scaffold and each form their own group.
    """
    n = len(graphs)
    if n < 3:
        raise ValueError("scaffold_split needs at least 3 molecules")
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    groups: dict[str, list[int]] = {}
    for i, g in enumerate(graphs):
        key = scaffold_key(g)
        if key == scaffold_key(MolGraph([], [])):
            key = f"~acyclic:{i:09d}"
        groups.setdefault(key, []).append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    if len(ordered) == 1:
        warnings.warn("all molecules share one scaffold; everything goes to train", stacklevel=2)
    train_cut = ratios[0] * n
    valid_cut = (ratios[0] + ratios[1]) * n
    tags = [""] * n
    n_train = n_valid = 0
    for _, members in ordered:
        if n_train + len(members) <= train_cut or len(ordered) == 1:
            tag = "train"
            n_train += len(members)
        elif n_train + n_valid + len(members) <= valid_cut:
            tag = "valid"
            n_valid += len(members)
        else:
            tag = "test"
        for i in members:
            tags[i] = tag
    return tags


def write_split_csv(path, ids, tags) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split"])
        w.writerows(zip(ids, tags))


# ----------------------------------------------------------------- metrics


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC of one task; tied scores share their average rank."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"scores {s.shape} vs labels {y.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTask("need at least one positive and one negative label")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size)
    ranks[order] = _kernels.average_ranks(np.ascontiguousarray(s[order]))
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc_tasks(scores, labels):
    """Per-task AUC over non-missing labels (NaN = missing) and their mean.

    Single-class tasks get None and are left out of the mean.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"scores {scores.shape} vs labels {labels.shape}")
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    per = []
    for t in range(labels.shape[1]):
        keep = ~np.isnan(labels[:, t])
        try:
            per.append(roc_auc(scores[keep, t], labels[keep, t]))
        except SingleClassTask:
            log.info("task %d has a single class here; skipped", t)
            per.append(None)
    valid = [a for a in per if a is not None]
    return per, (float(np.mean(valid)) if valid else float("nan"))


def rmse(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions for {t.size} targets")
    if p.size == 0:
        raise LengthMismatch("rmse of nothing")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def evaluate(pred, labels, task: TaskSpec) -> float:
    if task.kind == "classification":
        return roc_auc_tasks(pred, labels)[1]
    keep = ~np.isnan(labels)
    return rmse(pred[keep], labels[keep])


def _better(a, b, task: TaskSpec) -> bool:
    if np.isnan(b):
        return not np.isnan(a)
    return a > b if task.kind == "classification" else a < b


# --------------------------------------------------------------- training


@dataclass
class FinetuneResult:
    metric_name: str
    best_lr: float
    best_epoch: int
    valid: float
    test: float
    per_lr: dict = field(default_factory=dict)

    def report(self, dataset: str, seed: int) -> dict:
        return {
            "dataset": dataset,
            "seed": seed,
            "lr": self.best_lr,
            "metric_name": self.metric_name,
            "valid": self.valid,
            "test": self.test,
        }


def _gin_params(params: dict) -> dict:
    return {k: v for k, v in params.items() if k.startswith("gin.")}


def _predict(graphs, params, head, cfg: GinConfig, batch_size=256) -> np.ndarray:
    out = []
    with T.no_grad():
        for i in range(0, len(graphs), batch_size):
            h = encode_batch(batch_graphs(graphs[i : i + batch_size]), params, cfg)
            out.append((h @ head["head.w"] + head["head.b"]).data)
    return np.concatenate(out).astype(np.float64)


def finetune_run(
    graphs,
    labels,
    task: TaskSpec,
    split: list[str],
    gin_cfg: GinConfig,
    params: dict | None = None,
    lrs=LR_GRID,
    epochs: int = 100,
    batch_size: int = 32,
    seed: int = 0,
    freeze_backbone: bool = False,
) -> FinetuneResult:
    """Fit a linear head (and by default the encoder) for every lr in ``lrs``.

    ``params`` holds a pretrained encoder; None trains from a fresh init.
    The epoch and lr with the best validation metric win; its test metric
    is reported.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape != (len(graphs), task.n_tasks):
        raise DimMismatch(f"labels {labels.shape}, expected ({len(graphs)}, {task.n_tasks})")
    if len(split) != len(graphs):
        raise LengthMismatch(f"{len(split)} split tags for {len(graphs)} molecules")
    idx = {s: np.array([i for i, t in enumerate(split) if t == s], dtype=np.int64) for s in SPLITS}
    for s in SPLITS:
        if idx[s].size == 0:
            raise EmptySplit(f"{s} split is empty")
    if params is None:
        base = init_gin(gin_cfg, seed)
    else:
        base = _gin_params(params)
        if base["gin.atom_z"].shape[1] != gin_cfg.hidden_dim:
            raise DimMismatch(
                f"checkpoint hidden dim {base['gin.atom_z'].shape[1]} but config says {gin_cfg.hidden_dim}"
            )
    sub = {s: [graphs[i] for i in idx[s]] for s in SPLITS}
    best: FinetuneResult | None = None
    per_lr = {}
    for lr in lrs:
        res = _fit_one(sub, labels, idx, task, gin_cfg, base, lr, epochs, batch_size, seed, freeze_backbone)
        per_lr[lr] = {"valid": res[1], "test": res[2], "epoch": res[0]}
        if best is None or _better(res[1], best.valid, task):
            best = FinetuneResult(task.metric_name, lr, res[0], res[1], res[2])
    best.per_lr = per_lr
    return best


def _fit_one(sub, labels, idx, task, cfg, base, lr, epochs, batch_size, seed, freeze):
    params = {k: Tensor(v.data.copy(), requires_grad=not freeze, name=k) for k, v in base.items()}
    head = {
        "head.w": T.seeded_init((cfg.hidden_dim, task.n_tasks), "glorot", seed, T.stream_id("head.w")),
        "head.b": T.seeded_init((task.n_tasks,), "zeros", seed, T.stream_id("head.b")),
    }
    trainable = dict(head) if freeze else {**params, **head}
    # plain Adam: the decoupled decay term is switched off
    opt = T.AdamW(trainable, lr=lr, weight_decay=0.0)
    y_train = labels[idx["train"]]
    cache: dict = {}
    n = len(sub["train"])
    best = (-1, float("nan"), float("nan"))
    for epoch in range(epochs):
        order = T.rng(seed, stream=2_000_000 + epoch).permutation(n)
        for b in range(0, n, batch_size):
            rows = order[b : b + batch_size]
            opt.zero_grad()
            h = encode_batch(batch_graphs([sub["train"][i] for i in rows], cache), params, cfg)
            out = h @ head["head.w"] + head["head.b"]
            y = y_train[rows]
            mask = ~np.isnan(y)
            if task.kind == "classification":
                loss = T.masked_bce_with_logits(out, y, mask)
            else:
                loss = T.masked_mse(out, y, mask)
            T.backward(loss)
            opt.step()
        v = evaluate(_predict(sub["valid"], params, head, cfg), labels[idx["valid"]], task)
        if best[0] < 0 or _better(v, best[1], task):
            t = evaluate(_predict(sub["test"], params, head, cfg), labels[idx["test"]], task)
            best = (epoch, v, t)
    return best


def write_metrics(path, result: FinetuneResult, dataset: str, seed: int) -> None:
    Path(path).write_text(json.dumps(result.report(dataset, seed), indent=2, sort_keys=True) + "\n")
