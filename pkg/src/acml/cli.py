"""``acml`` command line: every subcommand writes its outputs under ``--out``.

Each run directory gets ``run.json`` (resolved config, seed, version,
command line) and ``metrics.json``. Usage errors exit with 2, runtime
errors with 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path


from . import __version__
from .encoders import GinConfig, ProjectionConfig
from .errors import AcmlError, ConfigError, SmilesError
from .molgraph import MoleculeRecord, parse_smiles, read_jsonl, write_jsonl

log = logging.getLogger("acml")

TRAIN_KEYS = ("tau", "batch_size", "epochs", "lr", "weight_decay", "normalize")
DATA_KEYS = ("molecules", "embeddings", "held_out")
EVAL_KEYS = ("k", "similarity", "block_size", "tau", "post_projection")
SECTIONS = {
    "data": set(DATA_KEYS),
    "encoder": {f.name for f in fields(GinConfig)},
    "projection": {f.name for f in fields(ProjectionConfig)},
    "train": set(TRAIN_KEYS),
    "eval": set(EVAL_KEYS),
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config


def load_config(path) -> dict:
    cfg = {s: {} for s in SECTIONS}
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        unknown = set(body) - SECTIONS[section]
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) in {section}: {sorted(unknown)}")
        cfg[section].update(body)
    return cfg


def _override(cfg, section, key, value):
    if value is not None:
        cfg[section][key] = value


def _acml_config(cfg: dict, seed: int, chem_dim: int):
    from .train import AcmlConfig

    try:
        return AcmlConfig(
            seed=seed,
            chem_dim=chem_dim,
            gin=GinConfig(**cfg["encoder"]),
            projection=ProjectionConfig(**cfg["projection"]),
            **cfg["train"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _run_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, args, config: dict, metrics: dict) -> None:
    run = {
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config,
    }
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True, default=str) + "\n")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


def _load_molecules(path):
    records = list(read_jsonl(path))
    graphs = [parse_smiles(r.smiles, id=r.id) for r in records]
    return records, graphs


def _parse_ks(text) -> list[int]:
    try:
        ks = sorted({int(x) for x in str(text).split(",") if x.strip()})
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError("--k values must be >= 1")
    return ks


# ------------------------------------------------------------ subcommands


def cmd_synth(args):
    from .synth import SynthSpec, gen_molecules, write_embeddings

    out = _run_dir(args)
    spec = SynthSpec(
        n_molecules=args.n,
        max_atoms=args.max_atoms,
        seed=args.seed,
        noise_sigma=args.noise,
        held_out_fraction=args.held_out_fraction,
        embed_dim=args.dim,
    )
    corpus = gen_molecules(spec)
    write_jsonl(out / "molecules.jsonl", corpus.records)
    write_embeddings(out / "chem.acem", corpus.graphs, spec)
    write_embeddings(out / "chem_clean.acem", corpus.graphs, spec, noise_sigma=0.0)
    (out / "held_out.txt").write_text("".join(i + "\n" for i in corpus.held_out))
    with open(out / "isomer_pairs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate_a", "candidate_b"])
        w.writerows(corpus.isomer_pairs)
    metrics = {
        "n_molecules": len(corpus.records),
        "n_isomer_pairs": len(corpus.isomer_pairs),
        "n_held_out": len(corpus.held_out),
    }
    _write_run(out, args, asdict(spec), metrics)
    return metrics


def cmd_ingest(args):
    out = _run_dir(args)
    src = Path(args.input)
    items = []
    if src.suffix == ".jsonl":
        items = [(r.id, r.smiles, r) for r in read_jsonl(src)]
    else:
        for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            mol_id = parts[1] if len(parts) > 1 else f"mol{lineno:06d}"
            items.append((mol_id, parts[0], None))
    kept, rejected = [], []
    for mol_id, smiles, rec in items:
        try:
            g = parse_smiles(smiles, id=mol_id)
        except SmilesError as exc:
            rejected.append((mol_id, smiles, type(exc).__name__, str(exc)))
            continue
        if g.n_atoms > args.max_atoms:
            rejected.append((mol_id, smiles, "OversizeGraph", f"{g.n_atoms} atoms"))
            continue
        kept.append(rec if rec is not None else MoleculeRecord(mol_id, smiles))
    write_jsonl(out / "molecules.jsonl", kept)
    with open(out / "rejected.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "smiles", "error", "detail"])
        w.writerows(rejected)
    metrics = {"n_input": len(items), "n_kept": len(kept), "n_rejected": len(rejected)}
    _write_run(out, args, {"input": str(src), "max_atoms": args.max_atoms}, metrics)
    return metrics


def cmd_pretrain(args):
    from .store import EmbeddingStore
    from .train import pretrain, save_checkpoint

    cfg = load_config(args.config)
    _override(cfg, "data", "molecules", args.data)
    _override(cfg, "data", "embeddings", args.embeddings)
    _override(cfg, "data", "held_out", args.held_out)
    _override(cfg, "train", "epochs", args.epochs)
    _override(cfg, "train", "tau", args.tau)
    for key in ("molecules", "embeddings"):
        if not cfg["data"].get(key):
            raise UsageError(f"pretrain needs data.{key} (flag --{'data' if key == 'molecules' else key})")
    out = _run_dir(args)
    records, graphs = _load_molecules(cfg["data"]["molecules"])
    store = EmbeddingStore.open(cfg["data"]["embeddings"])
    held = set()
    if cfg["data"].get("held_out"):
        held = set(Path(cfg["data"]["held_out"]).read_text().split())
    train_idx = [i for i, r in enumerate(records) if r.id not in held]
    chem = store.rows([records[i].id for i in train_idx])
    acfg = _acml_config(cfg, args.seed, store.dim)
    params, history = pretrain([graphs[i] for i in train_idx], chem, acfg)
    save_checkpoint(params, acfg, out / "checkpoint.ackp")
    metrics = {"n_train": len(train_idx), "final_loss": history[-1] if history else None, "loss": history}
    _write_run(out, args, {**cfg, "resolved": acfg.to_dict()}, metrics)
    return metrics


def cmd_embed(args):
    from .store import EmbeddingStore, write_store
    from .train import embed, embed_chem, load_checkpoint

    out = _run_dir(args)
    params, acfg = load_checkpoint(args.checkpoint)
    records, graphs = _load_molecules(args.data)
    ids = [r.id for r in records]
    readout, proj = embed(graphs, params, acfg)
    write_store(out / "graph.acem", ids, proj)
    write_store(out / "readout.acem", ids, readout)
    metrics = {"n_graphs": len(ids), "dim": int(proj.shape[1])}
    if args.chem:
        store = EmbeddingStore.open(args.chem)
        write_store(out / "chem_proj.acem", store.ids, embed_chem(store.matrix, params, acfg))
        metrics["n_chem"] = len(store)
    _write_run(out, args, {"checkpoint": str(args.checkpoint), "data": str(args.data), "chem": args.chem}, metrics)
    return metrics


def cmd_retrieve(args):
    from .retrieval import CandidatePool, topk_accuracy, write_retrieval_csv
    from .store import EmbeddingStore

    cfg = load_config(args.config)
    _override(cfg, "eval", "k", args.k)
    _override(cfg, "eval", "similarity", args.similarity)
    _override(cfg, "eval", "block_size", args.block_size)
    ks = _parse_ks(cfg["eval"].get("k", "1,10,100"))
    out = _run_dir(args)
    pool = CandidatePool.from_store(
        EmbeddingStore.open(args.pool, mmap=True), cfg["eval"].get("similarity", "dot")
    )
    queries = EmbeddingStore.open(args.queries)
    q_ids = queries.ids
    if args.targets:
        with open(args.targets, newline="") as fh:
            mapping = {row["query_id"]: row["target_id"] for row in csv.DictReader(fh)}
        targets = [mapping[q] for q in q_ids]
    else:
        targets = q_ids
    acc, ranks = topk_accuracy(
        queries.matrix, targets, pool, ks, block_size=int(cfg["eval"].get("block_size", 65536))
    )
    write_retrieval_csv(out / "retrieval.csv", q_ids, ranks, ks)
    metrics = {f"top{k}": v for k, v in acc.items()}
    metrics.update({"n_queries": len(q_ids), "pool_size": len(pool)})
    _write_run(out, args, cfg, metrics)
    return metrics


def cmd_isomer(args):
    from .retrieval import isomer_discriminate, write_isomer_csv
    from .store import EmbeddingStore
    from .train import embed, embed_chem, load_checkpoint

    out = _run_dir(args)
    params, acfg = load_checkpoint(args.checkpoint)
    tau = args.tau if args.tau is not None else acfg.tau
    records, graphs = _load_molecules(args.data)
    index = {r.id: i for i, r in enumerate(records)}
    with open(args.pairs, newline="") as fh:
        pairs = [(row["candidate_a"], row["candidate_b"]) for row in csv.DictReader(fh)]
    needed = sorted({m for p in pairs for m in p})
    for m in needed:
        if m not in index:
            raise AcmlError(f"pair member {m!r} is not in {args.data}")
    _, proj = embed([graphs[index[m]] for m in needed], params, acfg)
    gvec = dict(zip(needed, proj))
    chem_store = EmbeddingStore.open(args.chem)
    cvec = dict(zip(needed, embed_chem(chem_store.rows(needed), params, acfg)))
    rows, correct = [], 0
    for a, b in pairs:
        for truth in (a, b):
            choice, conf = isomer_discriminate(cvec[truth], gvec[a], gvec[b], tau)
            picked = a if choice == "A" else b
            correct += picked == truth
            rows.append((truth, a, b, choice, conf))
    write_isomer_csv(out / "isomer.csv", rows)
    metrics = {"n_pairs": len(pairs), "n_decisions": len(rows), "accuracy": correct / max(len(rows), 1)}
    _write_run(out, args, {"checkpoint": str(args.checkpoint), "tau": tau}, metrics)
    return metrics


def cmd_analyze(args):
    from .analysis import EXTERNAL_PROPERTIES, property_report
    from .train import embed, load_checkpoint

    out = _run_dir(args)
    params, acfg = load_checkpoint(args.checkpoint)
    records, graphs = _load_molecules(args.data)
    readout, proj = embed(graphs, params, acfg)
    emb = proj if args.post_projection else readout
    external = {}
    for name in EXTERNAL_PROPERTIES:
        vals = [r.props.get(name) for r in records]
        if any(v is not None for v in vals):
            external[name] = vals
    rows, notes = property_report(emb, graphs, external, out)
    metrics = {name: {"r_max": r, "w1": w1, "w2": w2} for name, r, w1, w2 in rows}
    metrics["notes"] = notes
    _write_run(out, args, {"post_projection": bool(args.post_projection)}, metrics)
    return metrics


def cmd_finetune(args):
    from .finetune import LR_GRID, TaskSpec, finetune_run, label_matrix, scaffold_split, write_metrics, write_split_csv
    from .train import load_checkpoint

    if args.no_checkpoint == bool(args.checkpoint):
        raise UsageError("finetune needs exactly one of --checkpoint or --no-checkpoint")
    cfg = load_config(args.config)
    out = _run_dir(args)
    records, graphs = _load_molecules(args.data)
    n_tasks = max((len(r.labels or []) for r in records), default=0)
    if n_tasks == 0:
        raise AcmlError(f"{args.data}: no labels found")
    task = TaskSpec(args.task, n_tasks)
    labels = label_matrix(records, n_tasks)
    if args.checkpoint:
        params, acfg = load_checkpoint(args.checkpoint)
        gin_cfg = acfg.gin
    else:
        params = None
        try:
            gin_cfg = GinConfig(**cfg["encoder"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    tags = scaffold_split(graphs, seed=args.seed)
    write_split_csv(out / "split.csv", [r.id for r in records], tags)
    lrs = [float(x) for x in args.lrs.split(",")] if args.lrs else list(LR_GRID)
    res = finetune_run(
        graphs, labels, task, tags, gin_cfg, params,
        lrs=lrs, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        freeze_backbone=args.freeze_backbone,
    )
    dataset = Path(args.data).stem
    write_metrics(out / "metrics_report.json", res, dataset, args.seed)
    metrics = res.report(dataset, args.seed)
    metrics["per_lr"] = {str(k): v for k, v in res.per_lr.items()}
    _write_run(out, args, {"encoder": asdict(gin_cfg), "lrs": lrs, "epochs": args.epochs,
                           "freeze_backbone": args.freeze_backbone, "pretrained": bool(args.checkpoint)}, metrics)
    return metrics


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acml", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"acml {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_, seed=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, required=True)
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic corpus with aligned embeddings", seed=True)
    sp.add_argument("--n", type=int, default=512)
    sp.add_argument("--max-atoms", type=int, default=30)
    sp.add_argument("--noise", type=float, default=0.01)
    sp.add_argument("--held-out-fraction", type=float, default=0.25)
    sp.add_argument("--dim", type=int, default=128)

    sp = add("ingest", cmd_ingest, "parse and validate SMILES into a JSONL dataset")
    sp.add_argument("--input", required=True, help="JSONL records or lines of 'SMILES [id]'")
    sp.add_argument("--max-atoms", type=int, default=99)

    sp = add("pretrain", cmd_pretrain, "contrastive pretraining", seed=True)
    sp.add_argument("--config")
    sp.add_argument("--data", help="molecules JSONL")
    sp.add_argument("--embeddings", help="frozen modality embeddings (ACEM)")
    sp.add_argument("--held-out", help="file of ids to keep out of training")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--tau", type=float)

    sp = add("embed", cmd_embed, "export graph embeddings from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--chem", help="also project these modality embeddings")

    sp = add("retrieve", cmd_retrieve, "rank a pool for every query")
    sp.add_argument("--config")
    sp.add_argument("--pool", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--targets", help="CSV query_id,target_id (default: same id)")
    sp.add_argument("--k")
    sp.add_argument("--similarity", choices=("dot", "cosine"))
    sp.add_argument("--block-size", type=int)

    sp = add("isomer", cmd_isomer, "two-candidate isomer discrimination")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pairs", required=True, help="CSV with candidate_a,candidate_b")
    sp.add_argument("--chem", required=True, help="modality embeddings of the pair members")
    sp.add_argument("--tau", type=float)

    sp = add("analyze", cmd_analyze, "PCA and property correlation report")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--post-projection", action="store_true")

    sp = add("finetune", cmd_finetune, "scaffold-split property fine-tuning", seed=True)
    sp.add_argument("--config")
    sp.add_argument("--data", required=True, help="JSONL with labels")
    sp.add_argument("--task", choices=("classification", "regression"), required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--no-checkpoint", action="store_true")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--lrs", help="comma-separated learning rates")
    sp.add_argument("--freeze-backbone", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        metrics = args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"acml: error: {exc}", file=sys.stderr)
        return 2
    except (AcmlError, OSError, ValueError, KeyError) as exc:
        print(f"acml {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    summary = {k: v for k, v in metrics.items() if not isinstance(v, (list, dict))}
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
