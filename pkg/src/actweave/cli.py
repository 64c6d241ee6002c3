"""Subcommand driver for the full pipeline.

Commands share one workspace directory (`--out`): each reads its inputs
from there by conventional name, fails with the missing file's name
otherwise, and records a run manifest on success.

Exit codes: 0 ok, 2 input/schema error, 3 numeric failure, 4 empty result.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import asa_model, concept_discovery, stage2
from .corpus_io import (PipelineConfig, check_feature_coverage, load_act,
                        load_checkpoint, load_corpus, load_embeddings,
                        load_features, save_act, save_checkpoint)
from .errors import ActweaveError, EmptyResultError, SchemaError
from .evaluation import evaluate, load_truth
from .synth import synth_dataset
from .taxonomy import load_taxonomy
from .vo_extract import load_lexicon

DATA_DIR = Path(__file__).parent / "data"

DESK_CONFIG = dict(d_img=64, d_w2v=32, d_text=64, d_alg=32, batch_size=16,
                   stage1_steps=300, stage2_steps=150)


def thread_cap() -> int:
    raw = os.environ.get("ACTWEAVE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise SchemaError(f"ACTWEAVE_THREADS must be an integer, got {raw!r}")


def _require(path: Path) -> Path:
    if not path.exists():
        raise SchemaError(f"missing input file: {path}")
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: PipelineConfig | None,
                    inputs: list[Path], outputs: list[Path],
                    timings: dict[str, float]) -> None:
    manifest = {
        "command": command,
        "config": config.to_dict() if config else None,
        "inputs": {p.name: _digest(p) for p in inputs if p.exists()},
        "outputs": [p.name for p in outputs],
        "timings_s": {k: round(v, 4) for k, v in timings.items()},
    }
    tmp = out / ".run_manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                   encoding="utf-8")
    os.replace(tmp, out / "run_manifest.json")


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_toml(_require(Path(args.config)))
    else:
        config = PipelineConfig(**DESK_CONFIG)
    if args.set:
        config = config.with_overrides(args.set)
    if args.seed is not None:
        config = config.with_overrides([f"seed={args.seed}"])
    return config


def _write_config_toml(config: PipelineConfig, path: Path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- commands -----------------------------------------------------------------

def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _load_config(args)
    t0 = time.perf_counter()
    paths = synth_dataset(out, seed=config.seed, n_topics=args.n_topics,
                          train_per_topic=args.train_per_topic,
                          test_per_topic=args.test_per_topic,
                          noise=args.noise, d_img=config.d_img,
                          d_w2v=config.d_w2v)
    _write_config_toml(config, out / "config.toml")
    _write_manifest(out, "synth", config, [],
                    list(paths.values()) + [out / "config.toml"],
                    {"synth": time.perf_counter() - t0})


def _load_common(out: Path, config: PipelineConfig):
    corpus = load_corpus(_require(out / "corpus.jsonl"))
    features = load_features(_require(out / "features.tsv"))
    if features.dim != config.d_img:
        raise SchemaError(
            f"features.tsv dim {features.dim} != config d_img {config.d_img}")
    check_feature_coverage(corpus, features)
    embeddings = load_embeddings(_require(out / "embeddings.vec"), seed=config.seed)
    if embeddings.dim != config.d_w2v:
        raise SchemaError(
            f"embeddings.vec dim {embeddings.dim} != config d_w2v {config.d_w2v}")
    return corpus, features, embeddings


def cmd_discover(args) -> None:
    out = Path(args.out)
    config = _load_config(args)
    t0 = time.perf_counter()
    corpus, features, embeddings = _load_common(out, config)
    lexicon = load_lexicon(Path(args.lexicon) if args.lexicon else DATA_DIR / "lexicon")
    graph = load_taxonomy(_require(out / "taxonomy.tsv"))

    train = [r for r in corpus if r.split == "train"]
    concepts = concept_discovery.gather_concepts(
        train, lexicon, config.min_concept_samples)
    if not concepts:
        raise EmptyResultError("no concepts extracted from the train split")
    all_concepts = list(concepts)
    concepts = concept_discovery.verify_visualness(
        concepts, features, config, max_workers=thread_cap())
    if not concepts:
        raise EmptyResultError("no concepts passed the visualness check")
    for concept in concepts:
        concept_discovery.build_representation(concept, features, embeddings)
    matrix = concept_discovery.similarity_matrix(concepts)
    tree = concept_discovery.build_act(matrix, concepts, graph, config.c_nn)
    save_act(tree, out / "act.json")

    kept = {id(c) for c in concepts}
    with open(out / "concepts_report.tsv", "w", encoding="utf-8") as f:
        for c in all_concepts:
            f.write(f"{c.pair.verb} {c.pair.object}\t{len(c.image_ids)}\t"
                    f"{c.visualness_ap:.6f}\t{int(id(c) in kept)}\n")
    _write_manifest(out, "discover", config,
                    [out / n for n in ("corpus.jsonl", "features.tsv",
                                       "embeddings.vec", "taxonomy.tsv")],
                    [out / "act.json", out / "concepts_report.tsv"],
                    {"discover": time.perf_counter() - t0})


def cmd_train(args) -> None:
    out = Path(args.out)
    config = _load_config(args)
    t0 = time.perf_counter()
    corpus, features, embeddings = _load_common(out, config)
    model = asa_model.AsaModel.init(config)
    model, opt_states, trace = asa_model.train_stage1(
        corpus, features, embeddings, model, config)
    save_checkpoint(model, opt_states, out / "stage1.ckpt")
    with open(out / "train_trace.tsv", "w", encoding="utf-8") as f:
        for entry in trace:
            f.write(f"{entry.step}\t{entry.loss!r}\n")
    _write_manifest(out, "train", config,
                    [out / n for n in ("corpus.jsonl", "features.tsv",
                                       "embeddings.vec")],
                    [out / "stage1.ckpt", out / "train_trace.tsv"],
                    {"train": time.perf_counter() - t0})


def cmd_match(args) -> None:
    out = Path(args.out)
    config = _load_config(args)
    t0 = time.perf_counter()
    features = load_features(_require(out / "features.tsv"))
    embeddings = load_embeddings(_require(out / "embeddings.vec"), seed=config.seed)
    tree = load_act(_require(out / "act.json"))
    categories = stage2.load_categories(_require(out / "categories.txt"))
    model, _ = load_checkpoint(_require(out / "stage1.ckpt"), config)
    results = stage2.match_categories(
        categories, tree, model, features, embeddings, config.theta_init,
        leaves_only=args.leaves_only)
    payload = []
    for cat, res in zip(categories, results):
        payload.append({
            "category": cat.name,
            "index": cat.index,
            "theta": res.theta_used,
            "exact_match": " ".join(res.exact_match_node.name)
            if res.exact_match_node else None,
            "best_node": " ".join(res.best_node.name) if res.best_node else None,
            "best_score": res.best_score,
            "matched_nodes": [" ".join(n.name) for n in res.matched_nodes],
            "n_training_images": len(res.training_images),
            "training_images": sorted(res.training_images),
        })
    (out / "matches.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "match", config,
                    [out / n for n in ("features.tsv", "act.json",
                                       "categories.txt", "stage1.ckpt")],
                    [out / "matches.json"],
                    {"match": time.perf_counter() - t0})


def cmd_finetune(args) -> None:
    out = Path(args.out)
    config = _load_config(args)
    t0 = time.perf_counter()
    features = load_features(_require(out / "features.tsv"))
    embeddings = load_embeddings(_require(out / "embeddings.vec"), seed=config.seed)
    categories = stage2.load_categories(_require(out / "categories.txt"))
    matches = json.loads(_require(out / "matches.json").read_text(encoding="utf-8"))
    results = []
    for entry in matches:
        results.append(stage2.MatchResult(
            category_index=entry["index"], exact_match_node=None,
            best_node=None, best_score=entry["best_score"],
            theta_used=entry["theta"],
            training_images=set(entry["training_images"])))
    model, _ = load_checkpoint(_require(out / "stage1.ckpt"), config)
    model, opt_states, _ = stage2.finetune(
        results, categories, model, features, embeddings, config)
    save_checkpoint(model, opt_states, out / "stage2.ckpt")
    _write_manifest(out, "finetune", config,
                    [out / n for n in ("features.tsv", "categories.txt",
                                       "matches.json", "stage1.ckpt")],
                    [out / "stage2.ckpt"],
                    {"finetune": time.perf_counter() - t0})


def cmd_predict(args) -> None:
    out = Path(args.out)
    config = _load_config(args)
    t0 = time.perf_counter()
    corpus = load_corpus(_require(out / "corpus.jsonl"))
    features = load_features(_require(out / "features.tsv"))
    embeddings = load_embeddings(_require(out / "embeddings.vec"), seed=config.seed)
    categories = stage2.load_categories(_require(out / "categories.txt"))
    ckpt = out / ("stage2.ckpt" if (out / "stage2.ckpt").exists() else "stage1.ckpt")
    model, _ = load_checkpoint(_require(ckpt), config)
    test_ids = sorted({r.image_id for r in corpus if r.split == "test"})
    if not test_ids:
        raise EmptyResultError("corpus has no test-split images")
    with open(out / "scores.tsv", "w", encoding="utf-8") as f:
        for image_id in test_ids:
            _, scores = stage2.predict(
                features.entries[image_id], categories, model, embeddings)
            f.write(image_id + "\t" + "\t".join(repr(float(s)) for s in scores) + "\n")
    _write_manifest(out, "predict", config,
                    [out / n for n in ("corpus.jsonl", "features.tsv",
                                       "categories.txt", ckpt.name)],
                    [out / "scores.tsv"],
                    {"predict": time.perf_counter() - t0})


def cmd_eval(args) -> None:
    out = Path(args.out)
    config = _load_config(args) if args.config else None
    t0 = time.perf_counter()
    categories = stage2.load_categories(_require(out / "categories.txt"))
    truth = load_truth(_require(out / "truth.json"))
    predictions = {}
    for lineno, line in enumerate(
            _require(out / "scores.tsv").read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) < 2:
            raise SchemaError(f"scores.tsv:{lineno}: malformed row")
        predictions[parts[0]] = np.array([float(x) for x in parts[1:]])
    report = evaluate(predictions, truth, ks=(1, 5))
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict([c.name for c in categories]),
                   indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "eval", config,
                    [out / n for n in ("categories.txt", "truth.json",
                                       "scores.tsv")],
                    [out / "report.json"],
                    {"eval": time.perf_counter() - t0})


def cmd_run_all(args) -> None:
    for fn in (cmd_synth, cmd_discover, cmd_train, cmd_match, cmd_finetune,
               cmd_predict, cmd_eval):
        fn(args)


# --- argument parsing ---------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", required=True, help="workspace directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                   help="override a config field")


def _add_synth_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-topics", type=int, default=3)
    p.add_argument("--train-per-topic", type=int, default=60)
    p.add_argument("--test-per-topic", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actweave",
        description="Action-concept discovery and image-text alignment pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "synth": cmd_synth, "discover": cmd_discover, "train": cmd_train,
        "match": cmd_match, "finetune": cmd_finetune, "predict": cmd_predict,
        "eval": cmd_eval, "run-all": cmd_run_all,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn, leaves_only=False)
        if name in ("synth", "run-all"):
            _add_synth_args(p)
        if name in ("discover",):
            p.add_argument("--lexicon", help="lexicon directory (default: shipped)")
        if name in ("run-all",):
            p.set_defaults(lexicon=None)
        if name in ("match", "run-all"):
            p.add_argument("--leaves-only", action="store_true",
                           help="match against leaf nodes only (flat concepts)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ActweaveError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
