"""Command-line entry point: train, predict, evaluate, analyze, ablate, gradcheck, tags."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import VARIANTS, ConfigError, RunConfig, load_config, save_config, with_overrides
from .data import ParseError, ValidationError, load_schema, parse_dataset
from .embedding import EmbeddingError
from .evaluation import CRITERIA, bucketed_report
from .experiment import embed_documents, fit, kfold_splits, predict_documents, score
from .tagging import TaggingError, decode_labels, encode_labels, from_conll, to_conll
from .training import check_gradients, gradcheck_fixture, load_checkpoint, save_checkpoint

log = logging.getLogger("spantag")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Configuration is unusable for the requested command (exit code 2)."""


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@contextlib.contextmanager
def locked_dir(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _require(cfg: RunConfig, *keys: str) -> dict[str, Path]:
    found = {}
    for key in keys:
        path = cfg.resolve(getattr(cfg.paths, key))
        if path is None:
            raise UsageError(f"paths.{key} is required for this command")
        if key != "out" and not path.exists():
            raise UsageError(f"paths.{key} does not exist: {path}")
        found[key] = path
    return found


def _load_data(cfg: RunConfig, key: str = "dataset"):
    paths = _require(cfg, key, "schema")
    schema = load_schema(paths["schema"])
    dataset = parse_dataset(paths[key], schema, cfg.evaluate.max_length)
    emb_path = cfg.resolve(cfg.paths.embeddings)
    if cfg.embedder.mode == "precomputed" and (emb_path is None or not emb_path.exists()):
        raise UsageError("paths.embeddings must point to an existing file in precomputed mode")
    embeddings = embed_documents(dataset.documents, cfg.embedder_config(), emb_path)
    return dataset, embeddings


def _write_reports(reports, out: Path, prefix: str = "report") -> None:
    for criterion, report in reports.items():
        _dump(report.to_dict(), out / f"{prefix}_{criterion}.json")
        print(report.table())


def _train_once(cfg: RunConfig, dataset, embeddings, out: Path):
    model, result = fit(dataset, embeddings, cfg.model_config(), cfg.train, out / "train_log.jsonl")
    save_checkpoint(out / "model.npz", model, cfg.train, cfg.embedder_config())
    return model, result


def cmd_train(cfg: RunConfig, args) -> int:
    dataset, embeddings = _load_data(cfg)
    with locked_dir(_require(cfg, "out")["out"]) as out:
        save_config(cfg, out / "config.toml")
        k = cfg.evaluate.k_folds
        runs = max(1, args.runs)
        for r in range(runs):
            run_cfg = replace(cfg, train=replace(cfg.train, seed=cfg.train.seed + r))
            run_out = out / f"run{r}" if runs > 1 else out
            run_out.mkdir(exist_ok=True)
            if not k:
                _train_once(run_cfg, dataset, embeddings, run_out)
                continue
            summary = []
            for i, (train_idx, test_idx) in enumerate(kfold_splits(len(dataset), k, run_cfg.train.seed)):
                fold_out = run_out / f"fold{i}"
                fold_out.mkdir(exist_ok=True)
                model, _ = _train_once(run_cfg, dataset.subset(train_idx), [embeddings[j] for j in train_idx], fold_out)
                _dump({"train": train_idx.tolist(), "test": test_idx.tolist()}, fold_out / "split.json")
                preds = predict_documents(model, [embeddings[j] for j in test_idx])
                reports = score([dataset[j] for j in test_idx], preds, cfg.evaluate.criteria, cfg.evaluate.aggregation)
                _write_reports(reports, fold_out)
                summary.append({"fold": i, **{c: rep.overall["f1"] for c, rep in reports.items()}})
            _dump(summary, run_out / "folds.json")
    return EXIT_OK


def _predictions(cfg: RunConfig, dataset, embeddings):
    pred_path = cfg.resolve(cfg.paths.predictions)
    if pred_path is not None and pred_path.exists():
        text = pred_path.read_text(encoding="utf-8").strip()
        preds = json.loads(text) if text else []
        if not isinstance(preds, list):
            raise UsageError("prediction file must hold a JSON array")
        if len(preds) == 0 and len(dataset):
            preds = [{"entities": [], "relations": []} for _ in dataset]
        return preds
    ckpt = _require(cfg, "checkpoint")["checkpoint"]
    model, _ = load_checkpoint(ckpt)
    return predict_documents(model, embeddings)


def cmd_predict(cfg: RunConfig, args) -> int:
    ckpt = _require(cfg, "checkpoint")["checkpoint"]
    model, _ = load_checkpoint(ckpt)
    _, embeddings = _load_data(cfg)
    preds = predict_documents(model, embeddings)
    with locked_dir(_require(cfg, "out")["out"]) as out:
        _dump(preds, out / "predictions.json")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    dataset, embeddings = _load_data(cfg)
    preds = _predictions(cfg, dataset, embeddings)
    reports = score(dataset.documents, preds, cfg.evaluate.criteria, cfg.evaluate.aggregation)
    with locked_dir(_require(cfg, "out")["out"]) as out:
        _write_reports(reports, out)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    dataset, embeddings = _load_data(cfg)
    preds = _predictions(cfg, dataset, embeddings)
    agg = cfg.evaluate.aggregation
    with locked_dir(_require(cfg, "out")["out"]) as out:
        rep = bucketed_report(dataset.documents, preds, "entity_length", "ner", agg)
        _dump(rep.to_dict(), out / "analysis_entity_length_ner.json")
        for criterion in ("ner", "re"):
            rep = bucketed_report(dataset.documents, preds, "text_length", criterion, agg)
            _dump(rep.to_dict(), out / f"analysis_text_length_{criterion}.json")
        print(f"wrote bucketed reports to {out}")
    return EXIT_OK


ABLATION_ROWS = ("full", "no_re_to_ner", "no_ner_to_re", "none")


def cmd_ablate(cfg: RunConfig, args) -> int:
    dataset, embeddings = _load_data(cfg)
    if cfg.paths.eval_dataset:
        eval_set, eval_emb = _load_data(cfg, "eval_dataset")
    else:
        eval_set, eval_emb = dataset, embeddings
    variants = list(ABLATION_ROWS) + (["no_label"] if args.include_no_label else [])
    rows = []
    with locked_dir(_require(cfg, "out")["out"]) as out:
        for variant in variants:
            vcfg = replace(cfg, model=replace(cfg.model, mode=variant))
            vout = out / variant
            vout.mkdir(exist_ok=True)
            model, _ = _train_once(vcfg, dataset, embeddings, vout)
            reports = score(eval_set.documents, predict_documents(model, eval_emb), ("ner", "re", "re_plus"),
                            cfg.evaluate.aggregation)
            rows.append({"variant": variant, **{c: rep.overall["f1"] for c, rep in reports.items()}})
        _dump(rows, out / "ablation.json")
        print(f"{'variant':<14}{'NER':>8}{'RE':>8}{'RE+':>8}")
        for row in rows:
            print(f"{row['variant']:<14}{row['ner']:>8.4f}{row['re']:>8.4f}{row['re_plus']:>8.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    modes = [cfg.model.mode] if args.mode else list(ABLATION_ROWS)
    results = {}
    ok = True
    for mode in modes:
        model, batch = gradcheck_fixture(mode, seed=cfg.train.seed)
        report = check_gradients(model, batch, tolerance=args.tolerance)
        results[mode] = report.to_dict()
        ok &= report.passed
        status = "PASS" if report.passed else "FAIL"
        print(f"{mode:<14} {status}  max relative error {report.max_error:.3e}")
    if cfg.paths.out:
        with locked_dir(_require(cfg, "out")["out"]) as out:
            _dump(results, out / "gradcheck.json")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_tags(cfg: RunConfig, args) -> int:
    if args.from_conll:
        docs = []
        for tokens, labels in from_conll(Path(args.from_conll).read_text(encoding="utf-8")):
            ents = sorted(decode_labels(labels), key=lambda e: (e.start, e.end, e.type))
            docs.append({"tokens": tokens, "entities": [{"type": e.type, "start": e.start, "end": e.end} for e in ents],
                         "relations": []})
        sys.stdout.write(json.dumps(docs, ensure_ascii=False, indent=1) + "\n")
        return EXIT_OK
    paths = _require(cfg, "dataset", "schema")
    dataset = parse_dataset(paths["dataset"], load_schema(paths["schema"]), cfg.evaluate.max_length)
    sys.stdout.write(to_conll((doc.tokens, encode_labels(doc)) for doc in dataset))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "tags": cmd_tags,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spantag", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=VARIANTS)
    common.add_argument("--criterion", choices=CRITERIA, action="append")
    common.add_argument("--folds", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--epochs", type=int)
    common.add_argument("--dataset")
    common.add_argument("--schema")
    common.add_argument("--embeddings")
    common.add_argument("--checkpoint")
    common.add_argument("--predictions")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train a model (optionally k-fold)")
    p.add_argument("--runs", type=int, default=1, help="independent runs with consecutive seeds")
    sub.add_parser("predict", parents=[common], help="write predictions.json from a checkpoint")
    sub.add_parser("evaluate", parents=[common], help="score predictions against gold")
    sub.add_parser("analyze", parents=[common], help="length-bucketed reports")
    p = sub.add_parser("ablate", parents=[common], help="train and score each interaction mode")
    p.add_argument("--include-no-label", action="store_true", help="add the no_label variant as a fifth row")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p = sub.add_parser("tags", parents=[common], help="dataset <-> CoNLL-style token/label text")
    p.add_argument("--from-conll", metavar="PATH", help="decode a CoNLL file to JSON instead")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(
            cfg, seed=args.seed, mode=args.mode, criterion=args.criterion, folds=args.folds, out=args.out,
            epochs=args.epochs, dataset=args.dataset, schema=args.schema, embeddings=args.embeddings,
            checkpoint=args.checkpoint, predictions=args.predictions,
        )
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"spantag: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, EmbeddingError, TaggingError, RuntimeError, ValueError, OSError) as exc:
        print(f"spantag: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
