"""Command-line entry points: preprocess, train, eval, predict, ablate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .corpus import (DATASETS, SPLITS, CorpusError, NoDataFound, RawExample, Sentence, attach_dependencies,
                     compute_stats, load_split, read_conllu, read_sidecar, read_v2_file, split_paths, write_sidecar)
from .model import ABLATIONS, UnknownAblation
from .training import CheckpointVersionMismatch, evaluate, load_checkpoint, train

log = logging.getLogger("aste_graph")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "ablation", None):
        cfg.ablation = args.ablation
    if getattr(args, "backbone", None):
        cfg.model.encoder.backbone = args.backbone
    if getattr(args, "data_dir", None):
        cfg.data_dir = str(args.data_dir)
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "epochs", None):
        cfg.epochs = args.epochs
    if getattr(args, "run_name", None):
        cfg.run_name = args.run_name
    cfg.validate()
    return cfg


def parse_with_command(sentences: list[list[str]], command: str) -> list[dict]:
    """Run a user-supplied parser: whitespace-tokenized sentences on stdin, CoNLL-U on stdout."""
    text = "\n".join(" ".join(words) for words in sentences) + "\n"
    proc = subprocess.run(shlex.split(command), input=text, capture_output=True, text=True, check=True)
    with tempfile.NamedTemporaryFile("w", suffix=".conllu", delete=False) as fh:
        fh.write(proc.stdout)
    try:
        return read_conllu(fh.name)
    finally:
        Path(fh.name).unlink()


def _parser_records(parser_output: Path | None, dataset: str, split: str) -> list[dict] | None:
    if parser_output is None:
        return None
    for candidate in (parser_output / dataset / f"{split}.conllu", parser_output / dataset / f"{split}_dep.jsonl"):
        if candidate.exists():
            return read_conllu(candidate) if candidate.suffix == ".conllu" else read_sidecar(candidate)
    return None


def stats_table(rows: list[tuple[str, str, dict]]) -> str:
    header = f"{'dataset':<8}{'split':<7}{'NEU':>6}{'POS':>6}{'NEG':>6}{'#S':>7}{'#T':>7}"
    lines = [header]
    for ds, split, r in rows:
        lines.append(f"{ds:<8}{split:<7}{r['NEU']:>6}{r['POS']:>6}{r['NEG']:>6}{r['#S']:>7}{r['#T']:>7}")
    return "\n".join(lines)


def preprocess(raw_dir: Path, out_dir: Path, parser_output: Path | None = None,
               parser_cmd: str | None = None, datasets=DATASETS) -> list[tuple[str, str, dict]]:
    rows = []
    out_dir.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        for split in SPLITS:
            v2_path, _ = split_paths(raw_dir, ds, split)
            if not v2_path.exists():
                continue
            examples = read_v2_file(v2_path)
            rows.append((ds, split, compute_stats(examples).as_row()))
            records = _parser_records(parser_output, ds, split)
            if records is None and parser_cmd:
                records = parse_with_command([ex.words for ex in examples], parser_cmd)
            if records is None:
                continue
            if len(records) != len(examples):
                raise CorpusError(f"{len(records)} parses for {len(examples)} sentences", str(v2_path))
            for i, (ex, rec) in enumerate(zip(examples, records)):
                try:
                    attach_dependencies(ex, rec)
                except CorpusError as exc:
                    raise type(exc)(str(exc), f"{v2_path}:{i + 1}") from None
            target = out_dir / ds
            target.mkdir(parents=True, exist_ok=True)
            (target / v2_path.name).write_text(v2_path.read_text(encoding="utf-8"), encoding="utf-8")
            write_sidecar(split_paths(out_dir, ds, split)[1], records)
    if not rows:
        raise NoDataFound(f"no ASTE-Data-V2 split files under {raw_dir}")
    (out_dir / "stats.json").write_text(json.dumps(
        [{"dataset": d, "split": s, **r} for d, s, r in rows], indent=2) + "\n")
    return rows


def cmd_preprocess(args) -> int:
    datasets = args.datasets or DATASETS
    rows = preprocess(Path(args.data_dir), Path(args.out_dir),
                      Path(args.parser_output) if args.parser_output else None, args.parser_cmd, datasets)
    print(stats_table(rows))
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    train_set = load_split(cfg.data_dir, cfg.dataset, args.train_split)
    dev_set = load_split(cfg.data_dir, cfg.dataset, args.dev_split)
    _, result = train(cfg, train_set, dev_set, out_dir=args.out_dir, max_steps=args.max_steps)
    print(json.dumps({"run": cfg.run_name, "best_dev_f1": result.best_dev_f1, "best_epoch": result.best_epoch,
                      "checkpoint": str(result.checkpoint)}))
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    data_dir = args.data_dir or cfg.data_dir
    dataset = args.dataset or cfg.dataset
    sentences = load_split(data_dir, dataset, args.split)
    report, _ = evaluate(model, sentences, cfg.batch_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.data_dir, cfg.dataset = str(data_dir), dataset
    cfg.save(out / "config.json")
    (out / f"report_{dataset}_{args.split}.json").write_text(report.to_json() + "\n")
    table = report.table(dataset)
    (out / f"report_{dataset}_{args.split}.txt").write_text(table + "\n")
    print(table)
    return 0


def _read_predict_input(path: Path) -> list[list[str]]:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    # accept plain sentences or V2 lines (gold part ignored)
    return [ln.split("####")[0].split() for ln in lines]


def cmd_predict(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    sentences_words = _read_predict_input(Path(args.input))
    if args.sidecar:
        records = read_sidecar(args.sidecar)
    elif args.parser_cmd:
        records = parse_with_command(sentences_words, args.parser_cmd)
    else:
        raise CorpusError("predict needs --sidecar or --parser-cmd for dependency parses")
    if len(records) != len(sentences_words):
        raise CorpusError(f"{len(records)} parses for {len(sentences_words)} sentences")
    sentences: list[Sentence] = []
    for i, (words, rec) in enumerate(zip(sentences_words, records)):
        sentences.append(attach_dependencies(RawExample(" ".join(words), ()), rec, str(i)))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cfg.save(out_path.parent / "config.json")
    with out_path.open("w", encoding="utf-8") as fh:
        for start in range(0, len(sentences), cfg.batch_size):
            chunk = sentences[start:start + cfg.batch_size]
            for sent, triplets in zip(chunk, model.predict(chunk)):
                fh.write(json.dumps({"sentence_id": sent.sentence_id,
                                     "triplets": [t.to_json() for t in triplets]}) + "\n")
    return 0


def run_ablations(cfg: RunConfig, out_dir: Path, max_steps: int | None = None,
                  ablations=ABLATIONS, eval_split: str = "test") -> list[dict]:
    """Train and evaluate every ablation in turn; a failing run is recorded and skipped."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    train_set = load_split(cfg.data_dir, cfg.dataset, "train")
    dev_set = load_split(cfg.data_dir, cfg.dataset, "dev")
    test_set = load_split(cfg.data_dir, cfg.dataset, eval_split)
    rows = []
    results_path = out_dir / "ablation.jsonl"
    results_path.write_text("")
    for name in ablations:
        run_cfg = dataclasses.replace(cfg, ablation=name, run_name=f"{cfg.run_name}_{name}")
        started = time.time()
        try:
            model, result = train(run_cfg, train_set, dev_set, out_dir=out_dir, max_steps=max_steps)
            report, _ = evaluate(model, test_set, run_cfg.batch_size)
            row = {"ablation": name, "status": "ok", "dev_f1": result.best_dev_f1,
                   f"{eval_split}_precision": report.precision, f"{eval_split}_recall": report.recall,
                   f"{eval_split}_f1": report.f1}
        except Exception as exc:  # noqa: BLE001 - one broken row must not stop the suite
            log.exception("ablation %s failed", name)
            row = {"ablation": name, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        row["seconds"] = round(time.time() - started, 2)
        rows.append(row)
        with results_path.open("a") as fh:
            fh.write(json.dumps(row) + "\n")
        print(json.dumps(row), flush=True)
    return rows


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    rows = run_ablations(cfg, Path(args.out_dir), args.max_steps)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aste-graph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, data_required=False):
        p.add_argument("--config", help="run config JSON (unknown keys are errors)")
        p.add_argument("--data-dir", required=data_required)
        p.add_argument("--dataset", help=f"dataset directory name, e.g. {', '.join(DATASETS)}")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--ablation", choices=ABLATIONS)
        p.add_argument("--backbone", choices=("pretrained", "toy"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--max-steps", type=int)
        p.add_argument("--run-name")

    p = sub.add_parser("preprocess", help="validate parses, write sidecars, print corpus statistics")
    p.add_argument("--data-dir", required=True, help="directory holding <dataset>/<split>_triplets.txt")
    p.add_argument("--parser-output", help="directory with <dataset>/<split>.conllu or <split>_dep.jsonl")
    p.add_argument("--parser-cmd", help="command reading sentences on stdin and writing CoNLL-U")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--datasets", nargs="*")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train")
    run_flags(p)
    p.add_argument("--train-split", default="train")
    p.add_argument("--dev-split", default="dev")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--dataset")
    p.add_argument("--split", default="test")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="one whitespace-tokenized sentence per line")
    p.add_argument("--sidecar", help="dependency sidecar (JSON lines) aligned with --input")
    p.add_argument("--parser-cmd", help="command reading sentences on stdin and writing CoNLL-U")
    p.add_argument("--out", required=True, help="output JSON-lines file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and evaluate all eight ablation configurations")
    run_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CorpusError, ConfigError, UnknownAblation, CheckpointVersionMismatch, FileNotFoundError,
            subprocess.CalledProcessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
