"""
Reading ASTE-Data-V2 files and dependency sidecars.

A V2 line looks like::

    The price is reasonable .####[([1], [3], 'POS')]

Word indices are 0-based over the whitespace tokenization of the sentence.
Dependency parses live in a JSON-lines sidecar next to each split, one record
per sentence: ``{"tokens": [...], "heads": [...], "labels": [...]}`` where heads
are 1-based and 0 marks the root.
"""

from __future__ import annotations

import ast
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from . import POLARITIES

DATASETS = ("14lap", "14res", "15res", "16res")
SPLITS = ("train", "dev", "test")

_POLARITY_ALIASES = {
    "POS": "POS", "POSITIVE": "POS",
    "NEU": "NEU", "NEUTRAL": "NEU",
    "NEG": "NEG", "NEGATIVE": "NEG",
}


class CorpusError(ValueError):
    """Base class for data errors; carries an optional file:line location."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class MalformedLine(CorpusError):
    pass


class TokenMismatch(CorpusError):
    pass


class CyclicHeads(CorpusError):
    pass


class MultipleRoots(CorpusError):
    pass


class NoDataFound(CorpusError):
    pass


@dataclass(frozen=True)
class Triplet:
    """Aspect and opinion spans are inclusive (start, end) word indices."""

    aspect: tuple[int, int]
    opinion: tuple[int, int]
    polarity: str

    def to_json(self) -> dict:
        return {"aspect": list(self.aspect), "opinion": list(self.opinion), "polarity": self.polarity}


@dataclass(frozen=True)
class RawTriplet:
    aspect: tuple[int, ...]
    opinion: tuple[int, ...]
    polarity: str


@dataclass(frozen=True)
class RawExample:
    text: str
    triplets: tuple[RawTriplet, ...]

    @property
    def words(self) -> list[str]:
        return self.text.split()

    def span_triplets(self) -> list[Triplet]:
        return [Triplet((t.aspect[0], t.aspect[-1]), (t.opinion[0], t.opinion[-1]), t.polarity) for t in self.triplets]


@dataclass
class Sentence:
    words: list[str]
    dep_heads: list[int]
    dep_labels: list[str]
    gold_triplets: list[Triplet] = field(default_factory=list)
    sentence_id: str = ""

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class CorpusStats:
    NEU: int = 0
    POS: int = 0
    NEG: int = 0
    sentences: int = 0
    triplets: int = 0

    def as_row(self) -> dict:
        return {"NEU": self.NEU, "POS": self.POS, "NEG": self.NEG, "#S": self.sentences, "#T": self.triplets}


def normalize_polarity(label: str) -> str:
    try:
        return _POLARITY_ALIASES[label.strip().upper()]
    except KeyError:
        raise MalformedLine(f"unknown polarity {label!r}") from None


def _index_run(indices, n_words: int, what: str) -> tuple[int, ...]:
    if not isinstance(indices, (list, tuple)) or not indices:
        raise MalformedLine(f"{what} indices must be a non-empty list, got {indices!r}")
    if not all(isinstance(i, int) and not isinstance(i, bool) for i in indices):
        raise MalformedLine(f"{what} indices must be integers: {indices!r}")
    if any(i < 0 or i >= n_words for i in indices):
        raise MalformedLine(f"{what} index out of range for {n_words} words: {indices!r}")
    if list(indices) != list(range(indices[0], indices[0] + len(indices))):
        raise MalformedLine(f"{what} indices are not a contiguous ascending run: {indices!r}")
    return tuple(indices)


def parse_v2_line(line: str) -> RawExample:
    line = line.rstrip("\r\n")
    if "####" not in line:
        raise MalformedLine("missing '####' separator")
    text, _, payload = line.partition("####")
    words = text.split()
    if not words:
        raise MalformedLine("empty sentence")
    try:
        decoded = ast.literal_eval(payload.strip())
    except (ValueError, SyntaxError) as exc:
        raise MalformedLine(f"unparsable triplet literal: {exc}") from None
    if not isinstance(decoded, list):
        raise MalformedLine("triplet payload is not a list")
    triplets = []
    for item in decoded:
        if not isinstance(item, (list, tuple)) or len(item) != 3 or not isinstance(item[2], str):
            raise MalformedLine(f"bad triplet {item!r}")
        triplets.append(RawTriplet(
            _index_run(item[0], len(words), "aspect"),
            _index_run(item[1], len(words), "opinion"),
            normalize_polarity(item[2]),
        ))
    return RawExample(" ".join(words), tuple(triplets))


def format_v2_line(ex: RawExample) -> str:
    payload = [(list(t.aspect), list(t.opinion), t.polarity) for t in ex.triplets]
    return f"{ex.text}####{payload!r}"


def read_v2_file(path: str | Path) -> list[RawExample]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_v2_line(line))
            except CorpusError as exc:
                raise MalformedLine(str(exc), f"{path}:{lineno}") from None
    return out


def compute_stats(split: Iterable[RawExample]) -> CorpusStats:
    counts: Counter = Counter()
    n_sent = 0
    for ex in split:
        n_sent += 1
        counts.update(t.polarity for t in ex.triplets)
    return CorpusStats(counts["NEU"], counts["POS"], counts["NEG"], n_sent, sum(counts[p] for p in POLARITIES))


def check_tree(heads: Sequence[int]) -> None:
    """Raise unless ``heads`` (1-based, 0 = root) encodes a single rooted tree."""
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise MultipleRoots(f"expected exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if not 0 <= h <= n:
            raise CyclicHeads(f"head {h} of word {i + 1} is outside 0..{n}")
        if h == i + 1:
            raise CyclicHeads(f"word {i + 1} is its own head")
    # every word must reach the root within n steps
    for start in range(n):
        node, steps = start, 0
        while heads[node] != 0:
            node = heads[node] - 1
            steps += 1
            if steps > n:
                raise CyclicHeads(f"cycle through word {start + 1}")


def attach_dependencies(ex: RawExample, sidecar_entry: dict, sentence_id: str = "") -> Sentence:
    words = ex.words
    tokens = list(sidecar_entry["tokens"])
    heads = [int(h) for h in sidecar_entry["heads"]]
    labels = list(sidecar_entry.get("labels") or ["dep"] * len(heads))
    if len(tokens) != len(words):
        raise TokenMismatch(f"sidecar has {len(tokens)} tokens, sentence has {len(words)} words")
    if tokens != words:
        bad = next(i for i, (a, b) in enumerate(zip(tokens, words)) if a != b)
        raise TokenMismatch(f"token {bad} differs: sidecar {tokens[bad]!r} vs sentence {words[bad]!r}")
    if len(heads) != len(words) or len(labels) != len(words):
        raise TokenMismatch("heads/labels length differs from token count")
    check_tree(heads)
    return Sentence(words, heads, labels, ex.span_triplets(), sentence_id)


def read_sidecar(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_sidecar(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"tokens": rec["tokens"], "heads": rec["heads"], "labels": rec["labels"]}) + "\n")


def read_conllu(path: str | Path) -> list[dict]:
    """Read parser output in CoNLL-U into sidecar records (multiword/empty nodes skipped)."""
    records, cur = [], {"tokens": [], "heads": [], "labels": []}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                if cur["tokens"]:
                    records.append(cur)
                cur = {"tokens": [], "heads": [], "labels": []}
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if "-" in cols[0] or "." in cols[0]:
                continue
            cur["tokens"].append(cols[1])
            cur["heads"].append(int(cols[6]))
            cur["labels"].append(cols[7])
    if cur["tokens"]:
        records.append(cur)
    return records


def split_paths(data_dir: str | Path, dataset: str, split: str) -> tuple[Path, Path]:
    base = Path(data_dir) / dataset
    return base / f"{split}_triplets.txt", base / f"{split}_dep.jsonl"


def load_split(data_dir: str | Path, dataset: str, split: str) -> list[Sentence]:
    v2_path, dep_path = split_paths(data_dir, dataset, split)
    examples = read_v2_file(v2_path)
    records = read_sidecar(dep_path)
    if len(records) != len(examples):
        raise TokenMismatch(f"{len(records)} sidecar records for {len(examples)} sentences", str(dep_path))
    out = []
    for i, (ex, rec) in enumerate(zip(examples, records)):
        try:
            out.append(attach_dependencies(ex, rec, f"{dataset}/{split}/{i}"))
        except CorpusError as exc:
            raise type(exc)(str(exc), f"{dep_path}:{i + 1}") from None
    return out


def batch_indices(n_items: int, size: int, shuffle: bool = False, seed: int = 0) -> list[list[int]]:
    if size < 1:
        raise ValueError("batch size must be >= 1")
    order = list(range(n_items))
    if shuffle:
        random.Random(seed).shuffle(order)
    return [order[i:i + size] for i in range(0, n_items, size)]


def batch(sentences: Sequence[Sentence], size: int, shuffle: bool = False, seed: int = 0) -> Iterator[list[Sentence]]:
    """Group sentences into lists of at most ``size``; padding happens in the collator."""
    for idx in batch_indices(len(sentences), size, shuffle, seed):
        yield [sentences[i] for i in idx]
