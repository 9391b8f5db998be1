"""Shuffled kinship documents built by apex routing: climb ``a`` parent links, then
descend ``b`` child links; the answer is the relation at net generation offset a - b."""

from __future__ import annotations

import itertools
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

RELATIONS = ("grandchild", "child", "sibling", "parent", "grandparent")
OFFSET_TO_RELATION = {-2: "grandchild", -1: "child", 0: "sibling", 1: "parent", 2: "grandparent"}
RELATION_TO_OFFSET = {v: k for k, v in OFFSET_TO_RELATION.items()}
LABEL_INDEX = {r: i for i, r in enumerate(RELATIONS)}
MAX_OFFSET = 2

_ONSETS = ["B", "D", "F", "G", "H", "J", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z"]
_RIMES = ["ara", "eno", "ilo", "ova", "uma", "eta", "ira", "osi", "ane", "ulo", "emi", "ado", "ive", "oro", "una"]
NAMES: tuple[str, ...] = tuple(o + r for o, r in itertools.product(_ONSETS, _RIMES))

QUERY_TEMPLATE = "how is {b} related to {a} ?"
FACT_TEMPLATE = "{subj} is the {rel} of {obj} ."
_FACT_RE = re.compile(r"^(\w+) is the (\w+) of (\w+) \.$")


class ChainError(ValueError):
    pass


@dataclass
class FamilyInstance:
    facts: list[tuple[str, str, str]]  # (subject, relation, object) along the path, unshuffled
    distractors: list[tuple[str, str, str]]
    sentences: list[str]  # facts + distractors, shuffled
    query: tuple[str, str]  # (A, B): "how is B related to A"
    label: str
    depth: int
    a: int
    b: int

    @property
    def complexity(self) -> int:
        return self.depth

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]

    def document(self) -> str:
        return " ".join(self.sentences + [QUERY_TEMPLATE.format(a=self.query[0], b=self.query[1])])

    def to_json(self) -> str:
        return json.dumps({"sentences": self.sentences, "query": list(self.query), "label": self.label,
                           "depth": self.depth, "a": self.a, "b": self.b})

    @classmethod
    def from_dict(cls, rec: dict) -> "FamilyInstance":
        triples = [parse_sentence(s) for s in rec["sentences"]]
        facts, distractors = _split_path(triples, tuple(rec["query"]))
        return cls(facts, distractors, list(rec["sentences"]), tuple(rec["query"]), rec["label"],
                   int(rec["depth"]), int(rec["a"]), int(rec["b"]))


def render(triple: tuple[str, str, str]) -> str:
    subj, rel, obj = triple
    return FACT_TEMPLATE.format(subj=subj, rel=rel, obj=obj)


def parse_sentence(sentence: str) -> tuple[str, str, str]:
    m = _FACT_RE.match(sentence)
    if not m:
        raise ChainError(f"not a fact sentence: {sentence!r}")
    return m.group(1), m.group(2), m.group(3)


def feasible_splits(depth: int, max_offset: int = MAX_OFFSET) -> list[tuple[int, int]]:
    return [(a, depth - a) for a in range(1, depth + 1) if abs(2 * a - depth) <= max_offset]


def hard_negatives(label: str) -> list[str]:
    """Other relations whose offset has the same parity as ``label``."""
    off = RELATION_TO_OFFSET[label]
    return [r for r in RELATIONS if r != label and (RELATION_TO_OFFSET[r] - off) % 2 == 0]


def _walk(triples: Sequence[tuple[str, str, str]], start: str, end: str) -> list[tuple[str, str, str]]:
    # each path fact names the next entity as subject and the current one as object
    by_object: dict[str, list[tuple[str, str, str]]] = {}
    for tr in triples:
        by_object.setdefault(tr[2], []).append(tr)
    path, cur, seen = [], start, {start}
    while cur != end:
        links = [tr for tr in by_object.get(cur, []) if tr[1] in ("parent", "child")]
        if len(links) != 1:
            raise ChainError(f"chain breaks at {cur!r} ({len(links)} outgoing links)")
        tr = links[0]
        if tr[0] in seen:
            raise ChainError(f"chain revisits {tr[0]!r}")
        path.append(tr)
        cur = tr[0]
        seen.add(cur)
    return path


def _split_path(triples, query):
    path = _walk(triples, query[0], query[1])
    on_path = set(path)
    return path, [tr for tr in triples if tr not in on_path]


def offset_oracle(inst: FamilyInstance | dict) -> str:
    """Recover the relation by walking the fact sentences from A to B: +1 per parent link,
    -1 per child link."""
    if isinstance(inst, FamilyInstance):
        sentences, query = inst.sentences, inst.query
    else:
        sentences, query = inst["sentences"], tuple(inst["query"])
    path = _walk([parse_sentence(s) for s in sentences], query[0], query[1])
    offset = sum(1 if rel == "parent" else -1 for _, rel, _ in path)
    if offset not in OFFSET_TO_RELATION:
        raise ChainError(f"offset {offset} has no relation word")
    return OFFSET_TO_RELATION[offset]


def gen_family(
    depth: int,
    rng: np.random.Generator | int | None = None,
    split: Optional[tuple[int, int]] = None,
    names: Sequence[str] = NAMES,
) -> FamilyInstance:
    if depth < 2:
        raise ValueError("depth must be >= 2")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    splits = feasible_splits(depth)
    if not splits:
        raise ValueError(f"no (up, down) split of depth {depth} lands within offset +-{MAX_OFFSET}")
    a, b = split if split is not None else splits[int(rng.integers(len(splits)))]
    if (a, b) not in splits:
        raise ValueError(f"split {(a, b)} infeasible for depth {depth}")

    n_distract = int(rng.integers(2, 2 * depth + 1))
    n_names = depth + 1 + 2 * ((n_distract + 1) // 2)
    if n_names > len(names):
        raise ValueError("name pool too small")
    picked = [names[i] for i in rng.choice(len(names), size=n_names, replace=False)]
    chain, spare = picked[: depth + 1], picked[depth + 1:]

    facts = []
    for i in range(depth):
        rel = "parent" if i < a else "child"
        facts.append((chain[i + 1], rel, chain[i]))

    distractors = []
    for k in range(0, n_distract, 2):
        x, y = spare[k], spare[k + 1]
        r1, r2 = (RELATIONS[j] for j in rng.choice(len(RELATIONS), size=2, replace=False))
        distractors.append((x, r1, y))
        if k + 1 < n_distract:
            distractors.append((x, r2, y))

    triples = facts + distractors
    sentences = [render(triples[i]) for i in rng.permutation(len(triples))]
    label = OFFSET_TO_RELATION[a - b]
    return FamilyInstance(facts, distractors, sentences, (chain[0], chain[-1]), label, depth, a, b)


def gen_family_batch(depths: Iterable[int], rng: np.random.Generator) -> list[FamilyInstance]:
    return [gen_family(d, rng) for d in depths]


def parity_confusion(labels: Sequence[str], predictions: Sequence[str]) -> dict:
    """Confusion counts plus how much of the error mass stays inside a parity group
    (sibling/grandparent/grandchild vs parent/child)."""
    counts = Counter(zip(labels, predictions))
    matrix = {t: {p: counts.get((t, p), 0) for p in RELATIONS} for t in RELATIONS}
    total = len(labels)
    correct = sum(counts.get((r, r), 0) for r in RELATIONS)
    errors = total - correct
    same_parity = sum(c for (t, p), c in counts.items()
                      if t != p and (RELATION_TO_OFFSET[t] - RELATION_TO_OFFSET[p]) % 2 == 0)
    return {
        "matrix": matrix,
        "accuracy": correct / total if total else 0.0,
        "errors": errors,
        "off_diagonal": errors / total if total else 0.0,
        "within_parity_error_share": same_parity / errors if errors else 0.0,
    }


# -- tokenization ------------------------------------------------------------

SPECIAL = ("[PAD]", "[CLS]")
FUNCTION_WORDS = ("is", "the", "of", "how", "related", "to", ".", "?")
_TOKEN_RE = re.compile(r"\w+|[.?]")


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, toks: Iterable[str]) -> list[int]:
        try:
            return [self.index[t] for t in toks]
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path) as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def family_vocab(names: Sequence[str] = NAMES) -> Vocab:
    return Vocab(list(SPECIAL) + list(FUNCTION_WORDS) + list(RELATIONS) + list(names))


def tokenize(doc: str) -> list[str]:
    return _TOKEN_RE.findall(doc)


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)
