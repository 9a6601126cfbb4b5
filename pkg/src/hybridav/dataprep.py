"""Corpus splits, pair resampling and PAN-style pair files.

Subsets are named by the (author, fandom) agreement of a pair:
``SA_SF`` (1, 1), ``SA_DF`` (1, 0), ``DA_SF`` (0, 1), ``DA_DF`` (0, 0).
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .encoder import Document
from .errors import CorpusTooSmall, IdMismatch, InvalidConfig, MalformedRecord, QuotaInfeasible

SUBSETS = ("SA_SF", "SA_DF", "DA_SF", "DA_DF")
SUBSET_LABELS = {"SA_SF": (1, 1), "SA_DF": (1, 0), "DA_SF": (0, 1), "DA_DF": (0, 0)}
SPLIT_NAMES = ("training", "calibration", "validation")


def subset_of(a: int, f: int) -> str:
    return ("SA" if a else "DA") + "_" + ("SF" if f else "DF")


@dataclass(frozen=True)
class Trial:
    id: str
    doc1: Document
    doc2: Document
    a: int
    f: int

    @property
    def subset(self) -> str:
        return subset_of(self.a, self.f)

    def swapped(self) -> "Trial":
        return Trial(self.id, self.doc2, self.doc1, self.a, self.f)


def make_trial(trial_id: str, d1: Document, d2: Document) -> Trial:
    return Trial(trial_id, d1, d2, int(d1.author_id == d2.author_id), int(d1.fandom_id == d2.fandom_id))


@dataclass
class SplitSpec:
    authors: dict[str, set]
    fandoms: dict[str, set]
    docs: dict[str, list]
    removed: list = field(default_factory=list)
    quotas: dict[str, dict] = field(default_factory=dict)

    def check_disjoint(self) -> None:
        names = list(self.authors)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if self.authors[a] & self.authors[b] or self.fandoms[a] & self.fandoms[b]:
                    raise AssertionError(f"splits {a} and {b} overlap")
        for name, docs in self.docs.items():
            for d in docs:
                if d.author_id not in self.authors[name] or d.fandom_id not in self.fandoms[name]:
                    raise AssertionError(f"document {d.id} does not belong to split {name}")

    def to_json(self) -> dict:
        return {
            "authors": {k: sorted(v) for k, v in self.authors.items()},
            "fandoms": {k: sorted(v) for k, v in self.fandoms.items()},
            "docs": {k: [d.id for d in v] for k, v in self.docs.items()},
            "removed": [d.id for d in self.removed],
            "quotas": self.quotas,
        }


def _split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    ratios = np.asarray(ratios, dtype=float)
    raw = ratios / ratios.sum() * n
    counts = np.floor(raw).astype(int)
    counts[counts == 0] = 1
    # hand out the remainder by largest fractional part, take back from the largest split
    while counts.sum() < n:
        counts[int(np.argmax(raw - counts))] += 1
    while counts.sum() > n:
        counts[int(np.argmax(counts))] -= 1
    return counts.tolist()


def _assign_authors(docs, fandom_split, n_splits, rng):
    per_author = defaultdict(Counter)
    for d in docs:
        per_author[d.author_id][fandom_split[d.fandom_id]] += 1
    author_split = {}
    for author in sorted(per_author):
        votes = per_author[author]
        best = max(votes.values())
        tied = sorted(s for s, c in votes.items() if c == best)
        author_split[author] = tied[int(rng.integers(len(tied)))] if len(tied) > 1 else tied[0]
    return author_split


def split_corpus(docs: Sequence[Document], ratios=(0.6, 0.2, 0.2), seed: int = 0,
                 n_restarts: int = 64) -> SplitSpec:
    """Author- and fandom-disjoint training/calibration/validation splits.

    Fandoms are dealt to the splits according to ``ratios``; each author then
    joins the split holding most of their documents, and documents whose
    author and fandom ended up in different splits are dropped. Among
    ``n_restarts`` seeded random fandom deals the one dropping the fewest
    documents is kept.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise InvalidConfig(f"need three positive split ratios, got {ratios}")
    authors = sorted({d.author_id for d in docs})
    fandoms = sorted({d.fandom_id for d in docs})
    if len(authors) < 3 or len(fandoms) < 3:
        raise CorpusTooSmall(f"need >= 3 authors and >= 3 fandoms, got {len(authors)} and {len(fandoms)}")
    rng = np.random.default_rng(seed)
    counts = _split_counts(len(fandoms), ratios)
    best = None
    for _ in range(max(1, n_restarts)):
        order = rng.permutation(len(fandoms))
        fandom_split = {}
        pos = 0
        for s, c in enumerate(counts):
            for k in order[pos:pos + c]:
                fandom_split[fandoms[k]] = s
            pos += c
        author_split = _assign_authors(docs, fandom_split, 3, rng)
        removed = sum(author_split[d.author_id] != fandom_split[d.fandom_id] for d in docs)
        if best is None or removed < best[0]:
            best = (removed, fandom_split, author_split)
    _, fandom_split, author_split = best
    kept = {name: [] for name in SPLIT_NAMES}
    removed_docs = []
    for d in docs:
        s = fandom_split[d.fandom_id]
        if author_split[d.author_id] == s:
            kept[SPLIT_NAMES[s]].append(d)
        else:
            removed_docs.append(d)
    spec = SplitSpec(
        authors={SPLIT_NAMES[s]: {a for a, v in author_split.items() if v == s and
                                  any(d.author_id == a for d in kept[SPLIT_NAMES[s]])} for s in range(3)},
        fandoms={SPLIT_NAMES[s]: {f for f, v in fandom_split.items() if v == s} for s in range(3)},
        docs=kept,
        removed=removed_docs,
    )
    return spec


# -- pair resampling -----------------------------------------------------------

def _partner_mask(subset: str, authors: np.ndarray, fandoms: np.ndarray, i: int) -> np.ndarray:
    a, f = SUBSET_LABELS[subset]
    same_a = authors == authors[i]
    same_f = fandoms == fandoms[i]
    mask = (same_a if a else ~same_a) & (same_f if f else ~same_f)
    mask[i] = False
    return mask


def eligible_docs(docs: Sequence[Document], subset: str) -> np.ndarray:
    """Indices of documents that have at least one partner in ``subset``."""
    authors, fandoms = _codes(docs)
    return np.array([i for i in range(len(docs)) if _partner_mask(subset, authors, fandoms, i).any()], dtype=int)


def _codes(docs):
    a_index = {a: k for k, a in enumerate(sorted({d.author_id for d in docs}))}
    f_index = {f: k for k, f in enumerate(sorted({d.fandom_id for d in docs}))}
    return (np.array([a_index[d.author_id] for d in docs], dtype=int),
            np.array([f_index[d.fandom_id] for d in docs], dtype=int))


def one_pass_quota(docs: Sequence[Document], subset: str) -> int:
    return (len(eligible_docs(docs, subset)) + 1) // 2


def resample_pairs(docs: Sequence[Document], quotas: Mapping[str, int | None] | None = None,
                   epoch_seed: int = 0, id_prefix: str = "", passes: int = 1) -> list[Trial]:
    """Draw a fresh set of pairs for one epoch.

    For each subset the pairs are built greedily: the least-used eligible
    document (random tie-break) is paired with its least-used eligible
    partner. A quota of ``None`` keeps drawing until every eligible document
    has been used ``passes`` times; since each draw starts from a document
    below that target, usage inside the subset ends up in ``{passes,
    passes + 1}``, so the number of pairs varies from epoch to epoch. An
    integer quota draws exactly that many pairs.
    """
    if quotas is None:
        quotas = {s: None for s in SUBSETS}
    unknown = set(quotas) - set(SUBSETS)
    if unknown:
        raise InvalidConfig(f"unknown subsets {sorted(unknown)}")
    if passes < 1:
        raise InvalidConfig(f"passes must be >= 1, got {passes}")
    docs = list(docs)
    rng = np.random.default_rng(epoch_seed)
    authors, fandoms = _codes(docs) if docs else (np.zeros(0, int), np.zeros(0, int))
    trials = []
    for subset in SUBSETS:
        quota = quotas.get(subset, 0)
        if quota == 0:
            continue
        if quota is not None and quota < 0:
            raise InvalidConfig(f"negative quota for {subset}")
        partners = np.stack([_partner_mask(subset, authors, fandoms, i) for i in range(len(docs))]) \
            if docs else np.zeros((0, 0), dtype=bool)
        elig_mask = partners.any(axis=1)
        elig = np.flatnonzero(elig_mask)
        if len(elig) < 2:
            if quota is None:
                continue
            raise QuotaInfeasible(f"subset {subset} has no eligible pairs for quota {quota}")
        usage = np.zeros(len(docs), dtype=np.int64)
        big = np.iinfo(np.int64).max
        k = 0
        while (k < quota) if quota is not None else (usage[elig].min() < passes):
            u = np.where(elig_mask, usage, big)
            cand = np.flatnonzero(u == u.min())
            # most constrained first: fewest partners that are themselves least used
            n_free = partners[cand] @ (u == u.min())
            cand = cand[n_free == n_free.min()]
            i = int(cand[rng.integers(cand.shape[0])])
            pu = np.where(partners[i], usage, big)
            pc = np.flatnonzero(pu == pu.min())
            j = int(pc[rng.integers(pc.shape[0])])
            usage[i] += 1
            usage[j] += 1
            first, second = (i, j) if rng.random() < 0.5 else (j, i)
            trials.append(make_trial(f"{id_prefix}{subset}-{k:06d}", docs[first], docs[second]))
            k += 1
    return trials


def usage_counts(trials: Iterable[Trial]) -> dict[str, Counter]:
    out: dict[str, Counter] = defaultdict(Counter)
    for t in trials:
        out[t.subset][t.doc1.id] += 1
        out[t.subset][t.doc2.id] += 1
    return out


# -- file formats --------------------------------------------------------------

def _iter_jsonl(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", lineno, str(path)) from exc
            if not isinstance(rec, dict):
                raise MalformedRecord("record is not an object", lineno, str(path))
            yield lineno, rec


def _need(rec, key, lineno, path, kind=None, length=None):
    if key not in rec:
        raise MalformedRecord(f"missing field {key!r}", lineno, str(path))
    val = rec[key]
    if kind is not None and not isinstance(val, kind):
        raise MalformedRecord(f"field {key!r} has wrong type", lineno, str(path))
    if length is not None and len(val) != length:
        raise MalformedRecord(f"field {key!r} must have {length} entries", lineno, str(path))
    return val


def write_corpus(path, docs: Iterable[Document]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"id": d.id, "author": d.author_id, "fandom": d.fandom_id,
                                 "text": d.text}, ensure_ascii=False) + "\n")


def read_corpus(path) -> list[Document]:
    docs = []
    for lineno, rec in _iter_jsonl(path):
        try:
            docs.append(Document(str(_need(rec, "id", lineno, path)), _need(rec, "text", lineno, path, str),
                                 str(_need(rec, "author", lineno, path)), str(_need(rec, "fandom", lineno, path))))
        except InvalidConfig as exc:
            raise MalformedRecord(str(exc), lineno, str(path)) from exc
    return docs


def write_pan_pairs(pairs_path, truth_path, trials: Iterable[Trial]) -> None:
    """PAN-style ``pairs`` and ``truth`` files.

    ``pairs``: ``{"id", "fandoms": [f1, f2], "pair": [text1, text2]}`` plus a
    ``doc_ids`` field that PAN readers ignore; ``truth``: ``{"id", "same",
    "authors": [a1, a2], "fandoms": [f1, f2]}``.
    """
    with Path(pairs_path).open("w", encoding="utf-8") as fp, Path(truth_path).open("w", encoding="utf-8") as ft:
        for t in trials:
            fp.write(json.dumps({"id": t.id, "fandoms": [t.doc1.fandom_id, t.doc2.fandom_id],
                                 "pair": [t.doc1.text, t.doc2.text],
                                 "doc_ids": [t.doc1.id, t.doc2.id]}, ensure_ascii=False) + "\n")
            ft.write(json.dumps({"id": t.id, "same": bool(t.a),
                                 "authors": [t.doc1.author_id, t.doc2.author_id],
                                 "fandoms": [t.doc1.fandom_id, t.doc2.fandom_id]}) + "\n")


def read_pan_pairs(pairs_path) -> list[dict]:
    out = []
    for lineno, rec in _iter_jsonl(pairs_path):
        tid = str(_need(rec, "id", lineno, pairs_path))
        pair = _need(rec, "pair", lineno, pairs_path, list, 2)
        fandoms = _need(rec, "fandoms", lineno, pairs_path, list, 2)
        doc_ids = rec.get("doc_ids") or [f"{tid}/0", f"{tid}/1"]
        out.append({"id": tid, "pair": pair, "fandoms": [str(f) for f in fandoms],
                    "doc_ids": [str(d) for d in doc_ids], "line": lineno})
    return out


def load_pan_pairs(pairs_path, truth_path=None) -> list[Trial]:
    """Join a pairs file with its truth file into trials.

    Without a truth file the authors are unknown; each document gets a
    placeholder author unique to the document and ``a`` is set to 0.
    """
    pairs = read_pan_pairs(pairs_path)
    truth = {}
    if truth_path is not None:
        for lineno, rec in _iter_jsonl(truth_path):
            tid = str(_need(rec, "id", lineno, truth_path))
            same = _need(rec, "same", lineno, truth_path)
            authors = _need(rec, "authors", lineno, truth_path, list, 2)
            truth[tid] = (bool(same), [str(a) for a in authors])
        missing = [p["id"] for p in pairs if p["id"] not in truth]
        if missing:
            raise IdMismatch(f"{len(missing)} pairs without truth, e.g. {missing[:3]}")
        extra = set(truth) - {p["id"] for p in pairs}
        if extra:
            raise IdMismatch(f"{len(extra)} truth records without pairs, e.g. {sorted(extra)[:3]}")
    trials = []
    for p in pairs:
        if p["id"] in truth:
            same, authors = truth[p["id"]]
        else:
            same, authors = False, [f"?{p['doc_ids'][0]}", f"?{p['doc_ids'][1]}"]
        d1 = Document(p["doc_ids"][0], p["pair"][0], authors[0], p["fandoms"][0])
        d2 = Document(p["doc_ids"][1], p["pair"][1], authors[1], p["fandoms"][1])
        f = int(p["fandoms"][0] == p["fandoms"][1])
        trials.append(Trial(p["id"], d1, d2, int(same), f))
    return trials
