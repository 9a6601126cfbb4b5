"""PAN verification metrics and calibration metrics.

Conventions follow the public PAN 2020/21 verification evaluator: an answer
of exactly 0.5 is a non-response; c@1 rewards non-responses in proportion to
accuracy; F1 ignores non-responses; f_05_u counts every non-response as a
false negative; AUC and Brier use the raw values (non-responses at 0.5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import IdMismatch, MalformedRecord, NoPositives, SingleClass

METRIC_NAMES = ("auc", "c@1", "f_05_u", "F1", "brier", "overall")
CALIBRATION_NAMES = ("acc", "conf", "ECE", "MCE")


@dataclass
class AnswerSet:
    ids: list
    values: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.truth = np.asarray(self.truth, dtype=int)
        if len(self.ids) != self.values.shape[0] or self.values.shape != self.truth.shape:
            raise IdMismatch("ids, values and truth must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise IdMismatch("answer ids must be unique")
        if not np.all(np.isfinite(self.values)):
            raise MalformedRecord("answer values must be finite")

    @classmethod
    def from_arrays(cls, values, truth, ids=None):
        values = np.asarray(values, dtype=float)
        if ids is None:
            ids = [str(i) for i in range(values.shape[0])]
        return cls(list(ids), values, np.asarray(truth, dtype=int))

    def __len__(self):
        return self.values.shape[0]

    def subset(self, mask) -> "AnswerSet":
        mask = np.asarray(mask, dtype=bool)
        return AnswerSet([i for i, m in zip(self.ids, mask) if m], self.values[mask], self.truth[mask])


def _va(answers: AnswerSet):
    return answers.values, answers.truth


def auc(answers: AnswerSet) -> float:
    """ROC AUC via the rank-sum statistic; tied pairs count one half."""
    v, t = _va(answers)
    n_pos = int(np.sum(t == 1))
    n_neg = int(np.sum(t == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(v)
    u = float(np.sum(ranks[t == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def c_at_1(answers: AnswerSet) -> float:
    v, t = _va(answers)
    n = v.shape[0]
    if n == 0:
        return 0.0
    unanswered = v == 0.5
    correct = ~unanswered & ((v > 0.5) == (t == 1))
    nc = int(np.sum(correct))
    nu = int(np.sum(unanswered))
    # integer numerator: one rounding step only
    return (nc * n + nu * nc) / (n * n)


def _counts(answers: AnswerSet):
    v, t = _va(answers)
    answered = v != 0.5
    pred = v > 0.5
    tp = int(np.sum(answered & pred & (t == 1)))
    fp = int(np.sum(answered & pred & (t == 0)))
    fn = int(np.sum(answered & ~pred & (t == 1)))
    nu = int(np.sum(~answered))
    return tp, fp, fn, nu


def f_05_u(answers: AnswerSet) -> float:
    """F0.5 with every non-response counted as a false negative."""
    if not np.any(answers.truth == 1):
        raise NoPositives("f_05_u needs positive trials")
    tp, fp, fn, nu = _counts(answers)
    denom = 1.25 * tp + 0.25 * (fn + nu) + fp
    return 1.25 * tp / denom if denom > 0 else 0.0


def f1(answers: AnswerSet) -> float:
    """F1 over answered trials only."""
    if not np.any(answers.truth == 1):
        raise NoPositives("F1 needs positive trials")
    tp, fp, fn, _ = _counts(answers)
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def brier_complement(answers: AnswerSet) -> float:
    v, t = _va(answers)
    if v.shape[0] == 0:
        return 0.0
    return 1.0 - float(np.mean((v - t) ** 2))


def overall(auc_v: float, c1: float, f05u: float, f1_v: float, brier: float) -> float:
    return (auc_v + c1 + f05u + f1_v + brier) / 5.0


def pan_metrics(answers: AnswerSet) -> dict[str, float]:
    scores = {
        "auc": auc(answers),
        "c@1": c_at_1(answers),
        "f_05_u": f_05_u(answers),
        "F1": f1(answers),
        "brier": brier_complement(answers),
    }
    scores["overall"] = overall(*(scores[k] for k in METRIC_NAMES[:5]))
    return scores


@dataclass
class BinStats:
    edges: np.ndarray
    counts: np.ndarray
    conf: np.ndarray  # mean confidence per bin (nan when empty)
    acc: np.ndarray   # mean accuracy per bin (nan when empty)

    def to_records(self) -> list[dict]:
        out = []
        for b in range(self.counts.shape[0]):
            out.append({"lo": float(self.edges[b]), "hi": float(self.edges[b + 1]),
                        "count": int(self.counts[b]),
                        "conf": None if self.counts[b] == 0 else float(self.conf[b]),
                        "acc": None if self.counts[b] == 0 else float(self.acc[b])})
        return out


@dataclass
class Calibration:
    acc: float
    conf: float
    ece: float
    mce: float
    bins: BinStats

    def as_dict(self) -> dict[str, float]:
        return {"acc": self.acc, "conf": self.conf, "ECE": self.ece, "MCE": self.mce}


def reliability(answers: AnswerSet, n_bins: int = 10) -> Calibration:
    """Reliability binning of decision confidence over [0.5, 1].

    Confidence is ``p`` when the decision is same-author and ``1 - p``
    otherwise; non-responses are excluded. ECE is the count-weighted mean of
    ``|conf - acc|`` over bins, MCE its maximum over non-empty bins.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    v, t = _va(answers)
    keep = v != 0.5
    v, t = v[keep], t[keep]
    a_hat = (v > 0.5).astype(int)
    conf = np.where(a_hat == 1, v, 1.0 - v)
    correct = (a_hat == t).astype(float)
    edges = np.linspace(0.5, 1.0, n_bins + 1)
    idx = np.clip(np.floor((conf - 0.5) / (0.5 / n_bins)).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sum_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sum_acc = np.bincount(idx, weights=correct, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        bin_conf = sum_conf / counts
        bin_acc = sum_acc / counts
    n = counts.sum()
    bins = BinStats(edges, counts, bin_conf, bin_acc)
    if n == 0:
        return Calibration(float("nan"), float("nan"), float("nan"), float("nan"), bins)
    nz = counts > 0
    gaps = np.abs(bin_conf[nz] - bin_acc[nz])
    w = counts[nz] / n
    return Calibration(acc=float(np.sum(w * bin_acc[nz])), conf=float(np.sum(w * bin_conf[nz])),
                       ece=float(np.sum(w * gaps)), mce=float(np.max(gaps)), bins=bins)


def evaluate(answers: AnswerSet, n_bins: int = 10) -> dict[str, float]:
    out = pan_metrics(answers)
    out.update(reliability(answers, n_bins).as_dict())
    out["nonresponse_rate"] = float(np.mean(answers.values == 0.5)) if len(answers) else 0.0
    return out


# -- line-delimited answer / truth files -------------------------------------

def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
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


def read_answers(path) -> dict[str, float]:
    out = {}
    for lineno, rec in _read_jsonl(path):
        if "id" not in rec or "value" not in rec:
            raise MalformedRecord("answer record needs 'id' and 'value'", lineno, str(path))
        out[str(rec["id"])] = float(rec["value"])
    return out


def write_answers(path, ids, values) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, v in zip(ids, values):
            fh.write(json.dumps({"id": i, "value": float(v)}) + "\n")


def read_truth(path) -> dict[str, dict]:
    out = {}
    for lineno, rec in _read_jsonl(path):
        if "id" not in rec or "same" not in rec:
            raise MalformedRecord("truth record needs 'id' and 'same'", lineno, str(path))
        out[str(rec["id"])] = rec
    return out


def join_answers(answers: Mapping[str, float], truth: Mapping[str, dict],
                 missing_as_nonresponse: bool = True) -> AnswerSet:
    """Align answers to truth ids; unanswered ids count as non-responses."""
    extra = set(answers) - set(truth)
    if extra:
        raise IdMismatch(f"{len(extra)} answer ids not in truth, e.g. {sorted(extra)[:3]}")
    ids = sorted(truth)
    values = []
    for i in ids:
        if i in answers:
            values.append(answers[i])
        elif missing_as_nonresponse:
            values.append(0.5)
        else:
            raise IdMismatch(f"no answer for trial {i}")
    return AnswerSet(ids, np.array(values), np.array([int(bool(truth[i]["same"])) for i in ids]))
