"""Ensemble inference: majority vote on non-responses, averaging over confident members."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyConfidentSet, EvenEnsemble

NONRESPONSE = 0.5
# answered trials must never collide with the non-response sentinel
ANSWER_NUDGE = 1e-6


@dataclass
class EnsembleVerdict:
    value: float
    is_nonresponse: bool
    per_model: list = field(default_factory=list)  # [(p_ual_h1, p_h2), ...]


def _check_members(m: int) -> None:
    if m < 1 or m % 2 == 0:
        raise EvenEnsemble(f"ensemble size must be odd and >= 1, got {m}")


def vote(per_model_p_h2: Sequence[float], M: int | None = None) -> bool:
    """True when more than floor(M/2) members flag the trial as undecidable."""
    p = np.asarray(per_model_p_h2, dtype=float)
    M = p.shape[0] if M is None else M
    _check_members(M)
    if p.shape[0] != M:
        raise EvenEnsemble(f"expected {M} member outputs, got {p.shape[0]}")
    return bool(np.sum(p >= 0.5) > M // 2)


def confident_average(per_model: Sequence[tuple[float, float]]) -> float:
    """Mean UAL posterior over the members whose detector output is below 0.5."""
    vals = [pu for pu, ph in per_model if ph < 0.5]
    if not vals:
        raise EmptyConfidentSet("no confident ensemble member")
    return float(sum(vals) / len(vals))


def _nudge(value: float) -> float:
    return NONRESPONSE - ANSWER_NUDGE if value == NONRESPONSE else value


def aggregate(p_ual: np.ndarray, p_h2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized verdicts for ``(M, N)`` arrays of member outputs.

    Returns ``(values, is_nonresponse)``. Members are summed in index order,
    so an ensemble of one returns its member's posterior unchanged.
    """
    p_ual = np.atleast_2d(np.asarray(p_ual, dtype=float))
    p_h2 = np.atleast_2d(np.asarray(p_h2, dtype=float))
    M = p_ual.shape[0]
    _check_members(M)
    flagged = p_h2 >= 0.5
    nonresp = flagged.sum(axis=0) > M // 2
    confident = ~flagged
    total = np.zeros(p_ual.shape[1])
    for m in range(M):
        total = total + np.where(confident[m], p_ual[m], 0.0)
    count = confident.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), NONRESPONSE)
    if np.any(~nonresp & (count == 0)):
        raise EmptyConfidentSet("answered trial without confident members")
    values = np.where(nonresp, NONRESPONSE, np.where(mean == NONRESPONSE, NONRESPONSE - ANSWER_NUDGE, mean))
    return values, nonresp


def combine(per_model: Sequence[tuple[float, float]]) -> EnsembleVerdict:
    """Verdict for one trial from ``(p_ual_h1, p_h2)`` member outputs."""
    per_model = [(float(a), float(b)) for a, b in per_model]
    if vote([ph for _, ph in per_model]):
        return EnsembleVerdict(NONRESPONSE, True, per_model)
    return EnsembleVerdict(_nudge(confident_average(per_model)), False, per_model)


def predict(trials, models) -> list[EnsembleVerdict]:
    """Run every member pipeline on ``trials`` and combine their outputs."""
    _check_members(len(models))
    outs = [m.score_trials(trials) for m in models]
    p_ual = np.stack([o.p_ual for o in outs])
    p_h2 = np.stack([o.p_h2 for o in outs])
    values, nonresp = aggregate(p_ual, p_h2)
    return [EnsembleVerdict(float(values[t]), bool(nonresp[t]),
                            [(float(p_ual[m, t]), float(p_h2[m, t])) for m in range(len(models))])
            for t in range(values.shape[0])]
