"""Per-trial scoring with a chosen back-end, and the 4-column score file.

Score file lines are ``<enroll_id> <test_id> <label> <score>`` with the score
printed to 9 significant digits.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from sasvkit.embedding import EmbeddingStore, MissingEmbeddingError, cosine
from sasvkit.fusion import MlpFusionModel, SubsystemScores, fusion_input, score_b1, score_b1v2
from sasvkit.metrics import ScoredTrial
from sasvkit.protocol import Protocol, ProtocolParseError, Trial, TrialClass

BACKENDS = ("asv-only", "b1", "b1v2", "b2")


class ScoreFileError(ValueError):
    pass


def _lookup(store: EmbeddingStore, key: str, name: str) -> np.ndarray:
    try:
        return store[key]
    except MissingEmbeddingError:
        raise MissingEmbeddingError(key, name) from None


def score_protocol(protocol: Protocol, backend: str, spk: EmbeddingStore,
                   cm_logits: EmbeddingStore | None = None,
                   cm: EmbeddingStore | None = None,
                   model: MlpFusionModel | None = None) -> list[float]:
    """One fused score per trial, in protocol order."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {', '.join(BACKENDS)}")
    if backend in ("b1", "b1v2") and cm_logits is None:
        raise ValueError(f"backend {backend} needs CM logits")
    if backend == "b2":
        if model is None or cm is None:
            raise ValueError("backend b2 needs a model and a CM embedding store")
        expected = 2 * spk.dimension + cm.dimension
        if model.input_dim != expected:
            raise ValueError(f"model input {model.input_dim} does not match embeddings "
                             f"(2 x {spk.dimension} + {cm.dimension} = {expected})")
        x = np.stack([fusion_input(_lookup(spk, t.enroll_id, "speaker store"),
                                   _lookup(spk, t.test_id, "speaker store"),
                                   _lookup(cm, t.test_id, "CM store"))
                      for t in protocol])
        return [float(v) for v in model.predict(x)]

    scores = []
    for t in protocol:
        asv = cosine(_lookup(spk, t.enroll_id, "speaker store"),
                     _lookup(spk, t.test_id, "speaker store"))
        if backend == "asv-only":
            scores.append(asv)
            continue
        logits = tuple(float(v) for v in _lookup(cm_logits, t.test_id, "CM logits"))
        s = SubsystemScores(asv, logits)
        scores.append(score_b1(s) if backend == "b1" else score_b1v2(s))
    return scores


def format_scores(scored: Sequence[ScoredTrial]) -> bytes:
    return "".join(f"{s.trial.to_line()} {s.score:.9g}\n" for s in scored).encode("utf-8")


_LABELS = {c.value: c for c in TrialClass}


def parse_scores(data: bytes | str) -> list[ScoredTrial]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    out = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        fields = line.split(" ")
        if len(fields) != 4:
            raise ProtocolParseError(lineno, f"expected 4 fields, got {len(fields)}")
        enroll_id, test_id, label, raw = fields
        if label not in _LABELS:
            raise ProtocolParseError(lineno, f"unknown label {label!r}")
        try:
            score = float(raw)
        except ValueError:
            raise ProtocolParseError(lineno, f"bad score {raw!r}") from None
        if not math.isfinite(score):
            raise ProtocolParseError(lineno, f"non-finite score {raw!r}")
        try:
            out.append(ScoredTrial(Trial(enroll_id, test_id, _LABELS[label]), score))
        except ValueError as exc:
            raise ProtocolParseError(lineno, str(exc)) from None
    if not out:
        raise ScoreFileError("score file contains no trials")
    return out
