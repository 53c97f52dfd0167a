"""FAR/FRR sweeps, equal error rates and DET curves.

Targets are the positive class; which negatives count depends on the metric
(SV: bona fide non-targets, SPF: spoofs, SASV: both). A trial is accepted
when ``score >= threshold``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

import numpy as np

from sasvkit.protocol import (
    NEGATIVES,
    EmptySubsetError,
    Metric,
    Protocol,
    Trial,
    TrialClass,
    subset,
)

PROBIT_CLAMP = 1e-6


@dataclass(frozen=True)
class ScoredTrial:
    trial: Trial
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for {self.trial.to_line()!r}")


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    far: float
    frr: float


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    metric: Metric | None = None


def _split(scored: Sequence[ScoredTrial], metric: Metric) -> tuple[np.ndarray, np.ndarray]:
    subset(Protocol(s.trial for s in scored), metric)  # raises EmptySubsetError
    neg = NEGATIVES[metric]
    pos = np.array([s.score for s in scored if s.trial.cls is TrialClass.TARGET], dtype=np.float64)
    negs = np.array([s.score for s in scored if s.trial.cls in neg], dtype=np.float64)
    return pos, negs


def rates(pos, neg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds (unique scores then +inf) with FAR and FRR at each."""
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise EmptySubsetError("need at least one positive and one negative score")
    thresholds = np.append(np.unique(np.concatenate([pos, neg])), np.inf)
    # negatives accepted: score >= t; positives rejected: score < t
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    return thresholds, far, frr


def far_frr_at(pos, neg, threshold: float) -> tuple[float, float]:
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    return float(np.mean(neg >= threshold)), float(np.mean(pos < threshold))


def eer_from_rates(thresholds, far, frr) -> tuple[float, float]:
    """EER and threshold at the first sign change of FAR - FRR.

    An exact zero is returned as is; otherwise FAR (equivalently FRR) and the
    threshold are linearly interpolated between the bracketing points. When
    the bracket ends at +inf the finite end is reported as threshold.
    """
    diff = far - frr
    k = int(np.argmax(diff <= 0))  # diff[-1] == -1 so a crossing always exists
    if diff[k] == 0:
        return float(far[k]), float(thresholds[k])
    # diff[0] == far[0] == 1 > 0, so k >= 1 here
    a = diff[k - 1] / (diff[k - 1] - diff[k])
    value = far[k - 1] + a * (far[k] - far[k - 1])
    t0, t1 = thresholds[k - 1], thresholds[k]
    threshold = t0 if math.isinf(t1) else t0 + a * (t1 - t0)
    return float(value), float(threshold)


def eer_scores(pos, neg) -> tuple[float, float]:
    return eer_from_rates(*rates(pos, neg))


def sweep(scored: Sequence[ScoredTrial], metric: Metric = Metric.SASV) -> list[DetPoint]:
    pos, neg = _split(scored, metric)
    return [DetPoint(float(t), float(a), float(r)) for t, a, r in zip(*rates(pos, neg))]


def eer(scored: Sequence[ScoredTrial], metric: Metric = Metric.SASV) -> EerResult:
    value, threshold = eer_scores(*_split(scored, metric))
    return EerResult(value, threshold, metric)


@dataclass(frozen=True)
class EerReport:
    sv: EerResult | None
    spf: EerResult | None
    sasv: EerResult | None

    def __iter__(self):
        return iter((self.sv, self.spf, self.sasv))

    def format(self) -> str:
        def pct(r):
            return "n/a" if r is None else f"{100 * r.eer:.2f}%"
        return f"SV-EER: {pct(self.sv)}  SPF-EER: {pct(self.spf)}  SASV-EER: {pct(self.sasv)}"


def all_eers(scored: Sequence[ScoredTrial]) -> EerReport:
    """The three EERs; a metric whose subset is missing a class is ``None``."""
    out = {}
    for metric in (Metric.SV, Metric.SPF, Metric.SASV):
        try:
            out[metric] = eer(scored, metric)
        except EmptySubsetError:
            out[metric] = None
    return EerReport(out[Metric.SV], out[Metric.SPF], out[Metric.SASV])


def probit(rate: float) -> float:
    """Standard normal quantile of a rate clamped to [1e-6, 1 - 1e-6]."""
    r = min(max(float(rate), PROBIT_CLAMP), 1.0 - PROBIT_CLAMP)
    return NormalDist().inv_cdf(r)


def det_csv(points: Sequence[DetPoint]) -> bytes:
    if not points:
        raise ValueError("empty DET curve")
    buf = io.StringIO()
    buf.write("threshold,far,frr\n")
    for p in points:
        buf.write(f"{p.threshold:.9g},{p.far:.9g},{p.frr:.9g}\n")
    return buf.getvalue().encode("ascii")


_TICKS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4)


def det_svg(curves: Mapping[str, Sequence[DetPoint]] | Sequence[DetPoint], title: str = "") -> str:
    """DET plot (FAR vs FRR on probit axes) as SVG text; one line per curve."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not isinstance(curves, Mapping):
        curves = {"system": curves}
    if not curves or any(len(p) == 0 for p in curves.values()):
        raise ValueError("empty DET curve")

    with matplotlib.rc_context({"svg.hashsalt": "sasvkit"}):
        return _render_det(plt, curves, title)


def _render_det(plt, curves, title):
    fig, ax = plt.subplots(figsize=(5, 5))
    try:
        for name, points in curves.items():
            xs = [probit(p.far) for p in points]
            ys = [probit(p.frr) for p in points]
            (line,) = ax.plot(xs, ys, label=name)
            line.set_gid(f"det-{name}")
        ticks = [probit(t) for t in _TICKS]
        labels = [f"{100 * t:g}" for t in _TICKS]
        ax.set_xticks(ticks, labels)
        ax.set_yticks(ticks, labels)
        lim = (probit(0.0005), probit(0.5))
        ax.set_xlim(*lim)
        ax.set_ylim(*lim)
        ax.set_xlabel("False acceptance rate (%)")
        ax.set_ylabel("False rejection rate (%)")
        ax.grid(True, alpha=0.3)
        if title:
            ax.set_title(title)
        if len(curves) > 1:
            ax.legend(loc="upper right")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return buf.getvalue()


def scored_from_protocol(protocol: Protocol | Iterable[Trial], scores: Iterable[float]) -> list[ScoredTrial]:
    trials = list(protocol)
    scores = list(scores)
    if len(trials) != len(scores):
        raise ValueError(f"{len(trials)} trials but {len(scores)} scores")
    return [ScoredTrial(t, float(s)) for t, s in zip(trials, scores)]
