"""Reproducible synthetic SASV cohorts.

Random numbers come from xorshift64* (shifts 12/25/27, multiplier
0x2545F4914F6CDD1D) seeded through one splitmix64 step; normals use the
Box-Muller cosine branch only, one uniform pair per normal. The draw order
below is part of the output contract:

1. artifact direction: d_cm normals from a generator seeded with
   ARTIFACT_SEED (independent of the cohort seed), normalised
2. per speaker, in order: centroid (d_spk), enrollment utterances,
   bona fide test utterances, spoofed test utterances.
   Each utterance draws d_spk speaker-noise normals, d_cm CM normals and
   2 CM-logit normals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sasvkit.embedding import (
    CML_MAGIC,
    DEFAULT_CM_DIM,
    DEFAULT_SPK_DIM,
    EmbeddingStore,
    enroll,
)
from sasvkit.protocol import Protocol, Trial, TrialClass

_MASK = (1 << 64) - 1
ARTIFACT_SEED = 0x5A5F


class Xorshift64Star:
    def __init__(self, seed: int):
        # splitmix64 scrambles small seeds and never yields a zero state for xorshift
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int, scale: float = 1.0) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64) * scale


@dataclass(frozen=True)
class CohortSpec:
    seed: int = 0
    n_speakers: int = 10
    utts_per_speaker: int = 10
    enroll_per_speaker: int = 3
    d_spk: int = DEFAULT_SPK_DIM
    d_cm: int = DEFAULT_CM_DIM
    sigma_between: float = 1.0
    sigma_within: float = 0.3
    artifact_strength: float = 4.0
    spoof_ratio: float = 5.0
    cm_margin: float = 8.0
    cm_noise: float = 1.0

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "enroll_per_speaker"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2 to form non-target trials")
        if self.d_spk < 2 or self.d_cm < 2:
            raise ValueError("embedding dimensions must be >= 2")
        for name in ("sigma_between", "sigma_within", "artifact_strength",
                     "spoof_ratio", "cm_margin", "cm_noise"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.sigma_between == 0:
            raise ValueError("sigma_between must be > 0")
        if self.spoofs_per_speaker < 1:
            raise ValueError("spoof_ratio yields no spoofed utterances")

    @property
    def spoofs_per_speaker(self) -> int:
        return int(round(self.spoof_ratio * self.utts_per_speaker))

    def expected_counts(self) -> tuple[int, int, int]:
        n, u = self.n_speakers, self.utts_per_speaker
        return n * u, n * (n - 1) * u, n * self.spoofs_per_speaker


@dataclass
class Cohort:
    spk: EmbeddingStore
    cm: EmbeddingStore
    cm_logits: EmbeddingStore
    protocol: Protocol


def model_id(s: int) -> str:
    return f"spk{s:04d}"


def generate(spec: CohortSpec) -> Cohort:
    """Build stores and a three-class protocol.

    The spoof artifact direction depends only on ``d_cm`` so that cohorts
    with different seeds share it. Every speaker gets one enrollment model (stored under ``spkNNNN``),
    ``utts_per_speaker`` bona fide test utterances and
    ``spoofs_per_speaker`` spoofed ones. Spoofs share their speaker's
    centroid, are offset along the artifact direction in CM space and have
    logits favouring spoof by ``cm_margin``. Trials: every bona fide test
    utterance against its own model (target) and every other model
    (non-target); every spoof against its own model.
    """
    artifact = Xorshift64Star(ARTIFACT_SEED).normals(spec.d_cm)
    rng = Xorshift64Star(spec.seed)
    artifact /= np.linalg.norm(artifact)
    half = spec.cm_margin / 2.0

    def utterance(centroid, spoofed):
        spk = centroid + rng.normals(spec.d_spk, spec.sigma_within)
        cm = rng.normals(spec.d_cm)
        noise = rng.normals(2, spec.cm_noise)
        if spoofed:
            cm = cm + spec.artifact_strength * artifact
            logits = (-half + noise[0], half + noise[1])
        else:
            logits = (half + noise[0], -half + noise[1])
        return spk, cm, logits

    spk_entries, cm_entries, logit_entries = [], [], []
    bonafide, spoofs = [], []
    for s in range(spec.n_speakers):
        centroid = rng.normals(spec.d_spk, spec.sigma_between)
        enrollment = [utterance(centroid, False)[0] for _ in range(spec.enroll_per_speaker)]
        spk_entries.append((model_id(s), enroll(enrollment)))
        for kind, count, spoofed in (("bf", spec.utts_per_speaker, False),
                                     ("sp", spec.spoofs_per_speaker, True)):
            for u in range(count):
                uid = f"{model_id(s)}-{kind}{u:04d}"
                spk, cm, logits = utterance(centroid, spoofed)
                spk_entries.append((uid, spk))
                cm_entries.append((uid, cm))
                logit_entries.append((uid, logits))
                (spoofs if spoofed else bonafide).append((s, uid))

    trials = []
    for s in range(spec.n_speakers):
        mid = model_id(s)
        for owner, uid in bonafide:
            trials.append(Trial(mid, uid, TrialClass.TARGET if owner == s else TrialClass.NONTARGET))
        for owner, uid in spoofs:
            if owner == s:
                trials.append(Trial(mid, uid, TrialClass.SPOOF))

    return Cohort(
        spk=EmbeddingStore(spec.d_spk, spk_entries),
        cm=EmbeddingStore(spec.d_cm, cm_entries),
        cm_logits=EmbeddingStore(2, logit_entries, magic=CML_MAGIC),
        protocol=Protocol(trials),
    )
