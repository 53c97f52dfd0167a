import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisect_probit, brute_eer, brute_rates
from sasvkit.metrics import (
    DetPoint,
    EerReport,
    ScoredTrial,
    all_eers,
    det_csv,
    det_svg,
    eer,
    eer_scores,
    far_frr_at,
    probit,
    scored_from_protocol,
    sweep,
)
from sasvkit.protocol import EmptySubsetError, Metric, Trial, TrialClass

T, N, S = TrialClass.TARGET, TrialClass.NONTARGET, TrialClass.SPOOF


def scored(targets=(), nontargets=(), spoofs=()):
    out = []
    for cls, scores in ((T, targets), (N, nontargets), (S, spoofs)):
        for i, s in enumerate(scores):
            out.append(ScoredTrial(Trial("m", f"{cls.value}{i}", cls), float(s)))
    return out


def test_sweep_separable_pair():
    points = sweep(scored([1.0], [0.0]), Metric.SV)
    assert [(p.threshold, p.far, p.frr) for p in points] == [(0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (math.inf, 0.0, 1.0)]


def test_sweep_all_tied():
    points = sweep(scored([0.5, 0.5], [0.5]), Metric.SV)
    assert [(p.far, p.frr) for p in points] == [(1.0, 0.0), (0.0, 1.0)]
    assert math.isinf(points[-1].threshold)


def test_sweep_derived_point():
    pos, neg = [0.8, 0.6, 0.55], [0.5, 0.3, 0.7]
    points = {p.threshold: p for p in sweep(scored(pos, neg), Metric.SV)}
    assert (points[0.6].far, points[0.6].frr) == brute_rates(pos, neg, 0.6) == (1 / 3, 1 / 3)
    for t, p in points.items():
        assert (p.far, p.frr) == brute_rates(pos, neg, t)


def test_sweep_empty_class():
    with pytest.raises(EmptySubsetError):
        sweep(scored([1.0], spoofs=[0.0]), Metric.SV)


def test_eer_examples():
    assert eer(scored([0.9, 0.8], [0.2, 0.1]), Metric.SV).eer == 0.0
    r = eer(scored([0.8, 0.6, 0.55], [0.5, 0.3, 0.7]), Metric.SV)
    assert (r.eer, r.threshold) == brute_eer([0.8, 0.6, 0.55], [0.5, 0.3, 0.7]) == (1 / 3, 0.6)
    assert r.metric is Metric.SV


def test_eer_identical_distributions():
    values = [0.1, 0.4, 0.4, 0.9, 1.3]
    assert brute_eer(values, values)[0] == 0.5
    assert eer(scored(values, values), Metric.SV).eer == 0.5


def test_eer_interpolates_towards_infinite_threshold():
    # the only crossing lies between the largest score and +inf
    value, threshold = eer_scores([1.0, 2.0], [2.0, 2.0, 2.0])
    assert (value, threshold) == brute_eer([1.0, 2.0], [2.0, 2.0, 2.0])
    assert threshold == 2.0
    assert 0.0 <= value <= 1.0


score_lists = st.lists(st.integers(-20, 20).map(lambda k: k / 4), min_size=1, max_size=40)


@given(score_lists, score_lists)
def test_eer_matches_brute_force(pos, neg):
    value, thr = eer_scores(pos, neg)
    ref_value, ref_thr = brute_eer(pos, neg)
    assert abs(value - ref_value) <= 1e-12
    assert thr == pytest.approx(ref_thr, abs=1e-12)


@given(score_lists, score_lists)
def test_sweep_monotone(pos, neg):
    points = sweep(scored(pos, neg), Metric.SV)
    thr = [p.threshold for p in points]
    assert thr == sorted(thr) and len(set(thr)) == len(thr)
    assert all(a.far >= b.far and a.frr <= b.frr for a, b in zip(points, points[1:]))
    assert all(0 <= p.far <= 1 and 0 <= p.frr <= 1 for p in points)


@given(score_lists, score_lists, score_lists, st.floats(-6, 6))
def test_sasv_far_is_weighted_mean(pos, nt, sp, threshold):
    sv_far, _ = far_frr_at(pos, nt, threshold)
    spf_far, _ = far_frr_at(pos, sp, threshold)
    sasv_far, _ = far_frr_at(pos, nt + sp, threshold)
    mixed = (len(nt) * sv_far + len(sp) * spf_far) / (len(nt) + len(sp))
    assert abs(sasv_far - mixed) <= 1e-12


@settings(max_examples=50)
@given(score_lists, score_lists, score_lists)
def test_monotone_transform_invariance(pos, nt, sp):
    base = all_eers(scored(pos, nt, sp))
    for f in (lambda s: 2 * s + 1, math.tanh, math.exp):
        other = all_eers(scored([f(s) for s in pos], [f(s) for s in nt], [f(s) for s in sp]))
        for a, b in zip(base, other):
            assert abs(a.eer - b.eer) <= 1e-12


def test_all_eers_missing_spoofs():
    rep = all_eers(scored([0.9, 0.4], [0.5, 0.1]))
    assert rep.spf is None
    assert rep.sv.eer == rep.sasv.eer
    assert "SPF-EER: n/a" in rep.format()


def test_all_eers_missing_nontargets():
    rep = all_eers(scored([0.9, 0.4], spoofs=[0.5, 0.1]))
    assert rep.sv is None
    assert rep.spf.eer == rep.sasv.eer


def test_report_format():
    rep = all_eers(scored([0.8, 0.6, 0.55], [0.5, 0.3, 0.7], [0.0]))
    assert rep.format() == "SV-EER: 33.33%  SPF-EER: 0.00%  SASV-EER: 25.00%"
    assert EerReport(None, None, None).format() == "SV-EER: n/a  SPF-EER: n/a  SASV-EER: n/a"


def test_scored_trial_rejects_nan():
    with pytest.raises(ValueError):
        ScoredTrial(Trial("a", "b", T), float("nan"))


def test_scored_from_protocol_length_check():
    with pytest.raises(ValueError):
        scored_from_protocol([Trial("a", "b", T)], [1.0, 2.0])


def test_det_csv():
    assert det_csv([DetPoint(0.5, 0.25, 0.25)]).decode().splitlines() == ["threshold,far,frr", "0.5,0.25,0.25"]
    text = det_csv([DetPoint(1 / 3, 2 / 3, 0.0), DetPoint(math.inf, 0.0, 1.0)]).decode()
    assert text.splitlines()[1:] == ["0.333333333,0.666666667,0", "inf,0,1"]
    with pytest.raises(ValueError):
        det_csv([])


def test_probit():
    assert probit(0.5) == 0.0
    assert abs(probit(0.0228) - bisect_probit(0.0228)) < 1e-9
    assert probit(0.0228) == pytest.approx(-2.0, abs=1e-3)
    assert probit(0.0) == pytest.approx(bisect_probit(1e-6), abs=1e-9)
    assert probit(1.0) == pytest.approx(-bisect_probit(1e-6), abs=1e-9)


def test_det_svg_overlay():
    a = sweep(scored([0.9, 0.5, 0.7], [0.1, 0.6]), Metric.SV)
    b = sweep(scored([0.8, 0.3], [0.2, 0.4, 0.35]), Metric.SV)
    single = det_svg(a)
    assert single.lstrip().startswith("<?xml") and "</svg>" in single
    overlay = det_svg({"sysA": a, "sysB": b})
    assert 'id="det-sysA"' in overlay and 'id="det-sysB"' in overlay
    assert det_svg({"sysA": a}) == det_svg({"sysA": a})
    with pytest.raises(ValueError):
        det_svg({"x": []})
