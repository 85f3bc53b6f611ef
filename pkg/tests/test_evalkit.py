import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopredict import evalkit as ek
from hopredict.evalkit import ConfusionCounts, EvalReport


def _report(p, r, t=9, k=10, th=0.5):
    # any counts will do; selection reads only the ratios
    return EvalReport(k, t, th, ConfusionCounts(1, 1, 1, 1), p, r, 2 * p * r / (p + r))


def test_half_recall_full_precision():
    rep = EvalReport.from_counts(ConfusionCounts(tp=5, fp=0, fn=5, tn=10), 0.5)
    assert rep.recall == 0.5 and rep.precision == 1.0
    assert rep.f1 == pytest.approx(0.6667, abs=1e-4)


def test_all_correct():
    rep = ek.metrics(np.array([0.9, 0.1, 0.7, 0.2]), [1, 0, 1, 0])
    assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)


def test_80_20_11():
    rep = EvalReport.from_counts(ConfusionCounts(tp=80, fp=20, fn=11, tn=0), 0.5)
    assert rep.precision == pytest.approx(0.80)
    assert rep.recall == pytest.approx(0.879, abs=1e-3)
    assert rep.f1 == pytest.approx(0.838, abs=1e-3)


def test_undefined_ratios_are_absent_not_zero():
    rep = ek.metrics(np.array([0.1, 0.2]), [0, 0])
    assert rep.precision is None and rep.recall is None
    assert rep.f1 is None
    assert rep.counts == ConfusionCounts(0, 0, 0, 2)


def test_threshold_is_inclusive():
    rep = ek.metrics(np.array([0.5]), [1], threshold=0.5)
    assert rep.counts.tp == 1


def test_accepts_prediction_pairs_and_arrays():
    from hopredict.seqmodel import Prediction
    preds = [Prediction(0.2, 0.8), Prediction(0.6, 0.4)]
    a = ek.metrics(preds, [1, 1])
    b = ek.metrics(np.array([[0.2, 0.8], [0.6, 0.4]]), [1, 1])
    c = ek.metrics([(0.2, 0.8), (0.6, 0.4)], [1, 1])
    assert a.counts == b.counts == c.counts == ConfusionCounts(1, 0, 1, 0)


@pytest.mark.parametrize("args", [([], []), ([0.5], [1, 0])])
def test_bad_inputs(args):
    with pytest.raises(ek.EvalError):
        ek.metrics(np.array(args[0]), args[1])


@pytest.mark.parametrize("th", [0.0, 1.0, 1.5])
def test_threshold_outside_open_interval(th):
    with pytest.raises(ek.EvalError):
        ek.metrics(np.array([0.5]), [1], threshold=th)


def _brute(p, y, th):
    tp = fp = fn = tn = 0
    for pi, yi in zip(p, y):
        d = pi >= th
        if d and yi:
            tp += 1
        elif d:
            fp += 1
        elif yi:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60),
       st.floats(0.01, 0.99))
def test_metrics_match_brute_force_recount(pairs, th):
    p = np.array([a for a, _ in pairs])
    y = [int(b) for _, b in pairs]
    rep = ek.metrics(p, y, th)
    tp, fp, fn, tn = _brute(p, y, th)
    assert (rep.counts.tp, rep.counts.fp, rep.counts.fn, rep.counts.tn) == (tp, fp, fn, tn)
    assert rep.precision == (tp / (tp + fp) if tp + fp else None)
    assert rep.recall == (tp / (tp + fn) if tp + fn else None)
    if rep.precision and rep.recall:
        harmonic = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
        assert rep.f1 == pytest.approx(harmonic, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60))
def test_raising_threshold_never_raises_recall(pairs):
    p = np.array([a for a, _ in pairs])
    y = [int(b) for _, b in pairs]
    curve = ek.pr_curve(p, y)
    tps = [r.counts.tp for r in curve]
    assert all(a >= b for a, b in zip(tps, tps[1:]))
    assert len({r.counts.positives for r in curve}) == 1


# --- operating point ---------------------------------------------------------------

def test_select_picks_max_recall_above_floor():
    reports = [_report(0.9, 0.5), _report(0.78, 0.86), _report(0.6, 0.95)]
    sel = ek.select_operating_point(reports, 0.75)
    assert (sel.precision, sel.recall) == (0.78, 0.86)


def test_select_nothing_qualifies():
    assert ek.select_operating_point([_report(0.9, 0.5)], 0.99) is None


def test_select_ties_prefer_precision_then_smaller_horizon():
    a, b, c = _report(0.8, 0.9, t=5), _report(0.85, 0.9, t=7), _report(0.85, 0.9, t=3)
    assert ek.select_operating_point([a, b, c], 0.75) is c


def test_undefined_precision_never_selected():
    r = EvalReport.from_counts(ConfusionCounts(0, 0, 4, 4), 0.5)
    assert ek.select_operating_point([r], 0.0) is None


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.integers(1, 15)), min_size=1, max_size=12),
       st.randoms())
def test_select_invariant_under_reordering(items, rnd):
    reports = [_report(p, r, t=t) for p, r, t in items if p + r > 0]
    shuffled = reports[:]
    rnd.shuffle(shuffled)
    a = ek.select_operating_point(reports, 0.5)
    b = ek.select_operating_point(shuffled, 0.5)
    key = (lambda x: None if x is None else (x.precision, x.recall, x.horizon_t))
    assert key(a) == key(b)


# --- sweeps ------------------------------------------------------------------------

def test_single_point_sweep_selects_it():
    sr = ek.run_sweep("history_k", [10], lambda v, s: _report(0.5, 0.5, k=v))
    assert sr.selection.history_k == 10 and len(sr.reports) == 1


def test_sweep_values_sorted_unique_and_failures_kept():
    def point(v, seed):
        if v == 3:
            raise RuntimeError("boom")
        return _report(0.8, v / 10, t=v)
    sr = ek.run_sweep("horizon_t", [5, 3, 1, 5], point)
    assert sr.values == [1, 3, 5]
    assert sr.reports[1].error == "RuntimeError: boom"
    assert sr.selection.horizon_t == 5


def test_point_seed_depends_on_base_and_value():
    assert ek.point_seed(0, 9) == ek.point_seed(0, 9)
    assert len({ek.point_seed(b, v) for b in (0, 1) for v in (1, 2, 3)}) == 6


def test_spearman_examples():
    assert ek.spearman([1, 2, 3, 4], [10, 20, 25, 30]) == pytest.approx(1.0)
    assert ek.spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert ek.spearman([1], [1]) is None


def test_reports_csv_round_trip(tmp_path):
    reports = [EvalReport.from_counts(ConfusionCounts(3, 1, 2, 9), 0.5, 10, 9),
               EvalReport.from_counts(ConfusionCounts(0, 0, 2, 9), 0.7, 10, 3)]
    path = tmp_path / "r.csv"
    ek.write_reports_csv(reports, path)
    assert path.read_text().splitlines()[0] == "k,t,threshold,tp,fp,fn,tn,precision,recall,f1"
    back = ek.read_reports_csv(path)
    assert [r.row() for r in back] == [r.row() for r in reports]
