import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llrood import metrics as mt
from llrood.metrics import MetricError, ScoreRecord
from llrood.seqdata import IN, OOD


def auroc_pairwise(a, b):
    """O(n*m) oracle: P(in > ood) + 0.5 P(in == ood)."""
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    wins = np.count_nonzero(a > b) + 0.5 * np.count_nonzero(a == b)
    return wins / (a.size * b.size)


def fpr_scan(a, b, target=0.8):
    """Exhaustive threshold oracle with the >= rule over observed scores."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    best = None
    for t in np.unique(np.r_[a, b]):
        tpr = np.count_nonzero(a >= t) / a.size
        if tpr >= target - 1e-12:
            fpr = np.count_nonzero(b >= t) / b.size
            best = fpr if best is None else min(best, fpr)
    return best


def ap_enumerate(a, b):
    """Average precision by explicit tie-group enumeration."""
    vals = sorted(set(a) | set(b), reverse=True)
    tp = fp = 0
    total = 0.0
    for v in vals:
        dp = sum(1 for x in a if x == v)
        tp += dp
        fp += sum(1 for x in b if x == v)
        total += dp * tp / (tp + fp)
    return total / len(a)


class TestAuroc:
    def test_perfect(self):
        assert mt.auroc([2, 3], [0, 1]) == 1.0

    def test_full_tie(self):
        assert mt.auroc([1], [1]) == 0.5

    def test_pairwise_example(self):
        assert mt.auroc([3, 1, 2], [2, 0]) == 0.75

    def test_errors(self):
        with pytest.raises(MetricError):
            mt.auroc([], [1])
        with pytest.raises(MetricError):
            mt.auroc([np.nan], [1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=40), st.lists(st.integers(-5, 5), min_size=1, max_size=40))
    def test_equals_pairwise_with_ties(self, a, b):
        assert mt.auroc(a, b) == auroc_pairwise(a, b)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30, unique=True))
    def test_swap_complement(self, vals):
        if len(vals) < 2:
            return
        a, b = vals[: len(vals) // 2], vals[len(vals) // 2:]
        assert mt.auroc(a, b) == pytest.approx(1 - mt.auroc(b, a), abs=1e-15)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(1, 1, 200), rng.normal(0, 1, 150)
        assert mt.auroc(a, b) == mt.auroc(np.exp(a), np.exp(b)) == mt.auroc(3 * a + 7, 3 * b + 7)


class TestAuprc:
    def test_perfect(self):
        assert mt.auprc([5, 6], [1, 2]) == 1.0

    def test_all_tied(self):
        assert mt.auprc([1, 1, 1], [1, 1, 1]) == 0.5

    def test_hand_example(self):
        assert mt.auprc([3, 1], [2]) == pytest.approx(5 / 6, abs=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=25), st.lists(st.integers(0, 6), min_size=1, max_size=25))
    def test_matches_enumeration(self, a, b):
        v = mt.auprc(a, b)
        assert v == pytest.approx(ap_enumerate(a, b), abs=1e-12)
        assert 0 < v <= 1


class TestFpr:
    def test_perfect(self):
        assert mt.fpr_at_tpr([5, 6, 7], [1, 2]) == 0.0

    def test_identical_distributions(self):
        s = np.arange(10.0)
        assert mt.fpr_at_tpr(s, s.copy()) == pytest.approx(0.8)

    def test_spec_example(self):
        # 3 of 4 in-scores is only 0.75 TPR, so the threshold must drop to 0
        assert mt.fpr_at_tpr([3, 2, 1, 0], [2.5, 0.5]) == fpr_scan([3, 2, 1, 0], [2.5, 0.5]) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=30), st.lists(st.integers(-4, 4), min_size=1, max_size=30),
           st.sampled_from([0.5, 0.8, 0.95]))
    def test_matches_scan(self, a, b, target):
        assert mt.fpr_at_tpr(a, b, target) == fpr_scan(a, b, target)

    def test_non_increasing_as_target_drops(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(1, 1, 100), rng.normal(0, 1, 100)
        vals = [mt.fpr_at_tpr(a, b, t) for t in (0.99, 0.9, 0.8, 0.5, 0.2)]
        assert all(x >= y for x, y in zip(vals, vals[1:]))


class TestPearson:
    def test_linear(self):
        x = np.arange(5.0)
        assert mt.pearson(x, 2 * x + 1) == pytest.approx(1.0)
        assert mt.pearson(x, -x) == pytest.approx(-1.0)

    def test_hand(self):
        assert mt.pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)

    def test_zero_variance(self):
        with pytest.raises(MetricError):
            mt.pearson([1, 1, 1], [1, 2, 3])


def recs(method, ins, oods, seed=None, **kw):
    out = [ScoreRecord(f"i{k}", IN, method, float(s), seed=seed, **kw) for k, s in enumerate(ins)]
    out += [ScoreRecord(f"o{k}", OOD, method, float(s), seed=seed, **kw) for k, s in enumerate(oods)]
    return out


class TestClassDistance:
    def _records(self):
        rng = np.random.default_rng(1)
        rs = [ScoreRecord(f"i{k}", IN, "llr", float(v), class_label=0) for k, v in enumerate(rng.normal(2, 1, 50))]
        for c, (shift, dist) in enumerate([(1.5, 0.1), (0.5, 0.3), (-1.0, 0.6)]):
            rs += [ScoreRecord(f"c{c}:{k}", OOD, "llr", float(v), class_label=10 + c, min_d2s_distance=dist)
                   for k, v in enumerate(rng.normal(shift, 1, 30))]
        return rs

    def test_per_class_matches_direct(self):
        rs = self._records()
        rows, pcc = mt.per_class_auroc_vs_distance(rs)
        ins = [r.score for r in rs if r.origin == IN]
        for label, dist, a, n in rows:
            assert a == mt.auroc(ins, [r.score for r in rs if r.class_label == label])
            assert n == 30
        assert pcc > 0

    def test_single_class_rejected(self):
        rs = [r for r in self._records() if r.origin == IN or r.class_label == 10]
        with pytest.raises(MetricError):
            mt.per_class_auroc_vs_distance(rs)


class TestReport:
    def test_perfect_row(self):
        rep = mt.build_report(recs("llr", [3, 4, 5], [0, 1]))
        r = rep.row("llr")
        assert (r["auroc"], r["auprc"], r["fpr80"]) == (1.0, 1.0, 0.0)

    def test_two_methods_match_direct(self):
        rng = np.random.default_rng(2)
        a1, b1, a2, b2 = (rng.normal(size=40) for _ in range(4))
        rep = mt.build_report(recs("llr", a1, b1) + recs("likelihood", a2, b2))
        assert [r["method"] for r in rep.rows] == ["likelihood", "llr"]
        assert rep.row("llr")["auroc"] == mt.auroc(a1, b1)
        assert rep.row("likelihood")["fpr80"] == mt.fpr_at_tpr(a2, b2)
        assert rep.row("likelihood")["auprc"] == mt.auprc(a2, b2)

    def test_multi_seed_mean_stderr(self):
        rng = np.random.default_rng(3)
        runs = [(rng.normal(1, 1, 30), rng.normal(0, 1, 30)) for _ in range(4)]
        rs = [r for s, (a, b) in enumerate(runs) for r in recs("waic", a, b, seed=s)]
        row = mt.build_report(rs).row("waic")
        vals = [mt.auroc(a, b) for a, b in runs]
        assert row["auroc"] == pytest.approx(np.mean(vals))
        assert row["auroc_stderr"] == pytest.approx(np.std(vals, ddof=1) / 2)
        assert row["n_seeds"] == 4

    def test_roc_endpoints_and_ranges(self):
        rng = np.random.default_rng(4)
        rep = mt.build_report(recs("llr", rng.normal(1, 1, 50), rng.normal(0, 1, 70)))
        pts = rep.roc["llr"]
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        xs = [p[0] for p in pts]
        assert xs == sorted(xs)
        for r in rep.rows:
            assert all(0 <= r[k] <= 1 for k in ("auroc", "auprc", "fpr80"))

    def test_equal_subsampling(self):
        rng = np.random.default_rng(5)
        rep = mt.build_report(recs("llr", rng.normal(size=80), rng.normal(size=30)), subsample_equal=True)
        assert rep.row("llr")["n_in"] == rep.row("llr")["n_ood"] == 30

    def test_unknown_method(self):
        with pytest.raises(MetricError):
            mt.build_report(recs("bogus", [1], [0]))

    def test_gc_correlation(self):
        rs = recs("likelihood", [1, 2, 3], [4, 5], gc_content=None)
        for r, gc in zip(rs, [0.1, 0.2, 0.3, 0.4, 0.5]):
            r.gc_content = gc
        rep = mt.build_report(rs)
        assert rep.correlations["likelihood:gc_content"] == pytest.approx(1.0)

    def test_write_and_rerun_identical(self, tmp_path):
        rng = np.random.default_rng(6)
        rs = recs("llr", rng.normal(1, 1, 20), rng.normal(0, 1, 20))
        mt.write_scores(tmp_path / "s.jsonl", rs, {"stage": "score"})
        back = mt.read_scores(tmp_path / "s.jsonl")
        assert [r.score for r in back] == [r.score for r in rs]
        for d in ("a", "b"):
            mt.write_report(mt.build_report(back), tmp_path / d, {"stage": "eval"})
        for name in ("metrics.csv", "roc_points.csv", "pr_points.csv", "hist_bins.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / "metrics.csv").read_text().startswith("# {")

    def test_score_record_validation(self):
        with pytest.raises(MetricError):
            ScoreRecord("x", IN, "llr", float("inf"))
        with pytest.raises(MetricError):
            ScoreRecord("x", "unknown", "llr", 0.0)
