import math

import numpy as np
import pytest

from hmdn.errors import ShapeError
from hmdn.mdn import MdnConfig, density, identity_model, mixture_at
from hmdn.numcore import Matrix, Rng
from hmdn.pipeline import (
    HmdnPipeline,
    baseline_samples,
    parse_predictions,
    predict,
    predict_baseline,
    PredictionRecord,
    score_candidates,
    select_top,
    write_predictions,
)


def bimodal_g1(mode_a=(2.0, 5.0), mode_b=(15.0, 5.0), spread=0.3):
    """Input-independent two-mode mixture over the plane (affine head, zero weights)."""
    cfg = MdnConfig(input_dim=1, target_dim=2, n_components=2, hidden_layers=())
    w = Matrix.zeros(1, cfg.output_width)
    b = Matrix([[0.0, 0.0, math.log(spread), math.log(spread), *mode_a, *mode_b]])
    return identity_model(cfg, [w, b])


def linear_g2(sigma=1.0):
    """K=1 head whose mean is the candidate's first coordinate: z ~ N(x, sigma^2)."""
    cfg = MdnConfig(input_dim=2, target_dim=1, n_components=1, hidden_layers=())
    w = Matrix([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    b = Matrix([[0.0, math.log(sigma), 0.0]])
    return identity_model(cfg, [w, b])


def constant_g2():
    """Scores every candidate identically (zero weights everywhere)."""
    cfg = MdnConfig(input_dim=2, target_dim=1, n_components=1, hidden_layers=())
    return identity_model(cfg, [Matrix.zeros(2, 3), Matrix([[0.0, 0.0, 0.0]])])


class TestScoreCandidates:
    def test_identical_candidates_identical_scores(self):
        g2 = linear_g2()
        s = score_candidates(g2, [[3.0, 4.0], [3.0, 4.0]], [2.0])
        assert s[0] == s[1]

    def test_candidate_near_observation_scores_higher(self):
        g2 = linear_g2()
        s = score_candidates(g2, [[2.0, 5.0], [15.0, 5.0]], [2.0])
        assert s[0] > s[1]

    def test_matches_density_op_per_candidate(self):
        g2 = linear_g2(sigma=0.8)
        rng = Rng(3)
        cands = (rng.uniform(20) * 10).reshape(10, 2)
        z = [4.2]
        scores = score_candidates(g2, cands, z)
        for c, s in zip(cands, scores):
            want = math.log(density(mixture_at(g2, c), z))
            assert s == pytest.approx(want, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            score_candidates(linear_g2(), [[1.0, 2.0, 3.0]], [0.0])
        with pytest.raises(ShapeError):
            score_candidates(linear_g2(), [[1.0, 2.0]], [0.0, 1.0])


class TestSelectTop:
    def test_shift_invariance(self):
        rng = Rng(9)
        for _ in range(50):
            scores = rng.uniform(30) * 100 - 50
            c = rng.uniform() * 1000
            base, _ = select_top(scores, 7)
            shifted, _ = select_top(scores + c, 7)
            assert set(base) == set(shifted)

    def test_ties_broken_by_index(self):
        idx, fb = select_top([1.0, 2.0, 1.0, 2.0, 0.5], 3)
        assert list(idx) == [1, 3, 0]
        assert not fb

    def test_all_non_finite_falls_back(self):
        idx, fb = select_top([-math.inf] * 5, 2)
        assert fb and list(idx) == [0, 1, 2, 3, 4]


class TestPredict:
    def setup_method(self):
        self.pipe = HmdnPipeline(g1=bimodal_g1(), g2=linear_g2(), n_candidates=100, n_selected=20)

    def test_selection_no_op_when_m_equals_n(self):
        pipe = HmdnPipeline(g1=bimodal_g1(), g2=linear_g2(), n_candidates=50, n_selected=50)
        est = predict(pipe, [0.0], [2.0], Rng(5))
        assert est.estimate == pytest.approx(est.candidates.mean(axis=0), rel=1e-12)

    def test_bimodal_selection_stays_in_consistent_mode(self):
        est = predict(self.pipe, [0.0], [2.0], Rng(8))
        # observation favors the mode at x=2; every selected point must sit there
        assert np.all(np.abs(est.selected[:, 0] - 2.0) < 2.0)
        assert est.estimate[0] == pytest.approx(2.0, abs=0.5)

    def test_deterministic(self):
        e1 = predict(self.pipe, [0.0], [2.0], Rng(123))
        e2 = predict(self.pipe, [0.0], [2.0], Rng(123))
        assert np.array_equal(e1.estimate, e2.estimate)
        assert np.array_equal(e1.candidates, e2.candidates)
        assert np.array_equal(e1.selected_indices, e2.selected_indices)

    def test_selected_subset_invariants(self):
        est = predict(self.pipe, [0.0], [2.0], Rng(77))
        assert est.selected_indices.shape == (20,)
        assert len(set(est.selected_indices.tolist())) == 20
        unselected = np.setdiff1d(np.arange(100), est.selected_indices)
        assert est.selected_scores.min() >= est.scores[unselected].max()

    def test_estimate_in_convex_hull_of_selected(self):
        est = predict(self.pipe, [0.0], [2.0], Rng(42))
        lo, hi = est.selected.min(axis=0), est.selected.max(axis=0)
        assert np.all(est.estimate >= lo - 1e-12)
        assert np.all(est.estimate <= hi + 1e-12)

    def test_underflow_fallback_flagged(self):
        with pytest.warns(RuntimeWarning):
            est = predict(self.pipe, [0.0], [math.inf], Rng(4))
        assert est.underflow_fallback
        assert est.estimate == pytest.approx(est.candidates.mean(axis=0), rel=1e-12)

    def test_weighted_mean_extension(self):
        est = predict(self.pipe, [0.0], [2.0], Rng(11), weighted=True)
        plain = predict(self.pipe, [0.0], [2.0], Rng(11))
        assert est.weighted and not plain.weighted
        assert np.array_equal(est.selected_indices, plain.selected_indices)
        assert not np.array_equal(est.estimate, plain.estimate)
        lo, hi = est.selected.min(axis=0), est.selected.max(axis=0)
        assert np.all(est.estimate >= lo - 1e-12) and np.all(est.estimate <= hi + 1e-12)

    def test_uninformative_g2_matches_baseline_in_expectation(self):
        # constant-density second stage: filtering must not shift the estimate
        pipe = HmdnPipeline(g1=bimodal_g1(), g2=constant_g2(), n_candidates=100, n_selected=20)
        diffs = []
        for t in range(200):
            h = predict(pipe, [0.0], [0.0], Rng(1000 + t))
            b = predict_baseline(pipe.g1, [0.0], Rng(5000 + t), 100)
            diffs.append(h.estimate - b)
        mean_diff = np.mean(diffs, axis=0)
        # per-coordinate variance of the two-mode cloud, then a 4-sigma bound
        var = 0.5 * (2.0**2 + 15.0**2) - 8.5**2 + 0.3**2
        bound = 4.0 * math.sqrt(var * (1 / 20 + 1 / 100) / 200)
        assert abs(mean_diff[0]) <= bound

    def test_pipeline_dimension_contract(self):
        with pytest.raises(ShapeError):
            HmdnPipeline(g1=bimodal_g1(), g2=bimodal_g1())
        with pytest.raises(ValueError):
            HmdnPipeline(g1=bimodal_g1(), g2=linear_g2(), n_candidates=10, n_selected=11)


class TestPredictBaseline:
    def test_single_component_clt(self):
        cfg = MdnConfig(input_dim=1, target_dim=2, n_components=1, hidden_layers=())
        g1 = identity_model(
            cfg, [Matrix.zeros(1, cfg.output_width), Matrix([[0.0, math.log(1.0), 3.0, -2.0]])]
        )
        m = 2000
        est = predict_baseline(g1, [0.0], Rng(21), m)
        bound = 4.0 / math.sqrt(m)
        assert abs(est[0] - 3.0) <= bound and abs(est[1] + 2.0) <= bound

    def test_m_one_is_single_sample(self):
        g1 = bimodal_g1()
        est = predict_baseline(g1, [0.0], Rng(33), 1)
        s = baseline_samples(g1, [0.0], Rng(33), 1)
        assert np.array_equal(est, s[0])

    def test_deterministic(self):
        g1 = bimodal_g1()
        assert np.array_equal(
            predict_baseline(g1, [0.0], Rng(3), 50), predict_baseline(g1, [0.0], Rng(3), 50)
        )


class TestPredictionDump:
    def make_records(self):
        pipe = HmdnPipeline(g1=bimodal_g1(), g2=linear_g2(), n_candidates=10, n_selected=3)
        records = []
        for rid, cond in [(0, "sunny"), (1, "cloudy")]:
            est = predict(pipe, [0.0], [2.0], Rng(100 + rid))
            base = baseline_samples(pipe.g1, [0.0], Rng(200 + rid), 10)
            records.append(
                PredictionRecord(
                    record_id=rid,
                    condition=cond,
                    truth=np.array([2.2, 4.9]),
                    z=np.array([2.0]),
                    baseline_samples=base,
                    baseline_estimate=base.mean(axis=0),
                    hmdn=est,
                )
            )
        return records

    def test_round_trip(self, tmp_path):
        path = tmp_path / "dump.txt"
        records = self.make_records()
        write_predictions(path, records, master_seed=55, m=10, n=3)
        back = parse_predictions(path)
        assert len(back) == len(records)
        for orig, got in zip(records, back):
            assert got.record_id == orig.record_id
            assert got.condition == orig.condition
            assert np.array_equal(got.truth, orig.truth)
            assert np.array_equal(got.z, orig.z)
            assert np.array_equal(got.baseline_samples, orig.baseline_samples)
            assert np.array_equal(got.baseline_estimate, orig.baseline_estimate)
            assert np.array_equal(got.hmdn.estimate, orig.hmdn.estimate)
            assert np.array_equal(got.hmdn.candidates, orig.hmdn.candidates)
            assert np.array_equal(got.hmdn.scores, orig.hmdn.scores)
            assert set(got.hmdn.selected_indices.tolist()) == set(
                orig.hmdn.selected_indices.tolist()
            )

    def test_selected_block_scores_descending(self, tmp_path):
        path = tmp_path / "dump.txt"
        write_predictions(path, self.make_records(), master_seed=55, m=10, n=3)
        block_scores = []
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) > 4 and parts[0] == "hmdn" and parts[3] == "candidate":
                if parts[-1] == "selected=1":
                    block_scores.append((parts[1], float(parts[-2].split("=")[1])))
        assert block_scores
        by_record: dict = {}
        for rid, s in block_scores:
            by_record.setdefault(rid, []).append(s)
        for scores in by_record.values():
            assert scores == sorted(scores, reverse=True)
