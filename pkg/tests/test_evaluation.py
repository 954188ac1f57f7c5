import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixel_transfer.evaluation import (
    MetricReport,
    color_ssim,
    dd_retrieve,
    dd_retrieve_scores,
    evaluate_model,
    retrieval_eval,
    rmse,
)

skimage_metrics = pytest.importorskip("skimage.metrics")


def _img(seed, shape=(3, 64, 64)):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


def _skimage_cssim(a, b):
    ua, ub = (a + 1) / 2, (b + 1) / 2
    vals = [
        skimage_metrics.structural_similarity(ua[c], ub[c], data_range=1.0, gaussian_weights=True, sigma=1.5,
                                              use_sample_covariance=False)
        for c in range(3)
    ]
    return float(np.mean(vals))


class TestSSIM:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_skimage(self, seed):
        a = _img(seed)
        b = np.clip(a + np.random.default_rng(seed + 50).normal(0, 0.3, a.shape), -1, 1)
        # skimage crops the same 5-pixel border that valid filtering drops
        assert color_ssim(a, b) == pytest.approx(_skimage_cssim(a, b), abs=1e-6)

    def test_constant_vs_noise_is_low(self):
        assert color_ssim(np.zeros((3, 64, 64)), _img(1)) < 0.2

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            color_ssim(np.zeros((3, 64, 64)), np.zeros((3, 32, 32)))
        with pytest.raises(ValueError):
            color_ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


class TestRMSE:
    def test_values(self):
        assert rmse(np.full((3, 4, 4), -1.0), np.full((3, 4, 4), 1.0)) == 1.0
        assert rmse(np.zeros((3, 4, 4)), np.full((3, 4, 4), 1.0)) == 0.5
        with pytest.raises(ValueError):
            rmse(np.zeros(3), np.zeros(4))

    def test_identity_and_symmetry_on_50_images(self):
        for seed in range(50):
            a, b = _img(seed), _img(seed + 1000)
            assert rmse(a, a) == 0.0
            assert color_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
            assert abs(rmse(a, b) - rmse(b, a)) < 1e-7
            assert abs(color_ssim(a, b) - color_ssim(b, a)) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(range(3)))
def test_channel_permutation_invariance(seed, perm):
    a, b = _img(seed, (3, 16, 16)), _img(seed + 1, (3, 16, 16))
    assert rmse(a[list(perm)], b[list(perm)]) == pytest.approx(rmse(a, b), rel=1e-12)
    assert color_ssim(a[list(perm)], b[list(perm)]) == pytest.approx(color_ssim(a, b), rel=1e-9)


def test_report_round_trip():
    rep = MetricReport("rf_dd", "test", ["p1/model_0.png", "p2/model_1.png"], ["p1", "p2"], [0.25, 0.5], [0.4, 0.1],
                       {"retrieval_accuracy": 0.5})
    back = MetricReport.from_text(rep.to_text())
    assert back == rep
    assert "summary\tmean_rmse\t0.375000" in rep.to_text()


class TestOracles:
    def test_ground_truth_generator_is_perfect(self, tiny_dataset):
        lookup = {}
        for pid, path in tiny_dataset.pairs("test"):
            lookup[tiny_dataset.image(path).tobytes()] = tiny_dataset.target(pid)
        rep = evaluate_model(lambda src: np.stack([lookup[s.tobytes()] for s in src]), tiny_dataset, "test", batch_size=3)
        assert rep.count == len(tiny_dataset.pairs("test"))
        assert rep.mean_rmse == 0.0 and rep.mean_c_ssim == pytest.approx(1.0)

    def test_constant_generator_is_worse(self, tiny_dataset):
        rep = evaluate_model(lambda src: np.zeros_like(src), tiny_dataset, "test")
        assert rep.mean_rmse > 0.1 and rep.mean_c_ssim < 0.9

    def test_empty_split(self, tiny_dataset):
        from pixel_transfer.dataset import load_lookbook

        with pytest.raises(ValueError):
            evaluate_model(lambda s: s, load_lookbook(tiny_dataset.root), "val")


class TestRetrieval:
    @staticmethod
    def _match(src, tgt):
        # a scorer that knows the pairing: 1 for matching color means, else by distance
        return -np.abs(src.mean(axis=(1, 2, 3)) - tgt.mean(axis=(1, 2, 3)))

    def test_scores_shape(self):
        s = dd_retrieve_scores(_img(0, (3, 3, 64, 64)), _img(1, (5, 3, 64, 64)), self._match, batch_size=4)
        assert s.shape == (3, 5)

    def test_ties_go_to_lowest_id(self):
        products = [("b", np.zeros((3, 64, 64))), ("a", np.zeros((3, 64, 64))), ("c", np.ones((3, 64, 64)))]
        assert dd_retrieve(np.zeros((3, 64, 64)), products, lambda s, t: np.zeros(len(s))) == "a"
        assert dd_retrieve(np.ones((3, 64, 64)), products, self._match) == "c"
        with pytest.raises(ValueError):
            dd_retrieve(np.zeros((3, 64, 64)), [], self._match)

    def test_oracle_scorer_is_exact(self, tiny_dataset):
        owner = {tiny_dataset.image(p).tobytes(): pid for pid, p in tiny_dataset.pairs("test")}
        ids = sorted(tiny_dataset.product_ids)
        # products with the same garment, color and pattern render identical targets
        renders = {}
        for pid in ids:
            renders.setdefault(tiny_dataset.target(pid).tobytes(), []).append(pid)

        def oracle(src, tgt):
            return np.array([float(owner[s.tobytes()] in renders[t.tobytes()]) for s, t in zip(src, tgt)])

        acc, rep = retrieval_eval(tiny_dataset, oracle, "test", "all")
        first = {pid: renders[tiny_dataset.target(pid).tobytes()][0] for pid in ids}
        pairs = tiny_dataset.pairs("test")
        assert acc == pytest.approx(np.mean([first[pid] == pid for pid, _ in pairs]))
        assert rep.mean_rmse == 0.0
        assert rep.extra["retrieval_chance"] == pytest.approx(1 / len(ids))
