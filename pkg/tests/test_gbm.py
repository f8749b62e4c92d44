import numpy as np
import pytest

from asrroute import _kernels
from asrroute.errors import ModelFormatError, SchemaMismatchError
from asrroute.gbm import (
    BinaryClassifier,
    Hyperparams,
    Tree,
    classifier_to_dict,
    feature_importance,
    load_model,
    predict_proba,
    predict_proba_batch,
    save_model,
    train_binary,
)


def xor_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    return X, y


def leaf_only_model(weight, base=0.0, lr=1.0):
    tree = Tree(
        feature=np.array([-1], dtype=np.int32),
        threshold=np.zeros(1),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        default_left=np.ones(1, dtype=np.uint8),
        value=np.array([weight]),
        gain=np.zeros(1),
        cover=np.zeros(1),
    )
    return BinaryClassifier(
        challenger_id="c", pivot_id="p", trees=[tree], learning_rate=lr,
        base_logit=base, hyperparams=Hyperparams(), feature_schema_hash="",
        n_features=2,
    )


class TestHyperparams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_rounds": 0},
            {"max_depth": 0},
            {"learning_rate": 0.0},
            {"learning_rate": 1.5},
            {"min_child_hessian": -1},
            {"l2_leaf": -0.1},
            {"feature_subsample": 0.0},
            {"row_subsample": 1.2},
        ],
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            Hyperparams(**kwargs)

    def test_round_trip(self):
        hp = Hyperparams(n_rounds=7, max_depth=2, learning_rate=0.1)
        assert Hyperparams.from_dict(hp.to_dict()) == hp


class TestTrainBinary:
    def test_separable_threshold_rule(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 1))
        y = (X[:, 0] > 0).astype(float)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=20, max_depth=2), seed=0)
        p = predict_proba_batch(model, X)
        acc = np.mean((p > 0.5) == (y == 1))
        assert acc >= 0.99

    def test_xor_needs_depth_two(self):
        X, y = xor_data()
        deep = train_binary(X, y, hp=Hyperparams(n_rounds=60, max_depth=3), seed=0)
        acc_deep = np.mean((predict_proba_batch(deep, X) > 0.5) == (y == 1))
        assert acc_deep >= 0.95
        stump = train_binary(X, y, hp=Hyperparams(n_rounds=60, max_depth=1), seed=0)
        acc_stump = np.mean((predict_proba_batch(stump, X) > 0.5) == (y == 1))
        assert acc_stump <= 0.6

    def test_weight_scale_invariance(self):
        X, y = xor_data(400, seed=3)
        hp = Hyperparams(
            n_rounds=10, max_depth=3, l2_leaf=0.0, min_child_hessian=0.0,
        )
        m1 = train_binary(X, y, np.ones(400), hp=hp, seed=5)
        m3 = train_binary(X, y, np.full(400, 3.0), hp=hp, seed=5)
        for t1, t3 in zip(m1.trees, m3.trees):
            assert np.array_equal(t1.feature, t3.feature)
            assert np.allclose(t1.threshold, t3.threshold, atol=1e-9)
            assert np.allclose(t1.value, t3.value, atol=1e-9)

    def test_zero_weight_rows_are_inert(self, tmp_path):
        X, y = xor_data(300, seed=4)
        rng = np.random.default_rng(9)
        w = np.ones(300)
        drop = rng.choice(300, size=60, replace=False)
        w[drop] = 0.0
        hp = Hyperparams(n_rounds=15, max_depth=3)
        with_zeros = train_binary(X, y, w, hp=hp, seed=11)
        keep = w > 0
        without = train_binary(X[keep], y[keep], w[keep], hp=hp, seed=11)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(with_zeros, p1)
        save_model(without, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loss_non_increasing_full_sampling(self):
        X, y = xor_data(800, seed=6)
        model = train_binary(
            X, y, hp=Hyperparams(n_rounds=100, max_depth=3, learning_rate=0.3),
            seed=0,
        )
        losses = np.array(model.train_loss)
        assert np.all(np.diff(losses) <= 1e-12)

    def test_single_class_rejected(self):
        X = np.zeros((10, 2))
        with pytest.raises(ValueError, match="single-class"):
            train_binary(X, np.zeros(10))
        w = np.ones(10)
        w[:5] = 0.0
        y = np.r_[np.ones(5), np.zeros(5)]
        with pytest.raises(ValueError, match="single-class"):
            train_binary(X, y, w)

    def test_all_zero_weights_rejected(self):
        X, y = xor_data(10)
        with pytest.raises(ValueError, match="zero"):
            train_binary(X, y, np.zeros(10))

    def test_non_finite_feature_rejected(self):
        X, y = xor_data(10)
        X[3, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            train_binary(X, y)

    def test_deterministic_given_seed_with_subsampling(self):
        X, y = xor_data(500, seed=8)
        hp = Hyperparams(
            n_rounds=12, max_depth=3, row_subsample=0.7, feature_subsample=0.5,
        )
        m1 = train_binary(X, y, hp=hp, seed=21)
        m2 = train_binary(X, y, hp=hp, seed=21)
        assert classifier_to_dict(m1) == classifier_to_dict(m2)

    def test_thresholds_strictly_between_observed_values(self):
        X, y = xor_data(300, seed=10)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=8, max_depth=3), seed=0)
        for tree in model.trees:
            for i in range(tree.n_nodes):
                f = tree.feature[i]
                if f < 0:
                    continue
                col = np.sort(np.unique(X[:, f]))
                t = tree.threshold[i]
                assert col[0] < t <= col[-1]
                # t falls strictly between two adjacent observed values
                below = col[col < t]
                above = col[col >= t]
                assert below.size and above.size

    def test_max_depth_respected(self):
        X, y = xor_data(500, seed=12)
        for depth in (1, 2, 4):
            model = train_binary(
                X, y, hp=Hyperparams(n_rounds=5, max_depth=depth), seed=0,
            )
            assert max(t.depth() for t in model.trees) <= depth


class TestPredict:
    def test_zero_trees_gives_half(self):
        model = leaf_only_model(0.0)
        model.trees = []
        assert predict_proba(model, np.zeros(2)) == 0.5

    def test_leaf_clamp_bounds_output(self):
        hot = leaf_only_model(15.0)
        cold = leaf_only_model(-15.0)
        hi = predict_proba(hot, np.zeros(2))
        lo = predict_proba(cold, np.zeros(2))
        assert 3e-7 < lo < hi < 1 - 3e-7

    def test_calibration_direction(self):
        X, y = xor_data(600, seed=13)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=30, max_depth=3), seed=0)
        p = predict_proba_batch(model, X)
        assert p[y == 1].mean() > p[y == 0].mean()

    def test_dimension_mismatch(self):
        model = leaf_only_model(1.0)
        with pytest.raises(SchemaMismatchError):
            predict_proba(model, np.zeros(5))

    def test_output_strictly_inside_unit_interval(self):
        X, y = xor_data(200, seed=14)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=40, max_depth=4), seed=0)
        p = predict_proba_batch(model, X)
        assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_nan_routes_default_direction(self):
        X, y = xor_data(300, seed=15)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=5, max_depth=2), seed=0)
        x = X[0].copy()
        x[0] = np.nan
        p = predict_proba(model, x)
        assert 0.0 < p < 1.0


class TestImportance:
    def test_planted_relevance(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(800, 6))
        y = (X[:, 0] > 0).astype(float)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=20, max_depth=2), seed=0)
        imp, _ = feature_importance(model)
        assert imp[0] >= 0.9

    def test_normalization(self):
        X, y = xor_data(300, seed=17)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=10, max_depth=3), seed=0)
        imp, _ = feature_importance(model)
        assert np.all(imp >= 0)
        assert imp.sum() == pytest.approx(1.0, abs=1e-9)

    def test_averaging_identical_models(self):
        X, y = xor_data(300, seed=18)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=10, max_depth=3), seed=0)
        single, _ = feature_importance(model)
        triple, _ = feature_importance([model, model, model])
        assert np.allclose(single, triple)

    def test_untrained_rejected(self):
        model = leaf_only_model(1.0)
        model.trees = []
        with pytest.raises(ValueError, match="untrained"):
            feature_importance(model)


class TestSerialization:
    def test_round_trip_probabilities(self, tmp_path):
        X, y = xor_data(400, seed=19)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=15, max_depth=3), seed=0)
        p = tmp_path / "m.json"
        save_model(model, p)
        back = load_model(p)
        probes = np.random.default_rng(0).uniform(-1, 1, size=(100, 2))
        d = np.abs(predict_proba_batch(model, probes) - predict_proba_batch(back, probes))
        assert d.max() <= 1e-12

    def test_version_mismatch(self, tmp_path):
        X, y = xor_data(100, seed=20)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=2), seed=0)
        p = tmp_path / "m.json"
        save_model(model, p)
        text = p.read_text().replace('"schema_version": 1', '"schema_version": 99')
        p.write_text(text)
        with pytest.raises(ModelFormatError, match="version"):
            load_model(p)

    def test_truncated_file(self, tmp_path):
        X, y = xor_data(100, seed=21)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=2), seed=0)
        p = tmp_path / "m.json"
        save_model(model, p)
        p.write_bytes(p.read_bytes()[:50])
        with pytest.raises(ModelFormatError, match="corrupted"):
            load_model(p)

    def test_save_load_save_stable_bytes(self, tmp_path):
        X, y = xor_data(150, seed=22)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=3), seed=0)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="numba backend unavailable")
class TestBackendEquivalence:
    def test_scan_splits_paths_agree(self):
        rng = np.random.default_rng(23)
        n, d, k = 500, 7, 3
        X = np.ascontiguousarray(np.round(rng.normal(size=(n, d)), 2))
        g = rng.normal(size=n)
        h = rng.uniform(0.01, 1.0, size=n)
        node_of_row = rng.integers(-1, k, size=n).astype(np.int32)
        order_cols = np.argsort(X, axis=0, kind="stable")
        sorted_vals = np.ascontiguousarray(np.take_along_axis(X, order_cols, axis=0).T)
        order = np.ascontiguousarray(order_cols.T.astype(np.int32))
        active = node_of_row >= 0
        node_g = np.bincount(node_of_row[active], weights=g[active], minlength=k)
        node_h = np.bincount(node_of_row[active], weights=h[active], minlength=k)
        feats = np.arange(d, dtype=np.int64)

        results = {}
        for name in ("numba", "numpy"):
            impl = _kernels.load_backend(name)["scan_splits"]
            best_gain = np.zeros(k)
            best_feat = np.full(k, -1, dtype=np.int32)
            best_thr = np.zeros(k)
            best_gl = np.zeros(k)
            best_hl = np.zeros(k)
            impl(order, sorted_vals, g, h, node_of_row, node_g, node_h, feats,
                 1.0, 0.0, best_gain, best_feat, best_thr, best_gl, best_hl)
            results[name] = (best_gain, best_feat, best_thr, best_gl, best_hl)
        for a, b in zip(results["numba"], results["numpy"]):
            assert np.array_equal(a, b)

    def test_edit_distance_paths_agree(self):
        rng = np.random.default_rng(24)
        for _ in range(200):
            a = rng.integers(0, 4, rng.integers(1, 12)).astype(np.int64)
            b = rng.integers(0, 4, rng.integers(0, 12)).astype(np.int64)
            nb = _kernels.load_backend("numba")["edit_distance"](a, b)
            py = _kernels.load_backend("numpy")["edit_distance"](a, b)
            assert nb == py

    def test_predict_paths_agree(self):
        X, y = xor_data(300, seed=25)
        model = train_binary(X, y, hp=Hyperparams(n_rounds=10, max_depth=3), seed=0)
        feat, thr, left, right, defl, value, roots = model.packed()
        outs = {}
        for name in ("numba", "numpy"):
            out = np.zeros(X.shape[0])
            _kernels.load_backend(name)["predict_margin"](
                feat, thr, left, right, defl, value, roots, X,
                model.learning_rate, model.base_logit, out,
            )
            outs[name] = out
        assert np.array_equal(outs["numba"], outs["numpy"])
