import math

import numpy as np
import pytest

from shilldetect.dataset import ValidationError
from shilldetect.learners import (K_GRID, T_GRID, U_GRID, DecisionStump,
                                  KnnModel, StumpEnsemble, TrainConfig,
                                  adaboost_train, classify, knn_classify,
                                  knn_predict, knn_predict_standardized,
                                  knn_train, load_model, radaboost_train,
                                  save_model, select_hyperparams, train_stump)

from _oracles import knn_oracle, stump_oracle


def _random_problem(rng, n=40, d=3, separable=False):
    X = rng.normal(size=(n, d))
    if separable:
        y = np.where(X[:, 0] > 0, 1, -1)
    else:
        y = np.where(rng.random(n) < 0.5, 1, -1)
        if len(np.unique(y)) == 1:
            y[0] = -y[0]
    return X, y.astype(np.int64)


# -- stumps ------------------------------------------------------------------


def test_stump_prediction_sign_convention():
    stump = DecisionStump(feature_index=0, threshold=1.5, polarity=1)
    X = np.array([[0.0], [1.5], [2.0]])
    assert stump.predict(X).tolist() == [-1, -1, 1]
    flipped = DecisionStump(feature_index=0, threshold=1.5, polarity=-1)
    assert flipped.predict(X).tolist() == [1, -1, -1]


def test_train_stump_separable_midpoint():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([-1, -1, 1])
    stump, eps = train_stump(X, y, np.full(3, 1 / 3))
    assert eps == 0.0
    assert stump.threshold == 1.5
    assert stump.polarity == 1
    assert stump.predict(X).tolist() == y.tolist()


def test_train_stump_degenerate_weight():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([1, -1, -1])
    w = np.array([1.0, 0.0, 0.0])
    stump, eps = train_stump(X, y, w)
    assert eps == 0.0
    assert stump.predict(X[:1])[0] == 1


def test_train_stump_alternating_pattern():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([1, -1, 1, -1])
    stump, eps = train_stump(X, y, np.full(4, 0.25))
    oracle_eps, winners = stump_oracle(X.tolist(), y.tolist(), [0.25] * 4)
    assert math.isclose(eps, 0.25) and math.isclose(oracle_eps, 0.25)
    assert (stump.feature_index, stump.threshold, stump.polarity) in winners


def test_train_stump_matches_oracle_randomized():
    for trial in range(30):
        rng = np.random.default_rng(300 + trial)
        n = int(rng.integers(3, 12))
        d = int(rng.integers(1, 4))
        X = rng.integers(0, 5, size=(n, d)).astype(float)
        y = np.where(rng.random(n) < 0.5, 1, -1)
        # dyadic weights keep the cumulative sums exact
        w = rng.integers(1, 8, size=n) / 8.0
        stump, eps = train_stump(X, y, w)
        oracle_eps, winners = stump_oracle(X.tolist(), y.tolist(), w.tolist())
        assert math.isclose(eps, oracle_eps, abs_tol=1e-12)
        assert (stump.feature_index, stump.threshold, stump.polarity) in winners


def test_train_stump_all_labels_identical():
    X = np.array([[0.0], [1.0]])
    stump, eps = train_stump(X, np.array([1, 1]), np.array([0.5, 0.5]))
    assert eps == 0.0
    assert stump.predict(X).tolist() == [1, 1]


def test_stump_tie_order_prefers_smaller_feature():
    # both features separate perfectly; the tie rule keeps feature 0
    X = np.array([[0.0, 10.0], [1.0, 11.0], [2.0, 12.0], [3.0, 13.0]])
    y = np.array([-1, -1, 1, 1])
    stump, eps = train_stump(X, y, np.full(4, 0.25))
    assert eps == 0.0
    assert stump.feature_index == 0
    assert stump.threshold == 1.5


# -- boosting ----------------------------------------------------------------


def test_alpha_closed_form():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([1, -1, 1, -1])    # best stump error is 0.25
    ens = adaboost_train(X, y, TrainConfig(max_rounds=1))
    assert math.isclose(ens.rounds[0].alpha, 0.5 * math.log(3))
    assert math.isclose(ens.rounds[0].epsilon, 0.25)


def test_weight_sums_stay_normalized():
    rng = np.random.default_rng(9)
    X, y = _random_problem(rng, n=60, d=4)
    trace = []
    adaboost_train(X, y, TrainConfig(max_rounds=25), trace=trace)
    assert trace, "expected at least one boosting round"
    for record in trace:
        assert abs(record["weight_sum"] - 1.0) <= 1e-9


def test_training_error_bound():
    for trial in range(10):
        rng = np.random.default_rng(500 + trial)
        X, y = _random_problem(rng, n=50, d=3)
        ens = adaboost_train(X, y, TrainConfig(max_rounds=30))
        bound = np.prod([2 * math.sqrt(r.epsilon * (1 - r.epsilon))
                         for r in ens.rounds])
        err = float((ens.predict(X) != y).mean())
        assert err <= bound + 1e-9


def test_separable_reaches_zero_error_quickly():
    rng = np.random.default_rng(3)
    X, y = _random_problem(rng, n=40, d=2, separable=True)
    ens = adaboost_train(X, y, TrainConfig(max_rounds=10))
    assert float((ens.predict(X) != y).mean()) == 0.0
    bound = np.prod([2 * math.sqrt(r.epsilon * (1 - r.epsilon))
                     for r in ens.rounds])
    assert bound == 0.0


def test_single_class_input_rejected():
    X = np.zeros((4, 2))
    with pytest.raises(ValidationError):
        adaboost_train(X, np.ones(4), TrainConfig())
    with pytest.raises(ValidationError):
        radaboost_train(X, -np.ones(4), TrainConfig())


def test_shrink_schedule_values():
    config = TrainConfig(max_rounds=5, u=3)
    assert config.shrink_at(1) == 0.5
    assert config.shrink_at(2) == 0.4
    assert math.isclose(config.shrink_at(3), 1 / 3)


def test_radaboost_with_zero_shrink_equals_adaboost():
    rng = np.random.default_rng(21)
    X, y = _random_problem(rng, n=80, d=4)
    config = TrainConfig(max_rounds=20)
    ada = adaboost_train(X, y, config)
    rada = radaboost_train(
        X, y, TrainConfig(max_rounds=20, shrink_sequence=(0.0,)))
    assert len(ada) == len(rada)
    for a, b in zip(ada.rounds, rada.rounds):
        assert a.stump == b.stump
        assert a.alpha == b.alpha
        assert b.shrink == 0.0
    assert np.array_equal(ada.margins(X), rada.margins(X))


def test_rescale_margins_fold_equals_recursion():
    for trial in range(12):
        rng = np.random.default_rng(700 + trial)
        X, y = _random_problem(rng, n=30, d=3)
        u = int(rng.integers(1, 50))
        ens = radaboost_train(X, y, TrainConfig(max_rounds=8, u=u))
        folded = ens.margins(X)
        literal = ens.margins_recursive(X)
        assert np.max(np.abs(folded - literal)) <= 1e-12


def test_rescale_alphas_match_plain_run():
    # the printed update ignores the shrink, so stumps and alphas agree
    rng = np.random.default_rng(31)
    X, y = _random_problem(rng, n=60, d=3)
    ada = adaboost_train(X, y, TrainConfig(max_rounds=15))
    rada = radaboost_train(X, y, TrainConfig(max_rounds=15, u=5))
    for a, b in zip(ada.rounds, rada.rounds):
        assert a.stump == b.stump and a.alpha == b.alpha


def test_rescale_aware_variant_differs():
    rng = np.random.default_rng(41)
    X, y = _random_problem(rng, n=60, d=3)
    literal = radaboost_train(X, y, TrainConfig(max_rounds=15, u=2))
    aware = radaboost_train(
        X, y, TrainConfig(max_rounds=15, u=2, rescale_aware_weights=True))
    assert len(aware) >= 1
    same = all(a.stump == b.stump for a, b in zip(literal.rounds, aware.rounds))
    assert not same or len(literal) != len(aware)


def test_alpha_positive_for_kept_rounds():
    rng = np.random.default_rng(55)
    X, y = _random_problem(rng, n=50, d=3)
    ens = adaboost_train(X, y, TrainConfig(max_rounds=40))
    assert all(r.alpha > 0 for r in ens.rounds)
    assert all(r.epsilon < 0.5 for r in ens.rounds)


def test_monotone_feature_transform_keeps_predictions():
    rng = np.random.default_rng(61)
    X, y = _random_problem(rng, n=50, d=3)
    config = TrainConfig(max_rounds=15)
    base = adaboost_train(X, y, config).predict(X)
    X2 = X.copy()
    X2[:, 1] = np.exp(X2[:, 1])    # strictly increasing transform
    transformed = adaboost_train(X2, y, config).predict(X2)
    assert np.array_equal(base, transformed)


def test_training_is_deterministic():
    rng = np.random.default_rng(71)
    X, y = _random_problem(rng, n=70, d=4)
    a = radaboost_train(X, y, TrainConfig(max_rounds=12, u=7))
    b = radaboost_train(X, y, TrainConfig(max_rounds=12, u=7))
    assert [r.stump for r in a.rounds] == [r.stump for r in b.rounds]
    assert np.array_equal(a.margins(X), b.margins(X))


# -- classify ----------------------------------------------------------------


def test_classify_empty_ensemble():
    label, margin = classify(StumpEnsemble([]), np.zeros(3))
    assert (label, margin) == (-1, 0.0)


def test_classify_single_stump():
    from shilldetect.learners import BoostRound
    ens = StumpEnsemble([BoostRound(DecisionStump(0, 0.5, 1), 1.0, 0.0, 0.1)])
    label, margin = classify(ens, np.array([2.0]))
    assert label == 1 and margin == 1.0


def test_classify_margin_is_coefficient_sum():
    from shilldetect.learners import BoostRound
    rng = np.random.default_rng(81)
    rounds = [BoostRound(DecisionStump(i % 2, float(rng.normal()), 1),
                         float(rng.random() + 0.1), float(rng.random() * 0.3),
                         0.2)
              for i in range(5)]
    ens = StumpEnsemble(rounds)
    x = rng.normal(size=2)
    coeffs = ens.effective_coefficients()
    expected = sum(c * r.stump.predict(x[None, :])[0]
                   for c, r in zip(coeffs, ens.rounds))
    _, margin = classify(ens, x)
    assert math.isclose(margin, expected, rel_tol=1e-12)


def test_classify_missing_column_fails():
    from shilldetect.learners import BoostRound
    ens = StumpEnsemble([BoostRound(DecisionStump(5, 0.0, 1), 1.0, 0.0, 0.1)])
    with pytest.raises(ValidationError):
        classify(ens, np.zeros(3))


# -- kNN ---------------------------------------------------------------------


def test_knn_query_equals_training_point():
    rng = np.random.default_rng(91)
    X = rng.normal(size=(20, 4))
    y = np.where(rng.random(20) < 0.5, 1, -1).astype(np.int64)
    model = knn_train(X, y, k=1)
    for i in (0, 7, 19):
        assert knn_classify(model, X[i]) == y[i]


def test_knn_weighted_vote_arithmetic():
    # centered orthonormal basis: rows built as cos(theta) e1 + sin(theta) e2
    # have exact Pearson correlation cos(theta) with e1
    e1 = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
    e2 = np.array([1.0, -2.0, 1.0]) / math.sqrt(6)

    def at_distance(d):
        rho = 1.0 - d
        return rho * e1 + math.sqrt(1 - rho ** 2) * e2

    rows = np.vstack([at_distance(0.1), at_distance(0.5), at_distance(0.5)])
    # one close +1 neighbor outweighs two farther -1 ones: 10 > 2 + 2
    model = KnnModel(mean=np.zeros(3), std=np.ones(3), features=rows,
                     labels=np.array([1, -1, -1]), k=3)
    assert knn_predict(model, e1[None, :])[0] == 1
    # flipping the labels flips the vote
    model = KnnModel(mean=np.zeros(3), std=np.ones(3), features=rows,
                     labels=np.array([-1, 1, 1]), k=3)
    assert knn_predict(model, e1[None, :])[0] == -1


def test_knn_matches_oracle():
    rng = np.random.default_rng(101)
    X = rng.normal(size=(20, 5))
    y = np.where(rng.random(20) < 0.5, 1, -1).astype(np.int64)
    model = knn_train(X, y, k=3)
    queries = rng.normal(size=(10, 5))
    got = knn_predict(model, queries)
    scaled_train = (X - model.mean) / model.std
    scaled_q = (queries - model.mean) / model.std
    for row, expect_label in zip(scaled_q, got):
        oracle = knn_oracle(scaled_train.tolist(), y.tolist(), row.tolist(), 3)
        assert oracle == expect_label


def test_knn_constant_vector_gets_unit_distance():
    X = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [1.0, 1.0, 1.0]])
    y = np.array([1, -1, -1])
    model = KnnModel(mean=np.zeros(3), std=np.ones(3), features=X, labels=y, k=1)
    # constant query: all distances 1, stable argsort picks index 0
    assert knn_predict(model, np.array([[2.0, 2.0, 2.0]]))[0] == 1


def test_knn_tie_votes_resolve_genuine():
    X = np.array([[1.0, 2.0], [2.0, 1.0]])
    y = np.array([1, -1])
    model = KnnModel(mean=np.zeros(2), std=np.ones(2), features=X, labels=y, k=2)
    # both neighbors at distance 1 (constant query): vote sum is exactly 0
    assert knn_predict(model, np.array([[1.0, 1.0]]))[0] == -1


def test_knn_standardized_variant_handles_shifted_scales():
    rng = np.random.default_rng(111)
    X = rng.normal(size=(30, 4))
    y = np.where(X[:, 0] > 0, 1, -1).astype(np.int64)
    model = knn_train(X, y, k=3)
    queries = X * np.array([10.0, 0.1, 5.0, 1.0]) + 3.0   # per-column drift
    got = knn_predict_standardized(model, queries)
    assert float((got == y).mean()) >= 0.9


def test_knn_k_bounds():
    X = np.zeros((3, 2))
    with pytest.raises(ValidationError):
        knn_train(X, np.array([1, -1, 1]), k=0)
    with pytest.raises(ValidationError):
        knn_train(X, np.array([1, -1, 1]), k=4)


# -- hyperparameter selection ------------------------------------------------


def test_grids_match_contract():
    assert T_GRID == (10, 20, 50, 100, 200, 500)
    assert K_GRID == (1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25)
    assert len(U_GRID) == 20
    assert U_GRID[0] == 1
    assert U_GRID[-1] == 10 ** 6
    assert all(isinstance(u, int) and u >= 1 for u in U_GRID)


def test_stratified_folds_preserve_class_fraction():
    from shilldetect.learners import _stratified_folds
    rng = np.random.default_rng(121)
    y = np.where(rng.random(200) < 0.3, 1, -1)
    global_frac = (y == 1).mean()
    for _, val_idx in _stratified_folds(y):
        fold_frac = (y[val_idx] == 1).mean()
        assert abs(fold_frac - global_frac) <= 0.02


def test_select_hyperparams_prefers_small_t_on_separable():
    rng = np.random.default_rng(131)
    X = rng.normal(size=(60, 2))
    y = np.where(X[:, 0] > 0, 1, -1).astype(np.int64)
    config = select_hyperparams(X, y, "adaboost")
    assert config.max_rounds == 10    # zero CV error everywhere, tie -> smallest


def test_select_hyperparams_knn_returns_k():
    rng = np.random.default_rng(141)
    X = rng.normal(size=(60, 3))
    y = np.where(X[:, 0] + 0.2 * rng.normal(size=60) > 0, 1, -1).astype(np.int64)
    k = select_hyperparams(X, y, "knn")
    assert k in K_GRID


def test_select_hyperparams_radaboost_searches_both_grids():
    rng = np.random.default_rng(151)
    X = rng.normal(size=(40, 2))
    y = np.where(X[:, 0] > 0, 1, -1).astype(np.int64)
    config = select_hyperparams(X, y, "radaboost")
    assert config.max_rounds in T_GRID
    assert config.u in U_GRID
    # separable data: every grid point reaches zero CV error, ties go small
    assert config.max_rounds == 10 and config.u == 1


def test_select_hyperparams_unknown_algorithm():
    X = np.zeros((20, 2))
    y = np.array([1, -1] * 10)
    with pytest.raises(ValidationError):
        select_hyperparams(X, y, "svm")


def test_select_hyperparams_needs_samples():
    X = np.zeros((6, 2))
    y = np.array([1, 1, 1, -1, -1, -1])
    with pytest.raises(ValidationError):
        select_hyperparams(X, y, "adaboost")


# -- serialization -----------------------------------------------------------


def test_ensemble_round_trip(tmp_path):
    rng = np.random.default_rng(151)
    X, y = _random_problem(rng, n=40, d=3)
    ens = radaboost_train(X, y, TrainConfig(max_rounds=8, u=9))
    path = tmp_path / "model.txt"
    save_model(ens, path, {"algorithm": "radaboost"})
    loaded, meta = load_model(path)
    assert meta["algorithm"] == "radaboost"
    assert [r.stump for r in loaded.rounds] == [r.stump for r in ens.rounds]
    assert np.array_equal(loaded.margins(X), ens.margins(X))


def test_knn_round_trip(tmp_path):
    from shilldetect.features import FEATURE_NAMES, FeatureTable
    rng = np.random.default_rng(161)
    n = 30
    values = rng.normal(size=(n, 18))
    table = FeatureTable(np.arange(1, n + 1), (rng.random(n) < 0.4).astype(int),
                         FEATURE_NAMES, values)
    table.save(tmp_path / "train.csv")
    model = knn_train(values, table.signed_labels(), k=5)
    save_model(model, tmp_path / "knn.txt",
               {"algorithm": "knn", "features_ref": "train.csv", "k": 5})
    loaded, meta = load_model(tmp_path / "knn.txt")
    assert loaded.k == 5
    queries = rng.normal(size=(8, 18))
    assert np.array_equal(knn_predict(loaded, queries),
                          knn_predict(model, queries))
