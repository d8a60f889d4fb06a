import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from csix import dataset as D
from csix import manipulation as X
from csix import mlp
from csix.lrp import explain


@pytest.fixture(scope="module")
def small_setup():
    cfg = D.SynthConfig(M=3, S=6, A=2, train_per_loc=40, test_per_loc=12, sessions_train=4,
                        sessions_test=1, session_drift_sigma=0.1, seed=3)
    train, test = D.generate_synthetic(cfg)
    params = mlp.init_random((12, 16, 12, 3), 0)
    tc = mlp.TrainConfig(backprop_iters=150, pretrain_iters=2, learning_rate=0.01, batch_size=16)
    params, _ = mlp.train(params, train, tc)
    return params, train, test, D.class_stats(train)


def test_ordering_examples():
    s = [0.2, -1.0, 0.5]
    assert X.ordering(s, "O1").order.tolist() == [3, 1, 2]
    assert X.ordering(s, "O2").order.tolist() == [2, 1, 3]
    assert X.ordering(s, "O3").order.tolist() == [2, 3, 1]
    assert X.ordering(s, "O4").order.tolist() == [1, 3, 2]


def test_ordering_ties_by_index():
    assert X.ordering([0.5, -0.5, 0.5, 0.0], "O3").order.tolist() == [1, 2, 3, 4]
    assert X.ordering([0.5, 0.5, 0.1], "O1").order.tolist() == [1, 2, 3]


def test_ordering_errors():
    with pytest.raises(X.ExperimentError):
        X.ordering([0.1, np.nan], "O1")
    with pytest.raises(X.ExperimentError):
        X.ordering([0.1], "O5")


scores = hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(-1, 1))


@settings(max_examples=150, deadline=None)
@given(scores, st.sampled_from(X.KINDS))
def test_ordering_is_monotone_permutation(s, kind):
    order = X.ordering(s, kind).order
    assert sorted(order.tolist()) == list(range(1, len(s) + 1))
    v = s[order - 1]
    key = {"O1": -v, "O2": v, "O3": -np.abs(v), "O4": np.abs(v)}[kind]
    assert np.all(np.diff(key) >= 0)


@settings(max_examples=150, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(-1, 1), unique=True))
def test_o1_reversed_is_o2(s):
    np.testing.assert_array_equal(X.ordering(s, "O1").order[::-1], X.ordering(s, "O2").order)


def test_g_null_examples():
    np.testing.assert_array_equal(X.g_null([1.0, 2.0, 3.0], 2), [1.0, 0.0, 3.0])
    np.testing.assert_array_equal(X.g_null([1.0, 0.0, 3.0], 2), [1.0, 0.0, 3.0])
    with pytest.raises(X.ExperimentError):
        X.g_null([1.0, 2.0], 3)
    with pytest.raises(X.ExperimentError):
        X.g_null([1.0, 2.0], 0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(0, 100)), st.randoms())
def test_g_null_absorbs(x, rnd):
    order = list(range(1, len(x) + 1))
    rnd.shuffle(order)
    for r in order:
        x = X.g_null(x, r)
    assert not np.any(x)


def stats_2x3():
    mean = np.array([[1.0, 2.0, 3.0], [1.0, 5.0, 0.5]])
    std = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 0.1]])
    return D.ClassStats(mean, std)


def test_g_mod_examples():
    st_ = stats_2x3()
    x = np.array([4.0, 7.0, 9.0])
    assert X.g_mod(x, 2, st_, 1, 2, 0.0)[1] == 5.0
    assert X.g_mod(np.array([0.0, 2.0, 0.0]), 2, st_, 1, 2, -0.7)[1] == 5.0
    # mean_m = 1, std ratio 2, h = -1, x - mean_n = 1 -> max(0, 1 - 2) = 0
    assert X.g_mod(np.array([2.0, 0.0, 0.0]), 1, st_, 1, 2, -1.0)[0] == 0.0
    out = X.g_mod(x, 3, st_, 1, 2, 0.5)
    np.testing.assert_array_equal(out[:2], x[:2])
    assert out[2] == max(0.0, 0.5 + 0.5 * 0.1 * (9.0 - 3.0))
    with pytest.raises(X.ExperimentError):
        X.g_mod(x, 4, st_, 1, 2, 0.5)


def test_g_mod_self_identity_at_mean():
    st_ = stats_2x3()
    x = st_.mean[0].copy()
    y = x.copy()
    for r in (1, 2, 3):
        y = X.g_mod(y, r, st_, 1, 1, 1.0)
    np.testing.assert_array_equal(y, x)


def test_manipulation_path_is_cumulative():
    path = X.manipulation_path(np.array([1.0, 2.0, 3.0, 4.0]), np.zeros(4), [2, 4, 1, 3], "nullify", S=4, A=1)
    np.testing.assert_array_equal(path, [[1, 2, 3, 4], [1, 0, 3, 4], [1, 0, 3, 0], [0, 0, 3, 0], [0, 0, 0, 0]])


def test_subcarrier_step_touches_all_antenna_pairs():
    x = np.arange(1.0, 7.0)  # S=3, A=2
    path = X.manipulation_path(x, np.zeros(6), [2, 1, 3], "nullify", S=3, A=2, granularity="subcarrier")
    np.testing.assert_array_equal(path[1], [1, 0, 3, 4, 0, 6])
    assert path.shape == (4, 6)


def test_subcarrier_modify_uses_each_channel_score():
    st_ = D.ClassStats(np.array([[0.0] * 4, [10.0] * 4]), np.ones((2, 4)))
    x = np.array([1.0, 1.0, 1.0, 1.0])
    h = np.array([0.5, 0.0, -0.5, 1.0])
    path = X.manipulation_path(x, h, [1], "modify", S=2, A=2, granularity="subcarrier", stats=st_, n=1, m=2)
    np.testing.assert_array_equal(path[1], [10.5, 1.0, 9.5, 1.0])


def test_curve_starts_at_recall(small_setup):
    params, _, test, _ = small_setup
    for n in (1, 2, 3):
        c = X.progressive_curve(params, test, n, n, "O3")
        Xn = test.subset(location_id=n).X
        recall = np.mean(mlp.predict_batch(params, Xn) == n)
        assert c.frac_true[0] == recall
        assert len(c.points) == test.K + 1
        assert np.all((c.frac_true >= 0) & (c.frac_true <= 1))


def test_full_nullification_collapses(small_setup):
    params, _, test, _ = small_setup
    zero_class = mlp.predict(params, np.zeros(test.K))
    for kind in X.KINDS:
        c = X.progressive_curve(params, test, 2, 2, kind)
        assert c.frac_true[-1] == float(zero_class == 2)


def test_fraction_sum_bounded(small_setup):
    params, _, test, stats = small_setup
    for kind in X.KINDS:
        c = X.progressive_curve(params, test, 1, 3, kind, "modify", stats)
        assert np.all(c.frac_true + c.frac_target <= 1 + 1e-12)


def test_modification_moves_to_target(small_setup):
    params, _, test, stats = small_setup
    for n, m in ((1, 2), (2, 3), (3, 1)):
        c = X.progressive_curve(params, test, n, m, "O2", "modify", stats)
        assert c.frac_target[-1] >= 0.9
        assert c.frac_true[-1] <= 0.1


def test_curve_deterministic_and_csv(small_setup, tmp_path):
    params, _, test, _ = small_setup
    a = X.progressive_curve(params, test, 1, 1, "O1", granularity="subcarrier")
    b = X.progressive_curve(params, test, 1, 1, "O1", granularity="subcarrier")
    assert a.points == b.points
    assert len(a.points) == test.S + 1
    f = tmp_path / "c.csv"
    a.to_csv(f)
    assert f.read_text().splitlines()[0] == "t,frac_true,frac_target"
    np.testing.assert_array_equal(X.load_curve_csv(f), np.array(a.points))


def test_class_mean_ordering_option(small_setup):
    params, _, test, _ = small_setup
    c = X.progressive_curve(params, test, 1, 1, "O3", order_source="class_mean")
    assert c.frac_true[0] == X.progressive_curve(params, test, 1, 1, "O3").frac_true[0]


def test_per_sample_orderings_are_used(small_setup):
    params, _, test, _ = small_setup
    x = test.subset(location_id=1).X[0]
    one = test.with_samples(test.subset(location_id=1).samples[:1])
    c = X.progressive_curve(params, one, 1, 1, "O1")
    order = X.ordering(explain(params, x, 1, 1).h_prime, "O1").order
    path = X.manipulation_path(x, None, order, "nullify", S=test.S, A=test.A)
    np.testing.assert_array_equal(c.frac_true, (mlp.predict_batch(params, path) == 1).astype(float))


def test_curve_errors(small_setup):
    params, _, test, stats = small_setup
    with pytest.raises(X.ExperimentError, match="statistics"):
        X.progressive_curve(params, test, 1, 2, "O2", "modify")
    with pytest.raises(X.ExperimentError, match="no test samples"):
        X.progressive_curve(params, test.subset(location_id=1), 2, 2, "O2")
    with pytest.raises(X.ExperimentError):
        X.progressive_curve(params, test, 1, 2, "O2", "shuffle", stats)


def test_auc():
    c = X.ExperimentCurve("nullify", (1, 1), "O3", "channel", np.arange(3), np.array([1.0, 0.5, 0.0]),
                          np.zeros(3))
    assert c.auc() == 0.5
    assert c.auc("target") == 0.0
