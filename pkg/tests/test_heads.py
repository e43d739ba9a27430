import numpy as np
import pytest

from fewmux import heads as hd


class TestFitHead:
    def test_linearly_separable_binary(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(20, 2)) + np.array([3.0, 0.0])
        x1 = rng.normal(size=(20, 2)) + np.array([-3.0, 0.0])
        x = np.vstack([x0, x1])
        y = np.array([0] * 20 + [1] * 20)
        head = hd.fit_head(x, y, hd.HEAD_LOGISTIC)
        preds = hd.predict_batch(head, x)
        assert (preds == y).mean() == 1.0

    def test_random_labels_chance_level(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2000, 8))
        y = rng.integers(0, 4, size=2000)
        head = hd.fit_head(x, y, hd.HEAD_SOFTMAX)
        rng_eval = np.random.default_rng(2)
        x_eval = rng_eval.normal(size=(2000, 8))
        y_eval = rng_eval.integers(0, 4, size=2000)
        acc = (hd.predict_batch(head, x_eval) == y_eval).mean()
        assert abs(acc - 0.25) < 0.05

    def test_convexity_reruns_agree(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 5))
        y = rng.integers(0, 3, size=30)
        a = hd.fit_head(x, y, hd.HEAD_SOFTMAX)
        b = hd.fit_head(x.copy(), y.copy(), hd.HEAD_SOFTMAX)
        assert np.abs(a.weight - b.weight).max() < 1e-6
        assert np.abs(a.bias - b.bias).max() < 1e-6

    def test_single_class_logistic_degenerate(self):
        x = np.random.default_rng(4).normal(size=(5, 3))
        head = hd.fit_head(x, [1, 1, 1, 1, 1], hd.HEAD_LOGISTIC)
        assert head.degenerate
        assert all(hd.predict(head, row)[0] == 1 for row in x)

    def test_monotone_l2(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 4))
        y = rng.integers(0, 2, size=40)
        losses = []
        for l2 in (0.0, 1e-3, 1e-1, 1.0):
            head = hd.fit_head(x, y, hd.HEAD_LOGISTIC, l2=l2)
            losses.append(hd.head_loss(head, x, y))
        assert all(b >= a - 1e-9 for a, b in zip(losses, losses[1:]))

    def test_gradient_matches_finite_differences(self):
        # the analytic head gradient vs central differences of the loss
        rng = np.random.default_rng(6)
        x = rng.normal(size=(12, 4))
        y = rng.integers(0, 3, size=12)
        c, d = 3, 4
        w = rng.normal(size=(d, c)) * 0.3
        b = rng.normal(size=c) * 0.3
        l2 = 1e-2

        onehot = np.zeros((12, c))
        onehot[np.arange(12), y] = 1.0
        p = hd._softmax(x @ w + b)
        gw = x.T @ ((p - onehot) / 12) + 2 * l2 * w
        gb = ((p - onehot) / 12).sum(axis=0)

        def loss_at(w_, b_):
            return hd.head_loss(hd.SoftmaxHead(w_, b_), x, y, l2=l2)

        eps = 1e-6
        for _ in range(20):
            i, j = rng.integers(0, d), rng.integers(0, c)
            wp, wm = w.copy(), w.copy()
            wp[i, j] += eps
            wm[i, j] -= eps
            num = (loss_at(wp, b) - loss_at(wm, b)) / (2 * eps)
            assert abs(num - gw[i, j]) < 1e-6
        for j in range(c):
            bp, bm = b.copy(), b.copy()
            bp[j] += eps
            bm[j] -= eps
            num = (loss_at(w, bp) - loss_at(w, bm)) / (2 * eps)
            assert abs(num - gb[j]) < 1e-6


class TestPredict:
    def test_zero_weights_uniform_and_tie_to_lowest(self):
        head = hd.SoftmaxHead(weight=np.zeros((4, 3)), bias=np.zeros(3))
        cls, probs = hd.predict(head, np.ones(4))
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-12)
        assert cls == 0

    def test_logistic_zero_logit(self):
        head = hd.LogisticHead(weight=np.zeros(3), bias=0.0)
        cls, probs = hd.predict(head, np.ones(3))
        assert probs[1] == pytest.approx(0.5)
        assert cls == 0  # tie breaks toward the lower index

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(7)
        head = hd.SoftmaxHead(weight=rng.normal(size=(5, 4)), bias=rng.normal(size=4))
        for _ in range(50):
            _, probs = hd.predict(head, rng.normal(size=5) * 10)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs >= 0).all()

    def test_matches_direct_softmax(self):
        rng = np.random.default_rng(8)
        w, b = rng.normal(size=(6, 3)), rng.normal(size=3)
        head = hd.SoftmaxHead(weight=w, bias=b)
        x = rng.normal(size=6)
        _, probs = hd.predict(head, x)
        z = x @ w + b
        expected = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(probs, expected, atol=1e-12)

    def test_dim_mismatch(self):
        head = hd.LogisticHead(weight=np.zeros(3), bias=0.0)
        with pytest.raises(hd.HeadError):
            hd.predict(head, np.zeros(4))


class TestMetrics:
    def test_all_correct(self):
        m = hd.compute_metrics([0, 1, 1, 0], [0, 1, 1, 0], hd.HEAD_LOGISTIC)
        assert m.accuracy == 1.0
        assert m.f1 == 1.0
        assert m.n_eval == 4

    def test_binary_confusion_hand_check(self):
        # TP=2 FP=1 FN=1 -> F1 = 4/6
        preds = [1, 1, 1, 0, 0, 0]
        labels = [1, 1, 0, 1, 0, 0]
        m = hd.compute_metrics(preds, labels, hd.HEAD_LOGISTIC)
        assert m.f1 == pytest.approx(2 * 2 / (2 * 2 + 1 + 1))

    def test_constant_predictor_balanced(self):
        m = hd.compute_metrics([1] * 10, [0, 1] * 5, hd.HEAD_LOGISTIC)
        assert m.accuracy == 0.5

    def test_unseen_class_zero_f1(self):
        m = hd.compute_metrics([0, 0, 1, 1], [0, 0, 1, 1], hd.HEAD_SOFTMAX, num_classes=3)
        assert m.f1 == pytest.approx((1.0 + 1.0 + 0.0) / 3)

    def test_length_mismatch(self):
        with pytest.raises(hd.HeadError):
            hd.compute_metrics([0, 1], [0], hd.HEAD_SOFTMAX)
