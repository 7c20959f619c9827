"""Tests for the compact classifier: training, evaluation, checkpoints.

Hand-computed oracle: a confusion row pattern with TP=3, FP=1, FN=2 for
class 0 gives IoU_0 = 3 / (3 + 1 + 2) = 0.5.
"""

import struct

import numpy as np
import pytest

from ada_select.errors import InvalidInput
from ada_select.model import (
    ARCH_VERSIONS,
    CHECKPOINT_MAGIC,
    TrainSpec,
    evaluate,
    extract_feature,
    finetune,
    get_flat_params,
    init_classifier,
    load_checkpoint,
    loss_and_grad,
    predict_proba,
    save_checkpoint,
    set_flat_params,
    warmup,
)
from ada_select.pool import (
    Domain,
    DomainPool,
    LabelState,
    Sample,
    acquire_labels,
    build_regions,
)


def pool_from_arrays(x, y, domain=Domain.SOURCE, class_count=None, region_size=4, seed=0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    samples = [
        Sample(id=i, feature=x[i].copy(), true_class=int(y[i])) for i in range(len(y))
    ]
    regions = build_regions(samples, region_size, seed=seed)
    if domain is Domain.SOURCE:
        for r in regions:
            r.label_state = LabelState.LABELED
    return DomainPool(
        domain=domain,
        samples=samples,
        regions=regions,
        class_count=class_count or int(y.max()) + 1,
        feature_dim=x.shape[1],
    )


def blobs(n_per_class, centers, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, center in enumerate(centers):
        xs.append(rng.normal(center, spread, size=(n_per_class, len(center))))
        ys.append(np.full(n_per_class, c))
    return np.vstack(xs), np.concatenate(ys)


def argmax_classifier(class_count):
    """Linear model that predicts the argmax coordinate of a one-hot input."""
    clf = init_classifier(class_count, class_count, arch="linear", seed=0)
    clf.w2 = 10.0 * np.eye(class_count)
    clf.b2 = np.zeros(class_count)
    return clf


class TestInitClassifier:
    def test_shapes(self):
        lin = init_classifier(4, 3, arch="linear", seed=1)
        assert lin.w1 is None and lin.b1 is None
        assert lin.w2.shape == (4, 3) and lin.b2.shape == (3,)
        mlp = init_classifier(4, 3, arch="one_hidden", hidden_units=7, seed=1)
        assert mlp.w1.shape == (4, 7) and mlp.b1.shape == (7,)
        assert mlp.w2.shape == (7, 3)

    def test_seeded_determinism(self):
        a = init_classifier(5, 3, seed=9)
        b = init_classifier(5, 3, seed=9)
        assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
        c = init_classifier(5, 3, seed=10)
        assert not np.array_equal(a.w1, c.w1)

    def test_rejects_bad_config(self):
        with pytest.raises(InvalidInput):
            init_classifier(4, 3, arch="transformer")
        with pytest.raises(InvalidInput):
            init_classifier(0, 3)
        with pytest.raises(InvalidInput):
            init_classifier(4, 1)
        with pytest.raises(InvalidInput):
            init_classifier(4, 3, arch="one_hidden", hidden_units=0)


class TestForwardPass:
    def test_probabilities_normalized(self):
        rng = np.random.default_rng(2)
        clf = init_classifier(6, 4, seed=0)
        probs = predict_proba(clf, rng.standard_normal((20, 6)))
        assert probs.shape == (20, 4)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs >= 0.0)

    def test_single_vector_input_squeezes(self):
        clf = init_classifier(3, 2, seed=0)
        row = predict_proba(clf, np.zeros(3))
        assert row.shape == (2,)
        batch = predict_proba(clf, np.zeros((1, 3)))
        np.testing.assert_array_equal(batch[0], row)

    def test_linear_logits_exact(self):
        clf = argmax_classifier(3)
        probs = predict_proba(clf, np.array([0.0, 1.0, 0.0]))
        want = np.exp([0.0, 10.0, 0.0])
        want /= want.sum()
        np.testing.assert_allclose(probs, want, atol=1e-12)

    def test_extract_feature_is_hidden_rep(self):
        clf = init_classifier(3, 2, arch="one_hidden", hidden_units=5, seed=0)
        x = np.random.default_rng(0).standard_normal((4, 3))
        rep = extract_feature(clf, x)
        np.testing.assert_allclose(rep, np.tanh(x @ clf.w1 + clf.b1))
        lin = init_classifier(3, 2, arch="linear", seed=0)
        np.testing.assert_allclose(extract_feature(lin, x), x)


class TestLossAndGrad:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for arch in ("linear", "one_hidden"):
            clf = init_classifier(4, 3, arch=arch, hidden_units=5, seed=3)
            x = rng.standard_normal((12, 4))
            y = rng.integers(0, 3, 12)
            _, grads = loss_and_grad(clf, x, y)
            flat = get_flat_params(clf)
            eps = 1e-6
            probes = rng.choice(flat.size, size=min(60, flat.size), replace=False)
            analytic = np.concatenate(
                [grads[name].ravel() for name in (["w1", "b1"] if arch == "one_hidden" else []) + ["w2", "b2"]]
            )
            for idx in probes:
                bumped = flat.copy()
                bumped[idx] += eps
                set_flat_params(clf, bumped)
                up, _ = loss_and_grad(clf, x, y)
                bumped[idx] -= 2 * eps
                set_flat_params(clf, bumped)
                down, _ = loss_and_grad(clf, x, y)
                set_flat_params(clf, flat)
                numeric = (up - down) / (2 * eps)
                assert abs(numeric - analytic[idx]) <= 1e-4

    def test_uniform_probs_loss_is_log_c(self):
        clf = init_classifier(3, 4, arch="linear", seed=0)
        clf.w2 = np.zeros((3, 4))
        loss, _ = loss_and_grad(clf, np.ones((5, 3)), np.array([0, 1, 2, 3, 0]))
        np.testing.assert_allclose(loss, np.log(4.0), atol=1e-12)

    def test_rejects_bad_batches(self):
        clf = init_classifier(3, 2, seed=0)
        with pytest.raises(InvalidInput):
            loss_and_grad(clf, np.zeros((0, 3)), np.zeros(0, dtype=int))
        with pytest.raises(InvalidInput):
            loss_and_grad(clf, np.zeros((2, 3)), np.array([0, 2]))

    def test_gradient_step_reduces_loss(self):
        rng = np.random.default_rng(7)
        clf = init_classifier(5, 3, seed=1)
        x = rng.standard_normal((40, 5))
        y = rng.integers(0, 3, 40)
        before, grads = loss_and_grad(clf, x, y)
        for name, g in grads.items():
            getattr(clf, name)[...] -= 0.1 * g
        after, _ = loss_and_grad(clf, x, y)
        assert after < before


class TestTraining:
    def test_linearly_separable_warmup(self):
        x, y = blobs(100, [(-3.0, 0.0), (3.0, 0.0)], seed=4)
        pool = pool_from_arrays(x, y)
        clf = warmup(pool, TrainSpec(learning_rate=0.5, epochs=200, seed=0), arch="linear")
        report = evaluate(clf, pool)
        assert report.accuracy >= 0.99

    def test_one_hidden_solves_nonlinear_layout(self):
        # XOR-style blobs: not linearly separable.
        x, y = blobs(80, [(-2, -2), (2, 2), (-2, 2), (2, -2)], spread=0.4, seed=5)
        y = np.where(y < 2, 0, 1)
        pool = pool_from_arrays(x, y, class_count=2)
        spec = TrainSpec(learning_rate=0.5, epochs=300, seed=0)
        mlp = warmup(pool, spec, arch="one_hidden", hidden_units=16)
        assert evaluate(mlp, pool).accuracy >= 0.95
        lin = warmup(pool, spec, arch="linear")
        assert evaluate(lin, pool).accuracy <= 0.75

    def test_training_is_deterministic(self):
        x, y = blobs(30, [(-1.0, 0.0), (1.0, 0.0)], seed=6)
        pool = pool_from_arrays(x, y)
        spec = TrainSpec(epochs=10, seed=3)
        a = warmup(pool, spec)
        b = warmup(pool, spec)
        np.testing.assert_array_equal(get_flat_params(a), get_flat_params(b))

    def test_zero_epoch_finetune_returns_untouched_copy(self):
        x, y = blobs(10, [(-1.0, 0.0), (1.0, 0.0)], seed=8)
        pool = pool_from_arrays(x, y)
        clf = warmup(pool, TrainSpec(epochs=5, seed=0))
        tuned = finetune(clf, [pool], TrainSpec(epochs=0, seed=0))
        assert tuned is not clf
        np.testing.assert_array_equal(get_flat_params(tuned), get_flat_params(clf))

    def test_finetune_learns_newly_labeled_regions(self):
        x, y = blobs(100, [(-2.0, 0.0), (2.0, 0.0)], seed=9)
        source = pool_from_arrays(x, y)
        clf = warmup(source, TrainSpec(learning_rate=0.5, epochs=60, seed=0), arch="linear")
        # target: same classes in swapped positions; warmup model is wrong there
        tx, ty = blobs(100, [(2.0, 0.0), (-2.0, 0.0)], seed=10)
        target = pool_from_arrays(tx, ty, domain=Domain.TARGET)
        before = evaluate(clf, target).accuracy
        assert before <= 0.10
        acquire_labels(target, [r.id for r in target.regions])
        tuned = finetune(clf, [target], TrainSpec(learning_rate=0.5, epochs=120, seed=0))
        after = evaluate(tuned, target).accuracy
        assert after >= 0.95
        # original model untouched
        assert evaluate(clf, target).accuracy == before

    def test_finetune_requires_labels(self):
        x, y = blobs(10, [(-1.0, 0.0), (1.0, 0.0)], seed=11)
        unlabeled = pool_from_arrays(x, y, domain=Domain.TARGET)
        clf = init_classifier(2, 2, seed=0)
        with pytest.raises(InvalidInput):
            finetune(clf, [unlabeled], TrainSpec(epochs=1))


class TestEvaluate:
    def test_hand_checked_confusion_and_iou(self):
        # (true, predicted) pairs: class 0 has TP=3, FP=1, FN=2 -> IoU 0.5.
        pairs = [(0, 0), (0, 0), (0, 0), (1, 0), (0, 1), (0, 2)]
        y = np.array([t for t, _ in pairs])
        x = np.eye(3)[[p for _, p in pairs]]
        report = evaluate(argmax_classifier(3), pool_from_arrays(x, y, class_count=3))
        np.testing.assert_allclose(report.per_class_iou, [0.5, 0.0, 0.0])
        np.testing.assert_allclose(report.miou, 0.5 / 3.0)
        np.testing.assert_allclose(report.accuracy, 0.5)
        assert report.confusion[0, 0] == 3 and report.confusion[1, 0] == 1

    def test_absent_class_excluded_from_mean(self):
        pairs = [(0, 0), (0, 0), (1, 1)]
        y = np.array([t for t, _ in pairs])
        x = np.eye(4)[[p for _, p in pairs]]
        report = evaluate(argmax_classifier(4), pool_from_arrays(x, y, class_count=4))
        assert np.isnan(report.per_class_iou[2]) and np.isnan(report.per_class_iou[3])
        np.testing.assert_allclose(report.miou, 1.0)

    def test_perfect_classifier(self):
        pairs = [(c, c) for c in range(3) for _ in range(4)]
        y = np.array([t for t, _ in pairs])
        x = np.eye(3)[[p for _, p in pairs]]
        report = evaluate(argmax_classifier(3), pool_from_arrays(x, y, class_count=3))
        np.testing.assert_allclose(report.per_class_iou, 1.0)
        assert report.miou == 1.0 and report.accuracy == 1.0


class TestCheckpoint:
    def test_round_trip_both_archs(self, tmp_path):
        for arch in ("linear", "one_hidden"):
            clf = init_classifier(4, 3, arch=arch, hidden_units=6, seed=2)
            path = tmp_path / f"{arch}.ckpt"
            save_checkpoint(clf, path)
            loaded = load_checkpoint(path)
            assert loaded.arch == arch
            assert loaded.feature_dim == 4 and loaded.class_count == 3
            np.testing.assert_array_equal(
                get_flat_params(loaded), get_flat_params(clf)
            )
            if arch == "one_hidden":
                assert loaded.hidden_units == 6

    def test_header_layout(self, tmp_path):
        clf = init_classifier(2, 2, arch="linear", seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(clf, path)
        raw = path.read_bytes()
        magic, version, d, c = struct.unpack("<4I", raw[:16])
        assert magic == CHECKPOINT_MAGIC
        assert version == ARCH_VERSIONS["linear"]
        assert (d, c) == (2, 2)
        assert len(raw) == 16 + 8 * (2 * 2 + 2)

    def test_rejects_corrupt_files(self, tmp_path):
        clf = init_classifier(2, 2, arch="one_hidden", hidden_units=3, seed=0)
        good = tmp_path / "good.ckpt"
        save_checkpoint(clf, good)
        raw = bytearray(good.read_bytes())

        bad_magic = tmp_path / "bad_magic.ckpt"
        bad_magic.write_bytes(b"\x00\x00\x00\x00" + bytes(raw[4:]))
        with pytest.raises(InvalidInput):
            load_checkpoint(bad_magic)

        bad_version = tmp_path / "bad_version.ckpt"
        bad_version.write_bytes(raw[:4] + struct.pack("<I", 99) + bytes(raw[8:]))
        with pytest.raises(InvalidInput):
            load_checkpoint(bad_version)

        truncated = tmp_path / "short.ckpt"
        truncated.write_bytes(bytes(raw[:-8]))
        with pytest.raises(InvalidInput):
            load_checkpoint(truncated)

        header_only = tmp_path / "header.ckpt"
        header_only.write_bytes(bytes(raw[:10]))
        with pytest.raises(InvalidInput):
            load_checkpoint(header_only)

    def test_flat_params_round_trip(self):
        clf = init_classifier(3, 4, arch="one_hidden", hidden_units=5, seed=1)
        flat = get_flat_params(clf)
        assert flat.shape == (3 * 5 + 5 + 5 * 4 + 4,)
        other = init_classifier(3, 4, arch="one_hidden", hidden_units=5, seed=2)
        set_flat_params(other, flat)
        np.testing.assert_array_equal(get_flat_params(other), flat)
        with pytest.raises(InvalidInput):
            set_flat_params(other, flat[:-1])
