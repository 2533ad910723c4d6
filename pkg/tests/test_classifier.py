import numpy as np
import pytest

from advshield import autoencoder as AE
from advshield import classifier as C
from advshield import data
from advshield import layers as L


def test_parameter_count_pin():
    model = C.init_classifier(seed=0)
    assert L.param_count(model.layers) == 216170
    assert sum(p.size for p in model.params) == 216170


def test_init_is_deterministic():
    a = C.init_classifier(seed=11)
    b = C.init_classifier(seed=11)
    c = C.init_classifier(seed=12)
    for pa, pb in zip(a.params, b.params):
        np.testing.assert_array_equal(pa, pb)
    assert any(not np.array_equal(pa, pc)
               for pa, pc in zip(a.params, c.params))


def test_biases_start_at_zero():
    model = C.init_classifier(seed=0)
    shapes = L.param_shapes(model.layers)
    for p, shape in zip(model.params, shapes):
        if len(shape) == 1:  # bias vectors
            assert (p == 0).all()


def test_predict_tie_breaks_to_lowest_index(tiny_test):
    model = C.init_classifier(seed=0)
    zeroed = [np.zeros_like(p) for p in model.params]
    flat_model = C.ClassifierModel(model.layers, zeroed, seed=0)
    logits, pred = C.predict(flat_model, tiny_test.images[:5])
    # all-zero weights give identical logits in every class
    assert np.ptp(logits) == 0.0
    assert (pred == 0).all()


def test_logits_shape_and_chunking(small_clf, tiny_test):
    # chunk boundary behavior: one image vs the whole set must agree
    full = C.logits(small_clf, tiny_test.images)
    single = C.logits(small_clf, tiny_test.images[:1])
    assert full.shape == (tiny_test.n, 10)
    np.testing.assert_allclose(full[0], single[0], atol=1e-6)


def test_accuracy_permutation_invariant(small_clf, tiny_test):
    base = C.accuracy(small_clf, tiny_test)
    perm = np.random.Generator(np.random.PCG64(3)).permutation(tiny_test.n)
    shuffled = data.Dataset(tiny_test.images[perm], tiny_test.labels[perm],
                            tiny_test.split)
    assert C.accuracy(small_clf, shuffled) == base


def test_accuracy_accepts_raw_arrays(small_clf, tiny_test):
    via_dataset = C.accuracy(small_clf, tiny_test)
    via_arrays = C.accuracy(small_clf, tiny_test.images, tiny_test.labels)
    assert via_dataset == via_arrays


def test_three_epoch_synthetic_run():
    train = data.synthetic_dataset(seed=1, n_per_class=200)
    test = data.synthetic_dataset(seed=2, n_per_class=50, split="test")
    model = C.init_classifier(seed=1)
    model, report = C.train_classifier(model, train, test, epochs=3, seed=1)
    assert report.epoch_accuracies[-1] > 0.95
    assert len(report.epoch_losses) == 3
    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_training_does_not_mutate_input_model(tiny_train, tiny_test):
    model = C.init_classifier(seed=2)
    before = [p.copy() for p in model.params]
    trained, _ = C.train_classifier(model, tiny_train, tiny_test,
                                    epochs=1, seed=0)
    for p, b in zip(model.params, before):
        np.testing.assert_array_equal(p, b)
    assert any(not np.array_equal(p, t)
               for p, t in zip(model.params, trained.params))


def test_training_is_deterministic(tiny_train, tiny_test):
    runs = []
    for _ in range(2):
        m = C.init_classifier(seed=4)
        m, _ = C.train_classifier(m, tiny_train, tiny_test, epochs=1, seed=9)
        runs.append(m.params)
    for pa, pb in zip(*runs):
        np.testing.assert_array_equal(pa, pb)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(tiny_train, tiny_test):
    model = C.init_classifier(seed=0)
    with pytest.raises(RuntimeError, match="diverged"):
        C.train_classifier(model, tiny_train, tiny_test, epochs=2, lr=50.0)


def test_checkpoint_round_trip(tmp_path, small_clf):
    path = tmp_path / "clf.ckpt"
    C.save_classifier(path, small_clf)
    back = C.load_classifier(path)
    for pa, pb in zip(small_clf.params, back.params):
        np.testing.assert_array_equal(pa, pb)
    assert back.seed == small_clf.seed
    assert L.topology_hash(back.layers) == L.topology_hash(small_clf.layers)


def test_checkpoint_kind_mismatch(tmp_path, small_clf):
    path = tmp_path / "clf.ckpt"
    C.save_classifier(path, small_clf)
    with pytest.raises(ValueError):
        AE.load_autoencoder(path)


def test_checkpoint_corruption_detected(tmp_path, small_clf):
    path = tmp_path / "clf.ckpt"
    C.save_classifier(path, small_clf)
    raw = bytearray(path.read_bytes())
    raw[4] ^= 0xFF  # damage the magic
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        C.load_classifier(bad)
    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(path.read_bytes()[:100])
    with pytest.raises(ValueError):
        C.load_classifier(truncated)
