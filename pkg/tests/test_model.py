import numpy as np
import pytest

from seqmlp.model import (
    Dataset,
    DatasetSchema,
    MlpModel,
    TrainConfig,
    accuracy,
    float_infer,
    load_dataset,
    load_model,
    save_model,
    train,
)
from seqmlp.synth import make_blobs


def write_csv(path, text):
    path.write_text(text)
    return path


class TestLoadDataset:
    def test_three_row_csv_label_last(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,b,label\n1,2,0\n3,4,1\n5,6,0\n")
        ds = load_dataset(p, DatasetSchema(label_column="label", test_fraction=0.34))
        assert ds.n_features == 2
        assert list(ds.labels) == [0, 1, 0]

    def test_constant_column_survives(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,b,y\n7,1,0\n7,2,1\n7,3,0\n")
        ds = load_dataset(p)
        assert ds.n_features == 2
        assert np.all(ds.features[:, 0] == 7.0)

    def test_same_file_same_seed_identical_split(self, tmp_path):
        body = "\n".join(f"{i},{i * 2},{i % 2}" for i in range(20))
        p = write_csv(tmp_path / "d.csv", "a,b,y\n" + body + "\n")
        d1 = load_dataset(p, DatasetSchema(seed=3))
        d2 = load_dataset(p, DatasetSchema(seed=3))
        assert np.array_equal(d1.train_idx, d2.train_idx)
        assert np.array_equal(d1.test_idx, d2.test_idx)

    def test_drop_columns_and_named_label(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "id,a,y\nx1,1,0\nx2,2,1\nx3,3,1\n")
        ds = load_dataset(p, DatasetSchema(label_column="y", drop_columns=("id",)))
        assert ds.n_features == 1

    def test_non_numeric_cell_rejected(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,y\noops,0\n1,1\n")
        with pytest.raises(ValueError, match="row 2"):
            load_dataset(p)

    def test_ragged_row_rejected(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,b,y\n1,2,0\n3,1\n")
        with pytest.raises(ValueError, match="row 3"):
            load_dataset(p)

    def test_unknown_label_column(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,y\n1,0\n2,1\n")
        with pytest.raises(ValueError, match="unknown column"):
            load_dataset(p, DatasetSchema(label_column="missing"))

    def test_normalization_maps_train_into_unit_range(self, tmp_path):
        body = "\n".join(f"{i * 3},{50 - i},{i % 2}" for i in range(30))
        p = write_csv(tmp_path / "d.csv", "a,b,y\n" + body + "\n")
        ds = load_dataset(p)
        norm = ds.normalized("train")
        assert norm.min() >= 0.0 and norm.max() <= 1.0
        assert ds.normalized("test").max() <= 1.0


class TestFloatInfer:
    def test_bias_only_argmax(self):
        model = MlpModel(w1=[[0.0, 0.0]], b1=[0.0], w2=[[0.0], [0.0]], b2=[1.0, 0.5])
        cls, _, out = float_infer(model, [0.3, 0.9])
        assert cls == 0
        assert out[0] == pytest.approx(1.0)

    def test_hand_built_2_2_2(self):
        # worked by hand: h = (0.1, 0.8), out = (-0.25, 0.325)
        model = MlpModel(
            w1=[[0.5, -0.25], [1.0, 0.75]],
            b1=[0.1, -0.2],
            w2=[[1.0, -0.5], [0.25, 0.5]],
            b2=[0.05, -0.1],
        )
        cls, h, out = float_infer(model, [0.4, 0.8])
        assert h == pytest.approx([0.1, 0.8])
        assert out == pytest.approx([-0.25, 0.325])
        assert cls == 1

    def test_tie_goes_to_lowest_index(self):
        model = MlpModel(w1=[[0.0]], b1=[0.0], w2=[[0.0], [0.0], [0.0]], b2=[0.7, 0.7, 0.7])
        cls, _, _ = float_infer(model, [0.5])
        assert cls == 0

    def test_dimension_mismatch(self):
        model = MlpModel(w1=[[0.1, 0.2]], b1=[0.0], w2=[[1.0]], b2=[0.0])
        with pytest.raises(ValueError):
            float_infer(model, [1.0])

    def test_purity(self):
        model = MlpModel(w1=[[0.3, -0.2]], b1=[0.1], w2=[[0.9], [-0.4]], b2=[0.0, 0.2])
        first = float_infer(model, [0.2, 0.6])
        second = float_infer(model, [0.2, 0.6])
        assert first[0] == second[0]
        assert np.array_equal(first[2], second[2])


class TestTrain:
    def test_blobs_reach_bar(self):
        ds = make_blobs(n_samples=160, n_features=3, n_classes=2, seed=11)
        model = train(ds, TrainConfig(hidden=3, epochs=60, learning_rate=0.2, seed=5))
        acc = accuracy(lambda x: float_infer(model, x)[0], ds, "train")
        assert acc >= 0.95

    def test_zero_epochs_returns_initialization(self):
        ds = make_blobs(n_samples=40, seed=2)
        m0 = train(ds, TrainConfig(hidden=2, epochs=0, seed=9))
        rng = np.random.default_rng(9)
        w1 = rng.uniform(-1.0, 1.0, (2, ds.n_features)) / np.sqrt(ds.n_features)
        assert np.array_equal(m0.w1, w1)
        assert np.all(m0.b1 == 0.0)

    def test_determinism_bit_identical(self):
        ds = make_blobs(n_samples=60, seed=4)
        cfg = TrainConfig(hidden=3, epochs=8, learning_rate=0.15, seed=21)
        m1, m2 = train(ds, cfg), train(ds, cfg)
        for a, b in ((m1.w1, m2.w1), (m1.b1, m2.b1), (m1.w2, m2.w2), (m1.b2, m2.b2)):
            assert a.tobytes() == b.tobytes()


class TestAccuracy:
    def test_all_correct(self):
        ds = make_blobs(n_samples=30, seed=1)
        labels = {tuple(row): lab for row, lab in zip(ds.normalized(), ds.labels)}
        assert accuracy(lambda x: labels[tuple(x)], ds, "test") == 1.0

    def test_constant_classifier_on_balanced_set(self):
        feats = np.arange(40, dtype=float).reshape(20, 2)
        labels = np.array([0, 1] * 10)
        ds = Dataset(feats, labels, train_idx=np.arange(20), test_idx=np.arange(0, 20, 2)[:10])
        assert accuracy(lambda x: 0, ds, "train") == 0.5

    def test_matches_per_sample_count(self):
        ds = make_blobs(n_samples=50, seed=8)
        model = train(ds, TrainConfig(hidden=2, epochs=5, seed=3))
        predict = lambda x: float_infer(model, x)[0]
        expected = sum(
            predict(row) == lab
            for row, lab in zip(ds.normalized("test"), ds.split_labels("test"))
        ) / len(ds.test_idx)
        assert accuracy(predict, ds, "test") == expected

    def test_empty_split_rejected(self):
        feats = np.arange(8, dtype=float).reshape(4, 2)
        ds = Dataset(feats, [0, 1, 0, 1], train_idx=[0, 1, 2, 3], test_idx=[])
        with pytest.raises(ValueError, match="empty"):
            accuracy(lambda x: 0, ds, "test")


def test_model_json_roundtrip(tmp_path):
    model = MlpModel(w1=[[0.5, -0.25]], b1=[0.125], w2=[[1.0], [-2.0]], b2=[0.0, 0.5])
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.w1, model.w1)
    assert np.array_equal(back.b2, model.b2)
