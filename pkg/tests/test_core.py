import numpy as np
import pytest

from midiv.core import (
    Bag,
    Dataset,
    DatasetError,
    Label,
    apply_pca,
    fit_pca,
    load_dataset,
    write_dataset,
)


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset:
    def test_groups_rows_by_bag(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb1,1,0.7\nb2,0,0.1\n")
        ds = load_dataset(path)
        assert len(ds) == 2 and ds.dimension == 1
        b1, b2 = ds.bags
        assert b1.id == "b1" and b1.n_instances == 2 and b1.label == Label.POS
        assert b2.label == Label.NEG
        np.testing.assert_allclose(b1.column(0), [0.5, 0.7])

    def test_conflicting_labels_within_bag(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb1,0,0.7\n")
        with pytest.raises(DatasetError, match="conflicting labels.*b1"):
            load_dataset(path)

    def test_na_mixed_with_label_is_conflict(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb1,NA,0.7\n")
        with pytest.raises(DatasetError, match="conflicting labels"):
            load_dataset(path)

    def test_dimension_mismatch_names_bag_and_line(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1,f2\nb1,1,0.5,0.2\nb1,1,0.7\n")
        with pytest.raises(DatasetError, match=r":3:.*b1"):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = write_csv(tmp_path, "")
        with pytest.raises(DatasetError, match="empty"):
            load_dataset(path)

    def test_header_only(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\n")
        with pytest.raises(DatasetError, match="no data rows"):
            load_dataset(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb1,1,oops\n")
        with pytest.raises(DatasetError, match=":3:"):
            load_dataset(path)

    def test_bad_label_value(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,2,0.5\n")
        with pytest.raises(DatasetError, match="label"):
            load_dataset(path)

    def test_unlabeled_bag_allowed(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,NA,0.5\nb1,NA,0.7\n")
        ds = load_dataset(path)
        assert ds.bags[0].label is None

    def test_noncontiguous_bag_rows(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb2,0,0.1\nb1,1,0.7\n")
        ds = load_dataset(path)
        assert [b.id for b in ds.bags] == ["b1", "b2"]
        np.testing.assert_allclose(ds.bags[0].column(0), [0.5, 0.7])

    def test_scientific_notation(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,1.5e-3\nb1,1,2E+2\n")
        ds = load_dataset(path)
        np.testing.assert_allclose(ds.bags[0].column(0), [1.5e-3, 200.0])


class TestRoundTrip:
    def test_write_then_load_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        bags = []
        for i in range(5):
            label = None if i == 4 else (Label.POS if i % 2 else Label.NEG)
            bags.append(Bag(id=f"bag{i}", instances=rng.standard_normal((rng.integers(1, 7), 3)), label=label))
        ds = Dataset(bags=tuple(bags), dimension=3, name="round")
        path = tmp_path / "ds.csv"
        write_dataset(ds, path)
        back = load_dataset(path)
        assert [b.id for b in back.bags] == [b.id for b in ds.bags]
        assert [b.label for b in back.bags] == [b.label for b in ds.bags]
        for a, b in zip(ds.bags, back.bags):
            np.testing.assert_array_equal(a.instances, b.instances)

    def test_rewrite_is_byte_identical(self, tmp_path):
        path = write_csv(tmp_path, "bag_id,label,f1\nb1,1,0.5\nb2,0,0.125\n")
        ds = load_dataset(path)
        out1 = tmp_path / "o1.csv"
        out2 = tmp_path / "o2.csv"
        write_dataset(ds, out1)
        write_dataset(load_dataset(out1), out2)
        assert out1.read_bytes() == out2.read_bytes()


class TestBagInvariants:
    def test_rejects_nan(self):
        with pytest.raises(DatasetError, match="non-finite"):
            Bag(id="b", instances=np.array([[np.nan]]))

    def test_rejects_empty(self):
        with pytest.raises(DatasetError):
            Bag(id="b", instances=np.empty((0, 2)))

    def test_instances_read_only(self):
        bag = Bag(id="b", instances=np.array([[1.0, 2.0]]))
        with pytest.raises(ValueError):
            bag.instances[0, 0] = 9.0

    def test_dataset_dimension_consistency(self):
        b1 = Bag(id="a", instances=np.array([[1.0, 2.0]]))
        with pytest.raises(DatasetError, match="dimension"):
            Dataset(bags=(b1,), dimension=3)


def toy_dataset(points, label=Label.POS):
    bag = Bag(id="b0", instances=np.asarray(points, dtype=float), label=label)
    return Dataset(bags=(bag,), dimension=bag.dimension)


class TestFitPca:
    def test_axis_aligned_variance(self):
        ds = toy_dataset([(0.0, 0.0), (2.0, 0.0), (4.0, 0.0)])
        t = fit_pca(ds, 1)
        np.testing.assert_allclose(t.components[0], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(t.mean, [2.0, 0.0], atol=1e-12)

    def test_diagonal_line(self):
        # covariance [[1,1],[1,1]] has top eigenvector (1,1)/sqrt(2)
        ds = toy_dataset([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)])
        t = fit_pca(ds, 1)
        np.testing.assert_allclose(t.components[0], [1 / np.sqrt(2)] * 2, atol=1e-12)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(3)
        ds = toy_dataset(rng.standard_normal((40, 4)))
        t = fit_pca(ds, 4)
        x = ds.pooled_instances()
        centered = x - t.mean
        recon = t.project(x) @ t.components
        np.testing.assert_allclose(recon, centered, atol=1e-8)

    def test_degenerate_covariance(self):
        ds = toy_dataset([(1.0, 1.0)] * 5)
        with pytest.raises(ValueError, match="degenerate|identical"):
            fit_pca(ds, 1)

    def test_m_bounds(self):
        ds = toy_dataset([(1.0, 2.0), (3.0, 4.0), (0.0, 1.0)])
        with pytest.raises(ValueError):
            fit_pca(ds, 3)

    def test_sign_convention(self):
        rng = np.random.default_rng(7)
        ds = toy_dataset(rng.standard_normal((30, 3)) * [5.0, 1.0, 0.2])
        t = fit_pca(ds, 3)
        for row in t.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_explained_variance_non_increasing(self):
        rng = np.random.default_rng(8)
        ds = toy_dataset(rng.standard_normal((50, 4)) * [3.0, 2.0, 1.0, 0.5])
        t = fit_pca(ds, 4)
        assert np.all(np.diff(t.explained_variance) <= 1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        pts = rng.standard_normal((60, 3))
        ds1 = toy_dataset(pts)
        ds2 = toy_dataset(pts[rng.permutation(60)])
        t1 = fit_pca(ds1, 3)
        t2 = fit_pca(ds2, 3)
        np.testing.assert_allclose(t1.components, t2.components, atol=1e-10)


class TestApplyPca:
    def test_hand_computed_projection(self):
        t_ds = toy_dataset([(1.0, 1.0), (3.0, 3.0)])
        t = fit_pca(t_ds, 1)
        projected = apply_pca(t, t_ds)
        np.testing.assert_allclose(
            sorted(projected.bags[0].column(0)), [-np.sqrt(2), np.sqrt(2)], atol=1e-12
        )

    def test_instance_at_mean_projects_to_zero(self):
        rng = np.random.default_rng(1)
        train = toy_dataset(rng.standard_normal((20, 2)))
        t = fit_pca(train, 2)
        probe = toy_dataset([tuple(t.mean)])
        out = apply_pca(t, probe)
        np.testing.assert_allclose(out.bags[0].instances, [[0.0, 0.0]], atol=1e-12)

    def test_projected_training_mean_zero_and_variance_sorted(self):
        rng = np.random.default_rng(2)
        train = toy_dataset(rng.standard_normal((100, 3)) * [2.0, 1.0, 0.3])
        t = fit_pca(train, 3)
        proj = apply_pca(t, train).pooled_instances()
        np.testing.assert_allclose(proj.mean(axis=0), 0.0, atol=1e-9)
        variances = proj.var(axis=0)
        assert np.all(np.diff(variances) <= 1e-12)

    def test_bag_structure_preserved(self):
        b1 = Bag(id="x", instances=np.array([[1.0, 0.0], [2.0, 1.0]]), label=Label.NEG)
        b2 = Bag(id="y", instances=np.array([[0.0, 5.0]]), label=None)
        ds = Dataset(bags=(b1, b2), dimension=2)
        t = fit_pca(ds, 1)
        out = apply_pca(t, ds)
        assert out.dimension == 1
        assert [b.id for b in out.bags] == ["x", "y"]
        assert out.bags[0].label == Label.NEG and out.bags[1].label is None

    def test_dimension_mismatch(self):
        ds2 = toy_dataset([(1.0, 2.0), (0.0, 1.0), (2.0, 0.0)])
        t = fit_pca(ds2, 2)
        ds3 = toy_dataset([(1.0, 2.0, 3.0)])
        with pytest.raises(ValueError, match="dimension"):
            apply_pca(t, ds3)
