import logging
import struct

import numpy as np
import pytest

from oodgen import data
from oodgen.data import IdxFormatError, LabeledDataset
from oodgen.nn import ContractError


def _idx_bytes(type_code, dims, payload):
    return struct.pack(">HBB", 0, type_code, len(dims)) + struct.pack(f">{len(dims)}I", *dims) + payload


@pytest.fixture
def two_images(tmp_path):
    """Two 2x2 images authored byte by byte: all black, then all white."""
    images = tmp_path / "img-idx3-ubyte"
    labels = tmp_path / "lab-idx1-ubyte"
    images.write_bytes(bytes.fromhex("00000803 00000002 00000002 00000002 00000000 ffffffff".replace(" ", "")))
    labels.write_bytes(bytes.fromhex("00000801 00000002 0307".replace(" ", "")))
    return images, labels


class TestIdx:
    def test_hand_built_fixture(self, two_images):
        ds = data.load_idx(*two_images)
        np.testing.assert_array_equal(ds.samples, [[0, 0, 0, 0], [1, 1, 1, 1]])
        np.testing.assert_array_equal(ds.labels, [3, 7])
        assert ds.input_dim == 4 and ds.image_shape == (2, 2)

    def test_zero_items(self, tmp_path):
        p = tmp_path / "empty"
        p.write_bytes(_idx_bytes(0x08, (0, 28, 28), b""))
        ds = data.load_idx(p)
        assert len(ds) == 0 and ds.input_dim == 784

    def test_bad_magic_names_offset(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"\x01\x02\x08\x03" + b"\x00" * 16)
        with pytest.raises(IdxFormatError, match="offset 0"):
            data.read_idx(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short"
        p.write_bytes(_idx_bytes(0x08, (2, 2, 2), b"\x00" * 5))
        with pytest.raises(IdxFormatError, match="offset"):
            data.read_idx(p)

    def test_label_count_mismatch(self, tmp_path, two_images):
        lab = tmp_path / "three"
        lab.write_bytes(_idx_bytes(0x08, (3,), b"\x00\x01\x02"))
        with pytest.raises(IdxFormatError):
            data.load_idx(two_images[0], lab)

    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(5, 3, 4)).astype(np.uint8)
        ds = LabeledDataset(pixels.reshape(5, -1) / 255.0, [0, 1, 2, 3, 4], image_shape=(3, 4))
        data.save_idx(ds, tmp_path / "i", tmp_path / "l")
        back = data.load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(back.samples, ds.samples)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(data.read_idx(tmp_path / "i"), pixels)

    def test_float_payload_is_unbounded(self, tmp_path):
        ds = LabeledDataset(np.array([[-1.5, 2.25]]), [-1], bounded=False)
        data.save_idx(ds, tmp_path / "f")
        back = data.load_idx(tmp_path / "f")
        assert not back.bounded
        np.testing.assert_array_equal(back.samples, ds.samples)

    def test_gzip(self, tmp_path, two_images):
        import gzip

        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(two_images[0].read_bytes()))
        np.testing.assert_array_equal(data.read_idx(gz), data.read_idx(two_images[0]))

    def test_canonical_mnist_test_file(self):
        import os

        path = os.environ.get("MNIST_TEST_IMAGES")
        if not path or not os.path.exists(path):
            pytest.skip("set MNIST_TEST_IMAGES and MNIST_TEST_LABELS to the t10k IDX files")
        ds = data.load_idx(path, os.environ["MNIST_TEST_LABELS"])
        assert ds.samples.shape == (10000, 784)
        assert ds.labels.min() == 0 and ds.labels.max() == 9


class TestRangeContract:
    def test_bounded_rejects_out_of_range(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.array([[0.5, 1.2]]), [0])

    def test_label_count(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((2, 3)), [0])

    def test_save_refuses_out_of_range(self, tmp_path):
        ds = LabeledDataset(np.array([[0.5]]), [0])
        ds.samples[0, 0] = 2.0  # bypass the constructor check
        with pytest.raises(ContractError):
            data.save_idx(ds, tmp_path / "x")


class TestNoise:
    def test_gaussian_pre_clamp_mean(self):
        ds = data.gen_gaussian_noise(1000, 1000, 0, clamp=False)
        assert abs(ds.samples.mean() - 0.5) < 0.01
        assert not ds.bounded

    def test_gaussian_clamped_range(self):
        ds = data.gen_gaussian_noise(200, 784, 1)
        assert ds.samples.min() >= 0.0 and ds.samples.max() <= 1.0

    def test_uniform(self):
        ds = data.gen_uniform_noise(1000, 1000, 2)
        assert abs(ds.samples.mean() - 0.5) < 0.01
        assert ds.samples.min() >= 0.0 and ds.samples.max() <= 1.0

    @pytest.mark.parametrize("gen", [data.gen_gaussian_noise, data.gen_uniform_noise])
    def test_determinism(self, gen):
        np.testing.assert_array_equal(gen(10, 7, 42).samples, gen(10, 7, 42).samples)

    def test_unlabeled(self):
        assert np.all(data.gen_uniform_noise(3, 2, 0).labels == -1)


class TestSphere:
    def test_norms(self):
        ds = data.gen_sphere_ood(500, 784, 9.3, 0)
        np.testing.assert_allclose(np.linalg.norm(ds.samples, axis=1), 9.3, atol=1e-9)
        assert not ds.bounded

    def test_unit_cube_radius_bound(self):
        cube = LabeledDataset(np.random.default_rng(0).random((50, 784)), np.zeros(50))
        assert data.max_norm(cube) <= 28.0
        assert data.max_norm(LabeledDataset(np.ones((1, 784)), [0])) == pytest.approx(28.0)

    def test_isotropy(self):
        x = data.gen_sphere_ood(1000, 784, 1.0, 3).samples
        cos = x @ x.T
        off = cos[~np.eye(len(x), dtype=bool)]
        assert abs(off.mean()) < 0.05

    def test_radius_must_be_positive(self):
        with pytest.raises(ContractError):
            data.gen_sphere_ood(1, 3, 0.0, 0)


class TestToy:
    def test_unit_norms(self):
        ds = data.gen_toy3d(500, 0)
        np.testing.assert_allclose(np.linalg.norm(ds.samples, axis=1), 1.0, atol=1e-12)

    def test_octants(self):
        ds = data.gen_toy3d(500, 1)
        assert np.all(ds.samples[ds.labels == 0] > 0)
        assert np.all(ds.samples[ds.labels == 1] < 0)

    def test_class_separation(self):
        ds = data.gen_toy3d(1000, 2)
        a, b = ds.samples[ds.labels == 0], ds.samples[ds.labels == 1]
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        assert d.min() >= 0.5

    def test_off_octant_points(self):
        x = data.gen_off_octant_sphere(400, 0).samples
        assert len(x) == 400
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
        assert not np.any(np.all(x > 0, axis=1) | np.all(x < 0, axis=1))


class TestSplit:
    def _balanced(self):
        return LabeledDataset(np.arange(100.0).reshape(100, 1) / 100, np.repeat([0, 1], 50))

    def test_exact_stratification(self):
        train, held = data.split(self._balanced(), 0.5, 0)
        for part in (train, held):
            assert np.bincount(part.labels).tolist() == [25, 25]

    def test_partition(self):
        ds = self._balanced()
        train, held = data.split(ds, 0.7, 1)
        joined = np.sort(np.concatenate([train.samples[:, 0], held.samples[:, 0]]))
        np.testing.assert_array_equal(joined, ds.samples[:, 0])

    def test_determinism(self):
        a, _ = data.split(self._balanced(), 0.7, 5)
        b, _ = data.split(self._balanced(), 0.7, 5)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_fraction_bounds(self):
        with pytest.raises(ContractError):
            data.split(self._balanced(), 1.0, 0)

    def test_singleton_class_warns(self, caplog):
        ds = LabeledDataset(np.zeros((5, 1)), [0, 0, 0, 0, 1])
        with caplog.at_level(logging.WARNING):
            data.split(ds, 0.5, 0)
        assert "stratification" in caplog.text


class TestClassFilter:
    def _digits(self):
        labels = np.repeat(np.arange(10), [3, 4, 5, 6, 7, 3, 4, 5, 6, 7])
        return LabeledDataset(np.zeros((len(labels), 2)), labels)

    def test_keep_low_classes(self):
        ds = self._digits()
        out = data.class_filter(ds, range(5))
        assert out.labels.max() <= 4
        assert np.bincount(out.labels).tolist() == [3, 4, 5, 6, 7]

    def test_keep_all_is_identity(self):
        ds = self._digits()
        np.testing.assert_array_equal(data.class_filter(ds, range(10)).labels, ds.labels)

    def test_relabel(self):
        out = data.class_filter(self._digits(), range(5, 10), relabel=True)
        assert np.bincount(out.labels).tolist() == [3, 4, 5, 6, 7]

    def test_empty_result(self):
        with pytest.raises(ContractError):
            data.class_filter(self._digits(), [42])

    def test_on_mnist_subset(self, mnist_idx):
        ds = data.load_idx(*mnist_idx)
        out = data.class_filter(ds, range(5))
        assert set(out.labels) == {0, 1, 2, 3, 4}
        for c in range(5):
            assert np.sum(out.labels == c) == np.sum(ds.labels == c)


class TestLoadAny:
    def test_generators(self):
        ref = data.gen_toy3d(5, 0)
        assert data.load_any("sphere_ood", 0, ref, n=4).samples.shape == (4, 3)
        assert data.load_any("uniform_noise", 0, dim=6, n=2).samples.shape == (2, 6)

    def test_path(self, two_images):
        assert len(data.load_any(str(two_images[0]))) == 2


class TestLetters:
    def test_render(self):
        from oodgen import letters

        ds = letters.render_letters(20, 0)
        assert ds.samples.shape == (20, 784)
        assert ds.bounded and ds.samples.max() > 0.5
        assert set(ds.labels) <= set(range(10))
        np.testing.assert_array_equal(ds.samples, letters.render_letters(20, 0).samples)
