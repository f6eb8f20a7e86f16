import numpy as np
import pytest

from fttn.features import DomainError, embed_image, embed_images, embed_pixel


class TestEmbedPixel:
    def test_linear_endpoints(self):
        np.testing.assert_array_equal(embed_pixel(0.0, "linear"), [1.0, 0.0])
        np.testing.assert_array_equal(embed_pixel(1.0, "linear"), [0.0, 1.0])

    def test_trig_endpoint(self):
        got = embed_pixel(1.0, "trig")
        np.testing.assert_allclose(got, [0.0, 1.0], atol=1e-15)

    def test_linear_midpoint(self):
        np.testing.assert_array_equal(embed_pixel(0.5, "linear"), [0.5, 0.5])

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            embed_pixel(-0.01, "linear")
        with pytest.raises(DomainError):
            embed_pixel(1.01, "trig")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            embed_pixel(0.5, "fourier")


class TestEmbedImage:
    def test_all_black_linear(self):
        got = embed_image(np.zeros((2, 2)), "linear")
        np.testing.assert_array_equal(got, np.tile([1.0, 0.0], (4, 1)))

    def test_all_white_trig(self):
        got = embed_image(np.ones((2, 2)), "trig")
        np.testing.assert_allclose(got, np.tile([0.0, 1.0], (4, 1)), atol=1e-15)

    def test_matches_per_pixel_loop(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, (28, 28))
        for kind in ("linear", "trig"):
            got = embed_image(img, kind)
            assert got.shape == (784, 2)
            flat = img.reshape(-1)
            for k in range(784):
                np.testing.assert_array_equal(got[k], embed_pixel(flat[k], kind))

    def test_out_of_range_pixel_rejected(self):
        img = np.zeros((2, 2))
        img[1, 1] = 1.5
        with pytest.raises(DomainError):
            embed_image(img, "linear")

    def test_batch_matches_single(self):
        rng = np.random.default_rng(6)
        imgs = rng.uniform(0, 1, (3, 16))
        batch = embed_images(imgs, "trig")
        for i in range(3):
            np.testing.assert_array_equal(batch[i], embed_image(imgs[i], "trig"))


def test_grid_invariants():
    p = np.arange(0.0, 1.0 + 1e-9, 0.01)
    lin = embed_images(p[None, :], "linear")[0]
    np.testing.assert_allclose(lin.sum(axis=1), 1.0, atol=1e-15)
    assert lin.min() >= 0.0 and lin.max() <= 1.0
    trig = embed_images(p[None, :], "trig")[0]
    np.testing.assert_allclose(np.linalg.norm(trig, axis=1), 1.0, atol=1e-12)
