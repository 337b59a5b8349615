import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from unlearn.dataset_io import LabeledDataset
from unlearn.keyed_filters import (
    FilterBank,
    FilterSpec,
    cyclic_permutation,
    generate_bank,
    generate_filter,
    permute_bank,
)
from unlearn.poison_engine import (
    convolve_same,
    cuda_poison_image,
    grayscale,
    poison_dataset,
    poison_testset,
    random_blur_augment,
    rescale_max,
    stratified_mask,
    universal_blur,
)


def reference_convolve(image, filt):
    """Scalar nested-loop zero-padded cross-correlation of a (C, H, W) image."""
    C, H, W = image.shape
    k = filt.shape[0]
    r = k // 2
    out = np.zeros((C, H, W))
    for c in range(C):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for u in range(k):
                    for v in range(k):
                        ii, jj = i + u - r, j + v - r
                        if 0 <= ii < H and 0 <= jj < W:
                            acc += filt[u, v] * float(image[c, ii, jj])
                out[c, i, j] = acc
    return out


def test_all_ones_interior_and_border():
    f = generate_filter(3, 3, 0.3)
    out = convolve_same(np.ones((1, 4, 4)), f)
    np.testing.assert_allclose(out[0, 1:3, 1:3], f.sum(), rtol=0, atol=1e-15)
    # top-left corner only sees the lower-right 2x2 block of the kernel
    assert out[0, 0, 0] == pytest.approx(f[1:, 1:].sum(), abs=1e-15)
    assert out[0, 0, 1] == pytest.approx(f[1:, :].sum(), abs=1e-15)
    np.testing.assert_allclose(out[0], reference_convolve(np.ones((1, 4, 4)), f)[0], atol=1e-15)


def test_identity_kernel_and_zero_image(rng):
    img = rng.random((3, 5, 6))
    np.testing.assert_array_equal(convolve_same(img, np.array([[1.0]])), img)
    assert not convolve_same(np.zeros((2, 4, 4)), generate_filter(1, 3, 0.3)).any()


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        convolve_same(np.ones((1, 4, 4)), np.ones((2, 2)))


def test_fixed_poison_matches_oracle():
    image = np.array([[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]]])
    filt = np.array([[0.0, 0.1, 0.2], [0.0, 1.0, 0.0], [0.25, 0.0, 0.05]])
    expected_raw = reference_convolve(image, filt)
    expected = expected_raw / expected_raw.max()
    np.testing.assert_array_equal(cuda_poison_image(image, filt), expected)
    assert cuda_poison_image(image, filt).max() == 1.0


@settings(max_examples=60, deadline=None)
@given(img=hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 7), st.integers(1, 7)),
                      elements=st.floats(0, 1)),
       seed=st.integers(0, 2**32), k=st.sampled_from([1, 3, 5]))
def test_fast_path_matches_oracle(img, seed, k):
    f = generate_filter(seed, k, 0.5)
    np.testing.assert_allclose(convolve_same(img, f), reference_convolve(img, f), rtol=0, atol=1e-12)


def test_rescale_examples():
    out = rescale_max(np.array([[[0.2, 0.5, 1.5]]]))
    np.testing.assert_allclose(out[0, 0], [0.2 / 1.5, 0.5 / 1.5, 1.0], rtol=1e-15)
    assert out.max() == 1.0
    zeros = np.zeros((1, 2, 2))
    np.testing.assert_array_equal(rescale_max(zeros), zeros)
    already = np.array([[[0.3, 1.0]]])
    np.testing.assert_array_equal(rescale_max(already), already)
    with pytest.raises(ValueError):
        rescale_max(np.array([[[-0.1, 1.0]]]))


def test_constant_image_poisons_to_max_one():
    out = cuda_poison_image(np.full((3, 5, 5), 0.5), generate_filter(11, 3, 0.3))
    assert out.max() == 1.0 and out.min() >= 0.0


def test_unit_kernel_leaves_max_one_image():
    img = np.random.default_rng(0).random((3, 4, 4))
    img /= img.max()
    np.testing.assert_array_equal(cuda_poison_image(img, np.array([[1.0]])), img)


def _dataset(n_per_class, K, shape=(3, 6, 6), seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n_per_class)
    return LabeledDataset(rng.random((labels.size,) + shape).astype(np.float32), labels, K)


def test_poison_full_fraction():
    ds = _dataset(5, 4)
    bank = generate_bank(FilterSpec(4, 3, 0.3, 1))
    out, mask = poison_dataset(ds, bank, 1.0, seed=3)
    assert mask.flags.all()
    np.testing.assert_array_equal(out.labels, ds.labels)
    for i in range(len(ds)):
        expected = cuda_poison_image(ds.images[i], bank[ds.labels[i]]).astype(np.float32)
        np.testing.assert_array_equal(out.images[i], expected)
    per_image_max = out.images.reshape(len(ds), -1).max(axis=1)
    assert np.all(per_image_max == 1.0)


def test_poison_zero_fraction_is_identity():
    ds = _dataset(5, 4)
    bank = generate_bank(FilterSpec(4, 3, 0.3, 1))
    out, mask = poison_dataset(ds, bank, 0.0, seed=3)
    assert not mask.flags.any()
    assert out.images.tobytes() == ds.images.tobytes()


def test_poison_fraction_stratified():
    ds = _dataset(100, 10, shape=(1, 4, 4))
    bank = generate_bank(FilterSpec(10, 3, 0.3, 1))
    out, mask = poison_dataset(ds, bank, 0.2, seed=7)
    assert mask.per_class(ds.labels, 10) == [20] * 10
    untouched = ~mask.flags
    assert out.images[untouched].tobytes() == ds.images[untouched].tobytes()
    assert out.provenance.startswith("mixed:")


def test_mask_determinism():
    labels = np.repeat(np.arange(3), 50)
    a = stratified_mask(labels, 3, 0.4, 11)
    b = stratified_mask(labels, 3, 0.4, 11)
    c = stratified_mask(labels, 3, 0.4, 12)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    with pytest.raises(ValueError):
        stratified_mask(labels, 3, 1.5, 0)


def test_label_outside_bank_rejected():
    ds = _dataset(2, 5)
    bank = generate_bank(FilterSpec(3, 3, 0.3, 1))
    with pytest.raises(ValueError):
        poison_dataset(ds, bank, 1.0)


def test_poison_testset_variants():
    ds = _dataset(3, 10, shape=(1, 5, 5))
    bank = generate_bank(FilterSpec(10, 3, 0.3, 1))
    full, _ = poison_dataset(ds, bank, 1.0, seed=0)
    assert poison_testset(ds, bank).images.tobytes() == full.images.tobytes()
    shifted = poison_testset(ds, permute_bank(bank, cyclic_permutation(10)))
    for i in range(len(ds)):
        c = ds.labels[i]
        expected = cuda_poison_image(ds.images[i], bank[(c + 1) % 10]).astype(np.float32)
        np.testing.assert_array_equal(shifted.images[i], expected)
    empty = ds.subset(np.array([], dtype=int))
    assert len(poison_testset(empty, bank)) == 0


def test_universal_blur_equivalences():
    ds = _dataset(6, 1)
    f = generate_filter(5, 3, 0.3)
    one = FilterBank(FilterSpec(1, 3, 0.3, 0), f[None].copy())
    assert universal_blur(ds, f).images.tobytes() == poison_dataset(ds, one, 1.0)[0].images.tobytes()
    pair = _dataset(1, 2)
    blurred = universal_blur(pair, f)
    for i in range(2):
        np.testing.assert_array_equal(blurred.images[i], cuda_poison_image(pair.images[i], f).astype(np.float32))


def test_universal_identity_rescales_only():
    ds = _dataset(4, 2)
    out = universal_blur(ds, np.array([[1.0]]))
    expected = ds.images / ds.images.reshape(len(ds), -1).max(axis=1)[:, None, None, None]
    np.testing.assert_allclose(out.images, expected, rtol=1e-6)


def test_random_blur_augment():
    batch = np.random.default_rng(1).random((4, 3, 6, 6)).astype(np.float32)
    a = random_blur_augment(batch, 0.3, 3, seed=5)
    b = random_blur_augment(batch, 0.3, 3, seed=5)
    assert a.tobytes() == b.tobytes()
    assert np.all(a.reshape(4, -1).max(axis=1) == 1.0)
    one_hot = random_blur_augment(batch, 0.0, 3, seed=9)
    f = generate_filter(9, 3, 0.0)
    assert np.count_nonzero(f) == 1
    np.testing.assert_allclose(one_hot, rescale_max(convolve_same(batch, f)), rtol=1e-6)


def test_grayscale():
    img = np.zeros((1, 3, 1, 1), np.float32)
    img[0, :, 0, 0] = [0.0, 0.5, 1.0]
    ds = LabeledDataset(img, [0], 1)
    assert grayscale(ds).images.shape == (1, 1, 1, 1)
    assert grayscale(ds).images[0, 0, 0, 0] == 0.5
    single = _dataset(2, 2, shape=(1, 3, 3))
    assert grayscale(single).images.tobytes() == single.images.tobytes()
    equal = LabeledDataset(np.repeat(single.images, 3, axis=1), single.labels, 2)
    np.testing.assert_array_equal(grayscale(equal).images, single.images)


def test_threads_do_not_change_output():
    ds = _dataset(30, 4, shape=(3, 8, 8))
    bank = generate_bank(FilterSpec(4, 3, 0.3, 1))
    one = poison_dataset(ds, bank, 0.6, seed=1, threads=1)[0]
    many = poison_dataset(ds, bank, 0.6, seed=1, threads=8)[0]
    assert one.images.tobytes() == many.images.tobytes()
