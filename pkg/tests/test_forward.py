import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostbench.core import Image, ImageError
from ghostbench.forward import (
    MeasurementSet, NoiseModel, measure, noise_sample_statistics, read_measurements_csv,
    write_measurements_csv,
)
from ghostbench.kernels import _pykernels
from ghostbench.patterns import PatternSequence, generate_sequence


def double_loop(obj, seq):
    out = []
    for i in range(seq.count):
        total = 0.0
        for y in range(seq.height):
            for x in range(seq.width):
                total += float(seq.masks[i, y, x]) * float(obj.data[y, x])
        out.append(total)
    return np.array(out)


def custom_sequence(masks):
    masks = np.asarray(masks, dtype=np.uint8)
    base = generate_sequence("uniform", masks.shape[1], 1, seed=0)
    return PatternSequence(masks, "uniform", 0, masks.shape[1], base.cell_maps,
                           np.zeros(len(masks), dtype=np.int64))


def test_full_aperture_sums_object():
    rng = np.random.default_rng(0)
    obj = Image(rng.random((6, 6)))
    ms = measure(obj, custom_sequence(np.ones((1, 6, 6))))
    assert ms.intensities[0] == pytest.approx(obj.data.sum(), rel=1e-15)


def test_delta_pattern_reads_pixel():
    rng = np.random.default_rng(1)
    obj = Image(rng.random((4, 4)))
    masks = np.zeros((1, 4, 4))
    masks[0, 2, 1] = 1
    assert measure(obj, custom_sequence(masks)).intensities[0] == obj.data[2, 1]


def test_random_patterns_match_double_loop():
    rng = np.random.default_rng(2)
    obj = Image(rng.random((4, 4)))
    seq = generate_sequence("uniform", 4, 5, seed=17)
    ms = measure(obj, seq)
    assert ms.count == 5
    np.testing.assert_allclose(ms.intensities, double_loop(obj, seq), rtol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ImageError):
        measure(Image(np.zeros((4, 4))), generate_sequence("uniform", 8, 2, seed=0))


def test_noise_degenerate():
    assert noise_sample_statistics(NoiseModel(2.5, 0.0, 1), 1000) == (2.5, 0.0)


def test_noise_moments_sigma3():
    mean, std = noise_sample_statistics(NoiseModel(0.0, 3.0, 42), 10**6)
    assert abs(mean) <= 0.01
    assert abs(std - 3.0) <= 0.01


def test_noise_moments_mu5():
    mean, _ = noise_sample_statistics(NoiseModel(5.0, 1.0, 43), 10**6)
    assert abs(mean - 5.0) <= 0.005


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(0.0, -1.0)
    with pytest.raises(ValueError):
        noise_sample_statistics(NoiseModel(), 0)


def test_noise_indexed_stream():
    nm = NoiseModel(0.0, 1.0, 9)
    full = nm.sample(50)
    np.testing.assert_array_equal(nm.sample(10, start=20), full[20:30])
    np.testing.assert_array_equal(nm.sample_at([3, 40, 7]), full[[3, 40, 7]])


def test_noise_backends_agree():
    key = np.uint64(0xDEADBEEF)
    from ghostbench import kernels

    np.testing.assert_allclose(kernels.gaussian_stream(key, 5, 1000),
                               _pykernels.gaussian_stream(key, 5, 1000), rtol=0, atol=1e-13)


def test_determinism():
    rng = np.random.default_rng(4)
    obj = Image(rng.random((8, 8)))
    seq = generate_sequence("uniform", 8, 20, seed=5)
    nm = NoiseModel(0.0, 2.0, 77)
    assert measure(obj, seq, nm) == measure(obj, seq, nm)


def test_negative_noisy_values_kept():
    obj = Image(np.zeros((4, 4)))
    ms = measure(obj, generate_sequence("uniform", 4, 200, seed=1), NoiseModel(0.0, 1.0, 3))
    assert (ms.intensities < 0).any()


def test_permutation_with_indexed_noise():
    rng = np.random.default_rng(5)
    obj = Image(rng.random((8, 8)))
    seq = generate_sequence("uniform", 8, 12, seed=8)
    nm = NoiseModel(0.0, 1.5, 21)
    base = measure(obj, seq)
    perm = rng.permutation(12)
    permuted = custom_sequence(seq.masks[perm])
    clean = measure(obj, permuted).intensities
    # noise follows the original measurement index of each pattern
    noisy = clean + nm.sample_at(perm)
    np.testing.assert_allclose(noisy, (base.intensities + nm.sample(12))[perm], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
def test_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    o1, o2 = rng.random((6, 6)) * 0.5, rng.random((6, 6)) * 0.5
    combo = Image(np.clip(alpha * o1 + beta * o2, 0, 1))
    seq = generate_sequence("uniform", 6, 7, seed=seed)
    lhs = measure(combo, seq).intensities
    rhs = alpha * measure(Image(o1), seq).intensities + beta * measure(Image(o2), seq).intensities
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_bounds(seed):
    rng = np.random.default_rng(seed)
    obj = Image(rng.random((5, 5)))
    ms = measure(obj, generate_sequence("uniform", 5, 10, seed=seed))
    assert np.all(ms.intensities >= 0)
    assert np.all(ms.intensities <= obj.data.sum() + 1e-12)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    obj = Image(rng.random((8, 8)))
    seq = generate_sequence("uniform", 8, 9, seed=2)
    ms = measure(obj, seq, NoiseModel(0.1, 0.5, 12))
    write_measurements_csv(ms, tmp_path / "m.csv")
    back = read_measurements_csv(tmp_path / "m.csv")
    assert back == ms
    assert isinstance(back, MeasurementSet) and back.sequence_id == seq.identifier()
