from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from kinqsd import kernels, rng

# Known-answer vectors published with the Random123 reference implementation.
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_philox_known_answers(counter, key, expected):
    out = rng.philox4x32(np.array(counter), np.array(key))
    assert tuple(int(v) for v in out) == expected


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
@pytest.mark.parametrize("counter,key,expected", KAT)
def test_compiled_philox_known_answers(counter, key, expected):
    assert tuple(kernels._ckernels.philox_words(list(counter), list(key))) == expected


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
@pytest.mark.parametrize("seed,stream,step", [(0, 0, 0), (7, 3, 12345), (2**40 + 5, 2**35, 2**33)])
def test_compiled_normals_match_python(seed, stream, step):
    z_c = np.array(kernels._ckernels.gauss_block(seed, stream, step, 6))
    z_py = rng.normals(seed, stream, step, 6)
    np.testing.assert_allclose(z_c, z_py, rtol=1e-12, atol=1e-14)


def test_normals_are_standard_normal():
    z = rng.normals(11, np.arange(20000, dtype=np.uint64), 5, 2).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 4 / np.sqrt(z.size)


def test_uniforms_in_unit_interval_and_uniform():
    u = rng.uniforms(3, 1, np.arange(50000, dtype=np.uint64))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_draws_are_pure_functions_of_the_counter():
    a = rng.normals(5, np.array([4, 9], dtype=np.uint64), 17, 3)
    b = rng.normals(5, 9, 17, 3)
    np.testing.assert_array_equal(a[1], b)
    assert not np.allclose(rng.normals(5, 9, 18, 3), b)
    assert not np.allclose(rng.normals(6, 9, 17, 3), b)


def test_stream_rng_reproducible():
    g1, g2 = rng.StreamRNG(2, 4), rng.StreamRNG(2, 4)
    np.testing.assert_array_equal(g1.random(10), g2.random(10))
    x = g1.integers(7, 1000)
    assert x.min() >= 0 and x.max() <= 6
