# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import numpy as np
import pytest

from hireindex.core import KEY_MAX, DatasetError, KeyDomainError
from hireindex.datasets import gen_synthetic, load_dataset, load_sosd, parse_count, write_sosd
from hireindex.leaf import cone_extent
from hireindex.plm import fit_least_squares


def raw_file(path, count, keys, tail=b""):
    path.write_bytes(np.array([count], dtype="<u8").tobytes() + np.asarray(keys, dtype="<u8").tobytes() + tail)
    return path


def test_sosd_sorts_and_deduplicates(tmp_path):
    path = write_sosd(tmp_path / "keys_uint64", [30, 10, 20, 10])
    assert load_sosd(path) == [10, 20, 30]
    assert load_dataset(f"sosd:{path}") == [10, 20, 30]


def test_sosd_empty(tmp_path):
    assert load_sosd(write_sosd(tmp_path / "empty", [])) == []


@pytest.mark.parametrize(
    ("count", "keys", "tail", "match"),
    [
        (5, [1, 2, 3], b"", "truncated"),
        (2, [1, 2, 3], b"", "declares"),
        (3, [1, 2, 3], b"\x01\x02", "partial key"),
    ],
)
def test_sosd_malformed(tmp_path, count, keys, tail, match):
    path = raw_file(tmp_path / "bad", count, keys, tail)
    with pytest.raises(DatasetError, match=match):
        load_sosd(path)


def test_sosd_missing_or_short(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_sosd(tmp_path / "nope")
    short = tmp_path / "short"
    short.write_bytes(b"\x00" * 4)
    with pytest.raises(DatasetError, match="too short"):
        load_sosd(short)


def test_sosd_high_keys(tmp_path):
    path = write_sosd(tmp_path / "high", [1 << 63, (1 << 64) - 1, 6])
    with pytest.raises(KeyDomainError, match="shift"):
        load_sosd(path)
    assert load_sosd(path, shift=True) == [3, 1 << 62, KEY_MAX]


@pytest.mark.parametrize("kind", ["uniform", "lognormal", "segmented"])
def test_synthetic_keys(kind):
    keys = gen_synthetic(kind, 5000, 11)
    assert len(keys) == 5000
    assert all(a < b for a, b in zip(keys, keys[1:]))
    assert keys[0] >= 0
    assert keys[-1] <= KEY_MAX
    assert all(type(k) is int for k in keys[:10])
    assert gen_synthetic(kind, 5000, 11) == keys
    assert gen_synthetic(kind, 5000, 12) != keys


def test_synthetic_edge_cases():
    assert gen_synthetic("uniform", 0) == []
    assert len(gen_synthetic("segmented", 1)) == 1
    with pytest.raises(ValueError, match="n must be"):
        gen_synthetic("uniform", -1)
    with pytest.raises(ValueError):
        gen_synthetic("zipf", 10)


def test_segmented_defeats_a_global_line(uniform_keys, segmented_keys):
    def global_error(keys):
        return fit_least_squares((k, r) for r, k in enumerate(keys)).epsilon

    assert global_error(segmented_keys) > 2 * global_error(uniform_keys)


def test_segmented_needs_many_more_cones():
    def segments(keys, eps=64):
        count = start = 0
        while start < len(keys):
            start, _ = cone_extent(keys, start, eps, len(keys))
            count += 1
        return count

    uniform = segments(gen_synthetic("uniform", 100_000, 3))
    segmented = segments(gen_synthetic("segmented", 100_000, 7))
    assert segmented >= 10 * uniform


def test_parse_count():
    assert parse_count("1000") == 1000
    assert parse_count("250k") == 250_000
    assert parse_count("1.5K") == 1500
    assert parse_count("2M") == 2_000_000
    with pytest.raises(DatasetError):
        parse_count("lots")


def test_load_dataset_descriptors():
    assert load_dataset("uniform:1k", 3) == gen_synthetic("uniform", 1000, 3)
    for bad in ("uniform", "uniform:", "zipf:10"):
        with pytest.raises(DatasetError):
            load_dataset(bad)
