# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Key sources for the benchmark.

SOSD files are little-endian: one u64 count followed by `count` u64 keys.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from hireindex.core import KEY_MAX, DatasetError, KeyDomainError

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

__all__ = ["SyntheticKind", "gen_synthetic", "load_dataset", "load_sosd", "parse_count", "write_sosd"]

_U64 = np.dtype("<u8")


class SyntheticKind(StrEnum):
    uniform = "uniform"
    lognormal = "lognormal"
    segmented = "segmented"


def load_sosd(path: str | Path, *, shift: bool = False) -> list[int]:
    """Read an SOSD key file into an ascending, duplicate-free key list.

    Keys at or above 2**63 are rejected unless `shift` is set, in which case
    every key is shifted right by one bit.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        msg = f"Dataset file not found: {path}"
        raise DatasetError(msg) from None
    if len(raw) < _U64.itemsize:
        msg = f"{path} is too short to hold the key count"
        raise DatasetError(msg)
    count = int(np.frombuffer(raw, _U64, 1)[0])
    body = len(raw) - _U64.itemsize
    if body % _U64.itemsize:
        msg = f"{path} ends in a partial key ({body % _U64.itemsize} stray bytes)"
        raise DatasetError(msg)
    found = body // _U64.itemsize
    if found < count:
        msg = f"{path} is truncated: header declares {count} keys but only {found} are present"
        raise DatasetError(msg)
    if found > count:
        msg = f"{path} holds {found} keys but the header declares {count}"
        raise DatasetError(msg)
    keys = np.frombuffer(raw, _U64, count, offset=_U64.itemsize)
    if count and int(keys.max()) > KEY_MAX:
        if not shift:
            msg = f"{path} contains keys >= 2**63; load with shift=True to halve them"
            raise KeyDomainError(msg)
        keys = keys >> np.uint64(1)
    return np.unique(keys).tolist()


def write_sosd(path: str | Path, keys) -> Path:
    "Write `keys` in the SOSD layout."
    path = Path(path)
    keys = np.asarray(keys, dtype=_U64)
    path.write_bytes(np.array([keys.size], dtype=_U64).tobytes() + keys.tobytes())
    return path


def _distinct(rng: np.random.Generator, n: int, draw) -> np.ndarray:
    "Keep drawing until `n` distinct keys exist, then keep a random n-subset."
    keys = np.unique(draw(n + n // 64 + 16))
    while keys.size < n:
        keys = np.unique(np.concatenate((keys, draw(n - keys.size + 16))))
    if keys.size > n:
        keys = np.sort(rng.choice(keys, n, replace=False))
    return keys


def gen_synthetic(kind: SyntheticKind | str, n: int, seed: int = 0) -> list[int]:
    """Generate `n` strictly increasing keys in [0, 2**63), deterministic per (kind, n, seed).

    `segmented` concatenates runs of 32 to 511 keys whose spacing changes by
    orders of magnitude from run to run, which is hard for linear models.
    """
    kind = SyntheticKind(kind)
    if n < 0:
        msg = f"n must be >= 0 but got {n}"
        raise ValueError(msg)
    if not n:
        return []
    rng = np.random.default_rng(seed)
    match kind:
        case SyntheticKind.uniform:
            keys = _distinct(rng, n, lambda m: rng.integers(0, KEY_MAX, size=m, dtype=np.int64, endpoint=True))
        case SyntheticKind.lognormal:

            def draw(m):
                x = rng.lognormal(0.0, 2.0, size=m) * 1e12
                return np.minimum(x, float(KEY_MAX // 2)).astype(np.int64)

            keys = _distinct(rng, n, draw)
        case SyntheticKind.segmented:
            gaps = np.empty(n, dtype=np.int64)
            start = 0
            while start < n:
                length = min(int(rng.integers(32, 512)), n - start)
                base = 10.0 ** rng.uniform(0.0, 8.0)
                jitter = rng.uniform(0.5, 1.5, size=length)
                gaps[start : start + length] = np.maximum(1, np.rint(base * jitter)).astype(np.int64)
                start += length
            gaps[0] = rng.integers(0, 1 << 32)
            keys = np.cumsum(gaps)
    return keys.tolist()


def parse_count(text: str) -> int:
    "Parse a key count such as `1000`, `250k` or `1M`."
    text = text.strip()
    scale = {"k": 1_000, "m": 1_000_000}.get(text[-1:].lower(), 1)
    digits = text[:-1] if scale != 1 else text
    try:
        value = int(float(digits) * scale)
    except ValueError:
        msg = f"Invalid key count {text!r}"
        raise DatasetError(msg) from None
    return value


def load_dataset(descriptor: str, seed: int = 0, *, shift: bool = False) -> list[int]:
    """Resolve a dataset descriptor: `sosd:PATH`, `uniform:N`, `lognormal:N` or `segmented:N`."""
    source, sep, arg = descriptor.partition(":")
    if not sep or not arg:
        msg = f"Dataset descriptor must look like 'kind:ARG' but got {descriptor!r}"
        raise DatasetError(msg)
    if source == "sosd":
        return load_sosd(arg, shift=shift)
    if source not in SyntheticKind.__members__:
        msg = f"Unknown dataset kind {source!r}; expected sosd or one of {list(SyntheticKind.__members__)}"
        raise DatasetError(msg)
    return gen_synthetic(source, parse_count(arg), seed)
