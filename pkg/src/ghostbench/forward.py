"""Single-pixel (bucket) measurement simulation with additive Gaussian noise."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .core import Image, ImageError
from .patterns import PatternSequence


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian noise ``N(mean, std_dev**2)`` per measurement.

    Draw ``i`` depends only on ``(seed, i)``, so any subset of measurements
    sees the same noise regardless of how many were taken.
    """

    mean: float = 0.0
    std_dev: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.std_dev >= 0 and np.isfinite(self.std_dev)):
            raise ValueError(f"std_dev must be finite and >= 0, got {self.std_dev}")
        if not np.isfinite(self.mean):
            raise ValueError("mean must be finite")

    @property
    def noiseless(self) -> bool:
        return self.std_dev == 0 and self.mean == 0

    def _key(self) -> np.uint64:
        return kernels.mix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]

    def sample(self, count: int, start: int = 0) -> np.ndarray:
        """Noise values for measurement indices ``start .. start+count-1``."""
        if self.std_dev == 0:
            return np.full(count, float(self.mean))
        z = kernels.gaussian_stream(np.uint64(self._key()), start, count)
        return self.mean + self.std_dev * z

    def sample_at(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if self.std_dev == 0:
            return np.full(indices.shape, float(self.mean))
        key = np.uint64(self._key())
        z = np.array([kernels.gaussian_stream(key, int(i), 1)[0] for i in indices.ravel()])
        return self.mean + self.std_dev * z.reshape(indices.shape)


NOISELESS = NoiseModel()


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    intensities: np.ndarray
    sequence_id: str
    sequence_hash: str
    noise: NoiseModel

    def __post_init__(self):
        arr = np.array(self.intensities, dtype=np.float64).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValueError("intensities must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)

    @property
    def count(self) -> int:
        return len(self.intensities)

    def __eq__(self, other):
        if not isinstance(other, MeasurementSet):
            return NotImplemented
        return (self.sequence_hash == other.sequence_hash and self.noise == other.noise
                and np.array_equal(self.intensities, other.intensities))

    __hash__ = None


def measure(obj: Image, seq: PatternSequence, noise: NoiseModel = NOISELESS) -> MeasurementSet:
    """Bucket intensities ``I_i = sum_xy S_i(x, y) O(x, y) + noise_i``."""
    if obj.shape != (seq.height, seq.width):
        raise ImageError(f"object {obj.shape} does not match patterns {(seq.height, seq.width)}")
    values = seq.matrix() @ obj.flat()
    if not noise.noiseless:
        values = values + noise.sample(seq.count)
    return MeasurementSet(values, seq.identifier(), seq.digest, noise)


def noise_sample_statistics(noise: NoiseModel, n: int) -> tuple[float, float]:
    """Sample mean and (population) standard deviation of ``n`` noise draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = noise.sample(n)
    return float(x.mean()), float(x.std())


def write_measurements_csv(ms: MeasurementSet, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        fh.write(f"# sequence={ms.sequence_id} sha256={ms.sequence_hash}\n")
        fh.write(f"# noise_mean={ms.noise.mean!r} noise_std={ms.noise.std_dev!r} noise_seed={ms.noise.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "intensity"])
        for i, v in enumerate(ms.intensities):
            w.writerow([i, repr(float(v))])


def read_measurements_csv(path) -> MeasurementSet:
    meta = {}
    rows = []
    with open(Path(path), newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            if line.strip() and not line.startswith("index"):
                idx, val = line.strip().split(",")
                rows.append((int(idx), float(val)))
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: measurement indices are not contiguous from 0")
    noise = NoiseModel(float(meta.get("noise_mean", 0.0)), float(meta.get("noise_std", 0.0)),
                       int(meta.get("noise_seed", 0)))
    return MeasurementSet([v for _, v in rows], meta.get("sequence", ""), meta.get("sha256", ""), noise)
