"""Discrete probability measures on a shared 1-D grid, and streams of them.

All measures in a run live on one common n-point support. Streams are
seeded and bit-reproducible; every produced measure satisfies the simplex
invariant (non-negative weights summing to one within 1e-12).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-12
WEIGHT_FLOOR = 1e-12


class MeasureError(ValueError):
    """Invalid measure data (negative mass, zero total, bad shape)."""


class EndOfStream(Exception):
    """Raised by a strict file-backed stream once its corpus is exhausted."""


@dataclass(frozen=True)
class Grid1D:
    """Ordered support locations on a segment [lo, hi]."""

    points: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise MeasureError("grid needs at least 2 points")
        if not np.all(np.diff(pts) > 0):
            raise MeasureError("grid points must be strictly increasing")
        if self.lo > pts[0] or pts[-1] > self.hi:
            raise MeasureError("grid points must lie within [lo, hi]")

    @property
    def n(self) -> int:
        return self.points.size

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "Grid1D":
        """Uniform grid including both endpoints."""
        return cls(np.linspace(lo, hi, n), lo, hi)

    def __eq__(self, other):
        return (
            isinstance(other, Grid1D)
            and self.lo == other.lo
            and self.hi == other.hi
            and np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True)
class DiscreteMeasure:
    """A point of the n-simplex together with its (optional) support grid."""

    weights: np.ndarray
    grid: Grid1D | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise MeasureError("weights must be a vector")
        if np.any(w < 0):
            raise MeasureError("negative weight")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise MeasureError(f"weights sum to {w.sum()!r}, not 1")
        if self.grid is not None and self.grid.n != w.size:
            raise MeasureError("weights length does not match grid size")

    @property
    def n(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        if self.grid is None:
            raise MeasureError("measure has no grid")
        return float(self.weights @ self.grid.points)

    def sd(self) -> float:
        if self.grid is None:
            raise MeasureError("measure has no grid")
        m = self.mean()
        return math.sqrt(float(self.weights @ (self.grid.points - m) ** 2))


def normalize(raw, grid: Grid1D | None = None) -> DiscreteMeasure:
    """Scale a non-negative vector to unit mass.

    Rejects vectors with any negative entry or with zero total mass.
    """
    w = np.asarray(raw, dtype=float)
    if np.any(w < 0):
        raise MeasureError("normalize: negative entry")
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise MeasureError("normalize: total mass is zero or non-finite")
    return DiscreteMeasure(w / total, grid)


def normalize_clamped(raw, grid: Grid1D | None = None) -> DiscreteMeasure:
    """Normalize after clamping entries to a strictly positive floor.

    Generated measures go through this so that downstream dual bounds and
    entropic solvers (which assume r > 0) stay in their valid regime.
    """
    w = np.maximum(np.asarray(raw, dtype=float), WEIGHT_FLOOR)
    return normalize(w, grid)


def discretize_gaussian(mu: float, sigma: float, grid: Grid1D) -> DiscreteMeasure:
    """Pointwise Gaussian density on the grid, floor-clamped and normalized."""
    if sigma <= 0:
        raise MeasureError("discretize_gaussian: sigma must be positive")
    z = (grid.points - mu) / sigma
    # subtract the max exponent so the peak is exactly 1 before clamping
    logw = -0.5 * z * z
    w = np.exp(logw - logw.max())
    return normalize_clamped(w, grid)


@dataclass(frozen=True)
class GaussianParamLaw:
    """Law of (mu, sigma) for random Gaussian measures.

    mu ~ Normal(mu0, sigma0_sq); sigma ~ Exponential(rate), mean 1/rate.
    """

    mu0: float
    sigma0_sq: float
    rate: float

    def __post_init__(self):
        if self.sigma0_sq <= 0 or self.rate <= 0:
            raise MeasureError("GaussianParamLaw: sigma0_sq and rate must be > 0")


@dataclass
class MeasureStream:
    """Seeded i.i.d. source of measures on a fixed support.

    Three source kinds:
      * finite   -- sample index t from given weights, emit measures[t]
      * gaussian -- draw (mu, sigma) from a GaussianParamLaw, discretize
      * corpus   -- rows of a corpus file; i.i.d. with replacement, or
                    sequential in strict mode (EndOfStream when exhausted)
    """

    kind: str
    seed: int
    grid: Grid1D | None = None
    measures: list[DiscreteMeasure] | None = None
    weights: np.ndarray | None = None
    law: GaussianParamLaw | None = None
    strict: bool = False
    _rng: np.random.Generator = field(init=False, repr=False)
    _pos: int = field(default=0, repr=False)
    last_index: int | None = field(default=None, repr=False)

    def __post_init__(self):
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def finite(cls, measures, weights, seed: int) -> "MeasureStream":
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size != len(measures):
            raise MeasureError("finite stream: weights must match measure count")
        if np.any(w < 0) or w.sum() <= 0:
            raise MeasureError("finite stream: invalid sampling weights")
        sizes = {m.n for m in measures}
        if len(sizes) != 1:
            raise MeasureError("finite stream: mixed supports")
        grid = measures[0].grid
        for m in measures[1:]:
            if (m.grid is None) != (grid is None) or (grid is not None and m.grid != grid):
                raise MeasureError("finite stream: mixed supports")
        return cls(kind="finite", seed=seed, grid=grid,
                   measures=list(measures), weights=w / w.sum())

    @classmethod
    def gaussian(cls, law: GaussianParamLaw, grid: Grid1D, seed: int) -> "MeasureStream":
        return cls(kind="gaussian", seed=seed, grid=grid, law=law)

    @classmethod
    def corpus(cls, path, seed: int, strict: bool = False) -> "MeasureStream":
        grid, measures = load_corpus(path)
        return cls(kind="corpus", seed=seed, grid=grid, measures=measures,
                   strict=strict)

    def sample(self) -> DiscreteMeasure:
        if self.kind == "finite":
            t = int(self._rng.choice(len(self.measures), p=self.weights))
            self.last_index = t
            return self.measures[t]
        if self.kind == "gaussian":
            mu = self._rng.normal(self.law.mu0, math.sqrt(self.law.sigma0_sq))
            sigma = self._rng.exponential(1.0 / self.law.rate)
            # an exponential draw can underflow to 0; resample the tail away
            while sigma <= 0:
                sigma = self._rng.exponential(1.0 / self.law.rate)
            return discretize_gaussian(mu, sigma, self.grid)
        if self.kind == "corpus":
            if self.strict:
                if self._pos >= len(self.measures):
                    raise EndOfStream(f"corpus exhausted after {self._pos} draws")
                m = self.measures[self._pos]
                self.last_index = self._pos
                self._pos += 1
                return m
            t = int(self._rng.integers(len(self.measures)))
            self.last_index = t
            return self.measures[t]
        raise MeasureError(f"unknown stream kind {self.kind!r}")

    def state_dict(self) -> dict:
        return {"rng": self._rng.bit_generator.state, "pos": self._pos}

    def load_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state["rng"]
        self._pos = int(state["pos"])


def sample_measure(stream: MeasureStream) -> DiscreteMeasure:
    """Draw one measure from the stream, advancing its RNG state."""
    return stream.sample()


def load_image_measure(path, expected_side: int) -> DiscreteMeasure:
    """Read a grayscale image stored as CSV intensities and normalize it.

    The file holds side*side values in [0, 255], row-major (possibly split
    over several lines). All-black images are rejected (zero total mass).
    """
    try:
        raw = np.loadtxt(path, delimiter=",", dtype=float).ravel()
    except Exception as exc:
        raise MeasureError(f"unreadable image file {path}: {exc}") from exc
    n = expected_side * expected_side
    if raw.size != n:
        raise MeasureError(
            f"image file {path}: expected {n} pixels, got {raw.size}")
    if np.any(raw < 0):
        raise MeasureError(f"image file {path}: negative intensity")
    try:
        return normalize(raw)
    except MeasureError as exc:
        raise MeasureError(f"image file {path}: {exc}") from exc


def save_corpus(path, measures, grid: Grid1D | None = None) -> None:
    """Write a measure corpus: one CSV row per measure, optional grid header."""
    with open(path, "w") as fh:
        if grid is not None:
            fh.write(f"# grid: {grid.lo!r} {grid.hi!r} {grid.n}\n")
        for m in measures:
            fh.write(",".join(repr(float(x)) for x in m.weights) + "\n")


def load_corpus(path) -> tuple[Grid1D | None, list[DiscreteMeasure]]:
    """Read a measure corpus written by save_corpus."""
    grid = None
    measures = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = line.lstrip("#").split()
                if fields[:1] == ["grid:"]:
                    lo, hi, n = float(fields[1]), float(fields[2]), int(fields[3])
                    grid = Grid1D.uniform(lo, hi, n)
                continue
            w = np.fromstring(line, sep=",")
            measures.append(normalize(w, grid))
    if not measures:
        raise MeasureError(f"corpus {path} holds no measures")
    if grid is not None and any(m.n != grid.n for m in measures):
        raise MeasureError(f"corpus {path}: row length does not match grid")
    return grid, measures
