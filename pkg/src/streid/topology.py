"""Camera network topology estimation with an adaptive Parzen window.

A topology is the full set of transition-time densities between ordered
camera pairs. Raw histograms of same-vehicle transition times are smoothed
with a Gaussian kernel whose bandwidth shrinks as a pair accumulates
evidence: sparsely connected pairs get broad, outlier-tolerant densities
while busy pairs keep their sharp temporal structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .observations import Observation, group_by_vehicle

SQRT_TWO_PI = math.sqrt(2.0 * math.pi)

DEFAULT_ALPHA = 20.0
DEFAULT_BETA = 12.0


@dataclass(frozen=True)
class HistogramGeometry:
    """Transition-time binning: `bin_count` bins of `bin_width` frames each."""

    bin_count: int = 300
    bin_width: int = 100

    def __post_init__(self):
        if self.bin_count < 1:
            raise ConfigurationError(f"bin_count must be >= 1, got {self.bin_count}")
        if self.bin_width < 1:
            raise ConfigurationError(f"bin_width must be >= 1, got {self.bin_width}")

    @property
    def covered_frames(self) -> int:
        return self.bin_count * self.bin_width


@dataclass
class TransitionHistogram:
    """Binned transition-time counts for one ordered camera pair."""

    from_camera: int
    to_camera: int
    counts: np.ndarray

    @property
    def pair_count(self) -> int:
        return int(np.asarray(self.counts).sum())


@dataclass
class TopologyModel:
    """Smoothed transition-time densities for every ordered camera pair.

    Arrays are indexed [from_camera, to_camera]; `pdfs[i, j]` holds the
    density over transition-time bins for movement from camera i to j.
    """

    n_cameras: int
    geometry: HistogramGeometry
    alpha: float
    beta: float
    pdfs: np.ndarray         # (n_cameras, n_cameras, bin_count)
    sigmas: np.ndarray       # (n_cameras, n_cameras)
    pair_counts: np.ndarray  # (n_cameras, n_cameras)

    def entry(self, from_camera: int, to_camera: int) -> tuple[np.ndarray, float, int]:
        """Return (pdf, sigma, pair_count) for one ordered camera pair."""
        _check_camera_index(from_camera, self.n_cameras)
        _check_camera_index(to_camera, self.n_cameras)
        return (
            self.pdfs[from_camera, to_camera],
            float(self.sigmas[from_camera, to_camera]),
            int(self.pair_counts[from_camera, to_camera]),
        )


def _check_camera_index(camera: int, n_cameras: int) -> None:
    if not 0 <= camera < n_cameras:
        raise InputError(f"camera index {camera} out of range for {n_cameras} cameras")


def build_histograms(
    observations: list[Observation],
    geometry: HistogramGeometry,
    n_cameras: int,
) -> list[TransitionHistogram]:
    """Count transition times between all same-vehicle observation pairs.

    Every ordered pair of distinct observations (a, b) of one vehicle with
    frame(b) >= frame(a) adds one count to the histogram of camera pair
    (camera(a) -> camera(b)), in the bin holding frame(b) - frame(a).
    Differences at or beyond the covered range are discarded. Returns one
    histogram per ordered camera pair (n_cameras**2 in row-major order),
    same-camera pairs included.
    """
    if not observations:
        raise InputError("observation list is empty")
    if n_cameras < 1:
        raise InputError(f"n_cameras must be positive, got {n_cameras}")
    for obs in observations:
        if obs.camera_id >= n_cameras:
            raise InputError(
                f"camera_id {obs.camera_id} out of range for {n_cameras} cameras "
                f"(image_id {obs.image_id!r})"
            )

    counts = np.zeros((n_cameras, n_cameras, geometry.bin_count), dtype=np.int64)
    for group in group_by_vehicle(observations).values():
        cams = np.array([o.camera_id for o in group], dtype=np.int64)
        frames = np.array([o.frame for o in group], dtype=np.int64)
        for a in range(len(group)):
            delta = frames - frames[a]
            eligible = delta >= 0
            eligible[a] = False  # an observation is never paired with itself
            bins = delta // geometry.bin_width
            eligible &= bins < geometry.bin_count
            np.add.at(counts[cams[a]], (cams[eligible], bins[eligible]), 1)

    return [
        TransitionHistogram(i, j, counts[i, j].copy())
        for i in range(n_cameras)
        for j in range(n_cameras)
    ]


def adaptive_sigma(
    pair_count: int, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA
) -> float:
    """Kernel bandwidth for a camera pair with `pair_count` positive pairs.

    Decays exponentially from `alpha` (no evidence) toward the floor of one
    bin unit: max(alpha * exp(-pair_count / beta), 1).
    """
    if alpha < 1:
        raise ConfigurationError(f"alpha must be >= 1, got {alpha}")
    if beta <= 0:
        raise ConfigurationError(f"beta must be > 0, got {beta}")
    if pair_count < 0:
        raise InputError(f"pair_count must be >= 0, got {pair_count}")
    return max(alpha * math.exp(-pair_count / beta), 1.0)


def gaussian_kernel(x, sigma: float):
    """Gaussian kernel at offset `x` (bin units) for bandwidth `sigma`."""
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-(x * x) / (2.0 * sigma * sigma)) / (SQRT_TWO_PI * sigma)
    return float(out) if out.ndim == 0 else out


def estimate_pdf(histogram: TransitionHistogram, sigma: float) -> np.ndarray:
    """Smooth one transition histogram into a density over its bins.

    Convolves the counts with a Gaussian kernel over the full bin range
    (no support cutoff) and renormalizes the truncated result to sum to 1.
    A histogram with no pairs yields the uniform density.
    """
    counts = np.asarray(histogram.counts, dtype=np.float64)
    bins = counts.shape[0]
    if counts.sum() == 0:
        return np.full(bins, 1.0 / bins)
    offsets = np.arange(-(bins - 1), bins, dtype=np.float64)
    kernel = gaussian_kernel(offsets, sigma)
    smoothed = np.convolve(counts, kernel)[bins - 1 : 2 * bins - 1]
    return smoothed / smoothed.sum()


def estimate_topology(
    observations: list[Observation],
    geometry: HistogramGeometry,
    n_cameras: int,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    fixed_sigma: float | None = None,
) -> TopologyModel:
    """Build histograms for all ordered camera pairs and smooth each one.

    Bandwidths come from `adaptive_sigma` per pair unless `fixed_sigma`
    overrides them globally (used by bandwidth ablations).
    """
    if alpha < 1:
        raise ConfigurationError(f"alpha must be >= 1, got {alpha}")
    if beta <= 0:
        raise ConfigurationError(f"beta must be > 0, got {beta}")
    if fixed_sigma is not None and fixed_sigma < 1:
        raise ConfigurationError(f"fixed_sigma must be >= 1, got {fixed_sigma}")

    histograms = build_histograms(observations, geometry, n_cameras)
    pdfs = np.empty((n_cameras, n_cameras, geometry.bin_count), dtype=np.float64)
    sigmas = np.empty((n_cameras, n_cameras), dtype=np.float64)
    pair_counts = np.empty((n_cameras, n_cameras), dtype=np.int64)
    for hist in histograms:
        i, j = hist.from_camera, hist.to_camera
        n_ij = hist.pair_count
        sigma = fixed_sigma if fixed_sigma is not None else adaptive_sigma(n_ij, alpha, beta)
        pdfs[i, j] = estimate_pdf(hist, sigma)
        sigmas[i, j] = sigma
        pair_counts[i, j] = n_ij
    return TopologyModel(n_cameras, geometry, alpha, beta, pdfs, sigmas, pair_counts)


def lookup_probability(
    model: TopologyModel, cam_a: int, frame_a: int, cam_b: int, frame_b: int
) -> float:
    """Transition-time density for a pair of observations.

    The earlier observation defines the source camera: for frame_b >= frame_a
    the (cam_a -> cam_b) density is read at the bin holding frame_b - frame_a,
    otherwise the direction is flipped. Time differences beyond the covered
    range return 0.
    """
    _check_camera_index(cam_a, model.n_cameras)
    _check_camera_index(cam_b, model.n_cameras)
    delta = frame_b - frame_a
    if delta >= 0:
        i, j = cam_a, cam_b
    else:
        i, j = cam_b, cam_a
    bin_index = abs(delta) // model.geometry.bin_width
    if bin_index >= model.geometry.bin_count:
        return 0.0
    return float(model.pdfs[i, j, bin_index])
