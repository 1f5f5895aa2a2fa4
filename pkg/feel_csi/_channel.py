"""
Geometry-based cluster channel model, angular-delay transform and per-UE
dataset construction.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ._constants import SPLIT_RATIO
from ._exceptions import ConfigError, DomainError, InvalidGeometryError
from ._models import (
    ArrayConfig,
    ClusterRealization,
    CsiSample,
    Domain,
    NormParams,
    ScenarioParams,
    UeDataset,
    UePlacement,
)


def steering_vector(theta: float, cfg: ArrayConfig) -> np.ndarray:
    """ULA response: entry m is exp(j*2*pi*m*spacing*sin(theta))"""
    m = np.arange(cfg.num_tx_antennas)
    return np.exp(1j * 2.0 * np.pi * m * cfg.antenna_spacing_ratio * np.sin(theta))


def _steering_matrix(angles: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    m = np.arange(cfg.num_tx_antennas)[:, None]
    return np.exp(1j * 2.0 * np.pi * m * cfg.antenna_spacing_ratio * np.sin(angles)[None, :])


# ---------------------------------------------------------------- geometry


def draw_ue_geometry(
    rng: np.random.Generator,
    cell_radius_m: float,
    min_bs_distance_m: float,
    moving_radius_m: float,
    ue_id: int,
) -> UePlacement:
    """Place a UE uniformly (by area) in the annulus [min_bs_distance, cell_radius]"""
    if not 0 < min_bs_distance_m < cell_radius_m:
        raise InvalidGeometryError(
            f"Minimum BS distance {min_bs_distance_m} m must be positive and below "
            f"the cell radius {cell_radius_m} m"
        )
    u, phi = rng.random(2)
    r_sq = min_bs_distance_m**2 + u * (cell_radius_m**2 - min_bs_distance_m**2)
    radius = min(max(math.sqrt(r_sq), min_bs_distance_m), cell_radius_m)
    phi = 2.0 * math.pi * phi
    return UePlacement(
        ue_id=ue_id,
        center_xy_m=(radius * math.cos(phi), radius * math.sin(phi)),
        moving_radius_m=moving_radius_m,
        cell_radius_m=cell_radius_m,
        min_bs_distance_m=min_bs_distance_m,
    )


@dataclass
class ScatteringEnvironment:
    """Cluster-angle offsets on an anchor grid spaced by half the correlation distance.

    A position blends the anchors within ``support_m`` (half the correlation
    distance) of it, so two positions share an anchor only when they are less
    than one correlation distance apart. The nearest anchor is always within
    ``spacing_m / sqrt(2)`` of any position, which keeps the blend weights
    positive. Positions outside the grid are clamped to its edge.
    """

    label: str
    spacing_m: float
    origin_m: float
    angle_offsets: np.ndarray  # (grid, grid, clusters)

    @property
    def support_m(self) -> float:
        return self.spacing_m

    def _clamped(self, position_xy: Sequence[float]) -> Tuple[float, float]:
        high = self.origin_m + (self.angle_offsets.shape[0] - 1) * self.spacing_m
        return (
            min(max(float(position_xy[0]), self.origin_m), high),
            min(max(float(position_xy[1]), self.origin_m), high),
        )

    def anchor_weights(self, position_xy: Sequence[float]) -> Dict[Tuple[int, int], float]:
        """Positive blend weight of every anchor within the support radius"""
        grid = self.angle_offsets.shape[0]
        x, y = self._clamped(position_xy)
        radius = self.support_m
        weights = {}
        lo_x = max(0, int(math.ceil((x - radius - self.origin_m) / self.spacing_m)))
        hi_x = min(grid - 1, int(math.floor((x + radius - self.origin_m) / self.spacing_m)))
        lo_y = max(0, int(math.ceil((y - radius - self.origin_m) / self.spacing_m)))
        hi_y = min(grid - 1, int(math.floor((y + radius - self.origin_m) / self.spacing_m)))
        for ix in range(lo_x, hi_x + 1):
            for iy in range(lo_y, hi_y + 1):
                dx = x - (self.origin_m + ix * self.spacing_m)
                dy = y - (self.origin_m + iy * self.spacing_m)
                u_sq = (dx * dx + dy * dy) / (radius * radius)
                if u_sq < 1.0:
                    weights[(ix, iy)] = (1.0 - u_sq) ** 2
        return weights

    def offsets_at(self, position_xy: Sequence[float]) -> np.ndarray:
        weights = self.anchor_weights(position_xy)
        total = sum(weights.values())
        blended = np.zeros(self.angle_offsets.shape[2])
        for (ix, iy), w in sorted(weights.items()):
            blended += w * self.angle_offsets[ix, iy]
        return blended / total


def build_environment(
    scenario: ScenarioParams, cell_radius_m: float, rng: np.random.Generator
) -> ScatteringEnvironment:
    """Draw the anchor grid shared by every UE of a scenario"""
    spacing = scenario.correlation_distance_m / 2.0
    extent = cell_radius_m + scenario.correlation_distance_m
    grid = int(math.ceil(2.0 * extent / spacing)) + 1
    offsets = rng.uniform(
        -math.pi / 2, math.pi / 2, size=(grid, grid, scenario.num_clusters)
    )
    return ScatteringEnvironment(
        label=scenario.label, spacing_m=spacing, origin_m=-extent, angle_offsets=offsets
    )


def cluster_mean_angles(
    position_xy: Sequence[float],
    scenario: ScenarioParams,
    environment: ScatteringEnvironment,
) -> np.ndarray:
    """Mean departure angle of every cluster seen from ``position_xy``"""
    los = math.atan2(position_xy[1], position_xy[0])
    means = los + environment.offsets_at(position_xy)
    if scenario.line_of_sight:
        means[0] = los
    return means


def draw_ue_scenario(
    placement: UePlacement,
    scenario: ScenarioParams,
    rng: np.random.Generator,
    environment: Optional[ScatteringEnvironment] = None,
    position_xy: Optional[Sequence[float]] = None,
) -> ClusterRealization:
    """Draw one multipath realization for a UE at ``position_xy`` (default: its center)"""
    if environment is None:
        environment = build_environment(scenario, placement.cell_radius_m, rng)
    if position_xy is None:
        position_xy = placement.center_xy_m

    shape = (scenario.num_clusters, scenario.num_subpaths)
    means = cluster_mean_angles(position_xy, scenario, environment)
    if scenario.angle_spread_rad > 0:
        jitter = rng.laplace(0.0, scenario.angle_spread_rad, size=shape)
    else:
        jitter = np.zeros(shape)
    angles = means[:, None] + jitter

    power = np.exp(-scenario.gain_decay * np.arange(scenario.num_clusters))
    power = power / power.sum() / scenario.num_subpaths
    std = np.sqrt(power / 2.0)[:, None]
    gains = std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    total = math.sqrt(float(np.sum(np.abs(gains) ** 2)))
    gains = gains / total

    if scenario.delay_spread_s > 0:
        delays = rng.uniform(0.0, scenario.delay_spread_s, size=shape)
    else:
        delays = np.zeros(shape)
    return ClusterRealization(angles_rad=angles, gains=gains, delays_s=delays)


def sample_channel(realization: ClusterRealization, cfg: ArrayConfig) -> CsiSample:
    """Spatial-frequency CSI: one column per subcarrier, delay phase per path"""
    angles = realization.angles_rad.ravel()
    gains = realization.gains.ravel()
    delays = realization.delays_s.ravel()
    steering = _steering_matrix(angles, cfg)
    freqs = cfg.subcarrier_offsets_hz()
    phases = np.exp(-1j * 2.0 * np.pi * delays[:, None] * freqs[None, :])
    matrix = steering @ (gains[:, None] * phases)
    return CsiSample(matrix=matrix, domain_tag=Domain.SPATIAL_FREQUENCY)


# ---------------------------------------------------------------- transforms


def to_angular_delay(h: CsiSample) -> CsiSample:
    """H = F_a * H_sf * F_d with unitary DFT matrices"""
    if h.domain_tag != Domain.SPATIAL_FREQUENCY:
        raise DomainError(f"Expected spatial-frequency CSI, got {h.domain_tag.value}")
    return CsiSample(_dft2(h.matrix), Domain.ANGULAR_DELAY)


def from_angular_delay(h: CsiSample) -> CsiSample:
    if h.domain_tag != Domain.ANGULAR_DELAY:
        raise DomainError(f"Expected angular-delay CSI, got {h.domain_tag.value}")
    return CsiSample(_idft2(h.matrix), Domain.SPATIAL_FREQUENCY)


def _dft2(matrices: np.ndarray) -> np.ndarray:
    return np.fft.fft(np.fft.fft(matrices, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def _idft2(matrices: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.ifft(matrices, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def batch_to_angular_delay(matrices: np.ndarray) -> np.ndarray:
    """Vectorized to_angular_delay over a stack of (..., Nt, Nc) matrices"""
    return _dft2(matrices)


def batch_from_angular_delay(matrices: np.ndarray) -> np.ndarray:
    return _idft2(matrices)


# ---------------------------------------------------------------- datasets


def compute_norm_params(matrices: np.ndarray) -> NormParams:
    """Min-max over real and imaginary parts jointly; zero range maps to 0.5"""
    parts = np.concatenate([matrices.real.ravel(), matrices.imag.ravel()])
    low, high = float(parts.min()), float(parts.max())
    if high > low:
        return NormParams(offset=low, scale=high - low)
    return NormParams(offset=low - 0.5, scale=1.0)


def split_sizes(num_samples: int) -> Tuple[int, int, int]:
    """8:1:1 split rounding val and test down, remainder to train"""
    total = sum(SPLIT_RATIO)
    n_val = num_samples * SPLIT_RATIO[1] // total
    n_test = num_samples * SPLIT_RATIO[2] // total
    return num_samples - n_val - n_test, n_val, n_test


def build_ue_dataset(
    placement: UePlacement,
    scenario: ScenarioParams,
    cfg: ArrayConfig,
    num_samples: int,
    rng: np.random.Generator,
    environment: Optional[ScatteringEnvironment] = None,
) -> UeDataset:
    """Sample CSI at uniform positions in the UE's moving disc and split 8:1:1.

    Matrices are rounded to 32-bit precision so a dataset survives a round
    trip through the FEELCSI1 file format bit for bit.
    """
    if num_samples < 10:
        raise ConfigError(f"num_samples must be >= 10, got {num_samples}")
    if environment is None:
        environment = build_environment(scenario, placement.cell_radius_m, rng)

    cx, cy = placement.center_xy_m
    matrices = np.empty(
        (num_samples, cfg.num_tx_antennas, cfg.num_subcarriers), dtype=np.complex128
    )
    for i in range(num_samples):
        u, phi = rng.random(2)
        r = placement.moving_radius_m * math.sqrt(u)
        position = (cx + r * math.cos(2 * math.pi * phi), cy + r * math.sin(2 * math.pi * phi))
        realization = draw_ue_scenario(placement, scenario, rng, environment, position)
        matrices[i] = sample_channel(realization, cfg).matrix

    matrices = batch_to_angular_delay(matrices).astype(np.complex64).astype(np.complex128)
    n_train, n_val, _ = split_sizes(num_samples)
    train = matrices[:n_train]
    val = matrices[n_train : n_train + n_val]
    test = matrices[n_train + n_val :]
    return UeDataset(
        ue_id=placement.ue_id,
        train=train,
        val=val,
        test=test,
        norm_params=compute_norm_params(train),
        domain_tag=Domain.ANGULAR_DELAY,
    )


def to_network_input(matrices: np.ndarray, norm: NormParams) -> np.ndarray:
    """(n, Nt, Nc) complex -> (n, 2, Nt, Nc) real channels in the normalized range"""
    stacked = np.stack([matrices.real, matrices.imag], axis=1)
    return norm.normalize(stacked)


def from_network_output(values: np.ndarray, norm: NormParams) -> np.ndarray:
    """Inverse of to_network_input"""
    raw = norm.denormalize(values)
    return raw[:, 0] + 1j * raw[:, 1]


def angular_spectrum(matrices: np.ndarray) -> np.ndarray:
    """Per-sample power in every angle bin, summed over delay taps"""
    return np.sum(np.abs(matrices) ** 2, axis=-1)


def spectrum_similarity(
    a: np.ndarray, b: np.ndarray, exclude_diagonal: bool = False
) -> float:
    """Mean pairwise cosine similarity between angular spectra of two sample sets"""
    sa = angular_spectrum(a)
    sb = angular_spectrum(b)
    sa = sa / np.linalg.norm(sa, axis=1, keepdims=True)
    sb = sb / np.linalg.norm(sb, axis=1, keepdims=True)
    sims = sa @ sb.T
    if exclude_diagonal:
        mask = ~np.eye(sims.shape[0], sims.shape[1], dtype=bool)
        return float(sims[mask].mean())
    return float(sims.mean())
