"""Desk-scale test inputs: images, point clouds, and pillar preprocessing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTarget, ShapeMismatch
from .graph import Tensor
from .sketch import ScenarioId

IMAGE_SHAPE = (3, 32, 32)
POINTCLOUD_POINTS = 256
POINTCLOUD_BOUNDS = (20.0, 20.0, 4.0)
PILLAR_GRID = (8, 8)
MAX_PER_PILLAR = 32
NOMINAL_HW = 32


@dataclass(frozen=True)
class PointCloud:
    """Points as (N, 4) rows of x, y, z, intensity inside a bounding box."""

    points: np.ndarray
    bounds: tuple[float, float, float] = POINTCLOUD_BOUNDS

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeMismatch(f"point cloud must be (N, 4), got {pts.shape}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        bx, by, bz = self.bounds
        xyz = pts[:, :3]
        if xyz.size and (xyz.min() < 0 or (xyz > np.array([bx, by, bz], dtype=np.float32)).any()):
            raise ShapeMismatch("points fall outside the declared bounds")

    @classmethod
    def from_tensor(cls, t: Tensor, bounds: tuple[float, float, float] = POINTCLOUD_BOUNDS) -> "PointCloud":
        """Clamp arbitrary (N, 4) tensor data into the box and wrap it."""
        pts = np.array(t.values, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeMismatch(f"point cloud tensor must be (N, 4), got {pts.shape}")
        hi = np.array(bounds, dtype=np.float32)
        pts[:, :3] = np.clip(pts[:, :3], 0.0, hi)
        return cls(pts, bounds)


@dataclass(frozen=True)
class PillarGrid:
    """Per-cell pillar features over a fixed 2-d grid.

    Feature channels: normalized count, mean x, mean y, mean z, mean
    intensity. Unoccupied cells are all zero.
    """

    grid: tuple[int, int]
    cell_size: tuple[float, float]
    features: np.ndarray
    occupancy: np.ndarray
    counts: np.ndarray


def generate_inputs(scenario: ScenarioId, seed: int) -> dict[str, Tensor]:
    """Deterministic labeled inputs for one scenario.

    Image values are uniform in [0, 1); point coordinates are uniform in the
    bounding box with intensities in [0, 1).
    """
    rng = np.random.default_rng(seed)
    out: dict[str, Tensor] = {}
    for modality in scenario.modalities:
        if modality == "image":
            arr = rng.random(IMAGE_SHAPE, dtype=np.float32)
            out["image"] = Tensor(arr, "image")
        elif modality == "pointcloud":
            bx, by, bz = POINTCLOUD_BOUNDS
            xyz = rng.random((POINTCLOUD_POINTS, 3), dtype=np.float32) * np.array(
                [bx, by, bz], dtype=np.float32
            )
            intensity = rng.random((POINTCLOUD_POINTS, 1), dtype=np.float32)
            out["pointcloud"] = Tensor(np.hstack([xyz, intensity]), "pointcloud")
        else:
            raise ShapeMismatch(f"unknown modality {modality!r}")
    return out


def _bilinear_axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel centers, clamped to the source extent.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    t = (src - lo).astype(np.float32)
    return lo, hi, t


def _bilinear_resize(arr: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    _, h_in, w_in = arr.shape
    ry_lo, ry_hi, ty = _bilinear_axis_coords(h_out, h_in)
    rx_lo, rx_hi, tx = _bilinear_axis_coords(w_out, w_in)
    top = arr[:, ry_lo, :] * (1.0 - ty)[None, :, None] + arr[:, ry_hi, :] * ty[None, :, None]
    out = top[:, :, rx_lo] * (1.0 - tx)[None, None, :] + top[:, :, rx_hi] * tx[None, None, :]
    return out.astype(np.float32)


def preprocess_image(image: Tensor, target: tuple[int, int]) -> Tensor:
    """Bilinear-scale so the short side matches, then center-crop.

    A target equal to the source passes the pixels through unchanged. Output
    values never leave the source value range (bilinear overshoot is clamped).
    """
    h_t, w_t = int(target[0]), int(target[1])
    if h_t <= 0 or w_t <= 0:
        raise DegenerateTarget(f"target {target} has a zero-sized side")
    arr = image.values
    if arr.ndim != 3:
        raise ShapeMismatch(f"image must be rank 3, got shape {arr.shape}")
    _, h, w = arr.shape
    if (h, w) == (h_t, w_t):
        return Tensor(arr, image.label)
    scale = max(h_t / h, w_t / w)
    rh = max(h_t, int(round(h * scale)))
    rw = max(w_t, int(round(w * scale)))
    resized = _bilinear_resize(arr, rh, rw)
    top = (rh - h_t) // 2
    left = (rw - w_t) // 2
    cropped = resized[:, top : top + h_t, left : left + w_t]
    cropped = np.clip(cropped, arr.min(), arr.max())
    return Tensor(cropped, image.label)


def voxelize_points(
    pc: PointCloud,
    grid: tuple[int, int] = PILLAR_GRID,
    max_per_pillar: int = MAX_PER_PILLAR,
) -> PillarGrid:
    """Bin points into vertical pillars on an (rows, cols) ground grid.

    Rows follow y, columns follow x. Out-of-bounds coordinates are clipped
    into the boundary cells, so every point lands somewhere and the per-cell
    counts sum to N.
    """
    rows, cols = int(grid[0]), int(grid[1])
    if rows <= 0 or cols <= 0:
        raise DegenerateTarget(f"grid {grid} has a zero-sized side")
    bx, by, _ = pc.bounds
    cell_h = by / rows
    cell_w = bx / cols
    pts = pc.points
    n = pts.shape[0]
    r = np.clip((pts[:, 1] / cell_h).astype(np.int64), 0, rows - 1)
    c = np.clip((pts[:, 0] / cell_w).astype(np.int64), 0, cols - 1)
    flat = r * cols + c
    ncell = rows * cols
    counts = np.bincount(flat, minlength=ncell).astype(np.int64)

    feats = np.zeros((5, ncell), dtype=np.float32)
    feats[0] = counts / float(max_per_pillar)
    occupied = counts > 0
    safe = np.maximum(counts, 1)
    for i, col in enumerate((0, 1, 2, 3)):
        sums = np.bincount(flat, weights=pts[:, col].astype(np.float64), minlength=ncell)
        feats[i + 1] = np.where(occupied, sums / safe, 0.0).astype(np.float32)
    assert int(counts.sum()) == n
    return PillarGrid(
        grid=(rows, cols),
        cell_size=(cell_h, cell_w),
        features=feats.reshape(5, rows, cols),
        occupancy=occupied.reshape(rows, cols),
        counts=counts.reshape(rows, cols),
    )


def encode_pillars(
    grid: PillarGrid,
    bounds: tuple[float, float, float] = POINTCLOUD_BOUNDS,
    target_hw: int = NOMINAL_HW,
) -> np.ndarray:
    """Middle encoder: project pillar features to a dense 3-channel map.

    A fixed, weightless mapping: normalized occupancy density, normalized
    mean ground position, and normalized mean height blended with intensity,
    upsampled (nearest) to the nominal spatial size.
    """
    bx, by, bz = bounds
    f = grid.features
    c0 = np.clip(f[0], 0.0, 1.0)
    c1 = 0.5 * (f[1] / bx + f[2] / by)
    c2 = 0.5 * (f[3] / bz + f[4])
    small = np.stack([c0, c1, c2]).astype(np.float32)
    rows, cols = grid.grid
    if target_hw % rows or target_hw % cols:
        raise DegenerateTarget(f"grid {grid.grid} does not tile {target_hw}x{target_hw}")
    out = np.repeat(np.repeat(small, target_hw // rows, axis=1), target_hw // cols, axis=2)
    return np.ascontiguousarray(out, dtype=np.float32)


def pillar_summary(pc: PointCloud) -> np.ndarray:
    """Pooled pillar statistics: grid-wide mean of each feature channel."""
    grid = voxelize_points(pc)
    return grid.features.mean(axis=(1, 2)).astype(np.float32)


def decode_boxes(outputs: dict[str, Tensor], pointcloud: PointCloud | None = None) -> np.ndarray:
    """Postprocessing stand-in: pool head outputs into a flat detection vector.

    Each output map contributes its per-channel means (labels in sorted order
    so the vector layout is stable). When a raw point cloud participates in
    postprocessing, its pooled pillar statistics are appended.
    """
    parts: list[np.ndarray] = []
    for label in sorted(outputs):
        arr = np.asarray(outputs[label].values, dtype=np.float32)
        parts.append(arr.reshape(arr.shape[0], -1).mean(axis=1))
    if pointcloud is not None:
        parts.append(pillar_summary(pointcloud))
    if not parts:
        raise ShapeMismatch("decode_boxes needs at least one output map")
    return np.concatenate(parts).astype(np.float32)
