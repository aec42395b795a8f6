"""Depth-noise simulation and point-cloud preprocessing.

Simulated and real depth data go through the same operations so their
distributions match: noise injection (simulated only), pinhole
back-projection, voxel downsampling, statistical outlier removal, multi-camera
fusion, and workspace cropping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mobman import rng, se3
from mobman.se3 import Pose

INVALID_DEPTH = 0.0  # sensor-convention sentinel

CLOUD_MAGIC = b"MBPC"
CLOUD_VERSION = 1


class CloudFormatError(ValueError):
    """Malformed cloud file: bad magic, version, or payload length."""


@dataclass
class DepthImage:
    width: int
    height: int
    depths: np.ndarray  # height x width, meters; INVALID_DEPTH marks holes
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(self.height, self.width)
        if min(self.fx, self.fy) <= 0:
            raise ValueError("focal lengths must be positive")
        valid = self.depths[self.depths != INVALID_DEPTH]
        if valid.size and np.any(valid < 0):
            raise ValueError("valid depths must be positive")


@dataclass
class PointCloud:
    points: np.ndarray  # N x 3 meters
    frame: str = "world"
    sor_warning: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CameraExtrinsic:
    camera_to_world: Pose
    camera_id: str


@dataclass(frozen=True)
class DepthNoiseParams:
    """Defaults are configuration values, not published numbers."""

    edge_grad_thresh: float = 0.05  # m per pixel step
    p_edge_drop: float = 0.5
    sigma_edge: float = 0.01  # m
    n_holes: int = 3
    hole_radius_range: tuple[float, float] = (2.0, 10.0)  # pixels


def inject_depth_noise(img: DepthImage, params: DepthNoiseParams, seed: int, episode: int = 0) -> DepthImage:
    """Edge artifacts near depth discontinuities plus random disk holes.

    A pixel whose largest 4-neighbor depth difference exceeds the gradient
    threshold is dropped with probability p_edge_drop, otherwise perturbed by
    zero-mean Gaussian noise. Deterministic for a given (seed, episode).
    """
    d = img.depths.copy()
    if d.size == 0:
        return DepthImage(img.width, img.height, d, img.fx, img.fy, img.cx, img.cy)
    gen = rng.stream(seed, episode, rng.STREAM_NOISE)

    valid = d != INVALID_DEPTH
    grad = np.zeros_like(d)
    for shift, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
        nb = np.roll(d, shift, axis=axis)
        nb_valid = np.roll(valid, shift, axis=axis)
        # Clip the wrap-around rows/cols: no neighbor there.
        edge = np.zeros_like(valid)
        if axis == 0:
            edge[0 if shift == 1 else -1, :] = True
        else:
            edge[:, 0 if shift == 1 else -1] = True
        diff = np.where(valid & nb_valid & ~edge, np.abs(d - nb), 0.0)
        grad = np.maximum(grad, diff)

    edge_pixels = grad > params.edge_grad_thresh
    u = gen.random(d.shape)
    noise = gen.normal(0.0, params.sigma_edge, d.shape)
    drop = edge_pixels & (u < params.p_edge_drop)
    perturb = edge_pixels & ~drop
    d[drop] = INVALID_DEPTH
    d[perturb] = np.maximum(d[perturb] + noise[perturb], 1e-6)

    yy, xx = np.mgrid[0 : img.height, 0 : img.width]
    for _ in range(params.n_holes):
        cx = gen.uniform(0, img.width)
        cy = gen.uniform(0, img.height)
        r = gen.uniform(*params.hole_radius_range)
        d[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = INVALID_DEPTH
    return DepthImage(img.width, img.height, d, img.fx, img.fy, img.cx, img.cy)


def depth_to_cloud(img: DepthImage, frame: str = "camera") -> PointCloud:
    """Pinhole back-projection of all valid pixels."""
    vv, uu = np.nonzero(img.depths != INVALID_DEPTH)
    z = img.depths[vv, uu]
    x = (uu - img.cx) * z / img.fx
    y = (vv - img.cy) * z / img.fy
    return PointCloud(np.stack([x, y, z], axis=1), frame)


def _voxel_indices(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(points / voxel).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One centroid per occupied voxel, output ordered by voxel index."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)), cloud.frame)
    idx = _voxel_indices(cloud.points, voxel)
    # Lexicographic order over (ix, iy, iz) keeps the output deterministic.
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    idx_sorted = idx[order]
    pts_sorted = cloud.points[order]
    boundaries = np.any(np.diff(idx_sorted, axis=0) != 0, axis=1)
    starts = np.concatenate(([0], np.nonzero(boundaries)[0] + 1))
    ends = np.concatenate((starts[1:], [len(cloud)]))
    centroids = np.add.reduceat(pts_sorted, starts, axis=0) / (ends - starts)[:, None]
    return PointCloud(centroids, cloud.frame)


def remove_statistical_outliers(cloud: PointCloud, k: int = 8, m: float = 1.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mu + m*sigma.

    With k >= point count the cloud is returned unchanged with a warning flag.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(cloud)
    if n == 0:
        return PointCloud(np.empty((0, 3)), cloud.frame)
    if k >= n:
        return PointCloud(cloud.points.copy(), cloud.frame, sor_warning=True)
    # Pairwise distances; clouds here are post-downsampling, so O(n^2) is fine.
    diff = cloud.points[:, None, :] - cloud.points[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dists, np.inf)
    knn = np.sort(dists, axis=1)[:, :k]
    mean_d = knn.mean(axis=1)
    mu, sigma = mean_d.mean(), mean_d.std()
    keep = mean_d <= mu + m * sigma
    return PointCloud(cloud.points[keep], cloud.frame)


def fuse_clouds(clouds: list[tuple[PointCloud, CameraExtrinsic]]) -> PointCloud:
    """Transform each cloud into the world frame and concatenate in camera-id order."""
    ordered = sorted(clouds, key=lambda ce: ce[1].camera_id)
    parts = [ext.camera_to_world.apply(c.points) if len(c) else np.empty((0, 3)) for c, ext in ordered]
    if not parts:
        return PointCloud(np.empty((0, 3)), "world")
    return PointCloud(np.concatenate(parts, axis=0), "world")


def crop_foreground(cloud: PointCloud, box_min, box_max) -> PointCloud:
    """Keep points inside the closed axis-aligned workspace box."""
    lo = np.asarray(box_min, dtype=np.float64).reshape(3)
    hi = np.asarray(box_max, dtype=np.float64).reshape(3)
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)), cloud.frame)
    keep = np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
    return PointCloud(cloud.points[keep], cloud.frame)


def write_cloud(cloud: PointCloud, path: str | Path) -> None:
    """Binary cloud format: magic, version u32, count u32, f32 xyz triples (LE)."""
    payload = cloud.points.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<II", CLOUD_VERSION, len(cloud)))
        f.write(payload)


def read_cloud(path: str | Path, frame: str = "world") -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CLOUD_MAGIC:
        raise CloudFormatError("bad cloud magic")
    version, count = struct.unpack("<II", data[4:12])
    if version != CLOUD_VERSION:
        raise CloudFormatError(f"unsupported cloud version {version}")
    expected = 12 + count * 12
    if len(data) != expected:
        raise CloudFormatError(f"payload length {len(data) - 12} does not match count {count}")
    pts = np.frombuffer(data[12:], dtype="<f4").reshape(count, 3).astype(np.float64)
    return PointCloud(pts, frame)
