"""Pinhole camera model and cross-view pixel warping.

Conventions:
    * pixel ``(u, v)``: ``u`` runs along the image width, ``v`` along the height.
    * camera frame is OpenCV-style (x right, y down, z forward).
    * a depth value is the camera-frame z coordinate of the surface point,
      not the length of the viewing ray.
    * warped coordinates snap to the nearest integer pixel, ties rounding up.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .errors import InvalidInputError

_ORTHO_TOL = 1e-9


class PixelCoord(NamedTuple):
    u: float
    v: float


class WarpStatus(enum.Enum):
    BEHIND_CAMERA = "behind_camera"
    OUT_OF_VIEW = "out_of_view"
    OCCLUDED = "occluded"


BEHIND_CAMERA = WarpStatus.BEHIND_CAMERA
OUT_OF_VIEW = WarpStatus.OUT_OF_VIEW
OCCLUDED = WarpStatus.OCCLUDED


def intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear towards the top of the
    image (the camera's -y axis).
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise InvalidInputError("look_at: viewing direction is parallel to up")
    right /= norm
    down = np.cross(forward, right)
    T = np.eye(4)
    T[:3, 0] = right
    T[:3, 1] = down
    T[:3, 2] = forward
    T[:3, 3] = eye
    return T


@dataclass(frozen=True)
class CameraView:
    """Intrinsics, pose and image size of one viewpoint."""

    view_id: int
    width: int
    height: int
    k_matrix: np.ndarray
    cam_to_world: np.ndarray
    world_to_cam: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K = np.array(self.k_matrix, dtype=float).reshape(3, 3)
        T = np.array(self.cam_to_world, dtype=float).reshape(4, 4)
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"view {self.view_id}: image size must be positive")
        if not (fx > 0 and fy > 0):
            raise InvalidInputError(f"view {self.view_id}: focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise InvalidInputError(f"view {self.view_id}: principal point outside image")
        if K[0, 1] != 0 or K[1, 0] != 0 or np.any(K[2] != (0, 0, 1)):
            raise InvalidInputError(f"view {self.view_id}: K must be zero-skew pinhole")
        R = T[:3, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > _ORTHO_TOL or np.linalg.det(R) < 0:
            raise InvalidInputError(f"view {self.view_id}: cam_to_world rotation is not proper orthonormal")
        if np.any(T[3] != (0, 0, 0, 1)):
            raise InvalidInputError(f"view {self.view_id}: cam_to_world bottom row must be [0 0 0 1]")
        K.flags.writeable = False
        T.flags.writeable = False
        inv = rigid_inverse(T)
        inv.flags.writeable = False
        object.__setattr__(self, "k_matrix", K)
        object.__setattr__(self, "cam_to_world", T)
        object.__setattr__(self, "world_to_cam", inv)

    @property
    def fx(self) -> float:
        return float(self.k_matrix[0, 0])

    @property
    def fy(self) -> float:
        return float(self.k_matrix[1, 1])

    @property
    def cx(self) -> float:
        return float(self.k_matrix[0, 2])

    @property
    def cy(self) -> float:
        return float(self.k_matrix[1, 2])

    @property
    def center(self) -> np.ndarray:
        return self.cam_to_world[:3, 3].copy()


@dataclass(frozen=True)
class DepthMap:
    """Row-major grid of camera-z depths in meters; NaN marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise InvalidInputError("depth map must be a 2-D grid")
        finite = vals[~np.isnan(vals)]
        if np.any(~np.isfinite(finite)) or np.any(finite <= 0):
            raise InvalidInputError("depth values must be positive and finite, or NaN")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


def check_depth_matches(view: CameraView, depth: DepthMap):
    if (depth.width, depth.height) != (view.width, view.height):
        raise InvalidInputError(
            f"view {view.view_id}: depth is {depth.width}x{depth.height}, "
            f"camera is {view.width}x{view.height}"
        )


def pixels_to_world(view: CameraView, u, v, depth) -> np.ndarray:
    """Vectorized lift of pixels with camera-z depth to world points, shape (N, 3)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(depth, dtype=float)
    x = (u - view.cx) / view.fx * d
    y = (v - view.cy) / view.fy * d
    cam = np.stack([x, y, d], axis=-1).reshape(-1, 3)
    R = view.cam_to_world[:3, :3]
    t = view.cam_to_world[:3, 3]
    return cam @ R.T + t


def pixel_to_world(view: CameraView, px, depth: float) -> np.ndarray:
    depth = float(depth)
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidInputError(f"depth must be positive and finite, got {depth}")
    return pixels_to_world(view, px[0], px[1], depth)[0]


def project_points(view: CameraView, points) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns continuous pixels (N, 2) and camera z (N,).

    Rows with ``z <= 0`` are behind the camera; their pixel entries are NaN.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    R = view.world_to_cam[:3, :3]
    t = view.world_to_cam[:3, 3]
    cam = pts @ R.T + t
    z = cam[:, 2]
    uv = np.full((len(pts), 2), np.nan)
    front = z > 0
    uv[front, 0] = view.fx * cam[front, 0] / z[front] + view.cx
    uv[front, 1] = view.fy * cam[front, 1] / z[front] + view.cy
    return uv, z


def world_to_pixel(view: CameraView, point) -> Union[tuple[PixelCoord, float], WarpStatus]:
    uv, z = project_points(view, point)
    if not z[0] > 0:
        return BEHIND_CAMERA
    return PixelCoord(float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def warp_pixels(src: CameraView, src_depth: DepthMap, dst: CameraView, dst_depth: DepthMap,
                occlusion_tol: float = 0.05, mask=None):
    """Forward-warp every valid-depth pixel of ``src`` into ``dst``.

    Returns ``(src_flat, dst_flat)``: flat row-major indices of the source
    pixels that land visibly inside ``dst`` and of the pixels they land on.
    ``mask`` optionally restricts which source pixels are warped.
    """
    check_depth_matches(src, src_depth)
    check_depth_matches(dst, dst_depth)
    ok = src_depth.valid if mask is None else (src_depth.valid & mask)
    src_flat = np.flatnonzero(ok)
    vs, us = np.divmod(src_flat, src.width)
    world = pixels_to_world(src, us, vs, src_depth.values.ravel()[src_flat])
    uv, z = project_points(dst, world)
    with np.errstate(invalid="ignore"):
        iu = np.floor(uv[:, 0] + 0.5)
        iv = np.floor(uv[:, 1] + 0.5)
        inside = (z > 0) & (iu >= 0) & (iu < dst.width) & (iv >= 0) & (iv < dst.height)
    src_flat = src_flat[inside]
    dst_flat = iv[inside].astype(np.int64) * dst.width + iu[inside].astype(np.int64)
    ref_z = dst_depth.values.ravel()[dst_flat]
    # NaN target depth fails the comparison and is dropped
    visible = np.abs(z[inside] - ref_z) <= occlusion_tol
    return src_flat[visible], dst_flat[visible]


def warp_pixel(src: CameraView, src_depth: DepthMap, px, dst: CameraView, dst_depth: DepthMap,
               occlusion_tol: float = 0.05) -> Union[PixelCoord, WarpStatus]:
    """Warp one integer source pixel into ``dst``.

    Returns the landing integer pixel, ``OUT_OF_VIEW`` (outside the image or
    behind the camera) or ``OCCLUDED`` (depth disagrees with ``dst_depth`` by
    more than ``occlusion_tol``).
    """
    u, v = int(px[0]), int(px[1])
    if not (0 <= u < src.width and 0 <= v < src.height):
        raise InvalidInputError(f"pixel {(u, v)} outside source view")
    d = float(src_depth.values[v, u])
    if not np.isfinite(d) or d <= 0:
        raise InvalidInputError(f"pixel {(u, v)} has no valid depth")
    hit = world_to_pixel(dst, pixel_to_world(src, (u, v), d))
    if hit is BEHIND_CAMERA:
        return OUT_OF_VIEW
    (fu, fv), z = hit
    iu, iv = int(round_half_up(fu)), int(round_half_up(fv))
    if not (0 <= iu < dst.width and 0 <= iv < dst.height):
        return OUT_OF_VIEW
    ref = float(dst_depth.values[iv, iu])
    if not abs(z - ref) <= occlusion_tol:
        return OCCLUDED
    return PixelCoord(iu, iv)
