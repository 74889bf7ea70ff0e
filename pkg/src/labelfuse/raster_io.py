"""Label rasters, labeled point clouds and their on-disk formats.

Formats:
    * label rasters: 16-bit binary PGM (P5, maxval 65535, big-endian samples).
      The raster kind is kept in a ``# kind=...`` header comment.
    * depth maps: ``DMAP`` magic, u32 LE width, u32 LE height, float32 LE values.
    * cameras: one JSON object per view.
    * point clouds: ASCII PLY with x, y, z, sem and optional inst / view.
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidInputError
from .geometry import CameraView, DepthMap

UNKNOWN = 65535
NUM_CLASSES = 21
MAX_INSTANCES = 25

SEMANTIC = "semantic"
INSTANCE = "instance"
_KINDS = (SEMANTIC, INSTANCE)


def default_bound(kind: str) -> int:
    return NUM_CLASSES if kind == SEMANTIC else MAX_INSTANCES


@dataclass
class LabelRaster:
    """A per-view grid of u16 labels; ``UNKNOWN`` marks unlabeled pixels."""

    labels: np.ndarray
    kind: str = SEMANTIC

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(f"unknown raster kind {self.kind!r}")
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise InvalidInputError("label raster must be 2-D")
        self.labels = arr.astype(np.uint16, copy=False)

    @classmethod
    def unknown(cls, width: int, height: int, kind: str = SEMANTIC) -> "LabelRaster":
        return cls(np.full((height, width), UNKNOWN, dtype=np.uint16), kind)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def known(self) -> np.ndarray:
        return self.labels != UNKNOWN

    def copy(self) -> "LabelRaster":
        return LabelRaster(self.labels.copy(), self.kind)

    def check_bound(self, bound: Optional[int] = None):
        bound = default_bound(self.kind) if bound is None else bound
        bad = self.known & (self.labels >= bound)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise InvalidInputError(
                f"{self.kind} label {int(self.labels.ravel()[idx])} at pixel {idx} exceeds bound {bound}"
            )

    def __eq__(self, other):
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.labels, other.labels)


def same_shape(*rasters, what="rasters"):
    shapes = {r.labels.shape if isinstance(r, LabelRaster) else np.shape(r) for r in rasters}
    if len(shapes) > 1:
        raise InvalidInputError(f"{what} have mismatched dimensions: {sorted(shapes)}")


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    sem_labels: np.ndarray
    inst_labels: Optional[np.ndarray] = None
    source_view: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point coordinates must be finite")
        self.sem_labels = np.asarray(self.sem_labels, dtype=np.uint16).reshape(-1)
        if len(self.sem_labels) != n:
            raise InvalidInputError("sem_labels length differs from point count")
        if self.inst_labels is not None:
            self.inst_labels = np.asarray(self.inst_labels, dtype=np.uint16).reshape(-1)
            if len(self.inst_labels) != n:
                raise InvalidInputError("inst_labels length differs from point count")
        if self.source_view is not None:
            self.source_view = np.asarray(self.source_view, dtype=np.int64).reshape(-1)
            if len(self.source_view) != n:
                raise InvalidInputError("source_view length differs from point count")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, with_inst=False) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, np.uint16),
                   np.zeros(0, np.uint16) if with_inst else None)


# ---------------------------------------------------------------- PGM

def _pgm_header(kind: Optional[str], width: int, height: int, maxval: int) -> bytes:
    comment = f"# kind={kind}\n" if kind else ""
    return f"P5\n{comment}{width} {height}\n{maxval}\n".encode("ascii")


def _parse_pgm_header(data: bytes, path):
    if not data.startswith(b"P5"):
        raise FormatError("not a binary PGM (missing P5 magic)", path, 0)
    pos = 2
    kind = None
    values = []
    while len(values) < 3:
        # skip whitespace and comments, harvesting the kind comment
        while pos < len(data):
            c = data[pos:pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                end = data.find(b"\n", pos)
                if end < 0:
                    raise FormatError("unterminated header comment", path, pos)
                m = re.match(rb"#\s*kind=(\w+)", data[pos:end])
                if m:
                    kind = m.group(1).decode("ascii")
                pos = end + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header field", path, start)
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("PGM header must end with one whitespace byte", path, pos)
    return kind, values[0], values[1], values[2], pos + 1


def write_label_raster(raster: LabelRaster, path):
    header = _pgm_header(raster.kind, raster.width, raster.height, 65535)
    payload = raster.labels.astype(">u2").tobytes()
    with open(path, "wb") as f:
        f.write(header + payload)


def read_label_raster(path, kind: Optional[str] = None, bound: Optional[int] = None) -> LabelRaster:
    """Read a 16-bit PGM label raster, rejecting labels at or above ``bound``.

    ``kind`` overrides the kind recorded in the file; ``bound`` defaults to the
    class count (semantic) or instance budget (instance).
    """
    with open(path, "rb") as f:
        data = f.read()
    file_kind, width, height, maxval, offset = _parse_pgm_header(data, path)
    if maxval != 65535:
        raise FormatError(f"label rasters need maxval 65535, got {maxval}", path, offset)
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid raster size {width}x{height}", path, 2)
    kind = kind or file_kind or SEMANTIC
    if kind not in _KINDS:
        raise FormatError(f"unknown raster kind {kind!r}", path, 0)
    need = width * height * 2
    have = len(data) - offset
    if have < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {have}", path, len(data))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload", path, offset + need)
    labels = np.frombuffer(data, dtype=">u2", count=width * height, offset=offset)
    labels = labels.astype(np.uint16).reshape(height, width)
    bound = default_bound(kind) if bound is None else bound
    bad = np.flatnonzero((labels != UNKNOWN) & (labels >= bound))
    if len(bad):
        idx = int(bad[0])
        raise FormatError(f"label {int(labels.ravel()[idx])} exceeds bound {bound}", path, offset + 2 * idx)
    return LabelRaster(labels, kind)


def write_mask_pgm8(mask, path):
    """Write a {0,1} (or 0..255) mask as an 8-bit PGM for inspection."""
    arr = np.asarray(mask).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(_pgm_header(None, arr.shape[1], arr.shape[0], 255) + arr.tobytes())


def read_mask_pgm8(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    _, width, height, maxval, offset = _parse_pgm_header(data, path)
    if maxval > 255:
        raise FormatError("expected an 8-bit PGM", path, offset)
    if len(data) - offset != width * height:
        raise FormatError("payload size mismatch", path, len(data))
    return np.frombuffer(data, np.uint8, offset=offset).reshape(height, width).copy()


# ---------------------------------------------------------------- DMAP

_DMAP_MAGIC = b"DMAP"


def write_depth(depth: DepthMap, path):
    vals = np.asarray(depth.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_DMAP_MAGIC + struct.pack("<II", depth.width, depth.height) + vals.tobytes())


def read_depth(path) -> DepthMap:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _DMAP_MAGIC:
        raise FormatError("missing DMAP magic", path, 0)
    if len(data) < 12:
        raise FormatError("truncated DMAP header", path, len(data))
    width, height = struct.unpack_from("<II", data, 4)
    need = width * height * 4
    if len(data) - 12 != need:
        raise FormatError(f"payload is {len(data) - 12} bytes, expected {need}", path, 12)
    vals = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width).astype(np.float32)
    try:
        return DepthMap(vals)
    except InvalidInputError as exc:
        raise FormatError(str(exc), path, 12) from None


# ---------------------------------------------------------------- cameras

def camera_to_dict(view: CameraView) -> dict:
    return {
        "view_id": int(view.view_id),
        "width": int(view.width),
        "height": int(view.height),
        "k_matrix": [float(x) for x in view.k_matrix.ravel()],
        "cam_to_world": [float(x) for x in view.cam_to_world.ravel()],
    }


def write_camera(view: CameraView, path):
    with open(path, "w") as f:
        json.dump(camera_to_dict(view), f, indent=1)
        f.write("\n")


def read_camera(path) -> CameraView:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", path, exc.pos) from None
    for key in ("view_id", "width", "height", "k_matrix", "cam_to_world"):
        if key not in d:
            raise FormatError(f"camera file lacks {key!r}", path)
    if len(d["k_matrix"]) != 9 or len(d["cam_to_world"]) != 16:
        raise FormatError("k_matrix needs 9 numbers and cam_to_world 16", path)
    try:
        return CameraView(int(d["view_id"]), int(d["width"]), int(d["height"]),
                          np.array(d["k_matrix"], float).reshape(3, 3),
                          np.array(d["cam_to_world"], float).reshape(4, 4))
    except InvalidInputError as exc:
        raise FormatError(str(exc), path) from None


# ---------------------------------------------------------------- PLY

def write_ply_cloud(cloud: LabeledPointCloud, path, comments=()):
    lines = ["ply", "format ascii 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines += [f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z",
              "property ushort sem"]
    cols = [cloud.sem_labels]
    if cloud.inst_labels is not None:
        lines.append("property ushort inst")
        cols.append(cloud.inst_labels)
    if cloud.source_view is not None:
        lines.append("property int view")
        cols.append(cloud.source_view)
    lines.append("end_header")
    body = []
    for i, p in enumerate(cloud.points.tolist()):
        ints = " ".join(str(int(c[i])) for c in cols)
        body.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {ints}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines + body) + "\n")


def read_ply_cloud(path, sem_bound: int = NUM_CLASSES, inst_bound: int = MAX_INSTANCES) -> LabeledPointCloud:
    with open(path) as f:
        text = f.read().split("\n")
    if not text or text[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path, 1)
    props: list[str] = []
    count = None
    lineno = 1
    for lineno, line in enumerate(text[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise FormatError("only ASCII PLY is supported", path, lineno)
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise FormatError(f"unexpected element {tok[1]!r}", path, lineno)
            count = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
        else:
            raise FormatError(f"unexpected header line {line!r}", path, lineno)
    else:
        raise FormatError("missing end_header", path, lineno)
    if count is None:
        raise FormatError("missing vertex element", path, lineno)
    for need in ("x", "y", "z", "sem"):
        if need not in props:
            raise FormatError(f"missing required property {need!r}", path, lineno)
    rows = [r for r in text[lineno:lineno + count]]
    if len(rows) < count or any(not r.strip() for r in rows):
        raise FormatError(f"expected {count} vertex rows", path, lineno + len(rows))
    try:
        table = np.array([r.split() for r in rows], dtype=float).reshape(count, len(props))
    except ValueError:
        raise FormatError("malformed vertex row", path, lineno + 1) from None
    col = {name: table[:, i] for i, name in enumerate(props)}

    def labels(name, bound):
        vals = col[name]
        bad = np.flatnonzero((vals != UNKNOWN) & ((vals >= bound) | (vals < 0) | (vals != np.round(vals))))
        if len(bad):
            raise FormatError(f"{name} label {vals[bad[0]]:g} out of bounds", path, lineno + 1 + int(bad[0]))
        return vals.astype(np.uint16)

    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    return LabeledPointCloud(
        pts,
        labels("sem", sem_bound),
        labels("inst", inst_bound) if "inst" in col else None,
        col["view"].astype(np.int64) if "view" in col else None,
    )


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
