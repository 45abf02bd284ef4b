"""Gaussian splat scene types and binary splat-file ingestion/export.

Files follow the de-facto splat PLY layout: binary little-endian points with
x,y,z, f_dc_0..2, opacity, scale_0..2, rot_0..3 (plus optional extras that are
ignored). Scales and opacities are stored pre-activation (log / logit); colors
are stored as the DC spherical-harmonic coefficient.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

# band-0 spherical harmonic factor: rgb = dc * SH0 + 0.5
SH0 = 0.2820947918
OPACITY_LOGIT_RANGE = (-10.0, 10.0)


class SplatFileError(ValueError):
    """Malformed or unsupported splat file."""


@dataclass(frozen=True)
class GaussianPrimitive:
    """One splat: position/opacity/scale/rotation/color in activated form."""

    position: tuple[float, float, float]
    opacity_logit: float
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # (w,x,y,z), unit, w >= 0
    color: tuple[float, float, float]  # rgb in [0,1]

    @staticmethod
    def create(position, opacity_logit, scale, rotation, color) -> "GaussianPrimitive":
        """Build with invariants applied: clamps, quaternion standardization."""
        position = tuple(float(v) for v in position)
        scale = tuple(float(v) for v in scale)
        if any(s <= 0 for s in scale):
            raise ValueError(f"scale must be strictly positive, got {scale}")
        opacity_logit = float(np.clip(opacity_logit, *OPACITY_LOGIT_RANGE))
        color = tuple(float(np.clip(c, 0.0, 1.0)) for c in color)
        rotation = standardize_quaternion(rotation)
        return GaussianPrimitive(position, opacity_logit, scale, rotation, color)


def standardize_quaternion(q) -> tuple[float, float, float, float]:
    """Normalize to unit length and flip sign so w >= 0; zero norm -> identity."""
    q = np.asarray(q, dtype=np.float64)
    norm = float(np.linalg.norm(q))
    if norm < 1e-12:
        return (1.0, 0.0, 0.0, 0.0)
    q = q / norm
    if q[0] < 0:
        q = -q
    return tuple(float(v) for v in q)


@dataclass
class Bounds:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @staticmethod
    def degenerate() -> "Bounds":
        return Bounds((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def contains(self, p) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.lo, p, self.hi))


@dataclass
class GaussianScene:
    primitives: list[GaussianPrimitive]
    bounds: Bounds
    parse_warnings: dict[str, int] = field(default_factory=dict, compare=False)

    @staticmethod
    def from_primitives(primitives: list[GaussianPrimitive]) -> "GaussianScene":
        if not primitives:
            return GaussianScene([], Bounds.degenerate())
        pos = np.array([p.position for p in primitives])
        return GaussianScene(list(primitives), Bounds(tuple(pos.min(axis=0)), tuple(pos.max(axis=0))))

    def __len__(self) -> int:
        return len(self.primitives)


_PLY_DTYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "ushort": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}

_REQUIRED_FIELDS = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


def _parse_header(stream: io.BufferedIOBase) -> tuple[int, list[tuple[str, str]]]:
    line = stream.readline().strip()
    if line != b"ply":
        raise SplatFileError("not a PLY file")
    count = None
    props: list[tuple[str, str]] = []
    fmt_seen = False
    while True:
        raw = stream.readline()
        if not raw:
            raise SplatFileError("unterminated header")
        line = raw.strip().decode("ascii", errors="replace")
        if line == "end_header":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise SplatFileError(f"unsupported format {parts[1]}")
            fmt_seen = True
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise SplatFileError(f"unsupported element {parts[1]}")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list":
                raise SplatFileError("list properties unsupported")
            if parts[1] not in _PLY_DTYPES:
                raise SplatFileError(f"unsupported property type {parts[1]}")
            props.append((parts[2], _PLY_DTYPES[parts[1]]))
    if not fmt_seen or count is None:
        raise SplatFileError("header missing format or element line")
    return count, props


def parse_splat_file(data: bytes) -> GaussianScene:
    """Read a binary splat point file and apply activations.

    exp on log-scales, clamp on logit opacities, DC color -> rgb in [0,1],
    quaternion normalization (zero-norm replaced by identity and tallied in
    the returned scene's ``parse_warnings``).
    """
    stream = io.BytesIO(data)
    count, props = _parse_header(stream)
    names = [n for n, _ in props]
    for req in _REQUIRED_FIELDS:
        if req not in names:
            raise SplatFileError(f"missing required field {req!r}")
    dtype = np.dtype(props)
    body = stream.read(dtype.itemsize * count)
    if len(body) < dtype.itemsize * count:
        raise SplatFileError("truncated point data")
    rows = np.frombuffer(body, dtype=dtype, count=count)

    def col(name):
        return rows[name].astype(np.float64)

    warnings: dict[str, int] = {}
    if count == 0:
        return GaussianScene([], Bounds.degenerate(), warnings)

    pos = np.stack([col("x"), col("y"), col("z")], axis=1)
    log_scale = np.stack([col(f"scale_{i}") for i in range(3)], axis=1)
    rot = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    opacity = col("opacity")
    for name, arr in (("position", pos), ("scale", log_scale), ("rotation", rot),
                      ("color", dc), ("opacity", opacity)):
        if not np.isfinite(arr).all():
            raise SplatFileError(f"non-finite value in field {name}")

    scale = np.exp(log_scale)
    opacity = np.clip(opacity, *OPACITY_LOGIT_RANGE)
    color = np.clip(dc * SH0 + 0.5, 0.0, 1.0)

    primitives = []
    for i in range(count):
        q = rot[i]
        if float(np.linalg.norm(q)) < 1e-12:
            warnings["zero_norm_quaternion"] = warnings.get("zero_norm_quaternion", 0) + 1
        primitives.append(
            GaussianPrimitive(
                position=tuple(pos[i]),
                opacity_logit=float(opacity[i]),
                scale=tuple(scale[i]),
                rotation=standardize_quaternion(q),
                color=tuple(color[i]),
            )
        )
    scene = GaussianScene.from_primitives(primitives)
    scene.parse_warnings = warnings
    return scene


def write_splat_file(scene: GaussianScene) -> bytes:
    """Inverse of :func:`parse_splat_file`; round-trips within 1e-6 per field."""
    n = len(scene.primitives)
    fields = [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
        ("f_dc_0", "<f4"), ("f_dc_1", "<f4"), ("f_dc_2", "<f4"),
        ("opacity", "<f4"),
        ("scale_0", "<f4"), ("scale_1", "<f4"), ("scale_2", "<f4"),
        ("rot_0", "<f4"), ("rot_1", "<f4"), ("rot_2", "<f4"), ("rot_3", "<f4"),
    ]
    rows = np.zeros(n, dtype=np.dtype(fields))
    for i, p in enumerate(scene.primitives):
        values = list(p.position) + list(p.scale) + list(p.rotation) + list(p.color) + [p.opacity_logit]
        if not np.isfinite(values).all():
            raise SplatFileError(f"non-finite attribute in primitive {i}")
        rows["x"][i], rows["y"][i], rows["z"][i] = p.position
        rows["f_dc_0"][i], rows["f_dc_1"][i], rows["f_dc_2"][i] = [(c - 0.5) / SH0 for c in p.color]
        rows["opacity"][i] = p.opacity_logit
        rows["scale_0"][i], rows["scale_1"][i], rows["scale_2"][i] = np.log(p.scale)
        rows["rot_0"][i], rows["rot_1"][i], rows["rot_2"][i], rows["rot_3"][i] = p.rotation
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
        + [f"property float {name}" for name, _ in fields]
        + ["end_header", ""]
    )
    return header.encode("ascii") + rows.tobytes()
