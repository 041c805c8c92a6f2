"""Spherical geometry: equirectangular mapping, gnomonic NFOV crops, the
81-viewpoint candidate grid, and trajectory metrics.

Conventions: longitude (lon) in degrees [0, 360) increasing eastward,
latitude (lat) in degrees [-90, 90] increasing northward. ERP rasters are
row-major with row 0 at lat +90 and column 0 at the reference meridian.
Candidate ordering is ascending (lon, lat), lon-major.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DomainError, FormatError

GRID_LONS = tuple(float(l) for l in range(0, 360, 40))
GRID_LATS = (-75.0, -55.0, -35.0, -15.0, 0.0, 15.0, 35.0, 55.0, 75.0)
NUM_CANDIDATES = len(GRID_LONS) * len(GRID_LATS)

DEFAULT_H_SPAN = 54.0
DEFAULT_V_SPAN = 30.0


@dataclass(frozen=True)
class Viewpoint:
    """A direction on the sphere; longitude is normalized modulo 360."""

    lon: float
    lat: float

    def __post_init__(self):
        object.__setattr__(self, "lon", float(self.lon) % 360.0)
        object.__setattr__(self, "lat", float(self.lat))
        if not -90.0 <= self.lat <= 90.0:
            raise ConfigError(f"latitude {self.lat} outside [-90, 90]")

    def unit_vector(self) -> np.ndarray:
        lon = math.radians(self.lon)
        lat = math.radians(self.lat)
        return np.array([math.cos(lat) * math.cos(lon),
                         math.cos(lat) * math.sin(lon),
                         math.sin(lat)])


@dataclass(frozen=True)
class NfovSpec:
    """A normal-field-of-view crop: center plus angular spans, 16:9 raster."""

    center: Viewpoint
    h_span: float = DEFAULT_H_SPAN
    v_span: float = DEFAULT_V_SPAN
    out_width: int = 256
    out_height: int = 144

    def __post_init__(self):
        if not (0.0 < self.h_span < 180.0 and 0.0 < self.v_span < 180.0):
            raise ConfigError(f"spans must lie in (0, 180), got "
                              f"{self.h_span} x {self.v_span}")
        if self.out_width < 1 or self.out_height < 1:
            raise ConfigError("output raster must be at least 1x1")
        if (self.out_height != round(self.out_width * 9 / 16)
                and self.out_width != round(self.out_height * 16 / 9)):
            raise ConfigError(
                f"output {self.out_width}x{self.out_height} is not 16:9 within rounding")


@dataclass
class ErpImage:
    """Full-sphere equirectangular raster with reference meridian/parallel."""

    data: np.ndarray  # (H, W, C) float32
    lon0: float = 0.0
    lat1: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ConfigError(f"ERP raster must be HxWxC, got {self.data.shape}")
        h, w, _ = self.data.shape
        if w != 2 * h:
            raise ConfigError(f"full-sphere ERP needs width = 2 * height, got {w}x{h}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def pixel_coords(self, lon: float, lat: float) -> tuple[float, float]:
        """Fractional (row, col) of a sphere direction in this raster."""
        col = ((lon - self.lon0) % 360.0) / 360.0 * self.width - 0.5
        row = (90.0 - lat) / 180.0 * self.height - 0.5
        return row, col


def erp_coords(lon: float, lat: float, lon0: float, lat1: float) -> tuple[float, float]:
    """Planar ERP coordinates x = (lon - lon0) * cos(lat1), y = lat - lat1."""
    if math.isclose(abs(lat1) % 180.0, 90.0, abs_tol=1e-12):
        raise DomainError(f"standard parallel {lat1} is degenerate")
    return (lon - lon0) * math.cos(math.radians(lat1)), lat - lat1


def erp_coords_inverse(x: float, y: float, lon0: float, lat1: float) -> tuple[float, float]:
    if math.isclose(abs(lat1) % 180.0, 90.0, abs_tol=1e-12):
        raise DomainError(f"standard parallel {lat1} is degenerate")
    return x / math.cos(math.radians(lat1)) + lon0, y + lat1


def viewpoint_grid() -> list[Viewpoint]:
    """The 81 NFOV candidate centers, ascending (lon, lat), lon-major."""
    return [Viewpoint(lon, lat) for lon in GRID_LONS for lat in GRID_LATS]


def _tangent_frame(center: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lon = math.radians(center.lon)
    lat = math.radians(center.lat)
    fwd = center.unit_vector()
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    north = np.array([-math.sin(lat) * math.cos(lon),
                      -math.sin(lat) * math.sin(lon),
                      math.cos(lat)])
    return fwd, east, north


def gnomonic_forward(center: Viewpoint, lon, lat):
    """Project sphere directions onto the tangent plane at ``center``.

    Returns (u, v, front): u is east, v is north, in tangent units
    (tan of the angular offset); ``front`` marks the visible hemisphere.
    """
    lon = np.radians(np.asarray(lon, dtype=np.float64))
    lat = np.radians(np.asarray(lat, dtype=np.float64))
    p = np.stack([np.cos(lat) * np.cos(lon),
                  np.cos(lat) * np.sin(lon),
                  np.sin(lat)], axis=-1)
    fwd, east, north = _tangent_frame(center)
    cos_c = p @ fwd
    front = cos_c > 0
    safe = np.where(front, cos_c, 1.0)
    return (p @ east) / safe, (p @ north) / safe, front


def gnomonic_inverse(center: Viewpoint, u, v):
    """Map tangent-plane coordinates back to (lon, lat) in degrees."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    rho = np.hypot(u, v)
    c = np.arctan(rho)
    sin_c, cos_c = np.sin(c), np.cos(c)
    lat0 = math.radians(center.lat)
    with np.errstate(invalid="ignore"):
        ratio = np.where(rho == 0, 0.0, sin_c / np.where(rho == 0, 1.0, rho))
    lat = np.arcsin(np.clip(cos_c * math.sin(lat0) + v * ratio * math.cos(lat0), -1, 1))
    lon = math.radians(center.lon) + np.arctan2(
        u * sin_c, rho * math.cos(lat0) * cos_c - v * math.sin(lat0) * sin_c)
    return np.degrees(lon) % 360.0, np.degrees(lat)


def bilinear_sample(erp: ErpImage, lon, lat) -> np.ndarray:
    """Sample the raster with longitude wrap-around and latitude clamping."""
    row = (90.0 - np.asarray(lat, dtype=np.float64)) / 180.0 * erp.height - 0.5
    col = ((np.asarray(lon, dtype=np.float64) - erp.lon0) % 360.0) / 360.0 * erp.width - 0.5
    r0 = np.floor(row).astype(np.int64)
    c0 = np.floor(col).astype(np.int64)
    fr = (row - r0)[..., None]
    fc = (col - c0)[..., None]
    r0c = np.clip(r0, 0, erp.height - 1)
    r1c = np.clip(r0 + 1, 0, erp.height - 1)
    c0w = c0 % erp.width
    c1w = (c0 + 1) % erp.width
    img = erp.data
    top = img[r0c, c0w] * (1 - fc) + img[r0c, c1w] * fc
    bot = img[r1c, c0w] * (1 - fc) + img[r1c, c1w] * fc
    return (top * (1 - fr) + bot * fr).astype(np.float32)


def gnomonic_crop(erp: ErpImage, spec: NfovSpec) -> np.ndarray:
    """Extract a rectilinear NFOV raster centered on ``spec.center``."""
    w, h = spec.out_width, spec.out_height
    umax = math.tan(math.radians(spec.h_span) / 2)
    vmax = math.tan(math.radians(spec.v_span) / 2)
    us = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * umax
    vs = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * vmax
    uu, vv = np.meshgrid(us, vs)
    lon, lat = gnomonic_inverse(spec.center, uu, vv)
    return bilinear_sample(erp, lon, lat)


def frame_cosine_similarity(a: Viewpoint, b: Viewpoint) -> float:
    """Cosine of the great-circle angle between two viewpoints."""
    return float(np.clip(a.unit_vector() @ b.unit_vector(), -1.0, 1.0))


def _footprint_mask(points: np.ndarray, spec: NfovSpec) -> np.ndarray:
    fwd, east, north = _tangent_frame(spec.center)
    cos_c = points @ fwd
    front = cos_c > 0
    safe = np.where(front, cos_c, 1.0)
    u = (points @ east) / safe
    v = (points @ north) / safe
    return (front
            & (np.abs(u) <= math.tan(math.radians(spec.h_span) / 2))
            & (np.abs(v) <= math.tan(math.radians(spec.v_span) / 2)))


def frame_overlap(a: NfovSpec, b: NfovSpec, samples: int = 200_000,
                  seed: int = 0) -> float:
    """IoU of two NFOV solid-angle footprints by uniform-sphere Monte Carlo."""
    if (a.h_span, a.v_span) != (b.h_span, b.v_span):
        raise ContractError("frame_overlap requires identical spans")
    if samples < 100_000:
        raise ConfigError("frame_overlap needs at least 1e5 samples")
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((samples, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    in_a = _footprint_mask(pts, a)
    in_b = _footprint_mask(pts, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b) / union)


def smooth_trajectory(step_scores: np.ndarray, max_step_deg: float = 30.0) -> list[int]:
    """Viterbi over the 81-candidate grid maximizing summed view scores.

    Consecutive steps must satisfy |d_lon| <= max_step_deg (modular) and
    |d_lat| <= max_step_deg. Ties resolve to the lowest candidate index.
    """
    scores = np.asarray(step_scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != NUM_CANDIDATES:
        raise ConfigError(f"expected (T, {NUM_CANDIDATES}) scores, got {scores.shape}")
    grid = viewpoint_grid()
    lons = np.array([g.lon for g in grid])
    lats = np.array([g.lat for g in grid])
    dlon = np.abs(lons[:, None] - lons[None, :])
    dlon = np.minimum(dlon, 360.0 - dlon)
    dlat = np.abs(lats[:, None] - lats[None, :])
    allowed = (dlon <= max_step_deg + 1e-9) & (dlat <= max_step_deg + 1e-9)

    t = scores.shape[0]
    best = scores[0].copy()
    back = np.zeros((t, NUM_CANDIDATES), dtype=np.int64)
    for step in range(1, t):
        # transition[i, j]: arrive at j from i when allowed
        arrival = np.where(allowed, best[:, None], -np.inf)
        back[step] = np.argmax(arrival, axis=0)
        best = arrival[back[step], np.arange(NUM_CANDIDATES)] + scores[step]
    path = [int(np.argmax(best))]
    for step in range(t - 1, 0, -1):
        path.append(int(back[step, path[-1]]))
    return path[::-1]


# ---------------------------------------------------------------------------
# raster I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Load a PNG/JPEG as float32 (H, W, C) scaled to [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(arr: np.ndarray, path: str | Path) -> None:
    """Save a float32 [0, 1] raster as 8-bit PNG."""
    from PIL import Image

    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    data = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_raw_erp(erp: ErpImage, path: str | Path) -> None:
    """Write planar float32 planes plus a JSON metadata sidecar."""
    path = Path(path)
    planes = np.ascontiguousarray(erp.data.transpose(2, 0, 1), dtype="<f4")
    path.write_bytes(planes.tobytes())
    meta = {"width": erp.width, "height": erp.height, "channels": erp.channels,
            "lon0": erp.lon0, "lat1": erp.lat1}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))


def load_raw_erp(path: str | Path) -> ErpImage:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise FormatError(f"missing ERP metadata sidecar {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        w, h, c = int(meta["width"]), int(meta["height"]), int(meta["channels"])
        lon0 = float(meta.get("lon0", 0.0))
        lat1 = float(meta.get("lat1", 0.0))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad ERP sidecar {sidecar}: {exc}") from exc
    blob = path.read_bytes()
    expected = 4 * w * h * c
    if len(blob) != expected:
        raise FormatError(
            f"raw ERP payload is {len(blob)} bytes, expected {expected}")
    planes = np.frombuffer(blob, dtype="<f4").reshape(c, h, w)
    return ErpImage(planes.transpose(1, 2, 0).copy(), lon0=lon0, lat1=lat1)
