"""Inverted-pyramid stair terrain: generation, queries, curriculum sampling.

The tile is a square of concentric stair rings ascending from a flat
central platform to a raised border. Ring membership is computed in
integer cell coordinates so that (spec, seed) always reproduces the grid
bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

DIFFICULTY_MIN = 0.01
DIFFICULTY_MAX = 0.70
STEP_HEIGHT_MIN = 0.01
STEP_HEIGHT_MAX = 0.126


class InvalidSpec(ValueError):
    pass


class SamplingFailed(RuntimeError):
    pass


def step_height(difficulty: float) -> float:
    """Stair riser height for a difficulty scalar in [0.01, 0.70].

    Endpoint-exact linear interpolation between the easiest (0.01 m) and
    hardest (0.126 m) configurations.
    """
    if not (DIFFICULTY_MIN <= difficulty <= DIFFICULTY_MAX):
        raise InvalidSpec(f"difficulty {difficulty} outside [{DIFFICULTY_MIN}, {DIFFICULTY_MAX}]")
    t = (difficulty - DIFFICULTY_MIN) / (DIFFICULTY_MAX - DIFFICULTY_MIN)
    return STEP_HEIGHT_MIN * (1.0 - t) + STEP_HEIGHT_MAX * t


@dataclass(frozen=True)
class TerrainSpec:
    tile_size: float = 10.0
    border: float = 2.0
    step_width: float = 0.40
    platform_width: float = 4.0
    difficulty: float = 0.35
    friction: float = 0.8
    cell_resolution: float = 0.05
    roughness_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.cell_resolution <= 0.0:
            raise InvalidSpec("cell_resolution must be positive")
        step_height(self.difficulty)  # range check

    def with_difficulty(self, d: float) -> "TerrainSpec":
        return replace(self, difficulty=d)


@dataclass
class HeightField:
    """Row-major height grid with bilinear queries; heights[i, j] sits at
    (origin[0] + j*resolution, origin[1] + i*resolution)."""

    heights: np.ndarray
    origin: np.ndarray
    resolution: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    def bounds(self) -> tuple[float, float, float, float]:
        ny, nx = self.heights.shape
        return (
            float(self.origin[0]),
            float(self.origin[1]),
            float(self.origin[0] + (nx - 1) * self.resolution),
            float(self.origin[1] + (ny - 1) * self.resolution),
        )

    def _locate(self, x: float, y: float) -> tuple[int, int, float, float, bool]:
        ny, nx = self.heights.shape
        fx = (x - self.origin[0]) / self.resolution
        fy = (y - self.origin[1]) / self.resolution
        oob = fx < 0.0 or fy < 0.0 or fx > nx - 1 or fy > ny - 1
        fx = min(max(fx, 0.0), nx - 1.0)
        fy = min(max(fy, 0.0), ny - 1.0)
        j = min(int(fx), nx - 2)
        i = min(int(fy), ny - 2)
        return i, j, fx - j, fy - i, oob

    def height_at(self, x: float, y: float) -> float:
        i, j, tx, ty, _ = self._locate(x, y)
        h = self.heights
        return float(
            h[i, j] * (1.0 - tx) * (1.0 - ty)
            + h[i, j + 1] * tx * (1.0 - ty)
            + h[i + 1, j] * (1.0 - tx) * ty
            + h[i + 1, j + 1] * tx * ty
        )

    def patch_gradient(self, x: float, y: float) -> tuple[float, float]:
        """Exact (dh/dx, dh/dy) of the bilinear patch containing (x, y);
        this is the slope of the actual collision surface, sharp at risers."""
        i, j, tx, ty, _ = self._locate(x, y)
        h = self.heights
        dhdx = ((h[i, j + 1] - h[i, j]) * (1.0 - ty) + (h[i + 1, j + 1] - h[i + 1, j]) * ty) / self.resolution
        dhdy = ((h[i + 1, j] - h[i, j]) * (1.0 - tx) + (h[i + 1, j + 1] - h[i, j + 1]) * tx) / self.resolution
        return float(dhdx), float(dhdy)

    def height_and_patch_gradient(self, x: float, y: float) -> tuple[float, float, float]:
        """(height, dh/dx, dh/dy) from a single cell lookup (contact hot path)."""
        i, j, tx, ty, _ = self._locate(x, y)
        h = self.heights
        h00 = float(h[i, j])
        h01 = float(h[i, j + 1])
        h10 = float(h[i + 1, j])
        h11 = float(h[i + 1, j + 1])
        height = h00 * (1.0 - tx) * (1.0 - ty) + h01 * tx * (1.0 - ty) + h10 * (1.0 - tx) * ty + h11 * tx * ty
        dhdx = ((h01 - h00) * (1.0 - ty) + (h11 - h10) * ty) / self.resolution
        dhdy = ((h10 - h00) * (1.0 - tx) + (h11 - h01) * tx) / self.resolution
        return height, dhdx, dhdy

    def height_batch(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorized bilinear heights for coordinate arrays (clamped)."""
        ny, nx = self.heights.shape
        fx = np.clip((x - self.origin[0]) / self.resolution, 0.0, nx - 1.0)
        fy = np.clip((y - self.origin[1]) / self.resolution, 0.0, ny - 1.0)
        j = np.minimum(fx.astype(np.intp), nx - 2)
        i = np.minimum(fy.astype(np.intp), ny - 2)
        tx = fx - j
        ty = fy - i
        h = self.heights
        return (
            h[i, j] * (1.0 - tx) * (1.0 - ty)
            + h[i, j + 1] * tx * (1.0 - ty)
            + h[i + 1, j] * (1.0 - tx) * ty
            + h[i + 1, j + 1] * tx * ty
        )

    def height_and_patch_gradient_batch(self, x: np.ndarray, y: np.ndarray):
        """Vectorized (height, dh/dx, dh/dy) over coordinate arrays."""
        ny, nx = self.heights.shape
        fx = np.clip((x - self.origin[0]) / self.resolution, 0.0, nx - 1.0)
        fy = np.clip((y - self.origin[1]) / self.resolution, 0.0, ny - 1.0)
        j = np.minimum(fx.astype(np.intp), nx - 2)
        i = np.minimum(fy.astype(np.intp), ny - 2)
        tx = fx - j
        ty = fy - i
        h = self.heights
        h00 = h[i, j]
        h01 = h[i, j + 1]
        h10 = h[i + 1, j]
        h11 = h[i + 1, j + 1]
        height = h00 * (1.0 - tx) * (1.0 - ty) + h01 * tx * (1.0 - ty) + h10 * (1.0 - tx) * ty + h11 * tx * ty
        dhdx = ((h01 - h00) * (1.0 - ty) + (h11 - h10) * ty) / self.resolution
        dhdy = ((h10 - h00) * (1.0 - tx) + (h11 - h01) * tx) / self.resolution
        return height, dhdx, dhdy


def sample_height(field: HeightField, xy) -> tuple[float, np.ndarray, bool]:
    """Bilinear height plus a central-difference surface normal.

    Queries outside the grid clamp to the edge and flag out-of-bounds.
    """
    x, y = float(xy[0]), float(xy[1])
    *_, oob = field._locate(x, y)
    h = field.height_at(x, y)
    eps = field.resolution
    dhdx = (field.height_at(x + eps, y) - field.height_at(x - eps, y)) / (2.0 * eps)
    dhdy = (field.height_at(x, y + eps) - field.height_at(x, y - eps)) / (2.0 * eps)
    n = np.array([-dhdx, -dhdy, 1.0])
    n /= math.sqrt(float(n @ n))
    return h, n, oob


def ring_count(spec: TerrainSpec) -> int:
    """Number of ascending levels between the platform and the border top."""
    res = spec.cell_resolution
    platform_cells = round(0.5 * spec.platform_width / res)
    tile_cells = round(0.5 * spec.tile_size / res)
    step_cells = max(1, round(spec.step_width / res))
    annulus = tile_cells - platform_cells
    if annulus < step_cells:
        raise InvalidSpec("central platform plus one stair ring exceed the tile")
    return int(math.ceil(annulus / step_cells))


def generate_inverted_pyramid(spec: TerrainSpec) -> HeightField:
    """Concentric square stair rings rising from the center to the border."""
    res = spec.cell_resolution
    half_cells = round((0.5 * spec.tile_size + spec.border) / res)
    platform_cells = round(0.5 * spec.platform_width / res)
    tile_cells = round(0.5 * spec.tile_size / res)
    step_cells = max(1, round(spec.step_width / res))
    n_rings = ring_count(spec)

    idx = np.arange(-half_cells, half_cells + 1)
    cheb = np.maximum(np.abs(idx)[:, None], np.abs(idx)[None, :])
    level = np.ceil((cheb - platform_cells) / step_cells)
    level = np.clip(level, 0, n_rings)
    heights = level * step_height(spec.difficulty)

    half = half_cells * res
    return HeightField(
        heights=heights.astype(float),
        origin=np.array([-half, -half]),
        resolution=res,
    )


def add_micro_roughness(field: HeightField, amplitude: float, seed: int) -> HeightField:
    """Seeded band-limited bumps with max |delta h| <= amplitude."""
    if amplitude < 0.0:
        raise InvalidSpec("roughness amplitude must be >= 0")
    if amplitude == 0.0:
        return field
    rng = np.random.default_rng(seed)
    ny, nx = field.heights.shape
    stride = 4  # bump wavelength = 4 cells; keeps noise band-limited
    cy = (ny - 1) // stride + 2
    cx = (nx - 1) // stride + 2
    coarse = rng.standard_normal((cy, cx))
    yi = np.arange(ny) / stride
    xi = np.arange(nx) / stride
    y0 = np.floor(yi).astype(int)
    x0 = np.floor(xi).astype(int)
    ty = (yi - y0)[:, None]
    tx = (xi - x0)[None, :]
    noise = (
        coarse[np.ix_(y0, x0)] * (1 - ty) * (1 - tx)
        + coarse[np.ix_(y0, x0 + 1)] * (1 - ty) * tx
        + coarse[np.ix_(y0 + 1, x0)] * ty * (1 - tx)
        + coarse[np.ix_(y0 + 1, x0 + 1)] * ty * tx
    )
    peak = np.max(np.abs(noise))
    if peak > 0.0:
        noise = noise * (amplitude / peak)
    return HeightField(
        heights=field.heights + noise,
        origin=field.origin.copy(),
        resolution=field.resolution,
    )


@dataclass
class CurriculumState:
    """Episode-indexed widening of the goal-distance upper bound."""

    episode_index: int = 0
    min_dist: float = 0.5
    max_cap: float = 10.0

    def upper_bound(self) -> float:
        return self.max_cap * math.exp(-1.0 / (self.episode_index + 1))

    def advance(self):
        self.episode_index += 1


@dataclass
class SpawnSample:
    spawn_xy: np.ndarray
    yaw: float
    target_xy: np.ndarray
    distance: float


def sample_spawn_and_target(
    field: HeightField,
    spec: TerrainSpec,
    curriculum: CurriculumState,
    rng: np.random.Generator,
    spawn_margin: float = 0.3,
    edge_margin: float = 0.5,
) -> SpawnSample:
    """Spawn on the central platform; goal at a curriculum-bounded distance.

    The target is clipped into the tile interior, which preserves the
    minimum-distance bound because the platform sits far from the edges.
    """
    ph = 0.5 * spec.platform_width - spawn_margin
    if ph <= 0.0:
        raise SamplingFailed("central platform too small to spawn on")
    spawn = rng.uniform(-ph, ph, size=2)
    yaw = float(rng.uniform(-0.3, 0.3))
    hi = max(curriculum.upper_bound(), curriculum.min_dist)
    dist = float(rng.uniform(curriculum.min_dist, hi))
    angle = float(rng.uniform(-math.pi, math.pi))
    target = spawn + dist * np.array([math.cos(angle), math.sin(angle)])
    lim = 0.5 * spec.tile_size + spec.border - edge_margin
    target = np.clip(target, -lim, lim)
    actual = float(np.linalg.norm(target - spawn))
    if actual < curriculum.min_dist - 1e-9:
        raise SamplingFailed("degenerate spec: clipped target violates min distance")
    return SpawnSample(spawn_xy=spawn, yaw=yaw, target_xy=target, distance=actual)


def single_step_field(
    height: float,
    step_x: float = 0.0,
    extent: float = 6.0,
    resolution: float = 0.05,
) -> HeightField:
    """Flat floor rising by `height` at x >= step_x: the single-step /
    gap special case of the stair geometry (one riser, one cell wide)."""
    n = int(round(2.0 * extent / resolution)) + 1
    xs = -extent + resolution * np.arange(n)
    row = np.where(xs >= step_x, height, 0.0)
    return HeightField(
        heights=np.tile(row, (n, 1)),
        origin=np.array([-extent, -extent]),
        resolution=resolution,
    )


# ---------------------------------------------------------------------------
# portable grid file (text header + row-major heights)


def save_heightfield(field: HeightField, path, spec: TerrainSpec | None = None):
    with open(path, "w") as f:
        f.write("# hll-terrain v1\n")
        f.write(f"origin {float(field.origin[0])!r} {float(field.origin[1])!r}\n")
        f.write(f"resolution {float(field.resolution)!r}\n")
        ny, nx = field.heights.shape
        f.write(f"dims {ny} {nx}\n")
        if spec is not None:
            f.write(
                "spec"
                + "".join(
                    f" {k}={getattr(spec, k)!r}"
                    for k in (
                        "tile_size",
                        "border",
                        "step_width",
                        "platform_width",
                        "difficulty",
                        "friction",
                        "cell_resolution",
                        "roughness_amplitude",
                        "seed",
                    )
                )
                + "\n"
            )
        for row in field.heights:
            f.write(" ".join(repr(v) for v in row.tolist()) + "\n")


def load_heightfield(path) -> HeightField:
    origin = None
    resolution = None
    dims = None
    rows: list[list[float]] = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("spec"):
                continue
            if line.startswith("origin"):
                _, ox, oy = line.split()
                origin = np.array([float(ox), float(oy)])
            elif line.startswith("resolution"):
                resolution = float(line.split()[1])
            elif line.startswith("dims"):
                _, ny, nx = line.split()
                dims = (int(ny), int(nx))
            else:
                rows.append([float(v) for v in line.split()])
    if origin is None or resolution is None or dims is None:
        raise InvalidSpec(f"malformed terrain file {path}")
    heights = np.array(rows, dtype=float)
    if heights.shape != dims:
        raise InvalidSpec(f"terrain file {path}: dims {dims} but {heights.shape} rows")
    return HeightField(heights=heights, origin=origin, resolution=resolution)
