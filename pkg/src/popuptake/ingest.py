"""Harmonizes tile counts, class rasters and radiance rasters onto admin units.

The operations here are pure functions; the CLI wires them together. Counts
arriving from the imputation stage are plain numbers (no censoring left).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geo import Rect, overlap_area, overlap_fraction, polygon_area, polygon_bbox

log = logging.getLogger(__name__)

RURAL, PERI_URBAN, URBAN = 1, 2, 3
DUC_NAMES = {RURAL: "rural", PERI_URBAN: "peri-urban", URBAN: "urban"}

CENSOR_THRESHOLD = 10


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class GridTile:
    """One grid cell of the user-count grid."""

    tile_id: str
    bounds: Rect
    land_fraction: float
    inhabited_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.land_fraction <= 1.0:
            raise IngestError(f"tile {self.tile_id}: land_fraction outside [0,1]")
        if not 0.0 <= self.inhabited_fraction <= self.land_fraction:
            raise IngestError(
                f"tile {self.tile_id}: inhabited_fraction outside [0, land_fraction]"
            )


@dataclass(frozen=True)
class TileObservation:
    """A tile's count in one 8-hour window; count None means censored."""

    tile_id: str
    date: str  # ISO-8601 day
    window: int  # 0 = 00:00, 1 = 08:00, 2 = 16:00 UTC
    count: int | None

    def __post_init__(self):
        if self.window not in (0, 1, 2):
            raise IngestError(f"tile {self.tile_id}: window must be 0, 1 or 2")
        if self.count is not None and self.count < CENSOR_THRESHOLD:
            raise IngestError(
                f"tile {self.tile_id}: observed count {self.count} below the"
                f" censoring threshold {CENSOR_THRESHOLD}"
            )

    @property
    def censored(self) -> bool:
        return self.count is None


@dataclass
class AdminUnit:
    """One municipality. duc and radiance are filled by the ingest steps."""

    unit_id: str
    polygon: object  # see geo module for accepted forms
    census_pop: int
    working_age_prop: float
    duc: int | None = None
    radiance: float | None = None
    centroid: tuple[float, float] | None = None

    def __post_init__(self):
        if self.census_pop < 1:
            raise IngestError(f"unit {self.unit_id}: census population must be >= 1")
        if not 0.0 < self.working_age_prop < 1.0:
            raise IngestError(f"unit {self.unit_id}: working-age proportion outside (0,1)")
        if polygon_area(self.polygon) <= 0.0:
            raise IngestError(f"unit {self.unit_id}: polygon has zero area")
        if self.duc is not None and self.duc not in (RURAL, PERI_URBAN, URBAN):
            raise IngestError(f"unit {self.unit_id}: duc must be 1, 2 or 3")
        if self.centroid is None:
            xmin, ymin, xmax, ymax = polygon_bbox(self.polygon)
            self.centroid = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)


@dataclass(frozen=True)
class RasterGrid:
    """Regular lon/lat grid of values, rows stored north-to-south.

    origin is the lower-left corner; cellsize is in degrees.
    """

    origin: tuple[float, float]
    cellsize: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        if self.cellsize <= 0:
            raise IngestError("raster cellsize must be positive")
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise IngestError("raster values must be a non-empty 2-D array")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    def cell_rect(self, row: int, col: int) -> Rect:
        x0 = self.origin[0] + col * self.cellsize
        y0 = self.origin[1] + (self.nrows - 1 - row) * self.cellsize
        return Rect(x0, y0, x0 + self.cellsize, y0 + self.cellsize)

    def cells_in_bbox(self, xmin, ymin, xmax, ymax):
        """Yield (row, col) of cells whose rectangle may intersect the bbox."""
        c0 = int(np.floor((xmin - self.origin[0]) / self.cellsize))
        c1 = int(np.ceil((xmax - self.origin[0]) / self.cellsize))
        # rows count from the top edge of the grid
        top = self.origin[1] + self.nrows * self.cellsize
        r0 = int(np.floor((top - ymax) / self.cellsize))
        r1 = int(np.ceil((top - ymin) / self.cellsize))
        for r in range(max(r0, 0), min(r1, self.nrows)):
            for c in range(max(c0, 0), min(c1, self.ncols)):
                yield r, c


@dataclass
class ApportionResult:
    unit_counts: dict[str, float]
    orphan_counts: dict[str, float]

    @property
    def total_assigned(self) -> float:
        return float(sum(self.unit_counts.values()))

    @property
    def total_orphaned(self) -> float:
        return float(sum(self.orphan_counts.values()))


def apportion_tile_counts(
    tiles: Sequence[GridTile],
    counts: Mapping[str, float],
    units: Sequence[AdminUnit],
) -> ApportionResult:
    """Split tile counts across units proportionally to overlap area.

    The admin polygons are the land; a tile's full count is reapportioned to
    whatever share of it the units cover (coastal tiles lose nothing to the
    sea). Tiles covering no unit at all are reported as orphans.
    """
    tile_by_id = {t.tile_id: t for t in tiles}
    for tid in counts:
        if tid not in tile_by_id:
            raise IngestError(f"count references unknown tile {tid!r}")

    unit_totals: dict[str, float] = {u.unit_id: 0.0 for u in units}
    orphans: dict[str, float] = {}
    for tid, count in counts.items():
        tile = tile_by_id[tid]
        overlaps = []
        for unit in units:
            a = overlap_area(tile.bounds, unit.polygon)
            if a > 0.0:
                overlaps.append((unit.unit_id, a))
        total = sum(a for _, a in overlaps)
        if total <= 0.0:
            orphans[tid] = float(count)
            continue
        for uid, a in overlaps:
            unit_totals[uid] += count * (a / total)
    if orphans:
        log.warning(
            "%d orphan tiles (no unit overlap) holding %.1f users excluded",
            len(orphans),
            sum(orphans.values()),
        )
    return ApportionResult(unit_counts=unit_totals, orphan_counts=orphans)


def assign_duc(unit: AdminUnit, duc_raster: RasterGrid, pop_raster: RasterGrid) -> int:
    """Assign the urbanisation class contributing the most inhabitants.

    Each cell's population is shared with the unit proportionally to the
    overlap area (inhabitants assumed uniform within cells); the class with
    the largest accumulated population wins, ties going to the lowest code.
    """
    if (
        duc_raster.origin != pop_raster.origin
        or duc_raster.cellsize != pop_raster.cellsize
        or duc_raster.values.shape != pop_raster.values.shape
    ):
        raise IngestError("duc and population rasters are not aligned")
    weights = np.zeros(4)  # index = class code 1..3
    bbox = polygon_bbox(unit.polygon)
    for r, c in duc_raster.cells_in_bbox(*bbox):
        cls = duc_raster.values[r, c]
        pop = pop_raster.values[r, c]
        if cls == duc_raster.nodata or pop == pop_raster.nodata or pop <= 0:
            continue
        cls = int(cls)
        if cls not in (RURAL, PERI_URBAN, URBAN):
            continue
        frac = overlap_fraction(duc_raster.cell_rect(r, c), unit.polygon)
        if frac > 0.0:
            weights[cls] += pop * frac
    if weights.sum() <= 0.0:
        raise IngestError(f"unit {unit.unit_id}: no DUC evidence")
    return int(np.argmax(weights[1:]) + 1)  # argmax takes the first (lowest) on ties


def zonal_mean_radiance(unit: AdminUnit, radiance_raster: RasterGrid) -> float:
    """Unweighted mean over cells intersecting the unit polygon.

    Intersection is a yes/no test; a cell clipped at 1% counts the same as a
    fully covered one.
    """
    values = []
    bbox = polygon_bbox(unit.polygon)
    for r, c in radiance_raster.cells_in_bbox(*bbox):
        v = radiance_raster.values[r, c]
        if v == radiance_raster.nodata:
            continue
        if overlap_area(radiance_raster.cell_rect(r, c), unit.polygon) > 0.0:
            values.append(float(v))
    if not values:
        raise IngestError(f"unit {unit.unit_id}: no radiance coverage")
    return float(np.mean(values))


def apply_radiance_floor(values: np.ndarray) -> np.ndarray:
    """Replace non-positive radiances with half the smallest positive value."""
    values = np.asarray(values, dtype=float).copy()
    bad = values <= 0.0
    if bad.any():
        positive = values[~bad]
        if positive.size == 0:
            raise IngestError("all radiance values non-positive; cannot floor")
        floor = 0.5 * positive.min()
        log.warning("flooring %d non-positive radiance values to %g", bad.sum(), floor)
        values[bad] = floor
    return values


@dataclass
class UptakeDataset:
    """Model-ready table: one row per unit, covariates z-scored on train."""

    unit_ids: list[str]
    duc: np.ndarray
    n: np.ndarray
    fb: np.ndarray
    w: np.ndarray
    logl: np.ndarray
    x: np.ndarray
    y: np.ndarray
    is_train: np.ndarray
    constants: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.unit_ids)
        for name in ("duc", "n", "fb", "w", "logl", "x", "y", "is_train"):
            arr = getattr(self, name)
            if len(arr) != m:
                raise IngestError(f"dataset column {name} has length {len(arr)} != {m}")
        if np.any(self.fb > self.n) or np.any(self.fb < 0):
            raise IngestError("fb counts must lie in [0, n]")
        if np.any((self.duc < RURAL) | (self.duc > URBAN)):
            raise IngestError("duc codes must be 1, 2 or 3")

    def __len__(self) -> int:
        return len(self.unit_ids)

    def subset(self, mask: np.ndarray) -> "UptakeDataset":
        idx = np.flatnonzero(mask)
        return UptakeDataset(
            unit_ids=[self.unit_ids[i] for i in idx],
            duc=self.duc[idx],
            n=self.n[idx],
            fb=self.fb[idx],
            w=self.w[idx],
            logl=self.logl[idx],
            x=self.x[idx],
            y=self.y[idx],
            is_train=self.is_train[idx],
            constants=self.constants,
        )

    def train(self) -> "UptakeDataset":
        return self.subset(self.is_train)

    def test(self) -> "UptakeDataset":
        return self.subset(~self.is_train)

    @property
    def rate(self) -> np.ndarray:
        return self.fb / self.n


def stratified_split(duc: np.ndarray, order_keys: Sequence, seed: int, train_fraction: float = 0.8) -> np.ndarray:
    """Boolean train mask with round(frac * n) train units per DUC stratum."""
    duc = np.asarray(duc)
    is_train = np.zeros(len(duc), dtype=bool)
    rng = np.random.default_rng(seed)
    for u in sorted(set(duc.tolist())):
        pos = np.flatnonzero(duc == u)
        pos = pos[np.argsort([order_keys[i] for i in pos])]  # stable vs input order
        rng.shuffle(pos)
        n_train = int(round(train_fraction * len(pos)))
        is_train[pos[:n_train]] = True
    return is_train


def build_dataset(
    units: Sequence[AdminUnit],
    user_counts: Mapping[str, float],
    split_seed: int,
    train_fraction: float = 0.8,
) -> UptakeDataset:
    """Assemble the model-ready dataset from harmonized units and counts.

    Apportioned counts are rounded half-to-even (the binomial likelihood
    needs integers) and clamped at the census population; covariates are
    z-scored with train-set constants only (population SD).
    """
    unit_ids = [u.unit_id for u in units]
    for u in units:
        if u.duc is None or u.radiance is None:
            raise IngestError(f"unit {u.unit_id}: duc/radiance not assigned yet")
        if u.unit_id not in user_counts:
            raise IngestError(f"unit {u.unit_id}: no user count")

    n = np.array([u.census_pop for u in units], dtype=np.int64)
    duc = np.array([u.duc for u in units], dtype=np.int64)
    fb = np.rint([user_counts[u.unit_id] for u in units]).astype(np.int64)
    fb = np.maximum(fb, 0)
    over = fb > n
    if over.any():
        for i in np.flatnonzero(over):
            log.warning(
                "unit %s: apportioned count %d exceeds population %d; clamped",
                unit_ids[i], fb[i], n[i],
            )
        fb = np.minimum(fb, n)

    radiance = apply_radiance_floor(np.array([u.radiance for u in units], dtype=float))
    raw = {
        "w": np.array([u.working_age_prop for u in units], dtype=float),
        "logl": np.log(radiance),
        "lon": np.array([u.centroid[0] for u in units], dtype=float),
        "lat": np.array([u.centroid[1] for u in units], dtype=float),
    }

    is_train = stratified_split(duc, unit_ids, split_seed, train_fraction)

    constants = {}
    std = {}
    for name, col in raw.items():
        mean = float(np.mean(col[is_train]))
        sd = float(np.std(col[is_train]))  # population SD
        if sd <= 0.0:
            raise IngestError(f"covariate {name} is constant on the train split")
        constants[name] = {"mean": mean, "sd": sd}
        std[name] = (col - mean) / sd

    return UptakeDataset(
        unit_ids=unit_ids,
        duc=duc,
        n=n,
        fb=fb,
        w=std["w"],
        logl=std["logl"],
        x=std["lon"],
        y=std["lat"],
        is_train=is_train,
        constants=constants,
    )
