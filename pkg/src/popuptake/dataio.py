"""File formats for the pipeline: small CSVs, JSON sidecars, text rasters.

Every reader validates its schema and reports failures with the offending
line number. Floats are written with repr so outputs round-trip exactly and
runs are byte-reproducible.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path

import numpy as np

from .geo import Rect
from .imputation import TileHistory
from .inference.nuts import PosteriorDraws
from .ingest import AdminUnit, GridTile, RasterGrid, TileObservation, UptakeDataset


class DataError(ValueError):
    """Schema violation in an input file; carries the line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(path, 1, "empty file") from None
        if header != expected_header:
            raise DataError(path, 1, f"expected header {expected_header}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise DataError(path, lineno, f"expected {len(expected_header)} fields")
            yield lineno, row


def _parse(path, lineno, raw, kind, field):
    try:
        return kind(raw)
    except ValueError:
        raise DataError(path, lineno, f"bad {field} value {raw!r}") from None


# ---------------------------------------------------------------- tiles

TILE_HEADER = [
    "tile_id", "min_lon", "min_lat", "max_lon", "max_lat",
    "land_fraction", "inhabited_fraction",
]


def write_tiles(path, tiles: list[GridTile]):
    write_csv(path, TILE_HEADER, [
        (t.tile_id, t.bounds.min_x, t.bounds.min_y, t.bounds.max_x, t.bounds.max_y,
         t.land_fraction, t.inhabited_fraction)
        for t in tiles
    ])


def read_tiles(path) -> list[GridTile]:
    tiles = []
    for lineno, row in _read_csv(path, TILE_HEADER):
        vals = [_parse(path, lineno, row[i], float, TILE_HEADER[i]) for i in range(1, 5)]
        land = _parse(path, lineno, row[5], float, "land_fraction")
        inhabited = land if row[6] == "" else _parse(path, lineno, row[6], float, "inhabited_fraction")
        try:
            tiles.append(GridTile(row[0], Rect(*vals), land, inhabited))
        except ValueError as err:
            raise DataError(path, lineno, str(err)) from None
    return tiles


# ---------------------------------------------------------- observations

OBS_HEADER = ["tile_id", "date", "window", "count"]


def write_observations(path, observations):
    """observations: iterable of (tile_id, date, window, count-or-None)."""
    write_csv(path, OBS_HEADER, [
        (tid, date, window, "" if count is None else count)
        for tid, date, window, count in observations
    ])


def read_observations(path) -> list[TileObservation]:
    out = []
    for lineno, row in _read_csv(path, OBS_HEADER):
        try:
            dt.date.fromisoformat(row[1])
        except ValueError:
            raise DataError(path, lineno, f"bad ISO date {row[1]!r}") from None
        window = _parse(path, lineno, row[2], int, "window")
        count = None if row[3] == "" else _parse(path, lineno, row[3], int, "count")
        try:
            out.append(TileObservation(row[0], row[1], window, count))
        except ValueError as err:
            raise DataError(path, lineno, str(err)) from None
    return out


def histories_from_observations(
    observations: list[TileObservation],
    window: int = 0,
    weekdays_only: bool = True,
) -> dict[str, TileHistory]:
    """Collect per-tile weekday histories for one daily window."""
    counts: dict[str, list] = {}
    for obs in observations:
        if obs.window != window:
            continue
        if weekdays_only and dt.date.fromisoformat(obs.date).weekday() >= 5:
            continue
        counts.setdefault(obs.tile_id, []).append((obs.date, obs.count))
    return {
        tid: TileHistory(tid, tuple(c for _, c in sorted(entries)))
        for tid, entries in counts.items()
    }


# ----------------------------------------------------------------- units

UNIT_HEADER = ["unit_id", "pop", "working_age_prop"]


def write_unit_attributes(path, units: list[dict]):
    write_csv(path, UNIT_HEADER, [
        (u["unit_id"], u["pop"], u["working_age_prop"]) for u in units
    ])


def read_unit_attributes(path) -> list[dict]:
    out = []
    for lineno, row in _read_csv(path, UNIT_HEADER):
        out.append({
            "unit_id": row[0],
            "pop": _parse(path, lineno, row[1], int, "pop"),
            "working_age_prop": _parse(path, lineno, row[2], float, "working_age_prop"),
        })
    return out


def write_unit_polygons(path, polygons: dict[str, np.ndarray]):
    features = []
    for uid, ring in polygons.items():
        ring = np.asarray(ring, dtype=float)
        coords = [[float(x), float(y)] for x, y in ring]
        coords.append(coords[0])
        features.append({
            "type": "Feature",
            "properties": {"unit_id": uid},
            "geometry": {"type": "Polygon", "coordinates": [coords]},
        })
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)
        fh.write("\n")


def read_unit_polygons(path) -> dict[str, object]:
    with open(path) as fh:
        doc = json.load(fh)
    polygons = {}
    for feature in doc.get("features", []):
        uid = feature["properties"]["unit_id"]
        geom = feature["geometry"]
        if geom["type"] == "Polygon":
            rings = [np.asarray(r, dtype=float)[:-1] for r in geom["coordinates"]]
            polygons[uid] = rings if len(rings) > 1 else rings[0]
        elif geom["type"] == "MultiPolygon":
            polygons[uid] = [
                [np.asarray(r, dtype=float)[:-1] for r in poly]
                for poly in geom["coordinates"]
            ]
        else:
            raise DataError(path, 1, f"unsupported geometry type {geom['type']}")
    return polygons


def build_admin_units(attributes: list[dict], polygons: dict) -> list[AdminUnit]:
    units = []
    for attr in attributes:
        uid = attr["unit_id"]
        if uid not in polygons:
            raise DataError("units", 0, f"no polygon for unit {uid}")
        units.append(AdminUnit(
            unit_id=uid,
            polygon=polygons[uid],
            census_pop=attr["pop"],
            working_age_prop=attr["working_age_prop"],
        ))
    return units


# --------------------------------------------------------------- rasters

def write_raster(path, raster: RasterGrid):
    with open(path, "w") as fh:
        fh.write(f"ncols {raster.ncols}\n")
        fh.write(f"nrows {raster.nrows}\n")
        fh.write(f"xllcorner {_fmt(raster.origin[0])}\n")
        fh.write(f"yllcorner {_fmt(raster.origin[1])}\n")
        fh.write(f"cellsize {_fmt(raster.cellsize)}\n")
        fh.write(f"nodata_value {_fmt(raster.nodata)}\n")
        for row in raster.values:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_raster(path) -> RasterGrid:
    keys = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"]
    header = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    for i, key in enumerate(keys):
        if i >= len(lines):
            raise DataError(path, i + 1, f"missing header line {key}")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0] != key:
            raise DataError(path, i + 1, f"expected '{key} <value>'")
        header[key] = _parse(path, i + 1, parts[1], float, key)
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    values = np.empty((nrows, ncols))
    for r in range(nrows):
        lineno = len(keys) + r + 1
        if len(keys) + r >= len(lines):
            raise DataError(path, lineno, "missing data row")
        parts = lines[len(keys) + r].split()
        if len(parts) != ncols:
            raise DataError(path, lineno, f"expected {ncols} values, got {len(parts)}")
        values[r] = [_parse(path, lineno, p, float, "cell") for p in parts]
    return RasterGrid(
        origin=(header["xllcorner"], header["yllcorner"]),
        cellsize=header["cellsize"],
        values=values,
        nodata=header["nodata_value"],
    )


# ---------------------------------------------------------------- dataset

DATASET_HEADER = ["unit_id", "duc", "n", "fb", "w_std", "logl_std", "lon_std", "lat_std", "split"]


def write_dataset(path, data: UptakeDataset, constants_path=None):
    rows = [
        (
            data.unit_ids[i], data.duc[i], data.n[i], data.fb[i],
            data.w[i], data.logl[i], data.x[i], data.y[i],
            "train" if data.is_train[i] else "test",
        )
        for i in range(len(data))
    ]
    write_csv(path, DATASET_HEADER, rows)
    if constants_path is not None:
        with open(constants_path, "w") as fh:
            json.dump(data.constants, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_dataset(path, constants_path=None) -> UptakeDataset:
    ids, duc, n, fb, w, logl, x, y, train = [], [], [], [], [], [], [], [], []
    for lineno, row in _read_csv(path, DATASET_HEADER):
        ids.append(row[0])
        duc.append(_parse(path, lineno, row[1], int, "duc"))
        n.append(_parse(path, lineno, row[2], int, "n"))
        fb.append(_parse(path, lineno, row[3], int, "fb"))
        w.append(_parse(path, lineno, row[4], float, "w_std"))
        logl.append(_parse(path, lineno, row[5], float, "logl_std"))
        x.append(_parse(path, lineno, row[6], float, "lon_std"))
        y.append(_parse(path, lineno, row[7], float, "lat_std"))
        if row[8] not in ("train", "test"):
            raise DataError(path, lineno, f"split must be train or test, got {row[8]!r}")
        train.append(row[8] == "train")
    constants = {}
    if constants_path is not None and Path(constants_path).exists():
        with open(constants_path) as fh:
            constants = json.load(fh)
    try:
        return UptakeDataset(
            unit_ids=ids,
            duc=np.array(duc), n=np.array(n), fb=np.array(fb),
            w=np.array(w), logl=np.array(logl), x=np.array(x), y=np.array(y),
            is_train=np.array(train), constants=constants,
        )
    except ValueError as err:
        raise DataError(path, 0, str(err)) from None


# ----------------------------------------------------------- imputations

IMPUTED_HEADER = ["tile_id", "reference_timestamp", "imputed_count", "provenance"]


def write_imputed(path, reference_timestamp, imputed):
    rows = [
        (tid, reference_timestamp, imputed.values[tid], imputed.provenance[tid])
        for tid in sorted(imputed.values)
    ]
    write_csv(path, IMPUTED_HEADER, rows)


def read_imputed(path) -> dict[str, float]:
    out = {}
    for lineno, row in _read_csv(path, IMPUTED_HEADER):
        out[row[0]] = _parse(path, lineno, row[2], float, "imputed_count")
    return out


# ----------------------------------------------------------------- draws

def write_draws(path, draws: PosteriorDraws):
    header = ["chain", "iteration"] + list(draws.parameter_names)
    rows = []
    for c in range(draws.n_chains):
        for i in range(draws.n_iterations):
            rows.append((c, i, *draws.draws[c, i]))
    write_csv(path, header, rows)


def read_draws(path) -> PosteriorDraws:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["chain", "iteration"]:
            raise DataError(path, 1, "draws file must start with chain,iteration")
        names = header[2:]
        rows = list(reader)
    chains = sorted({int(r[0]) for r in rows})
    iters = sorted({int(r[1]) for r in rows})
    draws = np.empty((len(chains), len(iters), len(names)))
    for r in rows:
        draws[int(r[0]), int(r[1])] = [float(v) for v in r[2:]]
    divergences = np.zeros((len(chains), len(iters)), dtype=bool)
    return PosteriorDraws(draws=draws, parameter_names=names, divergences=divergences)


# ------------------------------------------------------------ json + misc

def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics(path, rows: list[dict]):
    write_csv(path, ["duc", "metric", "model", "value", "value_pct"], [
        (r["duc"], r["metric"], r["model"], r["value"], r["value_pct"]) for r in rows
    ])


def write_loo(path, unit_ids, loo_result):
    write_csv(path, ["unit_id", "elpd_i", "pareto_k"], [
        (uid, loo_result.unit_elpd[i], loo_result.pareto_k[i])
        for i, uid in enumerate(unit_ids)
    ])


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
