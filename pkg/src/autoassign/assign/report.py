"""Detached weight-map snapshots and their CSV interchange format."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import LocationSet
from .loss import LossBreakdown, ObjectState

POSITIVE_COLUMNS = ("object_id", "category", "level", "row", "col", "location",
                    "G", "C", "P_pos", "w_pos")
NEGATIVE_COLUMNS = ("location", "level", "row", "col", "w_neg", "max_iou")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class WeightReport:
    objects: list          # [ObjectState]
    neg_weight: np.ndarray  # (L,)
    max_iou: np.ndarray     # (L,)
    locations: LocationSet

    def positive_rows(self):
        for ob in self.objects:
            for j, loc in enumerate(ob.indices):
                lvl, r, c = self.locations.grid_position(int(loc))
                yield (ob.object_id, ob.category, lvl, r, c, int(loc),
                       ob.G[j], ob.C[j], ob.P_pos[j], ob.w_pos[j])

    def negative_rows(self):
        for loc in range(len(self.locations)):
            lvl, r, c = self.locations.grid_position(loc)
            yield (loc, lvl, r, c, self.neg_weight[loc], self.max_iou[loc])

    def write_csv(self, directory) -> tuple:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pos_path, neg_path = directory / "positive_weights.csv", directory / "negative_weights.csv"
        _write(pos_path, POSITIVE_COLUMNS, self.positive_rows(), n_int=6)
        _write(neg_path, NEGATIVE_COLUMNS, self.negative_rows(), n_int=4)
        return pos_path, neg_path

    def write_level_csvs(self, directory) -> list:
        """One positive file per (object, level) and one negative file per level.

        An object without in-box locations on a level still gets its (header
        only) file, so the file count is always objects x levels + levels.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n_levels = len(self.locations.specs)
        rows = list(self.positive_rows())
        paths = []
        for ob in self.objects:
            for lvl in range(n_levels):
                path = directory / f"positive_obj{ob.object_id}_level{lvl}.csv"
                _write(path, POSITIVE_COLUMNS,
                       (r for r in rows if r[0] == ob.object_id and r[2] == lvl), n_int=6)
                paths.append(path)
        neg = list(self.negative_rows())
        for lvl in range(n_levels):
            path = directory / f"negative_level{lvl}.csv"
            _write(path, NEGATIVE_COLUMNS, (r for r in neg if r[1] == lvl), n_int=4)
            paths.append(path)
        return paths

    @classmethod
    def read_csv(cls, directory, locations: LocationSet) -> "WeightReport":
        directory = Path(directory)
        by_obj: dict = {}
        with open(directory / "positive_weights.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                key = int(row["object_id"])
                by_obj.setdefault(key, {"category": int(row["category"]), "rows": []})
                by_obj[key]["rows"].append(row)
        objects = []
        for obj_id, entry in by_obj.items():
            rows = entry["rows"]
            col = lambda name: np.array([float(r[name]) for r in rows])
            objects.append(ObjectState(obj_id, entry["category"],
                                       np.array([int(r["location"]) for r in rows]),
                                       col("w_pos"), col("G"), col("C"), col("P_pos")))
        n = len(locations)
        neg, iou = np.ones(n), np.zeros(n)
        with open(directory / "negative_weights.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                neg[int(row["location"])] = float(row["w_neg"])
                iou[int(row["location"])] = float(row["max_iou"])
        return cls(objects, neg, iou, locations)


def _write(path: Path, header, rows, n_int: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([str(int(v)) for v in r[:n_int]] + [fmt(v) for v in r[n_int:]])


def export_weight_report(breakdown: LossBreakdown, locations: LocationSet) -> WeightReport:
    """Snapshot of G, C, P+, w+ per object and the global w- map after a loss evaluation."""
    return WeightReport(list(breakdown.objects), breakdown.neg_weight.copy(),
                        breakdown.max_iou.copy(), locations)
