"""Spatial dataset container and its CSV form (header ``x,y,z``)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError
from .geometry import Rect, SiteSet


@dataclass(frozen=True)
class SpatialDataset:
    """Observations ``z`` at ``sites``; ``tau2`` is the nugget if known."""

    sites: SiteSet
    z: np.ndarray
    tau2: float | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if len(z) != len(self.sites):
            raise InvalidArgumentError(f"{len(z)} values for {len(self.sites)} sites")
        if not np.all(np.isfinite(z)):
            raise InvalidArgumentError("observations contain non-finite values")
        if self.tau2 is not None and not self.tau2 >= 0:
            raise InvalidArgumentError("tau2 must be nonnegative")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_arrays(cls, xy, z, tau2=None, domain: Rect | None = None) -> "SpatialDataset":
        return cls(SiteSet.from_points(xy, domain), z, tau2)

    @property
    def xy(self) -> np.ndarray:
        return self.sites.sites

    @property
    def domain(self) -> Rect:
        return self.sites.domain

    @property
    def n(self) -> int:
        return len(self.z)

    def subset(self, idx) -> "SpatialDataset":
        idx = np.asarray(idx)
        return SpatialDataset(SiteSet(self.xy[idx], self.domain), self.z[idx], self.tau2)

    def with_values(self, z) -> "SpatialDataset":
        return SpatialDataset(self.sites, z, self.tau2)


def read_csv(path, domain: Rect | None = None, tau2: float | None = None) -> SpatialDataset:
    """Read a dataset with header ``x,y,z`` (extra columns are ignored).

    Rows with missing or non-numeric values raise :class:`DataError` naming
    every offending line.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: line 1: {exc}") from None
        missing = [c for c in ("x", "y", "z") if c not in header]
        if missing:
            raise DataError(f"{path}: line 1: header lacks column(s) {', '.join(missing)}")
        cols = [header.index(c) for c in ("x", "y", "z")]
        rows, bad = [], []
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    vals = [float(row[c]) for c in cols]
                except (IndexError, ValueError):
                    bad.append(lineno)
                    continue
                if not all(math.isfinite(v) for v in vals):
                    bad.append(lineno)
                    continue
                rows.append(vals)
        except csv.Error as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from None
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise DataError(f"{path}: {len(bad)} row(s) with missing or malformed values at line(s) {shown}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    try:
        return SpatialDataset.from_arrays(arr[:, :2], arr[:, 2], tau2=tau2, domain=domain)
    except InvalidArgumentError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_csv(path, data: SpatialDataset, extra: dict | None = None) -> None:
    """Write ``x,y,z`` plus optional extra columns; floats use ``repr`` so they round-trip."""
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *extra])
        cols = [np.asarray(v) for v in extra.values()]
        for i, ((x, y), z) in enumerate(zip(data.xy, data.z)):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), *[c[i] for c in cols]])
