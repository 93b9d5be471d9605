"""Colorado precipitation data: fetch, preprocess, cache, and the analysis workflow.

The processed dataset holds one row per station with complete monthly
records in 1992: longitude, latitude and the log of the annual total.  It
is cached as CSV next to a SHA-256 file; later loads verify the checksum.

The raw source is a long table with columns ``station, lon, lat, year,
month, ppt`` (missing values empty, ``NA`` or negative).  It can be
downloaded from ``url`` or read from a local file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SpatialDataset, read_csv
from .errors import DataError, FetchError, IntegrityError

log = logging.getLogger(__name__)

SOURCE_URL = "http://www.image.ucar.edu/GSP/Data/US.monthly.met/CO.html"
CACHE_NAME = "colorado_1992.csv"
YEAR = 1992
EXPECTED_STATIONS = 254
# stations east of this longitude lie on the Eastern Plains
PLAINS_LON = -104.5


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def parse_monthly_table(text: str) -> list[tuple[str, float, float, float]]:
    """Stations with all twelve months of ``YEAR`` present: (id, lon, lat, total)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise DataError("raw table is empty") from None
    need = ("station", "lon", "lat", "year", "month", "ppt")
    missing = [c for c in need if c not in header]
    if missing:
        raise DataError(f"raw table lacks column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in need}
    months: dict[str, dict[int, float]] = {}
    where: dict[str, tuple[float, float]] = {}
    bad = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            if int(row[col["year"]]) != YEAR:
                continue
            st = row[col["station"]].strip()
            lon, lat = float(row[col["lon"]]), float(row[col["lat"]])
            month = int(row[col["month"]])
        except (ValueError, IndexError):
            bad.append(lineno)
            continue
        raw = row[col["ppt"]].strip()
        where[st] = (lon, lat)
        months.setdefault(st, {})
        try:
            v = float(raw)
        except ValueError:
            continue  # missing
        if math.isfinite(v) and v >= 0 and 1 <= month <= 12:
            months[st][month] = v
    if bad:
        raise DataError(f"malformed raw rows at line(s) {', '.join(map(str, bad[:20]))}")
    out = []
    for st in sorted(months):
        if len(months[st]) == 12:
            lon, lat = where[st]
            out.append((st, lon, lat, sum(months[st].values())))
    return out


def write_processed(path: Path, stations) -> str:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "station"])
        for st, lon, lat, total in stations:
            if total <= 0:
                continue
            w.writerow([repr(float(lon)), repr(float(lat)), repr(math.log(total)), st])
    digest = _sha256(path)
    path.with_suffix(".sha256").write_text(digest + "\n", encoding="utf-8")
    return digest


def load_cached(cache_dir) -> SpatialDataset:
    path = Path(cache_dir) / CACHE_NAME
    sums = path.with_suffix(".sha256")
    if not path.exists():
        raise FetchError(f"no cached dataset at {path}")
    if not sums.exists():
        raise IntegrityError(f"missing checksum file {sums}")
    want = sums.read_text(encoding="utf-8").split()[0]
    got = _sha256(path)
    if got != want:
        raise IntegrityError(f"checksum mismatch for {path}: expected {want}, got {got}")
    data = read_csv(path)
    if data.n != EXPECTED_STATIONS:
        log.warning("cached dataset has %d stations, expected %d", data.n, EXPECTED_STATIONS)
    return data


def fetch_colorado(cache_dir, *, url: str = SOURCE_URL, raw_file=None, offline: bool = False, timeout: float = 30.0) -> SpatialDataset:
    """Processed 1992 dataset, from the cache if present, else built from the raw table.

    ``raw_file`` takes precedence over ``url``.  ``offline`` forbids network
    access; without a cache that raises :class:`FetchError`.
    """
    cache = Path(cache_dir)
    if (cache / CACHE_NAME).exists():
        return load_cached(cache)
    if raw_file is not None:
        try:
            text = Path(raw_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise FetchError(f"cannot read raw table {raw_file}: {exc}") from None
    elif offline:
        raise FetchError(f"offline and no cached dataset in {cache}")
    else:
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                text = resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise FetchError(
                f"cannot download {url}: {exc}; supply the raw table with raw_file or pre-populate {cache / CACHE_NAME}"
            ) from None
    stations = parse_monthly_table(text)
    if not stations:
        raise DataError(f"no station has complete {YEAR} records")
    cache.mkdir(parents=True, exist_ok=True)
    digest = write_processed(cache / CACHE_NAME, stations)
    log.info("cached %d stations (sha256 %s)", len(stations), digest)
    return load_cached(cache)


# ------------------------------------------------------------------ workflow


@dataclass
class SplitScore:
    K: int
    rmspe: float
    crps: float


def plains_subregion(labels, xy) -> bool:
    """Whether some subregion consists of Eastern-Plains stations.

    True when one subregion has at least 80% of its stations east of
    ``PLAINS_LON`` and holds at least half of all such stations.
    """
    east = xy[:, 0] > PLAINS_LON
    if not east.any():
        return False
    for k in np.unique(labels):
        sel = labels == k
        if east[sel].mean() >= 0.8 and east[sel].sum() >= 0.5 * east.sum():
            return True
    return False


def bic_table(data: SpatialDataset, K_max: int = 4, m_target: int = 250):
    from .indices import estimate_nugget, index_constants, local_indices
    from .segmentation import select_K_by_bic

    tau2 = estimate_nugget(data, m_target)
    xi = local_indices(data, consts=index_constants(tau2))
    return select_K_by_bic(xi, K_max), xi, tau2


def prediction_study(data: SpatialDataset, splits: int = 20, K_max: int = 4, n_test: int = 50, seed: int = 0,
                     m_target: int = 250) -> list[SplitScore]:
    """Random train/test splits; segment the training data and krige each test point in its subregion."""
    from .indices import estimate_nugget, index_constants, local_indices
    from .kriging import piecewise_krige, score_predictions
    from .segmentation import greedy_seed_search

    rng = np.random.default_rng(seed)
    out = []
    for s in range(splits):
        perm = rng.permutation(data.n)
        test, train = perm[:n_test], np.sort(perm[n_test:])
        tr = data.subset(train)
        tau2 = estimate_nugget(tr, m_target)
        xi = local_indices(tr, consts=index_constants(tau2))
        for K in range(1, K_max + 1):
            seeds = np.atleast_2d(tr.xy.mean(axis=0)) if K == 1 else greedy_seed_search(xi, K).seeds.coords
            pk = piecewise_krige(tr, seeds, tau2=tau2)
            pred = pk.predict(data.xy[test])
            sc = score_predictions(pred, data.z[test], pk.nugget(data.xy[test]))
            out.append(SplitScore(K, sc["rmspe"], sc["crps"]))
        log.info("split %d done", s)
    return out
