"""Command-line interface: ``nonstat <subcommand> ...``.

Options may also come from a JSON config (``--config``, ``"schema": 1``).
Top-level keys apply to every subcommand and a section named after the
subcommand overrides them; flags given on the command line win over both.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, FetchError, IntegrityError, InvalidArgumentError, NonstatError

log = logging.getLogger("nonstat")

CONFIG_SCHEMA = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ------------------------------------------------------------------ helpers


def _tau2_arg(text: str):
    if text is None or str(text).lower() == "estimate":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau2 must be a number or 'estimate', got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError("tau2 must be nonnegative")
    return v


def _domain(args):
    from .geometry import Rect

    if getattr(args, "domain", None) is None:
        return None
    return Rect(*map(float, args.domain))


def _load(args, path=None):
    from .data import read_csv

    return read_csv(path or args.input, domain=_domain(args))


def _json_out(path, payload) -> None:
    from .report import write_json

    write_json(path, payload)


def _load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise InvalidArgumentError("config must be a JSON object")
    if cfg.get("schema") != CONFIG_SCHEMA:
        raise InvalidArgumentError(f"config schema must be {CONFIG_SCHEMA}, got {cfg.get('schema')!r}")
    return cfg


# ------------------------------------------------------------------ subcommands


def cmd_simulate(args) -> int:
    from .data import write_csv
    from .simulate import Scenario

    base = {}
    if args.scenario:
        base = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    for key in ("covariance", "n", "design", "tau2", "sigma2", "nu", "alpha", "lam", "alpha1", "alpha2", "a"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    if args.domain is not None:
        base["domain"] = list(map(float, args.domain))
    base["seed"] = args.seed
    sc = Scenario.from_dict(base)
    data = sc.simulate()
    truth = sc.true_labels(data.sites)
    write_csv(args.output, data, {"region": truth} if truth is not None else None)
    if args.scenario_out:
        _json_out(args.scenario_out, {"schema": CONFIG_SCHEMA, **sc.to_dict()})
    log.info("wrote %d sites to %s", data.n, args.output)
    return EXIT_OK


def _field(args, data):
    from .geometry import build_neighbor_graph, recommended_radius
    from .indices import estimate_nugget, index_constants, local_indices

    tau2 = args.tau2 if args.tau2 is not None else estimate_nugget(data, args.m_target)
    r = args.radius if args.radius is not None else recommended_radius(data.domain.area, data.n)
    graph = build_neighbor_graph(data.sites, r)
    return local_indices(data, graph, index_constants(tau2), literal_eq7=args.literal_eq7), tau2


def cmd_indices(args) -> int:
    from .report import write_indices_csv

    data = _load(args)
    field, tau2 = _field(args, data)
    write_indices_csv(args.output, field)
    log.info("tau2=%.6g, %d active sites", tau2, field.n_active)
    return EXIT_OK


def cmd_visualize(args) -> int:
    from .fusedlasso import default_rho_grid, lambda_path
    from .geometry import voronoi_tessellate
    from .report import cells_svg, write_fusion_csv

    data = _load(args)
    field, _ = _field(args, data)
    vor = voronoi_tessellate(field.sites, data.domain)
    grid = np.asarray(args.rho, dtype=float) if args.rho else default_rho_grid(field.xi, vor.edges, args.grid)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for i, sol in enumerate(lambda_path(field.xi, vor.edges, grid)):
        stem = out / f"fusion_{i:02d}"
        write_fusion_csv(stem.with_suffix(".csv"), field.active, sol)
        stem.with_suffix(".svg").write_text(
            cells_svg(vor.cells, sol.beta, data.domain, title=f"rho={sol.rho:.4g}"), encoding="utf-8"
        )
        summary.append({"rho": sol.rho, "components": sol.n_components, "csv": stem.with_suffix(".csv").name,
                        "svg": stem.with_suffix(".svg").name})
    (out / "indices.svg").write_text(cells_svg(vor.cells, field.xi, data.domain, title="local index"), encoding="utf-8")
    _json_out(out / "cells.json", {"domain": data.domain.to_list(), "sites": field.active,
                                    "cells": [np.vstack([c, c[:1]]).tolist() for c in vor.cells]})
    _json_out(out / "path.json", summary)
    return EXIT_OK


def _run_test(args, data):
    from .statest import stationarity_test

    # one start at range = domain diameter, exponential smoothness
    fit_kwargs = {"starts": [(data.domain.diameter, 0.5)]} if args.quick_fit else None
    return stationarity_test(data, M=args.M, seed=args.seed, tau2=args.tau2, level=args.level,
                             m_target=args.m_target, n_jobs=args.n_jobs, fit_kwargs=fit_kwargs)


def cmd_test(args) -> int:
    rep = _run_test(args, _load(args))
    _json_out(args.output, rep.to_dict())
    log.info("T=%.4g p=%.4g (%s)", rep.T, rep.p_value, rep.decision)
    return EXIT_OK


def segment_payload(bic, xi) -> dict:
    return {
        "K_star": bic.K_star,
        "bic": {str(k): v for k, v in bic.bic.items()},
        "objective": {str(k): v for k, v in bic.objective.items()},
        "seeds": {str(k): r.seeds.coords.tolist() for k, r in bic.results.items()},
        "seed_sites": {str(k): [int(xi.active[s]) for s in r.seeds.indices] for k, r in bic.results.items()},
        "traces": {str(k): list(map(float, r.trace)) for k, r in bic.results.items()},
    }


def cmd_segment(args) -> int:
    from .indices import estimate_nugget, index_constants, local_indices
    from .report import write_partition_csv
    from .segmentation import select_K_by_bic

    data = _load(args)
    payload = {}
    if args.test_first:
        rep = _run_test(args, data)
        payload["test"] = rep.to_dict()
        if not rep.reject:
            payload["K_star"] = 1
            payload["decision"] = "stationary model retained"
            _json_out(args.output, payload)
            return EXIT_OK
    tau2 = args.tau2 if args.tau2 is not None else estimate_nugget(data, args.m_target)
    xi = local_indices(data, consts=index_constants(tau2))
    bic = select_K_by_bic(xi, args.kmax)
    payload.update(segment_payload(bic, xi))
    payload["tau2"] = tau2
    if args.partition:
        write_partition_csv(args.partition, xi.active, xi.sites, bic.results[bic.K_star].stats.labels)
    _json_out(args.output, payload)
    log.info("BIC selects K=%d", bic.K_star)
    return EXIT_OK


def _prediction_points(args):
    from .data import read_csv

    if args.predict:
        path = Path(args.predict)
        try:
            head = path.open(encoding="utf-8").readline().strip().lower().split(",")
        except OSError as exc:
            raise DataError(f"cannot open {path}: {exc}") from None
        if "z" in head:
            return read_csv(path).xy
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if arr.shape[1] < 2:
            raise DataError(f"{path}: need x and y columns")
        return arr[:, :2]
    if args.grid:
        nx, ny = args.grid
        if nx < 1 or ny < 1:
            raise InvalidArgumentError("grid sizes must be positive")
        return None, (nx, ny)
    raise InvalidArgumentError("give --predict or --grid")


def _piecewise_from_json(spec, data):
    from .covariance import model_from_dict
    from .kriging import PiecewiseKriger

    class _Fit:
        def __init__(self, m, t):
            self._m, self.tau2 = m, float(t)

        def model(self):
            return self._m

    if "models" in spec:
        seeds = spec["seeds"]
        taus = spec.get("tau2", [0.0] * len(spec["models"]))
        taus = taus if isinstance(taus, list) else [taus] * len(spec["models"])
        fits = [_Fit(model_from_dict(m), t) for m, t in zip(spec["models"], taus)]
    else:
        seeds = [data.xy.mean(axis=0).tolist()]
        fits = [_Fit(model_from_dict(spec["model"] if "model" in spec else spec), spec.get("tau2", 0.0))]
    return PiecewiseKriger(data, seeds, fits, min_train=1)


def cmd_krige(args) -> int:
    from .indices import estimate_nugget, index_constants, local_indices
    from .kriging import piecewise_krige
    from .report import write_rows
    from .segmentation import greedy_seed_search

    data = _load(args, args.train)
    pts = _prediction_points(args)
    if isinstance(pts, tuple):
        nx, ny = pts[1]
        d = data.domain
        gx, gy = np.meshgrid(np.linspace(d.xmin, d.xmax, nx), np.linspace(d.ymin, d.ymax, ny))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
    if args.model:
        spec = json.loads(Path(args.model).read_text(encoding="utf-8"))
        spec.pop("schema", None)
        pk = _piecewise_from_json(spec, data)
    else:
        tau2 = args.tau2 if args.tau2 is not None else estimate_nugget(data, args.m_target)
        if args.k == 1:
            seeds = data.xy.mean(axis=0)
        else:
            xi = local_indices(data, consts=index_constants(tau2))
            seeds = greedy_seed_search(xi, args.k).seeds.coords
        pk = piecewise_krige(data, seeds, tau2=tau2)
    pred = pk.predict(pts)
    write_rows(args.output, ["x", "y", "mean", "sd", "region"],
               ([repr(float(x)), repr(float(y)), repr(float(m)), repr(float(s)), int(r)]
                for (x, y), m, s, r in zip(pts, pred.mean, pred.sd, pred.region)))
    if args.model_out:
        _json_out(args.model_out, {
            "schema": CONFIG_SCHEMA, "seeds": pk.seeds.tolist(),
            "models": [s.model.to_dict() for s in pk.systems], "tau2": [s.tau2 for s in pk.systems],
        })
    return EXIT_OK


def cmd_bench(args) -> int:
    from .metrics import replicate_study, table_markdown, write_raw_json, write_table_csv

    if not args.cells:
        raise InvalidArgumentError("bench needs a cells list (in the config file or --cells JSON)")
    cells = args.cells
    if isinstance(cells, str):
        cells = json.loads(Path(cells).read_text(encoding="utf-8"))
        cells = cells.get("cells", cells) if isinstance(cells, dict) else cells
    t0 = time.perf_counter()
    res = replicate_study(cells, args.R, seed=args.seed, n_jobs=args.n_jobs)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_table_csv(out / "table.csv", res)
    (out / "table.md").write_text(table_markdown(res), encoding="utf-8")
    write_raw_json(out / "raw.json", res)
    sys.stdout.write(table_markdown(res))
    log.info("bench finished in %.1f s", time.perf_counter() - t0)
    return EXIT_OK


def cmd_fetch_colorado(args) -> int:
    from .colorado import CACHE_NAME, fetch_colorado

    data = fetch_colorado(args.cache_dir, url=args.url, raw_file=args.raw, offline=args.offline)
    digest = (Path(args.cache_dir) / CACHE_NAME).with_suffix(".sha256").read_text(encoding="utf-8").strip()
    print(json.dumps({"stations": data.n, "sha256": digest, "path": str(Path(args.cache_dir) / CACHE_NAME)}))
    return EXIT_OK


def cmd_colorado(args) -> int:
    from .colorado import bic_table, fetch_colorado, plains_subregion, prediction_study
    from .statest import stationarity_test

    data = fetch_colorado(args.cache_dir, url=args.url, raw_file=args.raw, offline=args.offline)
    out = {"stations": data.n}
    if not args.skip_test:
        rep = stationarity_test(data, M=args.M, seed=args.seed, m_target=args.m_target, n_jobs=args.n_jobs)
        out["test"] = rep.to_dict()
    bic, xi, tau2 = bic_table(data, args.kmax, args.m_target)
    out["tau2"] = tau2
    out["segment"] = segment_payload(bic, xi)
    out["plains_subregion"] = {
        str(k): plains_subregion(bic.results[k].stats.labels, xi.sites) for k in range(2, args.kmax + 1)
    }
    if args.splits > 0:
        scores = prediction_study(data, args.splits, args.kmax, seed=args.seed, m_target=args.m_target)
        table = {}
        for k in range(1, args.kmax + 1):
            r = [s.rmspe for s in scores if s.K == k]
            c = [s.crps for s in scores if s.K == k]
            table[str(k)] = {"median_rmspe": float(np.median(r)), "median_crps": float(np.median(c)),
                             "rmspe": r, "crps": c}
        out["prediction"] = table
    _json_out(args.output, out)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonstat", description="Nonstationarity diagnostics for spatial data.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="JSON config file (schema 1)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    def data_opts(sp, positional=True):
        if positional:
            sp.add_argument("input", help="CSV with header x,y,z")
        sp.add_argument("--domain", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"),
                        help="study region (default: bounding box of the sites)")
        sp.add_argument("--tau2", type=_tau2_arg, default=None, help="nugget value or 'estimate' (default)")
        sp.add_argument("--m-target", type=int, default=250, help="pairs per lag class for the nugget estimate")

    def index_opts(sp):
        sp.add_argument("--radius", type=float, default=None)
        sp.add_argument("--literal-eq7", action="store_true", help="also divide each index by its neighbor count")

    def test_opts(sp):
        sp.add_argument("--M", type=int, default=99, help="Monte Carlo replicates")
        sp.add_argument("--level", type=float, default=0.05)
        sp.add_argument("--n-jobs", type=int, default=1)
        sp.add_argument("--quick-fit", action="store_true", help="single-start covariance fit")

    sp = add("simulate", cmd_simulate, "simulate a scenario dataset")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--scenario", help="scenario JSON")
    sp.add_argument("--scenario-out", help="write the effective scenario JSON here")
    sp.add_argument("--covariance", choices=("stationary", "nonstat", "four_block", "blended"))
    sp.add_argument("--design", choices=("uniform", "clustered"))
    sp.add_argument("--n", type=int)
    for key in ("tau2", "sigma2", "nu", "alpha", "lam", "alpha1", "alpha2", "a"):
        sp.add_argument(f"--{key}", type=float)
    sp.add_argument("--domain", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))

    sp = add("indices", cmd_indices, "local dependence indices (CSV)")
    data_opts(sp)
    index_opts(sp)
    sp.add_argument("-o", "--output", required=True)

    sp = add("visualize", cmd_visualize, "fused-lasso maps over a penalty grid (CSV + SVG)")
    data_opts(sp)
    index_opts(sp)
    sp.add_argument("--rho", type=float, nargs="+", help="explicit penalty values")
    sp.add_argument("--grid", type=int, default=12, help="number of default penalty values")
    sp.add_argument("--outdir", required=True)

    sp = add("test", cmd_test, "Monte Carlo stationarity test (JSON)")
    data_opts(sp)
    test_opts(sp)
    sp.add_argument("-o", "--output", default="-")

    sp = add("segment", cmd_segment, "Voronoi segmentation with BIC choice of K")
    data_opts(sp)
    test_opts(sp)
    sp.add_argument("--kmax", type=int, default=4)
    sp.add_argument("--test-first", action="store_true", help="segment only if the test rejects")
    sp.add_argument("--partition", help="partition CSV for the selected K")
    sp.add_argument("-o", "--output", default="-")

    sp = add("krige", cmd_krige, "ordinary or piecewise kriging")
    data_opts(sp, positional=False)
    sp.add_argument("--train", required=True, help="training CSV with header x,y,z")
    sp.add_argument("--predict", help="CSV of prediction locations (x,y)")
    sp.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NY"), help="regular grid over the domain")
    sp.add_argument("--model", help="model JSON; if absent exponential models are fitted")
    sp.add_argument("--model-out", help="write the fitted model JSON here")
    sp.add_argument("--k", type=int, default=1, help="subregions when fitting (1 = global)")
    sp.add_argument("-o", "--output", required=True)

    sp = add("bench", cmd_bench, "replicate study over an experiment grid")
    sp.add_argument("--cells", help="JSON file with the cell list (or set 'cells' in the config)")
    sp.add_argument("--R", type=int, default=10)
    sp.add_argument("--n-jobs", type=int, default=1)
    sp.add_argument("--outdir", required=True)

    def colorado_opts(sp):
        sp.add_argument("--cache-dir", default="data")
        sp.add_argument("--raw", help="local raw monthly table instead of downloading")
        sp.add_argument("--url", default=None)
        sp.add_argument("--offline", action="store_true")

    sp = add("fetch-colorado", cmd_fetch_colorado, "download and cache the Colorado dataset")
    colorado_opts(sp)

    sp = add("colorado", cmd_colorado, "full Colorado workflow")
    colorado_opts(sp)
    sp.add_argument("--M", type=int, default=99)
    sp.add_argument("--n-jobs", type=int, default=1)
    sp.add_argument("--m-target", type=int, default=250)
    sp.add_argument("--kmax", type=int, default=4)
    sp.add_argument("--splits", type=int, default=20)
    sp.add_argument("--skip-test", action="store_true")
    sp.add_argument("-o", "--output", default="-")
    return p


def _apply_config(parser, argv):
    """Re-parse with config values installed as subparser defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = _load_config(args.config)
    section = cfg.get(args.command, {})
    merged = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict) and k != "schema"}
    merged.update({k.replace("-", "_"): v for k, v in section.items()})
    if "tau2" in merged:
        merged["tau2"] = _tau2_arg(merged["tau2"])
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(merged) - known - {"cells"})
    if unknown:
        raise InvalidArgumentError(f"unknown config key(s) for {args.command}: {unknown}")
    sub.set_defaults(**merged)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InvalidArgumentError, DomainError) as exc:
        print(f"nonstat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"nonstat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if getattr(args, "url", "") is None:
        from .colorado import SOURCE_URL

        args.url = SOURCE_URL
    try:
        return args.func(args)
    except (InvalidArgumentError, DomainError) as exc:
        print(f"nonstat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FetchError, IntegrityError) as exc:
        print(f"nonstat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonstatError as exc:
        print(f"nonstat: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except json.JSONDecodeError as exc:
        print(f"nonstat: data error: JSON line {exc.lineno}: {exc.msg}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"nonstat: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
