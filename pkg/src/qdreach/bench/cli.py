"""``qd-reach`` command line: evolve repertoires, reach goals, cross gaps, update, plot.

Exit codes: 0 success, 2 usage or input error, 3 experiment failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import __version__
from ..adapt import UPDATE_RULES, JacobianConfig
from ..archive import ContractError, RepertoireFormatError, load
from ..evolve import InitializationError, QdConfig, run_qd, run_random_baseline
from ..sim import Domain, DomainConfig, GapConfig
from . import experiments as ex
from . import plotting

log = logging.getLogger("qdreach")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3


class UsageError(Exception):
    pass


# -- io helpers ---------------------------------------------------------------
def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fields})


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames:
            raise UsageError(f"{path}: no header row")
        return list(reader.fieldnames), list(reader)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_arg(text: str | None, what: str) -> dict:
    """Parse ``text`` as a JSON object, or as the path of a file holding one."""
    if text is None:
        return {}
    p = Path(text)
    try:
        raw = p.read_text(encoding="utf-8") if p.is_file() else text
        obj = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {text!r}: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{what} must be a JSON object")
    return obj


# -- configuration ------------------------------------------------------------
_CONFIG_SECTIONS = {"domain", "qd", "jacobian", "gap"}


def load_settings(args) -> dict:
    cfg = _json_arg(args.config, "config")
    unknown = set(cfg) - _CONFIG_SECTIONS
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    try:
        dom = dict(cfg.get("domain", {}))
        if args.domain is not None:
            dom["kind"] = args.domain
        domain_cfg = DomainConfig.from_dict(dom)
        gap_src = _json_arg(args.gap, "gap") if args.gap is not None else cfg.get("gap", {})
        gap = GapConfig.from_dict(gap_src)
        qd = QdConfig(**{**cfg.get("qd", {}), **({"seed": args.seed} if args.seed is not None else {})})
        jac = JacobianConfig(**cfg.get("jacobian", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None
    return {"domain": domain_cfg, "gap": gap, "qd": qd, "jacobian": jac}


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _metadata(args, settings, extra=None, inputs=()) -> dict:
    meta = {
        "command": args.command,
        "version": __version__,
        "seed": _seed(args),
        "domain": settings["domain"].to_dict(),
        "domain_hash": settings["domain"].config_hash(),
        "gap": settings["gap"].to_dict(),
        "inputs": {Path(p).name: _sha256(p) for p in inputs},
    }
    meta.update(extra or {})
    return meta


def _load_repertoire(path, domain: Domain):
    if path is None:
        raise UsageError("--repertoire is required")
    if not Path(path).is_file():
        raise UsageError(f"repertoire file not found: {path}")
    try:
        rep = load(path)
    except RepertoireFormatError as exc:
        raise UsageError(str(exc)) from None
    if rep.genotype_dim != domain.genotype_dim or rep.behavior_dim != domain.behavior_dim:
        raise UsageError(
            f"repertoire shape (n={rep.genotype_dim}, m={rep.behavior_dim}) does not match the "
            f"{domain.name} domain (n={domain.genotype_dim}, m={domain.behavior_dim})"
        )
    return rep


def _control_bounds(domain: Domain) -> np.ndarray:
    return domain.behavior_bounds()[list(domain.control_dims)]


# -- commands -----------------------------------------------------------------
def cmd_evolve(args) -> int:
    settings = load_settings(args)
    qd = settings["qd"]
    over = {}
    if args.generations is not None:
        over["generations"] = args.generations
    if args.population is not None:
        over["population_size"] = args.population
    if args.l_repertoire is not None:
        over["l_repertoire"] = args.l_repertoire
    try:
        qd = QdConfig(**{**qd.to_dict(), **over})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    domain = Domain(settings["domain"], settings["gap"])
    out = _out_dir(args)
    runner = run_random_baseline if args.baseline == "random" else run_qd
    t0 = time.perf_counter()
    rep, report = runner(qd, domain)
    elapsed = time.perf_counter() - t0

    rep.save(out / "repertoire.jsonl")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    extra = {
        "algorithm": "random" if args.baseline == "random" else "arch_novelty",
        "qd": qd.to_dict(),
        "archive_size": len(rep),
        "seed_evaluations": report.seed_evaluations,
    }
    if args.record_wall_time:
        extra["wall_time_s"] = elapsed
    write_json(out / "metadata.json", _metadata(args, settings, extra))
    ctrl = list(rep.control_dims)
    plotting.coverage_svg(rep.expected_behaviors[:, ctrl], _control_bounds(domain), out / "coverage.svg")
    gens = report.column("generation")
    for col in ("archive_size", "mean_quality"):
        plotting.curves_svg(gens, {col: report.column(col)}, out / f"{col}.svg", ylabel=col)
    print(f"archive_size,{len(rep)}")
    return EXIT_OK


def _parse_target(text: str, dims: int) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"target must be {dims} comma-separated numbers") from None
    if vals.shape != (dims,) or not np.all(np.isfinite(vals)):
        raise UsageError(f"target must be {dims} comma-separated numbers")
    return vals


def cmd_reach(args) -> int:
    settings = load_settings(args)
    domain = Domain(settings["domain"], settings["gap"])
    rep = _load_repertoire(args.repertoire, domain)
    jac = settings["jacobian"]
    if args.max_iterations is not None:
        jac = JacobianConfig(**{**asdict(jac), "max_iterations": args.max_iterations})
    if args.target is not None:
        t = _parse_target(args.target, len(domain.control_dims))
        bounds = _control_bounds(domain)
        if np.any(t < bounds[:, 0]) or np.any(t > bounds[:, 1]):
            raise UsageError("target lies outside the declared behavior bounds")
        targets = t[None, :]
    else:
        rng = np.random.default_rng(_seed(args))
        try:
            targets = ex.sample_targets(rep, args.targets, rng, radius=args.radius)
        except ContractError as exc:
            log.error("%s", exc)
            return EXIT_FAILURE
    stop = args.stop_tolerance if args.stop_tolerance is not None else domain.tolerance / 10.0
    out = _out_dir(args)
    rows, traces = ex.reach_study(rep, domain, targets, jac, stop_tolerance=stop)
    write_csv(out / "reach_summary.csv", ex.REACH_FIELDS, rows)
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for k, tr in enumerate(traces):
        (tdir / f"target_{k:04d}.json").write_text(tr.to_json() + "\n", encoding="utf-8")
        (tdir / f"target_{k:04d}.csv").write_text(tr.to_csv(), encoding="utf-8")
    before = np.array([r["before_error"] for r in rows])
    after = np.array([r["after_error"] for r in rows])
    plotting.error_hist_svg(before, after, out / "reach_errors.svg", unit=_unit(domain))
    extra = {"jacobian": asdict(jac), "stop_tolerance": stop, "success_tolerance": domain.tolerance, "targets": len(rows)}
    write_json(out / "reach_metadata.json", _metadata(args, settings, extra, inputs=[args.repertoire]))
    print(f"targets,{len(rows)}")
    print(f"median_before_error,{float(np.median(before))!r}")
    print(f"median_after_error,{float(np.median(after))!r}")
    print(f"success_rate,{float(np.mean([r['success'] for r in rows]))!r}")
    return EXIT_OK


def _unit(domain: Domain) -> str:
    return "m" if domain.name == "throw" else "rad"


def cmd_gapsim(args) -> int:
    settings = load_settings(args)
    sim = Domain(settings["domain"])
    real = Domain(settings["domain"], settings["gap"])
    rep = _load_repertoire(args.repertoire, sim)
    jac = JacobianConfig(**{**asdict(settings["jacobian"]), "max_iterations": args.max_iterations})
    out = _out_dir(args)
    rng = np.random.default_rng(_seed(args))
    rows = ex.gap_crossing(rep, real, args.trials, rng, jac)
    cats = ex.gap_categories(jac.max_iterations)
    hist = ex.histogram(rows, cats)
    write_csv(out / "gapsim_actions.csv", ex.GAP_FIELDS, rows)
    write_csv(out / "gapsim_histogram.csv", ("category", "count"), hist)
    plotting.bar_svg([h["category"] for h in hist], [h["count"] for h in hist], out / "gapsim_histogram.svg")
    plotting.error_hist_svg(
        [r["initial_error"] for r in rows], [r["final_error"] for r in rows], out / "gapsim_errors.svg", unit=_unit(sim)
    )
    extra = {"jacobian": asdict(jac), "tolerance": real.tolerance, "actions": len(rows)}
    write_json(out / "gapsim_metadata.json", _metadata(args, settings, extra, inputs=[args.repertoire]))
    for h in hist:
        print(f"{h['category']},{h['count']}")
    return EXIT_OK


def cmd_update(args) -> int:
    settings = load_settings(args)
    sim = Domain(settings["domain"])
    real = Domain(settings["domain"], settings["gap"])
    rep = _load_repertoire(args.repertoire, sim)
    over = {}
    if args.update_rule is not None:
        over["update_rule"] = args.update_rule
    if args.kernel_width is not None:
        over["kernel_width"] = args.kernel_width
    try:
        jac = JacobianConfig(**{**asdict(settings["jacobian"]), "max_iterations": 5, **over})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    rng = np.random.default_rng(_seed(args))
    try:
        rows = ex.repertoire_update(rep, sim, real, args.trials, rng, jac)
    except ContractError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    write_csv(out / "update_curves.csv", ex.UPDATE_FIELDS, rows)
    x = [r["trial"] for r in rows]
    for key, label in (("mean_error", "mean control error"), ("failing_ratio", "failing action ratio")):
        series = {v: [r[f"{v}_{key}"] for r in rows] for v in ("full", "action_only")}
        plotting.curves_svg(x, series, out / f"update_{key}.svg", xlabel="trial", ylabel=label)
    extra = {"jacobian": asdict(jac), "trials": args.trials}
    write_json(out / "update_metadata.json", _metadata(args, settings, extra, inputs=[args.repertoire]))
    last = rows[-1]
    for k in ex.UPDATE_FIELDS[1:]:
        print(f"{k},{last[k]!r}")
    return EXIT_OK


def cmd_stats(args) -> int:
    settings = load_settings(args)
    domain = Domain(settings["domain"])
    if args.repertoire is None and not args.csv:
        raise UsageError("give --repertoire and/or --csv")
    out = _out_dir(args)
    if args.repertoire is not None:
        rep = _load_repertoire(args.repertoire, domain)
        ctrl = list(rep.control_dims)
        plotting.coverage_svg(rep.expected_behaviors[:, ctrl], _control_bounds(domain), out / "coverage.svg")
        print(f"archive_size,{len(rep)}")
        if len(rep):
            print(f"mean_quality,{float(np.mean(rep.qualities))!r}")
    for path in args.csv:
        _plot_csv(Path(path), out)
    return EXIT_OK


def _plot_csv(path: Path, out: Path) -> None:
    """Plot every numeric column of a CSV against its first column."""
    if not path.is_file():
        raise UsageError(f"csv file not found: {path}")
    fields, rows = read_csv(path)
    try:
        x = [float(r[fields[0]]) for r in rows]
    except (TypeError, ValueError):
        raise UsageError(f"{path}: first column {fields[0]!r} is not numeric") from None
    series = {}
    for f in fields[1:]:
        try:
            series[f] = [float(r[f]) for r in rows]
        except (TypeError, ValueError):
            continue
    if not series:
        raise UsageError(f"{path}: no numeric columns to plot")
    plotting.curves_svg(x, series, out / f"{path.stem}.svg", xlabel=fields[0])
    print(f"plotted,{path.stem}.svg")


# -- parser -------------------------------------------------------------------
def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file (or inline JSON) with domain/qd/jacobian/gap sections")
    common.add_argument("--seed", type=_u64, default=None, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--domain", choices=("throw", "lever"), default=None)
    common.add_argument("--gap", default=None, help="gap JSON file or inline JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qd-reach", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", parents=[common], help="build a repertoire")
    p.add_argument("--generations", type=_count)
    p.add_argument("--population", type=int)
    p.add_argument("--l-repertoire", type=float)
    p.add_argument("--baseline", choices=("none", "random"), default="none")
    p.add_argument("--record-wall-time", action="store_true", help="store elapsed time (breaks byte equality)")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("reach", parents=[common], help="reach one target or a sampled batch")
    p.add_argument("--repertoire")
    p.add_argument("--target", help="control-space goal, e.g. 1.2,-0.4")
    p.add_argument("--targets", type=_count, default=100, help="number of sampled targets")
    p.add_argument("--radius", type=float, help="reject sampled targets farther than this from the archive")
    p.add_argument("--stop-tolerance", type=float, help="descent stop tolerance (default: success tolerance / 10)")
    p.add_argument("--max-iterations", type=_count)
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("gapsim", parents=[common], help="cross an injected gap for sampled actions")
    p.add_argument("--repertoire")
    p.add_argument("--trials", type=_count, default=1000)
    p.add_argument("--max-iterations", type=_count, default=5)
    p.set_defaults(func=cmd_gapsim)

    p = sub.add_parser("update", parents=[common], help="sequential trials with repertoire updates")
    p.add_argument("--repertoire")
    p.add_argument("--trials", type=_count, default=50)
    p.add_argument("--update-rule", choices=UPDATE_RULES)
    p.add_argument("--kernel-width", type=float)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("stats", parents=[common], help="plot a repertoire and CSV curves")
    p.add_argument("--repertoire")
    p.add_argument("--csv", nargs="*", default=[])
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qd-reach: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InitializationError as exc:
        print(f"qd-reach: initialization failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ContractError, ValueError) as exc:
        print(f"qd-reach: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("experiment failed")
        print(f"qd-reach: experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def entry() -> None:
    sys.exit(main())
