import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qdreach.archive import Individual, Repertoire, load
from qdreach.bench import experiments as ex
from qdreach.bench.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from qdreach.sim import Domain

THROW_GAP = '{"joint_offsets": [0.05, 0.05, 0.0, 0.0]}'
MARKER = "fill: #1f77b4"


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def throw_rep(tmp_path_factory):
    out = tmp_path_factory.mktemp("throw")
    assert run("evolve", "--domain", "throw", "--generations", 30, "--seed", 3, "--out", out) == EXIT_OK
    return out / "repertoire.jsonl"


# -- evolve --------------------------------------------------------------------
def test_evolve_single_generation(tmp_path):
    assert run("evolve", "--domain", "lever", "--generations", 1, "--seed", 7, "--out", tmp_path) == EXIT_OK
    for name in ("repertoire.jsonl", "report.csv", "metadata.json", "coverage.svg", "archive_size.svg", "mean_quality.svg"):
        assert (tmp_path / name).is_file()
    report = rows(tmp_path / "report.csv")
    assert len(report) == 1 and report[0]["generation"] == "1"
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["seed"] == 7 and meta["domain"]["kind"] == "lever"
    assert len(load(tmp_path / "repertoire.jsonl")) == int(report[0]["archive_size"])


def test_evolve_is_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("evolve", "--domain", "lever", "--generations", 2, "--seed", 7, "--out", tmp_path / d) == EXIT_OK
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert run("evolve", "--domain", "lever", "--generations", 2, "--seed", 8, "--out", tmp_path / "c") == EXIT_OK
    assert (tmp_path / "a" / "repertoire.jsonl").read_bytes() != (tmp_path / "c" / "repertoire.jsonl").read_bytes()


def test_random_baseline_smaller_on_lever(tmp_path):
    sizes = {}
    for base in ("none", "random"):
        out = tmp_path / base
        assert run("evolve", "--domain", "lever", "--generations", 20, "--seed", 1, "--baseline", base, "--out", out) == EXIT_OK
        sizes[base] = len(load(out / "repertoire.jsonl"))
        assert rows(out / "report.csv")[-1]["evaluations_used"] == rows(tmp_path / "none" / "report.csv")[-1]["evaluations_used"]
    assert sizes["random"] < sizes["none"]


@pytest.mark.parametrize(
    "argv",
    [
        ["--config", '{"qd": {"mutation_rate": 2}}'],
        ["--config", '{"bogus": {}}'],
        ["--config", "{not json"],
        ["--config", "/nonexistent/config.json"],
        ["--domain", "juggle"],
        ["--seed", "-1"],
        ["--generations", "x"],
    ],
)
def test_evolve_bad_config_exits_2(tmp_path, argv, capsys):
    assert run("evolve", "--out", tmp_path, *argv) == EXIT_USAGE
    assert capsys.readouterr().err.strip()


def test_evolve_initialization_failure_exits_3(tmp_path):
    cfg = '{"domain": {"contact_radius": 1e-6}, "qd": {"max_seed_generations": 1}}'
    assert run("evolve", "--domain", "lever", "--config", cfg, "--out", tmp_path) == EXIT_FAILURE


def test_unknown_command_and_help(capsys):
    assert run("juggle") == EXIT_USAGE
    assert run("--help") == EXIT_OK


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qdreach", "stats", "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == EXIT_USAGE


# -- reach ---------------------------------------------------------------------
def test_reach_existing_behavior(throw_rep, tmp_path, capsys):
    rep = load(throw_rep)
    b = rep.expected_behaviors[0, :2]
    target = ",".join(repr(float(v)) for v in b)
    assert run("reach", "--domain", "throw", "--repertoire", throw_rep, f"--target={target}", "--out", tmp_path) == EXIT_OK
    (row,) = rows(tmp_path / "reach_summary.csv")
    assert row["iterations"] == "0" and row["status"] == "converged"
    assert float(row["before_error"]) == 0.0
    trace = json.loads((tmp_path / "traces" / "target_0000.json").read_text())
    assert len(trace["iterations"]) == 1


def test_reach_batch_row_count(throw_rep, tmp_path):
    assert run("reach", "--domain", "throw", "--repertoire", throw_rep, "--targets", 100, "--out", tmp_path) == EXIT_OK
    summary = rows(tmp_path / "reach_summary.csv")
    assert len(summary) == 100
    assert list(summary[0]) == list(ex.REACH_FIELDS)
    assert len(list((tmp_path / "traces").glob("*.json"))) == 100
    assert all(int(r["iterations"]) <= 4 for r in summary)


@pytest.mark.parametrize(
    "with_rep,extra",
    [
        (False, ["--repertoire", "/nonexistent.jsonl"]),
        (False, []),
        (True, ["--target", "99,99"]),
        (True, ["--target", "1,2,3"]),
        (True, ["--domain", "lever"]),
    ],
)
def test_reach_usage_errors(throw_rep, tmp_path, with_rep, extra):
    argv = ["reach", "--domain", "throw", "--out", tmp_path]
    if with_rep:
        argv += ["--repertoire", throw_rep]
    assert run(*argv, *extra) == EXIT_USAGE


# -- gapsim --------------------------------------------------------------------
def test_gapsim_zero_gap(throw_rep, tmp_path):
    assert run("gapsim", "--domain", "throw", "--repertoire", throw_rep, "--trials", 100, "--out", tmp_path) == EXIT_OK
    hist = {r["category"]: int(r["count"]) for r in rows(tmp_path / "gapsim_histogram.csv")}
    assert hist[ex.NO_ADAPTATION] == 100 and sum(hist.values()) == 100


def test_gapsim_partition_and_positive_failures(throw_rep, tmp_path):
    argv = ["gapsim", "--domain", "throw", "--repertoire", throw_rep, "--gap", THROW_GAP, "--trials", 200, "--out", tmp_path]
    assert run(*argv) == EXIT_OK
    actions = rows(tmp_path / "gapsim_actions.csv")
    hist = rows(tmp_path / "gapsim_histogram.csv")
    assert [h["category"] for h in hist] == ex.gap_categories(5)
    assert sum(int(h["count"]) for h in hist) == len(actions) == 200
    assert sorted(set(int(a["id"]) for a in actions)) == sorted(int(a["id"]) for a in actions)
    counted = {h["category"]: int(h["count"]) for h in hist}
    for cat in counted:
        assert counted[cat] == sum(a["category"] == cat for a in actions)
    assert counted[ex.NO_ADAPTATION] < 200
    for name in ("gapsim_histogram.svg", "gapsim_errors.svg", "gapsim_metadata.json"):
        assert (tmp_path / name).is_file()


def test_gapsim_more_trials_than_actions(tmp_path):
    rep = Repertoire.for_domain(Domain("lever"))
    path = tmp_path / "empty.jsonl"
    rep.save(path)
    assert run("gapsim", "--domain", "lever", "--repertoire", path, "--trials", 5, "--out", tmp_path / "o") == EXIT_USAGE


# -- update --------------------------------------------------------------------
def test_update_zero_trials(throw_rep, tmp_path):
    argv = ["update", "--domain", "throw", "--repertoire", throw_rep, "--gap", THROW_GAP, "--trials", 0, "--out", tmp_path]
    assert run(*argv) == EXIT_OK
    (row,) = rows(tmp_path / "update_curves.csv")
    assert row["trial"] == "0"
    assert row["full_mean_error"] == row["action_only_mean_error"]
    assert row["full_failing_ratio"] == row["action_only_failing_ratio"]


def test_update_curves_share_start(throw_rep, tmp_path):
    argv = ["update", "--domain", "throw", "--repertoire", throw_rep, "--gap", THROW_GAP, "--trials", 5, "--out", tmp_path]
    assert run(*argv) == EXIT_OK
    curves = rows(tmp_path / "update_curves.csv")
    assert [int(r["trial"]) for r in curves] == list(range(6))
    assert curves[0]["full_mean_error"] == curves[0]["action_only_mean_error"]
    assert float(curves[0]["full_mean_error"]) > 0
    for name in ("update_mean_error.svg", "update_failing_ratio.svg"):
        assert (tmp_path / name).is_file()


def test_update_bad_kernel_width(throw_rep, tmp_path):
    argv = ["update", "--domain", "throw", "--repertoire", throw_rep, "--kernel-width", 0, "--out", tmp_path]
    assert run(*argv) == EXIT_USAGE


# -- stats ---------------------------------------------------------------------
def _markers(svg: str) -> list[tuple[str, str]]:
    return re.findall(r'<use [^>]*x="([^"]+)" y="([^"]+)" style="' + MARKER, svg)


def test_stats_empty_repertoire(tmp_path):
    path = tmp_path / "empty.jsonl"
    Repertoire.for_domain(Domain("throw")).save(path)
    assert run("stats", "--domain", "throw", "--repertoire", path, "--out", tmp_path / "o") == EXIT_OK
    svg = (tmp_path / "o" / "coverage.svg").read_text()
    assert svg.startswith("<?xml") and 'version="1.1"' in svg
    assert _markers(svg) == []
    assert "<g id=\"axes_1\">" in svg


def test_stats_centered_point(tmp_path):
    dom = Domain("throw")
    rep = Repertoire.for_domain(dom)
    center = dom.behavior_bounds().mean(axis=1)
    rep.append(Individual(np.full(dom.genotype_dim, 0.5), center, 0.0))
    path = tmp_path / "one.jsonl"
    rep.save(path)
    for d in ("a", "b"):
        assert run("stats", "--domain", "throw", "--repertoire", path, "--out", tmp_path / d) == EXIT_OK
    svg = (tmp_path / "a" / "coverage.svg").read_text()
    # 6 in square canvas at 72 pt per inch, axes centered on it
    assert _markers(svg) == [("216", "216")]
    assert (tmp_path / "a" / "coverage.svg").read_bytes() == (tmp_path / "b" / "coverage.svg").read_bytes()


def test_stats_plots_csv_and_leaves_it_alone(throw_rep, tmp_path):
    report = throw_rep.parent / "report.csv"
    before = report.read_bytes()
    assert run("stats", "--domain", "throw", "--csv", report, "--out", tmp_path) == EXIT_OK
    assert report.read_bytes() == before
    assert (tmp_path / "report.svg").is_file()


@pytest.mark.parametrize("content", ["a,b\n1,notanumber\n", "", "x\n"])
def test_stats_malformed_csv(tmp_path, content):
    bad = tmp_path / "bad.csv"
    bad.write_text(content)
    assert run("stats", "--csv", bad, "--out", tmp_path / "o") == EXIT_USAGE


def test_stats_malformed_repertoire(tmp_path):
    good = tmp_path / "good.jsonl"
    Repertoire.for_domain(Domain("throw")).save(good)
    bad = tmp_path / "bad.jsonl"
    bad.write_text(good.read_text() + "{not json}\n")
    assert run("stats", "--domain", "throw", "--repertoire", bad, "--out", tmp_path / "o") == EXIT_USAGE
    # a repertoire of the wrong shape for the domain
    assert run("stats", "--domain", "lever", "--repertoire", good, "--out", tmp_path / "o") == EXIT_USAGE


# -- experiment helpers ------------------------------------------------------------
def test_experiment_spec_validation():
    ex.ExperimentSpec("qd_vs_random", 2, (0, 1))
    for bad in (("nope", 1, (0,)), ("reach_study", 0, ()), ("reach_study", 2, (1, 1)), ("reach_study", 2, (1,))):
        with pytest.raises(ValueError):
            ex.ExperimentSpec(*bad)


def test_sample_targets_respects_radius(throw_rep):
    rep = load(throw_rep)
    rng = np.random.default_rng(0)
    targets = ex.sample_targets(rep, 50, rng)
    beh = rep.expected_behaviors[:, :2]
    d = np.min(np.linalg.norm(beh[None, :, :] - targets[:, None, :], axis=2), axis=1)
    assert targets.shape == (50, 2) and np.all(d <= 3 * rep.l_repertoire)
    lo, hi = beh.min(axis=0), beh.max(axis=0)
    assert np.all(targets >= lo) and np.all(targets <= hi)


def test_histogram_counts_every_category():
    cats = ex.gap_categories(2)
    hist = ex.histogram([{"category": cats[1]}, {"category": cats[1]}, {"category": cats[-1]}], cats)
    assert [h["count"] for h in hist] == [0, 2, 0, 0, 0, 0, 0, 0, 1]
