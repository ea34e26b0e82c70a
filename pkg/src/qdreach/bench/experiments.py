"""Desk-scale study pipelines: archive growth, goal reaching, gap crossing, repertoire update.

Each pipeline returns plain rows (lists of dicts) so the CLI can write them as
CSV and the tests can check them directly. Every source of randomness is a
``numpy.random.Generator`` passed in by the caller.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..adapt import (
    JacobianConfig,
    cross_gap,
    estimate_jacobian,
    reach,
    update_repertoire,
)
from ..archive import ContractError, Repertoire
from ..evolve import QdConfig, run_qd, run_random_baseline
from ..sim import Domain, DomainConfig, GapConfig

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("qd_vs_random", "reach_study", "gap_crossing", "repertoire_update")

NO_ADAPTATION = "no_adaptation_needed"
APPROACHED = "approached_not_converged"
INVALID_IN_REALITY = "invalid_in_reality"

REACH_FIELDS = ("target_x", "target_y", "before_error", "after_error", "iterations", "status", "success")
GAP_FIELDS = ("id", "category", "initial_error", "final_error", "iterations", "status")
UPDATE_FIELDS = (
    "trial",
    "full_mean_error",
    "full_failing_ratio",
    "action_only_mean_error",
    "action_only_failing_ratio",
)


@dataclass
class ExperimentSpec:
    kind: str
    repetitions: int = 1
    seeds: tuple[int, ...] = (0,)
    domain: DomainConfig = field(default_factory=DomainConfig)
    gap: GapConfig = field(default_factory=GapConfig)
    out_dir: str = "out"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"experiment kind must be one of {EXPERIMENT_KINDS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if len(self.seeds) != self.repetitions:
            raise ValueError("need one seed per repetition")


# -- archive growth ----------------------------------------------------------
def qd_vs_random(domain: Domain, config: QdConfig, seeds) -> list[dict]:
    """Run the QD loop and the random baseline once per seed at equal budget."""
    out = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        qd_rep, qd_report = run_qd(cfg, domain)
        rnd_rep, rnd_report = run_random_baseline(cfg, domain)
        log.info("seed %d: qd %d vs random %d", seed, len(qd_rep), len(rnd_rep))
        out.append(
            {
                "seed": int(seed),
                "qd_size": len(qd_rep),
                "random_size": len(rnd_rep),
                "qd_seed_evaluations": qd_report.seed_evaluations,
                "qd_report": qd_report,
                "random_report": rnd_report,
                "qd_repertoire": qd_rep,
            }
        )
    return out


def random_validity(domain: Domain, samples: int, rng: np.random.Generator, batch: int = 1000) -> float:
    """Fraction of uniform-random genotypes that evaluate to a valid action."""
    valid = 0
    for start in range(0, samples, batch):
        G = rng.random((min(batch, samples - start), domain.genotype_dim))
        valid += sum(e.valid for e in domain.evaluate_many(G))
    return valid / samples


# -- goal reaching -----------------------------------------------------------
def sample_targets(repertoire: Repertoire, count: int, rng: np.random.Generator, radius: float | None = None, max_draws: int = 100_000):
    """Uniform targets in the bounding box of the archived control behaviors.

    Draws farther than ``radius`` (control-space units, default three times
    the repertoire threshold) from every archived action are rejected.
    """
    if len(repertoire) == 0:
        raise ContractError("cannot sample targets from an empty repertoire")
    ctrl = repertoire.expected_behaviors[:, list(repertoire.control_dims)]
    lo, hi = ctrl.min(axis=0), ctrl.max(axis=0)
    radius = 3.0 * repertoire.l_repertoire if radius is None else radius
    targets = []
    for _ in range(max_draws):
        if len(targets) == count:
            break
        t = rng.uniform(lo, hi)
        if np.min(np.linalg.norm(ctrl - t, axis=1)) <= radius:
            targets.append(t)
    if len(targets) < count:
        raise ContractError(f"only {len(targets)} of {count} targets accepted in {max_draws} draws")
    return np.array(targets).reshape(count, len(lo))


def reach_study(repertoire: Repertoire, domain: Domain, targets, cfg: JacobianConfig, stop_tolerance: float | None = None):
    """Reach every target; ``success`` uses the domain tolerance.

    ``stop_tolerance`` lets the descent keep refining below the success
    tolerance. Returns summary rows and the traces.
    """
    success_tol = domain.tolerance
    stop = success_tol if stop_tolerance is None else stop_tolerance
    rows, traces = [], []
    for t in np.atleast_2d(targets):
        _, trace = reach(repertoire, t, domain, cfg, tolerance=stop)
        rows.append(
            {
                "target_x": float(t[0]),
                "target_y": float(t[1]),
                "before_error": trace.initial_error,
                "after_error": trace.final_error,
                "iterations": trace.iteration_count,
                "status": trace.status,
                "success": int(trace.final_error <= success_tol),
            }
        )
        traces.append(trace)
    return rows, traces


# -- gap crossing ------------------------------------------------------------
def gap_categories(max_iterations: int) -> list[str]:
    """Histogram bins in display order."""
    cats = [NO_ADAPTATION] + [f"converged_{k}_iterations" for k in range(1, max_iterations + 1)]
    failed = ("invalid_action", "no_neighbors", "zero_confidence", "max_iterations", INVALID_IN_REALITY)
    return cats + [APPROACHED] + [f"failed_{r}" for r in failed]


def classify(trace) -> str:
    if trace.iteration_count == 0 and trace.converged:
        return NO_ADAPTATION
    if trace.converged:
        return f"converged_{trace.iteration_count}_iterations"
    if trace.final_error < trace.initial_error:
        return APPROACHED
    return f"failed_{trace.status}"


def gap_crossing(repertoire: Repertoire, real: Domain, count: int, rng: np.random.Generator, cfg: JacobianConfig):
    """Sample archived actions, run them under the gap, and adapt the ones that miss.

    The goal of each action is its expected control behavior. Every sampled
    action lands in exactly one category.
    """
    if len(repertoire) == 0:
        raise ContractError("gap crossing needs a non-empty repertoire")
    count = min(count, len(repertoire))
    idx = np.sort(rng.choice(len(repertoire), size=count, replace=False))
    ctrl = list(repertoire.control_dims)
    evs = real.evaluate_many(repertoire.genotypes[idx])
    rows = []
    for i, ev in zip(idx, evs):
        goal = repertoire.expected_behaviors[i, ctrl]
        row = {"id": int(repertoire.ids[i])}
        if not ev.valid:
            nan = float("nan")
            row.update(category=f"failed_{INVALID_IN_REALITY}", initial_error=nan, final_error=nan, iterations=0, status=ev.failure_reason)
            rows.append(row)
            continue
        _, trace = cross_gap(repertoire, repertoire.genotypes[i], goal, real, cfg)
        row.update(
            category=classify(trace),
            initial_error=trace.initial_error,
            final_error=trace.final_error,
            iterations=trace.iteration_count,
            status=trace.status,
        )
        rows.append(row)
    return rows


def histogram(rows, categories) -> list[dict]:
    counts = {c: 0 for c in categories}
    for r in rows:
        counts[r["category"]] = counts.get(r["category"], 0) + 1
    return [{"category": c, "count": n} for c, n in counts.items()]


# -- repertoire update -------------------------------------------------------
class _GapMeter:
    """Error of the archived actions' expectations against their real outcome.

    Real outcomes are computed once; actions invalid in reality are left out.
    """

    def __init__(self, repertoire: Repertoire, real: Domain):
        self.n = len(repertoire)
        self.ctrl = list(repertoire.control_dims)
        evs = real.evaluate_many(repertoire.genotypes)
        self.valid = np.array([e.valid for e in evs], dtype=bool)
        self.real = np.array([e.behavior[self.ctrl] if e.valid else np.full(len(self.ctrl), np.nan) for e in evs]).reshape(self.n, -1)
        self.tol = real.tolerance
        if not self.valid.any():
            raise ContractError("no archived action is valid under the gap")

    def errors(self, repertoire: Repertoire) -> np.ndarray:
        exp = repertoire.expected_behaviors[: self.n, self.ctrl]
        return np.linalg.norm(self.real[self.valid] - exp[self.valid], axis=1)

    def measure(self, repertoire: Repertoire) -> tuple[float, float]:
        err = self.errors(repertoire)
        return float(err.mean()), float(np.mean(err > self.tol))


def _trial_loop(repertoire, sim, real, meter, order, cfg, only_tested):
    rep = copy.deepcopy(repertoire)
    ctrl = list(rep.control_dims)
    curve = [meter.measure(rep)]
    for i in order:
        g_a = rep.genotypes[i].copy()
        b_a = meter.real[i]
        e_a = rep.expected_behaviors[i, ctrl].copy()
        est = estimate_jacobian(rep, g_a, e_a, cfg)
        update_repertoire(rep, g_a, b_a, est.lam, rule=cfg.update_rule, only_tested=only_tested, kernel_width=cfg.kernel_width)
        if np.linalg.norm(b_a - e_a) > meter.tol:
            g_d, trace = cross_gap(rep, g_a, e_a, real, cfg)
            if trace.iteration_count > 0:
                obs, expct = real.evaluate(g_d), sim.evaluate(g_d)
                if obs.valid and expct.valid:
                    # current belief about g_d: its simulation plus the nearest archived correction
                    near = np.argmin(np.linalg.norm(rep.genotypes - g_d, axis=1))
                    e_d = expct.behavior[ctrl] + rep.compensations[near, ctrl]
                    est_d = estimate_jacobian(rep, g_d, e_d, cfg)
                    update_repertoire(
                        rep, g_d, obs.behavior, est_d.lam, quality=obs.quality, rule=cfg.update_rule,
                        expected_a=e_d, only_tested=only_tested, kernel_width=cfg.kernel_width,
                    )
        curve.append(meter.measure(rep))
    return curve


def repertoire_update(repertoire: Repertoire, sim: Domain, real: Domain, trials: int, rng: np.random.Generator, cfg: JacobianConfig):
    """Sequential trials with full-repertoire updates versus tested-action-only updates.

    Both variants see the same trial sequence and start from the same state.
    Returns one row per trial index, starting with the initial measurement.
    """
    if trials < 0:
        raise ContractError("trial count must be non-negative")
    meter = _GapMeter(repertoire, real)
    pool = np.flatnonzero(meter.valid)
    order = rng.choice(pool, size=min(trials, len(pool)), replace=False) if trials else np.zeros(0, dtype=int)
    full = _trial_loop(repertoire, sim, real, meter, order, cfg, only_tested=False)
    only = _trial_loop(repertoire, sim, real, meter, order, cfg, only_tested=True)
    return [
        {
            "trial": k,
            "full_mean_error": f[0],
            "full_failing_ratio": f[1],
            "action_only_mean_error": o[0],
            "action_only_failing_ratio": o[1],
        }
        for k, (f, o) in enumerate(zip(full, only))
    ]
