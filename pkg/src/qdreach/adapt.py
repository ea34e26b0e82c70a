"""Local linearization of a repertoire and its uses.

A Jacobian from genotype space to the control part of the behavior is fitted
by least squares on repertoire neighbors. Its confidence scales pseudo-inverse
steps that either reach a new goal (starting from the nearest archived action)
or pull an action back onto its expected behavior under a reality gap.
Observed gaps are spread over the repertoire as compensation terms.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .archive import ContractError, Individual, Repertoire

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
NO_NEIGHBORS = "no_neighbors"
INVALID_ACTION = "invalid_action"
ZERO_CONFIDENCE = "zero_confidence"
TERMINAL_STATUSES = (CONVERGED, MAX_ITERATIONS, NO_NEIGHBORS, INVALID_ACTION, ZERO_CONFIDENCE)

TOWARD_OBSERVATION = "toward_observation"
LITERAL = "literal"
GAP_TRANSFER = "gap_transfer"
UPDATE_RULES = (TOWARD_OBSERVATION, LITERAL, GAP_TRANSFER)

TRACE_FIELDS = ("iteration", "error", "lam", "behavior", "genotype")
# genotype-space length scale of the update kernel; 1.0 gives exp(-lam d^2 / 2)
KERNEL_WIDTH = 0.2


@dataclass
class JacobianConfig:
    K: int = 30
    eps: float = 0.4
    eta_threshold: float = 0.3
    ridge: float = 1e-6
    svd_cutoff: float = 1e-8
    max_iterations: int = 4
    tolerance: float | None = None
    widen_factor: float = 2.0
    update_rule: str = GAP_TRANSFER
    kernel_width: float = KERNEL_WIDTH

    def __post_init__(self):
        if self.K < 1 or self.eps <= 0 or self.eta_threshold <= 0:
            raise ValueError("K, eps and eta_threshold must be positive")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")


@dataclass
class JacobianEstimate:
    J: np.ndarray | None
    eta: float
    lam: float
    neighbor_ids: list[int]
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def confidence(eta: float, eta_threshold: float) -> float:
    """Linear confidence ramp: 1 at zero residual, 0 at and beyond the threshold."""
    if eta < eta_threshold:
        return 1.0 - eta / eta_threshold
    return 0.0


def fit_jacobian(G: np.ndarray, B: np.ndarray, ridge: float = 1e-6, svd_cutoff: float = 1e-8) -> np.ndarray:
    """Least-squares ``J`` with ``J @ G ~= B`` for column-wise deltas ``G`` (n, K), ``B`` (c, K).

    The ridge term is only added when ``G G^T`` is numerically singular, so
    well-posed neighborhoods are solved exactly.
    """
    GGt = G @ G.T
    ev = np.linalg.eigvalsh(GGt)
    if ev[0] <= svd_cutoff * max(ev[-1], np.finfo(float).tiny):
        GGt = GGt + ridge * np.eye(len(GGt))
    return np.linalg.solve(GGt, G @ B.T).T


def estimate_jacobian(repertoire: Repertoire, g_c, b_c, cfg: JacobianConfig, eps: float | None = None) -> JacobianEstimate:
    """Fit the local map from genotype deltas to control-behavior deltas around ``g_c``.

    ``b_c`` is the control-dim behavior anchoring the deltas. Neighbor
    behaviors include their compensation. The residual is measured in
    normalized behavior units so one threshold serves every domain.
    """
    g_c = np.asarray(g_c, dtype=float)
    b_c = np.asarray(b_c, dtype=float)
    ctrl = list(repertoire.control_dims)
    if g_c.shape != (repertoire.genotype_dim,) or b_c.shape != (len(ctrl),):
        raise ContractError("g_c / b_c dimensions do not match the repertoire")
    idx = repertoire.genotype_neighbor_indices(g_c, cfg.K, cfg.eps if eps is None else eps)
    ids = [int(i) for i in repertoire.ids[idx]]
    n = repertoire.genotype_dim
    if len(idx) < n + 1:
        return JacobianEstimate(None, np.inf, 0.0, ids, NO_NEIGHBORS)
    width = np.diff(repertoire.behavior_bounds[ctrl], axis=1)[:, 0]
    G = (repertoire.genotypes[idx] - g_c).T
    B = ((repertoire.expected_behaviors[idx][:, ctrl] - b_c) / width).T
    Jn = fit_jacobian(G, B, cfg.ridge, cfg.svd_cutoff)
    eta = float(np.linalg.norm(Jn @ G - B) / len(idx))
    return JacobianEstimate(width[:, None] * Jn, eta, confidence(eta, cfg.eta_threshold), ids)


@dataclass
class AdaptTrace:
    iterations: list[dict] = field(default_factory=list)
    status: str = MAX_ITERATIONS
    target: list[float] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def iteration_count(self) -> int:
        return len(self.iterations) - 1

    @property
    def initial_error(self) -> float:
        return self.iterations[0]["error"]

    @property
    def final_error(self) -> float:
        return self.iterations[-1]["error"]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def genotypes(self) -> list[np.ndarray]:
        return [np.asarray(it["genotype"]) for it in self.iterations]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "target": list(self.target),
            "tolerance": self.tolerance,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptTrace":
        return cls(list(d["iterations"]), d["status"], list(d["target"]), float(d["tolerance"]))

    def to_csv(self) -> str:
        """One row per iterate; vector columns are flattened with an index suffix."""
        c = len(self.target)
        n = len(self.iterations[0]["genotype"]) if self.iterations else 0
        header = ["iteration", "error", "lam"] + [f"b{k}" for k in range(c)] + [f"g{k}" for k in range(n)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for it in self.iterations:
            lam = "" if it["lam"] is None else repr(it["lam"])
            w.writerow([it["iteration"], repr(it["error"]), lam] + [repr(v) for v in it["behavior"]] + [repr(v) for v in it["genotype"]])
        return buf.getvalue()


def _record(trace: AdaptTrace, g, b_ctrl, target, lam):
    err = float(np.linalg.norm(b_ctrl - target))
    trace.iterations.append(
        {
            "iteration": len(trace.iterations),
            "genotype": [float(v) for v in g],
            "behavior": [float(v) for v in b_ctrl],
            "error": err,
            "lam": None if lam is None else float(lam),
        }
    )
    return err


def _evaluate(evaluator, g):
    if hasattr(evaluator, "evaluate"):
        return evaluator.evaluate(g)
    return evaluator(g)


def descend(
    repertoire: Repertoire,
    g0,
    b0_ctrl,
    target,
    evaluator,
    cfg: JacobianConfig,
    tolerance: float,
    max_iterations: int,
    anchor_offset=None,
):
    """Iterate ``g <- clip(g + lam * pinv(J(g)) (target - b))`` from an observed start.

    ``evaluator`` maps a genotype to an object with ``valid`` and ``behavior``.
    The Jacobian is re-estimated around every iterate; when too few neighbors
    lie within ``eps`` the radius is widened once before giving up.
    ``anchor_offset`` is subtracted from each observation before it anchors the
    neighbor deltas, so a known gap between evaluator and repertoire does not
    bias the fit. Returns the last valid iterate and the trace.
    """
    ctrl = list(repertoire.control_dims)
    target = np.asarray(target, dtype=float)
    g = np.asarray(g0, dtype=float).copy()
    b = np.asarray(b0_ctrl, dtype=float)
    off = np.zeros_like(b) if anchor_offset is None else np.asarray(anchor_offset, dtype=float)
    trace = AdaptTrace(target=[float(v) for v in target], tolerance=float(tolerance))
    err = _record(trace, g, b, target, None)
    if err <= tolerance:
        trace.status = CONVERGED
        return g, trace
    for _ in range(max_iterations):
        est = estimate_jacobian(repertoire, g, b - off, cfg)
        if est.status == NO_NEIGHBORS:
            est = estimate_jacobian(repertoire, g, b - off, cfg, eps=cfg.eps * cfg.widen_factor)
        if est.status == NO_NEIGHBORS:
            trace.status = NO_NEIGHBORS
            return g, trace
        if est.lam <= 0.0:
            trace.status = ZERO_CONFIDENCE
            return g, trace
        step = est.lam * (np.linalg.pinv(est.J, rcond=cfg.svd_cutoff) @ (target - b))
        g_next = np.clip(g + step, 0.0, 1.0)
        ev = _evaluate(evaluator, g_next)
        if not ev.valid:
            trace.status = INVALID_ACTION
            trace.iterations[-1]["failed_genotype"] = [float(v) for v in g_next]
            trace.iterations[-1]["failure_reason"] = ev.failure_reason
            return g, trace
        g = g_next
        b = np.asarray(ev.behavior, dtype=float)[ctrl]
        err = _record(trace, g, b, target, est.lam)
        if err <= tolerance:
            trace.status = CONVERGED
            return g, trace
    trace.status = MAX_ITERATIONS
    return g, trace


def reach(repertoire: Repertoire, target, evaluator, cfg: JacobianConfig, tolerance: float | None = None):
    """Generalize to a control-space ``target`` from the nearest archived action."""
    if len(repertoire) == 0:
        raise ContractError("reach needs a non-empty repertoire")
    target = np.asarray(target, dtype=float)
    tol = _tolerance(cfg, tolerance, evaluator)
    start = repertoire.nearest_behavior(target, k=1, use_control_dims_only=True)[0]
    b0 = start.compensated_behavior[list(repertoire.control_dims)]
    return descend(repertoire, start.genotype, b0, target, evaluator, cfg, tol, cfg.max_iterations)


def cross_gap(repertoire: Repertoire, g_a, b_d, real_evaluator, cfg: JacobianConfig, tolerance: float | None = None):
    """Adapt action ``g_a`` until its behavior under ``real_evaluator`` matches ``b_d``.

    The start is the real observation of ``g_a``; the Jacobians still come from
    the repertoire. When ``g_a`` is archived, the gap between its observation
    and its expectation is held fixed as the Jacobian anchor offset.
    Raises ``ContractError`` if ``g_a`` is invalid in reality.
    """
    g_a = np.asarray(g_a, dtype=float)
    ev = _evaluate(real_evaluator, g_a)
    if not ev.valid:
        raise ContractError(f"action is invalid under the real evaluator ({ev.failure_reason})")
    tol = _tolerance(cfg, tolerance, real_evaluator)
    ctrl = list(repertoire.control_dims)
    b_a = np.asarray(ev.behavior, dtype=float)[ctrl]
    offset = None
    if len(repertoire):
        hits = np.flatnonzero(np.all(repertoire.genotypes == g_a, axis=1))
        if len(hits):
            offset = b_a - repertoire.expected_behaviors[int(hits[0]), ctrl]
    return descend(repertoire, g_a, b_a, b_d, real_evaluator, cfg, tol, cfg.max_iterations, offset)


def _tolerance(cfg, tolerance, evaluator) -> float:
    if tolerance is not None:
        return float(tolerance)
    if cfg.tolerance is not None:
        return float(cfg.tolerance)
    if hasattr(evaluator, "tolerance"):
        return float(evaluator.tolerance)
    raise ContractError("no success tolerance given")


def update_weights(genotypes, g_a, lam: float, kernel_width: float = KERNEL_WIDTH) -> np.ndarray:
    d = (np.atleast_2d(np.asarray(genotypes, dtype=float)) - np.asarray(g_a, dtype=float)) / kernel_width
    return np.exp(-0.5 * lam * np.einsum("ij,ij->i", d, d))


def update_repertoire(
    repertoire: Repertoire,
    g_a,
    b_a,
    lam: float,
    quality: float = 0.0,
    rule: str = GAP_TRANSFER,
    expected_a=None,
    only_tested: bool = False,
    kernel_width: float = KERNEL_WIDTH,
) -> int:
    """Fold one reality-gap observation into every compensation term.

    ``b_a`` is the observed behavior of ``g_a`` (full vector, or control dims
    only when ``g_a`` is already archived). Weights are
    ``exp(-lam |g_i - g_a|^2 / (2 s^2))`` with ``s = kernel_width``. The
    correction applied to individual ``i`` on the control dims is, per ``rule``:

    ``gap_transfer``        ``w_i (b_a - e_a)``, the gap observed at ``g_a``
    ``toward_observation``  ``w_i (b_a - e_i)``
    ``literal``             ``w_i (e_i - b_a)``

    where ``e`` is the current compensated expectation. ``expected_a`` supplies
    ``e_a`` for an action not yet archived (its simulated expectation); without
    it a new trial carries no transferable gap. Every rule leaves the tested
    action's expectation equal to the observation when it is archived, except
    ``literal``. ``only_tested`` restricts the update to the tested action.
    Returns the number of compensation vectors that changed; ``lam == 0`` is a
    no-op.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractError("confidence must lie in [0, 1]")
    if rule not in UPDATE_RULES:
        raise ContractError(f"unknown update rule {rule!r}")
    if kernel_width <= 0:
        raise ContractError("kernel_width must be positive")
    if lam == 0.0:
        return 0
    ctrl = list(repertoire.control_dims)
    g_a = np.asarray(g_a, dtype=float)
    b_a = np.asarray(b_a, dtype=float)
    b_ctrl = b_a[ctrl] if b_a.shape == (repertoire.behavior_dim,) else b_a
    if b_ctrl.shape != (len(ctrl),):
        raise ContractError("observed behavior has the wrong length")

    hits = np.flatnonzero(np.all(repertoire.genotypes == g_a, axis=1)) if len(repertoire) else []
    if len(hits):
        a = int(hits[0])
        e_a = repertoire.expected_behaviors[a, ctrl]
    else:
        if b_a.shape != (repertoire.behavior_dim,):
            raise ContractError("a new trial needs its full observed behavior")
        e_a = b_ctrl
        if expected_a is not None:
            e_a = np.asarray(expected_a, dtype=float)
            if e_a.shape == (repertoire.behavior_dim,):
                e_a = e_a[ctrl]
        repertoire.append(Individual(g_a, b_a, quality))
        a = len(repertoire) - 1
        # the archived trial itself must match the observation exactly
        repertoire._C[a] = 0.0

    expected = repertoire.expected_behaviors[:, ctrl]
    w = update_weights(repertoire.genotypes, g_a, lam, kernel_width)
    if only_tested:
        w = np.zeros_like(w)
        w[a] = 1.0
    if rule == GAP_TRANSFER:
        delta = w[:, None] * (b_ctrl - e_a)[None, :]
        # the tested action lands exactly on its observation
        delta[a] = b_ctrl - expected[a]
    elif rule == TOWARD_OBSERVATION:
        delta = w[:, None] * (b_ctrl[None, :] - expected)
    else:
        delta = w[:, None] * (expected - b_ctrl[None, :])
    full = np.zeros((len(repertoire), repertoire.behavior_dim))
    full[:, ctrl] = delta
    before = repertoire.compensations.copy()
    repertoire.add_compensation(full)
    return int(np.count_nonzero(np.any(repertoire.compensations != before, axis=1)))
