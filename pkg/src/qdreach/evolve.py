"""The "arch_novelty" quality-diversity loop and its uniform-random control.

Parents are drawn from the repertoire proportionally to novelty, varied with
SBX crossover followed by polynomial mutation, evaluated, and offered to the
repertoire under local competition. Novelty of every archived action is then
recomputed against the archive plus the generation's valid offspring.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .archive import DEFAULT_EPS_Q, Individual, Repertoire, insert, normalize, novelty_scores, silverman_bandwidth

log = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
SELECTION_DELTA = 1e-6
REPORT_FIELDS = ("generation", "archive_size", "mean_quality", "evaluations_used", "invalid_count")


class InitializationError(RuntimeError):
    """No valid action was found within the seeding cap."""


@dataclass
class QdConfig:
    population_size: int = 240
    generations: int = 200
    mutation_rate: float = 0.2
    crossover_rate: float = 0.1
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0
    l_repertoire: float | None = None
    eps_q: float = DEFAULT_EPS_Q
    seed: int = 0
    rng_algorithm: str = RNG_ALGORITHM
    max_seed_generations: int = 100
    # draw parents from the archive plus the last valid offspring
    parents_from_population: bool = False
    # score novelty on the control dims only instead of the full descriptor
    novelty_control_dims_only: bool = False

    def __post_init__(self):
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.eps_q < 0:
            raise ValueError("eps_q must be non-negative")
        if self.max_seed_generations < 1:
            raise ValueError("max_seed_generations must be at least 1")
        if self.rng_algorithm != RNG_ALGORITHM:
            raise ValueError(f"only the {RNG_ALGORITHM} generator is supported")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    records: list[dict] = field(default_factory=list)
    seed_evaluations: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for rec in self.records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        recs = []
        for row in rows:
            recs.append(
                {
                    "generation": int(row["generation"]),
                    "archive_size": int(row["archive_size"]),
                    "mean_quality": float(row["mean_quality"]),
                    "evaluations_used": int(row["evaluations_used"]),
                    "invalid_count": int(row["invalid_count"]),
                }
            )
        return cls(recs)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def sbx_crossover(p1, p2, crossover_rate: float, eta_c: float, rng: np.random.Generator):
    """Simulated binary crossover applied gene-wise with probability ``crossover_rate``.

    Accepts single genotypes or stacked ``(P, n)`` batches. Children are
    swapped at random per gene so each child is unbiased around the parents'
    midpoint; results are clamped to the unit box.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise ValueError(f"parent shapes differ: {p1.shape} vs {p2.shape}")
    u = rng.random(p1.shape)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta_c + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta_c + 1.0)),
    )
    apply = rng.random(p1.shape) < crossover_rate
    swap = rng.random(p1.shape) < 0.5
    c1 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
    c2 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
    c1, c2 = np.where(swap, c2, c1), np.where(swap, c1, c2)
    c1 = np.where(apply, np.clip(c1, 0.0, 1.0), p1)
    c2 = np.where(apply, np.clip(c2, 0.0, 1.0), p2)
    return c1, c2


def poly_mutation(g, mutation_rate: float, eta_m: float, rng: np.random.Generator):
    """Bounded polynomial mutation on ``[0, 1]``, gene-wise with probability ``mutation_rate``."""
    g = np.asarray(g, dtype=float)
    u = rng.random(g.shape)
    apply = rng.random(g.shape) < mutation_rate
    mpow = 1.0 / (eta_m + 1.0)
    low = u < 0.5
    xy_low = (1.0 - g) ** (eta_m + 1.0)
    xy_high = g ** (eta_m + 1.0)
    with np.errstate(invalid="ignore"):
        dq_low = (2.0 * u + (1.0 - 2.0 * u) * xy_low) ** mpow - 1.0
        dq_high = 1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy_high) ** mpow
    dq = np.where(low, dq_low, dq_high)
    return np.where(apply, np.clip(g + dq, 0.0, 1.0), g)


def selection_weights(novelties) -> np.ndarray:
    """Shift novelty scores to strictly positive sampling weights."""
    nov = np.asarray(novelties, dtype=float)
    if nov.size == 0:
        return nov
    return nov - nov.min() + SELECTION_DELTA


def select_parents(repertoire: Repertoire, count: int, rng: np.random.Generator, weights=None, pool=None):
    """Draw ``count`` genotypes with replacement, proportionally to ``weights``.

    Weights default to the shifted novelty of the archived actions; ``pool``
    overrides the candidate genotypes (it must match ``weights``). When the
    pool holds fewer than ``count`` genotypes the shortfall is filled with
    uniform-random ones.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if pool is None:
        pool = repertoire.genotypes
        if weights is None:
            weights = selection_weights(repertoire.novelties)
    elif weights is None:
        raise ValueError("explicit pools need explicit weights")
    pool = np.asarray(pool, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = repertoire.genotype_dim
    drawn = min(len(pool), count)
    if drawn == 0:
        return rng.random((count, n))
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("selection weights must be non-negative with positive mass")
    idx = rng.choice(len(pool), size=drawn, replace=True, p=weights / weights.sum())
    parents = pool[idx]
    if drawn < count:
        parents = np.vstack([parents, rng.random((count - drawn, n))])
    return parents


def vary(parents: np.ndarray, cfg: QdConfig, rng: np.random.Generator) -> np.ndarray:
    """Pair parents in order, cross each pair into two children, then mutate all."""
    P = len(parents)
    half = P // 2
    c1, c2 = sbx_crossover(parents[0 : 2 * half : 2], parents[1 : 2 * half : 2], cfg.crossover_rate, cfg.sbx_eta, rng)
    kids = np.empty_like(parents)
    kids[0 : 2 * half : 2] = c1
    kids[1 : 2 * half : 2] = c2
    if P % 2:
        kids[-1] = parents[-1]
    return poly_mutation(kids, cfg.mutation_rate, cfg.mutation_eta, rng)


class _Loop:
    def __init__(self, cfg: QdConfig, domain):
        self.cfg = cfg
        self.domain = domain
        self.rep = Repertoire.for_domain(domain, cfg.l_repertoire)
        self.report = RunReport()
        self.evaluations = 0
        self.last_pop = np.zeros((0, domain.genotype_dim))
        self.last_pop_nov = np.zeros(0)

    def _norm(self, behaviors):
        dims = self.rep.control_dims if self.cfg.novelty_control_dims_only else None
        return self.rep.normalized(behaviors, dims=dims)

    def evaluate_and_insert(self, genotypes: np.ndarray) -> int:
        evs = self.domain.evaluate_many(genotypes)
        self.evaluations += len(genotypes)
        valid = [i for i, e in enumerate(evs) if e.valid]
        pop_b = np.array([evs[i].behavior for i in valid]).reshape(len(valid), self.rep.behavior_dim)
        pop_norm = self._norm(pop_b)
        pop_nov = np.zeros(len(valid))
        if len(valid):
            pool = np.vstack([self._norm(self.rep.expected_behaviors), pop_norm])
            pop_nov = novelty_scores(pop_norm, pool, silverman_bandwidth(pool), dtype=np.float32)
        for j, i in enumerate(valid):
            ind = Individual(genotypes[i], evs[i].behavior, evs[i].quality, novelty=pop_nov[j])
            insert(self.rep, ind, self.cfg.eps_q)
        self.last_pop = genotypes[valid]
        self.last_pop_nov = pop_nov
        if len(self.rep):
            pool = np.vstack([self._norm(self.rep.expected_behaviors), pop_norm])
            h = silverman_bandwidth(pool)
            self.rep.set_novelties(
                novelty_scores(self._norm(self.rep.expected_behaviors), pool, h, dtype=np.float32)
            )
        return len(genotypes) - len(valid)

    def seed(self):
        P = self.cfg.population_size
        for s in range(self.cfg.max_seed_generations):
            rng = _rng(self.cfg.seed, 0, s)
            self.evaluate_and_insert(rng.random((P, self.domain.genotype_dim)))
            if len(self.rep):
                log.info("seeded repertoire after %d generation(s)", s + 1)
                self.report.seed_evaluations = self.evaluations
                return
        raise InitializationError(
            f"no valid action in {self.cfg.max_seed_generations} seeding generations of {P}"
        )

    def parents(self, rng):
        cfg = self.cfg
        if cfg.parents_from_population and len(self.last_pop):
            pool = np.vstack([self.rep.genotypes, self.last_pop])
            weights = selection_weights(np.concatenate([self.rep.novelties, self.last_pop_nov]))
            return select_parents(self.rep, cfg.population_size, rng, weights=weights, pool=pool)
        return select_parents(self.rep, cfg.population_size, rng)

    def run(self, offspring):
        self.seed()
        for t in range(1, self.cfg.generations + 1):
            rng = _rng(self.cfg.seed, 1, t)
            invalid = self.evaluate_and_insert(offspring(rng))
            self.report.records.append(
                {
                    "generation": t,
                    "archive_size": len(self.rep),
                    "mean_quality": float(np.mean(self.rep.qualities)),
                    "evaluations_used": self.evaluations,
                    "invalid_count": invalid,
                }
            )
            if t % 50 == 0:
                log.info("generation %d: archive %d", t, len(self.rep))
        return self.rep, self.report


def run_qd(config: QdConfig, domain) -> tuple[Repertoire, RunReport]:
    loop = _Loop(config, domain)
    return loop.run(lambda rng: vary(loop.parents(rng), config, rng))


def run_random_baseline(config: QdConfig, domain) -> tuple[Repertoire, RunReport]:
    """Same loop and budget as :func:`run_qd`, but offspring are uniform-random genotypes."""
    loop = _Loop(config, domain)
    return loop.run(lambda rng: rng.random((config.population_size, domain.genotype_dim)))
