import numpy as np
import pytest

from qdreach.archive import Individual, Repertoire
from qdreach.sim import Evaluation

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class ToyDomain:
    """Every genotype is valid; behavior is a fixed linear image of the genotype."""

    name = "toy"

    def __init__(self, n=3, m=4, l_repertoire=0.05, valid=True, tolerance=1e-9):
        rng = np.random.default_rng(123)
        self.A = rng.normal(size=(m, n))
        self.genotype_dim = n
        self.behavior_dim = m
        self.control_dims = (0, 1)
        self.l_repertoire = l_repertoire
        self.valid = valid
        self.tolerance = tolerance
        self.calls = 0

    def behavior_bounds(self):
        s = np.abs(self.A).sum(axis=1) + 1.0
        return np.stack([-s, s], axis=1)

    def behavior(self, g):
        return self.A @ np.asarray(g, dtype=float)

    def evaluate_many(self, G):
        G = np.atleast_2d(G)
        self.calls += len(G)
        if not self.valid:
            return [Evaluation(False, failure_reason="joint_limit") for _ in G]
        return [Evaluation(True, self.behavior(g), float(-np.sum((g - 0.5) ** 2))) for g in G]

    def evaluate(self, g):
        return self.evaluate_many(np.asarray(g)[None, :])[0]


class MapEvaluator:
    """Wraps an arbitrary map ``g -> behavior`` as an evaluator."""

    def __init__(self, fn, tolerance=1e-9, valid=None):
        self.fn = fn
        self.tolerance = tolerance
        self.valid = valid
        self.calls = 0

    def evaluate(self, g):
        self.calls += 1
        g = np.asarray(g, dtype=float)
        if self.valid is not None and not self.valid(g):
            return Evaluation(False, failure_reason="joint_limit")
        return Evaluation(True, np.asarray(self.fn(g), dtype=float), 0.0)


def repertoire_from_map(fn, genotypes, bounds, l_repertoire=0.01):
    genotypes = np.asarray(genotypes, dtype=float)
    rep = Repertoire(genotype_dim=genotypes.shape[1], behavior_bounds=bounds, l_repertoire=l_repertoire)
    for g in genotypes:
        rep.append(Individual(g, fn(g), 0.0))
    return rep


@pytest.fixture
def toy_domain():
    return ToyDomain()
