"""Unstructured action repertoire with novelty scoring and local competition.

Behaviors are compared after per-dimension min-max normalization by the
domain's declared bounds, so descriptors mixing meters and radians weigh each
dimension evenly. Genotypes already live in the unit box and are compared raw.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

FORMAT_VERSION = 1
H_MIN = 0.01
DEFAULT_EPS_Q = 1e-3
_SQRT_2PI = math.sqrt(2.0 * math.pi)
# rows of the pool processed per block when scoring novelty
_BLOCK = 2048


class ContractError(ValueError):
    """Raised when an operation is called outside its precondition."""


class RepertoireFormatError(ValueError):
    """A repertoire file that cannot be parsed; ``line`` is 1-based."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class Individual:
    genotype: np.ndarray
    behavior: np.ndarray
    quality: float
    novelty: float = 0.0
    compensation: np.ndarray | None = None
    id: int | None = None

    def __post_init__(self):
        self.genotype = np.asarray(self.genotype, dtype=float)
        self.behavior = np.asarray(self.behavior, dtype=float)
        if self.compensation is None:
            self.compensation = np.zeros_like(self.behavior)
        else:
            self.compensation = np.asarray(self.compensation, dtype=float)

    @property
    def compensated_behavior(self) -> np.ndarray:
        return self.behavior + self.compensation


class InsertOutcome(NamedTuple):
    status: str
    old_id: int | None = None


ADDED = "added"
REPLACED = "replaced"
REJECTED = "rejected"


def _check_bounds(bounds) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ContractError("bounds must be a (m, 2) array of (min, max)")
    if np.any(bounds[:, 1] - bounds[:, 0] <= 0):
        raise ContractError("every behavior dimension needs a non-zero width")
    return bounds


def normalize(values, bounds) -> np.ndarray:
    """Min-max normalize behavior vector(s) by per-dimension ``bounds``."""
    bounds = _check_bounds(bounds)
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != len(bounds):
        raise ContractError(f"behavior has {values.shape[-1]} dims, bounds have {len(bounds)}")
    return (values - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])


def behavior_distance(a, b, bounds) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"behavior shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(normalize(a, bounds) - normalize(b, bounds)))


def silverman_bandwidth(points) -> float:
    """Scalar Gaussian-kernel width for already-normalized ``points`` of shape (N, d).

    Multivariate rule of thumb with the mean per-dimension sample standard
    deviation as spread, floored at ``H_MIN``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    N, d = points.shape
    if N == 0:
        raise ContractError("bandwidth of an empty set")
    if N == 1:
        return H_MIN
    sigma = float(np.mean(np.std(points, axis=0, ddof=1)))
    if sigma == 0.0:
        return H_MIN
    h = sigma * (4.0 / ((d + 2) * N)) ** (1.0 / (d + 4))
    return max(h, H_MIN)


def gaussian_kernel(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def novelty_scores(queries, pool, h: float, dtype=np.float64) -> np.ndarray:
    """Kernel-density novelty of each query row against every pool row.

    ``1 - sum_i K(|pool_i - q| / h) / (N h)`` with a standard Gaussian ``K``.
    Inputs must already be normalized. ``dtype=np.float32`` trades about seven
    significant digits for a ~4x faster archive-wide recompute; the density
    sums are always accumulated in float64.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=dtype))
    pool = np.atleast_2d(np.asarray(pool, dtype=dtype))
    N = pool.shape[0]
    if N == 0:
        raise ContractError("novelty needs a non-empty pool")
    if h <= 0:
        raise ContractError("kernel width must be positive")
    if queries.shape[0] == 0:
        return np.zeros(0)
    density = np.zeros(queries.shape[0])
    qsq = np.einsum("ij,ij->i", queries, queries)
    scale = dtype(-0.5 / (h * h))
    for start in range(0, N, _BLOCK):
        block = pool[start : start + _BLOCK]
        bsq = np.einsum("ij,ij->i", block, block)
        d2 = qsq[:, None] + bsq[None, :] - 2.0 * (queries @ block.T)
        np.maximum(d2, 0.0, out=d2)
        d2 *= scale
        np.exp(d2, out=d2)
        density += d2.sum(axis=1, dtype=np.float64)
    return 1.0 - density / (_SQRT_2PI * N * h)


def novelty(candidate, pool, h: float) -> float:
    """Single-candidate form of :func:`novelty_scores`, with exact distances."""
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if pool.shape[0] == 0:
        raise ContractError("novelty needs a non-empty pool")
    if h <= 0:
        raise ContractError("kernel width must be positive")
    dist = np.linalg.norm(pool - np.asarray(candidate, dtype=float), axis=1)
    return float(1.0 - gaussian_kernel(dist / h).sum() / (pool.shape[0] * h))


@dataclass
class Repertoire:
    """Growable archive of individuals backed by contiguous arrays.

    Rows are kept in slot order; a replacement reuses the incumbent's slot so
    iteration order only changes by appending.
    """

    genotype_dim: int
    behavior_bounds: np.ndarray
    l_repertoire: float
    control_dims: tuple[int, ...] = (0, 1)
    next_id: int = 0
    _size: int = field(default=0, repr=False)

    def __post_init__(self):
        self.behavior_bounds = _check_bounds(self.behavior_bounds)
        self.control_dims = tuple(int(c) for c in self.control_dims)
        m = self.behavior_dim
        if not self.control_dims or any(c < 0 or c >= m for c in self.control_dims):
            raise ContractError("control_dims must be a non-empty subset of the behavior dims")
        if len(set(self.control_dims)) != len(self.control_dims):
            raise ContractError("control_dims must not repeat")
        cap = 64
        self._G = np.empty((cap, self.genotype_dim))
        self._B = np.empty((cap, m))
        self._C = np.empty((cap, m))
        self._q = np.empty(cap)
        self._nov = np.empty(cap)
        self._ids = np.empty(cap, dtype=np.int64)
        self._size = 0

    @classmethod
    def for_domain(cls, domain, l_repertoire: float | None = None) -> "Repertoire":
        return cls(
            genotype_dim=domain.genotype_dim,
            behavior_bounds=domain.behavior_bounds(),
            l_repertoire=domain.l_repertoire if l_repertoire is None else l_repertoire,
            control_dims=domain.control_dims,
        )

    # -- storage -------------------------------------------------------
    @property
    def behavior_dim(self) -> int:
        return len(self.behavior_bounds)

    def __len__(self) -> int:
        return self._size

    def _grow(self):
        cap = 2 * len(self._ids)
        for name in ("_G", "_B", "_C", "_q", "_nov", "_ids"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)

    @property
    def genotypes(self) -> np.ndarray:
        return self._G[: self._size]

    @property
    def behaviors(self) -> np.ndarray:
        return self._B[: self._size]

    @property
    def compensations(self) -> np.ndarray:
        return self._C[: self._size]

    @property
    def expected_behaviors(self) -> np.ndarray:
        """Simulated behaviors plus accumulated gap compensation."""
        return self._B[: self._size] + self._C[: self._size]

    @property
    def qualities(self) -> np.ndarray:
        return self._q[: self._size]

    @property
    def novelties(self) -> np.ndarray:
        return self._nov[: self._size]

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self._size]

    def index_of(self, ind_id: int) -> int:
        hits = np.flatnonzero(self.ids == ind_id)
        if not hits.size:
            raise KeyError(ind_id)
        return int(hits[0])

    def __getitem__(self, idx: int) -> Individual:
        if not -self._size <= idx < self._size:
            raise IndexError(idx)
        idx %= self._size
        return Individual(
            genotype=self._G[idx].copy(),
            behavior=self._B[idx].copy(),
            quality=float(self._q[idx]),
            novelty=float(self._nov[idx]),
            compensation=self._C[idx].copy(),
            id=int(self._ids[idx]),
        )

    def get(self, ind_id: int) -> Individual:
        return self[self.index_of(ind_id)]

    def __iter__(self):
        for i in range(self._size):
            yield self[i]

    @property
    def individuals(self) -> list[Individual]:
        return list(self)

    def _validate(self, ind: Individual):
        if ind.genotype.shape != (self.genotype_dim,):
            raise ContractError(f"genotype must have length {self.genotype_dim}")
        if not np.all(np.isfinite(ind.genotype)) or np.any((ind.genotype < 0) | (ind.genotype > 1)):
            raise ContractError("genotype values must be finite and inside [0, 1]")
        if ind.behavior.shape != (self.behavior_dim,) or ind.compensation.shape != (self.behavior_dim,):
            raise ContractError(f"behavior must have length {self.behavior_dim}")

    def _write(self, idx: int, ind: Individual, ind_id: int):
        self._G[idx] = ind.genotype
        self._B[idx] = ind.behavior
        self._C[idx] = ind.compensation
        self._q[idx] = ind.quality
        self._nov[idx] = ind.novelty
        self._ids[idx] = ind_id

    def append(self, ind: Individual) -> int:
        """Store ``ind`` unconditionally and return its id."""
        self._validate(ind)
        if ind.id is None:
            ind_id = self.next_id
        else:
            ind_id = int(ind.id)
            if self._size and np.any(self.ids == ind_id):
                raise ContractError(f"duplicate individual id {ind_id}")
        if self._size == len(self._ids):
            self._grow()
        self._write(self._size, ind, ind_id)
        self._size += 1
        self.next_id = max(self.next_id, ind_id + 1)
        return ind_id

    def set_novelties(self, values):
        self._nov[: self._size] = values

    def add_compensation(self, delta):
        """Add a ``(N, m)`` correction to every compensation vector."""
        self._C[: self._size] += delta

    # -- queries -------------------------------------------------------
    def normalized(self, values=None, dims=None) -> np.ndarray:
        values = self.expected_behaviors if values is None else values
        norm = normalize(values, self.behavior_bounds)
        return norm if dims is None else norm[..., list(dims)]

    def _order(self, dist: np.ndarray) -> np.ndarray:
        return np.lexsort((self.ids, dist))

    def behavior_distances(self, target, use_control_dims_only: bool = False) -> np.ndarray:
        target = np.asarray(target, dtype=float)
        dims = self.control_dims if use_control_dims_only else None
        if use_control_dims_only and target.shape == (len(self.control_dims),):
            full = np.zeros(self.behavior_dim)
            full[list(self.control_dims)] = target
            target = full
        if target.shape != (self.behavior_dim,):
            raise ContractError(f"target must have {self.behavior_dim} dims")
        diff = self.normalized(dims=dims) - self.normalized(target, dims=dims)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def nearest_behavior(self, target, k: int = 1, use_control_dims_only: bool = False):
        """The ``k`` individuals closest to ``target`` in normalized behavior space.

        ``target`` may be a full behavior or, with ``use_control_dims_only``,
        just its control components. Ties go to the lower id.
        """
        if self._size == 0:
            raise ContractError("nearest query on an empty repertoire")
        if k < 1:
            raise ContractError("k must be at least 1")
        dist = self.behavior_distances(target, use_control_dims_only)
        order = self._order(dist)[:k]
        return [self[int(i)] for i in order]

    def neighbors_in_genotype_space(self, g_c, K: int, eps: float) -> list[Individual]:
        """Up to ``K`` individuals with ``0 < |g - g_c| < eps``, nearest first."""
        return [self[int(i)] for i in self.genotype_neighbor_indices(g_c, K, eps)]

    def genotype_neighbor_indices(self, g_c, K: int, eps: float) -> np.ndarray:
        if K < 1 or eps <= 0:
            raise ContractError("need K >= 1 and eps > 0")
        if self._size == 0:
            return np.zeros(0, dtype=int)
        g_c = np.asarray(g_c, dtype=float)
        diff = self.genotypes - g_c
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        keep = (dist < eps) & np.any(diff != 0.0, axis=1)
        order = self._order(np.where(keep, dist, np.inf))
        order = order[keep[order]]
        return order[:K]

    # -- local competition ---------------------------------------------
    def insert(self, candidate: Individual, eps_q: float = DEFAULT_EPS_Q) -> InsertOutcome:
        return insert(self, candidate, eps_q)

    # -- persistence ---------------------------------------------------
    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n": self.genotype_dim,
            "m": self.behavior_dim,
            "l_repertoire": self.l_repertoire,
            "behavior_bounds": self.behavior_bounds.tolist(),
            "control_dims": list(self.control_dims),
            "next_id": self.next_id,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header())]
        ctrl = list(self.control_dims)
        for i in range(self._size):
            rec = {
                "id": int(self._ids[i]),
                "genotype": self._G[i].tolist(),
                "behavior": self._B[i].tolist(),
                "control_dims": ctrl,
                "quality": float(self._q[i]),
                "compensation": self._C[i].tolist(),
                "novelty": float(self._nov[i]),
            }
            lines.append(json.dumps(rec))
        return lines

    def save(self, path) -> None:
        save(self, path)

    def equals(self, other: "Repertoire") -> bool:
        """Field-for-field equality, including ids, order, and compensations."""
        if not isinstance(other, Repertoire):
            return False
        return self.to_lines() == other.to_lines()


def insert(repertoire: Repertoire, candidate: Individual, eps_q: float = DEFAULT_EPS_Q) -> InsertOutcome:
    """Add ``candidate`` if it is novel, or let it replace a clearly worse neighbor."""
    if eps_q < 0:
        raise ContractError("quality margin must be non-negative")
    if len(repertoire) == 0:
        repertoire.append(candidate)
        return InsertOutcome(ADDED)
    repertoire._validate(candidate)
    dist = repertoire.behavior_distances(candidate.compensated_behavior)
    nn = int(repertoire._order(dist)[0])
    if dist[nn] > repertoire.l_repertoire:
        repertoire.append(candidate)
        return InsertOutcome(ADDED)
    if candidate.quality > repertoire._q[nn] + eps_q:
        old_id = int(repertoire._ids[nn])
        new_id = repertoire.next_id if candidate.id is None else int(candidate.id)
        repertoire._write(nn, candidate, new_id)
        repertoire.next_id = max(repertoire.next_id, new_id + 1)
        return InsertOutcome(REPLACED, old_id)
    return InsertOutcome(REJECTED)


def _float_list(rec, key, length, path, lineno):
    vals = rec.get(key)
    if not isinstance(vals, list) or len(vals) != length:
        raise RepertoireFormatError(path, lineno, f"field {key!r} must be a list of {length} numbers")
    try:
        arr = np.array([float(v) for v in vals])
    except (TypeError, ValueError):
        raise RepertoireFormatError(path, lineno, f"field {key!r} holds a non-number") from None
    return arr


def save(repertoire: Repertoire, path) -> None:
    """Write the repertoire as JSON Lines: one header line, then one line per individual."""
    Path(path).write_text("\n".join(repertoire.to_lines()) + "\n", encoding="utf-8")


def load(path) -> Repertoire:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise RepertoireFormatError(path, 1, "missing header line")
    try:
        head = json.loads(lines[0])
        n, m = int(head["n"]), int(head["m"])
        bounds = np.asarray(head["behavior_bounds"], dtype=float)
        if head.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {head.get('format_version')!r}")
        rep = Repertoire(
            genotype_dim=n,
            behavior_bounds=bounds,
            l_repertoire=float(head["l_repertoire"]),
            control_dims=tuple(head.get("control_dims", (0, 1))),
        )
        next_id = int(head.get("next_id", 0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RepertoireFormatError(path, 1, f"bad header: {exc}") from None
    if rep.behavior_dim != m:
        raise RepertoireFormatError(path, 1, "header m does not match behavior_bounds")
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RepertoireFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise RepertoireFormatError(path, lineno, "record is not an object")
        for key in ("id", "genotype", "behavior", "quality", "compensation"):
            if key not in rec:
                raise RepertoireFormatError(path, lineno, f"missing field {key!r}")
        if list(rec.get("control_dims", rep.control_dims)) != list(rep.control_dims):
            raise RepertoireFormatError(path, lineno, "control_dims differ from the header")
        try:
            ind = Individual(
                genotype=_float_list(rec, "genotype", n, path, lineno),
                behavior=_float_list(rec, "behavior", m, path, lineno),
                quality=float(rec["quality"]),
                novelty=float(rec.get("novelty", 0.0)),
                compensation=_float_list(rec, "compensation", m, path, lineno),
                id=int(rec["id"]),
            )
            rep.append(ind)
        except (ContractError, TypeError, ValueError) as exc:
            if isinstance(exc, RepertoireFormatError):
                raise
            raise RepertoireFormatError(path, lineno, str(exc)) from None
    rep.next_id = max(rep.next_id, next_id)
    return rep
