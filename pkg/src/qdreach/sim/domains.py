"""Desk-scale evaluation domains: ball throw and lever (joystick analog).

Both domains decode a genotype in ``[0, 1]^n`` into a cubic joint trajectory
from the home pose at rest, check it against the arm limits and the ground
plane, and describe the outcome as a behavior vector whose first two entries
form the control subspace.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .arm import ArmModel, forward_kinematics, gripper_velocity
from .ballistics import GRAVITY, flight_time
from .trajectory import CubicTrajectory

THROW = "throw"
LEVER = "lever"
FAILURE_REASONS = ("joint_limit", "velocity_limit", "ground_collision", "no_contact", "no_landing")

_LIMIT_SLACK = 1e-12
# fine grid used to locate the deepest lever penetration between two samples
_REFINE_POINTS = 65


@dataclass(frozen=True)
class GapConfig:
    """Injected mis-configuration: joint angle offsets and a late gripper release."""

    joint_offsets: tuple[float, ...] = ()
    release_delay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "joint_offsets", tuple(float(x) for x in self.joint_offsets))
        if self.release_delay < 0:
            raise ValueError("release_delay must be non-negative")

    def offsets(self, joint_count: int) -> np.ndarray:
        if not self.joint_offsets:
            return np.zeros(joint_count)
        if len(self.joint_offsets) != joint_count:
            raise ValueError(f"gap has {len(self.joint_offsets)} offsets for {joint_count} joints")
        return np.asarray(self.joint_offsets, dtype=float)

    @property
    def is_zero(self) -> bool:
        return not any(self.joint_offsets) and self.release_delay == 0

    def to_dict(self) -> dict:
        return {"joint_offsets": list(self.joint_offsets), "release_delay": self.release_delay}

    @classmethod
    def from_dict(cls, d: dict) -> "GapConfig":
        unknown = set(d) - {"joint_offsets", "release_delay"}
        if unknown:
            raise ValueError(f"unknown gap fields: {sorted(unknown)}")
        return cls(tuple(d.get("joint_offsets", ())), float(d.get("release_delay", 0.0)))


@dataclass(frozen=True)
class DomainConfig:
    kind: str = THROW
    arm: ArmModel = field(default_factory=ArmModel)
    duration_range: tuple[float, float] = (0.3, 2.0)
    lever_duration: float = 3.0
    samples: int = 100
    lever_pivot: tuple[float, float, float] = (0.75, 0.25, 0.35)
    lever_length: float = 0.15
    contact_radius: float = 0.08
    angle_gain: float = 6.0
    angle_clamp: float = 0.6
    gravity: float = GRAVITY
    robustness_replicas: int = 10
    robustness_noise: float = 0.01
    landing_extent: float = 4.5
    l_repertoire: float | None = None
    # commanded final state range as a multiple of the joint limits
    command_span: float | None = None

    def __post_init__(self):
        if self.kind not in (THROW, LEVER):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.contact_radius <= 0:
            raise ValueError("contact radius must be positive")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError("duration range must satisfy 0 < min <= max")
        if self.samples < 2:
            raise ValueError("need at least two trajectory samples")
        if self.command_span is not None and self.command_span <= 0:
            raise ValueError("command span must be positive")

    @property
    def genotype_dim(self) -> int:
        J = self.arm.joint_count
        return 2 * J + 1 if self.kind == THROW else 2 * J

    @property
    def waypoint_fractions(self) -> tuple[float, ...]:
        return (0.25, 0.5, 0.75) if self.kind == THROW else (1 / 3, 2 / 3)

    @property
    def behavior_dim(self) -> int:
        return 2 + 3 * len(self.waypoint_fractions)

    @property
    def control_dims(self) -> tuple[int, ...]:
        return (0, 1)

    @property
    def lever_tip(self) -> np.ndarray:
        return np.asarray(self.lever_pivot, dtype=float) + np.array([0.0, 0.0, self.lever_length])

    @property
    def repertoire_threshold(self) -> float:
        if self.l_repertoire is not None:
            return float(self.l_repertoire)
        return 0.07 if self.kind == THROW else 0.05

    @property
    def span(self) -> float:
        """Commands overshoot the limits in the throw domain so most random draws are invalid."""
        if self.command_span is not None:
            return float(self.command_span)
        return 2.0 if self.kind == THROW else 1.0

    @property
    def success_tolerance(self) -> float:
        """Control-space error under which an action counts as reaching its goal."""
        return 0.05 if self.kind == THROW else float(np.deg2rad(10.0))

    def behavior_bounds(self) -> np.ndarray:
        """Per-dimension ``(min, max)`` used to normalize behavior distances."""
        if self.kind == THROW:
            ctrl = [(-self.landing_extent, self.landing_extent)] * 2
        else:
            ctrl = [(-self.angle_clamp, self.angle_clamp)] * 2
        r = self.arm.reach
        z0 = self.arm.base_height
        box = [(-r, r), (-r, r), (z0 - r, z0 + r)]
        return np.array(ctrl + box * len(self.waypoint_fractions), dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arm"] = asdict(self.arm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown domain fields: {sorted(unknown)}")
        if "arm" in d:
            arm = dict(d["arm"])
            for key in ("link_lengths", "home", "axes"):
                if key in arm:
                    arm[key] = tuple(arm[key])
            d["arm"] = ArmModel(**arm)
        for key in ("duration_range", "lever_pivot"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Evaluation:
    valid: bool
    behavior: np.ndarray | None = None
    quality: float | None = None
    failure_reason: str | None = None


@dataclass
class _Batch:
    """Vectorized evaluation outcome for ``P`` genotypes."""

    valid: np.ndarray
    reason: list
    behavior: np.ndarray
    quality: np.ndarray

    def unpack(self) -> list[Evaluation]:
        out = []
        for i, ok in enumerate(self.valid):
            if ok:
                out.append(Evaluation(True, self.behavior[i].copy(), float(self.quality[i])))
            else:
                out.append(Evaluation(False, failure_reason=self.reason[i]))
        return out


def _as_batch(G, n: int) -> np.ndarray:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[-1] != n:
        raise ValueError(f"genotype dimension {G.shape[-1]} != {n}")
    return G


def decode(cfg: DomainConfig, G) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine map from the unit box to final positions, velocities, and duration.

    Final positions and velocities cover ``span`` times the symmetric limit
    range; the limit checks then reject what the arm cannot do.
    """
    G = _as_batch(G, cfg.genotype_dim)
    arm = cfg.arm
    J = arm.joint_count
    qf = cfg.span * arm.position_limit * (2.0 * G[:, :J] - 1.0)
    vf = cfg.span * arm.velocity_limit * (2.0 * G[:, J : 2 * J] - 1.0)
    if cfg.kind == THROW:
        lo, hi = cfg.duration_range
        T = lo + (hi - lo) * G[:, 2 * J]
    else:
        T = np.full(G.shape[0], cfg.lever_duration)
    return qf, vf, T


def _trajectories(cfg: DomainConfig, G):
    qf, vf, T = decode(cfg, G)
    home = np.asarray(cfg.arm.home, dtype=float)
    return CubicTrajectory.fit(home, 0.0, qf, vf, T[:, None]), T


def _limit_failures(cfg, traj, T, off):
    """Sample-based limit and ground checks; returns (reason codes, samples)."""
    arm = cfg.arm
    ts = np.linspace(0.0, 1.0, cfg.samples)[None, :] * T[:, None]
    q = traj.position(ts) + off
    qd = traj.velocity(ts)
    ext = traj.position_extrema() + off
    with np.errstate(invalid="ignore"):
        over_ext = np.nan_to_num(np.abs(ext), nan=0.0) > arm.position_limit + _LIMIT_SLACK
    joint_bad = np.any(np.abs(q) > arm.position_limit + _LIMIT_SLACK, axis=(1, 2)) | np.any(
        over_ext, axis=(1, 2)
    )
    vel_bad = np.any(np.abs(qd) > arm.velocity_limit + _LIMIT_SLACK, axis=(1, 2))
    pos = forward_kinematics(arm, q)
    ground_bad = np.any(pos[..., 2] <= 0.0, axis=1)
    reason = np.where(
        joint_bad, "joint_limit", np.where(vel_bad, "velocity_limit", np.where(ground_bad, "ground_collision", ""))
    )
    return reason, ts, q, pos


def _waypoints(cfg, traj, T, off):
    tw = np.asarray(cfg.waypoint_fractions)[None, :] * T[:, None]
    return forward_kinematics(cfg.arm, traj.position(tw) + off).reshape(len(T), -1)


def throw_batch(cfg: DomainConfig, gap: GapConfig, G) -> _Batch:
    G = _as_batch(G, cfg.genotype_dim)
    arm = cfg.arm
    off = gap.offsets(arm.joint_count)
    traj, T = _trajectories(cfg, G)
    reason, ts, _, _ = _limit_failures(cfg, traj, T, off)

    t_rel = (T + gap.release_delay)[:, None]
    p_rel = forward_kinematics(arm, traj.position(t_rel) + off)[:, 0]
    v_rel = gripper_velocity(arm, traj, t_rel, offsets=off, clip_to_horizon=False)[:, 0]
    tf = flight_time(p_rel[:, 2], v_rel[:, 2], cfg.gravity)
    landed = np.isfinite(tf)
    landing = p_rel[:, :2] + v_rel[:, :2] * np.where(landed, tf, 0.0)[:, None]
    reason = np.where((reason == "") & ~landed, "no_landing", reason)

    behavior = np.concatenate([landing, _waypoints(cfg, traj, T, off)], axis=1)
    qdd = traj.acceleration(ts)
    quality = -np.mean(np.linalg.norm(qdd, axis=-1), axis=-1)
    valid = reason == ""
    return _Batch(valid, [r or None for r in reason], behavior, quality)


def _lever_angles(cfg: DomainConfig, traj, T, off):
    """Lever (roll, pitch) and a contact flag for each trajectory in the batch."""
    arm = cfg.arm
    P = len(T)
    tip = cfg.lever_tip
    ts = np.linspace(0.0, 1.0, cfg.samples)[None, :] * T[:, None]
    pos = forward_kinematics(arm, traj.position(ts) + off)
    dist = np.linalg.norm(pos - tip, axis=-1)
    contact = np.any(dist < cfg.contact_radius, axis=1)
    k = np.argmin(dist, axis=1)
    dt = T / (cfg.samples - 1)
    lo = np.clip(ts[np.arange(P), k] - dt, 0.0, T)
    hi = np.clip(ts[np.arange(P), k] + dt, 0.0, T)
    fine = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, _REFINE_POINTS)[None, :]
    fpos = forward_kinematics(arm, traj.position(fine) + off)
    j = np.argmin(np.linalg.norm(fpos - tip, axis=-1), axis=1)
    deepest = fpos[np.arange(P), j]
    disp = deepest[:, :2] - tip[:2]
    angles = np.clip(cfg.angle_gain * disp, -cfg.angle_clamp, cfg.angle_clamp)
    return np.where(contact[:, None], angles, 0.0), contact


def genotype_seed(g) -> int:
    """Stable 64-bit seed derived from the genotype's exact bit pattern."""
    g = np.ascontiguousarray(np.asarray(g, dtype="<f8"))
    return int.from_bytes(hashlib.blake2b(g.tobytes(), digest_size=8).digest(), "little")


def lever_batch(cfg: DomainConfig, gap: GapConfig, G) -> _Batch:
    G = _as_batch(G, cfg.genotype_dim)
    off = gap.offsets(cfg.arm.joint_count)
    traj, T = _trajectories(cfg, G)
    reason, _, _, _ = _limit_failures(cfg, traj, T, off)
    angles, contact = _lever_angles(cfg, traj, T, off)
    reason = np.where((reason == "") & ~contact, "no_contact", reason)
    valid = reason == ""
    behavior = np.concatenate([angles, _waypoints(cfg, traj, T, off)], axis=1)

    quality = np.full(len(G), np.nan)
    idx = np.flatnonzero(valid)
    if idx.size:
        R = cfg.robustness_replicas
        noisy = np.empty((idx.size, R, G.shape[1]))
        for row, i in enumerate(idx):
            rng = np.random.default_rng(genotype_seed(G[i]))
            noise = rng.uniform(-cfg.robustness_noise, cfg.robustness_noise, size=(R, G.shape[1]))
            noisy[row] = np.clip(G[i] + noise, 0.0, 1.0)
        ntraj, nT = _trajectories(cfg, noisy.reshape(-1, G.shape[1]))
        nang, _ = _lever_angles(cfg, ntraj, nT, off)
        spread = np.std(nang.reshape(idx.size, R, 2), axis=1)
        quality[idx] = -np.mean(spread, axis=1)
    return _Batch(valid, [r or None for r in reason], behavior, quality)


def eval_throw(arm: ArmModel, cfg: DomainConfig, gap: GapConfig, g) -> Evaluation:
    return throw_batch(replace(cfg, kind=THROW, arm=arm), gap, g).unpack()[0]


def eval_lever(arm: ArmModel, cfg: DomainConfig, gap: GapConfig, g) -> Evaluation:
    return lever_batch(replace(cfg, kind=LEVER, arm=arm), gap, g).unpack()[0]


class Domain:
    """An evaluation function bound to a domain config and a (possibly zero) gap."""

    def __init__(self, config: DomainConfig | str = THROW, gap: GapConfig | None = None):
        if isinstance(config, str):
            config = DomainConfig(kind=config)
        self.config = config
        self.gap = gap or GapConfig()
        self.gap.offsets(config.arm.joint_count)
        if config.kind == LEVER and self.gap.release_delay:
            raise ValueError("release delay only applies to the throw domain")

    @property
    def name(self) -> str:
        return self.config.kind

    @property
    def genotype_dim(self) -> int:
        return self.config.genotype_dim

    @property
    def behavior_dim(self) -> int:
        return self.config.behavior_dim

    @property
    def control_dims(self) -> tuple[int, ...]:
        return self.config.control_dims

    @property
    def l_repertoire(self) -> float:
        return self.config.repertoire_threshold

    @property
    def tolerance(self) -> float:
        return self.config.success_tolerance

    def behavior_bounds(self) -> np.ndarray:
        return self.config.behavior_bounds()

    def with_gap(self, gap: GapConfig) -> "Domain":
        return Domain(self.config, gap)

    def config_hash(self) -> str:
        return self.config.config_hash()

    def evaluate_many(self, G) -> list[Evaluation]:
        G = _as_batch(G, self.genotype_dim)
        if G.shape[0] == 0:
            return []
        fn = throw_batch if self.config.kind == THROW else lever_batch
        return fn(self.config, self.gap, G).unpack()

    def evaluate(self, g) -> Evaluation:
        return self.evaluate_many(np.asarray(g, dtype=float)[None, :])[0]

    def __call__(self, g) -> Evaluation:
        return self.evaluate(g)
