"""Rigid-body docking: seeded random poses, pair-potential scoring, top-K.

Pose ``k`` of a job is a pure function of ``(seed, k)``: its random
stream is derived by mixing the two, so poses can be generated and scored
in any order, on any number of workers, with identical results.
"""

from __future__ import annotations

import csv
import io
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .core import COULOMB_F, STREAM_POSES, MolecularSystem, rng_for
from .potential import PotentialParams, combine, cutoff_shift, pair_terms
from .workers import WorkerPoolConfig, parallel_map_indexed, plan_chunks

# stands in for +inf so scores stay finite and sortable
CLASH_SCORE = sys.float_info.max
DEFAULT_POCKET_RADIUS = 1.5

POSES_HEADER = ("conformer_index", "score_kjmol", "qw", "qx", "qy", "qz", "tx_nm", "ty_nm", "tz_nm")


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = math.sin(angle / 2)
        return cls(math.cos(angle / 2), *(float(c) * s for c in axis)).normalized()

    @classmethod
    def uniform(cls, u1: float, u2: float, u3: float) -> "Quaternion":
        """Shoemake's map from three U(0,1) variates to a uniform rotation."""
        a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
        t1, t2 = 2.0 * math.pi * u2, 2.0 * math.pi * u3
        return cls(b * math.cos(t2), a * math.sin(t1), a * math.cos(t1), b * math.sin(t2)).normalized()

    def norm(self) -> float:
        return math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0:
            raise ValueError("zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])


@dataclass(frozen=True)
class Pose:
    conformer_index: int
    rotation: Quaternion
    translation: tuple[float, float, float]


@dataclass(frozen=True)
class ScoredPose:
    pose: Pose
    score: float
    clash: bool = False

    @property
    def conformer_index(self) -> int:
        return self.pose.conformer_index


@dataclass(frozen=True)
class DockingJob:
    receptor: MolecularSystem
    ligand: MolecularSystem
    n_conformers: int
    seed: int = 42
    pocket_center: tuple[float, float, float] | None = None
    pocket_radius: float = DEFAULT_POCKET_RADIUS
    pot: PotentialParams = PotentialParams()
    electrostatics_on: bool = True

    def __post_init__(self):
        if self.n_conformers < 1:
            raise ValueError("n_conformers must be >= 1")
        if not self.pocket_radius > 0:
            raise ValueError("pocket_radius must be positive")
        if len(self.receptor) == 0 or len(self.ligand) == 0:
            raise ValueError("receptor and ligand need at least one atom")
        if self.pot.periodic:
            raise ValueError("docking is non-periodic")
        if self.pocket_center is None:
            object.__setattr__(self, "pocket_center", tuple(float(c) for c in self.receptor.centroid()))


@dataclass
class DockResult:
    poses: list[ScoredPose]
    wall_seconds: float
    mode: str
    workers: int
    clashes: int = field(init=False)

    def __post_init__(self):
        self.clashes = sum(p.clash for p in self.poses)

    @property
    def scores(self) -> list[float]:
        return [p.score for p in self.poses]


def generate_pose(job: DockingJob, k: int) -> Pose:
    if not 0 <= k < job.n_conformers:
        raise IndexError(f"conformer index {k} outside [0, {job.n_conformers})")
    rng = rng_for(job.seed, STREAM_POSES, k)
    u = rng.random(3)
    rotation = Quaternion.uniform(*u)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    radius = job.pocket_radius * rng.random() ** (1.0 / 3.0)
    offset = np.asarray(job.pocket_center) + radius * direction
    return Pose(k, rotation, tuple(float(c) for c in offset))


def transform(positions: np.ndarray, pose: Pose, centroid: np.ndarray) -> np.ndarray:
    """Rotate about ``centroid`` and translate: R (x - c) + c + t."""
    rot = pose.rotation.matrix()
    return (positions - centroid) @ rot.T + centroid + np.asarray(pose.translation)


def apply_pose(ligand: MolecularSystem, pose: Pose) -> MolecularSystem:
    return ligand.with_positions(transform(ligand.positions, pose, ligand.centroid()))


class CrossTable:
    """Receptor x ligand parameter tables for one scoring setup."""

    def __init__(self, receptor: MolecularSystem, ligand: MolecularSystem,
                 pot: PotentialParams, electrostatics_on: bool):
        self.receptor_positions = receptor.positions
        self.sig, self.eps = combine(receptor.sigmas[:, None], ligand.sigmas[None, :],
                                     receptor.epsilons[:, None], ligand.epsilons[None, :])
        self.qq = COULOMB_F * receptor.charges[:, None] * ligand.charges[None, :]
        self.electrostatics = electrostatics_on
        self.shift = cutoff_shift(self.sig, self.eps, self.qq, pot, electrostatics_on)
        self.cut2 = pot.cutoff ** 2

    def score(self, ligand_positions: np.ndarray) -> tuple[float, bool]:
        d = ligand_positions[None, :, :] - self.receptor_positions[:, None, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        if not np.all(r2):
            return CLASH_SCORE, True
        mask = r2 < self.cut2
        if not mask.any():
            return 0.0, False
        energy, _ = pair_terms(np.where(mask, r2, 1.0), self.sig, self.eps, self.qq, self.electrostatics)
        total = float(np.where(mask, energy - self.shift, 0.0).sum())
        if not math.isfinite(total):
            return CLASH_SCORE, True
        return total, False


def score_pose(receptor: MolecularSystem, posed_ligand: MolecularSystem, pot: PotentialParams,
               electrostatics_on: bool = True) -> float:
    """Receptor-ligand interaction energy in kJ/mol; lower is better.

    Only cross pairs within the cutoff count. A zero-distance contact
    returns :data:`CLASH_SCORE` instead of raising.
    """
    table = CrossTable(receptor, posed_ligand, pot, electrostatics_on)
    return table.score(posed_ligand.positions)[0]


class PoseTask:
    """Generate and score conformer ``k``; a pure function of ``k``."""

    def __init__(self, job: DockingJob):
        self.job = job
        # poses place the ligand centroid at the translation
        self.ligand = job.ligand.positions - job.ligand.centroid()
        self.origin = np.zeros(3)
        self.table = CrossTable(job.receptor, job.ligand, job.pot, job.electrostatics_on)

    def __call__(self, k: int) -> ScoredPose:
        pose = generate_pose(self.job, k)
        score, clash = self.table.score(transform(self.ligand, pose, self.origin))
        return ScoredPose(pose, score, clash)


def dock(job: DockingJob, workers: int = 1, mode: str = "sequential") -> DockResult:
    """Evaluate all conformers; ``result.poses[k]`` belongs to conformer ``k``.

    ``mode="parallel"`` uses a process pool of ``workers``; the output is
    bit-identical to ``mode="sequential"``. ``wall_seconds`` covers pose
    generation and scoring, including pool start-up.
    """
    if mode not in ("sequential", "parallel"):
        raise ValueError(f"unknown mode {mode!r}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    task = PoseTask(job)
    t0 = time.perf_counter()
    if mode == "sequential":
        poses = [task(k) for k in range(job.n_conformers)]
        workers = 1
    else:
        plan = plan_chunks(job.n_conformers, workers)
        poses = parallel_map_indexed(plan, task, WorkerPoolConfig(workers, backend="process"))
    return DockResult(poses, time.perf_counter() - t0, mode, workers)


def select_top_k(results: list[ScoredPose], k: int) -> tuple[list[ScoredPose], bool]:
    """The ``k`` lowest scores, ties to the smaller conformer index.

    Returns ``(ranked, truncated)``; ``truncated`` is set when fewer than
    ``k`` results exist and all of them are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(results, key=lambda p: (p.score, p.conformer_index))
    return ranked[:k], k > len(results)


def _pose_fields(p: ScoredPose) -> list:
    q, t = p.pose.rotation, p.pose.translation
    return [p.conformer_index, repr(p.score), repr(q.w), repr(q.x), repr(q.y), repr(q.z),
            repr(t[0]), repr(t[1]), repr(t[2])]


def poses_csv(results: list[ScoredPose]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POSES_HEADER)
    for p in sorted(results, key=lambda p: p.conformer_index):
        writer.writerow(_pose_fields(p))
    return buf.getvalue()


def ranked_csv(ranked: list[ScoredPose]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("rank",) + POSES_HEADER)
    for rank, p in enumerate(ranked, start=1):
        writer.writerow([rank] + _pose_fields(p))
    return buf.getvalue()


def read_poses_csv(text: str) -> list[ScoredPose]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0][-len(POSES_HEADER):]) != POSES_HEADER:
        raise ValueError("not a poses CSV")
    offset = len(rows[0]) - len(POSES_HEADER)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            k = int(row[offset])
            score, qw, qx, qy, qz, tx, ty, tz = (float(v) for v in row[offset + 1:])
        except (ValueError, IndexError):
            raise ValueError(f"line {lineno}: malformed pose row") from None
        out.append(ScoredPose(Pose(k, Quaternion(qw, qx, qy, qz), (tx, ty, tz)), score,
                              clash=score == CLASH_SCORE))
    return out
