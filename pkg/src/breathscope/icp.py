"""Rigid registration: closed-form least-squares fit and point-to-point ICP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .errors import AlignmentError, DegeneracyError, ParameterError


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """``self ∘ first``: apply ``first``, then ``self``."""
        return RigidTransform(self.rotation @ first.rotation, self.rotation @ first.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    @property
    def angle_deg(self) -> float:
        cos = np.clip((np.trace(self.rotation) - 1) / 2, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos)))

    def is_proper(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.abs(r.T @ r - np.eye(3)).max() <= tol and abs(np.linalg.det(r) - 1) <= tol)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    rmse_tol: float = 1e-4
    reject_mult: float = 3.0
    min_correspondences: int = 100
    # deterministic subsample of the source per iteration; None uses every point
    max_source_points: int | None = None
    # extrapolate along consistent update directions (kept only if it lowers the RMSE)
    accelerate: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not self.rmse_tol > 0:
            raise ParameterError("rmse_tol must be positive")
        if self.reject_mult < 0:
            raise ParameterError("reject_mult must be >= 0")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rmse: float
    iterations: int
    converged: bool
    # nearest-neighbour RMSE over all source points before each update, then the final one
    rmse_history: tuple[float, ...] = field(default=())


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise DegeneracyError(f"point sets differ in size: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegeneracyError(f"need at least 3 correspondences, got {len(src)}")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    h = (src - src_c).T @ (dst - dst_c)
    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], 1e-300)
    # a rank < 2 covariance leaves the rotation about the common axis undetermined
    if s[1] <= 1e-12 * scale or s[0] == 0:
        raise DegeneracyError("point set is collinear or coincident; rotation is ambiguous")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T)) or 1.0
    rot = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, dst_c - rot @ src_c)


def _quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` of a rotation matrix."""
    m = rot
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def _rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _state(t: RigidTransform, previous: np.ndarray | None) -> np.ndarray:
    q = _quaternion(t.rotation)
    if previous is not None and np.dot(q, previous[:4]) < 0:
        q = -q
    return np.concatenate([q, t.translation])


def _from_state(state: np.ndarray) -> RigidTransform:
    return RigidTransform(_rotation(state[:4]), state[4:])


_ACCEL_ANGLE = np.deg2rad(10.0)
_ACCEL_MAX_STEPS = 25.0


def _extrapolate(states: list[np.ndarray], errors: list[float]) -> np.ndarray | None:
    """Line/parabola extrapolation of the registration state along a steady direction.

    Uses the last three states and their mean squared errors; ``None`` when
    the recent update directions disagree by more than 10 degrees.
    """
    if len(states) < 3:
        return None
    d1 = states[-1] - states[-2]
    d0 = states[-2] - states[-3]
    n1, n0 = np.linalg.norm(d1), np.linalg.norm(d0)
    if n1 < 1e-15 or n0 < 1e-15:
        return None
    if np.arccos(np.clip(np.dot(d1, d0) / (n1 * n0), -1, 1)) >= _ACCEL_ANGLE:
        return None
    v = np.array([0.0, -n1, -n1 - n0])
    e = np.array([errors[-1], errors[-2], errors[-3]])
    v_max = _ACCEL_MAX_STEPS * n1
    a1, b1 = np.polyfit(v, e, 1)
    a2, b2, _ = np.polyfit(v, e, 2)
    v_lin = -b1 / a1 if a1 != 0 else np.inf
    v_par = -b2 / (2 * a2) if a2 > 0 else -np.inf
    if 0 < v_par < v_lin < v_max or (0 < v_par < v_max and not 0 < v_lin):
        step = v_par
    elif 0 < v_lin < v_max:
        step = v_lin
    elif v_lin >= v_max and v_par >= v_max:
        step = v_max
    else:
        return None
    out = states[-1] + step * d1 / n1
    out[:4] /= np.linalg.norm(out[:4])
    return out


def _subsample(n: int, limit: int | None) -> np.ndarray:
    if limit is None or n <= limit:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, limit).round().astype(np.intp))


def icp_align(
    source: PointCloud | np.ndarray,
    reference: PointCloud | np.ndarray | NeighborIndex,
    params: IcpParams | None = None,
    initial: RigidTransform | None = None,
) -> IcpResult:
    """Align ``source`` to ``reference`` with point-to-point ICP.

    Each iteration pairs every source point (under the current estimate)
    with its nearest reference point, optionally drops pairs farther than
    ``reject_mult`` times the median pair distance, and refits the rigid
    transform on the survivors.  The loop stops once the RMSE changes by
    less than ``rmse_tol`` or after ``max_iterations``.  The returned
    transform maps original source coordinates into the reference frame.

    ``reference`` may be a prebuilt :class:`NeighborIndex` so many frames can
    share one tree.
    """
    params = params or IcpParams()
    src_all = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=float).reshape(-1, 3)
    if isinstance(reference, NeighborIndex):
        index = reference
    else:
        ref_pts = reference.points if isinstance(reference, PointCloud) else np.asarray(reference, dtype=float)
        index = NeighborIndex(ref_pts)
    if len(src_all) < params.min_correspondences or len(index) < params.min_correspondences:
        raise AlignmentError(
            f"clouds too small for alignment: {len(src_all)} source / {len(index)} reference points,"
            f" need {params.min_correspondences}"
        )
    src = src_all[_subsample(len(src_all), params.max_source_points)]
    ref = index.points

    current = initial or RigidTransform.identity()
    dist, idx = index.nearest(current.apply(src))
    history: list[float] = []
    states = [_state(current, None)]
    errors = [float(np.mean(dist**2))]
    converged = False
    prev_rmse = np.inf
    iterations = 0
    while True:
        iterations += 1
        rmse = float(np.sqrt(np.mean(dist**2)))
        history.append(rmse)
        if abs(prev_rmse - rmse) < params.rmse_tol:
            converged = True
            break
        if iterations >= params.max_iterations:
            break
        prev_rmse = rmse

        moved = current.apply(src)
        keep = np.ones(len(dist), dtype=bool)
        if params.reject_mult > 0:
            keep = dist <= params.reject_mult * np.median(dist)
        if keep.sum() < params.min_correspondences:
            raise AlignmentError(
                f"only {int(keep.sum())} correspondences survived rejection, need {params.min_correspondences}"
            )
        step = kabsch(moved[keep], ref[idx[keep]])
        candidate = step.compose(current)
        # re-project onto SO(3) so rounding cannot accumulate over iterations
        u, _, vt = np.linalg.svd(candidate.rotation)
        current = RigidTransform(u @ vt, candidate.translation)
        dist, idx = index.nearest(current.apply(src))
        states.append(_state(current, states[-1]))
        errors.append(float(np.mean(dist**2)))

        if params.accelerate:
            jump = _extrapolate(states, errors)
            if jump is not None:
                trial = _from_state(jump)
                t_dist, t_idx = index.nearest(trial.apply(src))
                if np.mean(t_dist**2) < errors[-1]:
                    current, dist, idx = trial, t_dist, t_idx
                    states[-1] = _state(trial, states[-2])
                    errors[-1] = float(np.mean(t_dist**2))

    return IcpResult(current, history[-1], iterations, converged, tuple(history))
