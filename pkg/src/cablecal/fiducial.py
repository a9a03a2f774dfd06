"""Sphere fiducials: synthetic RGBD frames, segmentation, sphere fitting and joint estimation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateGeometryError,
    NoSpheresFoundError,
    UnknownIdentityError,
)
from .geometry import RigidTransform, uniform_ball_displacements
from .kinematics import (
    JAW_LABELS,
    SHAFT_LABELS,
    JointConfig,
    KinematicParams,
    forward_kinematics,
    rot_x,
    tool_joints_from_rotation,
    wrist_joints_from_position,
)


@dataclass(frozen=True)
class RGBDFrame:
    """Organised point cloud in the camera frame.

    ``labels`` models the colour mask: 0 is background, 1..6 the sphere identity.
    ``depth`` is the camera-frame z coordinate of each point.
    """

    points: np.ndarray
    labels: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        lab = np.asarray(self.labels, dtype=int).reshape(-1)
        dep = np.asarray(self.depth, dtype=float).reshape(-1)
        if not (len(pts) == len(lab) == len(dep)):
            raise ValueError("points, labels and depth must have equal length")
        if np.any(dep < 0):
            raise ValueError("depth must be non-negative")
        if np.any((lab < 0) | (lab > 6)):
            raise ValueError("labels must lie in 0..6")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "depth", dep)

    def __len__(self):
        return len(self.labels)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"x": float(p[0]), "y": float(p[1]), "z": float(p[2]), "label": int(l)}) + "\n"
            for p, l in zip(self.points, self.labels)
        )

    @classmethod
    def from_jsonl(cls, text: str) -> "RGBDFrame":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        pts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=float).reshape(-1, 3)
        lab = np.array([r["label"] for r in rows], dtype=int)
        return cls(pts, lab, pts[:, 2])


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    support_count: int
    residual_rms: float

    def to_dict(self) -> dict:
        return {
            "center": np.asarray(self.center).tolist(),
            "radius": float(self.radius),
            "support_count": int(self.support_count),
            "residual_rms": float(self.residual_rms),
        }


@dataclass(frozen=True)
class SphereSet:
    shaft: Tuple[Sphere, Sphere]
    jaw: Dict[int, Sphere]

    def __post_init__(self):
        if len(self.shaft) != 2:
            raise ValueError("need exactly two shaft spheres")
        if len(self.jaw) < 3:
            raise ValueError("need at least 3 jaw spheres")

    def to_json(self) -> str:
        return json.dumps({
            "shaft": [s.to_dict() for s in self.shaft],
            "jaw": {str(k): s.to_dict() for k, s in sorted(self.jaw.items())},
        }, indent=2)


def _camera_looking_down(height: float = 0.54) -> RigidTransform:
    # camera z axis points down (-z of the robot base), 0.9 m above the workspace
    return RigidTransform(rot_x(np.pi), np.array([0.0, 0.0, height]))


@dataclass(frozen=True)
class Scene:
    """Simulated sensor setup; ``camera_to_robot`` maps camera-frame points to the base frame."""

    camera_to_robot: RigidTransform = field(default_factory=_camera_looking_down)
    samples_per_sphere: int = 300
    sphere_radius: float = 0.00635
    background_points: int = 400
    background_depth: float = 1.3
    depth_range: Tuple[float, float] = (0.3, 1.2)


def fit_sphere(points) -> Sphere:
    """Linear least-squares sphere fit.

    Solves ``[x y z 1] c = x^2 + y^2 + z^2``; centre is ``c[:3] / 2`` and radius
    ``sqrt(c3 + |centre|^2)``. Points are shifted to their centroid first,
    which leaves the solution unchanged but keeps the system well conditioned.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n < 4:
        raise DegenerateGeometryError(f"need at least 4 points, got {n}")
    shift = pts.mean(axis=0)
    p = pts - shift
    scale = np.sqrt(np.mean(np.sum(p * p, axis=1)))
    if scale == 0:
        raise DegenerateGeometryError("all points coincide")
    p = p / scale
    A = np.column_stack([p, np.ones(n)])
    b = np.sum(p * p, axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] / sv[0] < 1e-10:
        raise DegenerateGeometryError("points are coplanar or collinear; sphere undetermined")
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    centre = 0.5 * c[:3]
    r2 = c[3] + centre @ centre
    if r2 <= 0:
        raise DegenerateGeometryError("fit produced a non-positive squared radius")
    radius = np.sqrt(r2) * scale
    centre = centre * scale + shift
    resid = np.linalg.norm(pts - centre, axis=1) - radius
    return Sphere(centre, float(radius), n, float(np.sqrt(np.mean(resid ** 2))))


def segment_spheres(frame: RGBDFrame, depth_range: Tuple[float, float] | None = None,
                    labels: Iterable[int] = (1, 2, 3, 4, 5, 6)) -> Dict[int, np.ndarray]:
    if len(frame) == 0:
        raise NoSpheresFoundError("empty frame")
    lo, hi = depth_range if depth_range is not None else (0.0, np.inf)
    in_window = (frame.depth >= lo) & (frame.depth <= hi)
    out = {}
    for label in labels:
        pts = frame.points[in_window & (frame.labels == label)]
        if len(pts) >= 4:
            out[int(label)] = pts
    if not out:
        raise NoSpheresFoundError("no labelled sphere has 4 or more points in the depth window")
    return out


def _center(s) -> np.ndarray:
    return np.asarray(s.center if isinstance(s, Sphere) else s, dtype=float)


def wrist_from_shaft_spheres(shaft: Sequence, params: KinematicParams) -> np.ndarray:
    """Extrapolate the wrist from (proximal, distal) shaft sphere centres.

    ``wrist = (o_p * c_d - o_d * c_p) / (o_p - o_d)`` with ``o`` the configured
    distances from the wrist.
    """
    c_p, c_d = _center(shaft[0]), _center(shaft[1])
    o_p, o_d = params.shaft_offsets
    if np.linalg.norm(c_p - c_d) < 1e-12:
        raise DegenerateGeometryError("shaft sphere centres coincide")
    return (o_p * c_d - o_d * c_p) / (o_p - o_d)


_OPPOSITE = {3: 4, 4: 3, 5: 6, 6: 5}


def jaw_rotation_from_spheres(jaw: Mapping[int, object], params: KinematicParams | None = None) -> np.ndarray:
    """Rotation of the fiducial cross from its labelled sphere centres.

    Axes come from the opposing-sphere differences (3 - 4 gives x, 5 - 6 gives
    y). The axis with the longer measured baseline is kept as is and the other
    is Gram-Schmidt orthogonalised against it; z = x cross y. With three spheres
    the missing one is mirrored through the midpoint of the complete pair.
    """
    centers = {}
    for label, s in jaw.items():
        if int(label) not in _OPPOSITE:
            raise UnknownIdentityError(f"unknown jaw sphere label {label!r}")
        centers[int(label)] = _center(s)
    if len(centers) < 3:
        raise DegenerateGeometryError("need at least 3 jaw spheres")
    if len(centers) == 3:
        missing = next(l for l in JAW_LABELS if l not in centers)
        opp = _OPPOSITE[missing]
        pair = (5, 6) if missing in (3, 4) else (3, 4)
        mid = 0.5 * (centers[pair[0]] + centers[pair[1]])
        centers[missing] = 2.0 * mid - centers[opp]

    x = centers[3] - centers[4]
    y = centers[5] - centers[6]
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < 1e-12 or ny < 1e-12:
        raise DegenerateGeometryError("opposing jaw spheres coincide")
    if nx >= ny:
        xh = x / nx
        y = y - (y @ xh) * xh
        if np.linalg.norm(y) < 1e-9 * ny:
            raise DegenerateGeometryError("jaw sphere axes are collinear")
        yh = y / np.linalg.norm(y)
    else:
        yh = y / ny
        x = x - (x @ yh) * yh
        if np.linalg.norm(x) < 1e-9 * nx:
            raise DegenerateGeometryError("jaw sphere axes are collinear")
        xh = x / np.linalg.norm(x)
    return np.column_stack([xh, yh, np.cross(xh, yh)])


def estimate_from_centers(centers: Mapping[int, object], params: KinematicParams) -> np.ndarray:
    """Joint vector from labelled sphere centres in the robot base frame."""
    if not all(l in centers for l in SHAFT_LABELS):
        raise DegenerateGeometryError("both shaft spheres are required")
    wrist = wrist_from_shaft_spheres([centers[1], centers[2]], params)
    q123 = wrist_joints_from_position(wrist, params)
    jaw = {l: centers[l] for l in JAW_LABELS if l in centers}
    R = jaw_rotation_from_spheres(jaw, params)
    q456 = tool_joints_from_rotation(R, q123, params)
    return np.concatenate([q123, q456])


def estimate_configuration(frame: RGBDFrame, params: KinematicParams, scene: Scene | None = None,
                           *, details: bool = False):
    """segment -> fit -> wrist -> q1..q3 -> jaw rotation -> q4..q6.

    Returns a JointConfig with role "estimated". An estimate outside the joint
    limits is not an error; pass ``details=True`` to get ``(config, info)`` where
    ``info["within_limits"]`` flags it and ``info["spheres"]`` holds the fits.
    """
    scene = scene or Scene()
    segments = segment_spheres(frame, scene.depth_range)
    fits = {label: fit_sphere(pts) for label, pts in segments.items()}
    to_robot = scene.camera_to_robot
    centers = {label: to_robot.apply(s.center) for label, s in fits.items()}
    q = estimate_from_centers(centers, params)
    cfg = JointConfig(q, "estimated")
    if not details:
        return cfg
    robot_fits = {
        l: Sphere(centers[l], s.radius, s.support_count, s.residual_rms) for l, s in fits.items()
    }
    spheres = SphereSet(
        (robot_fits[1], robot_fits[2]),
        {l: robot_fits[l] for l in JAW_LABELS if l in robot_fits},
    )
    return cfg, {"within_limits": cfg.within_limits(params), "spheres": spheres}


def synthesize_frame(q_p, params: KinematicParams, scene: Scene | None = None, noise: float = 0.0,
                     rng_seed: int = 0, *, point_noise: float = 0.0,
                     occlude: Iterable[int] = (), check_limits: bool = True) -> RGBDFrame:
    """Render the six fiducials at ``q_p`` as a labelled point cloud.

    Each sphere is sampled on the hemisphere facing the camera. ``noise`` is the
    maximum magnitude of a per-sphere displacement (uniform direction, magnitude
    uniform in [0, noise]) shared by all points of that sphere, i.e. an error on
    the detected centre. ``point_noise`` adds independent per-point displacement
    of the same form. Background points lie on a plane behind the workspace.
    ``check_limits=False`` renders poses outside the command limits, which a
    physical arm can reach through backlash and coupling.
    """
    scene = scene or Scene()
    rng = np.random.default_rng(rng_seed)
    pose = forward_kinematics(q_p, params, check_limits=check_limits)
    from_robot = scene.camera_to_robot.inverse()
    occluded = set(int(l) for l in occlude)
    m = scene.samples_per_sphere
    offsets = uniform_ball_displacements(rng, 6, noise) if noise > 0 else np.zeros((6, 3))

    pts_all, lab_all = [], []
    for i, label in enumerate(range(1, 7)):
        c = from_robot.apply(pose.fiducial_centers[label])
        view = -c / np.linalg.norm(c)
        n = rng.normal(size=(m, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        n[n @ view < 0] *= -1.0
        pts = c + scene.sphere_radius * n + offsets[i]
        if point_noise > 0:
            pts = pts + uniform_ball_displacements(rng, m, point_noise)
        if label in occluded:
            continue
        pts_all.append(pts)
        lab_all.append(np.full(m, label))

    if scene.background_points:
        k = scene.background_points
        bg = np.column_stack([
            rng.uniform(-0.15, 0.15, k),
            rng.uniform(-0.15, 0.15, k),
            np.full(k, scene.background_depth),
        ])
        pts_all.append(bg)
        lab_all.append(np.zeros(k, dtype=int))

    points = np.vstack(pts_all)
    labels = np.concatenate(lab_all)
    return RGBDFrame(points, labels, np.abs(points[:, 2]))


def perturb_centers(centers: Mapping[int, np.ndarray], noise: float, rng: np.random.Generator) -> Dict[int, np.ndarray]:
    labels = sorted(centers)
    d = uniform_ball_displacements(rng, len(labels), noise)
    return {l: np.asarray(centers[l]) + d[i] for i, l in enumerate(labels)}
