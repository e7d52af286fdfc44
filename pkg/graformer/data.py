# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Pose datasets: the GRFD file format, normalization, splits, and synthetic data."""

import math
import re

import numpy as np

from graformer.autodiff import make_rng
from graformer.exceptions import DataError, GraphError
from graformer.graphops import skeleton_preset
from graformer.misc import ensure_dir_for_file, format_row

GRFD_VERSION = "v1"
HEADER_RE = re.compile(r"^GRFD (?P<version>v\d+) j=(?P<j>\d+) skeleton=(?P<skeleton>\S+)$")


class PoseSample:
    """Paired 2D input (j×2, normalized) and root-relative 3D target (j×3, mm)."""

    def __init__(self, joints_2d, joints_3d, sample_id=None, subject=None, action=None):
        self.joints_2d = np.array(joints_2d, dtype=float)
        self.joints_3d = np.array(joints_3d, dtype=float)
        j = self.joints_2d.shape[0] if self.joints_2d.ndim == 2 else -1
        if self.joints_2d.shape != (j, 2) or self.joints_3d.shape != (j, 3):
            raise DataError(
                f"Sample needs (j, 2) and (j, 3) joints, got {self.joints_2d.shape} "
                f"and {self.joints_3d.shape}"
            )
        if not (np.all(np.isfinite(self.joints_2d)) and np.all(np.isfinite(self.joints_3d))):
            raise DataError(f"Sample {sample_id!r} has NaN or infinite coordinates")
        self.sample_id = sample_id
        self.subject = subject or None
        self.action = action or None

    @property
    def joint_count(self):
        return self.joints_2d.shape[0]

    def __repr__(self):
        return f"<PoseSample {self.sample_id!r} j={self.joint_count} action={self.action!r}>"

    def __eq__(self, other):
        if not isinstance(other, PoseSample):
            return NotImplemented
        return (
            np.array_equal(self.joints_2d, other.joints_2d)
            and np.array_equal(self.joints_3d, other.joints_3d)
            and (self.sample_id, self.subject, self.action)
            == (other.sample_id, other.subject, other.action)
        )

    __hash__ = None


class Dataset:
    """An ordered list of PoseSamples on one skeleton, tagged with its split."""

    def __init__(self, skeleton, samples, split="train"):
        self.skeleton = skeleton
        self.samples = list(samples)
        self.split = split
        j = skeleton.joint_count
        for n, sample in enumerate(self.samples):
            if sample.joint_count != j:
                raise DataError(
                    f"Sample {n} has {sample.joint_count} joints, skeleton "
                    f"{skeleton.name!r} has {j}"
                )
        self._arrays = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, index):
        return self.samples[index]

    def __repr__(self):
        return f"<Dataset {self.skeleton.name!r} split={self.split} n={len(self)}>"

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.skeleton == other.skeleton and self.samples == other.samples

    __hash__ = None

    def arrays(self):
        """Stacked (n, j, 2) inputs and (n, j, 3) targets."""
        if self._arrays is None:
            j = self.skeleton.joint_count
            x2d = np.array([s.joints_2d for s in self.samples]).reshape(-1, j, 2)
            x3d = np.array([s.joints_3d for s in self.samples]).reshape(-1, j, 3)
            x2d.setflags(write=False)
            x3d.setflags(write=False)
            self._arrays = (x2d, x3d)
        return self._arrays

    def has_tags(self):
        return any(s.action or s.subject for s in self.samples)

    def subset(self, indices, split):
        return Dataset(self.skeleton, [self.samples[i] for i in indices], split=split)


def normalize_2d(raw_pixels, image_width, image_height):
    """Map pixels to x' = (2x - w)/w, y' = (2y - h)/w."""
    if image_width <= 0 or image_height <= 0:
        raise DataError(f"Image size must be positive, got {image_width}x{image_height}")
    raw = np.asarray(raw_pixels, dtype=float)
    out = np.empty_like(raw)
    out[..., 0] = (2.0 * raw[..., 0] - image_width) / image_width
    out[..., 1] = (2.0 * raw[..., 1] - image_height) / image_width
    return out


def denormalize_2d(joints_2d, image_width, image_height):
    """The inverse of `normalize_2d`."""
    norm = np.asarray(joints_2d, dtype=float)
    out = np.empty_like(norm)
    out[..., 0] = (norm[..., 0] * image_width + image_width) / 2.0
    out[..., 1] = (norm[..., 1] * image_width + image_height) / 2.0
    return out


def root_relative_3d(joints_3d, root):
    """Subtract the root joint from every joint."""
    joints = np.asarray(joints_3d, dtype=float)
    return joints - joints[..., root:root + 1, :]


def split_dataset(dataset, eval_fraction, seed):
    """Randomly hold out `eval_fraction` of the samples.

    Returns (train, eval), each keeping the original sample order.  `eval` is
    None when no sample is held out.

    """
    if not 0.0 <= eval_fraction < 1.0:
        raise DataError(f"Eval fraction must be in [0, 1), got {eval_fraction}")
    n = len(dataset)
    n_eval = int(round(n * eval_fraction))
    if n_eval == 0:
        return dataset, None
    if n_eval >= n:
        raise DataError(f"Holding out {n_eval} of {n} samples leaves nothing to train on")
    held = np.zeros(n, dtype=bool)
    held[make_rng(seed).permutation(n)[:n_eval]] = True
    train = dataset.subset(np.flatnonzero(~held), "train")
    evals = dataset.subset(np.flatnonzero(held), "eval")
    return train, evals


# File format

def _header(dataset):
    return f"GRFD {GRFD_VERSION} j={dataset.skeleton.joint_count} skeleton={dataset.skeleton.name}"


def _check_tag(tag, what):
    if tag and ("," in tag or "\n" in tag):
        raise DataError(f"{what} tag {tag!r} can't contain commas or newlines")


def dataset_to_text(dataset):
    """The GRFD text of `dataset`."""
    lines = [_header(dataset)]
    for n, s in enumerate(dataset.samples):
        sid = str(s.sample_id if s.sample_id is not None else n)
        _check_tag(sid, "Sample id")
        fields = [sid, format_row(s.joints_2d.ravel()), format_row(s.joints_3d.ravel())]
        if s.subject or s.action:
            _check_tag(s.subject, "Subject")
            _check_tag(s.action, "Action")
            fields += [s.subject or "", s.action or ""]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def save_dataset(dataset, path):
    """Write `dataset` as a GRFD file."""
    ensure_dir_for_file(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dataset_to_text(dataset))


def parse_dataset(text, skeleton=None, source="<string>"):
    """Parse GRFD text.

    Without `skeleton`, the built-in skeleton named in the header is used.

    """
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{source}: no samples")
    m = HEADER_RE.match(lines[0].strip())
    if not m:
        raise DataError(f"{source}:1: bad header {lines[0]!r}")
    if m["version"] != GRFD_VERSION:
        raise DataError(f"{source}:1: unsupported version {m['version']}")
    j = int(m["j"])
    if skeleton is None:
        try:
            skeleton = skeleton_preset(m["skeleton"])
        except GraphError as err:
            raise DataError(f"{source}:1: {err}; pass the skeleton explicitly") from None
    if skeleton.joint_count != j:
        raise DataError(
            f"{source}:1: file has j={j}, skeleton {skeleton.name!r} has {skeleton.joint_count}"
        )

    n_numbers = 5 * j
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) == n_numbers + 1:
            subject = action = None
        elif len(fields) == n_numbers + 3:
            subject, action = fields[-2].strip(), fields[-1].strip()
        else:
            raise DataError(
                f"{source}:{lineno}: expected {n_numbers} numbers for {j} joints, "
                f"got {len(fields) - 1} fields"
            )
        try:
            numbers = np.array([float(f) for f in fields[1:n_numbers + 1]])
        except ValueError as err:
            raise DataError(f"{source}:{lineno}: {err}") from None
        try:
            samples.append(PoseSample(
                numbers[:2 * j].reshape(j, 2), numbers[2 * j:].reshape(j, 3),
                sample_id=fields[0].strip(), subject=subject, action=action,
            ))
        except DataError as err:
            raise DataError(f"{source}:{lineno}: {err}") from None
    if not samples:
        raise DataError(f"{source}: no samples")
    return Dataset(skeleton, samples)


def load_dataset(path, skeleton=None):
    """Read a GRFD file."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise DataError(f"Couldn't read dataset {path!r}: {err}") from err
    return parse_dataset(text, skeleton, source=path)


# Synthetic data

class Camera:
    """A pinhole camera looking down +Z, principal point at the image center."""

    def __init__(self, focal=1000.0, depth_mm=5000.0, width=1000, height=1000):
        if focal <= 0 or depth_mm <= 0 or width <= 0 or height <= 0:
            raise DataError("Camera focal length, depth and image size must be positive")
        self.focal = float(focal)
        self.depth_mm = float(depth_mm)
        self.width = width
        self.height = height

    def project(self, points):
        """Pixel coordinates of camera-frame points (..., 3)."""
        points = np.asarray(points, dtype=float)
        z = points[..., 2]
        u = self.focal * points[..., 0] / z + self.width / 2.0
        v = self.focal * points[..., 1] / z + self.height / 2.0
        return np.stack([u, v], axis=-1)


# Rest poses in millimeters, camera frame: x right, y down, z away.
HUMAN16_REST = (
    (0, 0, 0),
    (-120, 0, 0), (-120, 440, 0), (-120, 880, 0),
    (120, 0, 0), (120, 440, 0), (120, 880, 0),
    (0, -230, 0), (0, -480, 0), (0, -680, 0),
    (170, -450, 0), (170, -170, 0), (170, 80, 0),
    (-170, -450, 0), (-170, -170, 0), (-170, 80, 0),
)

# Where each finger leaves the palm, and the lengths of its segments.
HAND_BASES = ((-35, -30), (-20, -90), (0, -92), (18, -88), (34, -80))
HAND_SEGMENTS = (30, 22, 18)


def _hand21_rest():
    rest = [(0.0, 0.0, 0.0)]
    for bx, by in HAND_BASES:
        direction = np.array([bx, by, 0.0]) / math.hypot(bx, by)
        point = np.array([bx, by, 0.0])
        rest.append(tuple(point))
        for seg in HAND_SEGMENTS:
            point = point + seg * direction
            rest.append(tuple(point))
    return rest


def rest_pose(skeleton):
    """A canonical pose for `skeleton`, root at the origin.

    Custom skeletons get 100 mm bones fanned out around the image plane.

    """
    if skeleton.name == "human16" and skeleton.joint_count == 16:
        return np.array(HUMAN16_REST, dtype=float)
    if skeleton.name == "hand21" and skeleton.joint_count == 21:
        return np.array(_hand21_rest())
    parents, order = skeleton.kinematic_parents()
    rest = np.zeros((skeleton.joint_count, 3))
    for n, v in enumerate(order[1:], start=1):
        angle = n * 2.399963229728653     # golden angle
        rest[v] = rest[parents[v]] + 100.0 * np.array([math.cos(angle), math.sin(angle), 0.0])
    return rest


# Pose families: the spread of local joint rotations (radians), raised for
# joints whose names contain one of the listed parts, and the root yaw range.
POSE_FAMILIES = {
    "neutral": dict(base=0.15, parts=(), boost=0.0, yaw=0.3),
    "reach": dict(base=0.15, parts=("shoulder", "elbow", "thumb"), boost=0.6, yaw=0.3),
    "crouch": dict(base=0.15, parts=("hip", "knee", "index", "middle", "ring", "little"), boost=0.6, yaw=0.3),
    "twist": dict(base=0.15, parts=("spine", "thorax"), boost=0.5, yaw=0.9),
}
ACTIONS = tuple(POSE_FAMILIES)


def _family_spread(skeleton, family):
    family_info = POSE_FAMILIES[family]
    spread = np.full(skeleton.joint_count, family_info["base"])
    if skeleton.joint_names:
        for v, name in enumerate(skeleton.joint_names):
            if any(part in name for part in family_info["parts"]):
                spread[v] = family_info["boost"]
    return spread


def rotation_matrix(axis_angle):
    """The rotation for an axis-angle vector (Rodrigues)."""
    v = np.asarray(axis_angle, dtype=float)
    theta = float(np.linalg.norm(v))
    if theta == 0.0:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(theta) * kx + (1.0 - math.cos(theta)) * (kx @ kx)


def sample_poses(skeleton, n_samples, rng, camera):
    """Draw articulated poses in the camera frame.

    Returns (poses, actions): poses is (n, j, 3) in mm, actions names the pose
    family of each sample.

    """
    rest = rest_pose(skeleton)
    parents, order = skeleton.kinematic_parents()
    spreads = {family: _family_spread(skeleton, family) for family in ACTIONS}
    poses = np.zeros((n_samples, skeleton.joint_count, 3))
    actions = []
    for n in range(n_samples):
        family = ACTIONS[int(rng.integers(len(ACTIONS)))]
        actions.append(family)
        spread = spreads[family]
        yaw = rng.uniform(-POSE_FAMILIES[family]["yaw"], POSE_FAMILIES[family]["yaw"])
        root = skeleton.root_index
        frames = {root: rotation_matrix([0.0, yaw, 0.0])}
        pose = np.zeros((skeleton.joint_count, 3))
        pose[root] = [rng.normal(0.0, 50.0), rng.normal(0.0, 50.0), camera.depth_mm + rng.normal(0.0, 100.0)]
        for v in order[1:]:
            p = parents[v]
            local = rotation_matrix(rng.normal(0.0, spread[v], size=3))
            pose[v] = pose[p] + frames[p] @ (rest[v] - rest[p])
            frames[v] = frames[p] @ local
        # Joints cut off from the root keep their rest offsets.
        for v in range(skeleton.joint_count):
            if v != root and parents[v] < 0:
                pose[v] = pose[root] + rest[v] - rest[root]
        poses[n] = pose
    return poses, actions


def generate_synthetic(skeleton, n_samples, seed, camera=None):
    """A deterministic synthetic dataset of projected articulated poses.

    2D joints are the pinhole projections, normalized with `normalize_2d`;
    3D joints are stored relative to the root.

    """
    if n_samples < 1:
        raise DataError(f"Need at least one sample, got {n_samples}")
    camera = camera or Camera()
    poses, actions = sample_poses(skeleton, n_samples, make_rng(seed), camera)
    pixels = camera.project(poses)
    joints_2d = normalize_2d(pixels, camera.width, camera.height)
    joints_3d = root_relative_3d(poses, skeleton.root_index)
    samples = [
        PoseSample(joints_2d[n], joints_3d[n], sample_id=f"syn{n:06d}", subject="synthetic", action=actions[n])
        for n in range(n_samples)
    ]
    return Dataset(skeleton, samples)
