# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Skeleton graphs and the spectral operators built on them.

Matrices here are plain square float64 numpy arrays.  Every function is pure:
nothing is cached or mutated, so they can be called from any thread.

"""

import collections
import os.path

import numpy as np

from graformer.exceptions import ContractError, DegenerateSpectrum, GraphError, ShapeError
from graformer.misc import ensure_dir_for_file, format_row


class SkeletonGraph:
    """A kinematic graph: joints are nodes, bones are undirected edges.

    `edges` is an iterable of joint-index pairs.  They are stored as sorted
    tuples, in the order given.  `root_index` is the alignment joint (the
    pelvis for human skeletons, the wrist for hands).

    """
    def __init__(self, joint_count, edges, root_index=0, name="custom", joint_names=None):
        if not isinstance(joint_count, (int, np.integer)) or joint_count < 1:
            raise GraphError(f"Joint count must be a positive integer, not {joint_count!r}")
        self.joint_count = int(joint_count)
        self.name = name

        seen = set()
        clean = []
        for pair in edges:
            i, k = (int(v) for v in pair)
            for v in (i, k):
                if not 0 <= v < self.joint_count:
                    raise GraphError(
                        f"Edge ({i}, {k}) has an endpoint outside [0, {self.joint_count})"
                    )
            if i == k:
                raise GraphError(f"Edge ({i}, {k}) is a self-loop")
            edge = (min(i, k), max(i, k))
            if edge in seen:
                raise GraphError(f"Edge ({i}, {k}) is listed twice")
            seen.add(edge)
            clean.append(edge)
        self.edges = tuple(clean)

        if not 0 <= root_index < self.joint_count:
            raise GraphError(f"Root index {root_index} is outside [0, {self.joint_count})")
        self.root_index = int(root_index)

        if joint_names is not None:
            joint_names = tuple(joint_names)
            if len(joint_names) != self.joint_count:
                raise GraphError(
                    f"Got {len(joint_names)} joint names for {self.joint_count} joints"
                )
        self.joint_names = joint_names

    def __repr__(self):
        return (
            f"<SkeletonGraph {self.name!r} j={self.joint_count} "
            f"edges={len(self.edges)} root={self.root_index}>"
        )

    def __eq__(self, other):
        if not isinstance(other, SkeletonGraph):
            return NotImplemented
        return (
            self.joint_count == other.joint_count
            and set(self.edges) == set(other.edges)
            and self.root_index == other.root_index
        )

    def __hash__(self):
        return hash((self.joint_count, frozenset(self.edges), self.root_index))

    def adjacency(self):
        """The 0/1 adjacency matrix A, without self-loops."""
        a = np.zeros((self.joint_count, self.joint_count))
        for i, k in self.edges:
            a[i, k] = a[k, i] = 1.0
        return a

    def neighbors(self, joint):
        """The sorted list of joints sharing a bone with `joint`."""
        out = []
        for i, k in self.edges:
            if i == joint:
                out.append(k)
            elif k == joint:
                out.append(i)
        return sorted(out)

    def hop_distances(self):
        """All-pairs graph distances, as an int array.  -1 means unreachable."""
        j = self.joint_count
        dist = np.full((j, j), -1, dtype=int)
        adj = [self.neighbors(v) for v in range(j)]
        for source in range(j):
            dist[source, source] = 0
            queue = collections.deque([source])
            while queue:
                v = queue.popleft()
                for w in adj[v]:
                    if dist[source, w] < 0:
                        dist[source, w] = dist[source, v] + 1
                        queue.append(w)
        return dist

    def kinematic_parents(self):
        """Parent of each joint in the breadth-first tree grown from the root.

        Returns (parents, order): `parents[v]` is -1 for the root and for
        joints not connected to it; `order` lists the reachable joints
        root-first, so a parent always precedes its children.

        """
        parents = [-1] * self.joint_count
        order = [self.root_index]
        visited = {self.root_index}
        queue = collections.deque([self.root_index])
        while queue:
            v = queue.popleft()
            for w in self.neighbors(v):
                if w not in visited:
                    visited.add(w)
                    parents[w] = v
                    order.append(w)
                    queue.append(w)
        return parents, order

    def to_text(self):
        """The skeleton in the text file format read by `load_skeleton`."""
        lines = [f"{self.joint_count} {self.root_index}"]
        lines.extend(f"{i} {k}" for i, k in self.edges)
        return "\n".join(lines) + "\n"


# Human3.6M 16-joint layout.
HUMAN16_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "head", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
)
HUMAN16_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9),
    (8, 10), (10, 11), (11, 12),
    (8, 13), (13, 14), (14, 15),
)

HAND_FINGERS = ("thumb", "index", "middle", "ring", "little")


def human16():
    """The 16-joint human skeleton, rooted at the pelvis."""
    return SkeletonGraph(16, HUMAN16_EDGES, root_index=0, name="human16", joint_names=HUMAN16_JOINTS)


def hand21():
    """The 21-joint hand skeleton: the wrist plus four joints per finger."""
    edges = []
    names = ["wrist"]
    for f, finger in enumerate(HAND_FINGERS):
        base = 1 + 4 * f
        edges.append((0, base))
        edges.extend((base + n, base + n + 1) for n in range(3))
        names.extend(f"{finger}_{n}" for n in range(1, 5))
    return SkeletonGraph(21, edges, root_index=0, name="hand21", joint_names=names)


SKELETON_PRESETS = {
    "human16": human16,
    "hand21": hand21,
}


def skeleton_preset(name):
    """Get a built-in skeleton by name."""
    try:
        factory = SKELETON_PRESETS[name]
    except KeyError:
        raise GraphError(
            f"Unknown skeleton {name!r}, choose from: {', '.join(sorted(SKELETON_PRESETS))}"
        ) from None
    return factory()


def path_graph(joint_count, root_index=0):
    """The path 0-1-...-(j-1)."""
    edges = [(i, i + 1) for i in range(joint_count - 1)]
    return SkeletonGraph(joint_count, edges, root_index=root_index, name=f"path{joint_count}")


def parse_skeleton(text, name="custom"):
    """Parse the skeleton text format.

    The first line is "j root_index", every following line an "i k" edge.
    Blank lines and lines starting with "#" are ignored.

    """
    header = None
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            numbers = [int(f) for f in fields]
        except ValueError:
            raise GraphError(f"Line {lineno}: expected integers, got {line!r}") from None
        if len(numbers) != 2:
            raise GraphError(f"Line {lineno}: expected two integers, got {line!r}")
        if header is None:
            header = numbers
        else:
            edges.append(numbers)
    if header is None:
        raise GraphError("Skeleton definition is empty")
    j, root = header
    return SkeletonGraph(j, edges, root_index=root, name=name)


def load_skeleton(path):
    """Read a skeleton from a text file, named after the file."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise GraphError(f"Couldn't read skeleton file {path!r}: {err}") from err
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_skeleton(text, name=name)


def _symmetrized(m):
    return 0.5 * (m + m.T)


def normalized_adjacency(g):
    """D~^(-1/2) (A + I) D~^(-1/2), the propagation matrix of a GCN layer."""
    a_tilde = g.adjacency() + np.eye(g.joint_count)
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return _symmetrized(d[:, None] * a_tilde * d[None, :])


def graph_laplacian(g):
    """The normalized Laplacian I - D^(-1/2) A D^(-1/2).

    Degrees don't count self-loops.  An isolated joint contributes nothing
    off the diagonal and gets L_ii = 1.

    """
    a = g.adjacency()
    deg = a.sum(axis=1)
    d = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=d, where=deg > 0)
    return _symmetrized(np.eye(g.joint_count) - d[:, None] * a * d[None, :])


def check_symmetric(m, what="matrix"):
    """Raise ContractError unless `m` is square and symmetric within 1e-12."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"{what} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > 1e-12 * scale:
        raise ContractError(f"{what} is not symmetric (max asymmetry {asym:.3g})")
    return m


def max_eigenvalue(m):
    """The largest eigenvalue of the symmetric matrix `m`, exactly."""
    m = check_symmetric(m, "max_eigenvalue input")
    return float(np.linalg.eigvalsh(m)[-1])


def rescaled_laplacian(g):
    """2 L / lambda_max - I, with its spectrum in [-1, 1]."""
    lap = graph_laplacian(g)
    lmax = max_eigenvalue(lap)
    if lmax <= 0.0:
        raise DegenerateSpectrum(f"Laplacian of {g.name!r} has lambda_max = {lmax}")
    return _symmetrized(2.0 * lap / lmax - np.eye(g.joint_count))


def chebyshev_basis(lt, x, k):
    """Apply the Chebyshev polynomials T_0..T_{k-1} of `lt` to `x`.

    `lt` is a j×j rescaled Laplacian, `x` has j rows in its second-to-last
    axis.  `x` can be a numpy array or an autodiff Tensor; the recurrence
    T_k = 2 L~ T_{k-1} - T_{k-2} only uses operators both support.

    Returns a list of `k` arrays shaped like `x`.

    """
    if k < 1:
        raise ContractError(f"Chebyshev order must be at least 1, got {k}")
    lt = np.asarray(lt, dtype=float)
    if lt.ndim != 2 or lt.shape[0] != lt.shape[1]:
        raise ShapeError(f"chebyshev_basis: operator must be square, got {lt.shape}")
    shape = tuple(x.shape)
    if len(shape) < 2 or shape[-2] != lt.shape[0]:
        raise ShapeError(
            f"chebyshev_basis: operator {lt.shape} doesn't match features {shape}"
        )
    terms = [x]
    if k >= 2:
        terms.append(lt @ x)
    for _ in range(2, k):
        terms.append(2.0 * (lt @ terms[-1]) - terms[-2])
    return terms


def chebyshev_polynomials(lt, k):
    """The matrices T_0(L~)..T_{k-1}(L~)."""
    lt = np.asarray(lt, dtype=float)
    return chebyshev_basis(lt, np.eye(lt.shape[0]), k)


def matrix_to_csv(m):
    """CSV text for a matrix: one row per line, round-trip float precision."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return "".join(format_row(row) + "\n" for row in m)


def write_matrix_csv(m, path):
    """Write `m` as CSV to `path`."""
    ensure_dir_for_file(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(matrix_to_csv(m))


def read_matrix_csv(path):
    """Read a matrix written by `write_matrix_csv`."""
    with open(path, encoding="utf-8") as f:
        rows = [
            [float(v) for v in line.split(",")]
            for line in f if line.strip()
        ]
    return np.array(rows)
