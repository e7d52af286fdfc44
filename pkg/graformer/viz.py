# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Export adjacency and Laplacian matrices as CSV and grayscale PGM heatmaps."""

import os.path

import numpy as np

from graformer.exceptions import GraformerException
from graformer.graphops import chebyshev_polynomials, normalized_adjacency, write_matrix_csv
from graformer.layers import effective_adjacency
from graformer.misc import ensure_dir_for_file

# How many Chebyshev terms of the rescaled Laplacian to export.
EXPORT_CHEB_TERMS = 3


def to_gray(matrix):
    """Min-max scale `matrix` to 0..255 bytes.  A constant matrix is all 0."""
    m = np.asarray(matrix, dtype=float)
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def pgm_bytes(matrix, binary=True):
    """An 8-bit PGM image of `matrix`, one pixel per cell."""
    gray = to_gray(matrix)
    rows, cols = gray.shape
    if binary:
        return f"P5\n{cols} {rows}\n255\n".encode("ascii") + gray.tobytes()
    lines = [f"P2\n{cols} {rows}\n255"]
    lines.extend(" ".join(str(v) for v in row) for row in gray)
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(matrix, path, binary=True):
    ensure_dir_for_file(path)
    with open(path, "wb") as f:
        f.write(pgm_bytes(matrix, binary))


def read_pgm(path):
    """Read a P2 or P5 file written by `write_pgm` into a uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    # Magic, width, height, maxval, each followed by one whitespace byte.
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    magic, cols, rows = tokens[0], int(tokens[1]), int(tokens[2])
    body = data[pos + 1:]
    if magic == "P5":
        values = np.frombuffer(body, dtype=np.uint8, count=rows * cols)
    elif magic == "P2":
        values = np.array(body.split(), dtype=np.uint8)
    else:
        raise GraformerException(f"{path!r} isn't a PGM image")
    return values.reshape(rows, cols)


def viz_matrices(model):
    """Yield (name, matrix) for everything `export_viz` writes."""
    yield "adjacency", normalized_adjacency(model.skeleton)
    for k, t in enumerate(chebyshev_polynomials(model.laplacian, EXPORT_CHEB_TERMS)):
        yield f"laplacian_T{k}", t
    for path, layer in model.lam_layers():
        yield "lam_" + path.replace(".", "_"), effective_adjacency(layer)


def export_viz(model, out_dir, binary=True):
    """Write every matrix as NAME.csv and NAME.pgm in `out_dir`.

    Returns the list of names written.

    """
    names = []
    for name, matrix in viz_matrices(model):
        write_matrix_csv(matrix, os.path.join(out_dir, name + ".csv"))
        write_pgm(matrix, os.path.join(out_dir, name + ".pgm"), binary)
        names.append(name)
    return names
