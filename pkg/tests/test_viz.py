# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Tests of graformer/viz.py"""

import os

import numpy as np
import pytest

from graformer.exceptions import GraformerException
from graformer.graphops import human16, normalized_adjacency, read_matrix_csv, rescaled_laplacian
from graformer.layers import GraFormerModel, ModelConfig
from graformer.viz import export_viz, pgm_bytes, read_pgm, to_gray, write_pgm

from tests.graformertest import GraformerTest


def tiny_model(variant="graformer"):
    return GraFormerModel(ModelConfig(human16(), layers=2, dim=8, heads=2, variant=variant), seed=3)


class GrayTest(GraformerTest):
    """Tests of to_gray and the PGM bytes."""

    run_in_temp_dir = False

    def test_to_gray(self):
        gray = to_gray([[-1.0, 0.0], [0.5, 1.0]])
        assert gray.dtype == np.uint8
        assert gray.tolist() == [[0, 128], [191, 255]]

    def test_constant_matrix(self):
        assert to_gray(np.full((2, 3), 7.5)).tolist() == [[0, 0, 0], [0, 0, 0]]

    def test_binary_bytes(self):
        data = pgm_bytes([[0.0, 1.0, 2.0]])
        assert data == b"P5\n3 1\n255\n" + bytes([0, 128, 255])

    def test_ascii_bytes(self):
        data = pgm_bytes([[0.0, 1.0], [2.0, 3.0]], binary=False)
        assert data == b"P2\n2 2\n255\n0 85\n170 255\n"


class PgmFileTest(GraformerTest):
    """Writing and reading PGM files."""

    @pytest.mark.parametrize("binary", [True, False])
    def test_read_back(self, binary, rng):
        m = rng.standard_normal((16, 16))
        write_pgm(m, "out/m.pgm", binary)
        assert np.array_equal(read_pgm("out/m.pgm"), to_gray(m))

    def test_binary_whitespace_values(self):
        # Pixel values that look like whitespace bytes still read back.
        m = np.array([[9.0, 10.0, 32.0, 0.0, 255.0]])
        write_pgm(m, "ws.pgm")
        assert np.array_equal(read_pgm("ws.pgm"), to_gray(m))

    def test_not_a_pgm(self):
        self.make_file("x.pgm", "P6\n1 1\n255\nabc")
        with pytest.raises(GraformerException, match="isn't a PGM image"):
            read_pgm("x.pgm")


class ExportVizTest(GraformerTest):
    """Tests of export_viz."""

    def test_names_and_files(self):
        names = export_viz(tiny_model(), "viz")
        assert names == [
            "adjacency", "laplacian_T0", "laplacian_T1", "laplacian_T2",
            "lam_blocks_0_graatt_gcn1", "lam_blocks_0_graatt_gcn2",
            "lam_blocks_1_graatt_gcn1", "lam_blocks_1_graatt_gcn2",
        ]
        for name in names:
            self.assert_exists(os.path.join("viz", name + ".csv"))
            self.assert_exists(os.path.join("viz", name + ".pgm"))
            assert read_pgm(os.path.join("viz", name + ".pgm")).shape == (16, 16)

    def test_matrix_contents(self):
        export_viz(tiny_model(), "viz", binary=False)
        assert np.array_equal(read_matrix_csv("viz/adjacency.csv"), normalized_adjacency(human16()))
        assert np.array_equal(read_matrix_csv("viz/laplacian_T1.csv"), rescaled_laplacian(human16()))
        assert np.array_equal(read_matrix_csv("viz/laplacian_T0.csv"), np.eye(16))
        lam = read_matrix_csv("viz/lam_blocks_0_graatt_gcn1.csv")
        np.testing.assert_allclose(lam.sum(axis=1), np.ones(16), rtol=1e-12)
        with open("viz/adjacency.pgm", "rb") as f:
            assert f.read(3) == b"P2\n"

    def test_no_lam_layers(self):
        names = export_viz(tiny_model("model-c"), "viz")
        assert names == ["adjacency", "laplacian_T0", "laplacian_T1", "laplacian_T2"]
