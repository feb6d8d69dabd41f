import numpy as np
import pytest

from bubblebem import geometry
from bubblebem.errors import ConfigurationError

ORIGIN = np.zeros(3)
FOUR_PI = 4.0 * np.pi


def icosahedron_reference():
    """Edge, face area and volume of the unit-circumradius icosahedron."""
    edge = 4.0 / np.sqrt(10.0 + 2.0 * np.sqrt(5.0))
    area = 20.0 * np.sqrt(3.0) / 4.0 * edge**2
    volume = 5.0 / 12.0 * (3.0 + np.sqrt(5.0)) * edge**3
    return edge, area, volume


class TestSphere:
    def test_panel_counts(self, sphere2, sphere3):
        assert sphere2.n_panels == 20 * 4**2
        assert sphere3.n_panels == 20 * 4**3

    def test_refinement_out_of_range(self):
        with pytest.raises(ConfigurationError):
            geometry.make_sphere(ORIGIN, 1.0, 9)
        with pytest.raises(ConfigurationError):
            geometry.make_sphere(ORIGIN, 1.0, -1)
        with pytest.raises(ConfigurationError):
            geometry.make_sphere(ORIGIN, 0.0, 3)

    def test_area_unit_sphere(self, sphere3):
        assert abs(sphere3.area - FOUR_PI) / FOUR_PI < 0.01

    def test_area_radius_two(self):
        mesh = geometry.make_sphere(ORIGIN, 2.0, 3)
        assert abs(mesh.area - 16 * np.pi) / (16 * np.pi) < 0.01

    def test_level_zero_brute_force_area(self):
        # The 20-panel mesh is the volume-matched icosahedron; its area is the
        # analytic face area times the matching factor squared.
        mesh = geometry.make_sphere(ORIGIN, 1.0, 0)
        assert mesh.n_panels == 20
        _, area, volume = icosahedron_reference()
        scale = (FOUR_PI / 3.0 / volume) ** (1.0 / 3.0)
        brute = 0.0
        for tri in mesh.vertices[mesh.panels]:
            brute += 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
        assert brute == pytest.approx(mesh.area, rel=1e-13)
        assert mesh.area == pytest.approx(area * scale**2, rel=1e-12)

    def test_unit_normals(self, sphere3):
        norms = np.linalg.norm(sphere3.panel_normals, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_normals_outward(self, sphere3):
        bary = sphere3.barycenter
        sign = np.einsum("ij,ij->i", sphere3.panel_normals,
                         sphere3.panel_centroids - bary)
        assert np.all(sign > 0)

    def test_gauss_identity(self, sphere3):
        vol = FOUR_PI / 3.0
        assert abs(sphere3.volume - vol) / vol <= 1e-2

    def test_divergence_theorem_linear_field(self, sphere3):
        # F(x) = x: sum area * (normal . centroid) = 3 |Omega|
        total = np.einsum("i,i->", sphere3.panel_areas,
                          np.einsum("ij,ij->i", sphere3.panel_normals,
                                    sphere3.panel_centroids))
        assert abs(total - 3 * FOUR_PI / 3.0) / FOUR_PI <= 1e-2

    def test_area_error_monotone_under_refinement(self):
        errs = []
        for level in range(1, 6):
            mesh = geometry.make_sphere(ORIGIN, 1.0, level)
            errs.append(abs(mesh.area - FOUR_PI))
        assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))

    def test_quadrature_weights_sum_to_areas(self, sphere2):
        assert np.allclose(sphere2.quad_weights.sum(axis=1), sphere2.panel_areas,
                           rtol=1e-13)


class TestEllipsoid:
    def test_identity_stretch_matches_sphere(self, sphere3):
        ell = geometry.make_ellipsoid(ORIGIN, (1.0, 1.0, 1.0), 3)
        assert np.max(np.abs(ell.vertices - sphere3.vertices)) < 1e-14
        assert np.max(np.abs(ell.panel_normals - sphere3.panel_normals)) < 1e-12

    def test_prolate_area(self):
        # semi-axes (1, 1, 2): closed-form prolate spheroid area
        a, c = 1.0, 2.0
        e = np.sqrt(1 - a**2 / c**2)
        exact = 2 * np.pi * a**2 * (1 + c / (a * e) * np.arcsin(e))
        mesh = geometry.make_ellipsoid(ORIGIN, (1, 1, 2), 3)
        assert abs(mesh.area - exact) / exact < 0.01

    def test_volume_gauss(self):
        mesh = geometry.make_ellipsoid(ORIGIN, (2, 1, 1), 3)
        exact = 8 * np.pi / 3
        assert abs(mesh.volume - exact) / exact < 0.01

    def test_normals_recomputed_are_normal_to_surface(self):
        # on an ellipsoid x^2/a^2 + ... = 1 the normal is parallel to x/a^2
        mesh = geometry.make_ellipsoid(ORIGIN, (1, 1, 2), 3)
        grad = mesh.panel_centroids / np.array([1.0, 1.0, 4.0])[None, :]
        grad /= np.linalg.norm(grad, axis=1)[:, None]
        dots = np.einsum("ij,ij->i", grad, mesh.panel_normals)
        assert np.min(dots) > 0.99

    def test_nonpositive_axis(self):
        with pytest.raises(ConfigurationError):
            geometry.make_ellipsoid(ORIGIN, (1.0, -1.0, 1.0), 2)


class TestVolumeQuadrature:
    def test_sphere_volume(self, sphere3):
        vq = geometry.make_volume_quadrature(sphere3, ORIGIN, 4)
        assert abs(vq.total_volume - FOUR_PI / 3) / (FOUR_PI / 3) < 0.01

    def test_ellipsoid_volume(self):
        mesh = geometry.make_ellipsoid(ORIGIN, (1, 1, 2), 3)
        vq = geometry.make_volume_quadrature(mesh, ORIGIN, 4)
        exact = 8 * np.pi / 3
        assert abs(vq.total_volume - exact) / exact < 0.01

    def test_constant_integrand_is_total_volume(self, sphere2):
        vq = geometry.make_volume_quadrature(sphere2, ORIGIN, 3)
        assert vq.weights.sum() == pytest.approx(vq.total_volume, rel=1e-15)

    def test_weights_positive_nodes_inside(self, sphere2):
        vq = geometry.make_volume_quadrature(sphere2, ORIGIN, 4)
        assert np.all(vq.weights > 0)
        radius = np.linalg.norm(vq.nodes, axis=1)
        assert np.all(radius < 1.01)
        assert np.all(radius > 0)

    def test_center_outside_rejected(self, sphere2):
        with pytest.raises(ConfigurationError):
            geometry.make_volume_quadrature(sphere2, np.array([2.0, 0, 0]), 3)

    def test_smooth_integrand(self, sphere3):
        # int_B |x|^2 = 4 pi / 5 for the unit ball
        vq = geometry.make_volume_quadrature(sphere3, ORIGIN, 4)
        val = vq.weights @ np.sum(vq.nodes**2, axis=1)
        assert abs(val - 4 * np.pi / 5) / (4 * np.pi / 5) < 0.01


class TestScaling:
    def test_half_scale(self, sphere2):
        smap = geometry.ScalingMap(ORIGIN, 0.5)
        scaled = geometry.scale_mesh(sphere2, smap)
        assert np.max(np.abs(scaled.panel_areas - 0.25 * sphere2.panel_areas)) < 1e-12
        assert np.max(np.abs(scaled.panel_normals - sphere2.panel_normals)) < 1e-12

    def test_identity_scale_bit_identical(self, sphere2):
        scaled = geometry.scale_mesh(sphere2, geometry.ScalingMap(ORIGIN, 1.0))
        assert np.array_equal(scaled.vertices, sphere2.vertices)
        assert np.array_equal(scaled.panels, sphere2.panels)

    def test_round_trip(self, sphere2):
        center = np.array([0.3, -0.2, 0.1])
        down = geometry.scale_mesh(sphere2, geometry.ScalingMap(center, 0.25))
        back = geometry.scale_mesh(down, geometry.ScalingMap(center, 4.0))
        assert np.max(np.abs(back.vertices - sphere2.vertices)) < 1e-14

    def test_map_round_trip_on_points(self, rng):
        center = np.array([1.0, 2.0, 3.0])
        smap = geometry.ScalingMap(center, 0.37)
        pts = rng.standard_normal((50, 3))
        assert np.max(np.abs(smap.inverse().apply(smap.apply(pts)) - pts)) < 1e-14

    def test_nonpositive_factor(self):
        with pytest.raises(ConfigurationError):
            geometry.ScalingMap(ORIGIN, 0.0)


class TestOffFormat:
    def test_round_trip(self, sphere1, tmp_path):
        path = tmp_path / "mesh.off"
        geometry.write_off(sphere1, path)
        back = geometry.read_off(path)
        assert np.allclose(back.vertices, sphere1.vertices, atol=1e-15)
        assert np.array_equal(back.panels, sphere1.panels)
        assert np.allclose(back.panel_areas, sphere1.panel_areas)

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.off"
        path.write_text("NOTOFF\n1 2 3\n")
        with pytest.raises(ConfigurationError):
            geometry.read_off(path)
