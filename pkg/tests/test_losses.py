import numpy as np
import pytest

from conftest import make_box

from hoipose.errors import InputValidationError
from hoipose.geometry import TriangleMesh, VertexSelection
from hoipose.losses import (ContactSpec, LossInputs, LossWeights, contact_loss,
                            human_depth_anchor_loss, normalize_depth,
                            penetration_loss, relative_depth_loss,
                            silhouette_loss, total_loss)


class TestSilhouetteLoss:
    def test_identical_is_zero(self, rng):
        s = rng.uniform(size=(8, 8))
        assert silhouette_loss(s, s, s, s, 0.7) == 0.0

    def test_ones_vs_zeros(self):
        ones = np.ones((6, 6))
        zeros = np.zeros((6, 6))
        same = np.full((6, 6), 0.3)
        # scene term contributes 1.0; object terms equal so weighted term is 0
        assert silhouette_loss(ones, zeros, same, same, 0.8) == pytest.approx(1.0)

    def test_zero_weight_ignores_object_term(self, rng):
        s = rng.uniform(size=(5, 5))
        so1 = rng.uniform(size=(5, 5))
        so2 = rng.uniform(size=(5, 5))
        assert silhouette_loss(s, s, so1, so2, 0.0) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(InputValidationError):
            silhouette_loss(np.zeros((4, 4)), np.zeros((5, 5)),
                            np.zeros((4, 4)), np.zeros((4, 4)), 1.0)


class TestNormalizeDepth:
    def test_one_two_three(self):
        d = np.array([[1.0, 2.0, 3.0]])
        out = normalize_depth(d, np.ones_like(d, dtype=bool))
        assert np.array_equal(out, [[-1.5, 0.0, 1.5]])

    def test_affine_invariance(self, rng):
        for _ in range(100):
            d = rng.uniform(1, 5, size=(6, 7))
            region = rng.uniform(size=d.shape) > 0.3
            if region.sum() < 4:
                continue
            a = float(rng.uniform(0.1, 10))
            b = float(rng.uniform(-5, 5))
            e1 = normalize_depth(d, region)
            e2 = normalize_depth(a * d + b, region)
            assert np.max(np.abs(e1 - e2)) < 1e-6

    def test_constant_region_is_zero(self):
        d = np.full((4, 4), 2.5)
        out = normalize_depth(d, np.ones_like(d, dtype=bool))
        assert np.all(out == 0)

    def test_empty_region(self):
        with pytest.raises(InputValidationError):
            normalize_depth(np.ones((3, 3)), np.zeros((3, 3), dtype=bool))


class TestRelativeDepthLoss:
    def test_affine_rescaling_is_zero(self, rng):
        d = rng.uniform(1, 4, size=(8, 8))
        obs = 2.5 * d + 0.7
        region = np.ones_like(d, dtype=bool)
        val = relative_depth_loss(d, obs, d, obs, region, region, 0.5)
        assert val < 1e-6

    def test_planted_offset_positive(self, rng):
        d = rng.uniform(1, 4, size=(8, 8))
        obs = d.copy()
        obs[:4] += 1.0  # non-affine distortion
        region = np.ones_like(d, dtype=bool)
        assert relative_depth_loss(d, obs, d, d, region, region, 0.0) > 0.01

    def test_object_term_linearity(self, rng):
        d = rng.uniform(1, 4, size=(8, 8))
        obs = rng.uniform(1, 4, size=(8, 8))
        region = np.ones_like(d, dtype=bool)
        one = relative_depth_loss(d, obs, d, obs, region, region, 0.0)
        two = relative_depth_loss(d, obs, d, obs, region, region, 1.0)
        assert two == pytest.approx(2 * one, abs=1e-12)


class TestHumanDepthAnchor:
    def test_anchored_is_zero(self):
        d = np.full((4, 4), 2.5)
        assert human_depth_anchor_loss(d, 2.5) == 0.0

    def test_example_difference(self):
        d = np.full((4, 4), 2.8)
        assert human_depth_anchor_loss(d, 2.5) == pytest.approx(0.3, abs=1e-9)

    def test_variance_invariant_at_fixed_mean(self, rng):
        base = np.full((1, 16), 2.8)
        noise = rng.normal(size=(1, 16))
        noise -= noise.mean()
        assert human_depth_anchor_loss(base + 0.05 * noise, 2.5) == \
            pytest.approx(human_depth_anchor_loss(base, 2.5), abs=1e-9)

    def test_empty_region(self):
        with pytest.raises(InputValidationError):
            human_depth_anchor_loss(np.zeros((3, 3)), 2.5)


def _palm_human(vertex):
    """Single-triangle 'human' whose vertex 0 is the palm probe point."""
    v = np.array([vertex, [5.0, 0.0, 0.0], [5.0, 1.0, 0.0]])
    return TriangleMesh(v, np.array([[0, 1, 2]]))


class TestContactLoss:
    def test_no_flags_no_loss(self, unit_cube):
        human = _palm_human([0.5, 0.5, -0.05])
        spec = ContactSpec(0, 0, VertexSelection([0]), VertexSelection([0]))
        assert contact_loss(unit_cube, human, spec, 0.1) == 0.0

    def test_vertex_on_surface_contributes_zero(self, unit_cube):
        human = _palm_human([0.5, 0.5, 0.0])
        spec = ContactSpec(0, 1, right_palm=VertexSelection([0]))
        assert contact_loss(unit_cube, human, spec, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_gated_distance_value(self, unit_cube):
        human = _palm_human([0.5, 0.5, -0.05])
        spec = ContactSpec(0, 1, right_palm=VertexSelection([0]))
        assert contact_loss(unit_cube, human, spec, 0.1) == pytest.approx(0.05, abs=1e-9)

    def test_outside_threshold_ignored(self, unit_cube):
        human = _palm_human([0.5, 0.5, -0.5])
        spec = ContactSpec(0, 1, right_palm=VertexSelection([0]))
        assert contact_loss(unit_cube, human, spec, 0.1) == 0.0

    def test_smooth_variant_close_to_hard(self, unit_cube):
        human = _palm_human([0.5, 0.5, -0.05])
        spec = ContactSpec(0, 1, right_palm=VertexSelection([0]))
        hard = contact_loss(unit_cube, human, spec, 0.1)
        soft = contact_loss(unit_cube, human, spec, 0.1, smooth=True)
        assert abs(hard - soft) < 0.01


class TestPenetrationLoss:
    def test_disjoint_is_zero(self, unit_cube):
        obj = make_box(0.2, center=(3.0, 0.0, 0.0))
        assert penetration_loss(obj, unit_cube) == 0.0

    def test_single_vertex_depth(self, unit_cube):
        # tetra with exactly one vertex 0.02 m inside the unit cube
        v = np.array([[0.5, 0.5, 0.02], [0.3, 0.3, -0.4],
                      [0.7, 0.3, -0.4], [0.5, 0.8, -0.4]])
        t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
        obj = TriangleMesh(v, t)
        assert penetration_loss(obj, unit_cube) == pytest.approx(0.02, abs=1e-9)

    def test_linear_in_depth(self, unit_cube):
        def tetra(depth):
            v = np.array([[0.5, 0.5, depth], [0.3, 0.3, -0.4],
                          [0.7, 0.3, -0.4], [0.5, 0.8, -0.4]])
            t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
            return TriangleMesh(v, t)
        one = penetration_loss(tetra(0.02), unit_cube)
        two = penetration_loss(tetra(0.04), unit_cube)
        assert two == pytest.approx(2 * one, abs=1e-12)

    def test_non_watertight_disables_with_warning(self):
        open_mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]),
                                 np.array([[0, 1, 2]]))
        obj = make_box(0.2)
        with pytest.warns(UserWarning):
            assert penetration_loss(obj, open_mesh) == 0.0

    def test_symmetric_roles_identical_meshes(self, unit_cube):
        other = make_box(1.0, center=(0.5, 0.5, 0.5))
        a = penetration_loss(unit_cube, other)
        b = penetration_loss(other, unit_cube)
        assert (a == 0) == (b == 0)


class TestTotalLoss:
    def _inputs(self, rng, with_depth=True, with_contact=True):
        s = rng.uniform(size=(6, 6))
        so = rng.uniform(size=(6, 6))
        d = rng.uniform(2, 3, size=(6, 6))
        region = np.ones((6, 6), dtype=bool)
        ins = LossInputs(sil=s, sil_obs=s * 0.9, sil_obj=so, sil_obj_obs=so * 0.8)
        if with_depth:
            ins.depth = d
            ins.depth_obs = d * 1.1
            ins.depth_obj = d
            ins.depth_obj_obs = d * 1.2
            ins.region_scene = region
            ins.region_obj = region
            ins.human_depth = 2.5
        if with_contact:
            ins.object_mesh_posed = make_box(0.3, center=(0.5, 0.5, 0.55))
            ins.human_mesh = make_box(1.0, center=(0.5, 0.5, 0.5))
            ins.contact = ContactSpec(0, 1, right_palm=VertexSelection([0]))
        return ins

    def test_stage1_ignores_depth_and_contact(self, rng):
        ins = self._inputs(rng, with_depth=False, with_contact=False)
        total, terms = total_loss(ins, LossWeights(), stage=1)
        assert set(terms) == {"sil"}

    def test_all_zero_terms_is_zero(self):
        z = np.zeros((4, 4))
        d = np.full((4, 4), 2.5)
        region = np.ones((4, 4), dtype=bool)
        far_obj = make_box(0.2, center=(5.0, 0, 0))
        human = make_box(1.0, center=(0.5, 0.5, 0.5))
        ins = LossInputs(sil=z, sil_obs=z, sil_obj=z, sil_obj_obs=z,
                         depth=d, depth_obs=d, depth_obj=d, depth_obj_obs=d,
                         region_scene=region, region_obj=region, human_depth=2.5,
                         object_mesh_posed=far_obj, human_mesh=human,
                         contact=ContactSpec(0, 0))
        total, terms = total_loss(ins, LossWeights(), stage=3)
        assert total == 0.0

    def test_stage3_breakdown_sums(self, rng):
        ins = self._inputs(rng)
        w = LossWeights()
        total, terms = total_loss(ins, w, stage=3)
        manual = (w.w_sil * terms["sil"] + w.w_depth_rel * terms["depth_rel"]
                  + w.w_depth_abs * terms["depth_abs"]
                  + w.w_contact * terms["contact"]
                  + w.w_penetration * terms["penetration"])
        assert total == pytest.approx(manual, abs=1e-9)

    def test_missing_stage_input_errors(self, rng):
        ins = self._inputs(rng, with_depth=False)
        with pytest.raises(InputValidationError):
            total_loss(ins, LossWeights(), stage=2)

    def test_bad_stage(self, rng):
        with pytest.raises(InputValidationError):
            total_loss(self._inputs(rng), LossWeights(), stage=4)


class TestLossWeights:
    def test_defaults_match_reference_table(self):
        w = LossWeights()
        assert (w.w_sil, w.w_depth_rel, w.w_depth_abs, w.w_contact,
                w.w_penetration, w.theta_contact) == (100.0, 0.5, 0.1, 1.0, 100.0, 0.1)

    def test_negative_weight_rejected(self):
        with pytest.raises(InputValidationError):
            LossWeights(w_sil=-1.0)
