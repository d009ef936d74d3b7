"""Domains, grids, regions and the named damping/coupling configurations"""

import numpy as np
import pytest

from modules.errors import GeometryError
from modules.geometry import (CoefficientField, Domain, RegionSpec, build_grid, check_nesting,
                              constant_field, indicator_field, preset_config, resolve_preset_params)


def _columns(field, grid):
    """x coordinates of the columns carrying the field (square grids)"""
    x = grid.nodes()[field.support, 0]
    return sorted(set(np.round(x, 12).tolist()))


# ====================================================================
# Domains and grids
# ====================================================================


class TestGrid:

    def test_spacing_and_interior_nodes(self):
        grid = build_grid(Domain.interval(1.0), 4)
        assert grid.h == pytest.approx(0.2)
        np.testing.assert_allclose(grid.nodes()[:, 0], [0.2, 0.4, 0.6, 0.8])
        assert grid.size == 4
        assert grid.cell_volume == pytest.approx(0.2)

    def test_square_is_x_fastest(self):
        grid = build_grid(Domain.square(1.0), 3)
        nodes = grid.nodes()
        assert nodes.shape == (9, 2)
        np.testing.assert_allclose(nodes[1], [0.5, 0.25])
        np.testing.assert_allclose(nodes[3], [0.25, 0.5])
        assert grid.cell_volume == pytest.approx(0.25 ** 2)

    @pytest.mark.parametrize("L", [0.0, -1.0, float('inf')])
    def test_rejects_bad_length(self, L):
        with pytest.raises(GeometryError):
            Domain.interval(L)

    @pytest.mark.parametrize("n", [0, -3, 2.5])
    def test_rejects_bad_node_count(self, n):
        with pytest.raises(GeometryError):
            build_grid(Domain.interval(1.0), n)

    def test_unknown_domain_kind(self):
        with pytest.raises(GeometryError, match="unknown domain kind"):
            Domain('disk', 1.0)


# ====================================================================
# Regions and fields
# ====================================================================


class TestRegions:

    def test_membership_is_half_open(self):
        grid = build_grid(Domain.interval(1.0), 4)
        field = indicator_field(grid, RegionSpec.interval(0.2, 0.6), 3.0)
        np.testing.assert_array_equal(field.values, [3.0, 3.0, 0.0, 0.0])

    def test_union_of_regions(self):
        grid = build_grid(Domain.interval(1.0), 4)
        field = indicator_field(grid, [RegionSpec.interval(0.2, 0.4), RegionSpec.interval(0.8, 1.0)], 1.0)
        np.testing.assert_array_equal(field.support, [True, False, False, True])

    def test_strip_ignores_other_axis(self):
        grid = build_grid(Domain.square(1.0), 9)
        field = indicator_field(grid, RegionSpec.strip(0, 0.3, 0.5), 1.0)
        assert field.support.sum() == 2 * 9
        assert _columns(field, grid) == [0.3, 0.4]

    def test_frame_measures_distance_to_boundary(self):
        grid = build_grid(Domain.square(1.0), 9)
        field = indicator_field(grid, RegionSpec.frame(0.0, 0.2), 1.0)
        assert field.support.sum() == 9 * 9 - 7 * 7

    def test_predicate_region(self):
        grid = build_grid(Domain.interval(1.0), 9)
        region = RegionSpec.where(lambda p: p[:, 0] > 0.55, label='right')
        field = indicator_field(grid, region, 2.0)
        assert field.support.sum() == 4

    def test_interval_region_needs_interval_domain(self):
        grid = build_grid(Domain.square(1.0), 4)
        with pytest.raises(GeometryError, match="interval domains"):
            indicator_field(grid, RegionSpec.interval(0.1, 0.5), 1.0)

    def test_region_outside_domain(self):
        grid = build_grid(Domain.interval(1.0), 4)
        with pytest.raises(GeometryError, match="leave"):
            indicator_field(grid, RegionSpec.interval(0.5, 1.5), 1.0)

    def test_damping_must_be_nonnegative(self):
        grid = build_grid(Domain.interval(1.0), 4)
        with pytest.raises(GeometryError):
            indicator_field(grid, RegionSpec.everywhere(), -1.0, name='b')
        coupling = indicator_field(grid, RegionSpec.everywhere(), -1.0, name='c')
        assert coupling.levels() == [-1.0]

    def test_field_size_checked(self):
        grid = build_grid(Domain.interval(1.0), 4)
        with pytest.raises(GeometryError, match="3 values for 4 nodes"):
            CoefficientField(grid, np.ones(3))

    def test_field_is_read_only(self):
        grid = build_grid(Domain.interval(1.0), 4)
        field = constant_field(grid, 1.0)
        assert field.is_constant
        with pytest.raises(ValueError):
            field.values[0] = 2.0

    def test_nesting(self):
        grid = build_grid(Domain.interval(1.0), 9)
        b = indicator_field(grid, RegionSpec.interval(0.1, 0.6), 1.0, name='b')
        inner = indicator_field(grid, RegionSpec.interval(0.2, 0.4), 1.0, name='c')
        outer = indicator_field(grid, RegionSpec.interval(0.5, 0.8), 1.0, name='c')
        assert check_nesting(b, inner)
        assert not check_nesting(b, outer)


# ====================================================================
# Presets
# ====================================================================


class TestPresets:

    def test_h4_interior_strips(self):
        grid = build_grid(Domain.square(1.0), 9)
        b, c = preset_config('H4', grid)
        assert _columns(b, grid) == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
        assert _columns(c, grid) == [0.4, 0.5]
        assert check_nesting(b, c)

    def test_h5_strips_touch_boundary(self):
        grid = build_grid(Domain.square(1.0), 9)
        b, c = preset_config('H5', grid, {'b0': 2.0, 'c0': 0.5})
        assert _columns(b, grid) == [0.1, 0.2, 0.3, 0.4]
        assert _columns(c, grid) == [0.1, 0.2]
        assert b.levels() == [0.0, 2.0]
        assert c.levels() == [0.0, 0.5]

    def test_h5_order_violation_names_constraint(self):
        grid = build_grid(Domain.square(1.0), 9)
        with pytest.raises(GeometryError, match="eps_1 < eps_2") as info:
            preset_config('H5', grid, {'eps': [0.5, 0.25]})
        assert info.value.context['preset'] == 'H5'

    def test_h4_needs_square(self):
        with pytest.raises(GeometryError, match="square"):
            preset_config('H4', build_grid(Domain.interval(1.0), 9))

    def test_one_dimensional_overlapping_intervals(self):
        grid = build_grid(Domain.interval(1.0), 9)
        b, c = preset_config('OneD_bc', grid)
        np.testing.assert_allclose(grid.nodes()[b.support, 0], [0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(grid.nodes()[c.support, 0], [0.3, 0.4, 0.5, 0.6])

    def test_boundary_frame_shares_support(self):
        grid = build_grid(Domain.square(1.0), 9)
        b, c = preset_config('H1_sample', grid)
        np.testing.assert_array_equal(b.support, c.support)
        assert b.support.sum() == 32

    @pytest.mark.parametrize("name", ['H2_sample', 'H3_sample'])
    def test_nested_frames(self, name):
        grid = build_grid(Domain.square(1.0), 19)
        b, c = preset_config(name, grid)
        assert c.support.sum() > 0
        assert c.support.sum() < b.support.sum()
        assert check_nesting(b, c)

    def test_defaults_scale_with_length(self):
        params = resolve_preset_params('H4', 2.0)
        assert params['eps'] == pytest.approx((0.4, 0.8, 1.2, 1.6))
        assert params['b0'] == 1.0

    def test_unknown_preset_and_parameter(self):
        grid = build_grid(Domain.square(1.0), 5)
        with pytest.raises(GeometryError, match="unknown preset"):
            preset_config('H9', grid)
        with pytest.raises(GeometryError, match="unexpected parameters"):
            preset_config('H4', grid, {'width': 0.1})

    def test_positive_damping_level_required(self):
        grid = build_grid(Domain.square(1.0), 5)
        with pytest.raises(GeometryError, match="b0 > 0"):
            preset_config('H5', grid, {'b0': 0.0})
