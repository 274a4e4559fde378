"""Grid construction, refinement nesting, and field-state containers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dncollapse.geometry import (
    ACTIVE,
    EXCISED,
    FIELD_NAMES,
    UNSET,
    Cell,
    ConfigurationError,
    DoubleNullGrid,
    FieldState,
    build_grid,
    default_r_floor,
    refine,
)


def test_mask_codes_are_stable():
    # serialized checkpoints and CSV artifacts depend on these exact values
    assert int(UNSET) == 0
    assert int(ACTIVE) == 1
    assert int(EXCISED) == 2


def test_field_name_order():
    assert FIELD_NAMES == ("r", "log_omega", "phi", "nu", "lam", "z", "w")


class TestGrid:
    def test_coordinates_hit_endpoints_exactly(self):
        g = build_grid(0.25, 1.75, -0.5, 0.5, 7, 11)
        u = g.u_coords()
        v = g.v_coords()
        assert u[0] == 0.25 and u[-1] == 1.75
        assert v[0] == -0.5 and v[-1] == 0.5
        assert u.shape == (7,) and v.shape == (11,)
        assert g.shape == (7, 11)

    def test_pointwise_map_matches_coordinate_arrays(self):
        g = build_grid(0.1, 0.9, 0.2, 0.8, 19, 23)
        i = np.arange(g.n_u)
        j = np.arange(g.n_v)
        assert np.array_equal(g.u_of(i), g.u_coords())
        assert np.array_equal(g.v_of(j), g.v_coords())

    def test_index_of_round_trip(self):
        g = build_grid(0.0, 2.0, 0.0, 3.0, 41, 61)
        for i, j in [(0, 0), (40, 60), (17, 5), (3, 59)]:
            assert g.index_of(float(g.u_of(i)), float(g.v_of(j))) == (i, j)

    def test_index_of_rejects_exterior_points(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 11, 11)
        with pytest.raises(ConfigurationError):
            g.index_of(1.2, 0.5)
        with pytest.raises(ConfigurationError):
            g.index_of(0.5, -0.2)

    @pytest.mark.parametrize("args", [
        (1.0, 0.5, 0.0, 1.0, 11, 11),   # u_max < u_min
        (0.0, 1.0, 1.0, 1.0, 11, 11),   # degenerate v extent
        (0.0, 1.0, 0.0, 1.0, 1, 11),    # too few points
        (0.0, np.inf, 0.0, 1.0, 11, 11),
        (0.0, np.nan, 0.0, 1.0, 11, 11),
    ])
    def test_build_grid_rejects_bad_extents(self, args):
        with pytest.raises(ConfigurationError):
            build_grid(*args)

    def test_configuration_error_is_value_error(self):
        assert issubclass(ConfigurationError, ValueError)

    def test_refine_doubles_resolution(self):
        g = build_grid(0.3, 1.1, 0.0, 0.7, 51, 26)
        f = refine(g)
        assert f.shape == (101, 51)
        assert f.refinement_level == g.refinement_level + 1
        assert f.du == pytest.approx(g.du / 2, rel=0, abs=0)

    def test_refine_nests_bitwise(self):
        # coarse point k must coincide with fine point 2k to the last bit,
        # otherwise convergence studies difference interpolation noise
        g = build_grid(0.495944, 0.999354, 0.495944, 0.999354, 101, 101)
        f = refine(g)
        assert np.array_equal(g.u_coords(), f.u_coords()[::2])
        assert np.array_equal(g.v_coords(), f.v_coords()[::2])
        ff = refine(f)
        assert np.array_equal(g.u_coords(), ff.u_coords()[::4])

    @given(
        u0=st.floats(-10, 10),
        du=st.floats(1e-3, 10),
        n=st.integers(2, 400),
        reps=st.integers(1, 3),
    )
    @settings(max_examples=60, deadline=None)
    def test_refine_nesting_property(self, u0, du, n, reps):
        g = build_grid(u0, u0 + du, 0.0, 1.0, n, n)
        f = g
        for _ in range(reps):
            f = refine(f)
        stride = 2 ** reps
        assert np.array_equal(g.u_coords(), f.u_coords()[::stride])


class TestCell:
    def test_corner_layout(self):
        c = Cell(3, 5)
        assert c.ne_corner == (3, 5)
        assert c.w_corner == (2, 5)
        assert c.s_corner == (3, 4)
        assert c.sw_corner == (2, 4)

    def test_updatable_requires_full_past_stencil(self):
        mask = np.zeros((3, 3), dtype=np.uint8)
        c = Cell(1, 1)
        assert not c.updatable(mask)
        mask[0, 1] = mask[1, 0] = mask[0, 0] = ACTIVE
        assert c.updatable(mask)
        mask[1, 1] = ACTIVE            # already computed
        assert not c.updatable(mask)
        mask[1, 1] = UNSET
        mask[0, 0] = EXCISED           # past corner lost to excision
        assert not c.updatable(mask)


class TestFieldState:
    def test_unset_layout(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 4, 6)
        s = FieldState.unset(g)
        for name in FIELD_NAMES:
            plane = getattr(s, name)
            assert plane.shape == (4, 6)
            assert plane.dtype == np.float64
            assert np.all(np.isnan(plane))
        assert s.mask.dtype == np.uint8
        assert np.all(s.mask == UNSET)
        assert not s.active.any()

    def test_copy_is_deep(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 3, 3)
        s = FieldState.unset(g)
        s.r[...] = 1.0
        s.mask[...] = ACTIVE
        t = s.copy()
        t.r[0, 0] = 99.0
        t.mask[0, 0] = EXCISED
        assert s.r[0, 0] == 1.0
        assert s.mask[0, 0] == ACTIVE

    def test_field_tuple_order_matches_names(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 2, 2)
        s = FieldState.unset(g)
        for k, plane in enumerate(s.field_tuple()):
            assert plane is getattr(s, FIELD_NAMES[k])

    def test_omega_sq(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 2, 2)
        s = FieldState.unset(g)
        s.log_omega[...] = np.log(2.0)
        assert np.allclose(s.omega_sq, 4.0, rtol=1e-15)

    def test_default_r_floor_tracks_corner_radius(self):
        g = build_grid(0.0, 1.0, 0.0, 1.0, 2, 2)
        s = FieldState.unset(g)
        s.r[0, 0] = 0.9
        assert default_r_floor(s) == pytest.approx(9e-4)
