import numpy as np
import pytest

from vdwlab.errors import CutoffClippedError, InvalidExtentError, InvalidGridError
from vdwlab.lattice import (PotentialSpec, build_grid, build_radial_grid, bump, bump_cdf,
                            cutoff_profile, load_potential_table, mollified_interval,
                            nuclear_potential, smoothed_cutoff, soft_coulomb)


def test_grid_spacing_and_points():
    g = build_grid(5, (-2, 2))
    assert g.spacing == 1.0
    np.testing.assert_allclose(g.points, [-2, -1, 0, 1, 2])


@pytest.mark.parametrize("n,extent,err", [(1, (0, 1), InvalidGridError), (-3, (0, 1), InvalidGridError),
                                          (10, (1, 1), InvalidExtentError), (10, (2, 1), InvalidExtentError)])
def test_grid_rejects_bad_input(n, extent, err):
    with pytest.raises(err):
        build_grid(n, extent)


def test_radial_grid_excludes_endpoints():
    g = build_radial_grid(9, 10.0)
    assert g.spacing == 1.0
    assert g.points[0] == 1.0 and g.points[-1] == 9.0


def test_soft_coulomb_limits():
    assert soft_coulomb(0.0, 2.0) == 0.5
    np.testing.assert_allclose(soft_coulomb(1e6, 1.0), 1e-6, rtol=1e-10)


def test_bump_is_normalized_and_cdf_consistent():
    t = np.linspace(-1, 1, 20001)
    integral = np.trapezoid(bump(t), t)
    assert abs(integral - 1) < 1e-8
    # the CDF derivative is the bump
    d = np.gradient(bump_cdf(t), t)
    assert np.abs(d - bump(t)).max() < 1e-6
    assert bump_cdf(-1) == 0 and bump_cdf(1) == 1


def test_mollified_interval_plateau_and_support():
    x = np.linspace(-5, 5, 1001)
    m = mollified_interval(x, 0.0, 2.0, 0.5)
    assert np.all(m[np.abs(x) <= 1.5] == 1.0)
    assert np.all(m[np.abs(x) >= 2.5] == 0.0)
    assert np.all((m >= 0) & (m <= 1))


def test_cutoff_profile_radius_and_width():
    z = np.linspace(-4, 4, 801)
    c = cutoff_profile(z, 2.0, 0.5)
    assert np.all(c[np.abs(z) <= 1.5] == 1)
    assert np.all(c[np.abs(z) >= 2.0] == 0)


def test_smoothed_cutoff_slope_bound_and_clipping():
    g = build_grid(2001, (-10, 10))
    cut = smoothed_cutoff(4.0, 1.0, g)
    assert cut.max_slope() <= 35 / 16 / 1.0 + 1e-9
    assert cut(0.0) == 1.0
    with pytest.raises(CutoffClippedError):
        smoothed_cutoff(4.0, 1.0, g, center=8.0)


def test_potential_spec_defaults_and_validation():
    p = PotentialSpec(softening=2.0)
    assert p.ee_scale == 2.0 and p.nn_scale == 2.0
    assert PotentialSpec(nn_softening=0.0).nn_scale == 0.0
    with pytest.raises(ValueError):
        PotentialSpec(softening=-1)
    with pytest.raises(ValueError):
        PotentialSpec(kind="yukawa")


def test_nuclear_potential_soft_and_table(tmp_path):
    p = PotentialSpec(softening=1.0, strength=2.0)
    assert nuclear_potential(p, 0.0, 0.0, 1) == -2.0
    path = tmp_path / "v.txt"
    np.savetxt(path, np.column_stack([[-1.0, 0.0, 1.0], [0.0, -1.0, 0.0]]))
    tab = load_potential_table(path)
    np.testing.assert_allclose(nuclear_potential(tab, [0.0, 0.5, 3.0], 0.0, 1), [-1.0, -0.5, 0.0])
