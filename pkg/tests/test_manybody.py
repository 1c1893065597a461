import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import const
from embedmedia.design import SOFT, capacitance_ball, recipe_general, recipe_soft
from embedmedia.errors import ConfigError, EvaluationError, HardParticleError, SmallnessError
from embedmedia.greens import free_space_g
from embedmedia.manybody import (
    ParticleSet,
    check_smallness,
    evaluate_field,
    far_field_discrete,
    place_particles,
    relative_volume,
    smallness_report,
    solve_system,
)
from embedmedia.medium import BoxDomain, ComplexGridField, MediumSpec


def soft_set(centers, a):
    centers = np.atleast_2d(centers)
    return ParticleSet(centers, a, np.full(len(centers), SOFT))


@pytest.fixture(scope="module")
def cloud():
    dom = BoxDomain.cube(1.0, 8)
    med = MediumSpec(dom, 1.0, (0, 0, 1))
    recipe = recipe_soft(ComplexGridField.constant(dom, 3.0), 0.002)
    particles = place_particles(recipe, dom, seed=4)
    return med, particles, solve_system(particles, med)


def test_place_empty(unit_cube):
    r = recipe_soft(const(unit_cube, 0.0), 0.01)
    assert len(place_particles(r, unit_cube, 0)) == 0


def test_place_uniform_lattice(unit_cube):
    a = 0.001
    p = 1000 * capacitance_ball(a)  # N = 1000 per unit volume
    parts = place_particles(recipe_soft(const(unit_cube, p), a), unit_cube, seed=1)
    assert len(parts) == 1000
    # one particle per lattice cell of side 0.1, jitter at most a quarter cell
    cell = np.floor((parts.centers + 0.5) / 0.1).astype(int)
    assert len({tuple(c) for c in cell}) == 1000
    off = (parts.centers + 0.5) - (cell + 0.5) * 0.1
    assert np.abs(off).max() <= 0.025 + 1e-15
    assert parts.min_distance() >= 0.05 - 1e-12


def test_place_deterministic(tmp_path, unit_cube):
    r = recipe_soft(const(unit_cube, 3.0), 0.003)
    paths = []
    for i in range(2):
        place_particles(r, unit_cube, seed=9).to_csv(tmp_path / f"p{i}.csv")
        paths.append((tmp_path / f"p{i}.csv").read_bytes())
    assert paths[0] == paths[1]
    other = place_particles(r, unit_cube, seed=10)
    assert not np.array_equal(other.centers, place_particles(r, unit_cube, seed=9).centers)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=64, max_size=64), st.integers(0, 2**32))
def test_place_count_and_separation(values, seed):
    dom = BoxDomain.cube(1.0, 4)
    p = ComplexGridField(dom, np.array(values))
    a = 0.001
    r = recipe_soft(p, a)
    parts = place_particles(r, dom, seed)
    # error diffusion keeps the running total within half a particle
    assert abs(len(parts) - r.expected_count) <= 0.5 + 1e-9
    if len(parts) > 1:
        assert parts.min_distance() > 2 * a
    assert np.all(dom.contains(parts.centers))


def test_place_rejects_dense(unit_cube):
    # spacing 1/N^(1/3) ends up below 4a
    r = recipe_soft(const(unit_cube, 1e6), 0.01)
    with pytest.raises(SmallnessError):
        place_particles(r, unit_cube, 0)


def test_zeta_sampled_at_particle(unit_cube):
    vals = np.where(np.arange(unit_cube.num_cells).reshape(unit_cube.grid_shape) % 2, 1 - 0.5j, 2.0)
    r = recipe_general(ComplexGridField(unit_cube, vals), 0.001)
    parts = place_particles(r, unit_cube, 3)
    np.testing.assert_array_equal(parts.zetas, r.zeta.flat[unit_cube.flat_index(parts.centers)])


def test_hard_particles_rejected():
    with pytest.raises(HardParticleError):
        ParticleSet(np.zeros((1, 3)), 0.01, [0.0])


def test_single_particle(vacuum):
    x = np.array([[0.1, 0.2, 0.3]])
    res = solve_system(soft_set(x, 0.01), vacuum)
    assert res.u_at_particles[0] == np.exp(1j * 0.3)
    assert res.charges[0] == -capacitance_ball(0.01) * np.exp(1j * 0.3)


def test_empty_system_rejected(vacuum):
    with pytest.raises(ConfigError):
        solve_system(soft_set(np.zeros((0, 3)), 0.01), vacuum)


def test_mirror_symmetric_pair(vacuum):
    # both particles in the plane z = 0.1, mirrored across x = 0; alpha = z lies in the mirror plane
    pts = np.array([[-0.2, 0.1, 0.1], [0.2, 0.1, 0.1]])
    res = solve_system(soft_set(pts, 0.02), vacuum)
    assert abs(abs(res.u_at_particles[0]) - abs(res.u_at_particles[1])) < 1e-10


def test_pair_matches_closed_form():
    dom = BoxDomain.cube(1.0, 4)
    alpha = np.array([0.6, 0.0, 0.8])
    med = MediumSpec(dom, 2.0, alpha)
    pts = np.array([[-0.1, 0.2, 0.05], [0.15, -0.1, 0.2]])
    parts = ParticleSet(pts, 0.01, [SOFT, 0.3 - 2j])
    res = solve_system(parts, med)
    u1, u2 = oracles.two_particle_fields(pts[0], pts[1], parts.Ceffs[0], parts.Ceffs[1], 2.0, alpha)
    np.testing.assert_allclose(res.u_at_particles, [u1, u2], rtol=1e-13)
    np.testing.assert_array_equal(res.charges, -parts.Ceffs * res.u_at_particles)


def test_coupling_decays_with_distance(vacuum):
    devs = []
    for d in (0.05, 0.1, 0.2, 0.4):
        pts = np.array([[0, 0, 0], [d, 0, 0]])
        res = solve_system(soft_set(pts, 0.005), vacuum)
        devs.append(np.abs(res.u_at_particles - np.exp(1j * pts[:, 2])).max())
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_residual_and_conditioning(cloud):
    _, parts, res = cloud
    assert len(parts) > 100
    assert res.info.residual <= 1e-10
    assert res.info.rcond > 1e-12


def test_evaluate_field_no_particles(vacuum):
    parts = soft_set(np.zeros((0, 3)), 0.01)
    from embedmedia.manybody import SolveResult
    from embedmedia.linalg import SolveInfo

    res = SolveResult(np.zeros(0, complex), np.zeros(0, complex), SolveInfo("trivial", 0), vacuum)
    x = np.array([0.3, -0.1, 2.0])
    assert evaluate_field(parts, res, x) == pytest.approx(np.exp(2j))


def test_evaluate_field_single_scatterer(vacuum):
    a = 0.01
    parts = soft_set(np.zeros((1, 3)), a)
    res = solve_system(parts, vacuum)
    beta = np.array([1.0, 2.0, -2.0]) / 3
    x = 100 * beta
    scat = evaluate_field(parts, res, x) - np.exp(1j * x[2])
    assert scat == pytest.approx(-capacitance_ball(a) * free_space_g(x, np.zeros(3), 1.0), rel=1e-12)


def test_evaluate_field_radiates(cloud):
    med, parts, res = cloud
    beta = np.array([2.0, -1.0, 2.0]) / 3
    s = []
    for r in (100.0, 200.0):
        x = r * beta
        s.append((evaluate_field(parts, res, x) - np.exp(1j * x[2])) * r * np.exp(-1j * r))
    assert abs(s[1] / s[0] - 1) < 2e-2
    # the 1/r correction halves when r doubles; extrapolate and test the ratio tightly
    s3 = (evaluate_field(parts, res, 400 * beta) - np.exp(1j * 400 * beta[2])) * 400 * np.exp(-400j)
    limit = 2 * s3 - s[1]
    assert abs((2 * s[1] - s[0]) / limit - 1) < 1e-6


def test_evaluate_field_guards(vacuum):
    parts = soft_set(np.array([[0, 0, 0], [0.3, 0, 0]]), 0.01)
    res = solve_system(parts, vacuum)
    with pytest.raises(EvaluationError):
        evaluate_field(parts, res, np.array([0.015, 0, 0]))
    with pytest.warns(UserWarning):
        evaluate_field(parts, res, np.array([0.1, 0, 0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evaluate_field(parts, res, np.array([5.0, 0, 0]))


def test_far_field_empty(vacuum):
    parts = soft_set(np.zeros((0, 3)), 0.01)
    from embedmedia.manybody import SolveResult
    from embedmedia.linalg import SolveInfo

    res = SolveResult(np.zeros(0, complex), np.zeros(0, complex), SolveInfo("trivial", 0), vacuum)
    assert np.all(far_field_discrete(parts, res).amplitudes == 0)


def test_far_field_single_soft_ball():
    a = 0.01
    dom = BoxDomain.cube(1.0, 4)
    med = MediumSpec(dom, 1.0, (0, 0, 1))
    parts = soft_set(np.zeros((1, 3)), a)
    A = far_field_discrete(parts, solve_system(parts, med))
    np.testing.assert_allclose(A.amplitudes, -a, rtol=1e-14)
    exact = oracles.dirichlet_sphere_amplitude(a, 1.0, A.betas @ np.array([0, 0, 1.0]))
    np.testing.assert_allclose(A.amplitudes, exact, rtol=0.05)


def test_far_field_consistency(cloud):
    med, parts, res = cloud
    A = far_field_discrete(parts, res)
    r = 1e3 * med.domain.diameter
    pts = r * A.betas
    scat = evaluate_field(parts, res, pts) - np.exp(1j * pts[:, 2])
    approx = r * np.exp(-1j * r) * scat
    assert np.max(np.abs(approx / A.amplitudes - 1)) < 1e-3


def test_linearity(cloud):
    med, parts, res = cloud
    s = 0.7 - 2.1j
    # scaling u0 is the same as scaling every right-hand side; the system is linear
    from embedmedia.manybody import _solve_free
    from embedmedia.greens import plane_wave

    u, _ = _solve_free(parts, med, s * plane_wave(parts.centers, med.alpha, med.k), "direct")
    np.testing.assert_allclose(u, s * res.u_at_particles, rtol=1e-11)
    Q = -parts.Ceffs * u
    np.testing.assert_allclose(Q, s * res.charges, rtol=1e-11)


def test_reciprocity(cloud):
    med, parts, _ = cloud
    rng = np.random.default_rng(0)
    for _ in range(3):
        a, b = rng.normal(size=(2, 3))
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        A_ab = far_field_discrete(parts, solve_system(parts, med.with_direction(a)), b).amplitudes[0]
        A_ba = far_field_discrete(parts, solve_system(parts, med.with_direction(-b)), -a).amplitudes[0]
        assert A_ab == pytest.approx(A_ba, rel=1e-9)


def test_forward_amplitude_sign(cloud):
    med, parts, res = cloud
    A = far_field_discrete(parts, res, np.array([med.alpha])).amplitudes[0]
    assert A.imag >= -1e-8 * abs(A)


def test_relative_volume(unit_cube):
    assert relative_volume(soft_set(np.zeros((0, 3)), 0.01), unit_cube) == 0
    centers = np.random.default_rng(0).uniform(-0.5, 0.5, (1000, 3))
    assert relative_volume(soft_set(centers, 0.01), unit_cube) == pytest.approx(4.18879e-3, rel=1e-5)


def test_smallness_examples():
    assert smallness_report(0.01, 0.2, 1.0).ok
    rep = smallness_report(0.5, 10.0, 1.0)
    assert not rep.ok and "n0*k*a" in rep.warnings[0]
    rep = smallness_report(0.01, 0.03, 1.0)
    assert not rep.ok and rep.d_over_a == pytest.approx(3)


def test_check_smallness_uses_surface_gap(vacuum):
    parts = soft_set(np.array([[0, 0, 0], [0.22, 0, 0]]), 0.01)
    rep = check_smallness(parts, vacuum)
    assert rep.d == pytest.approx(0.2)
    assert rep.ok


def test_coupled_matches_background_green():
    dom = BoxDomain.cube(1.0, 6)
    n0 = ComplexGridField.constant(dom, 1.4 - 0.05j)
    med = MediumSpec(dom, 1.0, (0, 0, 1), n0)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.4, 0.4, size=(5, 3))
    parts = ParticleSet(pts, 0.01, [SOFT, SOFT, 2 - 1j, SOFT, 5.0])
    coupled = solve_system(parts, med, mode="coupled")
    bg = solve_system(parts, med, mode="background-green")
    np.testing.assert_allclose(coupled.u_at_particles, bg.u_at_particles, rtol=1e-8)
    Ac = far_field_discrete(parts, coupled).amplitudes
    Ab = far_field_discrete(parts, bg).amplitudes
    np.testing.assert_allclose(Ac, Ab, rtol=1e-7)
    x = np.array([0.0, 0.0, 3.0])
    assert evaluate_field(parts, coupled, x) == pytest.approx(evaluate_field(parts, bg, x), rel=1e-8)


def test_csv_round_trip(tmp_path, cloud):
    med, parts, res = cloud
    mixed = ParticleSet(parts.centers[:4], parts.a, [SOFT, 1 - 2j, 3.0, SOFT])
    mixed.to_csv(tmp_path / "p.csv")
    back = ParticleSet.from_csv(tmp_path / "p.csv", parts.a)
    np.testing.assert_array_equal(back.centers, mixed.centers)
    np.testing.assert_array_equal(back.Ceffs, mixed.Ceffs)
    assert (tmp_path / "p.csv").read_text().splitlines()[1].endswith("inf,0.0")
    res.to_csv(tmp_path / "s.csv", parts)
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 5] + 1j * data[:, 6], res.charges)
