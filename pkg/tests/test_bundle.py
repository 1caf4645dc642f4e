import numpy as np
import pytest

from torindex.bundle import (
    BundleConnection,
    MGForm,
    Transition,
    TwistedBundleDescent,
    TwistedSuperconnection,
    build_bundle_connection,
    chart_derivative_square_residual,
    chern_character,
    conjugated_bundle,
    connection_compatibility_residual,
    d_omega_residual,
    global_curvature,
    transgression,
    transgression_residual,
    verify_twisted_cocycle,
)
from torindex.cover import Cover, DForm, ScalarField
from torindex.gerbe import (
    GerbeConnection,
    GerbeDescent,
    build_connection,
    build_curving,
    curvature_three_form,
    exact_twist_connection,
)

RNG = np.random.default_rng(31)


def t2_cover(grid=32):
    return Cover.standard(2, arcs_per_axis=2, arc_length=0.6, grid_size=grid)


def t3_cover(grid=20):
    return Cover.standard(3, arcs_per_axis=2, arc_length=0.6, grid_size=grid,
                          split_axes=(0,))


def real_seeds(cover, rng, scale=1.0):
    seeds = {}
    for p in cover.pairs():
        modes = {tuple(rng.integers(-1, 2, size=cover.grid.dim)):
                 complex(rng.standard_normal())}
        f = ScalarField.trig(cover.grid, modes)
        seeds[p] = scale * ScalarField(cover.grid, f.values.real,
                                       [g.real for g in f.grads])
    return seeds


def coboundary_bundle(cover, rng):
    """Rank-1 bundle g = e^{2 pi i f} over the gerbe with mu = coboundary(f)."""
    seeds = real_seeds(cover, rng)
    gerbe = GerbeDescent.coboundary(cover, seeds)
    tb = TwistedBundleDescent.from_phases(gerbe, seeds)
    return tb, seeds


def test_trivial_twisted_cocycle():
    cover = t2_cover()
    gerbe = GerbeDescent.trivial(cover)
    tb = TwistedBundleDescent.trivial(gerbe, 2)
    rep = verify_twisted_cocycle(tb)
    assert rep.passed and rep.max_residual < 1e-12


def test_coboundary_twisted_cocycle():
    cover = t2_cover()
    tb, _ = coboundary_bundle(cover, RNG)
    rep = verify_twisted_cocycle(tb)
    assert rep.passed
    assert rep.max_residual < 1e-10


def test_perturbed_transition_fails_localized():
    cover = t2_cover()
    tb, _ = coboundary_bundle(cover, RNG)
    pair = cover.pairs()[1]
    tb.transitions[pair].values = tb.transitions[pair].values * 1.02
    rep = verify_twisted_cocycle(tb)
    assert not rep.passed
    assert set(pair).issubset(set(rep.worst()))


def test_build_bundle_connection_residual():
    cover = t2_cover()
    tb, _ = coboundary_bundle(cover, RNG)
    gconn = build_curving(build_connection(tb.gerbe))
    bc = build_bundle_connection(tb, gconn)
    assert connection_compatibility_residual(bc) < 1e-10

    # gauge freedom: a global matrix 1-form preserves compatibility
    f = ScalarField.trig(cover.grid, {(1, 0): 0.3})
    delta = MGForm.from_scalar_dform(DForm.d_scalar(f), 1)
    bc2 = bc.shift_global(delta)
    assert connection_compatibility_residual(bc2) < 1e-10


def test_trivial_connection_zero_is_compatible():
    cover = t2_cover()
    gerbe = GerbeDescent.trivial(cover)
    tb = TwistedBundleDescent.trivial(gerbe, 2)
    gconn = build_curving(build_connection(gerbe))
    bc = build_bundle_connection(tb, gconn)
    for g in bc.gamma:
        assert g.norm() < 1e-13
    assert connection_compatibility_residual(bc) < 1e-13


def test_global_curvature_and_identities():
    cover = t2_cover()
    tb, _ = coboundary_bundle(cover, RNG)
    gconn = build_curving(build_connection(tb.gerbe))
    bc = build_bundle_connection(tb, gconn)
    gc = global_curvature(bc)
    assert gc.gluing_residual < 1e-10
    assert gc.nabla_residual < 1e-10
    assert chart_derivative_square_residual(gc, RNG) < 1e-10


def test_chern_character_trivial_rank():
    cover = t2_cover()
    gerbe = GerbeDescent.trivial(cover)
    tb = TwistedBundleDescent.trivial(gerbe, 3)
    gconn = build_curving(build_connection(gerbe))
    bc = build_bundle_connection(tb, gconn)
    ch = chern_character(global_curvature(bc))
    assert abs(ch[0].component(()).mean() - 3.0) < 1e-12
    for j, f in ch.items():
        if j > 0:
            assert f.norm() < 1e-12


def test_chern_closedness_exact_twist():
    # T^3 so that Omega = d eta0 is a nonzero twist
    cover = t3_cover()
    rng = np.random.default_rng(8)
    eta0 = DForm.zero(cover.grid, 2)
    for pair in [(0, 1), (0, 2), (1, 2)]:
        f = ScalarField.trig(cover.grid,
                             {tuple(rng.integers(-1, 2, size=3)):
                              complex(rng.standard_normal())})
        dx = DForm(cover.grid, 2,
                   {pair: np.ones(cover.grid.shape(), dtype=complex)}, {})
        eta0 = eta0 + DForm.from_scalar(f).wedge(dx)
    gconn = exact_twist_connection(cover, eta0)
    gerbe = gconn.gerbe
    seeds = real_seeds(cover, rng, scale=0.5)
    tb = TwistedBundleDescent.from_phases(gerbe, seeds)
    # phases over a trivial cocycle need g g = g: coboundary of the seeds
    # must be trivial; instead use the trivial bundle with a shifted
    # connection to keep an honest nonflat curvature over the exact twist
    tb = TwistedBundleDescent.trivial(gerbe, 2)
    bc = build_bundle_connection(tb, gconn)
    f = ScalarField.trig(cover.grid, {(1, 0, 0): 0.4, (0, 1, 0): 0.2j})
    delta = MGForm.zero(cover.grid, 2)
    delta = delta + MGForm.from_dform_entry(DForm.d_scalar(f), 2, 0, 1)
    delta = delta + MGForm.from_dform_entry(DForm.d_scalar(f), 2, 1, 0)
    bc = bc.shift_global(delta)
    gc = global_curvature(bc)
    assert gc.gluing_residual < 1e-10
    assert gc.nabla_residual < 1e-10
    Omega = curvature_three_form(gconn)
    ch = chern_character(gc)
    assert d_omega_residual(ch, Omega) < 1e-10


def test_conjugation_invariance():
    cover = t2_cover()
    tb, _ = coboundary_bundle(cover, RNG)
    gconn = build_curving(build_connection(tb.gerbe))
    bc = build_bundle_connection(tb, gconn)
    ch = chern_character(global_curvature(bc))
    h = Transition.from_phase(real_seeds(cover, RNG)[cover.pairs()[0]],
                              None)
    tb2, bc2 = conjugated_bundle(tb, bc, h)
    assert verify_twisted_cocycle(tb2).passed
    assert connection_compatibility_residual(bc2) < 1e-9
    ch2 = chern_character(global_curvature(bc2))
    for j in ch:
        assert (ch[j] - ch2[j]).norm() < 1e-10 * max(1.0, ch[j].norm())


def test_transgression_identity_and_order():
    cover = t3_cover()
    rng = np.random.default_rng(17)
    gerbe = GerbeDescent.trivial(cover)
    tb = TwistedBundleDescent.trivial(gerbe, 1)
    base = build_curving(build_connection(gerbe))

    # connection pair: Gamma' = Gamma + global 1-form, omega' = omega + 2 pi i sigma
    f1 = ScalarField.trig(cover.grid, {(1, 0, 0): 0.7, (0, 1, 0): -0.3})
    f2 = ScalarField.trig(cover.grid, {(0, 0, 1): 0.4})
    sigma = DForm.d_scalar(f1).wedge(DForm.d_scalar(f2))
    conn2 = base.shift_curving(sigma.scale(2j * np.pi))
    bc = build_bundle_connection(tb, base)
    a_shift = MGForm.from_scalar_dform(DForm.d_scalar(
        ScalarField.trig(cover.grid, {(1, 0, 0): 0.25})), 1)
    bc2 = BundleConnection(tb, conn2, [g + a_shift.restrict(cover.masks[i])
                                       for i, g in enumerate(bc.gamma)])
    assert connection_compatibility_residual(bc2) < 1e-10

    Omega = curvature_three_form(base)
    eta, Xi = transgression(bc, bc2, panels=6)
    assert (eta - sigma).norm() < 1e-9 * max(1.0, sigma.norm())
    res6 = transgression_residual(bc, bc2, eta, Xi, Omega)
    assert res6 < 1e-6

    # identical connections: everything vanishes
    eta0, Xi0 = transgression(bc, bc, panels=2)
    assert eta0.norm() < 1e-12
    assert all(f.norm() < 1e-12 for f in Xi0.values())

    # quadrature order: composite 2-point Gauss panels converge at order 4
    res1 = transgression_residual(bc, bc2, *transgression(bc, bc2, panels=1),
                                  Omega)
    res2 = transgression_residual(bc, bc2, *transgression(bc, bc2, panels=2),
                                  Omega)
    res4 = transgression_residual(bc, bc2, *transgression(bc, bc2, panels=4),
                                  Omega)
    if res2 > 1e-12:
        assert res1 / res2 > 4.0
    if res4 > 1e-12:
        assert res2 / res4 > 4.0


def test_superconnection_chern():
    cover = t2_cover()
    gerbe = GerbeDescent.trivial(cover)
    tb = TwistedBundleDescent.trivial(gerbe, 2, grading=(1, 1))
    gconn = build_curving(build_connection(gerbe))
    bc = build_bundle_connection(tb, gconn)
    f = ScalarField.trig(cover.grid, {(1, 0): 0.5})
    g1 = ScalarField.trig(cover.grid, {(0, 1): 0.8})
    curvy = DForm.from_scalar(f).wedge(DForm.d_scalar(g1))
    gamma_shift = MGForm.zero(cover.grid, 2, grading=(1, 1))
    gamma_shift = gamma_shift + MGForm.from_dform_entry(
        curvy, 2, 0, 0, grading=(1, 1))
    bc = BundleConnection(tb, gconn, [g + gamma_shift.restrict(cover.masks[i])
                                      for i, g in enumerate(bc.gamma)])
    for g in bc.gamma:
        g.grading = (1, 1)

    # only A^[1]: difference of the chern characters of the blocks
    sc = TwistedSuperconnection(bc, {})
    ch = sc.chern_form()
    assert abs(ch[(0, 0)].component(()).mean() - 0.0) < 1e-12  # 1 - 1
    deg2 = ch[(1, 2)]
    assert deg2.norm() > 1e-6  # the graded block carries curvature

    # adding an odd A^[2] keeps half-integer supertraces at zero and
    # the twisted closedness intact (trivial gerbe: d-closedness)
    g2 = ScalarField.trig(cover.grid, {(0, 1): 0.3, (1, 1): 0.1j})
    nu = MGForm.from_dform_entry(
        DForm.d_scalar(f).wedge(DForm.d_scalar(g2)), 2, 0, 1, grading=(1, 1))
    nu = nu + MGForm.from_dform_entry(
        DForm.d_scalar(f).wedge(DForm.d_scalar(g2)), 2, 1, 0, grading=(1, 1))
    sc2 = TwistedSuperconnection(bc, {2: nu})
    ch2 = sc2.chern_form()
    worst = 0.0
    for (j, deg), frm in ch2.items():
        worst = max(worst, frm.d_norm() if False else 0.0)
    # d_Omega closedness with Omega = 0 on T^2: d of every coefficient
    for (j, deg), frm in ch2.items():
        if deg + 1 <= 2:
            worst = max(worst, frm.d().norm())
    assert worst < 1e-10

    # wrong parity is rejected, as is A^[0]
    bad = MGForm.from_dform_entry(
        DForm.d_scalar(f).wedge(DForm.d_scalar(g2)), 2, 0, 0, grading=(1, 1))
    with pytest.raises(ValueError):
        TwistedSuperconnection(bc, {2: bad})
    with pytest.raises(ValueError):
        TwistedSuperconnection(bc, {0: nu})
