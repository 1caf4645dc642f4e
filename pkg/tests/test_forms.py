import numpy as np
import pytest

from torindex.forms import (
    FibrationSplit,
    FourierForm,
    TorusDomain,
    UForm,
    exterior_d,
    fiber_integrate,
    integrate,
    periods,
    pullback_to_total,
    twisted_d,
    u_exterior_d,
    u_pullback,
    uwedge,
    wedge,
)

RNG = np.random.default_rng(7)


def test_wedge_antisymmetry_dx1_dx1():
    dom = TorusDomain(2, 2)
    dx1 = FourierForm.mode(dom, (0, 0), idx=(0,))
    assert wedge(dx1, dx1).norm() == 0.0


def test_wedge_unit():
    dom = TorusDomain(3, 2)
    one = FourierForm.constant(dom, 1.0)
    beta = FourierForm.random(dom, 2, RNG, max_mode=1)
    assert (wedge(one, beta) - beta).norm() < 1e-13 * beta.norm()


def test_wedge_single_modes():
    dom = TorusDomain(2, 1)
    a = FourierForm.mode(dom, (1, 0), idx=(0,))
    b = FourierForm.mode(dom, (0, 1), idx=(1,))
    c = wedge(a, b)
    expect = FourierForm.mode(dom, (1, 1), idx=(0, 1))
    assert (c - expect).norm() < 1e-14


def test_wedge_graded_commutativity_and_overflow():
    dom = TorusDomain(3, 4)
    for p, q in [(1, 1), (1, 2), (0, 2)]:
        a = FourierForm.random(dom, p, RNG, max_mode=2)
        b = FourierForm.random(dom, q, RNG, max_mode=2)
        ab, lost = wedge(a, b, with_overflow=True)
        ba = wedge(b, a)
        assert lost < 1e-8  # supports fit inside the cutoff
        diff = (ab - ba.scale((-1.0) ** (p * q))).norm()
        assert diff < 1e-12 * max(1.0, ab.norm())
    # overflow is reported when supports do not fit
    a = FourierForm.random(dom, 1, RNG, max_mode=4)
    b = FourierForm.random(dom, 1, RNG, max_mode=4)
    _, lost = wedge(a, b, with_overflow=True)
    assert lost > 0.0


def test_d_constant_and_single_mode():
    dom = TorusDomain(2, 2)
    assert exterior_d(FourierForm.constant(dom, 3.0)).norm() == 0.0
    f = FourierForm.mode(dom, (1, 0))
    df = exterior_d(f)
    expect = FourierForm.mode(dom, (1, 0), idx=(0,), value=2j * np.pi)
    assert (df - expect).norm() < 1e-14


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_d_squared_zero(dim):
    dom = TorusDomain(dim, 3)
    for deg in range(dim - 1):
        f = FourierForm.random(dom, deg, RNG)
        dd = exterior_d(exterior_d(f))
        assert dd.norm() < 1e-12 * max(1.0, f.norm())


def test_leibniz_exact_when_support_fits():
    dom = TorusDomain(3, 4)
    a = FourierForm.random(dom, 1, RNG, max_mode=2)
    b = FourierForm.random(dom, 1, RNG, max_mode=2)
    lhs = exterior_d(wedge(a, b))
    rhs = wedge(exterior_d(a), b) + wedge(a, exterior_d(b)).scale(-1.0)
    assert (lhs - rhs).norm() < 1e-10 * max(1.0, lhs.norm())


def test_integrate_normalization_and_modes():
    dom3 = TorusDomain(3, 1)
    vol = FourierForm.mode(dom3, (0, 0, 0), idx=(0, 1, 2))
    assert abs(integrate(vol) - 1.0) < 1e-15
    dom2 = TorusDomain(2, 1)
    f = FourierForm.mode(dom2, (1, 0), idx=(0, 1))
    assert abs(integrate(f)) < 1e-15
    with pytest.raises(ValueError):
        integrate(FourierForm.random(dom2, 1, RNG))


def test_integrate_stokes():
    dom = TorusDomain(3, 3)
    f = FourierForm.random(dom, 2, RNG)
    assert abs(integrate(exterior_d(f))) < 1e-12


def test_periods_cycles():
    dom = TorusDomain(4, 2)
    f = FourierForm.mode(dom, (0, 0, 0, 0), idx=(0, 1), value=2.5)
    assert abs(periods(f, (0, 1)) - 2.5) < 1e-14
    assert abs(periods(f, (2, 3))) < 1e-14
    # restriction to the (2,3) subtorus picks up x-dependence at x=0
    g = FourierForm.mode(dom, (1, 0, 0, 0), idx=(2, 3), value=1.0)
    assert abs(periods(g, (2, 3)) - 1.0) < 1e-14


def test_uform_algebra_and_degrees():
    dom = TorusDomain(2, 2)
    f2 = FourierForm.random(dom, 2, RNG, max_mode=1)
    u = UForm(dom, {2: f2})
    assert u.degrees() == [0]
    v = u + UForm.one(dom)
    assert set(v.degrees()) == {0}
    w = uwedge(u, u)
    assert w.norm() == 0.0  # 4-form on T^2 vanishes
    with pytest.raises(ValueError):
        UForm(dom, {1: f2})  # half power without the flag
    uh = UForm(dom, {1: f2}, allow_half=True)
    assert uh.degrees() == [1]


def test_uform_shift_guard():
    dom = TorusDomain(2, 2)
    u = UForm.one(dom)
    with pytest.raises(ValueError):
        u.shift_u(-1)
    ok = UForm(dom, {2: FourierForm.random(dom, 1, RNG)}).shift_u(-1)
    assert ok.degrees() == [1]


def test_twisted_d_properties():
    dom = TorusDomain(4, 3)
    xi = UForm(dom, {0: FourierForm.random(dom, 1, RNG, max_mode=1),
                     2: FourierForm.random(dom, 2, RNG, max_mode=1)})
    # Omega = 0 reduces to u d
    zero3 = FourierForm.zero(dom, 3)
    assert (twisted_d(xi, zero3) - u_exterior_d(xi).shift_u(1)).norm() < 1e-14

    eta = FourierForm.random(dom, 2, RNG, max_mode=1)
    omega = exterior_d(eta)
    one = UForm.one(dom)
    d_one = twisted_d(one, omega)
    expect = UForm(dom, {4: omega})
    assert (d_one - expect).norm() < 1e-13 * max(1.0, omega.norm())

    ddxi = twisted_d(twisted_d(xi, omega), omega)
    assert ddxi.norm() < 1e-12 * max(1.0, xi.norm())

    # total degree drops by one
    assert twisted_d(xi, omega).degrees() == [d - 1 for d in xi.degrees()]

    bad = FourierForm.random(dom, 3, RNG, max_mode=1)
    with pytest.raises(ValueError):
        twisted_d(xi, bad)


def test_fiber_integrate_projection_and_low_degree():
    total = TorusDomain(4, 2)
    split = FibrationSplit(total, 2)
    beta = FourierForm.random(split.base, 1, RNG, max_mode=1)
    vol_f = FourierForm.mode(total, (0,) * 4, idx=(2, 3))
    lifted = uwedge(UForm.from_form(pullback_to_total(beta, split)),
                    UForm.from_form(vol_f))
    down = fiber_integrate(lifted, split)
    assert (down - UForm.from_form(beta)).norm() < 1e-13

    low = UForm.from_form(FourierForm.random(total, 1, RNG))
    assert fiber_integrate(low, split).norm() == 0.0


def test_fiber_integrate_chain_map():
    total = TorusDomain(4, 3)
    split = FibrationSplit(total, 2)
    # closed 3-form on the base would vanish on T^2; use exact twist there
    # with a base 3-form equal to zero, plus a nontrivial base 2-torus case
    for deg in [1, 2, 3]:
        eta = UForm(total, {0: FourierForm.random(total, deg, RNG, max_mode=1)})
        lhs = fiber_integrate(twisted_d(eta, None), split)
        rhs = twisted_d(fiber_integrate(eta, split), None)
        assert (lhs - rhs).norm() < 1e-12 * max(1.0, eta.norm())


def test_fiber_integrate_chain_map_nontrivial_twist():
    # base T^3 so a nonzero closed base 3-form exists
    total = TorusDomain(5, 2)
    split = FibrationSplit(total, 3)
    eta_b = FourierForm.random(split.base, 2, RNG, max_mode=1)
    omega_b = exterior_d(eta_b)
    omega_m = pullback_to_total(omega_b, split)
    eta = UForm(total, {0: FourierForm.random(total, 2, RNG, max_mode=1),
                        2: FourierForm.random(total, 3, RNG, max_mode=1)})
    lhs = fiber_integrate(twisted_d(eta, omega_m), split)
    rhs = twisted_d(fiber_integrate(eta, split), omega_b)
    assert (lhs - rhs).norm() < 1e-12 * max(1.0, eta.norm())


def test_real_predicate():
    dom = TorusDomain(2, 2)
    f = FourierForm.random(dom, 1, RNG, real=True)
    assert f.is_real()
    g = FourierForm.mode(dom, (1, 0), idx=(0,), value=1.0)
    assert not g.is_real()


def test_pullback_and_evaluate():
    total = TorusDomain(3, 2)
    split = FibrationSplit(total, 2)
    beta = FourierForm.mode(split.base, (1, 0), idx=(0,), value=1.0)
    lift = pullback_to_total(beta, split)
    pts = RNG.random((5, 3))
    vals = lift.evaluate(pts)[(0,)]
    expect = np.exp(2j * np.pi * pts[:, 0])
    assert np.max(np.abs(vals - expect)) < 1e-12
    up = u_pullback(UForm.from_form(beta, 1), split)
    assert up.degrees() == [-1]
