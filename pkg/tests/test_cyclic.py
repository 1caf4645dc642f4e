import numpy as np
import pytest
from scipy.linalg import expm

from torindex.cyclic import (
    ChainProbe,
    MatrixFieldAlgebra,
    UChain,
    boundary,
    bounded_commutator_predicate,
    chern_chain,
    connes_B,
    entire_growth_check,
    hochschild_b,
    idempotent_path_witness,
    insertion_contraction,
    lie_action,
)

RNG = np.random.default_rng(71)


def random_chain(alg, k, rng, n=0, parity=None):
    c = UChain(alg)
    if alg.grading:
        ents = [alg.random(rng, parity=rng.integers(0, 2)) for _ in range(k + 1)]
    else:
        ents = [alg.random(rng) for _ in range(k + 1)]
    c.add_term(n, 1.0, ents)
    return c


def random_idempotent(alg, rng, rank):
    v = rng.standard_normal((alg.size, rank)) \
        + 1j * rng.standard_normal((alg.size, rank))
    q, _ = np.linalg.qr(v)
    return q @ q.conj().T


def test_b_on_two_chain_graded_formula():
    alg = MatrixFieldAlgebra(2, grading=(1, 1))
    for pa, pb in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        a = alg.random(RNG, parity=pa)
        b = alg.random(RNG, parity=pb)
        c = UChain(alg)
        c.add_term(0, 1.0, [a, b], normalize=False)
        out = hochschild_b(c)
        # b(a x b) = ab - (-1)^{|a||b|} ba
        got = alg.zero()
        for (n, coeff, ent, par) in out.terms:
            got = got + coeff * ent[0]
        expect = alg.mul(a, b) - (-1.0) ** (pa * pb) * alg.mul(b, a)
        assert np.max(np.abs(got - expect)) < 1e-13


def test_B_on_zero_chain():
    alg = MatrixFieldAlgebra(3)
    a = alg.random(RNG)
    c = UChain(alg)
    c.add_term(0, 1.0, [a])
    out = connes_B(c)
    assert len(out.terms) == 1
    n, coeff, ent, _ = out.terms[0]
    assert np.max(np.abs(ent[0] - alg.identity())) < 1e-14
    # slot >= 1 entries are normalized representatives
    assert np.max(np.abs(ent[1] - alg.project_scalar(a))) < 1e-14


@pytest.mark.parametrize("graded", [False, True])
def test_nilpotence_identities(graded):
    alg = MatrixFieldAlgebra(4, grading=(2, 2) if graded else None)
    probe = ChainProbe(alg, RNG)
    for k in range(1, 5):
        c = random_chain(alg, k, RNG)
        bb = hochschild_b(hochschild_b(c))
        BB = connes_B(connes_B(c))
        anti = hochschild_b(connes_B(c)) + connes_B(hochschild_b(c))
        dd = boundary(boundary(c))
        for ch in (bb, BB, anti, dd):
            if ch.terms:
                assert probe.residual(ch) < 1e-12


def test_field_algebra_identities():
    alg = MatrixFieldAlgebra(2, base_shape=(5, 5))
    probe = ChainProbe(alg, RNG)
    c = random_chain(alg, 3, RNG)
    assert probe.residual(boundary(boundary(c))) < 1e-12


def test_probe_detects_nonzero():
    alg = MatrixFieldAlgebra(3)
    probe = ChainProbe(alg, RNG)
    c = random_chain(alg, 2, RNG)
    assert probe.residual(c) > 1e-4


def test_trace_vanishes_on_commutators():
    alg = MatrixFieldAlgebra(4, base_shape=(6,))
    a = alg.random(RNG)
    b = alg.random(RNG)
    comm = alg.mul(a, b) - alg.mul(b, a)
    assert np.max(np.abs(alg.tr(comm))) < 1e-10 * alg.norm(a) * alg.norm(b)


def test_chern_chain_structure_and_closure():
    alg = MatrixFieldAlgebra(2)
    P = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    ch = chern_chain(alg, P, np.zeros((2, 2)), u_order=2)
    # u^1 term: coefficient -(2)!/1! = -2 on (P - 1/2) x P x P
    t1 = [t for t in ch.terms if t[0] == 1]
    assert len(t1) == 1
    n, coeff, ent, _ = t1[0]
    assert abs(coeff + 2.0) < 1e-14
    assert len(ent) == 3
    probe = ChainProbe(alg, RNG)
    assert probe.residual(boundary(ch).truncate_u(2)) < 1e-12

    with pytest.raises(ValueError):
        chern_chain(alg, 0.5 * P, np.zeros((2, 2)))


def test_chern_chain_random_idempotent_pairs():
    alg = MatrixFieldAlgebra(4, base_shape=(4, 4))
    probe = ChainProbe(alg, RNG)
    for _ in range(5):
        shape = alg.base_shape + (alg.size, alg.size)
        P = np.zeros(shape, dtype=complex)
        Q = np.zeros(shape, dtype=complex)
        for i in range(4):
            for j in range(4):
                sub = MatrixFieldAlgebra(4)
                P[i, j] = random_idempotent(sub, RNG, 2)
                Q[i, j] = random_idempotent(sub, RNG, 1)
        ch = chern_chain(alg, P, Q, u_order=3)
        assert probe.residual(boundary(ch).truncate_u(3)) < 1e-10
    same = chern_chain(alg, P, P, 2)
    if same.terms:
        assert probe.residual(same) < 1e-12


def test_cartan_identity():
    alg = MatrixFieldAlgebra(3)
    probe = ChainProbe(alg, RNG)
    x = alg.random(RNG)
    for k in range(0, 4):
        c = random_chain(alg, k, RNG)
        lhs = boundary(insertion_contraction(c, x)) \
            + insertion_contraction(boundary(c), x)
        assert probe.residual(lhs - lie_action(c, x)) < 1e-12


def test_entire_bound():
    alg = MatrixFieldAlgebra(2)
    P = random_idempotent(alg, RNG, 1)
    ch = chern_chain(alg, P, np.zeros((2, 2)), u_order=8)
    C, vdim, ok = entire_growth_check(ch)
    assert ok and C > 0
    assert vdim >= 2

    zero = UChain(alg)
    C0, _, ok0 = entire_growth_check(zero)
    assert ok0 and C0 == 0.0

    # coefficient k! with unit entries: nu_k / k! = 1 -> entire
    from math import factorial
    e = np.eye(2, dtype=complex)
    fine = UChain(alg)
    for k in range(1, 65, 4):
        fine.add_term(k, float(factorial(k)), (e,) * 2, normalize=False)
    _, _, ok_fine = entire_growth_check(fine)
    assert ok_fine
    worse = UChain(alg)
    for k in range(1, 65, 4):
        worse.add_term(k, float(factorial(k)) ** 2, (e,) * 2, normalize=False)
    C2, _, ok2 = entire_growth_check(worse)
    assert not ok2 and C2 > 20.0


def test_conjugation_witness():
    alg = MatrixFieldAlgebra(4)
    probe = ChainProbe(alg, RNG)
    P = random_idempotent(alg, RNG, 2)
    X = 0.25 * (RNG.standard_normal((4, 4)) + 1j * RNG.standard_normal((4, 4)))
    W = idempotent_path_witness(alg, P, X, u_order=3, panels=16)
    U = expm(X)
    P1 = U @ P @ np.linalg.inv(U)
    target = chern_chain(alg, P1, np.zeros((4, 4)), 3) \
        - chern_chain(alg, P, np.zeros((4, 4)), 3)
    resid = boundary(W).truncate_u(3) - target.truncate_u(3)
    assert probe.residual(resid) < 1e-8

    W0 = idempotent_path_witness(alg, P, np.zeros((4, 4)), 2, panels=2)
    assert not W0.terms


def test_bounded_commutator_predicate():
    D = np.diag(np.arange(6, dtype=float))
    U = expm(1j * 0.1 * np.eye(6))
    assert bounded_commutator_predicate(U, D)
    V = np.eye(6)[np.random.default_rng(0).permutation(6)]
    assert not bounded_commutator_predicate(V.astype(complex), 1e5 * D, bound=1e3)
