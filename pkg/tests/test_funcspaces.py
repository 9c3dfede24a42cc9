import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyl.errors import PreconditionError, RankDeficiencyError, SolverError
from cyl.funcspaces import (SobolevSpec, mult_valid, embed_target,
                            weighted_embed_valid, weighted_mult_valid,
                            weighted_norm, decay_fit, regularity_ladder,
                            ladder_step_count, constants)

F = Fraction


def spec(k, p, n=3, d=None):
    return SobolevSpec(F(k), p if p == math.inf else F(p), n, d)


class TestMultValid:
    def test_w2q_algebra(self):
        # the W^{2,q} algebra needs exactly q > 3/2 at n = 3
        dec = mult_valid(spec(2, 2), spec(2, 2), spec(2, 2))
        assert dec.valid and dec.branch == "a"
        dec = mult_valid(spec(2, F(7, 4)), spec(2, F(7, 4)), spec(2, F(7, 4)))
        assert dec.valid
        dec = mult_valid(spec(2, F(3, 2)), spec(2, F(3, 2)), spec(2, F(3, 2)))
        assert not dec.valid  # q = 3/2 boundary fails the strict joint gap

    def test_h1_h1_l2_branch_a(self):
        dec = mult_valid(spec(1, 2), spec(1, 2), spec(0, 2))
        assert dec.valid and dec.branch == "a"

    def test_h1_h1_l3_branch_b_only(self):
        dec = mult_valid(spec(1, 2), spec(1, 2), spec(0, 3))
        assert dec.valid and dec.branch == "b"

    def test_h1_h1_l4_invalid(self):
        dec = mult_valid(spec(1, 2), spec(1, 2), spec(0, 4))
        assert not dec.valid

    def test_negative_order_side_condition(self):
        dec = mult_valid(spec(2, 2), spec(-1, 2), spec(-1, 2))
        assert dec.valid
        with pytest.raises(PreconditionError):
            mult_valid(spec(-1, 2), spec(-2, 2), spec(-2, 2))  # k1+k2 < 0

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            mult_valid(spec(1, 2), spec(1, 2), spec(2, 2))  # k > k_i

    @given(k1=st.integers(0, 3), k2=st.integers(0, 3), k=st.integers(0, 2),
           p1=st.sampled_from([F(3, 2), 2, 3, 4]),
           p2=st.sampled_from([F(3, 2), 2, 3, 4]),
           p=st.sampled_from([F(3, 2), 2, 3, 4]))
    @settings(max_examples=200, deadline=None)
    def test_symmetric_in_factors(self, k1, k2, k, p1, p2, p):
        if k1 < k or k2 < k:
            return
        a = mult_valid(spec(k1, p1), spec(k2, p2), spec(k, p))
        b = mult_valid(spec(k2, p2), spec(k1, p1), spec(k, p))
        assert a.valid == b.valid

    @given(k=st.integers(1, 3), p=st.sampled_from([2, 3, 4, 6]))
    @settings(max_examples=60, deadline=None)
    def test_algebra_when_supercritical(self, k, p):
        s = spec(k, p)
        if F(k) > F(3, 1) / F(p):
            assert mult_valid(s, s, s).valid


class TestEmbedTarget:
    def test_w22_holder(self):
        t = embed_target(2, 2, 3)
        assert t.kind == "holder" and t.m == 0 and t.alpha == F(1, 2)

    def test_w24_c1_quarter(self):
        t = embed_target(2, 4, 3)
        assert t.kind == "holder" and t.m == 1 and t.alpha == F(1, 4)

    def test_borderline_kq_equals_n(self):
        t = embed_target(1, 3, 3)
        assert t.kind == "borderline" and t.p_star is None

    def test_subcritical_lebesgue(self):
        t = embed_target(1, 2, 3)
        assert t.kind == "lebesgue" and t.p_star == F(6)

    def test_integer_gap_flagged_open(self):
        t = embed_target(2, 3, 3)  # gap exactly 1
        assert t.endpoint_open

    def test_monotone_in_k_and_q(self):
        # increasing k or q never weakens the target
        base = embed_target(1, 2, 3)
        up_k = embed_target(2, 2, 3)
        assert up_k.kind == "holder" and base.kind == "lebesgue"
        t1, t2 = embed_target(2, 2, 3), embed_target(2, 4, 3)
        assert (t2.m, t2.alpha) >= (t1.m, t1.alpha)


class TestWeightedClauses:
    def test_clause_i(self):
        dec = weighted_embed_valid(spec(0, 4, d=-2), spec(0, 2, d=-1))
        assert dec.valid and dec.branch == "i"
        dec = weighted_embed_valid(spec(0, 4, d=-1), spec(0, 2, d=-2))
        assert not dec.valid  # weights must strictly increase

    def test_clause_ii(self):
        dec = weighted_embed_valid(spec(1, 2, d=-1), spec(0, 6, d=-1))
        assert dec.valid and dec.branch == "ii"
        dec = weighted_embed_valid(spec(1, 2, d=-1), spec(0, 7, d=-1))
        assert not dec.valid

    def test_clause_iv(self):
        dec = weighted_embed_valid(spec(2, 4, d=-1), spec(1, math.inf, d=-1))
        assert dec.valid and dec.branch == "iv"

    def test_clause_v_strictness(self):
        ok = weighted_mult_valid(spec(2, 2, d=-1), spec(2, 2, d=-1),
                                 spec(1, 2, d=F(-3, 2)))
        assert ok.valid
        eq = weighted_mult_valid(spec(2, 2, d=-1), spec(2, 2, d=-1),
                                 spec(1, 2, d=-2))
        assert not eq.valid  # delta = delta1 + delta2 exactly


class TestWeightedNorm:
    def test_sigma_power_membership(self):
        # u = sigma^d lies in L^p_{d'} over the end iff d' > d
        def u(x):
            return (1.0 + np.sum(np.asarray(x) ** 2, axis=-1)) ** (-0.5)

        val = weighted_norm(u, spec(0, 2, d=F(-1, 2)), r_inner=1.0)
        assert np.isfinite(val) and val > 0
        with pytest.raises(SolverError):
            weighted_norm(u, spec(0, 2, d=F(-3, 2)), r_inner=1.0)

    def test_inverse_radius_threshold(self):
        # u = 1/|z| has finite L^2_delta norm iff delta > -1; cross-check
        # against the closed-form radial integral at delta = -1/2
        def u(x):
            return 1.0 / np.linalg.norm(np.asarray(x), axis=-1)

        v = weighted_norm(u, spec(0, 2, d=F(-1, 2)), r_inner=1.0)
        # norm^2 = 4 pi int_1^inf (1+r^2)^{-1} dr = 4 pi (pi/2 - pi/4) = pi^2
        exact = math.pi
        assert abs(v - exact) / exact < 1e-6
        with pytest.raises(SolverError):
            weighted_norm(u, spec(0, 2, d=F(-6, 5)), r_inner=1.0)

    def test_homogeneity(self):
        def u(x):
            return np.exp(-np.sum(np.asarray(x) ** 2, axis=-1))

        s = spec(0, 2, d=-1)
        v1 = weighted_norm(u, s, r_inner=1.0)
        v3 = weighted_norm(lambda x: 3.0 * u(x), s, r_inner=1.0)
        assert abs(v3 - 3.0 * v1) < 1e-9 * v1


class TestDecayFit:
    def test_pure_power(self):
        r = np.geomspace(1, 10, 8)
        fit = decay_fit(np.column_stack([r, 5.0 * r**-2.0]), model="power")
        assert abs(fit.exponent + 2.0) < 1e-10
        assert abs(fit.constant - 5.0) < 1e-9

    def test_power_plus_constant(self):
        r = np.geomspace(1, 30, 12)
        fit = decay_fit(np.column_stack([r, 3.0 + r**-1.5]),
                        model="power_plus_constant")
        assert abs(fit.constant - 3.0) < 1e-6
        assert abs(fit.exponent + 1.5) < 1e-6

    def test_constant_samples_rank_deficient(self):
        r = np.geomspace(1, 10, 5)
        with pytest.raises((RankDeficiencyError, PreconditionError)):
            decay_fit(np.column_stack([r, np.full(5, 2.0)]), model="power")

    @given(sigma=st.floats(-2.5, -0.5), c=st.floats(0.5, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_power_roundtrip(self, sigma, c):
        r = np.geomspace(1, 20, 10)
        fit = decay_fit(np.column_stack([r, c * r**sigma]), model="power")
        assert abs(fit.exponent - sigma) < 1e-8


class TestLadders:
    def test_schroedinger_step(self):
        # step in 1/p is 2/3 - 1/2 = 1/6
        tr = regularity_ladder("schroedinger_step", p0=F(6, 5), target=F(3, 2),
                               n=3, q=2)
        assert tr.steps == 1 and tr.exponents[-1] == F(3, 2)
        assert tr.termination == "target"
        assert tr.steps == ladder_step_count(F(6, 5), F(3, 2), F(1, 6))

    def test_sobolev_step(self):
        tr = regularity_ladder("sobolev_step", p0=2, target=6, n=3)
        assert tr.steps == 1 and tr.exponents == [F(2), F(6)]

    def test_sobolev_multi_step(self):
        tr = regularity_ladder("sobolev_step", p0=F(12, 11), target=4, n=3)
        assert tr.steps == 2
        assert tr.steps == ladder_step_count(F(12, 11), 4, F(1, 3))

    def test_noncontracting_gate(self):
        with pytest.raises(PreconditionError):
            regularity_ladder("schroedinger_step", p0=F(6, 5), target=2, n=3,
                              q=F(3, 2))

    def test_monotone_sequence(self):
        tr = regularity_ladder("schroedinger_step", p0=F(6, 5), target=10,
                               n=3, q=4)
        inv = [1 / p for p in tr.exponents]
        assert all(a > b for a, b in zip(inv, inv[1:]))

    def test_step_count_closed_form(self):
        for p0, tgt, q in [(F(6, 5), 3, 2), (F(10, 9), 2, F(7, 4))]:
            step = F(2, 3) - 1 / F(q)
            tr = regularity_ladder("schroedinger_step", p0=p0, target=tgt,
                                   n=3, q=q)
            if tr.termination == "target":
                assert tr.steps == ladder_step_count(p0, tgt, step)


class TestConstants:
    def test_n3(self):
        c = constants(3)
        assert c["a_n"] == F(8)
        assert c["two_star"] == F(6)
        assert abs(c["b_n"] - 1.0 / (32 * math.pi)) < 1e-16
        assert abs(c["omega"] - 4 * math.pi) < 1e-12

    def test_n4(self):
        c = constants(4)
        assert c["a_n"] == F(6) and c["two_star"] == F(4)

    def test_delta_normalization_identity(self):
        for n in range(3, 9):
            c = constants(n)
            assert abs(float(c["a_n"]) * c["b_n"] * (n - 2) * c["omega"] - 1.0) < 1e-13

    def test_n2_rejected(self):
        with pytest.raises(PreconditionError):
            constants(2)
