import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrio.geometry import (Pose, compose, hat6, inverse, quat_from_rotation,
                            rotation_from_quat, rotation_from_rpy,
                            rpy_from_rotation, se3_exp, se3_left_jacobian,
                            se3_log, se3_right_jacobian,
                            se3_right_jacobian_inv, skew, so3_exp, so3_log,
                            so3_right_jacobian, vee)

RNG = np.random.default_rng(12345)


def random_rotation(rng=RNG):
    return so3_exp(rng.uniform(-np.pi * 0.9, np.pi * 0.9, 3) * rng.uniform(0, 1))


def random_pose(rng=RNG, scale=5.0):
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


class TestSkewVee:
    def test_zero(self):
        assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))

    def test_inverse_pair(self):
        assert np.array_equal(vee(skew([1, 2, 3])), [1.0, 2.0, 3.0])

    def test_cross_product_identity(self):
        # skew([0,0,1]) @ [1,0,0] == cross([0,0,1],[1,0,0]) == [0,1,0]
        np.testing.assert_allclose(skew([0, 0, 1]) @ [1, 0, 0], [0, 1, 0],
                                   atol=1e-15)
        for _ in range(50):
            v, w = RNG.normal(size=3), RNG.normal(size=3)
            np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-12)

    def test_vee_antisymmetrizes(self):
        m = RNG.normal(size=(3, 3))
        np.testing.assert_allclose(vee(m), vee(0.5 * (m - m.T)), atol=1e-15)


class TestSo3:
    def test_exp_zero_is_identity(self):
        np.testing.assert_allclose(so3_exp([0, 0, 0]), np.eye(3), atol=1e-15)

    def test_exp_quarter_turn_maps_x_to_y(self):
        r = so3_exp([0, 0, np.pi / 2])
        np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_log_exp_round_trip(self):
        w = np.array([0.1, -0.2, 0.3])
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-12)

    def test_round_trip_random(self):
        for _ in range(500):
            w = RNG.normal(size=3)
            w = w / np.linalg.norm(w) * RNG.uniform(0, 3.0)
            np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)

    def test_small_angle_round_trip(self):
        w = np.array([1e-10, -2e-10, 5e-11])
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-18)

    def test_log_at_pi_deterministic(self):
        w = np.pi * np.array([0.0, 0.0, 1.0])
        r = so3_exp(w)
        out = so3_log(r)
        np.testing.assert_allclose(np.abs(out), np.abs(w), atol=1e-9)
        assert np.linalg.norm(out) <= np.pi + 1e-12
        # Deterministic: same input, same sign choice.
        np.testing.assert_array_equal(out, so3_log(r))

    def test_axis_invariance(self):
        for _ in range(20):
            w = RNG.normal(size=3)
            v = w * RNG.uniform(0.1, 2.0)
            np.testing.assert_allclose(so3_exp(w) @ v, v, atol=1e-12)

    def test_right_jacobian_differential(self):
        # (exp(w + d) - exp(w)) ~ exp(w) skew(Jr d)
        for _ in range(20):
            w = RNG.uniform(-1, 1, 3)
            d = RNG.normal(size=3)
            d = 1e-6 * d / np.linalg.norm(d)
            lhs = (so3_exp(w + d) - so3_exp(w)) / np.linalg.norm(d)
            rhs = so3_exp(w) @ skew(so3_right_jacobian(w) @ d) / np.linalg.norm(d)
            assert np.max(np.abs(lhs - rhs)) < 1e-5


class TestSe3:
    def test_exp_zero(self):
        p = se3_exp(np.zeros(6))
        np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(p.translation, np.zeros(3), atol=1e-15)

    def test_pure_translation(self):
        p = se3_exp([0, 0, 0, 1, 2, 3])
        np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(p.translation, [1, 2, 3], atol=1e-15)

    def test_round_trip_1000_random_twists(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(0, 2.99)
            xi = np.concatenate([w, rng.uniform(-10, 10, 3)])
            np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    def test_log_at_pi_raises(self):
        p = se3_exp([np.pi, 0, 0, 0, 0, 0])
        with pytest.raises(ValueError):
            se3_log(p)

    def test_compose_identity(self):
        p = random_pose()
        q = compose(p, Pose.identity())
        np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
        np.testing.assert_allclose(q.translation, p.translation, atol=1e-12)

    def test_compose_inverse_is_identity(self):
        p = random_pose()
        q = compose(p, inverse(p))
        np.testing.assert_allclose(q.rotation, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(q.translation, np.zeros(3), atol=1e-10)

    def test_double_inverse(self):
        p = random_pose()
        q = inverse(inverse(p))
        np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
        np.testing.assert_allclose(q.translation, p.translation, atol=1e-12)

    def test_group_closure_and_associativity(self):
        for _ in range(50):
            a, b, c = random_pose(), random_pose(), random_pose()
            ab_c = compose(compose(a, b), c)
            a_bc = compose(a, compose(b, c))
            np.testing.assert_allclose(ab_c.rotation, a_bc.rotation, atol=1e-10)
            np.testing.assert_allclose(ab_c.translation, a_bc.translation,
                                       atol=1e-10)
            r = ab_c.rotation
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) > 0

    def test_rotation_stays_orthonormal_after_many_compositions(self):
        p = Pose.identity()
        step = random_pose()
        for _ in range(2000):
            p = compose(p, step)
        np.testing.assert_allclose(p.rotation @ p.rotation.T, np.eye(3),
                                   atol=1e-12)


class TestQuaternion:
    def test_round_trip_1000_random(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            r = so3_exp(rng.normal(size=3))
            np.testing.assert_allclose(
                rotation_from_quat(quat_from_rotation(r)), r, atol=1e-12)

    def test_unit_norm(self):
        q = quat_from_rotation(random_rotation())
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_q_and_minus_q_same_rotation(self):
        q = quat_from_rotation(random_rotation())
        np.testing.assert_allclose(rotation_from_quat(q),
                                   rotation_from_quat(-q), atol=1e-12)


class TestSe3Jacobians:
    def test_right_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            xi = np.concatenate([rng.uniform(-1.5, 1.5, 3),
                                 rng.uniform(-3, 3, 3)])
            jr = se3_right_jacobian(xi)
            h = 1e-6
            for k in range(6):
                d = np.zeros(6)
                d[k] = h
                # exp(xi + d) ~ exp(xi) exp(Jr d)
                rel = compose(inverse(se3_exp(xi)), se3_exp(xi + d))
                fd = se3_log(rel) / h
                np.testing.assert_allclose(fd, jr[:, k], atol=1e-5)

    def test_right_jacobian_inverse(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            xi = np.concatenate([rng.uniform(-1.5, 1.5, 3),
                                 rng.uniform(-3, 3, 3)])
            np.testing.assert_allclose(
                se3_right_jacobian(xi) @ se3_right_jacobian_inv(xi),
                np.eye(6), atol=1e-9)

    def test_left_jacobian_relation(self):
        xi = np.array([0.3, -0.2, 0.5, 1.0, -2.0, 0.7])
        np.testing.assert_allclose(se3_left_jacobian(xi),
                                   se3_right_jacobian(-xi), atol=1e-12)


class TestEuler:
    def test_rpy_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            rpy = np.array([rng.uniform(-3, 3), rng.uniform(-1.5, 1.5),
                            rng.uniform(-3, 3)])
            np.testing.assert_allclose(
                rpy_from_rotation(rotation_from_rpy(rpy)), rpy, atol=1e-9)


@given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
       st.floats(0.0, 2.9))
@settings(max_examples=200, deadline=None)
def test_se3_round_trip_property(axis, scale):
    w = np.asarray(axis)
    n = np.linalg.norm(w)
    if n > 1e-6:
        w = w / n * scale
    xi = np.concatenate([w, [0.5, -1.0, 2.0]])
    np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)
