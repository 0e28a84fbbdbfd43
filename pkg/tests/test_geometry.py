"""Tests for sonsim.geometry."""
import math

import numpy as np
import pytest

from hypothesis import given, settings as hsettings, strategies as st
from scipy.spatial.transform import Rotation

from sonsim import exc
from sonsim.geometry import (
    EulerAngles,
    compose_pose,
    hamilton,
    invert_pose,
    quat,
    quat_from_euler,
    quat_inverse,
    quat_to_euler,
    quat_to_matrix,
    quat_to_rotation_vector,
    relative_pose,
    rotate_vector,
    segments_intersect_2d,
    vec3,
    wrap_angle,
    yaw_quat,
    zyx_rotation_matrix,
)

finite = st.floats(-10.0, 10.0, allow_nan=False)
vectors = st.tuples(finite, finite, finite).map(lambda v: vec3(*v))
quats = (
    st.tuples(finite, finite, finite, finite)
    .filter(lambda q: sum(c * c for c in q) > 1e-3)
    .map(lambda q: quat(*q))
)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
pitches = st.floats(-1.5, 1.5, allow_nan=False)


def as_scipy(q: np.ndarray) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


@given(quats, vectors)
def test_rotate_vector_matches_scipy(q: np.ndarray, v: np.ndarray) -> None:
    """Quaternion rotation agrees with scipy."""
    assert np.allclose(rotate_vector(q, v), as_scipy(q).apply(v), atol=1e-9)


@given(quats, vectors)
def test_rotation_preserves_length(q: np.ndarray, v: np.ndarray) -> None:
    assert np.linalg.norm(rotate_vector(q, v)) == pytest.approx(
        np.linalg.norm(v), abs=1e-9
    )


@given(quats, quats, vectors)
def test_hamilton_composes_rotations(
    a: np.ndarray, b: np.ndarray, v: np.ndarray
) -> None:
    """The Hamilton product composes rotations in order."""
    once = rotate_vector(hamilton(a, b), v)
    twice = rotate_vector(a, rotate_vector(b, v))
    assert np.allclose(once, twice, atol=1e-8)


@given(quats)
def test_inverse_undoes_rotation(q: np.ndarray) -> None:
    assert np.allclose(
        quat_to_matrix(hamilton(q, quat_inverse(q))), np.eye(3), atol=1e-9
    )


@given(angles, pitches, angles)
def test_zyx_matrix_matches_scipy(roll: float, pitch: float, yaw: float) -> None:
    e = EulerAngles(roll, pitch, yaw)
    expected = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
    assert np.allclose(zyx_rotation_matrix(e), expected, atol=1e-9)
    assert np.allclose(quat_to_matrix(quat_from_euler(e)), expected, atol=1e-9)


@given(angles, pitches, angles)
def test_euler_quaternion_agree(roll: float, pitch: float, yaw: float) -> None:
    back = quat_to_euler(quat_from_euler(EulerAngles(roll, pitch, yaw)))
    assert back.pitch == pytest.approx(pitch, abs=1e-7)
    assert wrap_angle(back.roll - roll) == pytest.approx(0.0, abs=1e-6)
    assert wrap_angle(back.yaw - yaw) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("pitch", [math.pi / 2, -math.pi / 2, math.pi / 2 - 1e-4])
def test_zyx_matrix_refuses_gimbal_lock(pitch: float) -> None:
    """Pitch near ±π/2 raises GimbalProximity."""
    with pytest.raises(exc.GimbalProximity):
        zyx_rotation_matrix(EulerAngles(pitch=pitch))


def test_rotation_vector_of_half_turn() -> None:
    r = quat_to_rotation_vector(yaw_quat(math.pi))
    assert np.allclose(np.abs(r), [0.0, 0.0, math.pi])


@pytest.mark.parametrize(
    "a, expected",
    [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi)],
)
def test_wrap_angle(a: float, expected: float) -> None:
    assert wrap_angle(a) == pytest.approx(expected)


@hsettings(max_examples=50)
@given(vectors, quats, vectors, quats)
def test_relative_pose_inverts(
    p_i: np.ndarray, q_i: np.ndarray, p_j: np.ndarray, q_j: np.ndarray
) -> None:
    """The inverse of the pose of j seen from i is the pose of i seen from j."""
    d_ij, q_ij = relative_pose(p_i, q_i, p_j, q_j)
    d_ji, q_ji = relative_pose(p_j, q_j, p_i, q_i)
    inv_d, inv_q = invert_pose(d_ij, q_ij)
    assert np.allclose(inv_d, d_ji, atol=1e-8)
    assert np.allclose(quat_to_matrix(inv_q), quat_to_matrix(q_ji), atol=1e-8)


@hsettings(max_examples=50)
@given(vectors, quats, vectors, quats, vectors, quats)
def test_compose_pose_chains_frames(
    p_i: np.ndarray,
    q_i: np.ndarray,
    p_j: np.ndarray,
    q_j: np.ndarray,
    p_k: np.ndarray,
    q_k: np.ndarray,
) -> None:
    d_ij, q_ij = relative_pose(p_i, q_i, p_j, q_j)
    d_jk, q_jk = relative_pose(p_j, q_j, p_k, q_k)
    d_ik, q_ik = relative_pose(p_i, q_i, p_k, q_k)
    d, q = compose_pose(d_ij, q_ij, d_jk, q_jk)
    assert np.allclose(d, d_ik, atol=1e-7)
    assert np.allclose(quat_to_matrix(q), quat_to_matrix(q_ik), atol=1e-7)


def test_segments_crossing() -> None:
    """Only proper crossings count as intersections."""
    assert segments_intersect_2d(
        vec3(-1, 0), vec3(1, 0), vec3(0, -1), vec3(0, 1)
    )
    assert not segments_intersect_2d(
        vec3(-1, 0), vec3(1, 0), vec3(-1, 1), vec3(1, 1)
    )
    # collinear overlap is not a proper crossing
    assert not segments_intersect_2d(
        vec3(0, 0), vec3(2, 0), vec3(1, 0), vec3(3, 0)
    )
