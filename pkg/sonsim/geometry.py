"""Vector and unit-quaternion algebra for relative frames.

sonsim.geometry
~~~~~~~~~~~~~~~

Conventions
-----------

- Vectors are ``numpy`` float64 arrays of shape ``(3,)``.
- Quaternions are float64 arrays of shape ``(4,)`` in ``(w, x, y, z)`` order,
  Hamilton product, active rotations.
- Euler angles are ``zyx`` (yaw, then pitch, then roll), in radians.

"""
import logging
import math
import typing as t

import numpy as np
import numpy.typing as npt

from . import exc

logger = logging.getLogger(__name__)

Vec3 = npt.NDArray[np.float64]
UnitQuat = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]

#: Tolerance on the norm of a unit quaternion
QUAT_NORM_TOL = 1e-9

#: Distance to ±π/2 pitch below which the zyx matrix is refused
GIMBAL_MARGIN = 1e-3


class EulerAngles(t.NamedTuple):
    """Roll, pitch and yaw in radians."""

    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Vec3:
    """Return a 3-vector.

    >>> vec3(1, 2, 3)
    array([1., 2., 3.])
    """
    return np.array([x, y, z], dtype=np.float64)


def zeros3() -> Vec3:
    return np.zeros(3, dtype=np.float64)


def norm(v: Vec3) -> float:
    return float(np.linalg.norm(v))


def unit(v: Vec3) -> Vec3:
    """Return ``v`` scaled to length 1, or the zero vector for a zero input.

    >>> unit(vec3(3, 4, 0))
    array([0.6, 0.8, 0. ])
    >>> unit(vec3())
    array([0., 0., 0.])
    """
    n = norm(v)
    if n == 0.0:
        return zeros3()
    return np.asarray(v, dtype=np.float64) / n


def normalize_quat(q: npt.ArrayLike) -> UnitQuat:
    """Scale a quaternion back onto the unit sphere."""
    arr = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(arr))
    if n == 0.0:
        return quat_identity()
    return arr / n


def quat(w: float, x: float, y: float, z: float) -> UnitQuat:
    """Return the normalized quaternion ``(w, x, y, z)``.

    >>> quat(2, 0, 0, 0)
    array([1., 0., 0., 0.])
    """
    return normalize_quat([w, x, y, z])


def quat_identity() -> UnitQuat:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_from_axis_angle(axis: npt.ArrayLike, angle: float) -> UnitQuat:
    """Quaternion rotating by ``angle`` about ``axis``."""
    a = unit(np.asarray(axis, dtype=np.float64))
    half = 0.5 * angle
    s = math.sin(half)
    return normalize_quat([math.cos(half), a[0] * s, a[1] * s, a[2] * s])


def yaw_quat(psi: float) -> UnitQuat:
    """Rotation about +z by ``psi``."""
    half = 0.5 * psi
    return np.array([math.cos(half), 0.0, 0.0, math.sin(half)])


def quat_yaw(q: UnitQuat) -> float:
    """Heading angle of ``q`` about +z, in ``(-π, π]``."""
    w, x, y, z = q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def hamilton(a: UnitQuat, b: UnitQuat) -> UnitQuat:
    """Hamilton product ``a ⊗ b``, renormalized.

    The result rotates by ``b`` first, then by ``a``.

    Examples
    --------
    >>> import math
    >>> q = hamilton(yaw_quat(math.pi / 4), yaw_quat(math.pi / 4))
    >>> np.allclose(q, yaw_quat(math.pi / 2))
    True
    """
    w0, x0, y0, z0 = a
    w1, x1, y1, z1 = b
    product = np.array(
        [
            w0 * w1 - x0 * x1 - y0 * y1 - z0 * z1,
            w0 * x1 + x0 * w1 + y0 * z1 - z0 * y1,
            w0 * y1 + y0 * w1 + z0 * x1 - x0 * z1,
            w0 * z1 + z0 * w1 + x0 * y1 - y0 * x1,
        ]
    )
    return normalize_quat(product)


def quat_inverse(q: UnitQuat) -> UnitQuat:
    """Conjugate of a unit quaternion, which is its inverse.

    >>> import math
    >>> np.allclose(quat_inverse(yaw_quat(math.pi / 2)), yaw_quat(-math.pi / 2))
    True
    """
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def rotate_vector(q: UnitQuat, v: Vec3) -> Vec3:
    """Rotate ``v`` by unit quaternion ``q`` (Euler–Rodrigues form).

    Parameters
    ----------
    q : UnitQuat
        normalized rotation
    v : Vec3
        vector to rotate

    Returns
    -------
    Vec3
        ``RT(q, v)``, with the same length as ``v``

    Examples
    --------
    >>> import math
    >>> np.round(rotate_vector(yaw_quat(math.pi / 2), vec3(1, 0, 0)), 12) + 0.0
    array([0., 1., 0.])
    """
    w = q[0]
    u = q[1:]
    uv = np.cross(u, v)
    return np.asarray(v, dtype=np.float64) + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_to_matrix(q: UnitQuat) -> Matrix:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def zyx_rotation_matrix(e: EulerAngles) -> Matrix:
    """Body-to-inertial rotation ``Rz(yaw) · Ry(pitch) · Rx(roll)``.

    Raises
    ------
    :exc:`exc.GimbalProximity`
        pitch within ``GIMBAL_MARGIN`` of ±π/2

    Examples
    --------
    >>> np.allclose(zyx_rotation_matrix(EulerAngles()), np.eye(3))
    True
    >>> zyx_rotation_matrix(EulerAngles(pitch=math.pi / 2))
    Traceback (most recent call last):
    ...
    sonsim.exc.GimbalProximity: pitch 1.5708 rad is within 0.001 of ±π/2
    """
    phi, theta, psi = e
    if abs(theta) > math.pi / 2 - GIMBAL_MARGIN:
        raise exc.GimbalProximity(
            f"pitch {theta:.4f} rad is within {GIMBAL_MARGIN} of ±π/2"
        )
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def quat_from_euler(e: EulerAngles) -> UnitQuat:
    """Quaternion equal to :func:`zyx_rotation_matrix` of the same angles."""
    phi, theta, psi = e
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], phi)
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], theta)
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], psi)
    return hamilton(qz, hamilton(qy, qx))


def quat_to_euler(q: UnitQuat) -> EulerAngles:
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sin_pitch = max(-1.0, min(1.0, 2.0 * (w * y - z * x)))
    return EulerAngles(roll, math.asin(sin_pitch), quat_yaw(q))


def quat_to_rotation_vector(q: UnitQuat) -> Vec3:
    """Axis times angle, with the angle in ``[0, π]``.

    >>> np.round(quat_to_rotation_vector(yaw_quat(0.5)), 12) + 0.0
    array([0. , 0. , 0.5])
    """
    qq = q if q[0] >= 0.0 else -q
    s = float(np.linalg.norm(qq[1:]))
    if s < 1e-12:
        return 2.0 * qq[1:]
    angle = 2.0 * math.atan2(s, qq[0])
    return qq[1:] / s * angle


def wrap_angle(a: float) -> float:
    """Wrap an angle into ``(-π, π]``."""
    wrapped = math.atan2(math.sin(a), math.cos(a))
    return math.pi if wrapped == -math.pi else wrapped


def relative_pose(
    p_i: Vec3, q_i: UnitQuat, p_j: Vec3, q_j: UnitQuat
) -> t.Tuple[Vec3, UnitQuat]:
    """Displacement and orientation of frame ``j`` seen from frame ``i``.

    Returns ``(d_ij, q_ij)`` with ``d_ij = RT(q_i⁻¹, p_j - p_i)`` and
    ``q_ij = q_i⁻¹ ⊗ q_j``.
    """
    inv = quat_inverse(q_i)
    return rotate_vector(inv, np.asarray(p_j) - np.asarray(p_i)), hamilton(inv, q_j)


def invert_pose(d_ij: Vec3, q_ij: UnitQuat) -> t.Tuple[Vec3, UnitQuat]:
    """Pose of ``i`` seen from ``j`` given the pose of ``j`` seen from ``i``."""
    inv = quat_inverse(q_ij)
    return rotate_vector(inv, -np.asarray(d_ij)), inv


def compose_pose(
    d_ij: Vec3, q_ij: UnitQuat, d_jk: Vec3, q_jk: UnitQuat
) -> t.Tuple[Vec3, UnitQuat]:
    """Chain ``i → j → k`` into the pose of ``k`` seen from ``i``.

    ``d_ik = d_ij + RT(q_ij, d_jk)`` and ``q_ik = H(q_ij, q_jk)``.
    """
    return np.asarray(d_ij) + rotate_vector(q_ij, d_jk), hamilton(q_ij, q_jk)


def _orient(a: Vec3, b: Vec3, c: Vec3) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def segments_intersect_2d(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> bool:
    """Whether segments ``ab`` and ``cd`` properly cross in the xy plane.

    Touching endpoints do not count as a crossing.

    >>> segments_intersect_2d(vec3(0, 0), vec3(2, 2), vec3(0, 2), vec3(2, 0))
    True
    >>> segments_intersect_2d(vec3(0, 0), vec3(1, 0), vec3(1, 0), vec3(1, 1))
    False
    """
    d1 = _orient(c, d, a)
    d2 = _orient(c, d, b)
    d3 = _orient(a, b, c)
    d4 = _orient(a, b, d)
    return (d1 * d2 < 0.0) and (d3 * d4 < 0.0)
