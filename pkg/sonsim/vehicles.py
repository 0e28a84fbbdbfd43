"""Vehicle models and low-level controllers.

sonsim.vehicles
~~~~~~~~~~~~~~~

The protocol outputs omnidirectional ``(v*, ω*)`` in each robot's own frame.
This module turns them into motion:

- aerial robots, either as a kinematic point (``model: kinematic``) or as the
  full quadrotor rigid-body model with cascaded P/PID control and motor lag
  (``model: full``)
- ground robots, as a differential drive steered through an intermediary
  motion frame

The quadrotor model runs in its own NED frame (z down). The world frame is
x forward, y left, z up; :func:`ned_from_world` and :func:`world_from_ned`
convert between them.

Also here are the inertial sensor models, the optional flight stabilization
layer and virtual sensing through relayed observations.

"""
import dataclasses
import logging
import math
import typing as t

import numpy as np
import numpy.typing as npt

from .config import VehicleSettings
from .core import AERIAL, GROUND, RobotId, RobotType, SensedFeature, SensedNeighbor
from .geometry import (
    EulerAngles,
    UnitQuat,
    Vec3,
    hamilton,
    invert_pose,
    norm,
    quat_identity,
    quat_inverse,
    quat_yaw,
    rotate_vector,
    unit,
    vec3,
    wrap_angle,
    yaw_quat,
    zeros3,
    zyx_rotation_matrix,
)

logger = logging.getLogger(__name__)

StateVector = npt.NDArray[np.float64]

#: Proportional gain holding aerial robots at their flight altitude (1/s)
ALTITUDE_GAIN = 1.0

SIN45 = math.sqrt(2.0) / 2.0


def ned_from_world(v: Vec3) -> Vec3:
    return np.array([v[0], -v[1], -v[2]], dtype=np.float64)


def world_from_ned(v: Vec3) -> Vec3:
    return np.array([v[0], -v[1], -v[2]], dtype=np.float64)


def rk4_step(
    f: t.Callable[[StateVector], StateVector], x: StateVector, dt: float
) -> StateVector:
    """One classical Runge-Kutta step of ``ẋ = f(x)``."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class ControlInputs(t.NamedTuple):
    """Total thrust (N) and the three body moments (N·m)."""

    u1: float
    u2: float = 0.0
    u3: float = 0.0
    u4: float = 0.0

    @classmethod
    def trim(cls, params: VehicleSettings) -> "ControlInputs":
        return cls(params.mass * params.gravity)

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array(self, dtype=np.float64)


@dataclasses.dataclass
class QuadrotorState:

    """Quadrotor state in the NED frame.

    ``rates`` are the Euler angle rates; under the small-angle approximation
    they equal the body rates ``(p, q, r)``.
    """

    position: Vec3 = dataclasses.field(default_factory=zeros3)
    euler: EulerAngles = EulerAngles()
    velocity: Vec3 = dataclasses.field(default_factory=zeros3)
    rates: Vec3 = dataclasses.field(default_factory=zeros3)
    motors: npt.NDArray[np.float64] = dataclasses.field(
        default_factory=lambda: np.zeros(4)
    )

    def to_vector(self) -> StateVector:
        """``[x y z φ θ ψ ẋ ẏ ż φ̇ θ̇ ψ̇]``."""
        return np.concatenate(
            [self.position, np.array(self.euler), self.velocity, self.rates]
        ).astype(np.float64)

    @classmethod
    def from_vector(
        cls, x: StateVector, motors: t.Optional[npt.NDArray[np.float64]] = None
    ) -> "QuadrotorState":
        return cls(
            position=np.array(x[0:3], dtype=np.float64),
            euler=EulerAngles(float(x[3]), float(x[4]), float(x[5])),
            velocity=np.array(x[6:9], dtype=np.float64),
            rates=np.array(x[9:12], dtype=np.float64),
            motors=np.zeros(4) if motors is None else np.array(motors),
        )


def quad_derivatives(
    state: t.Union[QuadrotorState, StateVector],
    u: ControlInputs,
    params: t.Optional[VehicleSettings] = None,
) -> StateVector:
    """State derivative of the quadrotor model, ``Ẋ = f(X) + Σ aᵢ(X)·Uᵢ``.

    Translational accelerations are in the inertial frame; rotational
    accelerations use the small-angle identity between Euler rates and body
    rates.

    Examples
    --------
    >>> p = VehicleSettings()
    >>> xdot = quad_derivatives(QuadrotorState(), ControlInputs.trim(p), p)
    >>> float(np.abs(xdot).max())
    0.0
    >>> round(float(quad_derivatives(QuadrotorState(), ControlInputs(0.0), p)[8]), 2)
    9.81
    """
    p = params or VehicleSettings()
    x = state.to_vector() if isinstance(state, QuadrotorState) else state
    phi, theta, psi = x[3], x[4], x[5]
    dphi, dtheta, dpsi = x[9], x[10], x[11]
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(psi), math.cos(psi)
    thrust = u.u1 / p.mass

    xdot = np.empty(12, dtype=np.float64)
    xdot[0:6] = x[6:12]
    xdot[6] = -thrust * (sf * sp + cf * cp * st)
    xdot[7] = -thrust * (-cp * sf + cf * sp * st)
    xdot[8] = p.gravity - thrust * cf * ct
    xdot[9] = dpsi * dtheta * (p.jy - p.jz) / p.jx + u.u2 / p.jx
    xdot[10] = dphi * dpsi * (p.jz - p.jx) / p.jy + u.u3 / p.jy
    xdot[11] = dphi * dtheta * (p.jx - p.jy) / p.jz + u.u4 / p.jz
    return xdot


def linearize_at_trim(
    params: t.Optional[VehicleSettings] = None,
) -> t.Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Analytic Jacobians ``(A, B)`` of :func:`quad_derivatives` at hover trim.

    The model is NED, so the thrust entry of ``B`` is ``-1/m``.

    Examples
    --------
    >>> A, B = linearize_at_trim(VehicleSettings())
    >>> A.shape, B.shape
    ((12, 12), (12, 4))
    >>> float(A[6, 4]), float(A[7, 3]), float(B[8, 0])
    (-9.81, 9.81, -1.0)
    """
    p = params or VehicleSettings()
    a = np.zeros((12, 12))
    a[0:6, 6:12] = np.eye(6)
    a[6, 4] = -p.gravity
    a[7, 3] = p.gravity
    b = np.zeros((12, 4))
    b[8, 0] = -1.0 / p.mass
    b[9, 1] = 1.0 / p.jx
    b[10, 2] = 1.0 / p.jy
    b[11, 3] = 1.0 / p.jz
    return a, b


def mixing_matrix(params: VehicleSettings) -> npt.NDArray[np.float64]:
    """Map from squared motor speeds to ``(U1, U2, U3, U4)``."""
    kt, km, arm = params.k_t, params.k_m, params.arm * SIN45
    return np.array(
        [
            [kt, kt, kt, kt],
            [-arm * kt, -arm * kt, arm * kt, arm * kt],
            [arm * kt, -arm * kt, -arm * kt, arm * kt],
            [km, -km, km, -km],
        ]
    )


class MotorCommand(t.NamedTuple):
    omega_sq: npt.NDArray[np.float64]
    saturated: bool


def motor_mixing(
    u: ControlInputs, params: VehicleSettings, clamp: bool = True
) -> MotorCommand:
    """Squared motor speeds producing ``u``.

    Negative squares cannot be produced; with ``clamp`` they are set to zero
    and the command is flagged as saturated.

    Examples
    --------
    >>> p = VehicleSettings()
    >>> cmd = motor_mixing(ControlInputs.trim(p), p)
    >>> bool(np.allclose(cmd.omega_sq, cmd.omega_sq[0])), cmd.saturated
    (True, False)
    """
    omega_sq = np.linalg.inv(mixing_matrix(params)) @ u.as_array()
    saturated = bool(np.any(omega_sq < 0.0))
    if clamp and saturated:
        omega_sq = np.clip(omega_sq, 0.0, None)
    return MotorCommand(omega_sq, saturated)


def inputs_from_motors(
    omega_sq: npt.ArrayLike, params: VehicleSettings
) -> ControlInputs:
    u = mixing_matrix(params) @ np.asarray(omega_sq, dtype=np.float64)
    return ControlInputs(*(float(v) for v in u))


def motor_lag(
    omega_desired: npt.ArrayLike,
    omega: npt.ArrayLike,
    dt: float,
    t_rot: float,
) -> npt.NDArray[np.float64]:
    """Advance first-order motor dynamics ``Ω/Ω_d = 1/(T_rot·s + 1)`` by ``dt``.

    Exact for a desired speed held constant over the step.

    >>> float(motor_lag(1.0, 0.0, 0.05, 0.05).round(3))
    0.632
    """
    target = np.asarray(omega_desired, dtype=np.float64)
    current = np.asarray(omega, dtype=np.float64)
    return target + (current - target) * math.exp(-dt / t_rot)


class PID:

    """PID controller with a clamped integral.

    Examples
    --------
    >>> pid = PID(2.0, ki=1.0, integral_limit=0.5)
    >>> pid.update(1.0, 0.1)
    2.1
    >>> [round(pid.update(1.0, 1.0), 3) for _ in range(2)]
    [2.5, 2.5]
    """

    def __init__(
        self,
        kp: float,
        ki: float = 0.0,
        kd: float = 0.0,
        integral_limit: float = math.inf,
    ) -> None:
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.integral_limit = integral_limit
        self.integral = 0.0
        self.last_error: t.Optional[float] = None

    def update(self, error: float, dt: float) -> float:
        self.integral += self.ki * error * dt
        limit = self.integral_limit
        self.integral = max(-limit, min(limit, self.integral))
        derivative = 0.0
        if self.last_error is not None and dt > 0.0:
            derivative = (error - self.last_error) / dt
        self.last_error = error
        return self.kp * error + self.integral + self.kd * derivative

    def reset(self) -> None:
        self.integral = 0.0
        self.last_error = None


class QuadrotorController:

    """Cascaded flight controller.

    Velocity PIDs produce desired accelerations and thrust, which become
    desired roll and pitch; an angle P stage feeds rate PIDs that produce the
    body moments. The yaw loop tracks a commanded yaw rate.
    """

    def __init__(self, params: VehicleSettings) -> None:
        self.params = params
        lim = params.integral_limit
        self.vx = PID(params.vel_kp, params.vel_ki, params.vel_kd, lim)
        self.vy = PID(params.vel_kp, params.vel_ki, params.vel_kd, lim)
        self.vz = PID(params.vz_kp, params.vz_ki, 0.0, lim)
        self.roll_rate = PID(params.rate_kp, params.rate_ki, params.rate_kd, lim)
        self.pitch_rate = PID(params.rate_kp, params.rate_ki, params.rate_kd, lim)
        self.yaw_rate = PID(params.yaw_rate_kp, 0.0, 0.0, lim)

    @property
    def max_tilt(self) -> float:
        return math.radians(self.params.max_tilt_deg)

    def position_controller(
        self, ref: Vec3, state: QuadrotorState, dt: float
    ) -> t.Tuple[float, float, float]:
        """Thrust and desired roll and pitch for a NED velocity reference.

        Examples
        --------
        >>> p = VehicleSettings()
        >>> c = QuadrotorController(p)
        >>> u1, phi, theta = c.position_controller(np.zeros(3), QuadrotorState(), 0.02)
        >>> round(u1, 6), phi, theta
        (9.81, 0.0, 0.0)
        """
        p = self.params
        error = np.asarray(ref, dtype=np.float64) - state.velocity
        ax = self.vx.update(float(error[0]), dt)
        ay = self.vy.update(float(error[1]), dt)
        u1 = max(0.0, p.mass * p.gravity - p.mass * self.vz.update(float(error[2]), dt))
        if u1 == 0.0:
            return 0.0, 0.0, 0.0
        psi = state.euler.yaw
        phi_d = p.mass / u1 * (-ax * math.sin(psi) + ay * math.cos(psi))
        theta_d = p.mass / u1 * (-ax * math.cos(psi) - ay * math.sin(psi))
        tilt = self.max_tilt
        phi_d = max(-tilt, min(tilt, phi_d)) + 0.0
        theta_d = max(-tilt, min(tilt, theta_d)) + 0.0
        return u1, phi_d, theta_d

    def attitude_controller(
        self,
        phi_d: float,
        theta_d: float,
        yaw_rate_d: float,
        state: QuadrotorState,
        dt: float,
    ) -> t.Tuple[float, float, float]:
        """Body moments from desired angles (P) through rate loops (PID)."""
        p = self.params
        roll, pitch, _ = state.euler
        rate_ref = (p.angle_kp * (phi_d - roll), p.angle_kp * (theta_d - pitch))
        u2 = self.roll_rate.update(rate_ref[0] - float(state.rates[0]), dt)
        u3 = self.pitch_rate.update(rate_ref[1] - float(state.rates[1]), dt)
        u4 = self.yaw_rate.update(yaw_rate_d - float(state.rates[2]), dt)
        return u2, u3, u4


class ImuReading(t.NamedTuple):
    gyro: Vec3
    accel: Vec3
    mag: Vec3
    #: yaw reconstructed from the magnetometer and the roll and pitch estimates
    yaw: float


#: Earth field used by the magnetometer model
FIELD_STRENGTH = 0.5
FIELD_INCLINATION = math.radians(60.0)


def magnetometer_field(
    euler: EulerAngles,
    strength: float = FIELD_STRENGTH,
    inclination: float = FIELD_INCLINATION,
) -> Vec3:
    """Earth field in the body frame, ``R_BI · |H|(cos β, 0, sin β)``."""
    h_inertial = strength * vec3(math.cos(inclination), 0.0, math.sin(inclination))
    return zyx_rotation_matrix(euler).T @ h_inertial


def yaw_from_magnetometer(h_body: Vec3, roll: float, pitch: float) -> float:
    """Heading from a body-frame field measurement and known roll and pitch.

    The measurement is de-rotated by roll and pitch onto the horizontal plane.

    Examples
    --------
    >>> e = EulerAngles(0.1, -0.2, 1.3)
    >>> round(yaw_from_magnetometer(magnetometer_field(e), e.roll, e.pitch), 12)
    1.3
    """
    level = (
        zyx_rotation_matrix(EulerAngles(pitch=pitch))
        @ zyx_rotation_matrix(EulerAngles(roll=roll))
        @ np.asarray(h_body, dtype=np.float64)
    )
    return math.atan2(-float(level[1]), float(level[0]))


class SensorModel:

    """Gyroscope, accelerometer and magnetometer with drifting biases.

    Each bias follows a random walk with one scalar increment shared by the
    three axes; white noise is added on top.
    """

    def __init__(self, params: VehicleSettings, rng: np.random.Generator) -> None:
        self.params = params
        self.rng = rng
        self.gyro_bias = zeros3()
        self.accel_bias = zeros3()

    def _noise(self, sigma: float) -> Vec3:
        if sigma == 0.0:
            return zeros3()
        return self.rng.normal(0.0, sigma, 3)

    def measure(
        self, state: QuadrotorState, accel_inertial: Vec3, dt: float
    ) -> ImuReading:
        p = self.params
        if p.gyro_bias_walk:
            self.gyro_bias = self.gyro_bias + p.gyro_bias_walk * math.sqrt(
                dt
            ) * float(self.rng.normal())
        if p.accel_bias_walk:
            self.accel_bias = self.accel_bias + p.accel_bias_walk * math.sqrt(
                dt
            ) * float(self.rng.normal())
        r_bi = zyx_rotation_matrix(state.euler).T
        specific = r_bi @ (np.asarray(accel_inertial) - vec3(0.0, 0.0, p.gravity))
        gyro = state.rates + self.gyro_bias + self._noise(p.gyro_sigma)
        accel = specific + self.accel_bias + self._noise(p.accel_sigma)
        mag = magnetometer_field(state.euler) + self._noise(p.mag_sigma)
        yaw = yaw_from_magnetometer(mag, state.euler.roll, state.euler.pitch)
        return ImuReading(gyro, accel, mag, yaw)


class KinematicAerial:

    """Aerial robot that follows the commanded velocity exactly."""

    robot_type = AERIAL

    def __init__(
        self, position: Vec3, yaw: float, params: VehicleSettings, v_max: float
    ) -> None:
        self.position = np.asarray(position, dtype=np.float64)
        self.yaw = yaw
        self.params = params
        self.v_max = v_max

    def step(self, v_world: Vec3, omega_z: float, dt: float) -> None:
        v = np.asarray(v_world, dtype=np.float64)
        planar = v.copy()
        planar[2] = 0.0
        if norm(planar) > self.v_max:
            planar = self.v_max * unit(planar)
        planar[2] = v[2]
        self.position = self.position + planar * dt
        self.yaw = wrap_angle(self.yaw + omega_z * dt)

    @property
    def compass(self) -> float:
        return self.yaw


class Quadrotor:

    """Full quadrotor: rigid-body model, flight controller, motors and IMU."""

    robot_type = AERIAL

    def __init__(
        self,
        position: Vec3,
        yaw: float,
        params: VehicleSettings,
        rng: t.Optional[np.random.Generator] = None,
    ) -> None:
        self.params = params
        hover = math.sqrt(params.mass * params.gravity / (4.0 * params.k_t))
        self.state = QuadrotorState(
            position=ned_from_world(np.asarray(position, dtype=np.float64)),
            euler=EulerAngles(yaw=-yaw),
            motors=np.full(4, hover),
        )
        self.controller = QuadrotorController(params)
        self.sensors = SensorModel(params, rng or np.random.default_rng(0))
        self.last_reading: t.Optional[ImuReading] = None
        self._warned = False

    @property
    def position(self) -> Vec3:
        return world_from_ned(self.state.position)

    @property
    def yaw(self) -> float:
        return -self.state.euler.yaw

    @property
    def compass(self) -> float:
        """Heading as the vehicle itself measures it."""
        if self.last_reading is None:
            return self.yaw
        return -self.last_reading.yaw

    def substep(self, v_ref_ned: Vec3, yaw_rate_ned: float, dt: float) -> None:
        p = self.params
        u1, phi_d, theta_d = self.controller.position_controller(
            v_ref_ned, self.state, dt
        )
        u2, u3, u4 = self.controller.attitude_controller(
            phi_d, theta_d, yaw_rate_ned, self.state, dt
        )
        command = motor_mixing(ControlInputs(u1, u2, u3, u4), p)
        if command.saturated and not self._warned:
            logger.warning("motor command saturated; negative Ω² clamped to zero")
            self._warned = True
        motors = motor_lag(np.sqrt(command.omega_sq), self.state.motors, dt, p.t_rot)
        u = inputs_from_motors(motors**2, p)
        x = rk4_step(lambda s: quad_derivatives(s, u, p), self.state.to_vector(), dt)
        accel = quad_derivatives(x, u, p)[6:9]
        self.state = QuadrotorState.from_vector(x, motors)
        self.last_reading = self.sensors.measure(self.state, accel, dt)

    def step(self, v_world: Vec3, omega_z: float, dt: float) -> None:
        v_ref = ned_from_world(np.asarray(v_world, dtype=np.float64))
        n = max(1, self.params.substeps)
        for _ in range(n):
            self.substep(v_ref, -omega_z, dt / n)


@dataclasses.dataclass
class GroundRobotState:

    """Differential-drive robot on the floor.

    ``yaw`` is the heading of the body frame B2 in the world. ``q_b2`` is the
    rotation of the intermediary motion frame F relative to B2.
    """

    position: Vec3 = dataclasses.field(default_factory=zeros3)
    yaw: float = 0.0
    q_b2: UnitQuat = dataclasses.field(default_factory=quat_identity)
    v_left: float = 0.0
    v_right: float = 0.0


class DriveCommand(t.NamedTuple):
    v_left: float
    v_right: float
    #: heading change of the body frame this tick
    theta: float
    #: speed driven along the new heading
    speed: float
    q_b2: UnitQuat
    saturated: bool


def diff_drive(
    v_cmd: Vec3,
    omega_cmd: Vec3,
    state: GroundRobotState,
    dt: float,
    wheel_max: float = 1.0,
) -> DriveCommand:
    """Wheel speeds for an omnidirectional command expressed in frame F.

    The command is rotated into B2 with ``q_b2⁻¹``; with
    ``θ = atan2(v_y, v_x)`` the wheels are ``v_x ∓ v_y·sin θ``. Since F stays
    fixed, ``q_b2`` turns by ``-θ``, and F itself turns by ``ω``.

    Examples
    --------
    >>> s = GroundRobotState()
    >>> cmd = diff_drive(vec3(1, 0, 0), vec3(), s, 0.2)
    >>> cmd.v_left, cmd.v_right
    (1.0, 1.0)
    >>> cmd = diff_drive(vec3(0, 1, 0), vec3(), s, 0.2)
    >>> round(cmd.v_left, 12), round(cmd.v_right, 12)
    (-1.0, 1.0)
    """
    v_b2 = rotate_vector(quat_inverse(state.q_b2), np.asarray(v_cmd, dtype=np.float64))
    omega_b2 = rotate_vector(
        quat_inverse(state.q_b2), np.asarray(omega_cmd, dtype=np.float64)
    )
    vx, vy = float(v_b2[0]), float(v_b2[1])
    theta = math.atan2(vy, vx) if (vx or vy) else 0.0
    v_left = vx - vy * math.sin(theta)
    v_right = vx + vy * math.sin(theta)
    speed = math.hypot(vx, vy)
    saturated = max(abs(v_left), abs(v_right), speed) > wheel_max
    if saturated:
        scale = wheel_max / max(abs(v_left), abs(v_right), speed)
        v_left, v_right, speed = v_left * scale, v_right * scale, speed * scale
    q_b2 = yaw_quat(wrap_angle(quat_yaw(state.q_b2) - theta + float(omega_b2[2]) * dt))
    return DriveCommand(v_left + 0.0, v_right + 0.0, theta, speed, q_b2, saturated)


class GroundRobot:

    """Differential-drive robot executing one drive command per tick.

    Within a tick the robot pivots by ``θ`` and then drives at the commanded
    speed along its new heading.
    """

    robot_type = GROUND

    def __init__(
        self, position: Vec3, yaw: float, params: VehicleSettings
    ) -> None:
        self.params = params
        pos = np.asarray(position, dtype=np.float64).copy()
        pos[2] = 0.0
        self.state = GroundRobotState(position=pos, yaw=yaw)
        self._warned = False

    @property
    def position(self) -> Vec3:
        return self.state.position

    @position.setter
    def position(self, value: Vec3) -> None:
        self.state.position = np.asarray(value, dtype=np.float64)

    @property
    def yaw(self) -> float:
        return self.state.yaw

    @property
    def compass(self) -> float:
        return self.state.yaw

    def step(self, v_own: Vec3, omega_own: Vec3, dt: float) -> DriveCommand:
        """Execute ``(v*, ω*)`` given in the body frame."""
        s = self.state
        v_frame = rotate_vector(s.q_b2, np.asarray(v_own, dtype=np.float64))
        omega_frame = rotate_vector(s.q_b2, np.asarray(omega_own, dtype=np.float64))
        cmd = diff_drive(v_frame, omega_frame, s, dt, self.params.wheel_max)
        if cmd.saturated:
            if self._warned:
                logger.debug("wheel speed clamped")
            else:
                logger.warning(
                    "wheel speed clamped to %.2f m/s at (%.2f, %.2f)",
                    self.params.wheel_max,
                    s.position[0],
                    s.position[1],
                )
                self._warned = True
        s.yaw = wrap_angle(s.yaw + cmd.theta)
        heading = vec3(math.cos(s.yaw), math.sin(s.yaw), 0.0)
        s.position = s.position + heading * cmd.speed * dt
        s.q_b2 = cmd.q_b2
        s.v_left, s.v_right = cmd.v_left, cmd.v_right
        return cmd


class FlightStabilizer:

    """Drift correction of ``(v*, ω*)`` against static landmarks.

    The first sighting of each landmark is kept as a reference. Every step the
    expected pose of the landmark is advanced by the robot's own commanded
    motion; the mean difference between expected and observed poses is the
    robot's drift, which is subtracted from the commands. Objects are preferred
    as landmarks; with none in view the first ground robot seen is used, and
    its id is returned so it can be asked to move along.

    Examples
    --------
    >>> stab = FlightStabilizer(tick=0.2)
    >>> obs = {7: (vec3(1, 0, -1.5), quat_identity())}
    >>> v, w, _ = stab.adjust(obs, {}, vec3(), vec3())
    >>> v.tolist()
    [0.0, 0.0, 0.0]
    >>> obs = {7: (vec3(0.9, 0, -1.5), quat_identity())}
    >>> v, w, _ = stab.adjust(obs, {}, vec3(), vec3())
    >>> [round(x, 9) for x in v]
    [-0.5, 0.0, 0.0]
    """

    def __init__(self, tick: float) -> None:
        self.tick = tick
        self.expected: t.Dict[t.Tuple[str, int], t.Tuple[Vec3, UnitQuat]] = {}

    def adjust(
        self,
        objects: t.Mapping[int, t.Tuple[Vec3, UnitQuat]],
        robots: t.Mapping[RobotId, t.Tuple[Vec3, UnitQuat]],
        v: Vec3,
        omega: Vec3,
    ) -> t.Tuple[Vec3, Vec3, t.Optional[RobotId]]:
        landmark_robot: t.Optional[RobotId] = None
        if objects:
            seen = {("object", k): pose for k, pose in objects.items()}
        elif robots:
            landmark_robot = min(robots)
            seen = {("robot", landmark_robot): robots[landmark_robot]}
        else:
            return np.asarray(v), np.asarray(omega), None

        drifts = []
        turns = []
        for key, (d, q) in seen.items():
            expected = self.expected.get(key)
            if expected is not None:
                drifts.append(expected[0] - np.asarray(d))
                turns.append(quat_yaw(hamilton(expected[1], quat_inverse(q))))
        v_out = np.array(v, dtype=np.float64)
        omega_out = np.array(omega, dtype=np.float64)
        if drifts:
            v_out = v_out - np.mean(drifts, axis=0) / self.tick
            omega_out[2] = omega_out[2] + float(np.mean(turns)) / self.tick

        step_q = yaw_quat(float(omega_out[2]) * self.tick)
        inverse = quat_inverse(step_q)
        self.expected = {
            key: (
                rotate_vector(inverse, np.asarray(d) - v_out * self.tick),
                hamilton(inverse, q),
            )
            for key, (d, q) in seen.items()
        }
        return v_out + 0.0, omega_out + 0.0, landmark_robot


class Relay(t.NamedTuple):
    """One observation made by ``observer`` and passed on to a neighbour."""

    observer: RobotId
    observer_type: RobotType
    subject: int
    #: ``robot`` or ``feature``
    kind: str
    d: Vec3
    q: UnitQuat
    step: int
    subject_type: RobotType = GROUND
    feature: t.Optional[SensedFeature] = None


def virtual_sense(
    owner: RobotId,
    owner_type: RobotType,
    direct: t.Sequence[SensedNeighbor],
    relays: t.Sequence[Relay],
    step: int,
) -> t.Tuple[t.List[SensedNeighbor], t.List[SensedFeature]]:
    """Complete the owner's view with poses composed through relays.

    An aerial robot sees another aerial robot through a ground robot both of
    them see. A ground robot sees the aerial robots that see it, inverting
    their observation of itself, and through them everything they see. Relays
    older than one step are ignored.

    Returns
    -------
    tuple
        the direct neighbours followed by the virtual ones, and the features
        seen through relays
    """
    fresh = [r for r in relays if step - r.step <= 1 and r.observer != owner]
    neighbours = list(direct)
    known = {n.robot_id for n in direct} | {owner}
    features: t.Dict[int, SensedFeature] = {}

    def add(robot_id: RobotId, robot_type: RobotType, d: Vec3, q: UnitQuat) -> None:
        if robot_id in known:
            return
        known.add(robot_id)
        neighbours.append(SensedNeighbor(robot_id, robot_type, d, q, virtual=True))

    if owner_type == AERIAL:
        seen = {n.robot_id: n for n in direct}
        for r in fresh:
            via = seen.get(r.subject)
            if r.kind != "robot" or via is None or r.observer_type != AERIAL:
                continue
            d_kj, q_kj = invert_pose(r.d, r.q)
            d = via.d + rotate_vector(via.q, d_kj)
            add(r.observer, AERIAL, d, hamilton(via.q, q_kj))
        return neighbours, []

    views = {
        r.observer: invert_pose(r.d, r.q)
        for r in fresh
        if r.kind == "robot" and r.subject == owner
    }
    for observer in sorted(views):
        d_ji, q_ji = views[observer]
        add(observer, AERIAL, d_ji, q_ji)
    for r in fresh:
        if r.observer not in views or r.subject == owner:
            continue
        d_ji, q_ji = views[r.observer]
        d = d_ji + rotate_vector(q_ji, r.d)
        q = hamilton(q_ji, r.q)
        if r.kind == "robot":
            add(r.subject, r.subject_type, d, q)
        elif r.feature is not None and r.subject not in features:
            features[r.subject] = r.feature.moved(d, q)
    return neighbours, [features[k] for k in sorted(features)]


def hold_altitude(position: Vec3, altitude: float) -> float:
    """Vertical speed command holding an aerial robot at ``altitude``."""
    return ALTITUDE_GAIN * (altitude - float(position[2]))


def angular_speed(omega: Vec3) -> float:
    return float(np.asarray(omega)[2])


__all__ = [
    "ControlInputs",
    "DriveCommand",
    "FlightStabilizer",
    "GroundRobot",
    "GroundRobotState",
    "ImuReading",
    "KinematicAerial",
    "MotorCommand",
    "PID",
    "Quadrotor",
    "QuadrotorController",
    "QuadrotorState",
    "Relay",
    "SensorModel",
    "angular_speed",
    "diff_drive",
    "hold_altitude",
    "inputs_from_motors",
    "linearize_at_trim",
    "magnetometer_field",
    "mixing_matrix",
    "motor_lag",
    "motor_mixing",
    "ned_from_world",
    "quad_derivatives",
    "rk4_step",
    "virtual_sense",
    "world_from_ned",
    "yaw_from_magnetometer",
]
