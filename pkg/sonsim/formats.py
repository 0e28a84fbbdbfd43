"""Field tables for logs and messages.

sonsim.formats
~~~~~~~~~~~~~~

Column names for the emitted run logs and the byte-size table used to account
for message traffic. Sizes model a compact binary encoding: identifiers are
16-bit, reals are 32-bit floats.

"""
import os
import typing as t

import numpy as np

#: Version of the CSV/JSON run-log schema, bumped on any column change
LOG_SCHEMA_VERSION = "1"

CSV_SEPARATOR = os.environ.get("SONSIM_CSV_SEPARATOR", ",")

RUN_LOG_COLUMNS = [
    "step",
    "sim_time_s",
    "E_mean",
    "E_ci",
    "B",
    "bytes_in",
    "bytes_out",
    "ops_max",
    "n_sons",
    "converged",
    # diagnostics
    "n_unassigned",
    "dropped_msgs",
    "forest_violations",
]

RUN_SUMMARY_COLUMNS = [
    "scenario",
    "seed",
    "n_robots",
    "steps",
    "success",
    "converged_step",
    "final_E",
    "final_B",
    "bytes_per_robot_step",
    "ops_max",
    "n_sons",
    "stranded",
    "survivors",
]

#: Summary columns added by batch experiments
BATCH_COLUMNS = [
    "label",
    "fault",
    "magnitude",
    "pre_fault_E",
    "recovered_E",
]

ISS_SERIES_COLUMNS = ["t", "error_norm", "bound"]

MESSAGE_KINDS = [
    "Recruit",
    "RecruitAccept",
    "AttributeUpdate",
    "TargetAssignment",
    "Handover",
    "Expel",
    "ActuationInstruction",
    "SensorFeature",
    "GlobalVelocity",
    "StabilizationOverride",
]

#: Fixed per-message overhead: kind tag (1), sender (2), receiver (2)
HEADER_BYTES = 5

ID_BYTES = 2
REAL_BYTES = 4
FLAG_BYTES = 1
VEC3_BYTES = 3 * REAL_BYTES
QUAT_BYTES = 4 * REAL_BYTES

#: Per target-graph node: node id, parent id, type tag, displacement, orientation
TARGET_NODE_BYTES = 2 * ID_BYTES + FLAG_BYTES + VEC3_BYTES + QUAT_BYTES


def payload_bytes(value: t.Any) -> int:
    """Encoded size of a payload value.

    Examples
    --------
    >>> payload_bytes(3)
    2
    >>> payload_bytes(0.5)
    4
    >>> payload_bytes(np.zeros(3))
    12
    >>> payload_bytes({"v": np.zeros(3), "origin": 4})
    14
    """
    if value is None:
        return 0
    if isinstance(value, bool):
        return FLAG_BYTES
    if isinstance(value, (int, np.integer)):
        return ID_BYTES
    if isinstance(value, (float, np.floating)):
        return REAL_BYTES
    if isinstance(value, str):
        return FLAG_BYTES
    if isinstance(value, np.ndarray):
        return int(value.size) * REAL_BYTES
    if isinstance(value, t.Mapping):
        return sum(payload_bytes(v) for v in value.values())
    if isinstance(value, (list, tuple)):
        return sum(payload_bytes(v) for v in value)
    nbytes = getattr(value, "nbytes", None)
    if isinstance(nbytes, int):
        return nbytes
    raise TypeError(f"cannot size payload value of type {type(value).__name__}")


def message_bytes(payload: t.Mapping[str, t.Any]) -> int:
    """Header plus payload size of one message."""
    return HEADER_BYTES + payload_bytes(payload)
