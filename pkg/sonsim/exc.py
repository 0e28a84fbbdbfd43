"""sonsim exceptions.

sonsim.exc
~~~~~~~~~~

"""
import typing as t


class SonsException(Exception):

    """Base Exception for sonsim Errors."""


class GimbalProximity(SonsException):

    """Rotation matrix requested too close to pitch = ±π/2."""


class InvalidTargetGraph(SonsException):

    """Target graph is not a rooted tree or breaks the per-node child limit."""


class UnknownTargetNode(SonsException):

    """Node is not part of the target graph."""


class UnknownChild(SonsException):

    """Robot is not a child of the robot asked to release it."""


class HandoverAborted(SonsException):

    """New parent was not reachable in this step, child retained."""


class CyclicFormation(SonsException):

    """Formation graph for the stability analysis is not a tree."""


class StepBudgetExceeded(SonsException):

    """Simulation ran out of steps without meeting condition"""


class ConfigError(SonsException):

    """Scenario, manifest or override could not be loaded.

    Parameters
    ----------
    message : str
        what went wrong
    source : str, optional
        file the value came from
    line : int, optional
        1-based line in ``source``
    field : str, optional
        dotted path of the offending key, e.g. ``protocol.k1``
    """

    def __init__(
        self,
        message: str,
        source: t.Optional[str] = None,
        line: t.Optional[int] = None,
        field: t.Optional[str] = None,
    ) -> None:
        self.source = source
        self.message = message
        self.line = line
        self.field = field
        location = []
        if source is not None:
            location.append(source if line is None else f"{source}:{line}")
        elif line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = ", ".join(location)
        super().__init__(f"{prefix}: {message}" if prefix else message)
