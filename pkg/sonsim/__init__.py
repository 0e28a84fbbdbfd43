# flake8: NOQA
from .__about__ import (
    __author__,
    __copyright__,
    __description__,
    __email__,
    __license__,
    __package_name__,
    __title__,
    __version__,
)
from .config import Settings
from .core import SwarmTopology, TargetGraph
from .metrics import RunLog
from .missions import Scenario
from .protocol import RobotState
from .world import World
