__title__ = "sonsim"
__package_name__ = "sonsim"
__version__ = "0.1.0a1"
__description__ = (
    "Discrete-time simulator for self-organizing nervous systems in robot swarms"
)
__email__ = "sonsim@users.noreply.github.com"
__author__ = "sonsim developers"
__github__ = "https://github.com/sonsim/sonsim"
__docs__ = "https://sonsim.readthedocs.io"
__tracker__ = "https://github.com/sonsim/sonsim/issues"
__pypi__ = "https://pypi.org/project/sonsim/"
__license__ = "MIT"
__copyright__ = "Copyright 2024- sonsim developers"
