from sonsim.conftest import *  # noqa F40
