from ._mvscale import *  # noqa: F401,F403
from ._mvscale import __version__  # noqa: F401
