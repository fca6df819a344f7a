"""Communication-protocol simulation of the attention models."""

from .collisions import *  # noqa: F401,F403
from .engine import *  # noqa: F401,F403
from .hybrid import *  # noqa: F401,F403
from .strategies import *  # noqa: F401,F403
