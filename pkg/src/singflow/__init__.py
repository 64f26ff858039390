"""Poincare flows, blowups and closing tools for polynomial vector fields."""
from .errors import *  # noqa: F401,F403
from .fields import *  # noqa: F401,F403
from .integrate import *  # noqa: F401,F403
from .poincare import *  # noqa: F401,F403
from .blowup import *  # noqa: F401,F403
from .identify import *  # noqa: F401,F403
from .analyze import *  # noqa: F401,F403

__version__ = "0.1.0"
