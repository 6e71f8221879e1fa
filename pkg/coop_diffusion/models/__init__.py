from .base import *  # noqa
from .mixture import *  # noqa
from .mlp import *  # noqa
from .training import *  # noqa
from .serialization import *  # noqa
