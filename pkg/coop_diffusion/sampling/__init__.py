from .algebra import *  # noqa
from .guidance import *  # noqa
from .samplers import *  # noqa
from .pipelines import *  # noqa
