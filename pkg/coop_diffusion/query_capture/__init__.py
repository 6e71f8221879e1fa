from .capture import *  # noqa
from .utils import *  # noqa
