"""Top-level package for coop_diffusion."""
import logging

__version__ = "0.1.0"

# Good practice: https://docs.python-guide.org/writing/logging/#logging-in-a-library
logging.getLogger(__name__).addHandler(logging.NullHandler())

# Top-level imports (`models` before `query_capture`, which hooks `models.base`):
from .numerics import *
from .codecs import *
from .models import *
from .sampling import *
from .query_capture import *
from .coop import *
from .evaluation import *
