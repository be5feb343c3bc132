"""Knowledge-distilled document retrieval: losses, metrics, models and the student index."""

from ._kdret import *  # noqa: F401,F403
from ._kdret import __doc__  # noqa: F401
