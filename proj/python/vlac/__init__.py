from ._vlac import *  # noqa: F401,F403
