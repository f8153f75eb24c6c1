"""CP tensor factorization training and gradient-flow dynamics."""

try:
    from ._cpdyn import *  # noqa: F401,F403
    from ._cpdyn import __version__  # noqa: F401
except ImportError:  # extension on sys.path directly (in-tree builds)
    from _cpdyn import *  # noqa: F401,F403
    from _cpdyn import __version__  # noqa: F401
