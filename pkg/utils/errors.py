"""Exception hierarchy shared by the models and the command line front end."""

from contextlib import contextmanager

import numpy as np


class DebayesError(Exception):
    """Base error; exit_code is what the CLI returns when it is raised"""

    exit_code = 1


class ConfigError(DebayesError):
    """Invalid configuration or flag combination"""

    exit_code = 1


class DataError(DebayesError):
    """Input data cannot be read or fails validation"""

    exit_code = 2


class NumericalError(DebayesError):
    """A numerical routine failed (singular system, infeasible program, non-finite draw)"""

    exit_code = 3


# what numpy/scipy raise when a factorization, root finder or float op gives up
NUMERIC_FAILURES = (np.linalg.LinAlgError, ValueError, ArithmeticError)


@contextmanager
def numerical_failures(context):
    """Re-raise numpy/scipy numeric exceptions inside the block as NumericalError"""
    try:
        yield
    except NUMERIC_FAILURES as e:
        raise NumericalError(f"{context}: {type(e).__name__}: {e}") from e
