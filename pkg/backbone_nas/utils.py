import builtins
import contextlib
import hashlib
import warnings

from functools import wraps

import numpy as np
from astropy.utils.exceptions import AstropyUserWarning


def cached(func):
    """
    Decorator to cache method calls on immutable objects
    """

    @wraps(func)
    def wrapper(self, *args):
        # The cache lives in the instance so that it gets garbage collected
        cache = self.__dict__.setdefault('_cache', {})
        if (func, args) not in cache:
            cache[(func, args)] = func(self, *args)
        return cache[(func, args)]

    wrapper.wrapped_function = func

    return wrapper


@contextlib.contextmanager
def _map_context(numcores):
    """
    Mapping context manager to allow parallel mapping or regular mapping
    depending on the number of cores specified.

    Results are always returned as a list in input order, whichever
    backend is used.
    """
    if numcores is not None and numcores > 1:
        try:
            from joblib import Parallel, delayed
            map = lambda x, y: Parallel(n_jobs=numcores)(delayed(x)(item) for item in y)
        except ImportError:
            map = lambda x, y: list(builtins.map(x, y))
            warnings.warn("Could not import joblib.  "
                          "map will be non-parallel.",
                          ImportWarning
                          )
    else:
        map = lambda x, y: list(builtins.map(x, y))

    yield map


def array_checksum(*arrays):
    """
    SHA-1 digest of the raw bytes (and shapes) of the given arrays.
    """
    digest = hashlib.sha1()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.shape).encode('ascii'))
        digest.update(array.tobytes())
    return digest.hexdigest()


class BackboneNASWarning(AstropyUserWarning):
    pass

class ConstraintWarning(BackboneNASWarning):
    pass

class PhaseWarning(BackboneNASWarning):
    pass

class CalibrationWarning(BackboneNASWarning):
    pass


class InvalidConfigurationError(ValueError):
    pass

class InvalidArchitectureError(ValueError):
    pass

class ArchitectureParseError(InvalidArchitectureError):

    def __init__(self, message, position=None, token=None):
        super().__init__(message)
        self.position = position
        self.token = token

class ShapeError(ValueError):
    pass

class NumericalError(ArithmeticError):

    def __init__(self, message, iteration=None, architecture=None):
        super().__init__(message)
        self.iteration = iteration
        self.architecture = architecture

class PhaseOrderError(RuntimeError):
    pass

class ConstrainedSamplingError(RuntimeError):

    def __init__(self, message, attempts=0):
        super().__init__(message)
        self.attempts = attempts

class CheckpointFormatError(IOError):
    pass
