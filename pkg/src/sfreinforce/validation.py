"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_rng(seed=None):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    None gives fresh OS entropy, an int or ``SeedSequence`` gives a seeded
    PCG64 stream, and an existing Generator is passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ConfigurationError(f"{seed!r} cannot be used to seed a numpy Generator")


def seed_of(rng):
    """The int seed behind ``rng`` if it was given as one, else None."""
    return int(rng) if isinstance(rng, numbers.Integral) else None


def check_vector(x, size=None, name="x", finite=True):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigurationError(f"{name} must be 1-D, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise ConfigurationError(f"{name} must have length {size}, got {x.shape[0]}")
    if finite and not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{name} must be finite")
    return x


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a finite real, got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ConfigurationError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
