"""
Named, counter-based random streams.

Every stream is a numpy Philox generator keyed by (seed, stream-id). Stream ids
are derived from names with BLAKE2b so the same name maps to the same id in
every process and on every platform.
"""
import hashlib

import numpy as np

from services.errors import ValidationError

MASK64 = (1 << 64) - 1


def stream_id_for(name):
    """Stable 64-bit id for a stream name"""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """
    Deterministic random stream.

    Args:
        seed (int): 64-bit run seed
        stream_id (int): 64-bit stream identifier
        name (str): optional human-readable name, used to derive children
    """

    def __init__(self, seed, stream_id, name=None):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.name = name or str(self.stream_id)
        key = self.seed | (self.stream_id << 64)
        self._generator = np.random.Generator(np.random.Philox(key=key))
        self.counter = 0

    @classmethod
    def named(cls, seed, name):
        return cls(seed, stream_id_for(name), name=name)

    def child(self, name):
        """Independent sub-stream; never perturbs the parent's sequence"""
        full_name = f"{self.name}/{name}"
        return RngStream(self.seed, stream_id_for(full_name), name=full_name)

    def gauss(self, mu=0.0, sigma=1.0):
        return rng_next_gauss(self, mu, sigma)

    def uniform(self, low=0.0, high=1.0):
        return rng_next_uniform(self, low, high)

    def exponential(self, mean):
        return rng_next_exponential(self, mean)

    def integer(self, low, high):
        return rng_next_integer(self, low, high)

    def normal_array(self, shape, sigma=1.0):
        """Array of N(0, sigma^2) draws, consumed in row-major order"""
        if sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {sigma}")
        values = self._generator.standard_normal(size=shape)
        self.counter += int(np.prod(shape))
        return values * sigma

    def permutation(self, n):
        self.counter += n
        return self._generator.permutation(n)

    def __repr__(self):
        return f"RngStream(name={self.name!r}, seed={self.seed}, counter={self.counter})"


def rng_next_gauss(stream, mu, sigma):
    """
    Draw one pseudo-normal value.

    The standard-normal draw is always consumed, so sigma=0 returns mu exactly
    without shifting later draws.

    Args:
        stream (RngStream): source stream
        mu (float): mean
        sigma (float): standard deviation, must be >= 0

    Returns:
        float: mu + sigma * z
    """
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    z = float(stream._generator.standard_normal())
    stream.counter += 1
    if sigma == 0:
        return float(mu)
    return float(mu + sigma * z)


def rng_next_uniform(stream, low, high):
    u = float(stream._generator.random())
    stream.counter += 1
    return low + (high - low) * u


def rng_next_exponential(stream, mean):
    if mean < 0:
        raise ValidationError(f"exponential mean must be >= 0, got {mean}")
    e = float(stream._generator.standard_exponential())
    stream.counter += 1
    return mean * e


def rng_next_integer(stream, low, high):
    """Uniform integer in [low, high)"""
    value = int(stream._generator.integers(low, high))
    stream.counter += 1
    return value
