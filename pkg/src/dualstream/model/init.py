"""Parameter initializers. Recorded by name in checkpoint provenance."""

import math

import numpy as np

SCHEME = {
    "linear": "kaiming_uniform(gain=1): U(-sqrt(3/fan_in), sqrt(3/fan_in)); bias 0",
    "conv": "kaiming_uniform(gain=sqrt 2): U(-sqrt(6/fan_in), sqrt(6/fan_in))",
    "embedding": "normal(0, 0.02)",
    "norm": "gamma 1, beta 0; last norm of each residual block gamma 0",
}


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    return (std * rng.standard_normal(shape)).astype(dtype)
