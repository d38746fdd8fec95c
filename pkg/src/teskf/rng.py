"""Counter-based random streams.

Every noise source draws from its own Philox-4x64 stream keyed by
``(seed, run, stream)``, so streams are independent of evaluation order and
thread count.  Normals use the Box-Muller transform on the stream's own
uniforms, which keeps the output pinned to this module rather than to
numpy's default normal sampler.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"landmarks": 0, "bias": 1, "imu": 2, "pixel": 3, "init": 4}


def stream(seed: int, run: int = 0, name: str | int = 0) -> np.random.Generator:
    sid = STREAMS[name] if isinstance(name, str) else int(name)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(run), sid])
    return np.random.Generator(np.random.Philox(ss))


def normals(gen: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1]
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def uniforms(gen: np.random.Generator, shape, lo=0.0, hi=1.0) -> np.ndarray:
    return lo + (hi - lo) * gen.random(shape)
