"""Deterministic seed derivation.

Every piece of randomness in the package is derived from integer seed
components fed through numpy's SeedSequence, so any sub-computation
(one attack call, one episode, one training run) can be replayed in
isolation.  Components are mixed, not added, so (1, 2) and (2, 1)
produce unrelated streams.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "rng_from", "split_rngs"]


def _check_components(components):
    if not components:
        raise ValueError("at least one seed component is required")
    out = []
    for c in components:
        c = int(c)
        if c < 0:
            raise ValueError(f"seed components must be non-negative, got {c}")
        out.append(c)
    return out


def derive_seed(*components: int) -> int:
    """Mix integer components into a single 64-bit seed."""
    ss = np.random.SeedSequence(_check_components(components))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_from(*components: int) -> np.random.Generator:
    """Generator seeded from mixed components."""
    return np.random.default_rng(np.random.SeedSequence(_check_components(components)))


def split_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent generators spawned from one seed."""
    children = np.random.SeedSequence(_check_components([seed])).spawn(n)
    return [np.random.default_rng(c) for c in children]
