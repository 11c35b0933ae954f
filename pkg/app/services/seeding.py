"""Seed derivation for per-trial and per-epoch generators."""
from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: (next state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seeds(seed: int, count: int) -> list[int]:
    state = seed & MASK64
    seeds = []
    for _ in range(count):
        state, value = splitmix64(state)
        seeds.append(value)
    return seeds


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for an index path, e.g. (epoch,) or (k, variant, trial)."""
    value = seed & MASK64
    for index in path:
        _, value = splitmix64(value ^ (index & MASK64))
    return value
