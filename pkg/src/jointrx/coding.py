"""Zero-tailed convolutional coding, interleaving, and soft-in soft-out decoding.

The encoder shifts information bits through a feedforward register; with
constraint length C the register word is ``r = (u << (C-1)) | state`` and
output j is the parity of ``r & generator_j``. The trellis transition is
``state -> r >> 1``, so each state has exactly two predecessors, which the
decoder exploits. Decoding runs the forward-backward algorithm entirely
in the log domain with exact Jacobian logarithms; infinite input LLRs
(known bits) are valid and propagate as hard constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .rng import philox


@dataclass(frozen=True)
class CodeConfig:
    """Feedforward convolutional code with zero-tail termination.

    Parameters
    ----------
    generators : tuple of int
        Generator polynomials, one per output stream, as C-bit masks
        (conventionally written in octal, e.g. ``0o133``).
    constraint_length : int
        Register length C; the code has ``2**(C-1)`` states and the
        zero tail appends ``C - 1`` flushing zeros.
    info_length : int
        Number of information bits per block.
    """

    generators: tuple[int, ...]
    constraint_length: int
    info_length: int

    def __post_init__(self):
        gens = tuple(int(g) for g in self.generators)
        if not gens:
            raise ValueError("need at least one generator polynomial")
        if self.constraint_length < 2:
            raise ValueError("constraint length must be at least 2")
        top = 1 << self.constraint_length
        if any(g <= 0 or g >= top for g in gens):
            raise ValueError(f"generators must lie in (0, {top})")
        if self.info_length < 1:
            raise ValueError("info_length must be positive")
        object.__setattr__(self, "generators", gens)

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    @property
    def n_streams(self) -> int:
        return len(self.generators)

    @property
    def n_steps(self) -> int:
        """Trellis steps per block (information plus tail)."""
        return self.info_length + self.memory

    @property
    def coded_length(self) -> int:
        return self.n_streams * self.n_steps

    @property
    def rate(self) -> float:
        return self.info_length / self.coded_length


@lru_cache(maxsize=8)
def _trellis(generators: tuple[int, ...], constraint_length: int):
    """Transition tables: next_state (S, 2) and out_bits (S, 2, n_streams)."""
    memory = constraint_length - 1
    n_states = 1 << memory
    states = np.arange(n_states)
    next_state = np.empty((n_states, 2), dtype=np.int64)
    out_bits = np.empty((n_states, 2, len(generators)), dtype=np.uint8)
    for u in (0, 1):
        reg = (u << memory) | states
        next_state[:, u] = reg >> 1
        for j, gen in enumerate(generators):
            masked = reg & gen
            parity = np.zeros(n_states, dtype=np.int64)
            for shift in range(constraint_length):
                parity ^= (masked >> shift) & 1
            out_bits[:, u, j] = parity
    return next_state, out_bits


def trellis_tables(cfg: CodeConfig):
    return _trellis(cfg.generators, cfg.constraint_length)


def encode(cfg: CodeConfig, info_bits: np.ndarray) -> np.ndarray:
    """Encode one block; output streams are interlaced per trellis step.

    Returns the coded bits ``c[n_streams * t + j]`` for step t, stream j,
    covering the information bits followed by the flushing tail.
    """
    info_bits = np.asarray(info_bits, dtype=np.uint8)
    if info_bits.shape != (cfg.info_length,):
        raise ValueError(f"expected {cfg.info_length} information bits, got {info_bits.shape}")
    if np.any(info_bits > 1):
        raise ValueError("information bits must be 0/1")
    tailed = np.concatenate([info_bits, np.zeros(cfg.memory, dtype=np.uint8)])
    out = np.empty((cfg.n_steps, cfg.n_streams), dtype=np.uint8)
    for j, gen in enumerate(cfg.generators):
        # Tap k multiplies the input delayed by k; tap 0 is the new bit.
        taps = (gen >> np.arange(cfg.constraint_length - 1, -1, -1)) & 1
        out[:, j] = np.convolve(tailed, taps)[: cfg.n_steps] & 1
    return out.reshape(-1)


@dataclass(frozen=True)
class InterleaverPermutation:
    """A seeded permutation applied to coded bits before mapping."""

    perm: np.ndarray
    seed: int

    def __post_init__(self):
        perm = np.ascontiguousarray(self.perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("perm must be a permutation of 0..n-1")
        object.__setattr__(self, "perm", perm)

    @property
    def length(self) -> int:
        return self.perm.size


def make_interleaver(seed: int, length: int) -> InterleaverPermutation:
    """Uniformly random permutation, deterministic in ``seed``."""
    perm = philox(seed).permutation(length)
    return InterleaverPermutation(perm, int(seed))


def interleave(pi: InterleaverPermutation, x: np.ndarray) -> np.ndarray:
    """Reorder: output position k holds input position ``perm[k]``."""
    x = np.asarray(x)
    if x.shape[0] != pi.length:
        raise ValueError(f"length {x.shape[0]} does not match interleaver {pi.length}")
    return x[pi.perm]


def deinterleave(pi: InterleaverPermutation, y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`interleave`."""
    y = np.asarray(y)
    if y.shape[0] != pi.length:
        raise ValueError(f"length {y.shape[0]} does not match interleaver {pi.length}")
    out = np.empty_like(y)
    out[pi.perm] = y
    return out


def decode_siso(cfg: CodeConfig, prior_llrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior LLRs for coded and information bits given channel priors.

    ``prior_llrs`` holds one LLR per coded bit in encoder order. The tail
    steps constrain the input to zero; information bits themselves carry
    no prior (the caller feeds extrinsic information through the coded-bit
    priors only).

    Returns
    -------
    (app_coded, app_info)
        Posterior LLRs for all coded bits and for the information bits.
    """
    prior_llrs = np.asarray(prior_llrs, dtype=np.float64)
    if prior_llrs.shape != (cfg.coded_length,):
        raise ValueError(f"expected {cfg.coded_length} coded-bit LLRs, got {prior_llrs.shape}")
    next_state, out_bits = trellis_tables(cfg)
    return _kernels.bcjr(prior_llrs, next_state, out_bits, cfg.info_length)


def hard_decide(llrs: np.ndarray) -> np.ndarray:
    """Threshold LLRs to bits; ties (LLR exactly 0) resolve to 0."""
    return (np.asarray(llrs) < 0.0).astype(np.uint8)


def extrinsic_llrs(app: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Subtract priors from posteriors, mapping inf - inf to 0.

    Two infinities of the same sign mean the prior already decided the
    bit; the posterior then adds nothing, so the extrinsic is zero.
    """
    with np.errstate(invalid="ignore"):
        diff = np.asarray(app, dtype=np.float64) - np.asarray(prior, dtype=np.float64)
    diff[np.isnan(diff)] = 0.0
    return diff


def count_bit_errors(decided: np.ndarray, truth: np.ndarray) -> int:
    return int(np.sum(np.asarray(decided, dtype=np.uint8) != np.asarray(truth, dtype=np.uint8)))
