"""Constellations, bit labelling, and soft symbol/bit message conversion.

Bit-to-symbol messages are pmfs over the constellation built from products
of per-bit probabilities; symbol-to-bit messages are extrinsic LLRs with
the target bit's own prior excluded. All LLRs follow the convention

    llr = log p(bit = 0) - log p(bit = 1)

so a large positive value means a confident zero. Batch routines operate
on whole frames at once and carry log-domain weights; the scalar wrappers
around them are the reference entry points for single symbols.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_expit, logsumexp

from .errors import AllZeroLikelihood

_VARIANTS = ("extrinsic", "mean-field")
_EXPONENTS = ("squared", "unsquared")


def _inverse_gray(v: np.ndarray) -> np.ndarray:
    # Inverse of g(k) = k ^ (k >> 1); five doublings cover 32-bit inputs.
    k = v.copy()
    for shift in (1, 2, 4, 8, 16):
        k ^= k >> shift
    return k


@dataclass(frozen=True)
class Constellation:
    """A complex alphabet with its bit labelling.

    ``points[s]`` carries the bit pattern ``labels[s]`` (one row per
    point, most significant bit first). The labelling must be a bijection
    onto all patterns of that length, and the alphabet must have unit
    average energy.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = np.ascontiguousarray(self.points, dtype=np.complex128)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        size = points.size
        if points.ndim != 1 or labels.ndim != 2 or labels.shape[0] != size:
            raise ValueError("points and labels must be (S,) and (S, L)")
        nbits = labels.shape[1]
        if size != 2**nbits:
            raise ValueError(f"{size} points cannot carry {nbits}-bit labels")
        if np.any(labels > 1):
            raise ValueError("labels must be 0/1")
        values = self._label_values(labels)
        if len(set(values.tolist())) != size:
            raise ValueError("labelling is not a bijection")
        energy = float(np.mean(np.abs(points) ** 2))
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"average symbol energy {energy!r} is not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        # Lookup table: integer label value -> point index.
        index = np.empty(size, dtype=np.int64)
        index[values] = np.arange(size)
        object.__setattr__(self, "_index_of_value", index)

    @staticmethod
    def _label_values(labels: np.ndarray) -> np.ndarray:
        weights = 1 << np.arange(labels.shape[1] - 1, -1, -1)
        return labels.astype(np.int64) @ weights

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def size(self) -> int:
        return self.points.size

    def to_table(self, path: str | Path):
        """Write a labelling table, one ``bits re_hex im_hex`` line per point."""
        lines = ["# bits re_hex im_hex"]
        for point, bits in zip(self.points, self.labels):
            bitstr = "".join(str(b) for b in bits)
            lines.append(f"{bitstr} {float(point.real).hex()} {float(point.imag).hex()}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_table(cls, path: str | Path) -> "Constellation":
        """Read a labelling table written by :meth:`to_table`."""
        points, labels = [], []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            bitstr, re_hex, im_hex = line.split()
            labels.append([int(b) for b in bitstr])
            points.append(complex(float.fromhex(re_hex), float.fromhex(im_hex)))
        return cls(np.array(points), np.array(labels))


def _gray_square_qam(bits_per_axis: int) -> Constellation:
    # Per-axis Gray labelling: label value v on one axis selects level
    # 2 * invgray(v) - (levels - 1); the two axes get the two label halves.
    levels = 1 << bits_per_axis
    nbits = 2 * bits_per_axis
    size = 1 << nbits
    values = np.arange(size)
    v_i = values >> bits_per_axis
    v_q = values & (levels - 1)
    amp_i = 2 * _inverse_gray(v_i) - (levels - 1)
    amp_q = 2 * _inverse_gray(v_q) - (levels - 1)
    points = amp_i + 1j * amp_q
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    labels = (values[:, None] >> np.arange(nbits - 1, -1, -1)) & 1
    return Constellation(points, labels)


def qam16_gray() -> Constellation:
    """Unit-energy 16-QAM, Gray labelled per axis (bits 0-1 in-phase, 2-3 quadrature)."""
    return _gray_square_qam(2)


def qpsk_gray() -> Constellation:
    """Unit-energy QPSK; bit 0 selects the in-phase sign, bit 1 the quadrature sign."""
    return _gray_square_qam(1)


def map_bits(constellation: Constellation, bits: np.ndarray) -> np.ndarray:
    """Map bit rows to symbols.

    ``bits`` has shape (L,) for one symbol or (N, L) for a frame.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    squeeze = bits.ndim == 1
    rows = np.atleast_2d(bits)
    if rows.shape[1] != constellation.bits_per_symbol:
        raise ValueError(
            f"expected {constellation.bits_per_symbol} bits per symbol, got {rows.shape[1]}"
        )
    idx = constellation._index_of_value[Constellation._label_values(rows)]
    symbols = constellation.points[idx]
    return symbols[0] if squeeze else symbols


def batch_symbol_pmf(constellation: Constellation, prob_one: np.ndarray) -> np.ndarray:
    """Symbol pmfs from per-bit probabilities of a 1, shape (N, L) -> (N, S)."""
    prob_one = np.asarray(prob_one, dtype=np.float64)
    lab = constellation.labels.astype(bool)
    pmf = np.ones((prob_one.shape[0], constellation.size))
    for bit in range(constellation.bits_per_symbol):
        pmf *= np.where(lab[None, :, bit], prob_one[:, None, bit], 1.0 - prob_one[:, None, bit])
    total = pmf.sum(axis=1, keepdims=True)
    if np.any(total <= 0.0):
        raise AllZeroLikelihood("bit probabilities assign zero mass to every symbol")
    return pmf / total


def symbol_extrinsic(constellation: Constellation, prob_one: np.ndarray) -> np.ndarray:
    """Pmf over symbols implied by independent per-bit probabilities of a 1.

    The pmf of symbol ``s`` is the product over label positions of the
    probability of the bit value ``s`` carries there, renormalised.
    Uniform bits give the uniform pmf; hard bits give a point mass.
    """
    prob_one = np.asarray(prob_one, dtype=np.float64)
    if prob_one.shape != (constellation.bits_per_symbol,):
        raise ValueError("need one probability per label bit")
    if np.any((prob_one < 0.0) | (prob_one > 1.0)):
        raise ValueError("bit probabilities must lie in [0, 1]")
    return batch_symbol_pmf(constellation, prob_one[None, :])[0]


def batch_bit_llrs(
    constellation: Constellation, log_weights: np.ndarray, llr_prior: np.ndarray
) -> np.ndarray:
    """Extrinsic bit LLRs from per-symbol log weights, shape (N, S) -> (N, L).

    For bit position l the weights are combined with the priors of every
    other position, then marginalised over the two label groups:

        llr[l] = lse_{s: lab=0}(w_s + sum_{l' != l} logp(bit_l' = lab_s,l'))
               - lse_{s: lab=1}(...)

    Priors may be hard (infinite LLR); the sums are accumulated with
    explicit masking so -inf never meets itself in a subtraction.
    """
    log_weights = np.asarray(log_weights, dtype=np.float64)
    nbits = constellation.bits_per_symbol
    lab = constellation.labels.astype(bool)
    lp0 = log_expit(llr_prior)
    lp1 = log_expit(-llr_prior)
    contrib = [
        np.where(lab[None, :, b], lp1[:, None, b], lp0[:, None, b]) for b in range(nbits)
    ]
    out = np.empty((log_weights.shape[0], nbits))
    for bit in range(nbits):
        metric = log_weights.copy()
        for other in range(nbits):
            if other != bit:
                metric += contrib[other]
        lse0 = logsumexp(metric[:, ~lab[:, bit]], axis=1)
        lse1 = logsumexp(metric[:, lab[:, bit]], axis=1)
        out[:, bit] = lse0 - lse1
    return out


def bit_llrs_from_symbol_msg(
    constellation: Constellation,
    weights: np.ndarray,
    llr_prior: np.ndarray | None = None,
) -> np.ndarray:
    """Extrinsic LLRs for each label bit given a symbol weight vector.

    ``weights`` is a nonnegative vector over the alphabet (any scale);
    ``llr_prior`` carries the per-bit priors excluded position by
    position, defaulting to all-uniform.

    Raises
    ------
    AllZeroLikelihood
        If every weight is zero.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (constellation.size,):
        raise ValueError("need one weight per constellation point")
    if np.any(weights < 0.0):
        raise ValueError("weights must be nonnegative")
    if not np.any(weights > 0.0):
        raise AllZeroLikelihood("all symbol weights are zero")
    if llr_prior is None:
        llr_prior = np.zeros(constellation.bits_per_symbol)
    llr_prior = np.asarray(llr_prior, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return batch_bit_llrs(constellation, logw[None, :], llr_prior[None, :])[0]


def batch_gaussian_symbol_loglik(
    constellation: Constellation,
    y: np.ndarray,
    chan_mean: np.ndarray,
    chan_var: np.ndarray,
    noise_precision: float,
    variant: str,
    exponent: str = "squared",
) -> np.ndarray:
    """Unnormalised per-symbol log likelihoods under Gaussian channel knowledge.

    variant "extrinsic" integrates the channel out of the observation
    model: symbol s scores as CN(y; m s, 1/gamma + v |s|^2) with channel
    extrinsic moments (m, v). variant "mean-field" takes the expectation
    of the log observation factor under the channel belief instead, which
    drops the per-symbol normaliser and scores -gamma (|y - m s|^2 + v |s|^2).
    With v = 0 both coincide with the exact known-channel likelihood.

    ``exponent`` applies to the "extrinsic" residual term only: "squared"
    uses |y - m s|^2 (the moment-matched form), "unsquared" uses |y - m s|
    as sometimes quoted; the default is "squared".
    """
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}, got {variant!r}")
    if exponent not in _EXPONENTS:
        raise ValueError(f"exponent must be one of {_EXPONENTS}, got {exponent!r}")
    y = np.asarray(y, dtype=np.complex128)[:, None]
    mean = np.asarray(chan_mean, dtype=np.complex128)[:, None]
    var = np.asarray(chan_var, dtype=np.float64)[:, None]
    points = constellation.points[None, :]
    energy = (np.abs(points) ** 2)
    residual = np.abs(y - mean * points)
    if variant == "mean-field":
        return -noise_precision * (residual**2 + var * energy)
    total_var = 1.0 / noise_precision + var * energy
    power = residual**2 if exponent == "squared" else residual
    return -np.log(total_var) - power / total_var


def gaussian_symbol_likelihoods(
    constellation: Constellation,
    y: complex,
    chan_mean: complex,
    chan_var: float,
    noise_precision: float,
    variant: str,
    exponent: str = "squared",
) -> np.ndarray:
    """Normalised symbol weights for one observation; see the batch routine."""
    logw = batch_gaussian_symbol_loglik(
        constellation,
        np.array([y]),
        np.array([chan_mean]),
        np.array([chan_var]),
        noise_precision,
        variant,
        exponent,
    )[0]
    logw -= logw.max()
    weights = np.exp(logw)
    return weights / weights.sum()
