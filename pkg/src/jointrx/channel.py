"""Frequency-domain channel statistics, frame geometry, and transmission.

The channel across the frame's subcarriers is one draw of a zero-mean
proper Gaussian vector whose correlation follows from a tapped power
delay profile: with tap delays tau_t and normalised powers p_t,

    E[h_k conj(h_l)] = sum_t p_t exp(-2 pi i (k - l) spacing tau_t),

which is exactly ``A A^H`` for the n x T matrix
``A[k, t] = sqrt(p_t) exp(-2 pi i k spacing tau_t)``. That factor is kept
on the prior, so smoothing and sampling work in the T-dimensional tap
space rather than the n-dimensional subcarrier space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib.resources import as_file, files
from pathlib import Path

import numpy as np

from .coding import CodeConfig, InterleaverPermutation, make_interleaver
from .gaussians import JointGaussian
from .mapping import Constellation, qpsk_gray
from .rng import philox


@dataclass(frozen=True)
class PowerDelayProfile:
    """Tapped delay line: delays in seconds, linear powers summing to one."""

    delays: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        delays = np.ascontiguousarray(self.delays, dtype=np.float64)
        powers = np.ascontiguousarray(self.powers, dtype=np.float64)
        if delays.ndim != 1 or delays.shape != powers.shape or delays.size == 0:
            raise ValueError("delays and powers must be matching nonempty vectors")
        if np.any(delays < 0.0) or np.any(np.diff(delays) <= 0.0):
            raise ValueError("delays must be nonnegative and strictly increasing")
        if np.any(powers <= 0.0):
            raise ValueError("tap powers must be positive")
        powers = powers / powers.sum()
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "powers", powers)

    @property
    def n_taps(self) -> int:
        return self.delays.size

    @property
    def mean_delay(self) -> float:
        return float(np.dot(self.powers, self.delays))

    @property
    def rms_delay_spread(self) -> float:
        mean = self.mean_delay
        return float(math.sqrt(np.dot(self.powers, (self.delays - mean) ** 2)))

    @property
    def coherence_bandwidth(self) -> float:
        """Rule-of-thumb 50%-correlation bandwidth, ``1 / (5 * rms delay spread)``."""
        return 1.0 / (5.0 * self.rms_delay_spread)

    @classmethod
    def from_file(cls, path: str | Path) -> "PowerDelayProfile":
        """Read ``delay_ns power_dB`` lines; ``#`` starts a comment."""
        delays, powers = [], []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            delay_ns, power_db = line.split()
            delays.append(float(delay_ns) * 1e-9)
            powers.append(10.0 ** (float(power_db) / 10.0))
        return cls(np.array(delays), np.array(powers))

    def to_file(self, path: str | Path):
        """Write the profile in the same ``delay_ns power_dB`` format."""
        lines = ["# delay_ns power_dB"]
        for delay, power in zip(self.delays, self.powers):
            lines.append(f"{delay * 1e9:.6f} {10.0 * math.log10(power):.10f}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def etu(cls) -> "PowerDelayProfile":
        """The bundled Extended Typical Urban profile (9 taps, 5 us span)."""
        with _resource_path("etu.pdp") as path:
            return cls.from_file(path)


def _resource_path(name: str):
    return as_file(files("jointrx").joinpath("data", name))


def frequency_correlation(pdp: PowerDelayProfile, delta_f: float) -> complex:
    """Channel correlation between two subcarriers ``delta_f`` hertz apart."""
    return complex(np.dot(pdp.powers, np.exp(-2j * np.pi * delta_f * pdp.delays)))


def covariance_from_pdp(pdp: PowerDelayProfile, spacing_hz: float, n: int) -> JointGaussian:
    """Zero-mean channel prior over ``n`` subcarriers ``spacing_hz`` apart.

    The returned prior carries the exact rank-T factor described in the
    module docstring; its covariance is Toeplitz with unit diagonal.
    """
    if spacing_hz <= 0.0 or n < 1:
        raise ValueError("need positive spacing and at least one subcarrier")
    k = np.arange(n)[:, None]
    factor = np.sqrt(pdp.powers)[None, :] * np.exp(
        -2j * np.pi * k * spacing_hz * pdp.delays[None, :]
    )
    cov = factor @ factor.conj().T
    cov = 0.5 * (cov + cov.conj().T)
    return JointGaussian(np.zeros(n, dtype=np.complex128), cov, factor=np.ascontiguousarray(factor))


def pilot_positions(n_total: int, n_pilots: int) -> np.ndarray:
    """Pilot indices centred in ``n_pilots`` equal slices of the frame."""
    if not 0 <= n_pilots <= n_total:
        raise ValueError(f"cannot place {n_pilots} pilots in {n_total} positions")
    if n_pilots == 0:
        return np.empty(0, dtype=np.int64)
    k = np.arange(1, n_pilots + 1)
    return np.ceil((2 * k - 1) * n_total / (2 * n_pilots)).astype(np.int64) - 1


@dataclass(frozen=True)
class FrameLayout:
    """Static structure of one frame: positions, pilots, code, interleaver.

    Data symbols fill the non-pilot positions in ascending order; data
    symbol ``m`` carries interleaved coded bits ``[m*L, (m+1)*L)``. The
    interleaved stream is the codeword followed by ``n_filler`` known
    zero bits padding it to a whole number of symbols.
    """

    n_total: int
    pilot_idx: np.ndarray
    data_idx: np.ndarray
    pilot_symbols: np.ndarray
    constellation: Constellation
    code: CodeConfig
    interleaver: InterleaverPermutation

    def __post_init__(self):
        pilot_idx = np.ascontiguousarray(self.pilot_idx, dtype=np.int64)
        data_idx = np.ascontiguousarray(self.data_idx, dtype=np.int64)
        merged = np.sort(np.concatenate([pilot_idx, data_idx]))
        if not np.array_equal(merged, np.arange(self.n_total)):
            raise ValueError("pilot and data indices must partition the frame")
        pilots = np.ascontiguousarray(self.pilot_symbols, dtype=np.complex128)
        if pilots.shape != pilot_idx.shape:
            raise ValueError("need one pilot symbol per pilot position")
        if np.any(np.abs(pilots) == 0.0):
            raise ValueError("pilot symbols must have nonzero modulus")
        if self.n_filler < 0:
            raise ValueError(
                f"{self.n_data} data symbols cannot carry {self.code.coded_length} coded bits"
            )
        if self.interleaver.length != self.n_coded_slots:
            raise ValueError("interleaver length must equal data symbols times bits per symbol")
        object.__setattr__(self, "pilot_idx", pilot_idx)
        object.__setattr__(self, "data_idx", data_idx)
        object.__setattr__(self, "pilot_symbols", pilots)

    @property
    def n_pilots(self) -> int:
        return self.pilot_idx.size

    @property
    def n_data(self) -> int:
        return self.data_idx.size

    @property
    def n_coded_slots(self) -> int:
        """Interleaved bit positions available on data symbols."""
        return self.n_data * self.constellation.bits_per_symbol

    @property
    def n_filler(self) -> int:
        return self.n_coded_slots - self.code.coded_length


def build_frame(
    n_total: int,
    n_pilots: int,
    constellation: Constellation,
    code: CodeConfig,
    pilot_seed: int,
    interleaver_seed: int,
    pilot_constellation: Constellation | None = None,
) -> FrameLayout:
    """Assemble a frame layout with evenly spread pilots.

    Pilot symbols are drawn uniformly from ``pilot_constellation``
    (quadrature phase by default), deterministically in ``pilot_seed``;
    the interleaver is seeded separately.
    """
    if pilot_constellation is None:
        pilot_constellation = qpsk_gray()
    pilot_idx = pilot_positions(n_total, n_pilots)
    mask = np.ones(n_total, dtype=bool)
    mask[pilot_idx] = False
    data_idx = np.flatnonzero(mask)
    rng = philox(pilot_seed)
    pilots = pilot_constellation.points[rng.integers(0, pilot_constellation.size, n_pilots)]
    interleaver = make_interleaver(interleaver_seed, data_idx.size * constellation.bits_per_symbol)
    return FrameLayout(
        n_total=n_total,
        pilot_idx=pilot_idx,
        data_idx=data_idx,
        pilot_symbols=pilots,
        constellation=constellation,
        code=code,
        interleaver=interleaver,
    )


def draw_channel(prior: JointGaussian, rng: np.random.Generator) -> np.ndarray:
    """One channel realisation from the prior."""
    return prior.draw(rng)


def transmit(
    x: np.ndarray, h: np.ndarray, noise_precision: float, rng: np.random.Generator
) -> np.ndarray:
    """Pointwise channel: ``y = h * x + w`` with ``w ~ CN(0, 1/noise_precision)``.

    An infinite noise precision transmits noiselessly.
    """
    x = np.asarray(x, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if x.shape != h.shape:
        raise ValueError("signal and channel vectors must match")
    if not noise_precision > 0.0:
        raise ValueError(f"noise precision must be positive, got {noise_precision}")
    y = h * x
    if math.isinf(noise_precision):
        return y
    scale = math.sqrt(0.5 / noise_precision)
    noise = scale * (rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size))
    return y + noise
