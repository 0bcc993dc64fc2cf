"""Shared fixtures: small frames and a deterministic RNG per test."""

import numpy as np
import pytest

from jointrx.channel import PowerDelayProfile, build_frame, covariance_from_pdp
from jointrx.coding import CodeConfig
from jointrx.mapping import qam16_gray, qpsk_gray


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def qam16():
    return qam16_gray()


@pytest.fixture(scope="session")
def qpsk():
    return qpsk_gray()


@pytest.fixture(scope="session")
def etu():
    return PowerDelayProfile.etu()


@pytest.fixture(scope="session")
def small_code():
    # 8 information bits keep exhaustive checks affordable.
    return CodeConfig((0o133, 0o171, 0o165), 7, 8)


@pytest.fixture(scope="session")
def small_frame(qam16, small_code):
    """A 13-position frame: 2 pilots, 11 data symbols, 44 bit slots.

    The 8-bit code needs 42 coded slots, leaving 2 filler bits, the same
    shape as the full-size frame.
    """
    return build_frame(13, 2, qam16, small_code, pilot_seed=7, interleaver_seed=8)


@pytest.fixture(scope="session")
def small_prior(etu, small_frame):
    return covariance_from_pdp(etu, 15e3, small_frame.n_total)
