"""Hot numerical kernels with a compiled fast path and a NumPy fallback.

Two routines dominate receiver runtime and both are sequential
recursions that vectorise poorly: the log-domain forward-backward sweep
of the decoder and the ordered expectation-propagation site sweep. They
live here twice, once compiled (Cython) and once as NumPy reference
code, with identical signatures and matching outputs.

The backend is chosen at import: the compiled extension when it built,
the reference code otherwise. ``JOINTRX_BACKEND=pure|compiled`` forces
the choice, and :func:`use_backend` switches it temporarily in-process
(used by the equivalence tests and the benchmark).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import pure

try:
    from . import _fastcore
except ImportError:
    _fastcore = None

_BACKENDS = {"pure": pure}
if _fastcore is not None:
    _BACKENDS["compiled"] = _fastcore


def _initial_backend() -> str:
    forced = os.environ.get("JOINTRX_BACKEND")
    if forced:
        if forced not in ("pure", "compiled"):
            raise ValueError(f"JOINTRX_BACKEND must be 'pure' or 'compiled', got {forced!r}")
        if forced == "compiled" and _fastcore is None:
            raise ImportError("JOINTRX_BACKEND=compiled but the extension is not built")
        return forced
    return "compiled" if _fastcore is not None else "pure"


_active = _initial_backend()


def backend_name() -> str:
    """Name of the backend answering kernel calls right now."""
    return _active


def have_compiled() -> bool:
    return _fastcore is not None


def set_backend(name: str):
    """Select the kernel backend for the rest of the process."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; built: {sorted(_BACKENDS)}")
    _active = name


@contextmanager
def use_backend(name: str):
    """Temporarily select a backend; restores the previous one on exit."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; built: {sorted(_BACKENDS)}")
    previous = _active
    _active = name
    try:
        yield
    finally:
        _active = previous


def bcjr(prior_llrs, next_state, out_bits, n_info):
    """Log-domain forward-backward pass; see :mod:`jointrx._kernels.pure`."""
    return _BACKENDS[_active].bcjr(prior_llrs, next_state, out_bits, n_info)


def ep_sweep(factor, prior_mean, y, obs_mean, obs_prec, data_idx, beta, points, gamma, step):
    """Sequential expectation-propagation site sweep; see :mod:`jointrx._kernels.pure`."""
    return _BACKENDS[_active].ep_sweep(
        factor, prior_mean, y, obs_mean, obs_prec, data_idx, beta, points, gamma, step
    )
