"""Compare the compiled kernels against the NumPy reference code.

Times the two sequential hot paths through their public entry points:
the forward-backward decoder sweep via ``decode_siso`` on the default
rate-1/3 code, and the ordered expectation-propagation site sweep via a
full receiver frame at 12 dB. Run from a built checkout:

    python3 benchmarks/bench_kernels.py [--repeats N] [--frames N]
"""

import argparse
import time

import numpy as np

from jointrx import _kernels
from jointrx.coding import CodeConfig, decode_siso
from jointrx.simulate import RunConfig, simulate_frame


def time_bcjr(repeats: int) -> float:
    cfg = CodeConfig((0o133, 0o171, 0o165), 7, 380)
    rng = np.random.default_rng(0)
    llrs = rng.normal(0.0, 2.0, cfg.coded_length)
    decode_siso(cfg, llrs)  # warm the trellis cache
    start = time.perf_counter()
    for _ in range(repeats):
        decode_siso(cfg, llrs)
    return (time.perf_counter() - start) / repeats


def time_ep_frame(frames: int) -> float:
    cfg = RunConfig(snr_db=(12.0,), algorithms=("ep",), max_frames=frames)
    total = 0.0
    for index in range(frames):
        total += simulate_frame(cfg, 0, index)["algorithms"]["ep"]["seconds"]
    return total / frames


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50, help="decoder calls per backend")
    parser.add_argument("--frames", type=int, default=5, help="receiver frames per backend")
    args = parser.parse_args()

    backends = ["pure"]
    if _kernels.have_compiled():
        backends.append("compiled")
    else:
        print("compiled extension not built; timing the reference code only")

    results: dict[str, dict[str, float]] = {}
    for name in backends:
        with _kernels.use_backend(name):
            results[name] = {
                "bcjr decode (K=380)": time_bcjr(args.repeats),
                "ep receiver frame (12 dB)": time_ep_frame(args.frames),
            }

    width = max(len(k) for k in results[backends[0]])
    header = f"{'kernel':<{width}}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in results[backends[0]]:
        row = f"{kernel:<{width}}  "
        row += "".join(f"{results[b][kernel] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{results['pure'][kernel] / results['compiled'][kernel]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
