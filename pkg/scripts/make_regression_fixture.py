"""Regenerate the frozen single-frame receiver traces.

Runs one fixed frame at 12 dB through every algorithm under the pure
backend (stable across machines with and without the extension) and
writes the per-iteration diagnostics to tests/fixtures/. Rerun only on a
deliberate change to receiver numerics, and commit the diff.
"""

import json
from pathlib import Path

from jointrx._kernels import use_backend
from jointrx.simulate import RunConfig, simulate_frame

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "frame_trace_snr12.json"

CONFIG = dict(
    snr_db=(12.0,),
    algorithms=("bp-ga", "ep", "bp-mf", "bp-em", "perfect-csi"),
    iterations=10,
    master_seed=7,
)


def main():
    cfg = RunConfig(**CONFIG)
    with use_backend("pure"):
        result = simulate_frame(cfg, snr_index=0, frame_index=0)
    for cell in result["algorithms"].values():
        del cell["seconds"]
    payload = {"config": CONFIG, "frame": result}
    FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(f"wrote {FIXTURE}")


if __name__ == "__main__":
    main()
