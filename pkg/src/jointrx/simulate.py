"""Monte Carlo harness: frame simulation, SNR sweeps, result records.

Reproducibility contract: every frame's randomness comes from Philox
streams keyed by ``(master_seed, snr_index, frame_index, stream_id)``, so
frame ``j`` at a given operating point is the same frame no matter how
many workers run or in what order results arrive. Early stopping consumes
frames strictly in index order and cuts at the first frame where every
algorithm has reached the target error count, so stopped runs are also
worker-count invariant. Wall-clock ``seconds`` is metadata and excluded
from record equality.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml
from scipy.special import erfc

from . import rng as rngmod
from .channel import (
    FrameLayout,
    PowerDelayProfile,
    build_frame,
    covariance_from_pdp,
    draw_channel,
    transmit,
)
from .coding import CodeConfig, encode, hard_decide, interleave
from .gaussians import JointGaussian
from .mapping import (
    Constellation,
    batch_bit_llrs,
    batch_gaussian_symbol_loglik,
    map_bits,
    qam16_gray,
    qpsk_gray,
)
from .receiver import ALGORITHMS, ReceiverConfig, run_receiver

WORKERS_ENV = "JOINTRX_WORKERS"

_CONSTELLATIONS = {"qam16-gray": qam16_gray, "qpsk-gray": qpsk_gray}


def snr_db_to_noise_precision(snr_db: float) -> float:
    """Noise precision gamma for a given SNR; with unit-energy symbols and
    a unit-power channel the per-symbol SNR equals gamma."""
    return 10.0 ** (snr_db / 10.0)


def qpsk_ber_analytic(noise_precision: float) -> float:
    """Exact bit error rate of Gray QPSK on a known unit gain channel."""
    return 0.5 * erfc(math.sqrt(noise_precision / 2.0))


@dataclass(frozen=True)
class RunConfig:
    """One experiment: operating points, frame structure, stopping rule."""

    snr_db: tuple[float, ...] = (8.0, 10.0, 12.0)
    algorithms: tuple[str, ...] = ("bp-ga", "ep", "bp-mf", "bp-em")
    iterations: int = 15
    master_seed: int = 1
    max_frames: int = 2000
    target_errors: int = 200
    n_total: int = 300
    n_pilots: int = 10
    info_length: int = 380
    generators: tuple[int, ...] = (0o133, 0o171, 0o165)
    constraint_length: int = 7
    constellation: str = "qam16-gray"
    subcarrier_spacing_hz: float = 15e3
    pdp_file: str | None = None
    mode: str = "coded"
    ep_step: float = 0.5
    ep_policy: str = "skip-update"
    symbol_exponent: str = "squared"
    output_dir: str | None = None
    trace_file: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "generators", tuple(int(g) for g in self.generators))
        if self.mode not in ("coded", "uncoded-qpsk"):
            raise ValueError("mode must be 'coded' or 'uncoded-qpsk'")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if self.mode == "coded" and unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}")
        if self.constellation not in _CONSTELLATIONS:
            raise ValueError(f"constellation must be one of {sorted(_CONSTELLATIONS)}")
        if self.max_frames < 1 or self.target_errors < 1:
            raise ValueError("max_frames and target_errors must be positive")

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        """Load a config mapping; generator polynomials may be octal strings."""
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "generators" in raw:
            raw["generators"] = tuple(
                int(g, 8) if isinstance(g, str) else int(g) for g in raw["generators"]
            )
        for key in ("snr_db", "algorithms"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def to_yaml(self, path: str | Path):
        data = dataclasses.asdict(self)
        data["generators"] = [f"{g:o}" for g in self.generators]
        data["snr_db"] = list(self.snr_db)
        data["algorithms"] = list(self.algorithms)
        Path(path).write_text(yaml.safe_dump(data, sort_keys=False))


@dataclass(frozen=True)
class ResultRecord:
    """One (algorithm, SNR, iteration) cell of a sweep.

    ``bit_errors`` counts information-bit errors over ``frames`` frames;
    ``ci95`` is the 95% confidence half-width (rule of three over the bit
    count when no errors occurred). ``seconds`` is the cumulative receiver
    wall time for the cell's algorithm and does not take part in equality.
    """

    algorithm: str
    snr_db: float
    iteration: int
    frames: int
    bit_errors: int
    ber: float
    ci95: float
    seconds: float = field(compare=False)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ci95(errors: int, n_bits: int) -> float:
    if n_bits == 0:
        return math.inf
    if errors == 0:
        return 3.0 / n_bits
    p = errors / n_bits
    return 1.96 * math.sqrt(p * (1.0 - p) / n_bits)


@lru_cache(maxsize=4)
def _setup(
    n_total: int,
    n_pilots: int,
    info_length: int,
    generators: tuple[int, ...],
    constraint_length: int,
    constellation: str,
    spacing_hz: float,
    pdp_file: str | None,
) -> tuple[CodeConfig, Constellation, JointGaussian]:
    code = CodeConfig(generators, constraint_length, info_length)
    const = _CONSTELLATIONS[constellation]()
    pdp = PowerDelayProfile.from_file(pdp_file) if pdp_file else PowerDelayProfile.etu()
    prior = covariance_from_pdp(pdp, spacing_hz, n_total)
    return code, const, prior


def _frame_layout(cfg: RunConfig, snr_index: int, frame_index: int) -> tuple[FrameLayout, JointGaussian]:
    code, const, prior = _setup(
        cfg.n_total,
        cfg.n_pilots,
        cfg.info_length,
        cfg.generators,
        cfg.constraint_length,
        cfg.constellation,
        cfg.subcarrier_spacing_hz,
        cfg.pdp_file,
    )
    pilot_seed = int(
        rngmod.frame_rng(cfg.master_seed, snr_index, frame_index, rngmod.STREAM_PILOTS).integers(
            0, 2**63
        )
    )
    interleaver_seed = rngmod.derive_interleaver_seed(cfg.master_seed, snr_index, frame_index)
    layout = build_frame(cfg.n_total, cfg.n_pilots, const, code, pilot_seed, interleaver_seed)
    return layout, prior


def simulate_frame(cfg: RunConfig, snr_index: int, frame_index: int) -> dict:
    """Simulate one frame and run every configured receiver on it.

    Returns a plain dict (picklable across workers) with per-algorithm
    per-iteration error counts, channel mean square errors, EP skip
    counts, and receiver wall time.
    """
    gamma = snr_db_to_noise_precision(cfg.snr_db[snr_index])
    if cfg.mode == "uncoded-qpsk":
        return _simulate_uncoded(cfg, snr_index, frame_index, gamma)
    layout, prior = _frame_layout(cfg, snr_index, frame_index)
    master = cfg.master_seed

    info_rng = rngmod.frame_rng(master, snr_index, frame_index, rngmod.STREAM_INFO_BITS)
    info_bits = info_rng.integers(0, 2, layout.code.info_length).astype(np.uint8)
    coded = encode(layout.code, info_bits)
    slots = np.concatenate([coded, np.zeros(layout.n_filler, dtype=np.uint8)])
    bit_matrix = interleave(layout.interleaver, slots).reshape(
        layout.n_data, layout.constellation.bits_per_symbol
    )
    x = np.zeros(cfg.n_total, dtype=np.complex128)
    x[layout.pilot_idx] = layout.pilot_symbols
    x[layout.data_idx] = map_bits(layout.constellation, bit_matrix)

    h = draw_channel(prior, rngmod.frame_rng(master, snr_index, frame_index, rngmod.STREAM_CHANNEL))
    y = transmit(x, h, gamma, rngmod.frame_rng(master, snr_index, frame_index, rngmod.STREAM_NOISE))

    out = {"frame": frame_index, "snr_db": cfg.snr_db[snr_index], "algorithms": {}}
    for algo in cfg.algorithms:
        rcfg = ReceiverConfig(
            algorithm=algo,
            noise_precision=gamma,
            iterations=cfg.iterations,
            ep_step=cfg.ep_step,
            ep_policy=cfg.ep_policy,
            symbol_exponent=cfg.symbol_exponent,
        )
        start = time.perf_counter()
        _, diags = run_receiver(
            layout, prior, y, rcfg, h_true=h, info_true=info_bits, coded_true=coded
        )
        elapsed = time.perf_counter() - start
        out["algorithms"][algo] = {
            "info_errors": [d.info_bit_errors for d in diags],
            "coded_errors": [d.coded_bit_errors for d in diags],
            "channel_mse": [d.channel_mse for d in diags],
            "ep_skipped": [d.ep_skipped for d in diags],
            "seconds": elapsed,
        }
    return out


def _simulate_uncoded(cfg: RunConfig, snr_index: int, frame_index: int, gamma: float) -> dict:
    """Known flat channel, Gray QPSK, symbol-by-symbol detection."""
    const = qpsk_gray()
    master = cfg.master_seed
    bits = (
        rngmod.frame_rng(master, snr_index, frame_index, rngmod.STREAM_INFO_BITS)
        .integers(0, 2, (cfg.n_total, 2))
        .astype(np.uint8)
    )
    x = map_bits(const, bits)
    h = np.ones(cfg.n_total, dtype=np.complex128)
    y = transmit(x, h, gamma, rngmod.frame_rng(master, snr_index, frame_index, rngmod.STREAM_NOISE))
    start = time.perf_counter()
    logw = batch_gaussian_symbol_loglik(
        const, y, h, np.zeros(cfg.n_total), gamma, "mean-field"
    )
    llrs = batch_bit_llrs(const, logw, np.zeros((cfg.n_total, 2)))
    decided = hard_decide(llrs)
    elapsed = time.perf_counter() - start
    errors = int(np.sum(decided != bits))
    return {
        "frame": frame_index,
        "snr_db": cfg.snr_db[snr_index],
        "algorithms": {
            "uncoded-qpsk": {
                "info_errors": [errors],
                "coded_errors": [None],
                "channel_mse": [0.0],
                "ep_skipped": [0],
                "seconds": elapsed,
            }
        },
    }


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _bits_per_frame(cfg: RunConfig) -> int:
    return 2 * cfg.n_total if cfg.mode == "uncoded-qpsk" else cfg.info_length


def _algo_names(cfg: RunConfig) -> tuple[str, ...]:
    return ("uncoded-qpsk",) if cfg.mode == "uncoded-qpsk" else cfg.algorithms


class _PointAccumulator:
    """Ordered-prefix aggregation for one operating point."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.algos = _algo_names(cfg)
        n_iter = 1 if cfg.mode == "uncoded-qpsk" else cfg.iterations
        self.errors = {a: np.zeros(n_iter, dtype=np.int64) for a in self.algos}
        self.seconds = {a: 0.0 for a in self.algos}
        self.skips = {a: 0 for a in self.algos}
        self.frames = 0
        self.traces: list[dict] = []

    def consume(self, result: dict, collect_trace: bool) -> bool:
        """Fold in one frame; True once every algorithm hit the target."""
        for algo in self.algos:
            cell = result["algorithms"][algo]
            self.errors[algo] += np.asarray(cell["info_errors"], dtype=np.int64)
            self.seconds[algo] += cell["seconds"]
            self.skips[algo] += int(np.sum(cell["ep_skipped"]))
            if collect_trace:
                for it, (ie, ce, mse, sk) in enumerate(
                    zip(
                        cell["info_errors"],
                        cell["coded_errors"],
                        cell["channel_mse"],
                        cell["ep_skipped"],
                    ),
                    start=1,
                ):
                    self.traces.append(
                        {
                            "frame": result["frame"],
                            "snr_db": result["snr_db"],
                            "algorithm": algo,
                            "iteration": it,
                            "channel_mse": mse,
                            "coded_bit_errors": ce,
                            "info_bit_errors": ie,
                            "ep_skipped": sk,
                        }
                    )
        self.frames += 1
        final_errors = (int(self.errors[a][-1]) for a in self.algos)
        return all(e >= self.cfg.target_errors for e in final_errors)

    def records(self, snr_db: float) -> list[ResultRecord]:
        n_bits = self.frames * _bits_per_frame(self.cfg)
        out = []
        for algo in self.algos:
            for it, errs in enumerate(self.errors[algo], start=1):
                errs = int(errs)
                out.append(
                    ResultRecord(
                        algorithm=algo,
                        snr_db=snr_db,
                        iteration=it,
                        frames=self.frames,
                        bit_errors=errs,
                        ber=errs / n_bits if n_bits else math.nan,
                        ci95=_ci95(errs, n_bits),
                        seconds=self.seconds[algo],
                    )
                )
        return out


def run_experiment(cfg: RunConfig, workers: int | None = None) -> list[ResultRecord]:
    """Run the configured sweep and return one record per cell.

    ``workers`` defaults to the JOINTRX_WORKERS environment variable,
    then the CPU count; one worker runs everything inline. Results are
    identical for every worker count.
    """
    workers = _resolve_workers(workers)
    collect_trace = cfg.trace_file is not None
    records: list[ResultRecord] = []
    all_traces: list[dict] = []
    for snr_index, snr_db in enumerate(cfg.snr_db):
        acc = _PointAccumulator(cfg)
        if workers == 1:
            for frame_index in range(cfg.max_frames):
                done = acc.consume(simulate_frame(cfg, snr_index, frame_index), collect_trace)
                if done:
                    break
        else:
            _run_pooled(cfg, snr_index, acc, workers, collect_trace)
        records.extend(acc.records(snr_db))
        all_traces.extend(acc.traces)
    if cfg.trace_file:
        with open(cfg.trace_file, "w") as fh:
            for line in all_traces:
                fh.write(json.dumps(line) + "\n")
    if cfg.output_dir:
        write_results(records, cfg.output_dir)
    return records


def _run_pooled(
    cfg: RunConfig, snr_index: int, acc: _PointAccumulator, workers: int, collect_trace: bool
):
    # Frames are submitted freely but consumed strictly in index order, so
    # the early-stop point cannot depend on completion timing.
    buffered: dict[int, dict] = {}
    next_submit = 0
    next_consume = 0
    stopped = False
    with ProcessPoolExecutor(max_workers=workers) as pool:
        pending: dict = {}
        while next_consume < cfg.max_frames and not stopped:
            while next_submit < cfg.max_frames and len(pending) < 2 * workers:
                fut = pool.submit(simulate_frame, cfg, snr_index, next_submit)
                pending[fut] = next_submit
                next_submit += 1
            if not pending:
                break
            done, _ = wait(set(pending), return_when=FIRST_COMPLETED)
            for fut in done:
                buffered[pending.pop(fut)] = fut.result()
            while next_consume in buffered:
                if acc.consume(buffered.pop(next_consume), collect_trace):
                    stopped = True
                next_consume += 1
                if stopped:
                    break
        pool.shutdown(cancel_futures=True)


def write_results(records: list[ResultRecord], out_dir: str | Path) -> None:
    """Write results.jsonl plus the two CSV summaries into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.as_dict()) + "\n")
    _write_csv(out / "ber_vs_iteration.csv", records)
    last: dict[tuple[str, float], ResultRecord] = {}
    for rec in records:
        key = (rec.algorithm, rec.snr_db)
        if key not in last or rec.iteration > last[key].iteration:
            last[key] = rec
    _write_csv(out / "ber_vs_snr.csv", list(last.values()))


_CSV_COLUMNS = ("algorithm", "snr_db", "iteration", "frames", "bit_errors", "ber", "ci95", "seconds")


def _write_csv(path: Path, records: list[ResultRecord]):
    rows = sorted(records, key=lambda r: (r.algorithm, r.snr_db, r.iteration))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for rec in rows:
            data = rec.as_dict()
            writer.writerow([data[c] for c in _CSV_COLUMNS])


def load_records(path: str | Path) -> list[ResultRecord]:
    """Read back a results.jsonl written by :func:`write_results`."""
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(ResultRecord(**json.loads(line)))
    return records
