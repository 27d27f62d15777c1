"""Binary-input AWGN stand-in for the reconciliation channel and Monte-Carlo FER runs.

All-zero codeword, BPSK mapping 0 -> +1. Trial ``i``'s noise depends only on
``(master_seed, i)``: it is drawn from a Philox stream whose key is the master
seed and whose counter is offset by the trial index. The same unit-variance
noise is therefore reused across policies and operating points.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .code import ParityCheckMatrix, PunctureMask
from .decoder import BeliefPropagationDecoder, DecodeConfig

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ChannelPoint:
    beta: float
    rate: float
    snr: float
    sigma2: float


@dataclass
class LlrBlock:
    llrs: np.ndarray
    snr: float
    seed: int
    trial_index: int


@dataclass(frozen=True)
class StopRule:
    """Stop after ``min_frame_errors`` errors or ``max_frames`` frames, whichever first.

    ``min_frame_errors=None`` runs exactly ``max_frames`` frames.
    """

    min_frame_errors: int | None = 100
    max_frames: int = 10_000

    def __post_init__(self):
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        if self.min_frame_errors is not None and self.min_frame_errors < 1:
            raise ValueError("min_frame_errors must be >= 1 or None")


@dataclass
class TrialStats:
    frames: int
    frame_errors: int
    undetected_errors: int
    fer: float
    fer_ci: tuple
    d_bar: float
    histogram: np.ndarray
    reasons: dict = field(default_factory=dict)
    exhausted: bool = False

    def iteration_quantile(self, q: float) -> float:
        """Iteration count at quantile ``q`` (lower interpolation) from the histogram."""
        cum = np.cumsum(self.histogram)
        if cum[-1] == 0:
            return math.nan
        return float(np.searchsorted(cum, q * cum[-1], side="left"))


def snr_for_beta(beta: float, rate: float) -> ChannelPoint:
    """Operating point at which a rate-``rate`` code runs at efficiency ``beta``.

    Uses the real-dimension Gaussian capacity ``0.5 * log2(1 + snr)``, so
    ``snr = 2**(2 * rate / beta) - 1``.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    if not 0 < rate < 1:
        raise ValueError("rate must lie in (0, 1)")
    snr = math.expm1(2.0 * rate / beta * math.log(2.0))
    return ChannelPoint(beta, rate, snr, 1.0 / snr)


def point_from_snr(snr: float, rate: float) -> ChannelPoint:
    """Operating point for an explicit SNR; ``beta`` is the implied efficiency."""
    if not snr > 0:
        raise ValueError("snr must be positive")
    beta = rate / (0.5 * math.log2(1.0 + snr))
    return ChannelPoint(beta, rate, snr, 1.0 / snr)


def unit_noise(master_seed: int, trial: int, n: int) -> np.ndarray:
    """Standard-normal noise for one trial from a counter-based generator."""
    bitgen = np.random.Philox(key=[int(master_seed) & _MASK64, 0],
                              counter=[0, 0, int(trial) & _MASK64, 0])
    return np.random.Generator(bitgen).standard_normal(n)


def sample_block(point: ChannelPoint, n: int, mask: PunctureMask | None,
                 master_seed: int, trial: int) -> LlrBlock:
    """Channel LLRs ``2 y / sigma2`` for ``y = 1 + noise``; punctured positions are 0."""
    if mask is not None and mask.n_vars != n:
        raise ValueError("puncture mask length does not match the block length")
    y = 1.0 + math.sqrt(point.sigma2) * unit_noise(master_seed, trial, n)
    llrs = 2.0 * y / point.sigma2
    if mask is not None and mask.punctured:
        llrs[list(mask.punctured)] = 0.0
    return LlrBlock(llrs, point.snr, master_seed, trial)


def _decode_chunk(code, punctured, point, cfg, master_seed, start, stop):
    """Decode trials ``start..stop-1``; returns per-frame summary tuples.

    Module level so that process pools can pickle it.
    """
    n = code.n_vars
    mask = PunctureMask(n, tuple(punctured), code.rate) if punctured else None
    X = np.stack([sample_block(point, n, mask, master_seed, t).llrs for t in range(start, stop)])
    dec = BeliefPropagationDecoder.from_config(cfg).fit(code)
    rows = []
    for out in dec.decode_batch(X):
        wrong = bool(out.bits.any())
        syn = out.converged or _syndrome_ok(dec, out.bits)
        rows.append((out.iterations, out.reason, wrong, syn))
    return rows


def _syndrome_ok(dec, bits) -> bool:
    lay = dec.layout_
    ext = np.append(bits, 0)
    return not np.any(ext[lay.check_vars].sum(axis=1) % 2)


def _summarise(rows, exhausted) -> TrialStats:
    frames = len(rows)
    iters = np.array([r[0] for r in rows], dtype=np.int64)
    # a frame fails if the decoder did not reach a valid codeword or reached the wrong one
    errors = sum(1 for r in rows if r[2] or not r[3])
    undetected = sum(1 for r in rows if r[2] and r[3])
    if frames:
        lo, hi = proportion_confint(errors, frames, alpha=0.05, method="wilson")
        ci = (float(lo), float(hi))
    else:
        ci = (math.nan, math.nan)
    hist = np.bincount(iters, minlength=1) if frames else np.zeros(1, dtype=np.int64)
    return TrialStats(
        frames=frames,
        frame_errors=errors,
        undetected_errors=undetected,
        fer=errors / frames if frames else math.nan,
        fer_ci=ci,
        d_bar=float(iters.mean()) if frames else math.nan,
        histogram=hist,
        reasons=dict(Counter(r[1] for r in rows)),
        exhausted=exhausted,
    )


def run_trials(code: ParityCheckMatrix, mask: PunctureMask | None, point: ChannelPoint,
               cfg: DecodeConfig, stop: StopRule = StopRule(), master_seed: int = 0,
               workers: int = 1, chunk_size: int = 32, executor=None) -> TrialStats:
    """Monte-Carlo frame-error and iteration statistics at one operating point.

    Trials are decoded in chunks of consecutive trial indices, possibly in
    parallel, and consumed strictly in trial order. The run stops at the exact
    frame where the stop rule fires, so the statistics do not depend on
    ``workers`` or ``chunk_size``.

    Parameters
    ----------
    code, mask, point, cfg
        Code, puncture pattern (``None`` for none), channel and decoder setup.
    stop : StopRule
    master_seed : int
    workers : int
        Number of chunks decoded concurrently.
    chunk_size : int
    executor : concurrent.futures.Executor, optional
        Pool to reuse across calls; one is created when ``workers > 1``.

    Returns
    -------
    TrialStats
        ``exhausted`` is True when ``max_frames`` ran out before the error target.
    """
    punctured = tuple(mask.punctured) if mask is not None else ()
    own_pool = None
    if executor is None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        executor = own_pool = ProcessPoolExecutor(max_workers=workers)
    width = max(int(workers), 1) if executor is not None else 1
    rows: list = []
    errors = 0
    next_start = 0
    try:
        while True:
            starts = []
            for _ in range(max(width, 1)):
                if next_start >= stop.max_frames:
                    break
                starts.append((next_start, min(next_start + chunk_size, stop.max_frames)))
                next_start = starts[-1][1]
            if not starts:
                return _summarise(rows, stop.min_frame_errors is not None)
            args = (code, punctured, point, cfg, master_seed)
            if executor is None:
                results = [_decode_chunk(*args, a, b) for a, b in starts]
            else:
                futures = [executor.submit(_decode_chunk, *args, a, b) for a, b in starts]
                results = [f.result() for f in futures]
            for chunk in results:
                for r in chunk:
                    rows.append(r)
                    errors += r[2] or not r[3]
                    if stop.min_frame_errors is not None and errors >= stop.min_frame_errors:
                        return _summarise(rows, False)
    finally:
        if own_pool is not None:
            own_pool.shutdown()
