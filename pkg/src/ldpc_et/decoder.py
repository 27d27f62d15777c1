"""Flooding sum-product decoding with syndrome and reliability-based early termination.

The decoder works on batches of frames at once. Every row of a batch evolves
independently, and frames leave the batch as soon as they terminate, so a
frame's outcome does not depend on which other frames shared its batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bits, check_llr_matrix
from .code import ParityCheckMatrix, active_var_set

SYNDROME_SATISFIED = "syndrome_satisfied"
VNR_DROP = "vnr_drop"
MAX_ITERATIONS = "max_iterations"
SAFETY_CAP = "safety_cap"
FIXED_POINT = "fixed_point"
REASONS = (SYNDROME_SATISFIED, VNR_DROP, MAX_ITERATIONS, FIXED_POINT, SAFETY_CAP)


@dataclass(frozen=True)
class DecodeConfig:
    """Stopping rules and numerical guard for one decoder.

    ``d_max=None`` means no iteration limit; only allowed together with
    ``use_vnr``, and still bounded by ``safety_cap``. In that mode a frame
    whose variable-to-check messages (tanh domain) move by at most
    ``fixed_point_tol`` in one iteration sits at a fixed point of the update
    map, up to rounding jitter, and is stopped with reason ``fixed_point``.
    The reliability statistic of such a frame need not ever decrease.
    ``fixed_point_tol=None`` disables the check.
    """

    d_max: int | None = 100
    use_pce: bool = True
    use_vnr: bool = False
    msg_clamp: float = 30.0
    safety_cap: int = 100_000
    fixed_point_tol: float | None = 1e-12

    def __post_init__(self):
        if self.d_max is None:
            if not self.use_vnr:
                raise ValueError("an unbounded d_max requires use_vnr=True")
        elif int(self.d_max) < 1:
            raise ValueError("d_max must be >= 1")
        if not self.msg_clamp > 0:
            raise ValueError("msg_clamp must be positive")
        if int(self.safety_cap) < 1:
            raise ValueError("safety_cap must be >= 1")
        if self.fixed_point_tol is not None and not self.fixed_point_tol >= 0:
            raise ValueError("fixed_point_tol must be nonnegative or None")

    @property
    def iteration_limit(self) -> int:
        return int(self.safety_cap) if self.d_max is None else int(self.d_max)


@dataclass
class DecodeOutcome:
    bits: np.ndarray
    iterations: int
    reason: str
    q_trace: np.ndarray
    posteriors: np.ndarray

    @property
    def converged(self) -> bool:
        return self.reason == SYNDROME_SATISFIED


def syndrome_check(code: ParityCheckMatrix, bits) -> bool:
    """True iff every parity check of ``code`` is satisfied by ``bits``."""
    bits = check_bits(bits, code.n_vars)
    return all(int(bits[r].sum()) % 2 == 0 for r in code.check_vars)


def vnr_statistic(posteriors, active) -> float:
    """Sum of a-posteriori LLRs over the active (degree >= 2) variables."""
    idx = np.fromiter(sorted(active), dtype=np.int64, count=len(active))
    return math.fsum(np.asarray(posteriors, dtype=np.float64)[idx])


def vnr_should_stop(q_k: float, q_km1: float) -> bool:
    # strict: an unchanged statistic keeps decoding
    return q_k < q_km1


def format_q_trace(outcome: DecodeOutcome) -> str:
    """Comma-separated dump of the per-iteration reliability statistic."""
    return ",".join(repr(float(q)) for q in outcome.q_trace)


class _TannerLayout:
    """Padded index tables for vectorised message passing.

    Edges are numbered check-major, so the masked entries of ``check_edges``
    read row by row are exactly ``0..E-1``.
    """

    def __init__(self, code: ParityCheckMatrix):
        n, m = code.n_vars, code.n_checks
        cdeg = code.check_degrees
        vdeg = code.var_degrees
        E = int(cdeg.sum())
        dc = max(int(cdeg.max()), 1)
        dv = max(int(vdeg.max()), 1)

        self.n_vars, self.n_checks, self.n_edges = n, m, E
        self.edge_var = np.concatenate(code.check_vars) if E else np.empty(0, np.int64)
        self.check_edges = np.full((m, dc), E, dtype=np.int64)
        self.check_vars = np.full((m, dc), n, dtype=np.int64)
        self.check_mask = np.zeros((m, dc), dtype=bool)
        start = 0
        for c, r in enumerate(code.check_vars):
            d = r.size
            self.check_edges[c, :d] = np.arange(start, start + d)
            self.check_vars[c, :d] = r
            self.check_mask[c, :d] = True
            start += d

        self.var_edges = np.full((n, dv), E, dtype=np.int64)
        order = np.argsort(self.edge_var, kind="stable")
        counts = np.zeros(n, dtype=np.int64)
        for e in order:
            v = self.edge_var[e]
            self.var_edges[v, counts[v]] = e
            counts[v] += 1


def _exclusive_product(T: np.ndarray) -> np.ndarray:
    """Product over the last axis excluding each position, via prefix/suffix products."""
    pre = np.ones_like(T)
    suf = np.ones_like(T)
    np.cumprod(T[..., :-1], axis=-1, out=pre[..., 1:])
    np.cumprod(T[..., :0:-1], axis=-1, out=suf[..., -2::-1])
    return pre * suf


class BeliefPropagationDecoder(BaseEstimator):
    """Sum-product LDPC decoder in the LLR domain.

    Parameters
    ----------
    d_max : int or None, default=100
        Maximum number of iterations. ``None`` removes the limit (requires
        ``use_vnr``); decoding then stops at ``safety_cap`` at the latest.
    use_pce : bool, default=True
        Stop as soon as the hard decision satisfies every parity check.
    use_vnr : bool, default=False
        Stop at the first iteration whose summed a-posteriori LLR over the
        degree >= 2 variables falls below the previous iteration's sum.
    msg_clamp : float, default=30.0
        Magnitude bound applied to all edge messages. ``np.inf`` disables it.
    safety_cap : int, default=100000
    fixed_point_tol : float or None, default=1e-12
        Only used when ``d_max`` is None; see :class:`DecodeConfig`.
    active_vars : iterable of int, optional
        Variables entering the reliability statistic; defaults to those of
        degree >= 2.

    Attributes
    ----------
    code_ : ParityCheckMatrix
    active_ : numpy.ndarray
        Sorted indices of the variables in the reliability statistic.
    config_ : DecodeConfig

    Examples
    --------
    >>> import numpy as np
    >>> from ldpc_et.code import ParityCheckMatrix
    >>> H = ParityCheckMatrix.from_dense([[1, 1, 0], [0, 1, 1]])
    >>> dec = BeliefPropagationDecoder(d_max=20).fit(H)
    >>> dec.predict(np.array([[4.0, -0.5, 3.0]]))
    array([[0, 0, 0]], dtype=uint8)
    """

    def __init__(self, d_max=100, use_pce=True, use_vnr=False, msg_clamp=30.0,
                 safety_cap=100_000, fixed_point_tol=1e-12, active_vars=None):
        self.d_max = d_max
        self.use_pce = use_pce
        self.use_vnr = use_vnr
        self.msg_clamp = msg_clamp
        self.safety_cap = safety_cap
        self.fixed_point_tol = fixed_point_tol
        self.active_vars = active_vars

    @classmethod
    def from_config(cls, cfg: DecodeConfig, **kwargs) -> "BeliefPropagationDecoder":
        return cls(d_max=cfg.d_max, use_pce=cfg.use_pce, use_vnr=cfg.use_vnr,
                   msg_clamp=cfg.msg_clamp, safety_cap=cfg.safety_cap,
                   fixed_point_tol=cfg.fixed_point_tol, **kwargs)

    def fit(self, code, y=None):
        if not isinstance(code, ParityCheckMatrix):
            code = ParityCheckMatrix.from_dense(code)
        self.config_ = DecodeConfig(self.d_max, bool(self.use_pce), bool(self.use_vnr),
                                    float(self.msg_clamp), int(self.safety_cap),
                                    self.fixed_point_tol)
        active = active_var_set(code) if self.active_vars is None else self.active_vars
        self.active_ = np.array(sorted(int(i) for i in active), dtype=np.int64)
        if self.active_.size and (self.active_[0] < 0 or self.active_[-1] >= code.n_vars):
            raise ValueError("active variable index out of range")
        self.code_ = code
        self.layout_ = _TannerLayout(code)
        self.n_features_in_ = code.n_vars
        return self

    # -- public API -------------------------------------------------------

    def decode(self, llr) -> DecodeOutcome:
        """Decode one frame of channel LLRs."""
        return self.decode_batch(np.asarray(llr, dtype=np.float64)[None, :])[0]

    def decode_batch(self, X) -> list[DecodeOutcome]:
        check_is_fitted(self, "layout_")
        X = check_llr_matrix(X, self.n_features_in_)
        return self._run(X)

    def predict(self, X) -> np.ndarray:
        """Hard decisions, shape (n_frames, n_vars), dtype uint8."""
        return np.stack([o.bits for o in self.decode_batch(X)])

    def transform(self, X) -> np.ndarray:
        """Final a-posteriori LLRs, shape (n_frames, n_vars)."""
        return np.stack([o.posteriors for o in self.decode_batch(X)])

    # -- message passing --------------------------------------------------

    def _run(self, llr: np.ndarray) -> list[DecodeOutcome]:
        cfg, lay = self.config_, self.layout_
        clamp = cfg.msg_clamp
        limit = cfg.iteration_limit
        watch_stall = cfg.d_max is None and cfg.fixed_point_tol is not None
        E = lay.n_edges
        B = llr.shape[0]

        frames = np.arange(B)
        llr_run = llr
        # v2c holds tanh(L_{v->c}/2); the pad column is the neutral element 1
        t = np.ones((B, E + 1))
        t[:, :E] = np.tanh(np.clip(llr[:, lay.edge_var], -clamp, clamp) / 2)
        c2v = np.zeros((B, E + 1))
        q_prev = np.full(B, np.nan)
        q_hist: list[np.ndarray] = []
        results: list[DecodeOutcome | None] = [None] * B

        k = 0
        while frames.size:
            k += 1
            excl = _exclusive_product(t[:, lay.check_edges])
            with np.errstate(divide="ignore"):
                msg = 2.0 * np.arctanh(excl[:, lay.check_mask])
            c2v[:, :E] = np.clip(msg, -clamp, clamp)

            post = llr_run + c2v[:, lay.var_edges].sum(axis=2)
            ext = np.clip(post[:, lay.edge_var] - c2v[:, :E], -clamp, clamp)
            t_new = np.tanh(ext / 2)
            if watch_stall:
                stalled = np.abs(t_new - t[:, :E]).max(axis=1) <= cfg.fixed_point_tol
            t[:, :E] = t_new

            bits = (post < 0).astype(np.uint8)
            bits_ext = np.zeros((frames.size, lay.n_vars + 1), dtype=np.uint8)
            bits_ext[:, :-1] = bits
            syn_ok = ~np.any(bits_ext[:, lay.check_vars].sum(axis=2) % 2, axis=1)
            # fsum is exactly rounded, so q does not depend on the batch shape
            q = np.array([math.fsum(row) for row in post[:, self.active_]])
            full_q = np.full(B, np.nan)
            full_q[frames] = q
            q_hist.append(full_q)

            reason = np.full(frames.size, "", dtype=object)
            if cfg.use_pce:
                reason[syn_ok] = SYNDROME_SATISFIED
            if cfg.use_vnr and k >= 2:
                drop = (q < q_prev) & (reason == "")
                reason[drop] = VNR_DROP
            if watch_stall:
                reason[stalled & (reason == "")] = FIXED_POINT
            if k >= limit:
                reason[reason == ""] = SAFETY_CAP if cfg.d_max is None else MAX_ITERATIONS
            done = reason != ""

            for j in np.flatnonzero(done):
                f = frames[j]
                trace = np.array([h[f] for h in q_hist])
                results[f] = DecodeOutcome(bits[j].copy(), k, reason[j], trace, post[j].copy())

            if done.any():
                keep = ~done
                frames = frames[keep]
                llr_run = llr_run[keep]
                t = t[keep]
                c2v = c2v[keep]
                q = q[keep]
            q_prev = q
        return results


def decode(code: ParityCheckMatrix, llr_in, active=None, cfg: DecodeConfig | None = None) -> DecodeOutcome:
    """Decode a single frame; ``llr_in`` is an array or an object with an ``llrs`` attribute."""
    cfg = cfg or DecodeConfig()
    llrs = getattr(llr_in, "llrs", llr_in)
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.ndim != 1 or llrs.size != code.n_vars:
        raise ValueError(f"expected {code.n_vars} LLRs, got shape {llrs.shape}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("input LLRs must be finite")
    dec = BeliefPropagationDecoder.from_config(cfg, active_vars=active).fit(code)
    return dec.decode(llrs)
