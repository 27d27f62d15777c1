"""Sparse parity-check matrices: alist I/O, protograph lifting and puncturing."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_llr_matrix


class AlistFormatError(ValueError):
    """Raised when an alist stream cannot be parsed; carries the 1-based line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class LiftingError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Tanner graph of a binary LDPC code.

    Built from per-check variable lists; the per-variable view is derived and
    both are validated for range and duplicate edges. Instances are immutable.
    """

    n_vars: int
    check_vars: tuple
    var_checks: tuple = field(init=False)

    def __post_init__(self):
        n = int(self.n_vars)
        if n <= 0:
            raise ValueError("n_vars must be positive")
        rows = tuple(_frozen(r) for r in self.check_vars)
        if not rows:
            raise ValueError("a parity-check matrix needs at least one check")
        cols: list[list[int]] = [[] for _ in range(n)]
        for c, r in enumerate(rows):
            if r.size and (r.min() < 0 or r.max() >= n):
                raise ValueError(f"check {c} references a variable outside [0, {n})")
            if np.unique(r).size != r.size:
                raise ValueError(f"duplicate edge in check {c}")
            for v in r:
                cols[v].append(c)
        object.__setattr__(self, "n_vars", n)
        object.__setattr__(self, "check_vars", rows)
        object.__setattr__(self, "var_checks", tuple(_frozen(c) for c in cols))
        if not 0 < self.rate < 1:
            raise ValueError(f"rate {self.rate} outside (0, 1); need n_checks < n_vars")

    @classmethod
    def from_dense(cls, H) -> "ParityCheckMatrix":
        H = np.asarray(H)
        if H.ndim != 2:
            raise ValueError("H must be two-dimensional")
        if np.any((H != 0) & (H != 1)):
            raise ValueError("H must be binary")
        return cls(H.shape[1], tuple(np.flatnonzero(row) for row in H))

    @classmethod
    def from_sparse(cls, H) -> "ParityCheckMatrix":
        H = sp.csr_matrix(H)
        H.sum_duplicates()
        if H.nnz and np.any(H.data != 1):
            raise ValueError("H must be binary")
        return cls(H.shape[1], tuple(H.indices[H.indptr[i]:H.indptr[i + 1]]
                                     for i in range(H.shape[0])))

    @property
    def n_checks(self) -> int:
        return len(self.check_vars)

    @property
    def rate(self) -> float:
        # assumes full rank; no rank check is performed
        return (self.n_vars - self.n_checks) / self.n_vars

    @property
    def var_degrees(self) -> np.ndarray:
        return np.array([len(c) for c in self.var_checks], dtype=np.int64)

    @property
    def check_degrees(self) -> np.ndarray:
        return np.array([len(r) for r in self.check_vars], dtype=np.int64)

    @property
    def n_edges(self) -> int:
        return int(self.check_degrees.sum())

    def to_sparse(self) -> sp.csr_matrix:
        indptr = np.concatenate([[0], np.cumsum(self.check_degrees)])
        indices = np.concatenate(self.check_vars) if self.n_edges else np.empty(0, int)
        data = np.ones(indices.size, dtype=np.int8)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_checks, self.n_vars))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return (self.n_vars == other.n_vars and self.n_checks == other.n_checks
                and all(np.array_equal(np.sort(a), np.sort(b))
                        for a, b in zip(self.check_vars, other.check_vars)))

    __hash__ = None

    def __repr__(self):
        return (f"ParityCheckMatrix(n_vars={self.n_vars}, n_checks={self.n_checks}, "
                f"n_edges={self.n_edges}, rate={self.rate:.4g})")


# ---------------------------------------------------------------------------
# alist I/O
# ---------------------------------------------------------------------------

def _int_line(tokens: list[str], lineno: int) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise AlistFormatError(f"non-integer token in {' '.join(tokens)!r}", lineno) from None


def load_alist(source: str | TextIO) -> ParityCheckMatrix:
    """Parse MacKay's alist layout.

    Parameters
    ----------
    source : str or file-like
        alist text, or an open text stream.

    Returns
    -------
    ParityCheckMatrix

    Raises
    ------
    AlistFormatError
        On a malformed header, an index out of range, a duplicate edge, or
        column lists that disagree with row lists or the declared degrees.
    """
    text = source if isinstance(source, str) else source.read()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    pos = 0

    def take(what: str) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise AlistFormatError(f"unexpected end of input while reading {what}", last + 1)
        lineno, toks = lines[pos]
        pos += 1
        return lineno, _int_line(toks, lineno)

    lineno, head = take("header")
    if len(head) != 2 or head[0] <= 0 or head[1] <= 0:
        raise AlistFormatError("header must be 'n_vars n_checks' with positive values", lineno)
    n, m = head
    lineno, maxdeg = take("maximum degrees")
    if len(maxdeg) != 2 or min(maxdeg) < 0:
        raise AlistFormatError("second line must hold 'max_var_degree max_check_degree'", lineno)
    lineno, vdeg = take("variable degrees")
    if len(vdeg) != n:
        raise AlistFormatError(f"expected {n} variable degrees, got {len(vdeg)}", lineno)
    if max(vdeg) > maxdeg[0] or min(vdeg) < 0:
        raise AlistFormatError("variable degree outside [0, max_var_degree]", lineno)
    lineno, cdeg = take("check degrees")
    if len(cdeg) != m:
        raise AlistFormatError(f"expected {m} check degrees, got {len(cdeg)}", lineno)
    if max(cdeg) > maxdeg[1] or min(cdeg) < 0:
        raise AlistFormatError("check degree outside [0, max_check_degree]", lineno)

    def read_lists(count, bound, degrees, kind):
        out = []
        for k in range(count):
            if degrees[k] == 0:
                # degree-0 nodes may be written as an all-zero line or omitted entirely
                if pos < len(lines) and all(t == "0" for t in lines[pos][1]):
                    take(kind)
                out.append(([], None))
                continue
            ln, vals = take(f"{kind} {k + 1}")
            vals = [v for v in vals if v != 0]
            for v in vals:
                if not 1 <= v <= bound:
                    raise AlistFormatError(f"index {v} out of range [1, {bound}] in {kind} {k + 1}", ln)
            if len(set(vals)) != len(vals):
                raise AlistFormatError(f"duplicate edge in {kind} {k + 1}", ln)
            if len(vals) != degrees[k]:
                raise AlistFormatError(
                    f"{kind} {k + 1} lists {len(vals)} entries but its degree is {degrees[k]}", ln)
            out.append(([v - 1 for v in vals], ln))
        return out

    cols = read_lists(n, m, vdeg, "variable")
    rows = read_lists(m, n, cdeg, "check")
    if pos < len(lines):
        raise AlistFormatError("trailing content after check lists", lines[pos][0])

    row_edges = {(c, v) for c, (vs, _) in enumerate(rows) for v in vs}
    for v, (cs, ln) in enumerate(cols):
        for c in cs:
            if (c, v) not in row_edges:
                raise AlistFormatError(
                    f"edge (check {c + 1}, variable {v + 1}) missing from the check lists", ln)
    if len(row_edges) != sum(len(cs) for cs, _ in cols):
        raise AlistFormatError("check lists contain edges absent from the variable lists",
                               lines[-1][0])
    try:
        return ParityCheckMatrix(n, tuple(np.array(vs, dtype=np.int64) for vs, _ in rows))
    except ValueError as exc:
        raise AlistFormatError(str(exc)) from None


def save_alist(code: ParityCheckMatrix, sink: TextIO | None = None) -> str:
    """Write ``code`` in alist layout without zero padding; returns the text."""
    vdeg, cdeg = code.var_degrees, code.check_degrees
    out = io.StringIO()
    out.write(f"{code.n_vars} {code.n_checks}\n")
    out.write(f"{int(vdeg.max())} {int(cdeg.max())}\n")
    out.write(" ".join(map(str, vdeg)) + "\n")
    out.write(" ".join(map(str, cdeg)) + "\n")
    for cs in code.var_checks:
        out.write(" ".join(str(c + 1) for c in sorted(cs)) + "\n")
    for vs in code.check_vars:
        out.write(" ".join(str(v + 1) for v in sorted(vs)) + "\n")
    text = out.getvalue()
    if sink is not None:
        sink.write(text)
    return text


def read_alist(path) -> ParityCheckMatrix:
    with open(path, encoding="utf-8") as fh:
        return load_alist(fh)


def write_alist(code: ParityCheckMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        save_alist(code, fh)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _has_4cycle(H: sp.csr_matrix) -> bool:
    overlap = (H @ H.T).tocoo()
    off = overlap.row != overlap.col
    return bool(np.any(overlap.data[off] > 1))


def lift_protograph(base, Z: int, seed: int = 0, max_retries: int = 100,
                    avoid_4cycles: bool = False) -> ParityCheckMatrix:
    """Expand a protograph by circulant permutation blocks.

    Each base entry of multiplicity ``m`` becomes ``m`` circulant permutation
    matrices of size ``Z`` with distinct shifts drawn from ``seed``. Shifts are
    re-drawn (up to ``max_retries`` times for the whole matrix) when asked to
    avoid 4-cycles; distinct shifts within one entry already rule out
    parallel edges.

    Parameters
    ----------
    base : array_like of int, shape (mb, nb)
        Nonnegative edge multiplicities.
    Z : int
        Lifting factor.
    seed : int
    max_retries : int
    avoid_4cycles : bool

    Returns
    -------
    ParityCheckMatrix
        ``mb * Z`` checks over ``nb * Z`` variables.
    """
    base = np.asarray(base)
    if base.ndim != 2 or np.any(base < 0) or np.any(base != np.floor(base)):
        raise ValueError("base must be a 2-D array of nonnegative integers")
    base = base.astype(np.int64)
    Z = int(Z)
    if Z < 1:
        raise ValueError("lifting factor Z must be >= 1")
    if base.max(initial=0) > Z:
        raise LiftingError(f"multiplicity {base.max()} needs more than Z={Z} distinct shifts; "
                           "parallel edges cannot be avoided")
    mb, nb = base.shape
    rng = np.random.default_rng(seed)
    ar = np.arange(Z)
    for _ in range(max(1, max_retries)):
        rows, cols = [], []
        for i in range(mb):
            for j in range(nb):
                if base[i, j] == 0:
                    continue
                shifts = rng.choice(Z, size=base[i, j], replace=False)
                for s in shifts:
                    rows.append(i * Z + ar)
                    cols.append(j * Z + (ar + s) % Z)
        r = np.concatenate(rows) if rows else np.empty(0, int)
        c = np.concatenate(cols) if cols else np.empty(0, int)
        H = sp.csr_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(mb * Z, nb * Z))
        # csr construction sums duplicates; a value > 1 would be a parallel edge
        assert H.nnz == r.size and (H.nnz == 0 or H.data.max() == 1)
        if avoid_4cycles and _has_4cycle(H):
            continue
        H.sort_indices()
        return ParityCheckMatrix.from_sparse(H)
    raise LiftingError(f"no 4-cycle-free lifting found in {max_retries} attempts; increase Z")


def banded_base(rows: int, dv: int = 3, dc: int = 6) -> np.ndarray:
    """Binary ``rows x rows*dc/dv`` base with column weight ``dv`` and row weight ``dc``.

    Row ``i`` covers ``dc`` consecutive columns starting at ``i*dc/dv`` (cyclically).
    """
    if (rows * dc) % dv:
        raise ValueError("rows * dc must be divisible by dv")
    nb = rows * dc // dv
    if dc > nb:
        raise ValueError("too few base rows for this check degree")
    B = np.zeros((rows, nb), dtype=np.int64)
    for i in range(rows):
        B[i, (i * dc // dv + np.arange(dc)) % nb] = 1
    return B


def regular_code(n_vars: int, dv: int = 3, dc: int = 6, seed: int = 0, base_rows: int = 8,
                 avoid_4cycles: bool = True) -> ParityCheckMatrix:
    """Regular (dv, dc) quasi-cyclic code lifted from :func:`banded_base`."""
    base = banded_base(base_rows, dv, dc)
    if n_vars % base.shape[1]:
        raise ValueError(f"n_vars must be a multiple of {base.shape[1]}")
    return lift_protograph(base, n_vars // base.shape[1], seed, avoid_4cycles=avoid_4cycles)


# ---------------------------------------------------------------------------
# puncturing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PunctureMask:
    n_vars: int
    punctured: tuple
    effective_rate: float

    @property
    def size(self) -> int:
        return len(self.punctured)

    def as_bool(self) -> np.ndarray:
        mask = np.zeros(self.n_vars, dtype=bool)
        mask[list(self.punctured)] = True
        return mask

    @classmethod
    def none(cls, code: ParityCheckMatrix) -> "PunctureMask":
        return cls(code.n_vars, (), code.rate)


def n_punctured_for(code: ParityCheckMatrix, target_rate: float) -> int:
    return int(round(code.n_vars - (code.n_vars - code.n_checks) / target_rate))


def apply_puncture(code: ParityCheckMatrix, target_rate: float, seed: int = 0) -> PunctureMask:
    """Choose variables to puncture so that the transmitted rate reaches ``target_rate``.

    Only variables of degree >= 2 are eligible; a punctured degree-1 bit would
    receive a single zero-information message and never be recovered.
    """
    if not code.rate - 1e-12 <= target_rate < 1:
        raise ValueError(f"target rate {target_rate} must lie in [{code.rate}, 1)")
    p = max(n_punctured_for(code, target_rate), 0)
    if p == 0:
        return PunctureMask.none(code)
    eligible = np.flatnonzero(code.var_degrees >= 2)
    if p > eligible.size:
        raise ValueError(f"need {p} punctured bits but only {eligible.size} variables have degree >= 2")
    if p >= code.n_vars:
        raise ValueError("puncturing would remove every transmitted bit")
    chosen = np.sort(np.random.default_rng(seed).choice(eligible, size=p, replace=False))
    rate = (code.n_vars - code.n_checks) / (code.n_vars - p)
    return PunctureMask(code.n_vars, tuple(int(i) for i in chosen), rate)


def active_var_set(code: ParityCheckMatrix) -> frozenset:
    """Variables of degree >= 2 (those that contribute to the reliability statistic)."""
    return frozenset(int(i) for i in np.flatnonzero(code.var_degrees >= 2))


class Puncturer(TransformerMixin, BaseEstimator):
    """Rate-adaptation transformer.

    ``fit`` selects the punctured positions of a code; ``transform`` zeroes the
    corresponding columns of a batch of channel LLRs.

    Examples
    --------
    >>> code = regular_code(320, seed=1)
    >>> p = Puncturer(target_rate=0.625, seed=3).fit(code)
    >>> p.mask_.size, p.mask_.effective_rate
    (64, 0.625)
    """

    def __init__(self, target_rate=None, seed=0):
        self.target_rate = target_rate
        self.seed = seed

    def fit(self, code: ParityCheckMatrix, y=None):
        if self.target_rate is None:
            self.mask_ = PunctureMask.none(code)
        else:
            self.mask_ = apply_puncture(code, self.target_rate, self.seed)
        self.n_features_in_ = code.n_vars
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = check_llr_matrix(X, self.n_features_in_).copy()
        X[:, list(self.mask_.punctured)] = 0.0
        return X

