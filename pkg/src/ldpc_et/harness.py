"""Sweeps over reconciliation efficiency and termination policy, with CSV persistence."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import yaml

from . import qkd
from .channel import StopRule, point_from_snr, run_trials, snr_for_beta
from .code import PunctureMask, apply_puncture, read_alist
from .decoder import FIXED_POINT, SAFETY_CAP, DecodeConfig

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid sweep configuration; the message names the offending field."""


@dataclass(frozen=True)
class PolicySpec:
    label: str
    d_max: int | None = 100
    use_pce: bool = True
    use_vnr: bool = False

    def decode_config(self, msg_clamp=30.0, safety_cap=100_000) -> DecodeConfig:
        return DecodeConfig(self.d_max, self.use_pce, self.use_vnr, msg_clamp, safety_cap)


@dataclass
class SweepConfig:
    code_path: str
    beta_grid: list
    policies: list
    stop: StopRule = field(default_factory=StopRule)
    master_seed: int = 0
    qkd: qkd.QkdSystemParams = field(default_factory=qkd.QkdSystemParams)
    derive_va: bool = True
    puncture_target: float | None = None
    puncture_seed: int = 0
    snr_override: float | None = None
    workers: int = 1
    chunk_size: int = 32
    msg_clamp: float = 30.0
    safety_cap: int = 100_000

    def __post_init__(self):
        if not self.beta_grid:
            raise ConfigError("grid.beta: must be a nonempty list")
        for b in self.beta_grid:
            if not 0 < b <= 1:
                raise ConfigError(f"grid.beta: value {b} outside (0, 1]")
        if not self.policies:
            raise ConfigError("policies: at least one policy is required")
        labels = [p.label for p in self.policies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"policies: labels must be unique, got {labels}")
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigError("run.workers and run.chunk_size must be >= 1")


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "code": {"path", "puncture_target", "puncture_seed"},
    "grid": {"beta", "snr_override"},
    "stop": {"min_frame_errors", "max_frames"},
    "qkd": {f.name for f in dataclasses.fields(qkd.QkdSystemParams)} | {"derive_va"},
    "run": {"master_seed", "workers", "chunk_size", "msg_clamp", "safety_cap"},
}


def _set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override {key!r}: expected section.field")
    raw.setdefault(parts[0], {})
    if not isinstance(raw[parts[0]], dict):
        raise ConfigError(f"override {key!r}: section {parts[0]!r} is not a mapping")
    raw[parts[0]][parts[1]] = value


def _parse_d_max(value, where):
    if value is None or (isinstance(value, str) and value.lower() in ("unbounded", "none", "inf")):
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{where}.d_max: expected a positive integer or 'unbounded', got {value!r}")
    return value


def _typed(section, key, value, kind):
    try:
        if kind is bool:
            if isinstance(value, str):
                low = value.lower()
                if low in ("true", "yes", "1"):
                    return True
                if low in ("false", "no", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot interpret {value!r} as {kind.__name__}") from None


def parse_config(raw: dict, overrides: dict | None = None) -> SweepConfig:
    """Build a :class:`SweepConfig` from a parsed mapping plus ``section.field`` overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping of sections")
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for key, value in (overrides or {}).items():
        if isinstance(value, str):
            value = yaml.safe_load(value)
        _set_dotted(raw, key, value)

    for name, section in raw.items():
        if name == "policies":
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        if not isinstance(section, dict):
            raise ConfigError(f"{name}: expected a mapping")
        unknown = set(section) - _SECTIONS[name]
        if unknown:
            raise ConfigError(f"{name}: unknown field(s) {sorted(unknown)}")

    code = raw.get("code", {})
    if "path" not in code:
        raise ConfigError("code.path: required")
    grid = raw.get("grid", {})
    betas = grid.get("beta")
    if isinstance(betas, (int, float)):
        betas = [betas]
    if not isinstance(betas, list):
        raise ConfigError("grid.beta: expected a list of numbers")
    betas = [_typed("grid", "beta", b, float) for b in betas]

    policies = []
    pol_raw = raw.get("policies")
    if not isinstance(pol_raw, list):
        raise ConfigError("policies: expected a list of {label, d_max, use_pce, use_vnr}")
    for i, p in enumerate(pol_raw):
        where = f"policies[{i}]"
        if not isinstance(p, dict) or "label" not in p:
            raise ConfigError(f"{where}: expected a mapping with a label")
        unknown = set(p) - {"label", "d_max", "use_pce", "use_vnr"}
        if unknown:
            raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
        spec = PolicySpec(str(p["label"]), _parse_d_max(p.get("d_max", 100), where),
                          _typed(where, "use_pce", p.get("use_pce", True), bool),
                          _typed(where, "use_vnr", p.get("use_vnr", False), bool))
        try:
            spec.decode_config()
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        policies.append(spec)

    stop_raw = raw.get("stop", {})
    mfe = stop_raw.get("min_frame_errors", 100)
    try:
        stop = StopRule(None if mfe is None else int(mfe), int(stop_raw.get("max_frames", 10_000)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"stop: {exc}") from None

    q_raw = dict(raw.get("qkd", {}))
    derive_va = _typed("qkd", "derive_va", q_raw.pop("derive_va", True), bool)
    try:
        params = qkd.QkdSystemParams(**q_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"qkd: {exc}") from None

    run = raw.get("run", {})
    pt = code.get("puncture_target")
    snr = grid.get("snr_override")
    return SweepConfig(
        code_path=str(code["path"]),
        beta_grid=betas,
        policies=policies,
        stop=stop,
        master_seed=_typed("run", "master_seed", run.get("master_seed", 0), int),
        qkd=params,
        derive_va=derive_va,
        puncture_target=None if pt is None else _typed("code", "puncture_target", pt, float),
        puncture_seed=_typed("code", "puncture_seed", code.get("puncture_seed", 0), int),
        snr_override=None if snr is None else _typed("grid", "snr_override", snr, float),
        workers=_typed("run", "workers", run.get("workers", 1), int),
        chunk_size=_typed("run", "chunk_size", run.get("chunk_size", 32), int),
        msg_clamp=_typed("run", "msg_clamp", run.get("msg_clamp", 30.0), float),
        safety_cap=_typed("run", "safety_cap", run.get("safety_cap", 100_000), int),
    )


def load_config(path, overrides: dict | None = None) -> SweepConfig:
    """Read a YAML sweep configuration; a relative ``code.path`` resolves against the file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: {where}: {exc.problem}") from None
    cfg = parse_config(raw, overrides)
    code_path = Path(cfg.code_path)
    if not code_path.is_absolute():
        cfg.code_path = str(path.parent / code_path)
    return cfg


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class SweepRecord:
    beta: float
    snr: float
    policy_label: str
    d_max: int | None
    use_pce: bool
    use_vnr: bool
    frames: int
    frame_errors: int
    undetected_errors: int
    fer: float
    fer_ci_low: float
    fer_ci_high: float
    d_bar: float
    iter_p99: float
    iter_max: int
    safety_cap_hits: int
    fixed_point_stops: int
    iter_histogram_path: str
    rate: float
    n_vars: int
    k_throughput: float
    i_ab: float
    chi_be: float
    delta_n: float
    skr: float
    skr_negative: bool
    skr_dec: float
    v_a_used: float
    seed: int
    min_frame_errors: int | None
    max_frames: int
    stop_exhausted: bool
    puncture_pattern: str


FIELDS = [f.name for f in dataclasses.fields(SweepRecord)]
_INT_FIELDS = {"frames", "frame_errors", "undetected_errors", "iter_max", "safety_cap_hits",
               "fixed_point_stops",
               "n_vars", "seed", "max_frames"}
_OPT_INT_FIELDS = {"d_max", "min_frame_errors"}
_BOOL_FIELDS = {"use_pce", "use_vnr", "skr_negative", "stop_exhausted"}
_STR_FIELDS = {"policy_label", "iter_histogram_path", "puncture_pattern"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def record_row(rec: SweepRecord) -> dict:
    return {k: _fmt(getattr(rec, k)) for k in FIELDS}


def _parse_value(name, text):
    if name in _STR_FIELDS:
        return text
    if name in _BOOL_FIELDS:
        return text == "true"
    if name in _OPT_INT_FIELDS:
        return None if text == "" else int(text)
    if name in _INT_FIELDS:
        return int(text)
    return math.nan if text == "" else float(text)


def read_records(path) -> list[SweepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: records file lacks column(s) {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(SweepRecord(**{k: _parse_value(k, row[k]) for k in FIELDS}))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
        return out


def write_rows(path, rows: list[dict], fieldnames=None) -> None:
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _key_quantities(params: qkd.QkdSystemParams, beta, rate, derive_va):
    p = params.with_va(qkd.solve_va_for_iab(rate / beta, params)) if derive_va else params
    return p, qkd.mutual_information(p), qkd.holevo_bound(p), qkd.finite_size_penalty(p)


def run_sweep(cfg: SweepConfig, out_path=None, code=None, executor=None) -> list[SweepRecord]:
    """Run every (beta, policy) cell in grid order and return one record per cell.

    With ``out_path`` the CSV header is written first and each record is
    appended and flushed as soon as its cell finishes; iteration histograms go
    to ``<out stem>.hist/`` next to it.
    """
    if code is None:
        code = read_alist(cfg.code_path)
    if cfg.puncture_target is not None:
        mask = apply_puncture(code, cfg.puncture_target, cfg.puncture_seed)
        pattern = f"seeded-uniform(seed={cfg.puncture_seed})" if mask.size else "none"
    else:
        mask, pattern = PunctureMask.none(code), "none"
    rate = mask.effective_rate

    own_pool = None
    if executor is None and cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        executor = own_pool = ProcessPoolExecutor(max_workers=cfg.workers)

    fh = writer = hist_dir = None
    if out_path is not None:
        out_path = Path(out_path)
        hist_dir = out_path.with_name(out_path.stem + ".hist")
        hist_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        fh.flush()

    records = []
    try:
        for beta in cfg.beta_grid:
            point = (snr_for_beta(beta, rate) if cfg.snr_override is None
                     else point_from_snr(cfg.snr_override, rate))
            p, i_ab, chi, dn = _key_quantities(cfg.qkd, beta, rate, cfg.derive_va)
            for pol in cfg.policies:
                dcfg = pol.decode_config(cfg.msg_clamp, cfg.safety_cap)
                stats = run_trials(code, mask if mask.size else None, point, dcfg, cfg.stop,
                                   cfg.master_seed, workers=cfg.workers,
                                   chunk_size=cfg.chunk_size, executor=executor)
                hist_name = ""
                if hist_dir is not None:
                    hist_file = hist_dir / f"{pol.label}__beta{beta:.6f}.csv"
                    write_rows(hist_file, [{"iterations": i, "count": int(c)}
                                           for i, c in enumerate(stats.histogram) if c],
                               ["iterations", "count"])
                    hist_name = f"{hist_dir.name}/{hist_file.name}"
                k = qkd.decoder_throughput(code.n_vars, stats.d_bar, rate, stats.fer)
                s = qkd.secret_key_rate(beta, i_ab, chi, dn, stats.fer)
                sd = qkd.decoded_key_rate(code.n_vars, stats.d_bar, p.mu, stats.fer,
                                          beta, i_ab, chi, dn)
                rec = SweepRecord(
                    beta=float(beta), snr=float(point.snr), policy_label=pol.label,
                    d_max=pol.d_max, use_pce=pol.use_pce, use_vnr=pol.use_vnr,
                    frames=stats.frames, frame_errors=stats.frame_errors,
                    undetected_errors=stats.undetected_errors, fer=float(stats.fer),
                    fer_ci_low=stats.fer_ci[0], fer_ci_high=stats.fer_ci[1],
                    d_bar=float(stats.d_bar), iter_p99=stats.iteration_quantile(0.99),
                    iter_max=int(len(stats.histogram) - 1),
                    safety_cap_hits=int(stats.reasons.get(SAFETY_CAP, 0)),
                    fixed_point_stops=int(stats.reasons.get(FIXED_POINT, 0)),
                    iter_histogram_path=hist_name, rate=float(rate), n_vars=code.n_vars,
                    k_throughput=float(k), i_ab=float(i_ab), chi_be=float(chi),
                    delta_n=float(dn), skr=float(s), skr_negative=bool(s < 0),
                    skr_dec=float(sd), v_a_used=float(p.v_a), seed=cfg.master_seed,
                    min_frame_errors=cfg.stop.min_frame_errors, max_frames=cfg.stop.max_frames,
                    stop_exhausted=stats.exhausted, puncture_pattern=pattern,
                )
                log.info("beta=%.4f policy=%s frames=%d fer=%.4g d_bar=%.2f", beta, pol.label,
                         rec.frames, rec.fer, rec.d_bar)
                records.append(rec)
                if writer is not None:
                    writer.writerow(record_row(rec))
                    fh.flush()
                    os.fsync(fh.fileno())
    finally:
        if fh is not None:
            fh.close()
        if own_pool is not None:
            own_pool.shutdown()
    return records


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

def _ratio(num: float, den: float) -> tuple[float | None, str]:
    if den == 0 or math.isnan(den) or math.isnan(num):
        if den == 0 and num > 0:
            return None, "inf"
        return None, "undefined"
    return num / den, ""


def compare_et(records: Iterable[SweepRecord], vnr_label: str | None = None,
               baselines: Iterable[str] | None = None) -> list[dict]:
    """Throughput and decoded-key-rate ratios of the reliability-terminated policy per beta.

    Zero or undefined denominators leave the ratio cell empty and set ``flag``;
    a decoded-key-rate ratio involving a negative rate is kept but flagged.
    """
    records = list(records)
    labels = list(dict.fromkeys(r.policy_label for r in records))
    if vnr_label is None:
        vnr_labels = list(dict.fromkeys(r.policy_label for r in records if r.use_vnr))
        if len(vnr_labels) != 1:
            raise ValueError(f"cannot pick a reliability-terminated policy from {vnr_labels}; "
                             "pass vnr_label")
        vnr_label = vnr_labels[0]
    if vnr_label not in labels:
        raise ValueError(f"policy label {vnr_label!r} not found; have {labels}")
    baselines = [l for l in labels if l != vnr_label] if baselines is None else list(baselines)
    for b in baselines:
        if b not in labels:
            raise ValueError(f"policy label {b!r} not found; have {labels}")
    if not baselines:
        raise ValueError("no baseline policy to compare against")

    cell = {(r.beta, r.policy_label): r for r in records}
    rows = []
    for beta in sorted({r.beta for r in records}):
        v = cell.get((beta, vnr_label))
        if v is None:
            continue
        for b in baselines:
            base = cell.get((beta, b))
            if base is None:
                continue
            k_ratio, kf = _ratio(v.k_throughput, base.k_throughput)
            s_ratio, sf = _ratio(v.skr_dec, base.skr_dec)
            if not sf and (v.skr_dec < 0 or base.skr_dec < 0):
                # a ratio of negative rates is not a gain
                sf = "negative"
            rows.append({
                "beta": beta, "vnr_label": vnr_label, "baseline_label": b,
                "fer_vnr": v.fer, "fer_baseline": base.fer,
                "d_bar_vnr": v.d_bar, "d_bar_baseline": base.d_bar,
                "k_vnr": v.k_throughput, "k_baseline": base.k_throughput, "k_ratio": k_ratio,
                "skr_dec_vnr": v.skr_dec, "skr_dec_baseline": base.skr_dec,
                "skr_dec_ratio": s_ratio,
                "flag": ";".join(f for f in (f"k:{kf}" if kf else "", f"skr_dec:{sf}" if sf else "") if f),
            })
    return rows


def skr_table(records: Iterable[SweepRecord], qkd_params: qkd.QkdSystemParams | None = None,
              derive_va: bool = True) -> list[dict]:
    """Per-cell SKR and decoded SKR with beta-optimum markers per policy.

    With ``qkd_params`` the key quantities are recomputed from each record's
    FER and mean iterations; otherwise the stored values are used.
    """
    records = list(records)
    if not records:
        raise ValueError("skr_table needs at least one record")
    rows = []
    for r in records:
        if qkd_params is None:
            s, sd, i_ab, chi, dn = r.skr, r.skr_dec, r.i_ab, r.chi_be, r.delta_n
        else:
            p, i_ab, chi, dn = _key_quantities(qkd_params, r.beta, r.rate, derive_va)
            s = qkd.secret_key_rate(r.beta, i_ab, chi, dn, r.fer)
            sd = qkd.decoded_key_rate(r.n_vars, r.d_bar, p.mu, r.fer, r.beta, i_ab, chi, dn)
        rows.append({"beta": r.beta, "policy_label": r.policy_label, "fer": r.fer,
                     "d_bar": r.d_bar, "i_ab": i_ab, "chi_be": chi, "delta_n": dn,
                     "skr": s, "skr_negative": s < 0, "skr_dec": sd,
                     "beta_opt_skr": False, "beta_opt_skr_dec": False})
    for label in dict.fromkeys(r["policy_label"] for r in rows):
        group = [r for r in rows if r["policy_label"] == label]
        b_skr, b_dec = qkd.optimize_beta(group)
        for r in group:
            r["beta_opt_skr"] = r["beta"] == b_skr
            r["beta_opt_skr_dec"] = r["beta"] == b_dec
    return rows


CAPTURE_COLUMNS = ("capture_id", "policy_label", "beta", "i_ab", "chi_be", "fer", "d_bar")


def read_captures(path) -> list[dict]:
    """Read an external-captures CSV.

    Required columns are :data:`CAPTURE_COLUMNS`; ``delta_n`` and ``n`` are
    optional per-row overrides.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in CAPTURE_COLUMNS if c not in cols]
        if missing:
            raise ValueError(f"{path}: captures file lacks column(s) {missing}; have {cols}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            out = {"capture_id": row["capture_id"], "policy_label": row["policy_label"]}
            for c in ("beta", "i_ab", "chi_be", "fer", "d_bar", "delta_n", "n"):
                if c not in row or row[c] in (None, ""):
                    continue
                try:
                    out[c] = float(row[c])
                except ValueError:
                    raise ValueError(f"{path}: line {lineno}: column {c!r} is not a number: "
                                     f"{row[c]!r}") from None
            rows.append(out)
        return rows


def captures_table(captures: list[dict], qkd_params: qkd.QkdSystemParams, n: float,
                   vnr_label: str, baseline_label: str) -> list[dict]:
    """Decoded-key-rate comparison per capture, at each policy's own beta optimum.

    Output is sorted by the beta at which the reliability-terminated policy
    maximises its decoded key rate.
    """
    dn_default = qkd.finite_size_penalty(qkd_params)
    scored: dict = {}
    for c in captures:
        dn = c.get("delta_n", dn_default)
        nn = c.get("n", n)
        s = qkd.secret_key_rate(c["beta"], c["i_ab"], c["chi_be"], dn, c["fer"])
        sd = qkd.decoded_key_rate(nn, c["d_bar"], qkd_params.mu, c["fer"], c["beta"],
                                  c["i_ab"], c["chi_be"], dn)
        scored.setdefault(c["capture_id"], {}).setdefault(c["policy_label"], []).append(
            {"beta": c["beta"], "skr": s, "skr_dec": sd})
    rows = []
    for cid, by_policy in scored.items():
        for label in (vnr_label, baseline_label):
            if label not in by_policy:
                raise ValueError(f"capture {cid!r} has no rows for policy {label!r}")
        best = {}
        for label in (vnr_label, baseline_label):
            _, b_dec = qkd.optimize_beta(by_policy[label])
            best[label] = next(r for r in by_policy[label] if r["beta"] == b_dec)
        v, b = best[vnr_label], best[baseline_label]
        ratio, flag = _ratio(v["skr_dec"], b["skr_dec"])
        rows.append({"capture_id": cid, "beta_opt_vnr": v["beta"], "skr_vnr": v["skr"],
                     "skr_dec_vnr": v["skr_dec"], "beta_opt_baseline": b["beta"],
                     "skr_baseline": b["skr"], "skr_dec_baseline": b["skr_dec"],
                     "skr_dec_ratio": ratio, "flag": flag})
    rows.sort(key=lambda r: r["beta_opt_vnr"])
    return rows
