"""Command-line entry point: ``ldpc-et <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numeric or
validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import qkd
from .code import lift_protograph, read_alist, write_alist
from .decoder import BeliefPropagationDecoder, format_q_trace
from .harness import (ConfigError, captures_table, compare_et, load_config, parse_config,
                      read_captures, read_records, run_sweep, skr_table, write_rows)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ldpc_et")


def _parse_base(text: str) -> np.ndarray:
    try:
        rows = [[int(x) for x in row.replace(",", " ").split()] for row in text.split(";") if row.strip()]
    except ValueError:
        raise ConfigError(f"--base: cannot parse {text!r}; use rows like '3 3' separated by ';'") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError("--base: rows must be nonempty and of equal length")
    return np.array(rows)


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.field=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_gen_code(args) -> int:
    if args.base_file:
        base = np.loadtxt(args.base_file, dtype=np.int64, ndmin=2)
    else:
        base = _parse_base(args.base)
    code = lift_protograph(base, args.z, seed=args.seed, max_retries=args.retries,
                           avoid_4cycles=args.avoid_4cycles)
    write_alist(code, args.out)
    log.info("wrote %r to %s", code, args.out)
    return EXIT_OK


def _load_llrs(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path).astype(np.float64).ravel()
    text = Path(path).read_text(encoding="utf-8").replace(",", " ")
    try:
        return np.array([float(t) for t in text.split()])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def cmd_decode(args) -> int:
    code = read_alist(args.code)
    llrs = _load_llrs(args.llr)
    if llrs.size != code.n_vars:
        raise ValueError(f"LLR file holds {llrs.size} values, code length is {code.n_vars}")
    d_max = None if args.d_max in ("unbounded", "none") else int(args.d_max)
    dec = BeliefPropagationDecoder(d_max=d_max, use_pce=args.pce, use_vnr=args.vnr,
                                   msg_clamp=args.msg_clamp).fit(code)
    out = dec.decode(llrs)
    summary = {"iterations": out.iterations, "reason": out.reason, "converged": out.converged,
               "bit_errors_vs_zero": int(out.bits.sum()), "q_trace": out.q_trace.tolist(),
               "bits": "".join(map(str, out.bits.tolist()))}
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.q_trace:
        Path(args.q_trace).write_text(format_q_trace(out) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_fer_sweep(args) -> int:
    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["run.master_seed"] = str(args.seed)
    if args.workers is not None:
        overrides["run.workers"] = str(args.workers)
    cfg = load_config(args.config, overrides)
    records = run_sweep(cfg, out_path=args.out)
    log.info("%d records written to %s", len(records), args.out)
    return EXIT_OK


def cmd_compare_et(args) -> int:
    rows = compare_et(read_records(args.records), args.vnr_label, args.baseline or None)
    write_rows(args.out, rows)
    return EXIT_OK


def _qkd_from_config(path, sets):
    if path is None:
        raw = {"qkd": {}}
        for k, v in sets.items():
            if not k.startswith("qkd."):
                raise ConfigError(f"--set {k}: only qkd.* fields apply without --config")
            raw["qkd"][k.split(".", 1)[1]] = yaml.safe_load(v)
        raw.update({"code": {"path": "-"}, "grid": {"beta": [1.0]},
                    "policies": [{"label": "x"}]})
        cfg = parse_config(raw)
    else:
        cfg = load_config(path, sets)
    return cfg.qkd, cfg.derive_va


def cmd_skr_table(args) -> int:
    sets = _parse_sets(args.set)
    if args.captures:
        params, _ = _qkd_from_config(args.config, sets)
        rows = captures_table(read_captures(args.captures), params, args.n,
                              args.vnr_label or "vnr", args.baseline_label or "baseline")
    else:
        records = read_records(args.records)
        params, derive = (_qkd_from_config(args.config, sets)
                          if args.config or sets else (None, True))
        rows = skr_table(records, params, derive)
    write_rows(args.out, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldpc-et", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-code", help="lift a protograph into an alist file")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--base", help="base matrix rows separated by ';', e.g. '3 3'")
    src.add_argument("--base-file", help="whitespace-separated base matrix")
    g.add_argument("--z", type=int, required=True, help="lifting factor")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--retries", type=int, default=100)
    g.add_argument("--avoid-4cycles", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_code)

    d = sub.add_parser("decode", help="decode one LLR file")
    d.add_argument("--code", required=True)
    d.add_argument("--llr", required=True, help="text (whitespace/comma separated) or .npy")
    d.add_argument("--d-max", default="100", help="integer or 'unbounded'")
    d.add_argument("--pce", action=argparse.BooleanOptionalAction, default=True)
    d.add_argument("--vnr", action=argparse.BooleanOptionalAction, default=False)
    d.add_argument("--msg-clamp", type=float, default=30.0)
    d.add_argument("--out", help="JSON summary path (stdout if omitted)")
    d.add_argument("--q-trace", help="write the per-iteration statistic as CSV")
    d.set_defaults(func=cmd_decode)

    f = sub.add_parser("fer-sweep", help="run a beta x policy sweep")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--workers", type=int)
    f.add_argument("--out", required=True)
    f.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                   help="override any configuration field")
    f.set_defaults(func=cmd_fer_sweep)

    c = sub.add_parser("compare-et", help="throughput ratios from a records CSV")
    c.add_argument("--records", required=True)
    c.add_argument("--vnr-label")
    c.add_argument("--baseline", action="append")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare_et)

    s = sub.add_parser("skr-table", help="key rates from records or external captures")
    inp = s.add_mutually_exclusive_group(required=True)
    inp.add_argument("--records")
    inp.add_argument("--captures")
    s.add_argument("--config", help="YAML whose qkd section sets the physical parameters")
    s.add_argument("--set", action="append", metavar="qkd.FIELD=VALUE")
    s.add_argument("--n", type=float, default=1e6, help="block length for captures mode")
    s.add_argument("--vnr-label")
    s.add_argument("--baseline-label")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_skr_table)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, qkd.UnphysicalParameters) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
