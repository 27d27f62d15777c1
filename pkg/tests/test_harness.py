import dataclasses
import math

import numpy as np
import pytest

from ldpc_et import harness, qkd
from ldpc_et.code import regular_code, write_alist
from ldpc_et.harness import (ConfigError, captures_table, compare_et, load_config, parse_config,
                             read_captures, read_records, run_sweep, skr_table)


def base_raw(path="code.alist", **extra):
    raw = {"code": {"path": str(path)}, "grid": {"beta": [0.8]},
           "stop": {"min_frame_errors": 5, "max_frames": 40},
           "policies": [{"label": "pce50", "d_max": 50}]}
    raw.update(extra)
    return raw


@pytest.fixture(scope="module")
def code_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("code") / "c256.alist"
    write_alist(regular_code(256, seed=0), path)
    return path


def test_parse_minimal_defaults():
    cfg = parse_config(base_raw())
    assert cfg.beta_grid == [0.8] and cfg.master_seed == 0
    assert cfg.policies[0] == harness.PolicySpec("pce50", 50, True, False)
    assert cfg.qkd == qkd.QkdSystemParams() and cfg.derive_va
    assert (cfg.stop.min_frame_errors, cfg.stop.max_frames) == (5, 40)


def test_parse_unbounded_and_overrides():
    raw = base_raw(policies=[{"label": "vnr", "d_max": "unbounded", "use_vnr": True}])
    cfg = parse_config(raw, {"run.master_seed": "17", "grid.beta": "[0.9, 0.95]",
                             "stop.min_frame_errors": "null", "qkd.mu": "1"})
    assert cfg.policies[0].d_max is None
    assert cfg.master_seed == 17 and cfg.beta_grid == [0.9, 0.95]
    assert cfg.stop.min_frame_errors is None and cfg.qkd.mu == 1


@pytest.mark.parametrize("mutate, fragment", [
    (lambda r: r.pop("code"), "code.path"),
    (lambda r: r.update(bogus={}), "bogus: unknown section"),
    (lambda r: r["grid"].update(beta=[1.5]), "grid.beta"),
    (lambda r: r["grid"].update(beta=[]), "grid.beta"),
    (lambda r: r["grid"].update(step=3), "unknown field"),
    (lambda r: r.update(policies=[{"label": "a"}, {"label": "a"}]), "unique"),
    (lambda r: r.update(policies=[{"label": "a", "d_max": "unbounded"}]), "policies[0]"),
    (lambda r: r.update(policies=[{"label": "a", "d_max": -2}]), "policies[0].d_max"),
    (lambda r: r.update(qkd={"eta": 2.0}), "qkd"),
    (lambda r: r.update(run={"workers": "many"}), "run.workers"),
])
def test_parse_errors_name_the_field(mutate, fragment):
    raw = base_raw()
    mutate(raw)
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert fragment in str(info.value)


def test_load_config_resolves_paths_and_reports_yaml_errors(tmp_path):
    cfg_file = tmp_path / "sweep.yaml"
    cfg_file.write_text("code:\n  path: c.alist\ngrid:\n  beta: [0.9]\npolicies:\n  - label: x\n")
    assert load_config(cfg_file).code_path == str(tmp_path / "c.alist")
    cfg_file.write_text("code:\n  path: c.alist\ngrid: [0.9\n")
    with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
        load_config(cfg_file)


def test_degenerate_sweep(code_file, tmp_path):
    cfg = parse_config(base_raw(code_file, grid={"beta": [0.9], "snr_override": 1e6}))
    out = tmp_path / "r.csv"
    recs = run_sweep(cfg, out)
    assert len(recs) == 1
    r = recs[0]
    assert (r.fer, r.d_bar, r.frames, r.iter_max) == (0.0, 1.0, 40, 1)
    assert r.stop_exhausted and r.puncture_pattern == "none"
    assert r.fer_ci_low <= r.fer <= r.fer_ci_high
    assert read_records(out) == recs
    hist = (tmp_path / r.iter_histogram_path).read_text().splitlines()
    assert hist == ["iterations,count", "1,40"]


def test_fer_monotone_in_d_max_on_shared_frames(code_file):
    raw = base_raw(code_file, grid={"beta": [0.85]}, stop={"min_frame_errors": None,
                                                          "max_frames": 48},
                   policies=[{"label": "d100", "d_max": 100}, {"label": "d500", "d_max": 500}])
    r100, r500 = run_sweep(parse_config(raw))
    assert r100.fer >= r500.fer and r100.d_bar <= r500.d_bar


def test_rerun_is_byte_identical(code_file, tmp_path):
    raw = base_raw(code_file, grid={"beta": [0.8, 0.88]},
                   policies=[{"label": "p", "d_max": 30},
                             {"label": "v", "d_max": "unbounded", "use_vnr": True}])
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    run_sweep(parse_config(raw), a)
    run_sweep(parse_config(raw), b)
    run_sweep(parse_config(raw, {"run.master_seed": "1"}), c)
    body = lambda p: p.read_text().replace(p.stem + ".hist", "H")
    assert body(a) == body(b)
    assert body(a) != body(c)


def test_crash_leaves_valid_prefix(code_file, tmp_path, monkeypatch):
    raw = base_raw(code_file, grid={"beta": [0.8, 0.85, 0.9]})
    real = harness.run_trials
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise KeyboardInterrupt
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "run_trials", flaky)
    out = tmp_path / "partial.csv"
    with pytest.raises(KeyboardInterrupt):
        run_sweep(parse_config(raw), out)
    recs = read_records(out)
    assert [r.beta for r in recs] == [0.8, 0.85]


def test_punctured_sweep_records_pattern(code_file):
    raw = base_raw(code_file, code={"path": str(code_file), "puncture_target": 0.55,
                                    "puncture_seed": 3})
    (r,) = run_sweep(parse_config(raw))
    assert r.rate == pytest.approx(0.55, abs=0.005)
    assert r.puncture_pattern == "seeded-uniform(seed=3)"


def _record(**kw):
    base = dict(beta=0.9, snr=1.0, policy_label="base", d_max=200, use_pce=True, use_vnr=False,
                frames=100, frame_errors=50, undetected_errors=0, fer=0.5, fer_ci_low=0.4,
                fer_ci_high=0.6, d_bar=100.0, iter_p99=200.0, iter_max=200, safety_cap_hits=0,
                fixed_point_stops=0, iter_histogram_path="", rate=0.02, n_vars=10**6,
                k_throughput=100.0, i_ab=0.02 / 0.9, chi_be=0.01, delta_n=0.004, skr=0.002,
                skr_negative=False, skr_dec=10.0, v_a_used=0.1, seed=0, min_frame_errors=100,
                max_frames=10_000, stop_exhausted=False, puncture_pattern="none")
    base.update(kw)
    return harness.SweepRecord(**base)


def test_compare_et_identical_and_infinite():
    base = _record()
    vnr = dataclasses.replace(base, policy_label="vnr", use_vnr=True, d_max=None)
    (row,) = compare_et([base, vnr])
    assert row["k_ratio"] == 1.0 and row["skr_dec_ratio"] == 1.0 and row["flag"] == ""
    dead = dataclasses.replace(base, beta=0.95, fer=1.0, k_throughput=0.0, skr_dec=0.0)
    alive = dataclasses.replace(vnr, beta=0.95)
    rows = compare_et([base, vnr, dead, alive], "vnr", ["base"])
    assert rows[1]["k_ratio"] is None and "k:inf" in rows[1]["flag"]
    neg = compare_et([dataclasses.replace(base, skr_dec=-1.0),
                      dataclasses.replace(vnr, skr_dec=-2.0)])
    assert neg[0]["skr_dec_ratio"] == 2.0 and neg[0]["flag"] == "skr_dec:negative"
    with pytest.raises(ValueError, match="not found"):
        compare_et([base, vnr], "nope")


def test_skr_table_all_failed():
    recs = [_record(beta=b, fer=1.0) for b in (0.9, 0.95)]
    rows = skr_table(recs, qkd.QkdSystemParams())
    assert all(r["skr"] == 0.0 and r["skr_dec"] == 0.0 for r in rows)


def test_skr_table_interior_optimum():
    # FER climbs from 0 to 1 across the grid while the key margin grows with beta
    betas = np.round(np.arange(0.94, 1.0001, 0.01), 2)
    recs = [_record(beta=float(b), fer=float(np.clip((b - 0.97) / 0.02, 0, 1)), d_bar=50.0)
            for b in betas]
    rows = skr_table(recs, qkd.QkdSystemParams())
    best = [r["beta"] for r in rows if r["beta_opt_skr"]]
    assert len(best) == 1 and betas[0] < best[0] < betas[-1]
    assert sum(r["beta_opt_skr_dec"] for r in rows) == 1
    stored = skr_table(recs)
    assert [r["skr"] for r in stored] == [0.002] * len(recs)


def test_captures_ratio_two(tmp_path):
    path = tmp_path / "caps.csv"
    lines = ["capture_id,policy_label,beta,i_ab,chi_be,fer,d_bar"]
    for cid, beta, fer, d in [("c1", 0.95, 0.2, 400.0), ("c2", 0.97, 0.5, 250.0)]:
        lines.append(f"{cid},baseline,{beta},0.05,0.02,{fer},{d}")
        lines.append(f"{cid},vnr,{beta},0.05,0.02,{fer},{d / 2}")
    path.write_text("\n".join(lines) + "\n")
    rows = captures_table(read_captures(path), qkd.QkdSystemParams(), 1e6, "vnr", "baseline")
    assert [r["capture_id"] for r in rows] == ["c1", "c2"]
    for r in rows:
        assert r["skr_dec_ratio"] == pytest.approx(2.0, abs=1e-12)


def test_captures_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("capture_id,beta,fer\nc1,0.9,0.1\n")
    with pytest.raises(ValueError, match="lacks column"):
        read_captures(path)
    path.write_text("capture_id,policy_label,beta,i_ab,chi_be,fer,d_bar\nc1,v,0.9,x,0,0,1\n")
    with pytest.raises(ValueError, match="line 2"):
        read_captures(path)
    caps = [{"capture_id": "c", "policy_label": "vnr", "beta": 0.9, "i_ab": 0.05,
             "chi_be": 0.01, "fer": 0.1, "d_bar": 10.0}]
    with pytest.raises(ValueError, match="baseline"):
        captures_table(caps, qkd.QkdSystemParams(), 1e6, "vnr", "baseline")


def test_read_records_missing_columns(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("beta,fer\n0.9,0.1\n")
    with pytest.raises(ValueError, match="lacks column"):
        read_records(path)
    assert math.isnan(harness._parse_value("fer", ""))
