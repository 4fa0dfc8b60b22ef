"""Sweep plumbing: config validation, persistence, resume, summaries, CLI."""

import json
import math
import os

import numpy as np
import pytest

from nhqc import cli, eigen, sweep
from nhqc.lattice import (
    PotentialProfile,
    add_boundary_potential,
    build_haldane_cylinder,
)


def _tiny_chain_cfg(out_dir, **over):
    base = dict(model="aah-chain",
                grid={"h": {"start": 0.0, "stop": 0.3, "step": 0.1}},
                sizes=[[5, 1]], params={"V": 1.0},
                output_dir=str(out_dir))
    base.update(over)
    return sweep.SweepConfig(**base)


# ---------------------------------------------------------------------------
# configuration


def test_config_rejects_unknown_model():
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="triangular-lattice")


def test_config_rejects_bad_schema_version():
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]], schema_version=99)


@pytest.mark.parametrize("grid", [
    {"T": {"start": 0, "stop": 1, "step": 0.1}},
    {"h": {"start": 0, "stop": 1}},
    {"h": {"start": 0, "stop": 1, "step": 0.0}},
    {"h": {"start": 0, "stop": 1, "step": -0.1}},
    {"h": {"start": 2, "stop": 1, "step": 0.1}},
])
def test_config_rejects_bad_grid(grid):
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", grid=grid, sizes=[[5, 1]])


def test_config_rejects_bad_workers_and_sizes():
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]], workers=0)
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[])
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5]])
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[0, 1]])


def test_config_rejects_unknown_selector_rule():
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                          selector={"rule": "loudest"})


def test_config_approximant_validation():
    # explicit approximant must come as a pair, be a valid fraction, and
    # cover the ring
    ok = sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                           params={"alpha_p": 3, "alpha_q": 5})
    assert ok.params["alpha_q"] == 5
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                          params={"alpha_q": 5})
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                          params={"alpha_p": 7, "alpha_q": 5})
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig(model="aah-chain", sizes=[[8, 1]],
                          params={"alpha_p": 3, "alpha_q": 5})


def test_config_json_round_trip_and_unknown_keys():
    cfg = sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                            grid={"h": {"start": 0.0, "stop": 1.0, "step": 0.5}})
    again = sweep.SweepConfig.from_json(cfg.to_json())
    assert again.config_hash() == cfg.config_hash()
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig.from_json("not json at all {")
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig.from_json("[1, 2]")
    with pytest.raises(sweep.ConfigError):
        sweep.SweepConfig.from_json(json.dumps(
            {"model": "aah-chain", "sizes": [[5, 1]], "surprise": 1}))


def test_config_hash_ignores_placement_not_physics(tmp_path):
    a = _tiny_chain_cfg(tmp_path / "a")
    b = _tiny_chain_cfg(tmp_path / "b", workers=2)
    assert a.config_hash() == b.config_hash()
    c = _tiny_chain_cfg(tmp_path / "a", params={"V": 1.5})
    assert c.config_hash() != a.config_hash()


def test_axis_values_inclusive_and_scalar_fallback():
    cfg = sweep.SweepConfig(model="aah-chain", sizes=[[5, 1]],
                            grid={"h": {"start": 0.0, "stop": 3.0, "step": 0.05}},
                            params={"V": 2.5})
    h = sweep.axis_values(cfg, "h")
    assert len(h) == 61
    assert h[0] == 0.0 and h[-1] == 3.0
    assert h[7] == 0.35
    assert sweep.axis_values(cfg, "V").tolist() == [2.5]
    assert sweep.axis_values(cfg, "gamma").tolist() == [0.0]


# ---------------------------------------------------------------------------
# persistence helpers


def test_csv_round_trip_preserves_values(tmp_path):
    rows = [{"model": "aah-chain", "L_x": 5, "V": 0.30000000000000004,
             "phase": "critical-real", "flag": True, "h": None}]
    path = str(tmp_path / "r.csv")
    assert sweep.write_records_csv(path, rows) == 1
    back = sweep.load_records_csv(path)
    assert back[0]["V"] == 0.30000000000000004
    assert back[0]["L_x"] == 5
    assert back[0]["phase"] == "critical-real"
    assert back[0]["flag"] == 1
    assert "h" not in back[0]


def test_sort_records_canonical_order():
    rows = [{"model": "b", "h": 1.0}, {"model": "a", "h": 2.0},
            {"model": "a", "h": 0.5}, {"h": 9.9}]
    out = sweep.sort_records(rows)
    assert [r.get("model") for r in out] == [None, "a", "a", "b"]
    assert [r["h"] for r in out] == [9.9, 0.5, 2.0, 1.0]


# ---------------------------------------------------------------------------
# per-point helpers


def test_classify_phase_thresholds():
    assert sweep.classify_phase(0.01, 100) == "extended"
    assert sweep.classify_phase(0.6, 100) == "localized"
    assert sweep.classify_phase(0.3, 100) == "critical"
    assert sweep.classify_phase(0.5, 100) == "critical"
    assert sweep.classify_phase(0.6, 100, max_im=1e-3) == "localized-complex"
    assert sweep.classify_phase(0.6, 100, max_im=1e-9) == "localized-real"


def test_threshold_crossings():
    assert sweep.threshold_crossings([0, 1, 2, 3], [0, 1, 0, 2], 0.5) == [1.0, 3.0]
    # curve already above the level counts the first grid point
    assert sweep.threshold_crossings([0, 1, 2], [1, 0, 1], 0.5) == [0.0, 2.0]
    assert sweep.threshold_crossings([0, 1], [0.5, 0.6], 0.5) == [1.0]
    assert sweep.threshold_crossings([0, 1], [0.0, 0.2], 0.5) == []


def test_count_rises():
    steps = sweep._count_rises([0, 1, 2, 3, 4], [0, 0, 1, 1, 2])
    assert steps == [(2, 0, 1), (4, 1, 2)]
    # a drop is not an event, nor is the recovery that merely restores it
    assert sweep._count_rises([0, 1, 2, 3], [1, 2, 1, 2]) == [
        (1, 1, 2), (3, 1, 2)]
    # a high starting level is not an event either
    assert sweep._count_rises([0, 1, 2], [2, 2, 2]) == []
    assert sweep._count_rises([], []) == []


def test_split_pairs_counts_degenerate_splits():
    w = np.array([0.0 + 3.0j, 0.0 + 0.5j,      # broken pair: same Re, split Im
                  -1.2 + 0.8j, 1.2 + 0.8j,     # doublet before its collision
                  0.3 + 0.01j, 2.0 + 2.0j])    # near-real state + singleton
    assert sweep._split_pairs(w, np.arange(6)) == 1
    # collapse the doublet onto one Re value and split its Im: second pair
    w2 = w.copy()
    w2[2], w2[3] = 0.7 + 1.4j, 0.7 + 0.2j
    assert sweep._split_pairs(w2, np.arange(6)) == 2
    # the floor keeps near-real states from pairing at all
    assert sweep._split_pairs(np.array([0.1j, 0.3 + 0.01j]), np.arange(2)) == 0


def test_size_summary_skips_transient_crossing():
    cfg = sweep.SweepConfig(model="haldane-cylinder", sizes=[[5, 4]],
                            params={"alpha_p": 3, "alpha_q": 5, "V": 1.0})
    grid = np.round(np.arange(0.0, 1.01, 0.1), 10)
    ipr = [0.05, 0.25, 0.15, 0.25, 0.30, 0.40, 0.60, 0.70, 0.70, 0.70, 0.70]
    fid = [1.0] * 11
    fid[5] = 0.2
    imw = [0.0] * 7 + [0.2, 0.3, 0.3, 0.3]
    rows = [{"L_x": 5, "L_y": 4, "V": 1.0, "h": float(h), "ipr_g_chain": p,
             "fidelity": f, "max_im_window": m}
            for h, p, f, m in zip(grid, ipr, fid, imw)]
    s = sweep._size_summary(cfg, rows, 5, 4, 1.0)
    # the 2/N crossing at 0.1 retreats at 0.2, so the sustained one wins
    assert s["h1"] == pytest.approx(0.3)
    assert s["h2"] == pytest.approx(0.6)
    assert s["npt"] == 1
    assert s["n_im_zeros"] == 4 and s["zeros_degenerate"] is False
    assert s["h1_im"] == pytest.approx(0.7)
    assert s["h2_im"] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# runners


def test_single_point_sweep_matches_direct_call(tmp_path):
    cfg = sweep.SweepConfig(model="haldane-cylinder", grid={}, sizes=[[5, 4]],
                            params={"V": 1.0, "h": 0.2},
                            output_dir=str(tmp_path))
    res = sweep.run_phase_diagram(cfg)
    assert res.ok and len(res.records) == 1
    row = res.records[0]

    base = build_haldane_cylinder(5, 4, 1.0, 0.2, math.pi / 2)
    lat = base.lattice
    profile = PotentialProfile.golden(V=1.0, h=0.2, length=5)
    spec = eigen.decompose(add_boundary_potential(base, lat, profile))
    w, vr = spec.eigenvalues, spec.right_vectors
    p2 = np.abs(vr) ** 2
    weight = p2.sum(axis=0)
    dens2 = p2[lat.boundary_sites(2), :].sum(axis=0) / weight
    g = eigen.select_state(spec, eigen.StateSelector(rule="edge-min-real"),
                           edge_density=dens2)
    pg = p2[:, g] / weight[g]
    assert row["e_g_re"] == pytest.approx(w[g].real, abs=1e-15)
    assert row["e_g_im"] == pytest.approx(w[g].imag, abs=1e-15)
    assert row["ipr_g_full"] == pytest.approx((pg**2).sum(), abs=1e-15)
    assert row["edge_density_g"] == pytest.approx(dens2[g], abs=1e-15)
    assert row["fidelity"] == 1.0
    assert row["alpha_p"] == 3 and row["alpha_q"] == 5


def test_pool_and_sequential_runs_are_byte_identical(tmp_path):
    over = {"grid": {"V": {"start": 0.5, "stop": 1.0, "step": 0.5},
                     "h": {"start": 0.0, "stop": 0.2, "step": 0.1}},
            "params": {}}
    a = _tiny_chain_cfg(tmp_path / "a", **over)
    b = _tiny_chain_cfg(tmp_path / "b", workers=2, **over)
    ra = sweep.run_phase_diagram(a)
    rb = sweep.run_phase_diagram(b)
    assert ra.ok and rb.ok and len(ra.records) == 6
    stem = f"phase-diagram-{a.config_hash()}"
    pa = tmp_path / "a" / (stem + ".csv")
    pb = tmp_path / "b" / (stem + ".csv")
    assert sweep.sha256_file(str(pa)) == sweep.sha256_file(str(pb))


def test_finished_sweep_is_not_recomputed(tmp_path):
    cfg = _tiny_chain_cfg(tmp_path)
    first = sweep.run_phase_diagram(cfg)
    again = sweep.run_phase_diagram(_tiny_chain_cfg(tmp_path))
    assert again.extras.get("resumed") is True
    assert len(again.records) == len(first.records)
    # values survive the decimal round trip exactly
    for r0, r1 in zip(first.records, again.records):
        assert r1["e_g_re"] == r0["e_g_re"]
        assert r1["phase"] == r0["phase"]


def test_checkpoint_prefix_resumes_mid_chain(tmp_path):
    ref_cfg = _tiny_chain_cfg(tmp_path / "ref")
    ref = sweep.run_phase_diagram(ref_cfg)
    stem = f"phase-diagram-{ref_cfg.config_hash()}"

    # fake an interrupted run: first two points already on disk
    resumed_dir = tmp_path / "resumed"
    os.makedirs(resumed_dir)
    ckpt = sweep._Checkpoint(str(resumed_dir / (stem + ".partial.csv")),
                             sweep._COLUMN_ORDER)
    for r in ref.records[:2]:
        ckpt.append(r)
    ckpt.close()

    res = sweep.run_phase_diagram(_tiny_chain_cfg(resumed_dir))
    assert "resumed" not in res.extras
    assert sweep.sha256_file(str(resumed_dir / (stem + ".csv"))) == \
        sweep.sha256_file(str(tmp_path / "ref" / (stem + ".csv")))
    assert not os.path.exists(resumed_dir / (stem + ".partial.csv"))


def test_tampered_output_is_recomputed(tmp_path):
    cfg = _tiny_chain_cfg(tmp_path)
    first = sweep.run_phase_diagram(cfg)
    stem = f"phase-diagram-{cfg.config_hash()}"
    csv_path = tmp_path / (stem + ".csv")
    good = sweep.sha256_file(str(csv_path))
    with open(csv_path, "a", encoding="utf-8") as fh:
        fh.write("tampered\n")
    res = sweep.run_phase_diagram(_tiny_chain_cfg(tmp_path))
    assert "resumed" not in res.extras
    assert sweep.sha256_file(str(csv_path)) == good
    assert len(res.records) == len(first.records)


def test_size_scan_step_overrides_and_summary(tmp_path):
    cfg = sweep.SweepConfig(
        model="haldane-cylinder",
        grid={"h": {"start": 0.0, "stop": 0.1, "step": 0.05}},
        sizes=[[5, 4], [8, 4]],
        params={"V": 1.0, "h_step_overrides": {"8": 0.1}},
        output_dir=str(tmp_path))
    res = sweep.run_size_scan(cfg)
    assert res.ok
    h_by_size = {}
    for r in res.records:
        h_by_size.setdefault(r["L_x"], set()).add(round(r["h"], 10))
    assert h_by_size[5] == {0.0, 0.05, 0.1}
    assert h_by_size[8] == {0.0, 0.1}

    summary = res.extras["summary"]
    assert [s["L_x"] for s in summary] == [5, 8]
    for s in summary:
        assert s["npt"] >= 0
        # sign changes around a closed ring come in pairs
        assert s["n_im_zeros"] > 0 and s["n_im_zeros"] % 2 == 0
    stem = f"size-scan-{cfg.config_hash()}"
    assert os.path.exists(tmp_path / (stem + "-summary.csv"))


def test_impurity_scan_quiet_below_threshold(tmp_path):
    # |Im E| <= gamma for a diagonal +/- i gamma perturbation, so nothing
    # can cross the 0.05 counting threshold here and no event may fire
    cfg = sweep.SweepConfig(
        model="haldane-cylinder",
        grid={"gamma": {"start": 0.0, "stop": 0.04, "step": 0.02}},
        sizes=[[5, 4]], params={"V": 0.0, "separations": [1]},
        output_dir=str(tmp_path))
    res = sweep.run_impurity_scan(cfg)
    assert res.extras["events"] == []
    assert len(res.records) == 3
    assert all(r["n_complex"] == 0 for r in res.records)
    assert all(r["pass"] == "coarse" for r in res.records)
    with open(res.manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    assert manifest["events"] == []
    assert isinstance(manifest["anchor"], int)
    assert manifest["im_threshold"] == 0.05


# ---------------------------------------------------------------------------
# figure export


def test_emit_plot_data_exact_columns(tmp_path):
    records = [{"model": "haldane-cylinder", "V": 1.0, "h": 0.1,
                "max_im_window": 0.0, "max_im_all": 0.001},
               {"model": "haldane-cylinder", "V": 1.0, "h": 0.2,
                "max_im_window": 0.3, "max_im_all": 0.4}]
    path = sweep.emit_plot_data(records, "fig4d", str(tmp_path))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        body = fh.read().strip().splitlines()
    assert header == "h,max_im_window,max_im_all"
    assert len(body) == 2


def test_emit_plot_data_coverage_errors(tmp_path):
    with pytest.raises(sweep.CoverageError):
        sweep.emit_plot_data([{"h": 1.0}], "fig99", str(tmp_path))
    # columns present on the wrong model do not count as coverage
    rows = [{"model": "aah-chain", "V": 1.0, "h": 0.1,
             "ipr_g_chain": 0.2, "phase": "critical-real"}]
    with pytest.raises(sweep.CoverageError):
        sweep.emit_plot_data(rows, "fig1b", str(tmp_path))


# ---------------------------------------------------------------------------
# command line


def _write_cfg(tmp_path, name, payload):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return str(path)


def test_cli_runs_tiny_sweep_and_resumes(tmp_path):
    cfg_path = _write_cfg(tmp_path, "tiny.json", {
        "model": "aah-chain",
        "grid": {"h": {"start": 0.0, "stop": 0.2, "step": 0.1}},
        "sizes": [[5, 1]], "params": {"V": 1.0},
        "output_dir": str(tmp_path)})
    assert cli.main(["phase-diagram", "--config", cfg_path]) == 0
    assert cli.main(["phase-diagram", "--config", cfg_path]) == 0


def test_cli_configuration_errors_exit_3(tmp_path):
    assert cli.main(["phase-diagram", "--config",
                     "/definitely/missing.json"]) == 3
    bad = _write_cfg(tmp_path, "bad.json", {
        "model": "aah-chain", "sizes": [[5, 1]], "surprise": True})
    assert cli.main(["phase-diagram", "--config", bad]) == 3


def test_cli_partial_failure_exits_2(tmp_path):
    # an in-gap window nothing can satisfy forces a selection failure
    cfg_path = _write_cfg(tmp_path, "strict.json", {
        "model": "haldane-cylinder", "grid": {}, "sizes": [[5, 4]],
        "params": {"V": 1.0, "h": 0.2},
        "selector": {"rule": "in-gap-edge", "gap_edge": 1e-9,
                     "edge_threshold": 0.99},
        "output_dir": str(tmp_path)})
    assert cli.main(["phase-diagram", "--config", cfg_path]) == 2
    stems = [p for p in os.listdir(tmp_path) if p.endswith(".manifest.json")]
    with open(tmp_path / stems[0], encoding="utf-8") as fh:
        assert json.load(fh)["status"] == "partial"


def test_cli_seedless_marks_manifest(tmp_path):
    cfg_path = _write_cfg(tmp_path, "tiny.json", {
        "model": "aah-chain",
        "grid": {"h": {"start": 0.0, "stop": 0.1, "step": 0.1}},
        "sizes": [[5, 1]], "params": {"V": 1.0},
        "output_dir": str(tmp_path)})
    assert cli.main(["phase-diagram", "--config", cfg_path, "--seedless"]) == 0
    stems = [p for p in os.listdir(tmp_path) if p.endswith(".manifest.json")]
    with open(tmp_path / stems[0], encoding="utf-8") as fh:
        assert json.load(fh)["deterministic"] is True


def test_cli_four_site_writes_exceptional_points(tmp_path):
    cfg_path = _write_cfg(tmp_path, "four.json", {
        "model": "four-site",
        "grid": {"gamma": {"start": 0.0, "stop": 0.2, "step": 0.1}},
        "sizes": [], "params": {"t": 1.0, "kinds": ["non-adjacent"]},
        "output_dir": str(tmp_path)})
    assert cli.main(["four-site", "--config", cfg_path]) == 0
    stems = [p for p in os.listdir(tmp_path) if p.endswith(".manifest.json")]
    with open(tmp_path / stems[0], encoding="utf-8") as fh:
        eps = json.load(fh)["exceptional_points"]
    assert eps["non-adjacent"] == pytest.approx(
        [math.sqrt(5) - 1, math.sqrt(5) + 1], abs=1e-9)


def test_cli_theory_check_all_green(tmp_path):
    assert cli.main(["theory-check", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "theory-check.json", encoding="utf-8") as fh:
        checks = json.load(fh)["checks"]
    assert len(checks) >= 6
    assert all(c["ok"] for c in checks)


def test_cli_emit_plots(tmp_path):
    rows = [{"model": "haldane-cylinder", "V": 1.0, "h": 0.1,
             "max_im_window": 0.0, "max_im_all": 0.001}]
    rc = str(tmp_path / "records.csv")
    sweep.write_records_csv(rc, rows)
    assert cli.main(["emit-plots", "--records", rc,
                     "--figures", "fig4d", "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "fig4d.csv")
    assert cli.main(["emit-plots", "--records", rc,
                     "--figures", "fig99", "--out", str(tmp_path)]) == 3
