import os

import numpy as np
import pytest
import yaml

from conftest import benchmark_config
from isekf.errors import ConfigurationError, UndefinedMetricError
from isekf.harness import (
    cli_main,
    export_csv,
    parse_config,
    render_plots,
    rmse,
    run_experiment,
)
from isekf.scenario import simulate

PKG_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PAPER_CFG = os.path.join(PKG_ROOT, "paper.cfg")
LINEAR_CFG = os.path.join(PKG_ROOT, "linear.cfg")


def write_cfg(tmp_path, data, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def minimal_cfg_dict(**scenario_extra):
    scenario = {"horizon": 40, "seed": 3}
    scenario.update(scenario_extra)
    return {
        "scenario": scenario,
        "filters": {"is-ekf": {}, "ekf": {}, "lsigma-ekf": {}},
        "output": {"dir": "out", "plots": False},
    }


# ---------------------------------------------------------------------------
# config parsing

def test_parse_bundled_benchmark_config():
    cfg = parse_config(PAPER_CFG)
    assert cfg.scenario.horizon == 700
    assert cfg.scenario.T == pytest.approx(0.1)
    assert cfg.seed == 1
    kinds = [s.kind for s in cfg.scenario.filters]
    assert kinds == ["is-ekf", "ekf", "lsigma-ekf"]
    bp = cfg.scenario.filters[0].bound_params
    np.testing.assert_allclose(bp.lambda1, [0.5, 0.5, 0.1])
    np.testing.assert_allclose(bp.lambda2, [0.1, 0.1, 0.1])
    np.testing.assert_allclose(bp.gamma1, [100.0, 100.0, 5.0e-3])
    np.testing.assert_allclose(bp.gamma2, [9.0, 9.0, 9.0])
    ranges = cfg.scenario.schedule.active_ranges()
    assert ranges == [(150, 200), (350, 400), (450, 500), (550, 600)]


def test_missing_gamma2_defaults(tmp_path):
    data = minimal_cfg_dict()
    data["filters"]["is-ekf"] = {"lambda1": [0.5, 0.5, 0.1]}
    cfg = parse_config(write_cfg(tmp_path, data))
    bp = cfg.scenario.filters[0].bound_params
    np.testing.assert_allclose(bp.gamma2, [9.0, 9.0, 9.0])


def test_invalid_lambda_rejected(tmp_path):
    data = minimal_cfg_dict()
    data["filters"]["is-ekf"] = {"lambda1": [1.5, 0.5, 0.1]}
    with pytest.raises(ConfigurationError, match="is-ekf"):
        parse_config(write_cfg(tmp_path, data))


def test_unknown_keys_rejected(tmp_path):
    data = minimal_cfg_dict()
    data["scenario"]["typo_key"] = 1
    with pytest.raises(ConfigurationError, match="typo_key"):
        parse_config(write_cfg(tmp_path, data))
    data = minimal_cfg_dict()
    data["extra_section"] = {}
    with pytest.raises(ConfigurationError, match="extra_section"):
        parse_config(write_cfg(tmp_path, data))


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.cfg"
    path.write_text("scenario:\n  horizon: 10\n filters: [unbalanced\n")
    with pytest.raises(ConfigurationError, match="line"):
        parse_config(str(path))


def test_missing_file():
    with pytest.raises(ConfigurationError, match="not found"):
        parse_config("/nonexistent/nowhere.cfg")


def test_explicit_outlier_list(tmp_path):
    data = minimal_cfg_dict(outliers=[
        {"k_lo": 5, "k_hi": 10, "kind": "constant", "value": [1.0, 2.0]},
        {"k_lo": 20, "k_hi": 25, "kind": "uniform", "scale": [[3.0, 0.0], [0.0, 1.0]]},
    ])
    cfg = parse_config(write_cfg(tmp_path, data))
    assert cfg.scenario.schedule.active_ranges() == [(5, 10), (20, 25)]


# ---------------------------------------------------------------------------
# metrics

def test_rmse_zero_error():
    tr = simulate(benchmark_config(horizon=30, schedule=None), 1)
    tr.estimates["ekf"][:] = tr.truth
    np.testing.assert_allclose(rmse(tr, "ekf"), np.zeros(3), atol=0)


def test_rmse_constant_offset():
    tr = simulate(benchmark_config(horizon=30, schedule=None), 1)
    tr.estimates["ekf"][:] = tr.truth + np.array([2.0, 0.0, 0.0])
    out = rmse(tr, "ekf")
    assert out[0] == pytest.approx(2.0)
    assert out[1] == 0.0 and out[2] == 0.0


def test_rmse_window_selects_exact_steps():
    tr = simulate(benchmark_config(horizon=700, schedule=None), 1)
    est = tr.truth.copy()
    est[451:501, 0] += 3.0          # exactly the steps in (450, 500]
    tr.estimates["ekf"][:] = est
    in_window = rmse(tr, "ekf", (450, 500))
    assert in_window[0] == pytest.approx(3.0)
    outside = rmse(tr, "ekf", (500, 550))
    assert outside[0] == 0.0


def test_rmse_wraps_heading_error():
    tr = simulate(benchmark_config(horizon=10, schedule=None), 1)
    est = tr.truth.copy()
    est[:, 2] += 2.0 * np.pi        # same heading modulo wrap
    tr.estimates["ekf"][:] = est
    assert rmse(tr, "ekf")[2] == pytest.approx(0.0, abs=1e-12)


def test_rmse_empty_window():
    tr = simulate(benchmark_config(horizon=10, schedule=None), 1)
    with pytest.raises(UndefinedMetricError):
        rmse(tr, "ekf", (10, 10))
    with pytest.raises(UndefinedMetricError):
        rmse(tr, "no-such-filter")


def test_metrics_window_combination():
    tr, report = run_experiment(parse_config(PAPER_CFG))
    # partition the horizon and recombine the squared means
    edges = [(-1, 150), (150, 200), (200, 450), (450, 500), (500, 700)]
    for label in tr.labels():
        total = np.zeros(3)
        count = 0
        for lo, hi in edges:
            n = hi - lo
            total += n * rmse(tr, label, (lo, hi))**2
            count += n
        combined = total / count
        full = rmse(tr, label)**2
        np.testing.assert_allclose(combined, full, rtol=1e-12, atol=1e-15)


def test_run_experiment_report_contents():
    tr, report = run_experiment(parse_config(PAPER_CFG))
    assert set(report.per_filter) == {"is-ekf", "ekf", "lsigma-ekf"}
    assert report.windows == [(150, 200), (350, 400), (450, 500), (550, 600)]
    assert report.per_filter["ekf"].diverged
    assert not report.per_filter["is-ekf"].diverged
    for fm in report.per_filter.values():
        assert fm.step_seconds > 0.0
    text = report.text()
    assert "rmse full" in text and "us/step" in text


def test_benchmark_rmse_ordering():
    _, report = run_experiment(parse_config(PAPER_CFG))
    pos = {lbl: np.hypot(*fm.rmse_full[:2]) for lbl, fm in report.per_filter.items()}
    assert pos["is-ekf"] < pos["lsigma-ekf"] < pos["ekf"]


def test_no_outlier_nominal_run_filters_agree():
    # benign conditions: no outliers, no initial offset, heading bound gain
    # tuned so the clip level sits above the nominal innovation scale; the
    # three filters then track within a few percent of each other
    from isekf.saturation import BoundParams
    from isekf.scenario import FilterSpec
    from conftest import robot_filter_p0
    bp = BoundParams(lambda1=[0.5, 0.5, 0.5], lambda2=[0.1, 0.1, 0.1],
                     gamma1=[100.0, 100.0, 50.0], gamma2=[9.0, 9.0, 9.0],
                     sigma0=[25.0, 25.0, 25.0], epsilon0=[1.0, 1.0, 1.0], mode="dt")
    P0 = robot_filter_p0()
    cfg = benchmark_config(
        schedule=None,
        initial_guess_offset=np.zeros(3),
        filters=[FilterSpec("is-ekf", P0=P0, bound_params=bp),
                 FilterSpec("ekf", P0=P0),
                 FilterSpec("lsigma-ekf", P0=P0, ell=3.0)],
    )
    tr = simulate(cfg, 4)
    rp = {lbl: np.sqrt((np.hypot(tr.error(lbl)[:, 0], tr.error(lbl)[:, 1])**2).mean())
          for lbl in tr.labels()}
    lo, hi = min(rp.values()), max(rp.values())
    assert hi <= 1.05 * lo, rp


def test_run_experiment_horizon_zero(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, minimal_cfg_dict(horizon=0)))
    tr, report = run_experiment(cfg)
    assert tr.horizon == 0
    assert report.windows == []


# ---------------------------------------------------------------------------
# export

def test_csv_row_count_and_determinism(tmp_path):
    cfg = parse_config(PAPER_CFG)
    trace, _ = run_experiment(cfg)
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    export_csv(trace, str(p1))
    export_csv(trace, str(p2))
    lines = p1.read_text().splitlines()
    assert len(lines) == 702
    header = lines[0].split(",")
    assert header[:2] == ["k", "t"]
    assert "is_ekf_sig_theta" in header
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_empty_trace(tmp_path):
    trace = simulate(benchmark_config(horizon=4), 1)
    # truncate to an empty trace
    import dataclasses
    empty = dataclasses.replace(
        trace, k=trace.k[:0], t=trace.t[:0], truth=trace.truth[:0], u=trace.u[:0],
        d=trace.d[:0], y=trace.y[:0],
        estimates={k: v[:0] for k, v in trace.estimates.items()},
        sqrt_sigma={k: v[:0] for k, v in trace.sqrt_sigma.items()})
    path = tmp_path / "empty.csv"
    export_csv(empty, str(path))
    assert len(path.read_text().splitlines()) == 1


def test_render_plots_files_and_shading(tmp_path):
    trace, _ = run_experiment(parse_config(PAPER_CFG))
    files = render_plots(trace, str(tmp_path))
    assert len(files) == 7
    names = {os.path.basename(f) for f in files}
    assert names == {"measurement_px.svg", "measurement_py.svg", "measurement_theta.svg",
                     "state_px.svg", "state_py.svg", "state_theta.svg", "trajectory.svg"}
    svg = open(files[0]).read()
    # four shaded stage windows
    assert svg.count('fill-opacity="0.6"') == 4
    # deterministic re-render
    files2 = render_plots(trace, str(tmp_path / "again"))
    assert open(files[0], "rb").read() == open(files2[0], "rb").read()


def test_plot_shades_match_schedule_seconds(tmp_path):
    trace, _ = run_experiment(parse_config(PAPER_CFG))
    files = render_plots(trace, str(tmp_path))
    svg = open(files[0]).read()
    # x-pixel mapping of the chart: recover shade positions and compare
    # against the stage boundaries converted to seconds
    import re
    shades = re.findall(r'<rect x="([0-9.]+)" y="36" width="([0-9.]+)" height="\d+" '
                        r'fill="#d0d0d0"', svg)
    assert len(shades) == 4
    t = trace.t
    x0, x1 = t.min(), t.max()
    mx = 0.05 * (x1 - x0)
    lo_ax, hi_ax = x0 - mx, x1 + mx
    pw = 820 - 70 - 20
    for (x_str, w_str), (k_lo, k_hi) in zip(shades, trace.schedule.active_ranges()):
        t_lo, t_hi = k_lo * trace.T, k_hi * trace.T
        expect_x = 70 + (t_lo - lo_ax) / (hi_ax - lo_ax) * pw
        expect_w = (t_hi - t_lo) / (hi_ax - lo_ax) * pw
        assert float(x_str) == pytest.approx(expect_x, abs=0.01)
        assert float(w_str) == pytest.approx(expect_w, abs=0.01)


# ---------------------------------------------------------------------------
# CLI

def test_cli_run(tmp_path, capsys):
    out = tmp_path / "runout"
    code = cli_main(["run", PAPER_CFG, "--seed", "2", "--out", str(out)])
    assert code == 0
    assert (out / "trace.csv").exists()
    assert (out / "trajectory.svg").exists()
    assert (out / "metrics.txt").exists()
    assert "rmse full" in capsys.readouterr().out


def test_cli_run_filter_subset(tmp_path):
    out = tmp_path / "sub"
    code = cli_main(["run", PAPER_CFG, "--seed", "2", "--out", str(out),
                     "--filters", "ekf", "--ell", "2.5"])
    assert code == 0
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert "ekf_px" in header and "is_ekf_px" not in header


def test_cli_certify(capsys):
    code = cli_main(["certify", LINEAR_CFG])
    assert code == 0
    out = capsys.readouterr().out
    assert "asymptotic bound" in out
    assert "checkpoint min eigenvalues" in out


def test_cli_certify_flag_form(capsys):
    assert cli_main(["certify", "--config", LINEAR_CFG]) == 0


def test_cli_missing_config_path():
    assert cli_main(["run"]) == 2


def test_cli_unknown_subcommand():
    assert cli_main(["frobnicate"]) == 2


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("scenario:\n  horizon: -5\n")
    assert cli_main(["run", str(bad)]) == 1


def test_cli_sweep(tmp_path, capsys):
    code = cli_main(["sweep", PAPER_CFG, "--seeds", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "aggregate over seeds 1..2" in out
    assert "is-ekf" in out
