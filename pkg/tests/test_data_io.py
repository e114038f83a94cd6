import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enkibatt.data_io import (
    DataError,
    ResultBundle,
    atomic_write_text,
    build_prior,
    config_hash,
    dumps_results,
    load_config,
    load_dataset,
    pair_measurements,
    parse_drive_cycle,
    read_measurements,
    read_params,
    read_results,
    write_boxplot_table,
    write_comparison_table,
    write_drive_cycle,
    write_measurements,
    write_params,
)
from enkibatt.enki import IterationRecord, boxplot_stats
from enkibatt.models import NDCT, THEVENIN, THEVENIN_TRUE, nominal_params
from enkibatt.simulator import DriveCycle, MeasurementSeries


# --- drive cycles ------------------------------------------------------------


def test_parse_cycle_with_comments_and_ambient_fill():
    text = "# bench run 4\ntime_s,current_A\n0,0.0\n\n1,-1.5\n2,2.0\n"
    c = parse_drive_cycle(io.StringIO(text), t_amb=296.0)
    assert c.current.tolist() == [0.0, -1.5, 2.0]
    assert c.t_amb.tolist() == [296.0] * 3


def test_non_uniform_spacing_names_the_row():
    text = "time_s,current_A,amb_temp_K\n0,0,298\n1,0,298\n2.5,0,298\n"
    with pytest.raises(DataError, match="non-uniform spacing at row 3") as exc:
        parse_drive_cycle(io.StringIO(text))
    assert exc.value.location == "row 3"


def test_non_numeric_cell_names_row_and_column():
    text = "time_s,current_A,amb_temp_K\n0,0,298\n1,abc,298\n"
    with pytest.raises(DataError, match="'abc'") as exc:
        parse_drive_cycle(io.StringIO(text))
    assert exc.value.location == "row 2, column current_A"


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "empty"),
        ("time_s,current_A,amb_temp_K\n", "no data rows"),
        ("t,i\n0,0\n", "header"),
        ("time_s,current_A\n0,0\n", "ambient"),
        ("time_s,current_A,amb_temp_K\n0,9,298\n1,0,298\n", "exceeds"),
        ("time_s,current_A,amb_temp_K\n0,0\n", "columns at row 1"),
    ],
)
def test_bad_cycle_files(text, match):
    with pytest.raises(DataError, match=match):
        parse_drive_cycle(io.StringIO(text))


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError, match="cannot open"):
        parse_drive_cycle(tmp_path / "nope.csv")


finite = st.floats(-4.0, 4.0, allow_nan=False)


@settings(max_examples=25)
@given(st.lists(finite, min_size=1, max_size=100), st.floats(0.01, 10.0))
def test_cycle_roundtrip_is_bit_exact(current, dt):
    n = len(current)
    c = DriveCycle(dt * np.arange(n), current, np.linspace(280.0, 320.0, n))
    buf = io.StringIO()
    write_drive_cycle(c, buf, comment="x")
    back = parse_drive_cycle(io.StringIO(buf.getvalue()))
    for a, b in ((c.times, back.times), (c.current, back.current), (c.t_amb, back.t_amb)):
        assert np.array_equal(a, b)


def test_measurement_roundtrip_random_samples(tmp_path):
    rng = np.random.default_rng(0)
    s = MeasurementSeries(np.arange(100.0), 3.0 + rng.random(100), 290.0 + 20 * rng.random(100))
    path = tmp_path / "m.csv"
    write_measurements(s, path, comment="seed=0")
    assert path.read_text().startswith("# seed=0\n")
    back = read_measurements(path)
    assert np.array_equal(back.values, s.values) and np.array_equal(back.times, s.times)


def test_measurement_header_is_checked():
    with pytest.raises(DataError, match="header"):
        read_measurements(io.StringIO("time_s,V,T\n0,4,300\n"))


def test_pairing_detects_misaligned_series():
    c = DriveCycle(np.arange(3.0), np.zeros(3), 298.0)
    pair_measurements(c, MeasurementSeries(np.arange(3.0), np.ones(3), np.ones(3)))
    with pytest.raises(DataError, match="rows"):
        pair_measurements(c, MeasurementSeries(np.arange(2.0), np.ones(2), np.ones(2)))
    with pytest.raises(DataError, match="row 2"):
        pair_measurements(c, MeasurementSeries([0.0, 1.5, 2.0], np.ones(3), np.ones(3)))


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    atomic_write_text(target, "a")
    atomic_write_text(target, "b")
    assert target.read_text() == "b"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


# --- config ------------------------------------------------------------------


def test_config_defaults():
    cfg = load_config({"model": "thevenin"})
    assert cfg.enki.members == 200 and cfg.enki.max_iter == 20
    assert cfg.noise.voltage_var == 1e-4 and cfg.noise.temp_var == 1e-3
    assert cfg.dt == 1.0 and cfg.substeps == 1
    assert cfg.constants.capacity_ah == 3.3 and cfg.constants.r_s == 0.0
    assert cfg.warnings == ()


def test_config_from_yaml_text():
    text = "model: ndct\nenki:\n  members: 50\n  seed: 4\nnoise:\n  voltage_var: 2.0e-4\n"
    cfg = load_config(io.StringIO(text))
    assert cfg.model == "ndct" and cfg.enki.members == 50 and cfg.noise.voltage_var == 2e-4


def test_config_missing_model():
    with pytest.raises(DataError, match="model") as exc:
        load_config({"enki": {"members": 10}})
    assert exc.value.location == "model"


def test_negative_prior_variance_is_named():
    var = dict(zip(THEVENIN.param_names, [1.0] * 9))
    var["R_o"] = -1e-6
    doc = {"model": "thevenin", "prior": {"mean": "nominal", "variance": var}}
    with pytest.raises(DataError, match="prior.variance.R_o"):
        load_config(doc)


def test_unknown_keys_become_warnings():
    cfg = load_config({"model": "thevenin", "colour": "red", "enki": {"memberz": 3}})
    assert "unknown key 'colour' ignored" in cfg.warnings
    assert "unknown key 'enki.memberz' ignored" in cfg.warnings


@pytest.mark.parametrize(
    "doc, key",
    [
        ({"model": "thevenin", "enki": {"members": 1}}, "enki.members"),
        ({"model": "thevenin", "enki": {"perturbation": "loud"}}, "enki.perturbation"),
        ({"model": "rc7"}, "model"),
        ({"model": "thevenin", "noise": {"temp_var": "hot"}}, "noise.temp_var"),
        ({"model": "thevenin", "data": {"cycle": "absent.csv"}}, "data.cycle"),
    ],
)
def test_invalid_config_values(doc, key, tmp_path):
    with pytest.raises(DataError) as exc:
        load_config(doc, base_dir=tmp_path)
    assert exc.value.location == key


def test_overrides_are_merged():
    cfg = load_config({"model": "thevenin", "enki": {"members": 30}}, overrides={"enki": {"seed": 9}})
    assert cfg.enki.members == 30 and cfg.enki.seed == 9


def test_simulate_segments_inherit_profile_defaults():
    doc = {
        "model": "thevenin",
        "simulate": {"profile": {"amplitude": 2.0, "pulse_current": 2.0}, "segments": [
            {"duration_s": 60, "t_amb": 283.0}, {"duration_s": 120, "amplitude": 3.0}]},
    }
    cfg = load_config(doc)
    assert [s.amplitude for s in cfg.segments] == [2.0, 3.0]
    assert [s.t_amb for s in cfg.segments] == [283.0, 298.15]


def test_prior_from_config_is_seeded():
    a = build_prior({}, "thevenin", 3)
    b = build_prior({}, "thevenin", 3)
    c = build_prior({}, "thevenin", 4)
    assert np.array_equal(a.mean, b.mean) and not np.array_equal(a.mean, c.mean)
    assert np.allclose(np.sqrt(np.diag(a.cov)), 0.2 * nominal_params("thevenin"))
    explicit = build_prior({"mean": "nominal", "variance": [0.0] * 12}, "ndct", 0)
    assert np.array_equal(explicit.mean, nominal_params(NDCT))


def test_hash_ignores_output_and_thread_count():
    base = {"model": "thevenin", "enki": {"seed": 1}}
    h = config_hash(base)
    assert config_hash({**base, "output": {"dir": "elsewhere"}}) == h
    assert config_hash({"model": "thevenin", "enki": {"seed": 1, "n_jobs": 4}}) == h
    assert config_hash({"model": "thevenin", "enki": {"seed": 2}}) != h


def test_hash_follows_data_content_not_path(tmp_path):
    for name in ("a.csv", "b.csv"):
        (tmp_path / name).write_text("time_s,current_A,amb_temp_K\n0,0,298\n")
    ha = load_config({"model": "thevenin", "data": {"cycle": "a.csv"}}, base_dir=tmp_path).config_hash()
    hb = load_config({"model": "thevenin", "data": {"cycle": "b.csv"}}, base_dir=tmp_path).config_hash()
    assert ha == hb
    (tmp_path / "b.csv").write_text("time_s,current_A,amb_temp_K\n0,1,298\n")
    hb = load_config({"model": "thevenin", "data": {"cycle": "b.csv"}}, base_dir=tmp_path).config_hash()
    assert ha != hb


# --- results -----------------------------------------------------------------


def make_bundle(reference=None):
    names = THEVENIN.param_names
    box = {n: boxplot_stats([1.0, 2.0, 3.0]) for n in names}
    rec = IterationRecord(1, 0.4, 0.4, 123.0, 5.0, box, 0, 0)
    return ResultBundle(
        model="thevenin", param_names=names, theta_hat=THEVENIN_TRUE * 1.01, records=[rec],
        complete=False, alphas=[0.4], rmse={"voltage": 0.01, "surf_temp": 0.03},
        config_hash="ab" * 32, seed=5, reference=reference, final_boxplots=box,
    )


def test_results_roundtrip(tmp_path):
    bundle = make_bundle(THEVENIN_TRUE)
    path = tmp_path / "results.json"
    path.write_text(dumps_results(bundle))
    back = read_results(path)
    assert np.array_equal(back.theta_hat, bundle.theta_hat)
    assert back.records == bundle.records and back.seed == 5
    assert dumps_results(back) == dumps_results(bundle)
    doc = json.loads(path.read_text())
    assert doc["relative_errors_pct"]["R_o"] == pytest.approx(1.0)


def test_relative_errors_only_with_reference():
    assert "relative_errors_pct" not in make_bundle().to_dict()


def test_truncated_results_document():
    doc = make_bundle().to_dict()
    del doc["provenance"]
    with pytest.raises(DataError, match="provenance"):
        ResultBundle.from_dict(doc)


def test_params_files(tmp_path):
    p = tmp_path / "p.yaml"
    write_params("thevenin", THEVENIN_TRUE, p)
    assert read_params(p) == ("thevenin", pytest.approx(THEVENIN_TRUE))
    r = tmp_path / "r.json"
    r.write_text(dumps_results(make_bundle()))
    name, theta = read_params(r)
    assert name == "thevenin" and np.array_equal(theta, THEVENIN_TRUE * 1.01)
    (tmp_path / "bad.yaml").write_text("params: nominal\n")
    with pytest.raises(DataError, match="model"):
        read_params(tmp_path / "bad.yaml")


def test_tables_follow_parameter_order():
    bundle = make_bundle()
    buf = io.StringIO()
    write_boxplot_table(bundle.records, buf, names=bundle.param_names)
    rows = buf.getvalue().splitlines()
    assert len(rows) == 1 + 9
    assert [r.split(",")[1] for r in rows[1:]] == list(THEVENIN.param_names)
    buf = io.StringIO()
    write_comparison_table(bundle.param_names, bundle.theta_hat, THEVENIN_TRUE, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 10 and "float64" not in buf.getvalue()


def write_pair(tmp_path, name, current, t_amb, voltage):
    n = len(current)
    cp, mp = tmp_path / f"{name}_cycle.csv", tmp_path / f"{name}_meas.csv"
    write_drive_cycle(DriveCycle(np.arange(float(n)), current, t_amb), cp)
    write_measurements(MeasurementSeries(np.arange(float(n)), np.full(n, voltage), np.full(n, t_amb)), mp)
    return cp, mp


def test_several_datasets_join_on_one_time_axis(tmp_path):
    a = write_pair(tmp_path, "a", [1.0, 0.0, -1.0], 313.0, 4.0)
    b = write_pair(tmp_path, "b", [2.0, 2.0], 283.0, 3.9)
    cycle, meas = load_dataset([a[0], b[0]], [a[1], b[1]])
    assert cycle.times.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert cycle.current.tolist() == [1.0, 0.0, -1.0, 2.0, 2.0]
    assert cycle.t_amb.tolist() == [313.0] * 3 + [283.0] * 2
    assert meas.voltage.tolist() == [4.0] * 3 + [3.9] * 2
    assert np.array_equal(meas.times, cycle.times)


def test_dataset_files_must_pair_up(tmp_path):
    a = write_pair(tmp_path, "a", [1.0, 0.0, -1.0], 313.0, 4.0)
    b = write_pair(tmp_path, "b", [2.0, 2.0], 283.0, 3.9)
    with pytest.raises(DataError, match="one of each"):
        load_dataset([a[0], b[0]], [a[1]])
    with pytest.raises(DataError, match="b_meas.csv"):
        load_dataset([a[0], a[0]], [a[1], b[1]])
    with pytest.raises(DataError, match="one file per"):
        load_config({"model": "thevenin", "data": {"cycle": [str(a[0]), str(b[0])], "measurements": str(a[1])}})


def test_config_accepts_lists_of_data_files(tmp_path):
    a = write_pair(tmp_path, "a", [1.0, 0.0], 313.0, 4.0)
    b = write_pair(tmp_path, "b", [2.0, 2.0], 283.0, 3.9)
    cfg = load_config({"model": "thevenin", "data": {"cycle": ["a_cycle.csv", "b_cycle.csv"],
                                                     "measurements": ["a_meas.csv", "b_meas.csv"]}},
                      base_dir=tmp_path)
    assert cfg.cycle_paths == (a[0], b[0]) and cfg.measurements_paths == (a[1], b[1])
    single = load_config({"model": "thevenin", "data": {"cycle": "a_cycle.csv"}}, base_dir=tmp_path)
    assert single.cycle_paths == (a[0],)
