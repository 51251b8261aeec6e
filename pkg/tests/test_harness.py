"""Scenario parsing, run artifacts, convergence tables, batch isolation."""

import math
import re

import numpy as np
import pytest

from helpers import DEG45, DEG225, FIVE_ROWS, TEN_ROWS, scenario_text
from sweepctrl import (
    ParseError,
    batch,
    build_spec,
    load_trajectory_csv,
    parse_scenario,
    run,
    simulate,
    terminal_cost,
    write_trajectory_csv,
)

FACE_ROWS = [(2, 2, 3), (3, 3, 1)]
CHASE_ROWS = [(3, 3, 3), (2, 2, 1)]

OUT_DIR_PATTERN = re.compile(r"^pair-\d{8}T\d{6}Z-[0-9a-f]{8}$")


def test_parse_minimal_defaults():
    sc = parse_scenario(scenario_text(FACE_ROWS, theta=None, name="scenario"))
    assert sc.name == "scenario"
    assert sc.n == 2
    assert sc.rows == ((2.0, 2.0, 3.0), (3.0, 3.0, 1.0))
    assert sc.horizon == 2.0
    assert sc.radius == 1.0
    assert sc.bounds == (10.0, 10.0)
    assert sc.theta is None
    assert sc.family == "corridor"
    assert sc.m == 9
    assert sc.optimizer == "pattern"
    assert sc.seed == 0
    assert sc.budget == 4000
    assert sc.mode == "constant"
    assert sc.theta_mode is None


def test_parse_all_keys():
    extra = ["family = disks", "m = 7", "optimizer = grid", "seed = 3",
             "theta_mode = frozen", "budget = 123", "mode = piecewise:4"]
    sc = parse_scenario(scenario_text(FACE_ROWS, bound="10, 5", extra=extra))
    assert sc.bounds == (10.0, 5.0)
    assert sc.theta == 45.0
    assert sc.family == "disks"
    assert sc.m == 7
    assert sc.optimizer == "grid"
    assert sc.seed == 3
    assert sc.theta_mode == "frozen"
    assert sc.budget == 123
    assert sc.mode == "piecewise:4"


def test_parse_strips_comments():
    text = ("# convoy pair\n"
            "name = pair  # keep\n"
            "T = 2\nR = 1\nbound = 10\n"
            "robots:\n"
            "2 2 3  # front\n"
            "3 3 1\n")
    sc = parse_scenario(text)
    assert sc.name == "pair"
    assert sc.rows == ((2.0, 2.0, 3.0), (3.0, 3.0, 1.0))


def test_parse_per_row_heading():
    text = scenario_text([(2, 2, 3, 45.0), (3, 3, 1)], theta=None)
    sc = parse_scenario(text)
    assert sc.rows[0] == (2.0, 2.0, 3.0, 45.0)
    assert len(sc.rows[1]) == 3


@pytest.mark.parametrize("mutate, fragment", [
    (["speed = 3"], "unknown key"),
    (["m = 7", "m = 8"], "duplicate key"),
    (["m = 0"], "m must lie in 1..16"),
    (["m = 17"], "m must lie in 1..16"),
    (["mode = piecewise:0"], "mode is"),
    (["mode = sometimes"], "mode is"),
    (["family = tubes"], "family must be one of"),
    (["optimizer = sgd"], "optimizer must be one of"),
    (["budget = 0"], "budget must be positive"),
])
def test_parse_rejects_bad_keys(mutate, fragment):
    text = scenario_text(FACE_ROWS, extra=mutate)
    with pytest.raises(ParseError) as info:
        parse_scenario(text)
    assert fragment in str(info.value)
    assert str(info.value).startswith("line ")


def test_parse_error_carries_line_number():
    text = "name = pair\nT = 2\nR = 1\nbound = 10\nvelocity = 3\n"
    with pytest.raises(ParseError) as info:
        parse_scenario(text)
    assert info.value.line == 5
    assert str(info.value).startswith("line 5:")


def test_parse_rejects_bad_values():
    with pytest.raises(ParseError):
        parse_scenario(scenario_text(FACE_ROWS, T="soon"))
    with pytest.raises(ParseError):
        parse_scenario(scenario_text(FACE_ROWS, T=0.0))
    with pytest.raises(ParseError):
        parse_scenario(scenario_text(FACE_ROWS, R=-1.0))
    with pytest.raises(ParseError):
        parse_scenario(scenario_text([(2, 2, 0), (3, 3, 1)]))
    with pytest.raises(ParseError):
        parse_scenario(scenario_text(FACE_ROWS, bound="1, 2, 3"))
    with pytest.raises(ParseError):
        parse_scenario(scenario_text(FACE_ROWS, bound="-1"))


def test_parse_requires_two_robots():
    with pytest.raises(ParseError) as info:
        parse_scenario(scenario_text([(2, 2, 3)]))
    assert "two robot rows" in str(info.value)


def test_parse_requires_core_keys():
    with pytest.raises(ParseError) as info:
        parse_scenario("name = x\nR = 1\nbound = 10\nrobots:\n1 1 1\n2 2 1\n")
    assert "missing required key 't'" in str(info.value)
    with pytest.raises(ParseError):
        parse_scenario("name = x\nT = 2\nbound = 10\nrobots:\n1 1 1\n2 2 1\n")
    with pytest.raises(ParseError):
        parse_scenario("name = x\nT = 2\nR = 1\nrobots:\n1 1 1\n2 2 1\n")


def test_parse_rejects_malformed_rows():
    with pytest.raises(ParseError):
        parse_scenario(scenario_text([(2, 2), (3, 3, 1)]))
    with pytest.raises(ParseError):
        parse_scenario("T = 2\nR = 1\nbound = 10\njust words\nrobots:\n1 1 1\n2 2 1\n")


def test_build_spec_heading_precedence():
    sc = parse_scenario(scenario_text([(2, 2, 3, 225.0), (3, 3, 1)], theta=45.0))
    spec = build_spec(sc, "frozen")
    assert spec.fleet.robots[0].theta0 == pytest.approx(DEG225)
    assert spec.fleet.robots[1].theta0 == pytest.approx(DEG45)

    bare = parse_scenario(scenario_text([(2, 2, 3), (-3, -3, 1)], theta=None,
                                        R=0.5))
    spec = build_spec(bare, "frozen")
    assert spec.fleet.robots[0].theta0 == pytest.approx(DEG45)
    assert spec.fleet.robots[1].theta0 == pytest.approx(DEG225)


def test_parse_five_robot_convoy():
    text = scenario_text(FIVE_ROWS, T=8.0, bound="5", name="five")
    sc = parse_scenario(text)
    assert sc.n == 5
    spec = build_spec(sc, "frozen")
    assert spec.fleet.n == 5
    np.testing.assert_allclose(spec.fleet.thetas0, np.full(5, DEG45))
    np.testing.assert_array_equal(spec.fleet.speeds, [2, 2, 1, 3, 3])


def test_parse_ten_robot_convoy():
    text = scenario_text(TEN_ROWS, T=8.0, bound="5", theta=225.0, name="ten")
    sc = parse_scenario(text)
    assert sc.n == 10
    spec = build_spec(sc, "frozen")
    np.testing.assert_allclose(spec.fleet.thetas0, np.full(10, DEG225))


def test_run_simulate_artifacts(tmp_path):
    text = scenario_text(CHASE_ROWS, extra=["theta_mode = frozen"])
    sc = parse_scenario(text)
    record = run(sc, "simulate", tmp_path, m=6, u=[1.0, 1.0])
    assert record.status == "ok"
    assert record.error is None
    out = tmp_path / record.out_dir.split("/")[-1]
    assert OUT_DIR_PATTERN.match(out.name)
    assert (out / "scenario.txt").read_text() == text

    csv = (out / "trajectory.csv").read_text().splitlines()
    assert csv[0] == "t, x_1_1, x_1_2, x_2_1, x_2_2, u_1, u_2, eta_1"
    assert len(csv) == 1 + 65

    spec = build_spec(sc, "frozen")
    traj = simulate(spec, [1.0, 1.0], 6)
    assert record.cost == pytest.approx(terminal_cost(traj.states[-1]))

    loaded = load_trajectory_csv(out / "trajectory.csv")
    np.testing.assert_allclose(loaded["states"], traj.states, atol=1e-15)
    np.testing.assert_allclose(loaded["times"], traj.grid.times(), atol=1e-15)
    np.testing.assert_array_equal(loaded["controls"], np.ones((65, 2)))
    assert loaded["etas"].shape == (65, 1)

    summary = (out / "summary.txt").read_text()
    assert "status = ok" in summary
    assert "command = simulate" in summary
    assert "cost = " in summary
    assert "max_corridor_residual = " in summary


def test_run_simulate_defaults(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS))
    record = run(sc, "simulate", tmp_path, m=5)
    assert record.status == "ok"
    # Without an explicit vector the run drives at the box bounds, and
    # plain simulation tracks the target.
    assert record.config["u"] is None
    assert record.config["theta_mode"] == "tracking"
    loaded = load_trajectory_csv(record.artifacts["trajectory"])
    np.testing.assert_array_equal(loaded["controls"], np.full((33, 2), 10.0))


def test_run_is_deterministic(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS, extra=["theta_mode = frozen"]))
    first = run(sc, "simulate", tmp_path / "a", m=6, u=[1.0, 0.5])
    second = run(sc, "simulate", tmp_path / "b", m=6, u=[1.0, 0.5])
    assert first.cost == second.cost
    a = (tmp_path / "a" / first.out_dir.split("/")[-1] / "trajectory.csv").read_bytes()
    b = (tmp_path / "b" / second.out_dir.split("/")[-1] / "trajectory.csv").read_bytes()
    assert a == b


def test_run_rejects_wrong_u_length(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS))
    record = run(sc, "simulate", tmp_path, m=5, u=[1.0, 1.0, 1.0])
    assert record.status == "failed"
    assert "ValueError" in record.error
    out = tmp_path / record.out_dir.split("/")[-1]
    assert (out / "error.txt").read_text().startswith("ValueError")
    assert "status = failed" in (out / "summary.txt").read_text()


def test_run_optimize_artifacts(tmp_path):
    text = scenario_text(FACE_ROWS, extra=["budget = 60", "m = 5"])
    record = run(parse_scenario(text), "optimize", tmp_path)
    assert record.status == "ok"
    assert record.config["theta_mode"] == "frozen"
    assert record.cost is not None
    assert record.cost_verify is not None
    assert record.cost_verify == pytest.approx(record.cost, abs=0.05)
    out = tmp_path / record.out_dir.split("/")[-1]
    iters = (out / "iterations.csv").read_text().splitlines()
    assert iters[0] == "eval, cost"
    costs = [float(line.split(",")[1]) for line in iters[1:]]
    assert costs == sorted(costs, reverse=True)
    conditions = (out / "conditions.txt").read_text()
    assert "ok = " in conditions
    assert "c6_maximization = " in conditions
    assert record.report_ok is not None
    assert "conditions_ok = " in (out / "summary.txt").read_text()


def test_run_certify_requires_control(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS))
    record = run(sc, "certify", tmp_path, m=5)
    assert record.status == "failed"
    assert "explicit control" in record.error


def test_run_certify_with_control(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS))
    record = run(sc, "certify", tmp_path, m=6, u=[1.0, 1.0])
    assert record.status == "ok"
    assert record.config["theta_mode"] == "frozen"
    assert len(record.report) == 9
    out = tmp_path / record.out_dir.split("/")[-1]
    assert (out / "conditions.txt").exists()


def test_run_converge_table(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS, extra=["theta_mode = frozen"]))
    record = run(sc, "converge", tmp_path, u=[1.0, 1.0], m_range=(6, 9))
    assert record.status == "ok"
    out = tmp_path / record.out_dir.split("/")[-1]
    table = (out / "convergence.csv").read_text().splitlines()
    assert table[0] == "m_coarse, h_coarse, m_fine, sup_gap"
    assert len(table) == 4
    first = table[1].split(",")
    assert int(first[0]) == 6
    assert float(first[1]) == pytest.approx(2.0 / 64)
    summary = (out / "summary.txt").read_text()
    assert "monotone = yes" in summary
    assert "sup_gap_last = " in summary


def test_run_captures_infeasible_start(tmp_path):
    sc = parse_scenario(scenario_text([(2, 2, 1), (2.5, 2.5, 1)]))
    record = run(sc, "simulate", tmp_path, m=5)
    assert record.status == "failed"
    assert "InvalidFleetError" in record.error


def test_run_unknown_command(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS))
    with pytest.raises(ValueError):
        run(sc, "replay", tmp_path)


def test_batch_isolates_failures(tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    (scenarios / "a_good.txt").write_text(
        scenario_text(CHASE_ROWS, name="alpha", extra=["budget = 40", "m = 5"]))
    (scenarios / "b_broken.txt").write_text("T = 2\nvelocity = 3\n")
    (scenarios / "c_good.txt").write_text(
        scenario_text(FACE_ROWS, name="gamma", extra=["budget = 40", "m = 5"]))
    out = tmp_path / "out"
    records = batch(scenarios, out, jobs=1)
    assert [r.status for r in records] == ["ok", "failed", "ok"]
    assert records[1].name == "b_broken"
    assert "ParseError" in records[1].error

    index = (out / "index.csv").read_text().splitlines()
    assert index[0] == "file, name, command, status, cost, wall_s, out_dir, error"
    assert len(index) == 4
    assert index[1].startswith("a_good.txt, alpha, optimize, ok, ")
    broken = index[2].split(", ")
    assert broken[3] == "failed"
    # error text is scrubbed so the table stays one row per run
    assert "\n" not in index[2]
    assert index[2].count(",") == 7


def test_batch_parallel_and_empty(tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    for tag in ("one", "two", "three"):
        (scenarios / f"{tag}.txt").write_text(
            scenario_text(CHASE_ROWS, name=tag, extra=["m = 4"]))
    out = tmp_path / "out"
    records = batch(scenarios, out, jobs=2, command="simulate")
    assert [r.status for r in records] == ["ok"] * 3
    assert [r.name for r in records] == ["one", "three", "two"]  # file order

    empty = tmp_path / "none"
    empty.mkdir()
    records = batch(empty, tmp_path / "out2", jobs=1)
    assert records == []
    assert (tmp_path / "out2" / "index.csv").read_text().splitlines() == [
        "file, name, command, status, cost, wall_s, out_dir, error"
    ]


def test_trajectory_csv_roundtrip(tmp_path):
    sc = parse_scenario(scenario_text(CHASE_ROWS, extra=["theta_mode = frozen"]))
    spec = build_spec(sc, "frozen")
    traj = simulate(spec, [0.7, 0.3], 4)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    loaded = load_trajectory_csv(path)
    np.testing.assert_array_equal(loaded["states"], traj.states)
    np.testing.assert_array_equal(loaded["controls"][:-1], traj.controls)
    np.testing.assert_array_equal(loaded["controls"][-1], traj.controls[-1])
    np.testing.assert_array_equal(loaded["etas"][:-1], traj.etas)
