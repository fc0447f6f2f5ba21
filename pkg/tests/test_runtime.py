import json

import pytest

from wobblenode.model import synthetic_reference_model
from wobblenode.power import FeasibilityError, PowerParams
from wobblenode.runtime import (
    ExternalCommand,
    OperatingMode,
    RuntimeConfigError,
    ScenarioError,
    WorkloadSignal,
    adam_apply,
    build_topology,
    load_scenario,
    make_state,
    pack_raw,
    pack_result,
    parse_scenario,
    run_scenario,
)

MODEL = synthetic_reference_model(3)


def scen(obj):
    return parse_scenario(obj)


def motion(cls="R", t1=60, seed=1):
    return [{"t0_s": 0, "t1_s": t1, "class": cls, "seed": seed}]


class TestTopology:
    def test_raw_shape(self):
        topo = build_topology(OperatingMode.RAW)
        assert topo.tasks == {"get_data", "send"}
        assert topo.edges == (("get_data", "send"),)

    def test_balance_shape(self):
        topo = build_topology(OperatingMode.BALANCE)
        assert len(topo.tasks) == 4
        assert "cnn" not in topo.tasks
        assert ("balance", "threshold") in topo.edges

    def test_cnn_shape(self):
        topo = build_topology(OperatingMode.CNN)
        assert len(topo.tasks) == 5
        assert ("balance", "cnn") in topo.edges
        assert ("cnn", "threshold") in topo.edges

    def test_edges_connect_active_tasks_and_are_acyclic(self):
        for mode in OperatingMode:
            topo = build_topology(mode)
            order = {t: i for i, t in enumerate(("get_data", "balance", "cnn", "threshold", "send"))}
            for a, b in topo.edges:
                assert a in topo.tasks and b in topo.tasks
                assert order[a] < order[b]


class TestAdam:
    def test_raw_to_balance_command(self):
        state = make_state(OperatingMode.RAW)
        adam_apply(ExternalCommand(OperatingMode.BALANCE), state)
        assert state.config.frequency_mhz == 2
        assert {"balance", "threshold"} <= state.topology.tasks
        assert state.config.sampling_hz == pytest.approx(100 / 7)

    def test_command_to_current_mode_is_noop(self):
        state = make_state(OperatingMode.BALANCE)
        before = (state.mode, state.config, state.epoch)
        out = adam_apply(ExternalCommand(OperatingMode.BALANCE), state)
        assert out is state
        assert (state.mode, state.config, state.epoch) == before

    def test_unknown_mode_rejected(self):
        state = make_state(OperatingMode.RAW)
        with pytest.raises(RuntimeConfigError):
            adam_apply(ExternalCommand("sideways"), state)

    def test_workload_signal_gates_only_in_cnn_mode(self):
        state = make_state(OperatingMode.CNN)
        adam_apply(WorkloadSignal(stopped=True), state)
        assert state.cnn_gated
        adam_apply(WorkloadSignal(stopped=False), state)
        assert not state.cnn_gated
        state = make_state(OperatingMode.BALANCE)
        adam_apply(WorkloadSignal(stopped=True), state)
        assert not state.cnn_gated

    def test_reconfiguration_drains_fifos(self):
        state = make_state(OperatingMode.RAW)
        fifo = state.fifo("get_data", "send")
        fifo.push((0, 1, 2), "get_data->send")
        fifo.push((10, 3, 4), "get_data->send")
        adam_apply(ExternalCommand(OperatingMode.BALANCE), state)
        assert fifo.drained == 2 and len(fifo.queue) == 0

    def test_infeasible_frequency_rejected(self):
        state = make_state(OperatingMode.RAW)
        with pytest.raises(FeasibilityError):
            adam_apply(ExternalCommand(OperatingMode.CNN, frequency_mhz=2), state)


class TestPackets:
    def test_raw_packet_all_zero(self):
        assert pack_raw([(0, 0)] * 4, 0) == bytes(20)

    def test_raw_packet_little_endian_layout(self):
        pkt = pack_raw([(1, 2)] * 4, 1)
        assert pkt == bytes([1, 0, 0, 0] + [1, 0, 2, 0] * 4)
        assert len(pkt) == 20

    def test_raw_packet_negative_values(self):
        pkt = pack_raw([(-1, -2)] * 4, 0)
        assert pkt[4:8] == b"\xff\xff\xfe\xff"

    def test_wrong_sample_count_rejected(self):
        with pytest.raises(RuntimeConfigError):
            pack_raw([(0, 0)] * 3, 0)

    def test_result_packet(self):
        pkt = pack_result(1, 0x01020304, 3)
        assert pkt == bytes([1, 0x04, 0x03, 0x02, 0x01, 3])


class TestScenarioParsing:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ScenarioError):
            scen({"horizon_s": 10, "bogus": 1})
        with pytest.raises(ScenarioError):
            scen({"horizon_s": 10, "events": [{"t_s": 1, "command": "raw", "x": 2}]})

    def test_event_beyond_horizon_rejected(self):
        with pytest.raises(ScenarioError):
            scen({"horizon_s": 10, "events": [{"t_s": 11, "command": "raw"}]})

    def test_unknown_mode_rejected(self):
        with pytest.raises(RuntimeConfigError):
            scen({"horizon_s": 10, "events": [{"t_s": 1, "command": "turbo"}]})

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"horizon_s": 20, "initial_mode": "balance", "motion": motion(t1=20)}))
        s = load_scenario(path)
        assert s.horizon_s == 20
        assert s.initial_mode is OperatingMode.BALANCE

    def test_motion_from_recording_file(self, tmp_path):
        from wobblenode.model import ExerciseClass
        from wobblenode.signals import GeneratorConfig, generate_recording, write_recording_csv

        rec = generate_recording(ExerciseClass.R, 30, GeneratorConfig(seed=4))
        write_recording_csv(tmp_path / "rec.csv", rec)
        path = tmp_path / "s.json"
        path.write_text(
            json.dumps({"horizon_s": 30, "initial_mode": "balance",
                        "motion": {"recording": "rec.csv"}})
        )
        trace = run_scenario(load_scenario(path))
        assert trace.summary()["detail"]["packets"] == 30
        # raw packets in raw mode carry the recording's leading samples
        path.write_text(json.dumps({"horizon_s": 1, "initial_mode": "raw",
                                    "motion": {"recording": "rec.csv"}}))
        trace = run_scenario(load_scenario(path))
        first = bytes.fromhex(trace.packets()[0]["detail"]["bytes"])
        import struct

        t0, x0, y0 = struct.unpack_from("<Ihh", first, 0)
        assert t0 == 0
        assert (x0, y0) == tuple(rec.xy[0].tolist())


class TestSimulation:
    def test_raw_60s_emits_1500_packets(self):
        trace = run_scenario(scen({"horizon_s": 60, "initial_mode": "raw", "motion": motion()}))
        assert trace.summary()["detail"]["packets"] == 1500
        assert all(p["detail"]["type"] == "raw" for p in trace.packets())
        assert all(len(bytes.fromhex(p["detail"]["bytes"])) == 20 for p in trace.packets())

    def test_balance_60s_emits_60_results(self):
        trace = run_scenario(scen({"horizon_s": 60, "initial_mode": "balance", "motion": motion()}))
        assert trace.summary()["detail"]["packets"] == 60
        assert all(p["detail"]["type"] == "result" for p in trace.packets())

    def test_cnn_60s_at_most_46_results(self):
        trace = run_scenario(
            scen({"horizon_s": 60, "initial_mode": "cnn", "motion": motion()}), model=MODEL
        )
        detail = trace.summary()["detail"]
        assert detail["inferences"] == 46
        assert detail["packets"] == 46

    def test_cnn_mode_requires_model(self):
        with pytest.raises(RuntimeConfigError):
            run_scenario(scen({"horizon_s": 20, "initial_mode": "cnn", "motion": motion(t1=20)}))

    def test_stop_gating_suppresses_inference(self):
        trace = run_scenario(
            scen(
                {
                    "horizon_s": 60,
                    "initial_mode": "cnn",
                    "motion": [
                        {"t0_s": 0, "t1_s": 25, "class": "R", "seed": 1},
                        {"t0_s": 25, "t1_s": 35, "class": "still"},
                        {"t0_s": 35, "t1_s": 60, "class": "R", "seed": 2},
                    ],
                }
            ),
            model=MODEL,
        )
        cnn_times = [r["t_s"] for r in trace.tasks("cnn")]
        assert not [t for t in cnn_times if 25 < t <= 35]
        assert trace.summary()["detail"]["gated"] == 10

    def test_fifo_conservation(self):
        trace = run_scenario(
            scen(
                {
                    "horizon_s": 45,
                    "initial_mode": "raw",
                    "events": [
                        {"t_s": 10, "command": "balance"},
                        {"t_s": 20, "command": "cnn"},
                        {"t_s": 40, "command": "raw"},
                    ],
                    "motion": motion(t1=45),
                }
            ),
            model=MODEL,
        )
        for edge, st in trace.summary()["detail"]["fifo"].items():
            assert st["produced"] == st["consumed"] + st["drained"] + st["resident"], edge

    def test_determinism_byte_identical(self):
        s = {
            "horizon_s": 40,
            "initial_mode": "balance",
            "events": [{"t_s": 17.5, "command": "cnn"}],
            "motion": [
                {"t0_s": 0, "t1_s": 25, "class": "FB", "seed": 3},
                {"t0_s": 25, "t1_s": 40, "class": "G", "seed": 4},
            ],
        }
        a = run_scenario(scen(s), model=MODEL).to_jsonl()
        b = run_scenario(scen(s), model=MODEL).to_jsonl()
        assert a == b

    def test_mode_packet_exclusivity(self):
        trace = run_scenario(
            scen(
                {
                    "horizon_s": 30,
                    "initial_mode": "raw",
                    "events": [{"t_s": 15, "command": "balance"}],
                    "motion": motion(t1=30),
                }
            )
        )
        mode_at = []
        current = None
        for rec in trace.records:
            if rec["kind"] == "reconfig":
                current = rec["detail"]["mode"]
            elif rec["kind"] == "packet":
                mode_at.append((current, rec["detail"]["type"]))
        assert all(t == "raw" for m, t in mode_at if m == "raw")
        assert all(t == "result" for m, t in mode_at if m != "raw")

    def test_empty_scenario_idles_in_raw(self):
        trace = run_scenario(scen({"horizon_s": 60}))
        detail = trace.summary()["detail"]
        assert detail["packets"] == 1500  # all-zero samples still ship
        assert trace.records[0]["detail"]["mode"] == "raw"
        assert detail["average_mw"] == pytest.approx(6.941, abs=0.05)

    def test_cnn_at_2mhz_infeasible(self):
        s = scen(
            {
                "horizon_s": 20,
                "initial_mode": "cnn",
                "initial_frequency_mhz": 2,
                "motion": motion(t1=20),
            }
        )
        with pytest.raises(FeasibilityError):
            run_scenario(s, model=MODEL)

    def test_command_at_same_mode_noop_in_trace(self):
        s = scen(
            {
                "horizon_s": 20,
                "initial_mode": "balance",
                "events": [{"t_s": 10, "command": "balance"}],
                "motion": motion(t1=20),
            }
        )
        trace = run_scenario(s)
        assert len(trace.of_kind("reconfig")) == 1

    def test_cycles_within_budget_every_second(self):
        trace = run_scenario(
            scen({"horizon_s": 30, "initial_mode": "cnn", "motion": motion(t1=30)}),
            model=MODEL,
        )
        by_second = {}
        for rec in trace.tasks():
            by_second.setdefault(int(rec["t_s"]), 0)
            by_second[int(rec["t_s"])] += rec["detail"]["cycles"]
        assert max(by_second.values()) <= 4_000_000

    def test_balance_payloads_match_percent_range(self):
        trace = run_scenario(scen({"horizon_s": 30, "initial_mode": "balance", "motion": motion(t1=30)}))
        for p in trace.packets():
            assert 0 <= p["detail"]["payload"] <= 100

    def test_still_motion_in_balance_mode_drops_results(self):
        trace = run_scenario(
            scen({"horizon_s": 30, "initial_mode": "balance",
                  "motion": [{"t0_s": 0, "t1_s": 30, "class": "still"}]})
        )
        assert trace.summary()["detail"]["packets"] == 0
        assert len(trace.of_kind("drop")) == 30
