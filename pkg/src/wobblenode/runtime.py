"""Process-network runtime: tasks wired by bounded FIFOs under an adaptive manager.

Three operating modes reroute the task chain:

    raw:     get_data -> send                       (8 MHz, 100 Hz, 4 samples/packet)
    balance: get_data -> balance -> threshold -> send   (2 MHz, 100/7 Hz)
    cnn:     get_data -> balance -> cnn -> threshold -> send  (4 MHz, 100/7 Hz)

The adaptive manager swaps topologies on external commands (draining FIFOs),
sets the clock, and gates the CNN while the board is detected as stopped.
run_scenario is a single-threaded discrete-event simulation on an integer
nanosecond clock, so traces are deterministic byte for byte.
"""

from __future__ import annotations

import heapq
import json
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .balance import BalanceConfig, balance_percent, detect_stop
from .signals import (
    SAMPLE_RATE_HZ,
    WINDOW_SAMPLES,
    GeneratorConfig,
    generate_recording,
    load_recording_csv,
    with_seed,
)
from .model import ExerciseClass, ModelSpec, infer_counts

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000

RAW_SAMPLE_PERIOD_NS = NS_PER_S // SAMPLE_RATE_HZ          # 10 ms
PROCESSED_SAMPLE_PERIOD_NS = 7 * NS_PER_S // SAMPLE_RATE_HZ  # 70 ms, 100/7 Hz


class RuntimeConfigError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


class SchedulerError(RuntimeError):
    """FIFO overflow or per-second cycle budget violation."""


class OperatingMode(Enum):
    RAW = "raw"
    BALANCE = "balance"
    CNN = "cnn"

    @classmethod
    def parse(cls, name: str) -> "OperatingMode":
        try:
            return cls(name)
        except ValueError:
            raise RuntimeConfigError(f"unknown operating mode {name!r}") from None


MODE_TASKS = {
    OperatingMode.RAW: ("get_data", "send"),
    OperatingMode.BALANCE: ("get_data", "balance", "threshold", "send"),
    OperatingMode.CNN: ("get_data", "balance", "cnn", "threshold", "send"),
}

MODE_EDGES = {
    OperatingMode.RAW: (("get_data", "send"),),
    OperatingMode.BALANCE: (
        ("get_data", "balance"),
        ("balance", "threshold"),
        ("threshold", "send"),
    ),
    OperatingMode.CNN: (
        ("get_data", "balance"),
        ("balance", "cnn"),
        ("cnn", "threshold"),
        ("threshold", "send"),
    ),
}

MODE_SAMPLE_PERIOD_NS = {
    OperatingMode.RAW: RAW_SAMPLE_PERIOD_NS,
    OperatingMode.BALANCE: PROCESSED_SAMPLE_PERIOD_NS,
    OperatingMode.CNN: PROCESSED_SAMPLE_PERIOD_NS,
}

MODE_SAMPLING_HZ = {
    OperatingMode.RAW: 100.0,
    OperatingMode.BALANCE: 100.0 / 7.0,
    OperatingMode.CNN: 100.0 / 7.0,
}

PACKET_RESULT_BALANCE = 0
PACKET_RESULT_CNN = 1


@dataclass(frozen=True)
class ProcessTopology:
    tasks: frozenset[str]
    edges: tuple[tuple[str, str], ...]
    fifo_capacity: int = 8


def build_topology(mode: OperatingMode, fifo_capacity: int = 8) -> ProcessTopology:
    """The exact task and FIFO-edge set of one operating mode."""
    return ProcessTopology(frozenset(MODE_TASKS[mode]), MODE_EDGES[mode], fifo_capacity)


@dataclass(frozen=True)
class NodeConfig:
    frequency_mhz: int
    sampling_hz: float
    samples_per_packet: int = 4
    result_period_s: float = 1.0


def default_node_config(mode: OperatingMode, frequency_mhz: int | None = None) -> NodeConfig:
    from .power import MODE_FREQUENCY_MHZ

    f = MODE_FREQUENCY_MHZ[mode] if frequency_mhz is None else frequency_mhz
    return NodeConfig(f, MODE_SAMPLING_HZ[mode])


@dataclass(frozen=True)
class ExternalCommand:
    mode: OperatingMode
    frequency_mhz: int | None = None


@dataclass(frozen=True)
class WorkloadSignal:
    stopped: bool


AdamEvent = ExternalCommand | WorkloadSignal


def pack_raw(samples, t0_ms: int) -> bytes:
    """Four (x, y) int16 pairs behind a u32 millisecond timestamp: 20 bytes."""
    samples = list(samples)
    if len(samples) != 4:
        raise RuntimeConfigError(f"raw packet needs exactly 4 samples, got {len(samples)}")
    out = struct.pack("<I", t0_ms & 0xFFFFFFFF)
    for x, y in samples:
        out += struct.pack("<hh", int(x), int(y))
    return out


def pack_result(kind: int, t_ms: int, payload: int) -> bytes:
    """Result packet: u8 kind (0=balance, 1=cnn), u32 timestamp, u8 payload."""
    return struct.pack("<BIB", kind, t_ms & 0xFFFFFFFF, payload & 0xFF)


class Fifo:
    """Bounded FIFO edge with conservation counters."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.queue: deque = deque()
        self.produced = 0
        self.consumed = 0
        self.drained = 0

    def push(self, item, edge: str) -> None:
        if len(self.queue) >= self.capacity:
            raise SchedulerError(f"FIFO {edge} overflow at capacity {self.capacity}")
        self.queue.append(item)
        self.produced += 1

    def pop(self):
        self.consumed += 1
        return self.queue.popleft()

    def drain(self) -> int:
        n = len(self.queue)
        self.drained += n
        self.queue.clear()
        return n

    def stats(self) -> dict:
        return {
            "produced": self.produced,
            "consumed": self.consumed,
            "drained": self.drained,
            "resident": len(self.queue),
        }


class MotionScript:
    """Board motion over time: class-labelled segments or a recorded stream.

    Segment classes are the five exercise classes plus the pseudo-class
    "still" (all-zero samples) for scripting total stops. Time not covered
    by any segment reads as stillness.
    """

    def __init__(self, segments=None, recording=None, generator: GeneratorConfig | None = None):
        self._xy = None
        self._segments = []
        if recording is not None:
            self._xy = recording.xy
        else:
            gen = generator or GeneratorConfig()
            for seg in segments or []:
                t0_ms = int(round(seg["t0_s"] * 1000))
                t1_ms = int(round(seg["t1_s"] * 1000))
                if t1_ms <= t0_ms:
                    raise ScenarioError(f"motion segment has non-positive span: {seg}")
                name = seg["class"]
                if name == "still":
                    xy = None
                else:
                    cls = ExerciseClass.from_name(name)
                    dur_s = max((t1_ms - t0_ms) / 1000.0, 15.0)
                    rec = generate_recording(cls, dur_s, with_seed(gen, int(seg.get("seed", 0))))
                    xy = rec.xy
                self._segments.append((t0_ms, t1_ms, xy))

    def sample(self, t_ms: int) -> tuple[int, int]:
        if self._xy is not None:
            idx = t_ms // 10
            if 0 <= idx < len(self._xy):
                return int(self._xy[idx, 0]), int(self._xy[idx, 1])
            return 0, 0
        for t0, t1, xy in self._segments:
            if t0 <= t_ms < t1:
                if xy is None:
                    return 0, 0
                idx = (t_ms - t0) // 10
                if idx < len(xy):
                    return int(xy[idx, 0]), int(xy[idx, 1])
                return 0, 0
        return 0, 0


@dataclass(frozen=True)
class ScenarioEvent:
    t_s: float
    command: OperatingMode
    frequency_mhz: int | None = None


@dataclass
class Scenario:
    horizon_s: float
    motion: MotionScript
    initial_mode: OperatingMode = OperatingMode.RAW
    initial_frequency_mhz: int | None = None
    events: tuple[ScenarioEvent, ...] = ()

    def modes_entered(self) -> set[OperatingMode]:
        return {self.initial_mode} | {e.command for e in self.events}


_SCENARIO_KEYS = {"horizon_s", "initial_mode", "initial_frequency_mhz", "events", "motion"}
_EVENT_KEYS = {"t_s", "command", "frequency_mhz"}
_SEGMENT_KEYS = {"t0_s", "t1_s", "class", "seed"}


def parse_scenario(obj: dict, base_dir: Path | None = None) -> Scenario:
    """Validate and build a Scenario from its JSON form; unknown keys rejected."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(obj) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    horizon_s = float(obj.get("horizon_s", 60.0))
    if horizon_s <= 0:
        raise ScenarioError(f"horizon must be positive, got {horizon_s}")
    initial_mode = OperatingMode.parse(obj.get("initial_mode", "raw"))

    events = []
    for e in obj.get("events", []):
        unknown = set(e) - _EVENT_KEYS
        if unknown:
            raise ScenarioError(f"unknown event keys: {sorted(unknown)}")
        t_s = float(e["t_s"])
        if not 0 <= t_s <= horizon_s:
            raise ScenarioError(f"event at {t_s} s lies beyond the {horizon_s} s horizon")
        freq = e.get("frequency_mhz")
        events.append(ScenarioEvent(t_s, OperatingMode.parse(e["command"]), freq))
    events.sort(key=lambda e: e.t_s)

    motion_obj = obj.get("motion", [])
    if isinstance(motion_obj, dict):
        unknown = set(motion_obj) - {"recording"}
        if unknown:
            raise ScenarioError(f"unknown motion keys: {sorted(unknown)}")
        path = Path(motion_obj["recording"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        motion = MotionScript(recording=load_recording_csv(path))
    elif isinstance(motion_obj, list):
        for seg in motion_obj:
            unknown = set(seg) - _SEGMENT_KEYS
            if unknown:
                raise ScenarioError(f"unknown motion segment keys: {sorted(unknown)}")
        motion = MotionScript(segments=motion_obj)
    else:
        raise ScenarioError("motion must be a segment list or {'recording': path}")

    return Scenario(
        horizon_s=horizon_s,
        motion=motion,
        initial_mode=initial_mode,
        initial_frequency_mhz=obj.get("initial_frequency_mhz"),
        events=tuple(events),
    )


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    return parse_scenario(json.loads(path.read_text()), base_dir=path.parent)


@dataclass
class RuntimeState:
    """Mutable runtime state the adaptive manager acts on."""

    mode: OperatingMode
    config: NodeConfig
    topology: ProcessTopology
    fifos: dict[tuple[str, str], Fifo] = field(default_factory=dict)
    fifo_capacity: int = 8
    cnn_gated: bool = False
    epoch: int = 0

    def fifo(self, src: str, dst: str) -> Fifo:
        key = (src, dst)
        if key not in self.fifos:
            self.fifos[key] = Fifo(self.fifo_capacity)
        return self.fifos[key]


def make_state(
    mode: OperatingMode, frequency_mhz: int | None = None, fifo_capacity: int = 8
) -> RuntimeState:
    return RuntimeState(
        mode=mode,
        config=default_node_config(mode, frequency_mhz),
        topology=build_topology(mode, fifo_capacity),
        fifo_capacity=fifo_capacity,
    )


def adam_apply(event: AdamEvent, state: RuntimeState, params=None) -> RuntimeState:
    """Apply one manager event; reconfigurations drain FIFOs and reset the clock.

    A command naming the current mode (with no frequency change) is a no-op
    and returns the state unchanged.
    """
    from .power import PowerParams, check_frequency

    params = params or PowerParams()
    if isinstance(event, WorkloadSignal):
        state.cnn_gated = event.stopped if state.mode is OperatingMode.CNN else False
        return state
    if not isinstance(event, ExternalCommand):
        raise RuntimeConfigError(f"unknown manager event {event!r}")
    target = event.mode
    if not isinstance(target, OperatingMode):
        raise RuntimeConfigError(f"unknown operating mode {target!r}")
    new_config = default_node_config(target, event.frequency_mhz)
    if target is state.mode and new_config == state.config:
        return state
    check_frequency(target, new_config.frequency_mhz, params)
    for key, fifo in state.fifos.items():
        fifo.drain()
    state.mode = target
    state.config = new_config
    state.topology = build_topology(target, state.fifo_capacity)
    state.cnn_gated = False
    state.epoch += 1
    return state


@dataclass
class Trace:
    records: list[dict]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records
        )

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def packets(self) -> list[dict]:
        return self.of_kind("packet")

    def tasks(self, name: str | None = None) -> list[dict]:
        recs = self.of_kind("task")
        if name is None:
            return recs
        return [r for r in recs if r["detail"]["task"] == name]

    def summary(self) -> dict:
        last = self.records[-1]
        if last["kind"] != "summary":
            raise RuntimeError("trace has no summary record")
        return last


class _Simulator:
    # event priorities at equal timestamps: commands reconfigure first, then
    # the 1 Hz result/manager tick (its one-second analysis window is
    # half-open, so a sample landing exactly on the tick belongs to the next
    # window), then the sample chain
    PRIO_COMMAND = 0
    PRIO_TICK = 1
    PRIO_SAMPLE = 2

    def __init__(self, scenario, params, model, balance_cfg, fifo_capacity):
        from .power import PowerParams, task_energy_uj

        self.scenario = scenario
        self.params = params or PowerParams()
        self.model = model
        self.balance_cfg = balance_cfg or BalanceConfig()
        self.task_energy_uj = lambda task: task_energy_uj(task, self.params)
        if OperatingMode.CNN in scenario.modes_entered() and model is None:
            raise RuntimeConfigError("scenario enters cnn mode but no model was provided")

        self.state = make_state(scenario.initial_mode, scenario.initial_frequency_mhz, fifo_capacity)
        self.horizon_ns = int(round(scenario.horizon_s * NS_PER_S))
        self.records: list[dict] = []
        self.queue: list = []
        self.seq = 0

        self.second_samples: list[tuple[int, int]] = []
        self.window_buf: deque = deque(maxlen=WINDOW_SAMPLES)
        self.task_uj: dict[str, float] = {}
        self.idle_uj = 0.0
        self.idle_span_start_ns = 0
        self.cycles_by_second: dict[int, int] = {}
        self.freq_spans: list[tuple[int, int]] = []  # (start_ns, frequency_mhz)
        self.inferences = 0
        self.gated = 0

    # -- event plumbing -----------------------------------------------------

    def _push_event(self, t_ns: int, prio: int, kind: str, payload=None):
        heapq.heappush(self.queue, (t_ns, prio, self.seq, kind, payload))
        self.seq += 1

    def _record(self, t_ns: int, kind: str, detail: dict):
        self.records.append({"t_s": t_ns / NS_PER_S, "kind": kind, "detail": detail})

    def _run_task(self, t_ns: int, name: str, cycles: int, extra: dict | None = None):
        f = self.state.config.frequency_mhz
        dur_ns = cycles * 1000 // f
        detail = {"task": name, "end_s": (t_ns + dur_ns) / NS_PER_S, "cycles": cycles}
        if extra:
            detail.update(extra)
        self._record(t_ns, "task", detail)
        self.task_uj[name] = self.task_uj.get(name, 0.0) + self.task_energy_uj(name)
        sec = t_ns // NS_PER_S
        self.cycles_by_second[sec] = self.cycles_by_second.get(sec, 0) + cycles

    # -- reconfiguration ----------------------------------------------------

    def _apply_command(self, t_ns: int, command: ExternalCommand):
        prev_epoch = self.state.epoch
        prev_freq = self.state.config.frequency_mhz
        drained_before = sum(f.drained for f in self.state.fifos.values())
        adam_apply(command, self.state, self.params)
        if self.state.epoch == prev_epoch:
            return  # no-op command
        drained = sum(f.drained for f in self.state.fifos.values()) - drained_before
        self.second_samples.clear()
        self.window_buf.clear()
        self.idle_uj += self.params.idle_mw(prev_freq) * (t_ns - self.idle_span_start_ns) / NS_PER_S * 1e3
        self.idle_span_start_ns = t_ns
        self.freq_spans.append((t_ns, self.state.config.frequency_mhz))
        self._record(
            t_ns,
            "reconfig",
            {
                "mode": self.state.mode.value,
                "frequency_mhz": self.state.config.frequency_mhz,
                "sampling_hz": self.state.config.sampling_hz,
                "drained_total": drained,
            },
        )
        self._push_event(t_ns, self.PRIO_SAMPLE, "sample", self.state.epoch)

    # -- task chain per sample ----------------------------------------------

    def _on_sample(self, t_ns: int, epoch: int):
        if epoch != self.state.epoch:
            return  # stale event from a pre-reconfiguration schedule
        t_ms = t_ns // NS_PER_MS
        x, y = self.scenario.motion.sample(t_ms)
        self._run_task(t_ns, "get_data", self.params.cycles_get)
        if self.state.mode is OperatingMode.RAW:
            fifo = self.state.fifo("get_data", "send")
            fifo.push((t_ms, x, y), "get_data->send")
            if len(fifo.queue) == self.state.config.samples_per_packet:
                batch = [fifo.pop() for _ in range(self.state.config.samples_per_packet)]
                packet = pack_raw([(sx, sy) for (_, sx, sy) in batch], batch[0][0])
                self._run_task(t_ns, "send", self.params.cycles_send)
                self._record(t_ns, "packet", {"type": "raw", "bytes": packet.hex()})
        else:
            fifo = self.state.fifo("get_data", "balance")
            fifo.push((t_ms, x, y), "get_data->balance")
            fifo.pop()  # balance consumes each sample as it arrives
            self._run_task(t_ns, "balance", self.params.cycles_balance)
            self.second_samples.append((x, y))
            self.window_buf.append((x, y))
        next_t = t_ns + MODE_SAMPLE_PERIOD_NS[self.state.mode]
        if next_t <= self.horizon_ns:
            self._push_event(next_t, self.PRIO_SAMPLE, "sample", epoch)

    # -- 1 Hz result / manager tick -------------------------------------------

    def _on_tick(self, t_ns: int):
        mode = self.state.mode
        if mode is OperatingMode.RAW or not self.second_samples:
            self.second_samples.clear()
            return
        xy = np.array(self.second_samples, dtype=np.int16)
        self.second_samples.clear()
        percent = balance_percent(xy, self.balance_cfg)
        stopped = len(xy) >= 2 and detect_stop(xy, self.balance_cfg)
        t_ms = t_ns // NS_PER_MS

        if mode is OperatingMode.BALANCE:
            fifo = self.state.fifo("balance", "threshold")
            fifo.push({"percent": percent, "stopped": stopped}, "balance->threshold")
            result = fifo.pop()
            self._run_task(t_ns, "threshold", self.params.cycles_threshold)
            if result["stopped"]:
                self._record(t_ns, "drop", {"reason": "stopped"})
                return
            out = self.state.fifo("threshold", "send")
            out.push(result, "threshold->send")
            out.pop()
            packet = pack_result(PACKET_RESULT_BALANCE, t_ms, result["percent"])
            self._run_task(t_ns, "send", self.params.cycles_send)
            self._record(
                t_ns,
                "packet",
                {"type": "result", "result_kind": "balance", "payload": result["percent"], "bytes": packet.hex()},
            )
            return

        # cnn mode: the balance stage feeds windows; the manager gates on stops
        adam_apply(WorkloadSignal(stopped), self.state, self.params)
        if len(self.window_buf) < WINDOW_SAMPLES:
            return
        fifo = self.state.fifo("balance", "cnn")
        window = np.array(self.window_buf, dtype=np.int16).T  # (2, 215)
        fifo.push({"window": window, "stopped": stopped}, "balance->cnn")
        item = fifo.pop()
        if self.state.cnn_gated:
            self.gated += 1
            self._record(t_ns, "gate", {"reason": "stopped"})
            return
        cls, _logits = infer_counts(self.model, item["window"])
        self.inferences += 1
        self._run_task(t_ns, "cnn", self.params.cycles_cnn, {"class": cls.name})
        mid = self.state.fifo("cnn", "threshold")
        mid.push({"class": int(cls)}, "cnn->threshold")
        result = mid.pop()
        self._run_task(t_ns, "threshold", self.params.cycles_threshold)
        out = self.state.fifo("threshold", "send")
        out.push(result, "threshold->send")
        out.pop()
        packet = pack_result(PACKET_RESULT_CNN, t_ms, result["class"])
        self._run_task(t_ns, "send", self.params.cycles_send)
        self._record(
            t_ns,
            "packet",
            {"type": "result", "result_kind": "cnn", "payload": result["class"], "bytes": packet.hex()},
        )

    # -- feasibility ----------------------------------------------------------

    def _budget_cycles(self, second: int) -> float:
        start_ns = second * NS_PER_S
        end_ns = start_ns + NS_PER_S
        budget = 0.0
        for i, (t0, f) in enumerate(self.freq_spans):
            # the final span extends indefinitely: work started at the horizon
            # completes after it
            t1 = self.freq_spans[i + 1][0] if i + 1 < len(self.freq_spans) else float("inf")
            lo, hi = max(t0, start_ns), min(t1, end_ns)
            if hi > lo:
                budget += f * 1e6 * (hi - lo) / NS_PER_S
        return budget

    def _check_cycle_budgets(self):
        for second, used in sorted(self.cycles_by_second.items()):
            budget = self._budget_cycles(second)
            if used > budget:
                raise SchedulerError(
                    f"second {second}: {used:,} cycles exceed the budget of {budget:,.0f}"
                )

    # -- main loop ------------------------------------------------------------

    def run(self) -> Trace:
        from .power import check_frequency

        check_frequency(self.state.mode, self.state.config.frequency_mhz, self.params)
        self.freq_spans.append((0, self.state.config.frequency_mhz))
        self._record(
            0,
            "reconfig",
            {
                "mode": self.state.mode.value,
                "frequency_mhz": self.state.config.frequency_mhz,
                "sampling_hz": self.state.config.sampling_hz,
                "drained_total": 0,
            },
        )
        self._push_event(0, self.PRIO_SAMPLE, "sample", self.state.epoch)
        for k in range(1, int(self.scenario.horizon_s) + 1):
            if k * NS_PER_S <= self.horizon_ns:
                self._push_event(k * NS_PER_S, self.PRIO_TICK, "tick")
        for ev in self.scenario.events:
            self._push_event(
                int(round(ev.t_s * NS_PER_S)),
                self.PRIO_COMMAND,
                "command",
                ExternalCommand(ev.command, ev.frequency_mhz),
            )

        while self.queue:
            t_ns, _prio, _seq, kind, payload = heapq.heappop(self.queue)
            if t_ns > self.horizon_ns:
                break
            if kind == "command":
                self._apply_command(t_ns, payload)
            elif kind == "sample":
                self._on_sample(t_ns, payload)
            else:
                self._on_tick(t_ns)

        self.idle_uj += (
            self.params.idle_mw(self.state.config.frequency_mhz)
            * (self.horizon_ns - self.idle_span_start_ns)
            / NS_PER_S
            * 1e3
        )
        self._check_cycle_budgets()
        fifo_stats = {f"{a}->{b}": f.stats() for (a, b), f in sorted(self.state.fifos.items())}
        total_uj = self.idle_uj + sum(self.task_uj.values())
        self._record(
            self.horizon_ns,
            "summary",
            {
                "energy_uj": total_uj,
                "idle_uj": self.idle_uj,
                "task_uj": {k: v for k, v in sorted(self.task_uj.items())},
                "average_mw": total_uj / self.scenario.horizon_s * 1e-3,
                "inferences": self.inferences,
                "gated": self.gated,
                "packets": len([r for r in self.records if r["kind"] == "packet"]),
                "fifo": fifo_stats,
            },
        )
        return Trace(self.records)


def run_scenario(
    scenario: Scenario,
    params=None,
    model: ModelSpec | None = None,
    balance_cfg: BalanceConfig | None = None,
    fifo_capacity: int = 8,
) -> Trace:
    """Simulate a scenario; deterministic for fixed (scenario, seed, config)."""
    return _Simulator(scenario, params, model, balance_cfg, fifo_capacity).run()
