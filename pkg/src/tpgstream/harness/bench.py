"""Benchmark runs, metrics and reports."""

from __future__ import annotations

import csv
import json
import resource
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..runtime import Engine, EngineConfig
from ..scheduler import DecisionThresholds, SchedulingDecision, SchedulerError
from ..workloads import Workload, WorkloadKnobs, make_workload, shuffle_arrival, make_rng
from .oracle import VerifyReport, serial_oracle, verify

CSV_COLUMNS = ["batch", "events", "throughput", "p50", "p95", "p99", "useful", "sync", "lock",
               "construct", "explore", "abort", "decision"]


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    workload: str = "sl"
    knobs: WorkloadKnobs = field(default_factory=WorkloadKnobs)
    threads: int = 1
    strategy: Union[str, SchedulingDecision, dict] = "auto"
    speculate: Optional[bool] = None
    thresholds: Optional[str] = None
    verify: bool = False
    script: Optional[str] = None
    shuffle: float = 0.0
    abort_source: str = "knob"      # knob | ewma
    mutations: tuple = ()
    log_transitions: bool = False

    def validate(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.abort_source not in ("knob", "ewma"):
            raise ConfigError("abort_source must be knob or ewma")
        if self.shuffle < 0:
            raise ConfigError("shuffle window must be >= 0")


@dataclass
class Metrics:
    events: int = 0
    wall: float = 0.0
    throughput: float = 0.0
    p50: float = 0.0
    p95: float = 0.0
    p99: float = 0.0
    breakdown: dict = field(default_factory=dict)
    memory_kb: int = 0
    trace: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    committed: int = 0
    aborted: int = 0
    verified: Optional[bool] = None


def parse_strategy(text: str) -> Union[str, SchedulingDecision, dict]:
    """``auto``, ``S/F/E``-style, or ``nested:<file>`` with ``group=G strategy=X/Y/Z`` lines."""
    if text == "auto":
        return "auto"
    if text.startswith("nested:"):
        path = text[len("nested:"):]
        try:
            with open(path) as fh:
                return parse_nested(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
    try:
        return SchedulingDecision.parse(text)
    except SchedulerError as e:
        raise ConfigError(str(e)) from None


def parse_nested(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            kv = dict(tok.split("=", 1) for tok in line.split())
            out[int(kv["group"])] = SchedulingDecision.parse(kv["strategy"])
        except (KeyError, ValueError, SchedulerError):
            raise ConfigError(f"bad nested strategy line {raw!r}") from None
    if not out:
        raise ConfigError("nested strategy file is empty")
    return out


def _abort_hint(cfg: RunConfig, wl: Workload):
    if cfg.abort_source == "ewma" or wl.name == "dynamic":
        return None
    a = wl.knobs.abort_ratio
    if wl.name == "gs-window":
        a = 0.0
    if wl.name == "tp":
        return lambda g: a if g == 1 else 0.0
    return lambda g: a


def _pct(xs, q):
    return float(np.percentile(xs, q)) if xs else 0.0


def build_workload(cfg: RunConfig) -> Workload:
    return make_workload(cfg.workload, cfg.knobs, cfg.script)


def run_benchmark(cfg: RunConfig, workload: Optional[Workload] = None, oracle=None):
    """Run, time and optionally verify one configuration.

    Returns ``(metrics, report, engine)``; ``report`` is None unless
    ``cfg.verify``.  An engine exception becomes a failed report.
    """
    cfg.validate()
    wl = workload or build_workload(cfg)
    stream = wl.stream()
    if cfg.shuffle:
        stream = shuffle_arrival(stream, cfg.shuffle, make_rng(wl.knobs.seed + 7919))
    th = DecisionThresholds.load(cfg.thresholds) if cfg.thresholds else None
    ecfg = EngineConfig(n_threads=cfg.threads, strategy=cfg.strategy, thresholds=th,
                        speculate=cfg.speculate, log_transitions=cfg.log_transitions,
                        mutations=tuple(cfg.mutations), abort_hint=_abort_hint(cfg, wl))
    eng = Engine(wl.operator, wl.n_keys, wl.initial, ecfg)
    t0 = time.perf_counter()
    error = None
    try:
        eng.run(stream)
    except Exception as e:  # reported through verify
        error = e
        if not cfg.verify:
            raise
    wall = time.perf_counter() - t0
    m = collect_metrics(eng, wall)
    report = None
    if cfg.verify:
        if error is not None:
            report = VerifyReport(False, [f"engine error: {type(error).__name__}: {error}"], 1)
        else:
            if oracle is None:
                oracle = serial_oracle(stream, wl.operator, wl.n_keys, wl.initial)
            report = verify(eng, oracle)
        m.verified = report.ok
    return m, report, eng


def collect_metrics(eng: Engine, wall: float) -> Metrics:
    m = Metrics(wall=wall)
    lat_all = []
    bd = dict.fromkeys(("useful", "sync", "lock", "construct", "explore", "abort"), 0.0)
    for b in eng.batches:
        t = b.timers
        row_bd = {"useful": max(t.useful, 0.0), "sync": t.sync, "lock": t.lock,
                  "construct": b.construct, "explore": t.explore, "abort": t.abort}
        for k, v in row_bd.items():
            bd[k] += v
        lat_ms = [x * 1000.0 for x in b.latencies]
        lat_all.extend(lat_ms)
        m.batches.append({
            "batch": b.batch, "events": b.events,
            "throughput": b.events / b.wall if b.wall > 0 else 0.0,
            "p50": _pct(lat_ms, 50), "p95": _pct(lat_ms, 95), "p99": _pct(lat_ms, 99),
            **row_bd,
            "decision": ";".join(f"{g}:{d.short()}" for g, d in sorted(b.decisions.items())),
        })
        m.trace.extend(b.trace)
        m.events += b.events
        m.committed += b.committed
        m.aborted += b.aborted
    m.breakdown = bd
    m.throughput = m.events / wall if wall > 0 else 0.0
    m.p50, m.p95, m.p99 = _pct(lat_all, 50), _pct(lat_all, 95), _pct(lat_all, 99)
    m.memory_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return m


def emit_report(metrics: Metrics, fmt: str, path, config: Optional[RunConfig] = None):
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in metrics.batches:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v)
                            for k, v in row.items()})
    elif fmt == "json":
        doc = {"summary": {k: v for k, v in asdict(metrics).items() if k != "batches"},
               "batches": metrics.batches}
        if config is not None:
            c = asdict(config)
            c["strategy"] = _strategy_text(config.strategy)
            doc["config"] = c
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, default=str)
    else:
        raise ConfigError(f"unknown report format {fmt!r}")


def _strategy_text(s):
    if isinstance(s, SchedulingDecision):
        return s.short()
    if isinstance(s, dict):
        return {str(g): d.short() for g, d in s.items()}
    return s


def read_report(path) -> list[dict]:
    if str(path).endswith(".json"):
        with open(path) as fh:
            return json.load(fh)["batches"]
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
