"""Workload generators plus the operator that executes their events."""

from __future__ import annotations

from dataclasses import dataclass

from ..runtime import OperatorSpec, with_punctuations
from .eventfile import dumps_events, loads_events, read_events, write_events
from .generators import (OVERDRAFT, PhaseSpec, WorkloadError, WorkloadKnobs, gen_dynamic, gen_gs,
                         gen_sl, gen_tp, knobs_from_dict, make_rng, measured_abort_fraction,
                         parse_dynamic, shuffle_arrival, zipf_key, zipf_keys)
from .operators import GS_MOD, build_registry, make_operator

WORKLOADS = ("sl", "gs", "gs-window", "gs-nondet", "tp")


@dataclass
class Workload:
    name: str
    events: list
    operator: OperatorSpec
    n_keys: int
    initial: int
    knobs: WorkloadKnobs

    def stream(self, interval: int | None = None) -> list:
        return with_punctuations(self.events, interval or self.knobs.interval)


def initial_value(name: str, knobs: WorkloadKnobs) -> int:
    return knobs.balance if name.split(":")[0] in ("sl", "dynamic") else 0


def make_workload(name: str, knobs: WorkloadKnobs, script: str | None = None) -> Workload:
    """Build the named workload; ``dynamic`` needs the script text."""
    if name == "sl":
        events = gen_sl(knobs)
    elif name == "gs":
        events = gen_gs(knobs, "plain")
    elif name == "gs-window":
        events = gen_gs(knobs, "window")
    elif name == "gs-nondet":
        events = gen_gs(knobs, "nondet")
    elif name == "tp":
        events = gen_tp(knobs)
    elif name == "dynamic":
        if script is None:
            raise WorkloadError("dynamic workload needs a script")
        phases, base, kind = parse_dynamic(script)
        knobs = base
        events = gen_dynamic(phases, base, kind)
    else:
        raise WorkloadError(f"unknown workload {name!r}")
    op = make_operator(knobs.key_space, knobs.udf_cost)
    return Workload(name, events, op, knobs.key_space, initial_value(name, knobs), knobs)


__all__ = ["Workload", "WorkloadKnobs", "WorkloadError", "PhaseSpec", "WORKLOADS", "OVERDRAFT",
           "GS_MOD", "make_workload", "make_operator", "build_registry", "gen_sl", "gen_gs",
           "gen_tp", "gen_dynamic", "parse_dynamic", "shuffle_arrival", "zipf_key", "zipf_keys",
           "make_rng", "knobs_from_dict", "measured_abort_fraction", "read_events",
           "write_events", "loads_events", "dumps_events", "initial_value"]
