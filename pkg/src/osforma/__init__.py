"""Executable model of an operating system as layered resources and processes."""

from .analysis import WaitForGraph, detect_deadlock, replay_snapshot, state_census
from .core import UNDEF, LiftedResource, Registry, Resource, StateVector, apply_transform
from .engine import Engine, RunResult, StopReason, run
from .errors import OsformaError
from .layers import LayerSystem, build_layer_system, validate_service_hierarchy
from .oracle import Bounds, Reachability, brute_force_reachability
from .parser import ModelDocument, ParseError, check_model, parse_model, serialize_model
from .program import GlobalState, Instruction, Opcode, Process, Program, make_process
from .states import Allocator, classify_state
from .trace import EventKind, TraceEvent, dump_trace, load_trace

__all__ = [
    "UNDEF",
    "Allocator",
    "Bounds",
    "Engine",
    "EventKind",
    "GlobalState",
    "Instruction",
    "LayerSystem",
    "LiftedResource",
    "ModelDocument",
    "Opcode",
    "OsformaError",
    "ParseError",
    "Process",
    "Program",
    "Reachability",
    "Registry",
    "Resource",
    "RunResult",
    "StateVector",
    "StopReason",
    "TraceEvent",
    "WaitForGraph",
    "apply_transform",
    "brute_force_reachability",
    "build_layer_system",
    "check_model",
    "classify_state",
    "detect_deadlock",
    "dump_trace",
    "load_trace",
    "make_process",
    "parse_model",
    "replay_snapshot",
    "run",
    "serialize_model",
    "state_census",
    "validate_service_hierarchy",
]
