"""Flow-centric system telemetry: record model, binary container codec,
raw-event aggregation, policy language, and synthetic trace generation.
"""

from .model import (
    ALLOWED_OPS,
    ENTITY_TYPES,
    EVENT_TYPES,
    FLOW_TYPES,
    TYPE_CODES,
    Container,
    ContainerType,
    DanglingOidError,
    Entity,
    Event,
    File,
    FileEvent,
    FileFlow,
    FileType,
    Flow,
    Header,
    NetworkEvent,
    NetworkFlow,
    OpFlags,
    OrderingError,
    Process,
    ProcessEvent,
    ProcessFlow,
    Proto,
    Record,
    SysflowError,
    ValidationError,
    opflags_to_string,
    validate_record,
)
from .codec import (
    CodecError,
    SfWriter,
    dumps,
    loads,
    read_file,
    read_stream,
    write_stream,
)
from .jsonlines import read_json_lines, record_to_json, write_json_lines
from .ingest import IngestError, NetTuple, RawEvent, parse_raw, read_raw_stream
from .aggregate import Aggregator, AggregatorConfig, AggregateError, aggregate, aggregate_file
from .store import ABSENT, EntityStore, FlatRecord, flatten
from .policy import PolicyAst, PolicyError, merge_policies, parse_policy, pretty_print
from .engine import Finding, eval_condition, pmatch, run_policy
from .gen import PROFILES, generate

__version__ = "0.1.0"

__all__ = [
    "ABSENT", "ALLOWED_OPS", "Aggregator", "AggregatorConfig", "AggregateError",
    "CodecError", "Container", "ContainerType", "DanglingOidError",
    "ENTITY_TYPES", "EVENT_TYPES", "Entity", "EntityStore", "Event",
    "FLOW_TYPES", "File", "FileEvent", "FileFlow", "FileType", "Finding",
    "FlatRecord", "Flow", "Header", "IngestError", "NetTuple", "NetworkEvent",
    "NetworkFlow", "OpFlags", "OrderingError", "PROFILES", "PolicyAst",
    "PolicyError", "Process", "ProcessEvent", "ProcessFlow", "Proto",
    "RawEvent", "Record", "SfWriter", "SysflowError", "TYPE_CODES",
    "ValidationError", "aggregate", "aggregate_file", "dumps",
    "eval_condition", "flatten", "generate", "loads", "merge_policies",
    "opflags_to_string", "parse_policy", "parse_raw", "pmatch",
    "pretty_print", "read_file", "read_json_lines", "read_raw_stream",
    "read_stream", "record_to_json", "run_policy", "validate_record",
    "write_json_lines", "write_stream",
]
