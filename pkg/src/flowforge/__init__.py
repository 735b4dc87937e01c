"""flowforge: a workflow management engine for file-and-value task graphs.

Workflows are declared in a small JSON/YAML format with typed process
interfaces, executed with content-addressed caching under three
up-to-dateness policies, on local, batch, or remote backends, with full
run journals and exportable provenance.
"""

__version__ = "0.1.0"

from .model import (
    EnvSpec,
    FlatWorkflow,
    ParseError,
    PortType,
    WorkflowDef,
    WorkflowError,
    WorkflowLoader,
    flatten,
    parse_type,
    parse_workflow,
    validate,
)
from .planner import TaskGraph, build_graph, task_fingerprint, workflow_digest
from .scheduler import Policy, Runner, RunResult

__all__ = [
    "__version__",
    "EnvSpec",
    "FlatWorkflow",
    "ParseError",
    "Policy",
    "PortType",
    "Runner",
    "RunResult",
    "TaskGraph",
    "WorkflowDef",
    "WorkflowError",
    "WorkflowLoader",
    "build_graph",
    "flatten",
    "parse_type",
    "parse_workflow",
    "task_fingerprint",
    "validate",
    "workflow_digest",
]
