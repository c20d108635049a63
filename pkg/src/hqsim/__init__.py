"""Discrete-event simulation of allocation strategies on hybrid HPC-quantum clusters."""

from .core import (
    TECHNOLOGIES,
    ClusterConfig,
    EventKind,
    Fixed,
    JobSpec,
    MalformedSpec,
    Phase,
    QpuTechnologyProfile,
    ResourceRequest,
    SimEvent,
    Uniform,
    Unsatisfiable,
    ValidationError,
    effective_task_duration,
    validate_job,
)
from .engine import EventQueue, HandlerFault, TimeInPast, Trace
from .hetjob import HetjobSyntaxError, parse_hetjob, parse_script, render_hetjob
from .metrics import MalformedTrace, MetricsReport, analyze, brute_force_analyze, compare
from .strategies import STRATEGY_NAMES, simulate
from .workload import WorkloadProfile, PhaseTemplate, contended_scenario, generate, paper_scenario

__version__ = "0.1.0"
