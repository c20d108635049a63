"""Parser for the SLURM-style heterogeneous job scripts used as simulator input.

Only five directives are understood::

    #SBATCH --partition classical|quantum
    #SBATCH --nodes N
    #SBATCH --time=HH:MM:SS
    #SBATCH --gres=qpu:N
    #SBATCH hetjob            (starts the next component)

Options may be written ``--key value`` or ``--key=value``. Any other
``#SBATCH`` line is an error, and so is repeating a key inside one
component. Lines that are not directives are kept verbatim as the command
payload and otherwise ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import CLASSICAL, PARTITIONS, QUANTUM, ResourceRequest

_TIME = re.compile(r"(\d+):([0-5]\d):([0-5]\d)")
_GRES = re.compile(r"qpu:(\d+)")
_OPTION = re.compile(r"--([A-Za-z][\w-]*)(?:=(\S*)|\s+(\S+))?\s*$")
_KEYS = ("partition", "nodes", "time", "gres")


@dataclass(frozen=True)
class ParseError:
    kind: str
    line: int
    message: str = ""

    def format(self, filename: str = "<script>") -> str:
        text = f"{filename}:{self.line}: {self.kind}"
        return f"{text}: {self.message}" if self.message else text


class HetjobSyntaxError(ValueError):
    """Raised with every problem found in a script, in line order."""

    def __init__(self, errors: list[ParseError]) -> None:
        self.errors = errors
        super().__init__("; ".join(e.format() for e in errors))

    @property
    def kind(self) -> str:
        return self.errors[0].kind

    @property
    def line(self) -> int:
        return self.errors[0].line


@dataclass(frozen=True)
class ScriptDirective:
    key: str
    value: str | None
    line: int


@dataclass(frozen=True)
class ParsedScript:
    requests: tuple[ResourceRequest, ...]
    commands: str = ""  # non-directive lines, verbatim; no semantics


@dataclass
class _Component:
    start_line: int
    directives: dict[str, ScriptDirective] = field(default_factory=dict)


def parse_time(text: str) -> int:
    """``HH:MM:SS`` to seconds; raises ValueError on anything else."""
    m = _TIME.fullmatch(text)
    if not m:
        raise ValueError(f"{text!r} is not HH:MM:SS")
    hours, minutes, seconds = (int(g) for g in m.groups())
    return hours * 3600 + minutes * 60 + seconds


def format_time(seconds: float) -> str:
    total = int(seconds)
    if total != seconds or total < 0:
        raise ValueError(f"walltime {seconds!r} is not a whole number of seconds")
    return f"{total // 3600:02d}:{total % 3600 // 60:02d}:{total % 60:02d}"


def _directive(line_no: int, body: str, errors: list[ParseError]) -> ScriptDirective | None:
    body = body.strip()
    if body == "hetjob":
        return ScriptDirective("hetjob", None, line_no)
    m = _OPTION.fullmatch(body)
    if not m or m.group(1) not in _KEYS:
        errors.append(ParseError("UnknownDirective", line_no, body or "#SBATCH"))
        return None
    key = m.group(1)
    value = m.group(2) if m.group(2) is not None else m.group(3)
    if not value:
        kind = {"time": "MalformedTime", "gres": "MalformedGres", "nodes": "MalformedNodes"}.get(key, "MalformedPartition")
        errors.append(ParseError(kind, line_no, f"--{key} needs a value"))
        return ScriptDirective(key, None, line_no)
    if key == "time" and not _TIME.fullmatch(value):
        errors.append(ParseError("MalformedTime", line_no, f"{value!r} is not HH:MM:SS"))
        return ScriptDirective(key, None, line_no)
    if key == "gres":
        g = _GRES.fullmatch(value)
        if not g or int(g.group(1)) < 1:
            errors.append(ParseError("MalformedGres", line_no, f"{value!r} is not qpu:N with N >= 1"))
            return ScriptDirective(key, None, line_no)
    if key == "nodes" and not value.isdigit():
        errors.append(ParseError("MalformedNodes", line_no, f"{value!r} is not a node count"))
        return ScriptDirective(key, None, line_no)
    if key == "partition" and value not in PARTITIONS:
        errors.append(ParseError("MalformedPartition", line_no, f"{value!r} is not one of {', '.join(PARTITIONS)}"))
        return ScriptDirective(key, None, line_no)
    return ScriptDirective(key, value, line_no)


def _build(index: int, comp: _Component, errors: list[ParseError]) -> ResourceRequest | None:
    d = comp.directives
    if any(v.value is None for v in d.values()):
        return None  # already reported
    if "partition" not in d:
        errors.append(ParseError("MissingPartition", comp.start_line, f"component {index}"))
        return None
    if "time" not in d:
        errors.append(ParseError("MissingWalltime", comp.start_line, f"component {index}"))
        return None
    partition = d["partition"].value
    nodes = int(d["nodes"].value) if "nodes" in d else 0
    gres = int(_GRES.fullmatch(d["gres"].value).group(1)) if "gres" in d else 0
    if partition == CLASSICAL and gres:
        errors.append(ParseError("InvalidComponent", d["gres"].line, "classical component cannot request QPUs"))
        return None
    if partition == QUANTUM and nodes:
        errors.append(ParseError("InvalidComponent", d["nodes"].line, "quantum component cannot request nodes"))
        return None
    walltime = parse_time(d["time"].value)
    if walltime <= 0:
        errors.append(ParseError("MalformedTime", d["time"].line, "walltime must be > 0"))
        return None
    return ResourceRequest(index, partition, nodes=nodes, qpu_gres=gres, walltime=float(walltime))


def parse_script(script: str) -> ParsedScript:
    errors: list[ParseError] = []
    components: list[_Component] = []
    current: _Component | None = None
    commands: list[str] = []
    seen_directive = False

    for line_no, raw in enumerate(script.splitlines(), start=1):
        if not raw.startswith("#SBATCH"):
            if raw.strip() and not raw.startswith("#"):
                commands.append(raw)
            continue
        if raw[7:8] not in ("", " ", "\t"):
            errors.append(ParseError("UnknownDirective", line_no, raw.split()[0]))
            continue
        seen_directive = True
        directive = _directive(line_no, raw[7:], errors)
        if directive is None:
            continue
        if directive.key == "hetjob":
            if current is None or not current.directives:
                errors.append(ParseError("EmptyComponent", line_no, "hetjob separator before any directive"))
            current = _Component(line_no + 1)
            components.append(current)
            continue
        if current is None:
            current = _Component(line_no)
            components.append(current)
        if directive.key in current.directives:
            first = current.directives[directive.key].line
            errors.append(ParseError("DuplicateDirective", line_no, f"--{directive.key} already set on line {first}"))
            continue
        current.directives[directive.key] = directive

    if not seen_directive:
        raise HetjobSyntaxError([ParseError("EmptyScript", 1, "no #SBATCH directives")])

    requests = []
    for index, comp in enumerate(components):
        if not comp.directives:
            if not any(e.kind == "EmptyComponent" for e in errors):
                errors.append(ParseError("EmptyComponent", comp.start_line - 1, f"component {index} has no directives"))
            continue
        req = _build(index, comp, errors)
        if req is not None:
            requests.append(req)

    if errors:
        errors.sort(key=lambda e: e.line)
        raise HetjobSyntaxError(errors)
    return ParsedScript(tuple(requests), "\n".join(commands))


def parse_hetjob(script: str) -> list[ResourceRequest]:
    """Resource requests of a hetjob script, one per component."""
    return list(parse_script(script).requests)


def render_hetjob(requests: list[ResourceRequest] | tuple[ResourceRequest, ...], commands: str = "") -> str:
    """Inverse of :func:`parse_hetjob` for whole-second walltimes."""
    lines = ["#!/bin/bash"]
    for index, req in enumerate(requests):
        if index:
            lines.append("#SBATCH hetjob")
        lines.append(f"#SBATCH --partition {req.partition}")
        if req.nodes:
            lines.append(f"#SBATCH --nodes {req.nodes}")
        lines.append(f"#SBATCH --time={format_time(req.walltime)}")
        if req.qpu_gres:
            lines.append(f"#SBATCH --gres=qpu:{req.qpu_gres}")
    if commands:
        lines.append("")
        lines.append(commands)
    return "\n".join(lines) + "\n"
