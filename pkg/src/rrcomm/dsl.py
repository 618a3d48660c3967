"""Gesture script language: the 15 communication messages as timed motion segments.

A gesture script is a plain-text document:

    # optional comments
    message ASCEND
    description Pitch up vertically and go up
    segment dur=1.309 pitch=100
    segment dur=1.871 heave=100

Each ``segment`` line commands the five body axes for a fixed duration,
expressed as a percentage of the robot profile's maximum rate on that axis.
Channels left out default to 0. The bundled library (``rrcomm/library``)
defines one script per message, tuned so that each script's total duration
matches the nominal duration of that message.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path


class MessageId(enum.IntEnum):
    """The 15 communication messages. Values double as class labels."""

    BATTERY_LOW = 0
    START_COMMUNICATION = 1
    ASCEND = 2
    DESCEND = 3
    FOLLOW_ME = 4
    DANGER = 5
    COLLECT_DATA = 6
    START_MAPPING = 7
    GO_TO_LOCATION = 8
    U_TURN = 9
    HELP = 10
    EMERGENCY_SURFACING = 11
    STOP = 12
    NO = 13
    YES = 14


#: Nominal duration of each message in seconds. The bundled scripts are
#: authored to match these to well within 5%.
NOMINAL_DURATIONS_S: dict[MessageId, float] = {
    MessageId.BATTERY_LOW: 4.28,
    MessageId.START_COMMUNICATION: 16.71,
    MessageId.ASCEND: 3.18,
    MessageId.DESCEND: 3.28,
    MessageId.FOLLOW_ME: 6.93,
    MessageId.DANGER: 7.44,
    MessageId.COLLECT_DATA: 8.32,
    MessageId.START_MAPPING: 4.32,
    MessageId.GO_TO_LOCATION: 7.48,
    MessageId.U_TURN: 4.22,
    MessageId.HELP: 19.95,
    MessageId.EMERGENCY_SURFACING: 3.46,
    MessageId.STOP: 6.52,
    MessageId.NO: 4.31,
    MessageId.YES: 4.26,
}

_CHANNELS = ("roll", "pitch", "yaw", "surge", "heave")


class ScriptError(Exception):
    """Base class for gesture script problems. Carries a source position when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            pos = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{pos}: {message}"
        super().__init__(message)


class ScriptSyntaxError(ScriptError):
    """Malformed line or token."""


class UnknownMessage(ScriptError):
    """Message name not one of the 15."""


class MissingField(ScriptError):
    """Required field or header absent."""


class ValueOutOfRange(ScriptError):
    """Percentage outside [-100, 100] or non-positive duration."""


class EmptyScript(ScriptError):
    """Script declares no segments."""


class MissingMessage(ScriptError):
    """Library directory lacks one or more of the 15 messages."""


class DuplicateMessage(ScriptError):
    """Library directory defines a message more than once."""


@dataclass(frozen=True)
class MotionSegment:
    """One timed motion command on the five body axes.

    Percentages command the robot profile's maximum rate on that axis,
    so the segment itself stays robot-agnostic.
    """

    duration: float
    roll_pct: float = 0.0
    pitch_pct: float = 0.0
    yaw_pct: float = 0.0
    surge_pct: float = 0.0
    heave_pct: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueOutOfRange(f"segment duration must be > 0, got {self.duration}")
        for name in _CHANNELS:
            value = getattr(self, f"{name}_pct")
            if not -100.0 <= value <= 100.0:
                raise ValueOutOfRange(f"{name} percentage {value} outside [-100, 100]")


@dataclass(frozen=True)
class GestureScript:
    """A message identity plus its ordered motion segments."""

    message: MessageId
    segments: tuple[MotionSegment, ...]
    description: str = ""

    def __post_init__(self):
        if not self.segments:
            raise EmptyScript(f"script for {self.message.name} has no segments")

    @property
    def total_duration(self) -> float:
        return sum(seg.duration for seg in self.segments)


def total_duration(script: GestureScript) -> float:
    """Sum of segment durations in seconds."""
    return script.total_duration


def _strip_comment(line: str) -> str:
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def _normalize_name(raw: str) -> str:
    return raw.strip().upper().replace("-", "_").replace(" ", "_")


def parse_script(text: str) -> GestureScript:
    """Parse a script document into a validated GestureScript.

    Raises a ScriptError subclass with the offending line (and column where
    it applies) on any invalid input; no partially built script escapes.
    """
    message: MessageId | None = None
    description = ""
    segments: list[MotionSegment] = []

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line)
        if not line.strip():
            continue
        tokens = line.split()
        keyword = tokens[0]
        col0 = line.index(keyword) + 1

        if keyword == "message":
            if message is not None:
                raise ScriptSyntaxError("duplicate message header", lineno, col0)
            if len(tokens) < 2:
                raise MissingField("message header needs a name", lineno, col0)
            name = _normalize_name(" ".join(tokens[1:]))
            try:
                message = MessageId[name]
            except KeyError:
                raise UnknownMessage(f"unknown message {name!r}", lineno,
                                     line.index(tokens[1]) + 1) from None
        elif keyword == "description":
            description = line.split(None, 1)[1].strip() if len(tokens) > 1 else ""
        elif keyword == "segment":
            if message is None:
                raise MissingField("segment before message header", lineno, col0)
            segments.append(_parse_segment(line, tokens[1:], lineno))
        else:
            raise ScriptSyntaxError(f"unknown directive {keyword!r}", lineno, col0)

    if message is None:
        raise MissingField("document has no message header")
    if not segments:
        raise EmptyScript(f"script for {message.name} has no segments")
    return GestureScript(message=message, segments=tuple(segments), description=description)


def _parse_segment(line: str, tokens: list[str], lineno: int) -> MotionSegment:
    fields: dict[str, float] = {}
    for token in tokens:
        col = line.index(token) + 1
        if "=" not in token:
            raise ScriptSyntaxError(f"expected key=value, got {token!r}", lineno, col)
        key, _, raw = token.partition("=")
        if key != "dur" and key not in _CHANNELS:
            raise ScriptSyntaxError(f"unknown segment field {key!r}", lineno, col)
        if key in fields:
            raise ScriptSyntaxError(f"duplicate field {key!r}", lineno, col)
        try:
            value = float(raw)
        except ValueError:
            raise ScriptSyntaxError(f"bad number {raw!r} for {key}", lineno, col) from None
        if key == "dur" and not value > 0:
            raise ValueOutOfRange(f"duration must be > 0, got {value}", lineno, col)
        if key in _CHANNELS and not -100.0 <= value <= 100.0:
            raise ValueOutOfRange(f"{key} percentage {value} outside [-100, 100]", lineno, col)
        fields[key] = value
    if "dur" not in fields:
        raise MissingField("segment missing dur=", lineno, line.index("segment") + 1)
    dur = fields.pop("dur")
    return MotionSegment(duration=dur, **{f"{k}_pct": v for k, v in fields.items()})


def serialize_script(script: GestureScript) -> str:
    """Render a script to its canonical document form.

    parse_script(serialize_script(s)) reproduces s exactly; zero channels
    are omitted and floats use shortest round-trip form.
    """
    lines = [f"message {script.message.name}"]
    if script.description:
        lines.append(f"description {script.description}")
    for seg in script.segments:
        parts = [f"segment dur={seg.duration!r}"]
        for name in _CHANNELS:
            value = getattr(seg, f"{name}_pct")
            if value != 0.0:
                parts.append(f"{name}={value!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_script(path: Path | str) -> GestureScript:
    """Parse a single .gest file."""
    return parse_script(Path(path).read_text(encoding="utf-8"))


def load_library(directory: Path | str) -> dict[MessageId, GestureScript]:
    """Load a library directory containing exactly one script per message.

    Raises MissingMessage or DuplicateMessage when the 15-message contract
    is not met.
    """
    directory = Path(directory)
    scripts: dict[MessageId, GestureScript] = {}
    for path in sorted(directory.glob("*.gest")):
        script = load_script(path)
        if script.message in scripts:
            raise DuplicateMessage(f"message {script.message.name} defined twice "
                                   f"(second definition in {path.name})")
        scripts[script.message] = script
    missing = [m.name for m in MessageId if m not in scripts]
    if missing:
        raise MissingMessage(f"library missing {', '.join(missing)}")
    return scripts


def bundled_library_dir() -> Path:
    """Directory of the scripts shipped with the package."""
    return Path(__file__).parent / "library"


def bundled_library() -> dict[MessageId, GestureScript]:
    """The 15 scripts shipped with the package."""
    return load_library(bundled_library_dir())
