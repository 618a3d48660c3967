"""Transcription study backend: content build, sessions, answers, reporting.

Participants are taught the 15 messages in a random order, then transcribe
10 scripted conversations watched from one of three randomly assigned
viewpoints, rating confidence 0..10 per answer. State is an append-only
JSON-lines event log (session events carry the hidden truth labels,
answer events the choices); replaying the log reconstructs the service
exactly. Transcription payloads sent to clients carry opaque clip ids only.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsl import GestureScript, MessageId
from .kinematics import RobotProfile, default_profile, simulate
from .render import Viewpoint, render_clip
from .dataset import training_controller

#: Reference human transcription results kept as report footnotes:
#: per-message mean accuracy (percent) and confidence (out of 10).
REFERENCE_HUMAN = {
    "BATTERY_LOW": (94.10, 8.30), "START_COMMUNICATION": (94.10, 7.30),
    "ASCEND": (97.10, 8.30), "DESCEND": (94.10, 8.30),
    "FOLLOW_ME": (97.10, 8.60), "DANGER": (72.10, 7.80),
    "COLLECT_DATA": (85.30, 8.30), "START_MAPPING": (58.80, 7.60),
    "GO_TO_LOCATION": (82.40, 8.10), "U_TURN": (87.10, 6.40),
    "HELP": (91.20, 8.00), "EMERGENCY_SURFACING": (95.60, 8.00),
    "STOP": (73.50, 6.40), "NO": (94.10, 8.20), "YES": (96.30, 8.20),
}
REFERENCE_HUMAN_OVERALL = {"accuracy_pct": 88.20, "confidence": 7.90}

N_CONVERSATIONS = 10
CONVERSATION_LENGTHS = (2, 5)   # inclusive range of gestures per conversation


class StudyError(Exception):
    pass


class ContentMissing(StudyError):
    """Study media not generated for every viewpoint."""


class UnknownSession(StudyError):
    pass


class DuplicateAnswer(StudyError):
    pass


class ConfidenceOutOfRange(StudyError):
    pass


class TeachingIncomplete(StudyError):
    pass


class NoData(StudyError):
    pass


# ---------------------------------------------------------------------------
# content

@dataclass
class StudyContent:
    """Generated study media plus the server-side truth tables."""

    root: Path
    fps: float
    teaching: list[dict]          # [{"clip": opaque id, "message": name}]
    conversations: list[list[dict]]  # per conversation: [{"clip", "message"}]
    viewpoints: list[str]

    @classmethod
    def load(cls, root: Path | str) -> "StudyContent":
        root = Path(root)
        data = json.loads((root / "content.json").read_text())
        return cls(root=root, fps=data["fps"], teaching=data["teaching"],
                   conversations=data["conversations"], viewpoints=data["viewpoints"])

    def media_path(self, clip_id: str, viewpoint: str) -> Path:
        return self.root / "media" / f"{clip_id}_{viewpoint}.gif"

    def verify(self) -> None:
        if getattr(self, "_verified", False):
            return
        for vp in (v.value for v in Viewpoint):
            if vp not in self.viewpoints:
                raise ContentMissing(f"no media generated for viewpoint {vp}")
            for item in self.teaching:
                if not self.media_path(item["clip"], vp).exists():
                    raise ContentMissing(f"missing teaching media {item['clip']} ({vp})")
            for conv in self.conversations:
                for item in conv:
                    if not self.media_path(item["clip"], vp).exists():
                        raise ContentMissing(f"missing media {item['clip']} ({vp})")
        self._verified = True

    def truth_for_items(self) -> list[str]:
        """Flattened conversation truth labels in content order."""
        return [item["message"] for conv in self.conversations for item in conv]


def _plan_conversations(rng: np.random.Generator) -> list[list[MessageId]]:
    """10 conversations of 2..5 gestures whose union covers all 15 messages."""
    while True:
        lengths = rng.integers(CONVERSATION_LENGTHS[0], CONVERSATION_LENGTHS[1] + 1,
                               size=N_CONVERSATIONS)
        if lengths.sum() >= 15:
            break
    slots = [(c, i) for c, n in enumerate(lengths) for i in range(int(n))]
    plan: dict[tuple[int, int], MessageId] = {}
    chosen = rng.permutation(len(slots))[:15]
    for code, slot_idx in enumerate(chosen):
        plan[slots[slot_idx]] = MessageId(code)
    for slot in slots:
        if slot not in plan:
            plan[slot] = MessageId(int(rng.integers(15)))
    return [[plan[(c, i)] for i in range(int(lengths[c]))] for c in range(N_CONVERSATIONS)]


def build_study_content(library: dict[MessageId, GestureScript], out_dir: Path | str,
                        fps: float = 6.0, resolution: tuple[int, int] = (96, 96),
                        seed: int = 0, profile: RobotProfile | None = None) -> StudyContent:
    """Render teaching and conversation media for all three viewpoints.

    Clip ids are opaque so transcription payloads cannot leak labels. Media
    are animated GIFs playable directly by a browser.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    media = out_dir / "media"
    media.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    profile = profile or default_profile(controller=training_controller())
    conversations = _plan_conversations(rng)

    def save_gif(frames: np.ndarray, path: Path) -> None:
        images = [Image.fromarray((np.transpose(f, (1, 2, 0)) * 255).astype(np.uint8))
                  for f in frames]
        images[0].save(path, save_all=True, append_images=images[1:],
                       duration=int(round(1000 / fps)), loop=0)

    serial = 0
    conditions_seed = int(rng.integers(2 ** 31))

    def render_all_viewpoints(message: MessageId, clip_id: str) -> None:
        nonlocal serial
        from .render import EnvCondition
        env = EnvCondition(condition_id=0, background_texture=conditions_seed % 1000,
                           visibility=0.95, robot_color=(0.95, 0.85, 0.10),
                           brightness=1.0, pixel_noise_std=0.005)
        traj = simulate(library[message], profile, fps=fps,
                        seed=int(rng.integers(2 ** 31)))
        for vp in Viewpoint:
            clip = render_clip(traj, vp, env, res=resolution,
                               seed=int(rng.integers(2 ** 31)))
            save_gif(clip.frames, media / f"{clip_id}_{vp.value}.gif")

    teaching = []
    for message in rng.permutation([m for m in MessageId]):
        message = MessageId(int(message))
        clip_id = f"clip{serial:03d}"
        serial += 1
        render_all_viewpoints(message, clip_id)
        teaching.append({"clip": clip_id, "message": message.name})

    conv_payload = []
    for conv in conversations:
        items = []
        for message in conv:
            clip_id = f"clip{serial:03d}"
            serial += 1
            render_all_viewpoints(message, clip_id)
            items.append({"clip": clip_id, "message": message.name})
        conv_payload.append(items)

    content = StudyContent(root=out_dir, fps=fps, teaching=teaching,
                           conversations=conv_payload,
                           viewpoints=[v.value for v in Viewpoint])
    (out_dir / "content.json").write_text(json.dumps({
        "fps": fps, "viewpoints": content.viewpoints,
        "teaching": teaching, "conversations": conv_payload}, indent=1))
    return content


# ---------------------------------------------------------------------------
# sessions

@dataclass
class StudySession:
    session_id: str
    viewpoint: str
    teaching_order: list[int]        # permutation into content.teaching
    conversation_order: list[int]    # permutation into content.conversations
    truth: list[str]                 # per flattened item, hidden from clients
    item_clips: list[str]            # per flattened item, opaque media ids
    taught: set = field(default_factory=set)
    answers: dict = field(default_factory=dict)  # item index -> record

    @property
    def n_items(self) -> int:
        return len(self.truth)

    def teaching_complete(self) -> bool:
        return len(self.taught) >= len(self.teaching_order)

    def completed(self) -> bool:
        return len(self.answers) >= self.n_items


def create_session(content: StudyContent, seed: int) -> StudySession:
    """Deterministically assemble a session from a seed.

    Viewpoint is drawn uniformly; teaching order and conversation order are
    seeded permutations.
    """
    content.verify()
    rng = np.random.default_rng(seed)
    viewpoint = content.viewpoints[int(rng.integers(len(content.viewpoints)))]
    teaching_order = rng.permutation(len(content.teaching)).tolist()
    conversation_order = rng.permutation(len(content.conversations)).tolist()
    truth, item_clips = [], []
    for ci in conversation_order:
        for item in content.conversations[ci]:
            truth.append(item["message"])
            item_clips.append(item["clip"])
    return StudySession(session_id=f"s{seed:012x}", viewpoint=viewpoint,
                        teaching_order=teaching_order,
                        conversation_order=conversation_order,
                        truth=truth, item_clips=item_clips)


# ---------------------------------------------------------------------------
# record store and report

@dataclass
class TranscriptionRecord:
    session_id: str
    item: int
    chosen: str
    confidence: int
    timestamp: float

    def to_event(self) -> dict:
        return {"type": "answer", "session_id": self.session_id, "item": self.item,
                "chosen": self.chosen, "confidence": self.confidence,
                "timestamp": self.timestamp}


class StudyStore:
    """In-memory session state backed by an append-only JSON-lines log."""

    def __init__(self, records_path: Path | str):
        self.path = Path(records_path)
        self.sessions: dict[str, StudySession] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    self._apply(json.loads(line))

    def _append(self, event: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock, open(self.path, "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _apply(self, event: dict) -> None:
        if event["type"] == "session":
            data = event["session"]
            self.sessions[data["session_id"]] = StudySession(
                session_id=data["session_id"], viewpoint=data["viewpoint"],
                teaching_order=data["teaching_order"],
                conversation_order=data["conversation_order"],
                truth=data["truth"], item_clips=data["item_clips"])
        elif event["type"] == "taught":
            self.sessions[event["session_id"]].taught.add(event["index"])
        elif event["type"] == "answer":
            session = self.sessions[event["session_id"]]
            session.answers[event["item"]] = event

    def add_session(self, session: StudySession) -> None:
        event = {"type": "session", "session": {
            "session_id": session.session_id, "viewpoint": session.viewpoint,
            "teaching_order": session.teaching_order,
            "conversation_order": session.conversation_order,
            "truth": session.truth, "item_clips": session.item_clips}}
        self._apply(event)
        self._append(event)

    def mark_taught(self, session_id: str, index: int) -> StudySession:
        session = self.get(session_id)
        if not 0 <= index < len(session.teaching_order):
            raise StudyError(f"teaching index {index} out of range")
        event = {"type": "taught", "session_id": session_id, "index": index}
        self._apply(event)
        self._append(event)
        return session

    def get(self, session_id: str) -> StudySession:
        if session_id not in self.sessions:
            raise UnknownSession(f"unknown session {session_id}")
        return self.sessions[session_id]

    def submit(self, record: TranscriptionRecord) -> int:
        session = self.get(record.session_id)
        if not session.teaching_complete():
            raise TeachingIncomplete("finish the teaching phase first")
        if not 0 <= record.item < session.n_items:
            raise StudyError(f"item {record.item} out of range")
        if not isinstance(record.confidence, int) or not 0 <= record.confidence <= 10:
            raise ConfidenceOutOfRange(f"confidence {record.confidence} outside 0..10")
        if record.chosen not in MessageId.__members__:
            raise StudyError(f"unknown message choice {record.chosen!r}")
        if record.item in session.answers:
            raise DuplicateAnswer(f"item {record.item} already answered")
        event = record.to_event()
        self._apply(event)
        self._append(event)
        return len(session.answers)

    def compute_report(self) -> dict:
        return compute_report(self.sessions.values())


def compute_report(sessions) -> dict:
    """Per-message and overall accuracy/confidence over completed sessions.

    Every participant contributes their own correct fraction; the overall
    number is the mean of those fractions, and per-message numbers average
    per-participant per-message fractions the same way. Pure function of the
    record set; ordering never matters.
    """
    completed = sorted((s for s in sessions if s.completed()),
                       key=lambda s: s.session_id)
    if not completed:
        raise NoData("no completed sessions")

    per_session_acc = []
    per_session_conf = []
    per_message: dict[str, dict[str, list[float]]] = {
        m.name: {"acc": [], "conf": []} for m in MessageId}
    for session in completed:
        correct = 0
        confidences = []
        msg_counts: dict[str, list[int]] = {}
        msg_conf: dict[str, list[int]] = {}
        for item, truth in enumerate(session.truth):
            answer = session.answers[item]
            hit = int(answer["chosen"] == truth)
            correct += hit
            confidences.append(answer["confidence"])
            msg_counts.setdefault(truth, []).append(hit)
            msg_conf.setdefault(truth, []).append(answer["confidence"])
        per_session_acc.append(correct / session.n_items)
        per_session_conf.append(float(np.mean(confidences)))
        for name, hits in msg_counts.items():
            per_message[name]["acc"].append(float(np.mean(hits)))
            per_message[name]["conf"].append(float(np.mean(msg_conf[name])))

    report_messages = {}
    for name, agg in per_message.items():
        report_messages[name] = {
            "accuracy": float(np.mean(agg["acc"])) if agg["acc"] else None,
            "confidence": float(np.mean(agg["conf"])) if agg["conf"] else None,
            "shown_to": len(agg["acc"]),
        }
    return {
        "participants": len(completed),
        "per_message": report_messages,
        "overall": {
            "accuracy": float(np.mean(per_session_acc)),
            "confidence": float(np.mean(per_session_conf)),
        },
        "reference_human": {
            "per_message": {k: {"accuracy_pct": a, "confidence": c}
                            for k, (a, c) in REFERENCE_HUMAN.items()},
            "overall": REFERENCE_HUMAN_OVERALL,
        },
    }


# ---------------------------------------------------------------------------
# HTTP API

def create_app(content_dir: Path | str, records_path: Path | str, seed: int = 0,
               ui_dir: Path | str | None = None):
    """FastAPI app serving sessions, media, answers and the report.

    With ui_dir set, the browser frontend is mounted at / so the study runs
    from a single origin.
    """
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse, JSONResponse

    content = StudyContent.load(content_dir)
    store = StudyStore(records_path)
    rng = np.random.default_rng(seed)
    app = FastAPI(title="gesture transcription study")

    def fail(status: int, exc: Exception):
        raise HTTPException(status_code=status,
                            detail={"error": type(exc).__name__, "message": str(exc)})

    @app.get("/api/health")
    def health():
        return {"ok": True}

    @app.get("/api/messages")
    def messages():
        return {"messages": [m.name for m in MessageId]}

    @app.post("/api/session")
    def new_session(body: dict | None = None):
        session_seed = (body or {}).get("seed")
        if session_seed is None:
            session_seed = int(rng.integers(2 ** 48))
        try:
            session = create_session(content, int(session_seed))
        except ContentMissing as exc:
            fail(503, exc)
        if session.session_id in store.sessions:
            session = store.sessions[session.session_id]
        else:
            store.add_session(session)
        item = 0
        conversations = []
        for ci in session.conversation_order:
            items = []
            for _ in content.conversations[ci]:
                items.append({"item": item, "clip": session.item_clips[item]})
                item += 1
            conversations.append({"conversation": ci, "items": items})
        return {
            "session_id": session.session_id,
            "viewpoint": session.viewpoint,
            "fps": content.fps,
            "teaching": [{"index": i,
                          "clip": content.teaching[t]["clip"],
                          "message": content.teaching[t]["message"]}
                         for i, t in enumerate(session.teaching_order)],
            "conversations": conversations,
        }

    @app.post("/api/session/{session_id}/teaching/{index}")
    def teaching_viewed(session_id: str, index: int):
        try:
            session = store.mark_taught(session_id, index)
        except UnknownSession as exc:
            fail(404, exc)
        except StudyError as exc:
            fail(400, exc)
        return {"ok": True, "teaching_complete": session.teaching_complete()}

    @app.get("/api/clip/{clip_id}")
    def clip_media(clip_id: str, session: str):
        try:
            sess = store.get(session)
        except UnknownSession as exc:
            fail(404, exc)
        path = content.media_path(clip_id, sess.viewpoint)
        if not path.exists():
            fail(404, ContentMissing(f"no media for {clip_id}"))
        return FileResponse(path, media_type="image/gif")

    @app.post("/api/transcription")
    def transcription(body: dict):
        record = TranscriptionRecord(
            session_id=body.get("session_id", ""),
            item=int(body.get("item", -1)),
            chosen=body.get("message", ""),
            confidence=body.get("confidence", -1),
            timestamp=time.time(),
        )
        try:
            count = store.submit(record)
        except UnknownSession as exc:
            fail(404, exc)
        except (DuplicateAnswer, TeachingIncomplete) as exc:
            fail(409, exc)
        except (ConfidenceOutOfRange, StudyError) as exc:
            fail(400, exc)
        return {"ok": True, "answered": count}

    @app.get("/api/report")
    def report():
        try:
            return JSONResponse(store.compute_report())
        except NoData as exc:
            fail(409, exc)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
