import json
import shutil

import pytest
from fastapi.testclient import TestClient

from rrcomm.dsl import MessageId
from rrcomm.study import (
    ConfidenceOutOfRange, ContentMissing, DuplicateAnswer, NoData, StudyContent,
    StudyStore, TeachingIncomplete, TranscriptionRecord, UnknownSession,
    build_study_content, compute_report, create_app, create_session,
    REFERENCE_HUMAN_OVERALL,
)

MESSAGE_NAMES = [m.name for m in MessageId]


@pytest.fixture(scope="module")
def content(tmp_path_factory, library):
    out = tmp_path_factory.mktemp("study_content")
    return build_study_content(library, out, fps=4.0, resolution=(32, 32), seed=7)


def test_content_structure(content):
    assert len(content.teaching) == 15
    assert sorted(t["message"] for t in content.teaching) == sorted(MESSAGE_NAMES)
    assert len(content.conversations) == 10
    lengths = [len(c) for c in content.conversations]
    assert all(2 <= n <= 5 for n in lengths)
    covered = {item["message"] for conv in content.conversations for item in conv}
    assert covered == set(MESSAGE_NAMES)
    content.verify()


def test_content_clip_ids_opaque(content):
    for conv in content.conversations:
        for item in conv:
            assert item["clip"].startswith("clip")
            for name in MESSAGE_NAMES:
                assert name.lower() not in item["clip"].lower()


def test_create_session_deterministic(content):
    a = create_session(content, seed=99)
    b = create_session(content, seed=99)
    assert a == b
    c = create_session(content, seed=100)
    assert c != a


def test_viewpoint_assignment_uniform(content):
    counts = {}
    n = 3000
    for seed in range(n):
        vp = create_session(content, seed=seed).viewpoint
        counts[vp] = counts.get(vp, 0) + 1
    # binomial bound: each viewpoint within 3 sigma of n/3
    sigma = (n * (1 / 3) * (2 / 3)) ** 0.5
    for vp in content.viewpoints:
        assert abs(counts.get(vp, 0) - n / 3) <= 3 * sigma


def test_content_missing_viewpoint(content, tmp_path):
    broken_root = tmp_path / "broken"
    shutil.copytree(content.root, broken_root)
    for path in (broken_root / "media").glob("*_PITCH_90.gif"):
        path.unlink()
    broken = StudyContent.load(broken_root)
    with pytest.raises(ContentMissing):
        create_session(broken, seed=0)


# ---------------------------------------------------------------------------
# store semantics

def make_store(tmp_path, content, seed=5):
    store = StudyStore(tmp_path / "records.jsonl")
    session = create_session(content, seed=seed)
    store.add_session(session)
    for i in range(len(session.teaching_order)):
        store.mark_taught(session.session_id, i)
    return store, session


def answer(session, item, chosen, confidence=7):
    return TranscriptionRecord(session_id=session.session_id, item=item,
                               chosen=chosen, confidence=confidence, timestamp=0.0)


def test_submit_and_count(tmp_path, content):
    store, session = make_store(tmp_path, content)
    count = store.submit(answer(session, 0, session.truth[0]))
    assert count == 1


def test_confidence_bounds(tmp_path, content):
    store, session = make_store(tmp_path, content)
    with pytest.raises(ConfidenceOutOfRange):
        store.submit(answer(session, 0, session.truth[0], confidence=11))
    with pytest.raises(ConfidenceOutOfRange):
        store.submit(answer(session, 0, session.truth[0], confidence=-1))
    store.submit(answer(session, 0, session.truth[0], confidence=0))
    store.submit(answer(session, 1, session.truth[1], confidence=10))


def test_duplicate_answer(tmp_path, content):
    store, session = make_store(tmp_path, content)
    store.submit(answer(session, 3, session.truth[3]))
    with pytest.raises(DuplicateAnswer):
        store.submit(answer(session, 3, session.truth[3]))


def test_unknown_session(tmp_path, content):
    store, _ = make_store(tmp_path, content)
    with pytest.raises(UnknownSession):
        store.submit(TranscriptionRecord("nope", 0, "NO", 5, 0.0))


def test_teaching_gate(tmp_path, content):
    store = StudyStore(tmp_path / "records.jsonl")
    session = create_session(content, seed=12)
    store.add_session(session)
    with pytest.raises(TeachingIncomplete):
        store.submit(answer(session, 0, session.truth[0]))


def test_log_replay_reconstructs_state(tmp_path, content):
    store, session = make_store(tmp_path, content)
    for item in range(session.n_items):
        store.submit(answer(session, item, session.truth[item], confidence=item % 11))
    replayed = StudyStore(tmp_path / "records.jsonl")
    assert replayed.compute_report() == store.compute_report()
    restored = replayed.sessions[session.session_id]
    assert restored.truth == session.truth
    assert restored.completed()


# ---------------------------------------------------------------------------
# report math

class FakeSession:
    def __init__(self, sid, truth, chosen, confidences):
        self.session_id = sid
        self.truth = truth
        self.n_items = len(truth)
        self.answers = {i: {"chosen": c, "confidence": conf}
                        for i, (c, conf) in enumerate(zip(chosen, confidences))}

    def completed(self):
        return len(self.answers) >= self.n_items


def test_report_single_perfect_participant():
    s = FakeSession("a", ["NO", "YES", "STOP"], ["NO", "YES", "STOP"], [10, 10, 10])
    report = compute_report([s])
    assert report["overall"]["accuracy"] == 1.0
    assert report["per_message"]["NO"]["accuracy"] == 1.0
    assert report["overall"]["confidence"] == 10.0


def test_report_two_participant_formula():
    # oracle: (3/4 + 1/2) / 2 = 0.625
    s1 = FakeSession("a", ["NO", "YES", "STOP", "HELP"],
                     ["NO", "YES", "STOP", "NO"], [5, 5, 5, 5])
    s2 = FakeSession("b", ["NO", "YES"], ["NO", "STOP"], [4, 6])
    report = compute_report([s1, s2])
    assert report["overall"]["accuracy"] == pytest.approx(0.625)
    assert report["participants"] == 2


def test_report_order_invariance():
    s1 = FakeSession("a", ["NO", "YES"], ["NO", "NO"], [5, 6])
    s2 = FakeSession("b", ["NO"], ["NO"], [8])
    assert compute_report([s1, s2]) == compute_report([s2, s1])


def test_report_bounded_by_participant_extremes():
    s1 = FakeSession("a", ["NO"] * 4, ["NO"] * 4, [5] * 4)          # 1.0
    s2 = FakeSession("b", ["NO"] * 4, ["YES"] * 4, [5] * 4)         # 0.0
    s3 = FakeSession("c", ["NO", "NO"], ["NO", "YES"], [5, 5])      # 0.5
    report = compute_report([s1, s2, s3])
    assert 0.0 <= report["overall"]["accuracy"] <= 1.0
    assert report["overall"]["accuracy"] == pytest.approx(0.5)


def test_report_excludes_incomplete_sessions():
    done = FakeSession("a", ["NO"], ["NO"], [5])
    partial = FakeSession("b", ["NO", "YES"], ["NO"], [5])
    partial.answers = {0: {"chosen": "NO", "confidence": 5}}
    report = compute_report([done, partial])
    assert report["participants"] == 1


def test_report_no_data():
    with pytest.raises(NoData):
        compute_report([])


def test_report_reference_constants():
    s = FakeSession("a", ["NO"], ["NO"], [5])
    report = compute_report([s])
    assert report["reference_human"]["overall"] == REFERENCE_HUMAN_OVERALL
    assert report["reference_human"]["per_message"]["START_MAPPING"]["accuracy_pct"] == 58.80


# ---------------------------------------------------------------------------
# HTTP API

@pytest.fixture()
def client(content, tmp_path):
    app = create_app(content.root, tmp_path / "records.jsonl", seed=3)
    return TestClient(app)


def start_session(client, seed=42):
    response = client.post("/api/session", json={"seed": seed})
    assert response.status_code == 200
    return response.json()


def complete_teaching(client, session):
    for item in session["teaching"]:
        response = client.post(
            f"/api/session/{session['session_id']}/teaching/{item['index']}")
        assert response.status_code == 200
    return response.json()


def test_session_payload_withholds_labels(client):
    session = start_session(client)
    assert len(session["teaching"]) == 15
    # teaching phase is labeled by design; transcription items are not
    transcription_payload = json.dumps(session["conversations"])
    for name in MESSAGE_NAMES:
        assert name not in transcription_payload
    items = [i for conv in session["conversations"] for i in conv["items"]]
    assert len(items) >= 15
    assert [i["item"] for i in items] == list(range(len(items)))


def test_clip_media_served(client, content):
    session = start_session(client)
    clip_id = session["conversations"][0]["items"][0]["clip"]
    response = client.get(f"/api/clip/{clip_id}",
                          params={"session": session["session_id"]})
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/gif"
    assert response.content[:6] in (b"GIF87a", b"GIF89a")


def test_transcription_flow_and_report(client):
    session = start_session(client, seed=17)
    last = complete_teaching(client, session)
    assert last["teaching_complete"]
    items = [i for conv in session["conversations"] for i in conv["items"]]
    for i, item in enumerate(items):
        body = {"session_id": session["session_id"], "item": item["item"],
                "message": "YES" if i % 2 else "NO", "confidence": i % 11}
        response = client.post("/api/transcription", json=body)
        assert response.status_code == 200
    report = client.get("/api/report")
    assert report.status_code == 200
    payload = report.json()
    assert payload["participants"] == 1
    assert 0.0 <= payload["overall"]["accuracy"] <= 1.0


def test_transcription_rejections(client):
    session = start_session(client, seed=23)
    sid = session["session_id"]
    item0 = session["conversations"][0]["items"][0]["item"]
    # teaching incomplete
    response = client.post("/api/transcription", json={
        "session_id": sid, "item": item0, "message": "NO", "confidence": 5})
    assert response.status_code == 409
    complete_teaching(client, session)
    # bad confidence
    response = client.post("/api/transcription", json={
        "session_id": sid, "item": item0, "message": "NO", "confidence": 11})
    assert response.status_code == 400
    # ok then duplicate
    good = {"session_id": sid, "item": item0, "message": "NO", "confidence": 5}
    assert client.post("/api/transcription", json=good).status_code == 200
    assert client.post("/api/transcription", json=good).status_code == 409
    # unknown session
    response = client.post("/api/transcription", json={
        "session_id": "zzz", "item": 0, "message": "NO", "confidence": 5})
    assert response.status_code == 404


def test_report_empty_store(client):
    assert client.get("/api/report").status_code == 409


def test_ui_mount_serves_index(content, tmp_path):
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><title>study</title>")
    app = create_app(content.root, tmp_path / "records.jsonl", seed=0, ui_dir=ui)
    client = TestClient(app)
    response = client.get("/")
    assert response.status_code == 200
    assert "study" in response.text
    # API still reachable alongside the mount
    assert client.get("/api/health").json() == {"ok": True}
