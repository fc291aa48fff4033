"""HTTP screening service: sessions accept audio and demographics and return
a thresholded TB-risk decision from a loaded model bundle.

Sessions are held in memory, with optional append-only JSON-lines audit
persistence. State machine: Open -> HasAudio <-> HasDemographics -> Scored
-> Closed. Scoring goes through the same pipeline functions as the CLI, so
the two produce bit-identical scores for identical inputs.
"""

from __future__ import annotations

import json
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse

from .audio_io import AudioIoError, load_wav
from .cohort import Gender, Group, Participant
from .evaluation import Task
from .pipeline import ModelBundle, score_session, segment_clip_for_scoring
from .segmenter import CoughSegment

MAX_BODY_BYTES = 50 * 1024 * 1024

STATE_OPEN = "Open"
STATE_HAS_AUDIO = "HasAudio"
STATE_HAS_DEMOGRAPHICS = "HasDemographics"
STATE_SCORED = "Scored"
STATE_CLOSED = "Closed"

TASK_ALIASES = {
    "tb_vs_rest": Task.TB_VS_REST,
    "tb_vs_or": Task.TB_VS_OR,
    "tb_vs_hc": Task.TB_VS_HC,
}


@dataclass
class Session:
    session_id: str
    state: str = STATE_OPEN
    segments: list[CoughSegment] = field(default_factory=list)
    segment_summaries: list[dict] = field(default_factory=list)
    demographics: dict | None = None
    result: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def _demographics_errors(payload: dict) -> dict[str, str]:
    errors = {}
    age = payload.get("age")
    if not isinstance(age, int) or age < 18:
        errors["age"] = "age must be an integer >= 18"
    gender = payload.get("gender")
    if gender not in ("male", "female"):
        errors["gender"] = "gender must be 'male' or 'female'"
    bmi = payload.get("bmi")
    if not isinstance(bmi, (int, float)) or not 10 <= float(bmi) <= 80:
        errors["bmi"] = "bmi must be a number in [10, 80]"
    if not isinstance(payload.get("symptom"), bool):
        errors["symptom"] = "symptom must be a boolean"
    return errors


def create_app(bundle_path: str | Path | None, audit_dir: str | Path | None = None) -> FastAPI:
    """Build the service app. `bundle_path` may be None to model the
    not-ready state (all session creation returns 503)."""
    app = FastAPI(title="coughscreen screening service")
    bundle: ModelBundle | None = ModelBundle.load(bundle_path) if bundle_path else None
    sessions: dict[str, Session] = {}
    audit_path = Path(audit_dir) if audit_dir else None

    def audit(session: Session, event: str, payload: dict) -> None:
        if audit_path is None:
            return
        audit_path.mkdir(parents=True, exist_ok=True)
        line = json.dumps({"event": event, **payload}, default=str)
        with open(audit_path / f"{session.session_id}.jsonl", "a") as fh:
            fh.write(line + "\n")

    def error(status: int, detail) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": detail})

    @app.get("/healthz")
    def healthz():
        return {"ready": bundle is not None,
                "model_id": bundle.model_id if bundle else None}

    @app.post("/sessions", status_code=201)
    def create_session():
        if bundle is None:
            return error(503, "no model bundle loaded")
        sid = uuid.uuid4().hex
        sessions[sid] = Session(session_id=sid)
        return {"session_id": sid, "state": STATE_OPEN}

    @app.post("/sessions/{sid}/recordings")
    async def upload_recording(sid: str, request: Request):
        session = sessions.get(sid)
        if session is None:
            return error(404, "unknown session")
        body = await request.body()
        if len(body) > MAX_BODY_BYTES:
            return error(413, "body exceeds 50 MB")
        with session.lock:
            if session.state not in (STATE_OPEN, STATE_HAS_AUDIO, STATE_HAS_DEMOGRAPHICS):
                return error(409, f"cannot upload audio in state {session.state}")
            with tempfile.NamedTemporaryFile(suffix=".wav") as tmp:
                tmp.write(body)
                tmp.flush()
                try:
                    clip = load_wav(tmp.name)
                except AudioIoError as e:
                    return error(400, f"malformed WAV: {e}")
            segments = segment_clip_for_scoring(bundle, clip)
            summaries = [{"onset_s": round(s.onset_s, 3),
                          "offset_s": round(s.offset_s, 3),
                          "duration_s": round(s.duration_s(), 3)}
                         for s in segments]
            if not segments:
                audit(session, "upload", {"segments": 0, "advisory": "retry"})
                return {"segments": [], "advisory": "retry", "state": session.state}
            session.segments.extend(segments)
            session.segment_summaries.extend(summaries)
            if session.state == STATE_OPEN:
                session.state = STATE_HAS_AUDIO
            audit(session, "upload", {"segments": len(summaries)})
            return {"segments": summaries, "advisory": None, "state": session.state}

    @app.put("/sessions/{sid}/demographics")
    async def put_demographics(sid: str, request: Request):
        session = sessions.get(sid)
        if session is None:
            return error(404, "unknown session")
        try:
            payload = json.loads(await request.body())
        except json.JSONDecodeError:
            return error(422, {"body": "not valid JSON"})
        with session.lock:
            if session.state == STATE_CLOSED:
                return error(409, "session is closed")
            if session.state == STATE_SCORED:
                return error(409, "session already scored")
            errors = _demographics_errors(payload)
            if errors:
                return error(422, errors)
            # resubmission overwrites previous values before scoring
            session.demographics = {"age": payload["age"], "gender": payload["gender"],
                                    "bmi": float(payload["bmi"]),
                                    "symptom": payload["symptom"]}
            if session.segments:
                session.state = STATE_HAS_DEMOGRAPHICS
            audit(session, "demographics", session.demographics)
            return {"state": session.state}

    @app.post("/sessions/{sid}/score")
    def score(sid: str, task: str = Query("tb_vs_rest"),
              threshold: float = Query(None)):
        session = sessions.get(sid)
        if session is None:
            return error(404, "unknown session")
        with session.lock:
            if task not in TASK_ALIASES:
                return error(422, f"unknown task {task!r}")
            tau = bundle.default_tau if threshold is None else threshold
            if not 0.0 < tau < 1.0:
                return error(400, "threshold must be in (0, 1)")
            if session.state != STATE_HAS_DEMOGRAPHICS or not session.segments:
                return error(409, "session needs audio with coughs and demographics")
            demo = session.demographics
            symptomatic = bool(demo["symptom"])
            participant = Participant(
                participant_id=session.session_id,
                group=Group.TB_POS if symptomatic else Group.HC,
                gender=Gender(demo["gender"]), age_years=demo["age"],
                bmi=demo["bmi"], symptom_present=symptomatic, hiv_positive=False)
            value = score_session(bundle, session.segments, participant,
                                  TASK_ALIASES[task])
            decision = "refer" if value >= tau else "no-refer"
            session.result = {
                "score": value, "threshold": tau, "decision": decision,
                "task": task, "model_id": bundle.model_id,
                "operating_point_source": ("default 0.38 operating point"
                                           if threshold is None else "caller"),
            }
            session.state = STATE_SCORED
            audit(session, "score", session.result)
            return session.result

    @app.post("/sessions/{sid}/close")
    def close(sid: str):
        session = sessions.get(sid)
        if session is None:
            return error(404, "unknown session")
        with session.lock:
            if session.state != STATE_SCORED:
                return error(409, f"cannot close in state {session.state}")
            session.state = STATE_CLOSED
            audit(session, "close", {})
            return {"state": STATE_CLOSED}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        session = sessions.get(sid)
        if session is None:
            return error(404, "unknown session")
        return {"session_id": sid, "state": session.state,
                "segments": session.segment_summaries,
                "demographics": session.demographics,
                "result": session.result}

    return app
