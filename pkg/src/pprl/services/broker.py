"""Central match broker.

Stations submit bit-vector envelopes; the broker matches every new
submission against all earlier ones for the same session and stores only
the pairs that reached the session threshold.  It never sees records,
pseudonyms or schemes - just opaque client ids, vectors and a scheme
digest used to reject mixed-scheme sessions.

Sessions live in memory, guarded by one registry lock; the pairwise
matching itself runs outside the lock on a small thread pool so
submissions return quickly and progress can be polled.  An optional
snapshot file makes sessions survive a restart.
"""

from __future__ import annotations

import base64
import itertools
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response

from pprl.matcher import MatchTask, VectorBlock, match_pairwise
from pprl.protocol import (
    DecodeError,
    MalformedJsonError,
    MatchConfig,
    MatchEntry,
    MatchResultForClient,
    SessionProgress,
    SubmissionAck,
    SubmissionEnvelope,
    decode_message,
)
from pprl.similarity import ClassifiedPair

__all__ = ["BrokerConfig", "SessionRegistry", "create_broker_app"]


@dataclass(frozen=True)
class BrokerConfig:
    matcher_parallelism: int = 2
    session_ttl_seconds: float = 86400.0
    snapshot_path: Path | None = None


@dataclass
class _Session:
    config: MatchConfig
    clients: dict[str, VectorBlock] = field(default_factory=dict)
    bit_length: int | None = None
    pairs: list[ClassifiedPair] = field(default_factory=list)
    matched_client_pairs: set[frozenset[str]] = field(default_factory=set)
    comparisons_done: int = 0
    last_touched: float = field(default_factory=time.monotonic)

    def all_client_pairs(self) -> set[frozenset[str]]:
        return {
            frozenset(pair)
            for pair in itertools.combinations(self.clients, 2)
        }

    def is_complete(self) -> bool:
        expected = self.config.expected_clients
        if expected is None or len(self.clients) != expected:
            return False
        return self.matched_client_pairs == self.all_client_pairs()


class SessionRegistry:
    """All broker state plus the matching executor."""

    def __init__(self, config: BrokerConfig) -> None:
        self._config = config
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.RLock()
        self._executor = ThreadPoolExecutor(
            max_workers=max(1, config.matcher_parallelism),
            thread_name_prefix="matcher",
        )
        if config.snapshot_path is not None:
            self._restore()

    # -- submission & matching --------------------------------------

    def submit(self, session_id: str, envelope: SubmissionEnvelope) -> SubmissionAck:
        if envelope.session_id != session_id:
            raise HTTPException(
                400,
                detail="envelope session_id does not match the request path",
            )
        with self._lock:
            self._purge_expired()
            session = self._sessions.get(session_id)
            if session is None:
                session = _Session(config=envelope.config)
                self._sessions[session_id] = session
            else:
                self._check_config(session.config, envelope.config)
            if envelope.client_id in session.clients:
                raise HTTPException(
                    409,
                    detail=f"client {envelope.client_id!r} already submitted",
                )
            bit_length = envelope.vectors[0].bit_length
            if session.bit_length is None:
                session.bit_length = bit_length
            elif session.bit_length != bit_length:
                raise HTTPException(
                    400,
                    detail=(
                        f"vector bit length {bit_length} differs from the "
                        f"session's {session.bit_length}"
                    ),
                )
            block = VectorBlock.from_payloads(
                [base64.b64decode(v.payload) for v in envelope.vectors],
                bit_length,
            )
            peers = list(session.clients)
            session.clients[envelope.client_id] = block
            session.last_touched = time.monotonic()
            for peer in peers:
                task = MatchTask(
                    session_id=session_id,
                    client_a=peer,
                    client_b=envelope.client_id,
                    vectors_a=session.clients[peer],
                    vectors_b=block,
                    threshold=session.config.threshold,
                )
                self._executor.submit(self._run_task, task)
        self._save()
        return SubmissionAck(
            session_id=session_id,
            client_id=envelope.client_id,
            stored_vectors=len(envelope.vectors),
        )

    def _check_config(self, existing: MatchConfig, incoming: MatchConfig) -> None:
        mismatches = []
        if existing.threshold != incoming.threshold:
            mismatches.append("threshold")
        if existing.scheme_digest != incoming.scheme_digest:
            mismatches.append("scheme_digest")
        if (
            incoming.expected_clients is not None
            and existing.expected_clients is not None
            and existing.expected_clients != incoming.expected_clients
        ):
            mismatches.append("expected_clients")
        if mismatches:
            raise HTTPException(
                409, detail="config mismatch: " + ", ".join(mismatches)
            )

    def _run_task(self, task: MatchTask) -> None:
        # Pure computation outside the lock; the merge below is atomic,
        # so readers never observe a half-merged client pair.
        matches = match_pairwise(task)
        with self._lock:
            session = self._sessions.get(task.session_id)
            if session is None:
                return
            session.pairs.extend(matches)
            session.matched_client_pairs.add(
                frozenset((task.client_a, task.client_b))
            )
            session.comparisons_done += task.comparisons
            session.last_touched = time.monotonic()
        self._save()

    # -- queries -----------------------------------------------------

    def progress(self, session_id: str) -> SessionProgress:
        with self._lock:
            self._purge_expired()
            session = self._require(session_id)
            return SessionProgress(
                session_id=session_id,
                submitted_clients=len(session.clients),
                expected_clients=session.config.expected_clients,
                comparisons_done=session.comparisons_done,
                complete=session.is_complete(),
            )

    def results_for(
        self, session_id: str, client_id: str, force: bool
    ) -> MatchResultForClient:
        with self._lock:
            self._purge_expired()
            session = self._require(session_id)
            if client_id not in session.clients:
                raise HTTPException(
                    404, detail=f"unknown client {client_id!r}"
                )
            if not session.is_complete() and not force:
                progress = SessionProgress(
                    session_id=session_id,
                    submitted_clients=len(session.clients),
                    expected_clients=session.config.expected_clients,
                    comparisons_done=session.comparisons_done,
                    complete=False,
                )
                raise HTTPException(
                    409,
                    detail={
                        "reason": "session incomplete",
                        "progress": progress.model_dump(),
                    },
                )
            entries = []
            for pair in session.pairs:
                if pair.left_client == client_id:
                    entries.append(
                        (pair.left_index, pair.right_client, pair.similarity)
                    )
                elif pair.right_client == client_id:
                    entries.append(
                        (pair.right_index, pair.left_client, pair.similarity)
                    )
            entries.sort()
            return MatchResultForClient(
                session_id=session_id,
                client_id=client_id,
                matches=tuple(
                    MatchEntry(
                        local_vector_index=index,
                        peer_client_id=peer,
                        similarity=similarity,
                    )
                    for index, peer, similarity in entries
                ),
            )

    def stored_pairs(self, session_id: str) -> list[ClassifiedPair]:
        """Snapshot of the raw stored pair set (for audits and tests)."""
        with self._lock:
            return list(self._require(session_id).pairs)

    def wait_idle(self, timeout: float = 60.0) -> None:
        """Block until no matching work is pending (best effort)."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                pending = any(
                    s.matched_client_pairs != s.all_client_pairs()
                    for s in self._sessions.values()
                )
            if not pending:
                return
            time.sleep(0.01)

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)

    def _require(self, session_id: str) -> _Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise HTTPException(404, detail=f"unknown session {session_id!r}")
        return session

    def _purge_expired(self) -> None:
        ttl = self._config.session_ttl_seconds
        now = time.monotonic()
        for sid in [
            sid
            for sid, s in self._sessions.items()
            if now - s.last_touched > ttl
        ]:
            del self._sessions[sid]

    # -- snapshot ----------------------------------------------------

    def _save(self) -> None:
        path = self._config.snapshot_path
        if path is None:
            return
        # Lock covers the file write as well: concurrent merges must not
        # interleave their temp-file snapshots.
        with self._lock:
            doc = {
                "sessions": {
                    sid: {
                        "config": s.config.model_dump(),
                        "bit_length": s.bit_length,
                        "clients": {
                            cid: [
                                base64.b64encode(row.tobytes()).decode("ascii")
                                for row in block.packed
                            ]
                            for cid, block in s.clients.items()
                        },
                        "matched_client_pairs": [
                            sorted(p) for p in s.matched_client_pairs
                        ],
                        "comparisons_done": s.comparisons_done,
                        "pairs": [
                            [
                                p.left_client,
                                p.left_index,
                                p.right_client,
                                p.right_index,
                                p.similarity,
                            ]
                            for p in s.pairs
                        ],
                    }
                    for sid, s in self._sessions.items()
                }
            }
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_text(json.dumps(doc))
            tmp.replace(path)

    def _restore(self) -> None:
        path = self._config.snapshot_path
        if path is None or not path.exists():
            return
        doc = json.loads(path.read_text())
        for sid, raw in doc.get("sessions", {}).items():
            session = _Session(config=MatchConfig.model_validate(raw["config"]))
            session.bit_length = raw["bit_length"]
            for cid, rows in raw["clients"].items():
                payloads = [base64.b64decode(r) for r in rows]
                session.clients[cid] = VectorBlock(
                    np.frombuffer(b"".join(payloads), dtype=np.uint8).reshape(
                        len(payloads), -1
                    ).copy(),
                    session.bit_length,
                )
            session.matched_client_pairs = {
                frozenset(p) for p in raw["matched_client_pairs"]
            }
            session.comparisons_done = raw["comparisons_done"]
            session.pairs = [
                ClassifiedPair(
                    left_client=lc,
                    left_index=li,
                    right_client=rc,
                    right_index=ri,
                    similarity=sim,
                    is_match=True,
                )
                for lc, li, rc, ri, sim in raw["pairs"]
            ]
            self._sessions[sid] = session
            # Schedule any client pair that was still unmatched when the
            # snapshot was taken.
            for pair in session.all_client_pairs() - session.matched_client_pairs:
                a, b = sorted(pair)
                self._executor.submit(
                    self._run_task,
                    MatchTask(
                        session_id=sid,
                        client_a=a,
                        client_b=b,
                        vectors_a=session.clients[a],
                        vectors_b=session.clients[b],
                        threshold=session.config.threshold,
                    ),
                )


def create_broker_app(
    config: BrokerConfig | None = None, record_traffic: bool = False
) -> FastAPI:
    """Build the broker application.

    With ``record_traffic`` set, every request and response body passes
    through ``app.state.traffic`` (a list of ``(direction, bytes)``),
    which privacy audits inspect.
    """
    config = config or BrokerConfig()
    app = FastAPI(title="match broker")
    registry = SessionRegistry(config)
    app.state.registry = registry
    app.state.traffic = []

    if record_traffic:

        @app.middleware("http")
        async def _record(request: Request, call_next):
            body = await request.body()
            app.state.traffic.append(("request", bytes(body)))
            response = await call_next(request)
            chunks = [chunk async for chunk in response.body_iterator]
            payload = b"".join(chunks)
            app.state.traffic.append(("response", payload))
            return Response(
                content=payload,
                status_code=response.status_code,
                headers=dict(response.headers),
                media_type=response.media_type,
            )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/sessions/{session_id}/submissions", status_code=202)
    async def submit(session_id: str, request: Request) -> SubmissionAck:
        body = await request.body()
        try:
            envelope = decode_message(SubmissionEnvelope, body)
        except MalformedJsonError as exc:
            raise HTTPException(400, detail=str(exc)) from exc
        except DecodeError as exc:
            raise HTTPException(422, detail=str(exc)) from exc
        return registry.submit(session_id, envelope)

    @app.get("/sessions/{session_id}/progress")
    def progress(session_id: str) -> SessionProgress:
        return registry.progress(session_id)

    @app.get("/sessions/{session_id}/results")
    def results(
        session_id: str,
        client: str = Query(min_length=1),
        force: bool = False,
    ) -> MatchResultForClient:
        return registry.results_for(session_id, client, force)

    return app
