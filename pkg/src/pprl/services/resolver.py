"""Station-side resolver service.

The resolver is the only component that touches both worlds: it accepts
pseudonym lists from the train orchestrator, pulls the cleartext records
from the station's master patient index, has them encoded by the local
encoder service and ships the resulting vectors to the central broker.
On the way back it translates vector indices into pseudonyms again, so
nothing quasi-identifying ever crosses the station boundary.

Per session the resolver keeps one binding (client id plus the ordered
pseudonym list) in an append-only store, surviving restarts.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import httpx
from fastapi import FastAPI, HTTPException
from pydantic import Field

from pprl.protocol import (
    MatchConfig,
    MatchResultForClient,
    ProtocolMessage,
    RecordDoc,
    SchemeDoc,
    SubmissionEnvelope,
    VectorDoc,
    scheme_digest,
)
from pprl.services.mpi import CsvMpiStore, MpiAdapter

__all__ = [
    "BindingStore",
    "ResolverConfig",
    "SessionBinding",
    "create_resolver_app",
]


@dataclass(frozen=True)
class ResolverConfig:
    """Static configuration of one resolver instance."""

    mpi_path: Path
    scheme_path: Path
    binding_store_path: Path
    encoder_url: str
    broker_url: str
    strict: bool = False


@dataclass(frozen=True)
class SessionBinding:
    """What the resolver must remember to interpret results later."""

    session_id: str
    client_id: str
    pseudonym_order: tuple[str, ...]
    created_at: float


class BindingStore:
    """Append-only JSONL store, one line per session binding."""

    def __init__(self, path: Path) -> None:
        self._path = path
        self._lock = threading.Lock()
        self._bindings: dict[str, SessionBinding] = {}
        if path.exists():
            with path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    raw = json.loads(line)
                    binding = SessionBinding(
                        session_id=raw["session_id"],
                        client_id=raw["client_id"],
                        pseudonym_order=tuple(raw["pseudonym_order"]),
                        created_at=raw["created_at"],
                    )
                    if binding.session_id in self._bindings:
                        raise ValueError(
                            f"{path}: duplicate binding for session "
                            f"{binding.session_id!r}"
                        )
                    self._bindings[binding.session_id] = binding

    def get(self, session_id: str) -> SessionBinding | None:
        with self._lock:
            return self._bindings.get(session_id)

    def add(self, binding: SessionBinding) -> None:
        with self._lock:
            if binding.session_id in self._bindings:
                raise ValueError(
                    f"binding for session {binding.session_id!r} exists"
                )
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps(
                        {
                            "session_id": binding.session_id,
                            "client_id": binding.client_id,
                            "pseudonym_order": list(binding.pseudonym_order),
                            "created_at": binding.created_at,
                        }
                    )
                    + "\n"
                )
            self._bindings[binding.session_id] = binding


class SessionRequestConfig(ProtocolMessage):
    """Session parameters as supplied by the train orchestrator."""

    session_id: str = Field(min_length=1)
    threshold: float = Field(ge=0.0, le=1.0)
    expected_clients: int | None = Field(default=None, ge=1)


class SubmitSessionRequest(ProtocolMessage):
    config: SessionRequestConfig
    pseudonyms: tuple[str, ...] = Field(min_length=1)
    broker_url: str | None = None
    encoder_url: str | None = None


class SubmitSessionReceipt(ProtocolMessage):
    session_id: str
    client_id: str
    resolved: int
    unresolved: int
    unresolved_pseudonyms: tuple[str, ...] = ()
    broker_ack: dict


class FetchResultsRequest(ProtocolMessage):
    force: bool = False
    broker_url: str | None = None


class PseudonymMatch(ProtocolMessage):
    pseudonym: str
    peer_client: str
    similarity: float


class SessionResults(ProtocolMessage):
    session_id: str
    matches: tuple[PseudonymMatch, ...]


@dataclass
class _ResolverState:
    config: ResolverConfig
    mpi: MpiAdapter
    scheme_doc: SchemeDoc
    digest: str
    bindings: BindingStore
    client: httpx.Client
    # Serialises session creation so a duplicate cannot slip in between
    # check and persist, and rollbacks stay simple.
    submit_lock: threading.Lock = field(default_factory=threading.Lock)


def create_resolver_app(
    config: ResolverConfig,
    mpi: MpiAdapter | None = None,
    http_client: httpx.Client | None = None,
) -> FastAPI:
    """Build a resolver application.

    ``mpi`` and ``http_client`` exist for embedding and tests; by default
    the MPI is loaded from ``config.mpi_path`` and a plain HTTP client is
    used for the encoder and broker calls.
    """
    scheme_doc = SchemeDoc.model_validate_json(
        config.scheme_path.read_text(encoding="utf-8")
    )
    state = _ResolverState(
        config=config,
        mpi=mpi if mpi is not None else CsvMpiStore.load(config.mpi_path),
        scheme_doc=scheme_doc,
        digest=scheme_digest(scheme_doc),
        bindings=BindingStore(config.binding_store_path),
        client=http_client if http_client is not None else httpx.Client(timeout=60.0),
    )

    app = FastAPI(title="station resolver")
    app.state.resolver = state

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def submit_session(request: SubmitSessionRequest) -> SubmitSessionReceipt:
        session_id = request.config.session_id
        with state.submit_lock:
            if state.bindings.get(session_id) is not None:
                raise HTTPException(
                    409, detail=f"session {session_id!r} already submitted"
                )

            resolved_records = []
            unresolved = []
            for pseudonym in request.pseudonyms:
                record = state.mpi.lookup(pseudonym)
                if record is None:
                    unresolved.append(pseudonym)
                else:
                    resolved_records.append(record)
            if unresolved and state.config.strict:
                raise HTTPException(
                    422,
                    detail={
                        "reason": "unresolved pseudonyms in strict mode",
                        "unresolved": unresolved,
                    },
                )
            if not resolved_records:
                raise HTTPException(
                    422, detail="no pseudonym could be resolved"
                )

            encoder_url = request.encoder_url or state.config.encoder_url
            broker_url = request.broker_url or state.config.broker_url
            vectors = _encode_records(state, encoder_url, resolved_records)

            client_id = str(uuid.uuid4())
            envelope = SubmissionEnvelope(
                session_id=session_id,
                client_id=client_id,
                config=MatchConfig(
                    session_id=session_id,
                    threshold=request.config.threshold,
                    expected_clients=request.config.expected_clients,
                    scheme_digest=state.digest,
                ),
                vectors=tuple(vectors),
            )
            ack = _submit_to_broker(state, broker_url, envelope)

            # Persist only after the broker accepted; a 502 above leaves
            # no binding behind and the session can be retried.
            state.bindings.add(
                SessionBinding(
                    session_id=session_id,
                    client_id=client_id,
                    pseudonym_order=tuple(
                        record.pseudonym for record in resolved_records
                    ),
                    created_at=time.time(),
                )
            )
        return SubmitSessionReceipt(
            session_id=session_id,
            client_id=client_id,
            resolved=len(resolved_records),
            unresolved=len(unresolved),
            unresolved_pseudonyms=tuple(unresolved),
            broker_ack=ack,
        )

    @app.post("/sessions/{session_id}/results")
    def fetch_results(
        session_id: str, request: FetchResultsRequest | None = None
    ) -> SessionResults:
        request = request or FetchResultsRequest()
        binding = state.bindings.get(session_id)
        if binding is None:
            raise HTTPException(
                404, detail=f"no binding for session {session_id!r}"
            )
        broker_url = request.broker_url or state.config.broker_url
        result = _fetch_from_broker(state, broker_url, binding, request.force)
        matches = []
        for entry in result.matches:
            if entry.local_vector_index >= len(binding.pseudonym_order):
                raise HTTPException(
                    500,
                    detail=(
                        "broker returned vector index "
                        f"{entry.local_vector_index} beyond the "
                        f"{len(binding.pseudonym_order)} submitted vectors"
                    ),
                )
            matches.append(
                PseudonymMatch(
                    pseudonym=binding.pseudonym_order[entry.local_vector_index],
                    peer_client=entry.peer_client_id,
                    similarity=entry.similarity,
                )
            )
        return SessionResults(session_id=session_id, matches=tuple(matches))

    return app


def _encode_records(
    state: _ResolverState, encoder_url: str, records: list
) -> list[VectorDoc]:
    body = {
        "scheme": state.scheme_doc.model_dump(mode="json"),
        "records": [
            RecordDoc.from_record(record).model_dump(mode="json")
            for record in records
        ],
    }
    try:
        response = state.client.post(f"{encoder_url}/encode", json=body)
    except httpx.HTTPError as exc:
        raise HTTPException(502, detail=f"encoder unreachable: {exc}") from exc
    if response.status_code != 200:
        raise HTTPException(
            502,
            detail=(
                f"encoder rejected the batch ({response.status_code}): "
                f"{response.text}"
            ),
        )
    return [
        VectorDoc.model_validate(doc) for doc in response.json()["vectors"]
    ]


def _submit_to_broker(
    state: _ResolverState, broker_url: str, envelope: SubmissionEnvelope
) -> dict:
    try:
        response = state.client.post(
            f"{broker_url}/sessions/{envelope.session_id}/submissions",
            content=envelope.model_dump_json(),
            headers={"content-type": "application/json"},
        )
    except httpx.HTTPError as exc:
        raise HTTPException(502, detail=f"broker unreachable: {exc}") from exc
    if response.status_code not in (200, 201, 202):
        raise HTTPException(
            502,
            detail=(
                f"broker rejected the submission ({response.status_code}): "
                f"{response.text}"
            ),
        )
    return response.json()


def _fetch_from_broker(
    state: _ResolverState,
    broker_url: str,
    binding: SessionBinding,
    force: bool,
) -> MatchResultForClient:
    try:
        response = state.client.get(
            f"{broker_url}/sessions/{binding.session_id}/results",
            params={"client": binding.client_id, "force": force},
        )
    except httpx.HTTPError as exc:
        raise HTTPException(502, detail=f"broker unreachable: {exc}") from exc
    if response.status_code == 409:
        detail = response.json().get("detail", "session incomplete")
        raise HTTPException(409, detail=detail)
    if response.status_code != 200:
        raise HTTPException(
            502,
            detail=(
                f"broker rejected the results query "
                f"({response.status_code}): {response.text}"
            ),
        )
    return MatchResultForClient.model_validate(response.json())
