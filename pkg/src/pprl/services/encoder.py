"""Stateless encoding service.

Runs inside the station boundary: it receives cleartext records together
with the scheme, returns one bit vector per record in input order, and
keeps nothing.  Batch in, batch out.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from pydantic import Field

from pprl.masking import RecordMismatchError, SchemeError, encode
from pprl.protocol import (
    DecodeError,
    MalformedJsonError,
    ProtocolMessage,
    RecordDoc,
    SchemeDoc,
    VectorDoc,
    decode_message,
)

__all__ = ["EncodeRequest", "EncodeResponse", "create_encoder_app"]


class EncodeRequest(ProtocolMessage):
    scheme: SchemeDoc
    records: tuple[RecordDoc, ...] = Field(min_length=1)


class EncodeResponse(ProtocolMessage):
    vectors: tuple[VectorDoc, ...]


def create_encoder_app(max_body_bytes: int | None = None) -> FastAPI:
    """Build the encoder application.

    ``max_body_bytes`` caps the accepted request size (413 beyond it);
    unset means unlimited.
    """
    app = FastAPI(title="record encoder")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/encode")
    async def encode_batch(request: Request) -> EncodeResponse:
        body = await request.body()
        if max_body_bytes is not None and len(body) > max_body_bytes:
            raise HTTPException(413, detail="request body too large")
        try:
            req = decode_message(EncodeRequest, body)
        except MalformedJsonError as exc:
            raise HTTPException(400, detail=str(exc)) from exc
        except DecodeError as exc:
            raise HTTPException(422, detail=str(exc)) from exc
        try:
            scheme = req.scheme.to_scheme()
        except SchemeError as exc:
            raise HTTPException(400, detail=str(exc)) from exc
        vectors = []
        for doc in req.records:
            try:
                vectors.append(
                    VectorDoc.from_vector(encode(doc.to_record(), scheme))
                )
            except RecordMismatchError as exc:
                # Name the offending attribute set; the station fixes its
                # extract rather than silently dropping fields.
                raise HTTPException(422, detail=str(exc)) from exc
        return EncodeResponse(vectors=tuple(vectors))

    return app
