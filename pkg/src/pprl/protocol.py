"""Wire protocol between stations and the central matcher.

JSON message bodies over HTTP, defined as pydantic models.  Bit vectors
travel as base64 of their packed little-endian bytes plus an explicit
bit length.  Encoding schemes have a canonical JSON document whose
SHA-256 digest lets the broker reject submissions produced under
different schemes without ever seeing the scheme itself.

Decoding is liberal about unknown fields (they are ignored) and strict
about everything else; the three failure classes are kept apart:

* :class:`MalformedJsonError` - the body is not valid JSON,
* :class:`PayloadMismatchError` - a vector payload and its declared
  bit length disagree,
* :class:`InvariantViolationError` - any other schema or invariant
  breach (missing field, threshold out of range, ...).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
from typing import Mapping, Type, TypeVar

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from pprl.masking import AttributeSpec, BitVector, EncodingScheme, PersonRecord

__all__ = [
    "DecodeError",
    "ProtocolMessage",
    "InvariantViolationError",
    "MalformedJsonError",
    "MatchConfig",
    "MatchEntry",
    "MatchResultForClient",
    "PayloadMismatchError",
    "RecordDoc",
    "SchemeDoc",
    "SessionProgress",
    "SubmissionAck",
    "SubmissionEnvelope",
    "VectorDoc",
    "decode_message",
    "encode_message",
    "scheme_digest",
]


class DecodeError(ValueError):
    """Base class for message decode failures."""


class MalformedJsonError(DecodeError):
    """The byte payload is not parseable JSON."""


class InvariantViolationError(DecodeError):
    """The JSON parses but violates the message schema or an invariant."""


class PayloadMismatchError(DecodeError):
    """A bit-vector payload disagrees with its declared bit length."""


_PAYLOAD_MARK = "payload/bit-length mismatch"


class ProtocolMessage(BaseModel):
    """Base for every wire message: frozen, unknown fields ignored."""

    model_config = ConfigDict(extra="ignore", frozen=True)


class VectorDoc(ProtocolMessage):
    """One encoded bit vector on the wire."""

    payload: str = Field(description="base64 of the packed little-endian bits")
    bit_length: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_payload(self) -> "VectorDoc":
        try:
            raw = base64.b64decode(self.payload, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ValueError(f"{_PAYLOAD_MARK}: invalid base64 ({exc})") from exc
        if len(raw) != (self.bit_length + 7) // 8:
            raise ValueError(
                f"{_PAYLOAD_MARK}: {len(raw)} bytes cannot hold "
                f"{self.bit_length} bits"
            )
        if self.bit_length % 8 and raw[-1] >> (self.bit_length % 8):
            raise ValueError(f"{_PAYLOAD_MARK}: padding bits beyond length set")
        return self

    @classmethod
    def from_vector(cls, vector: BitVector) -> "VectorDoc":
        return cls(
            payload=base64.b64encode(vector.data).decode("ascii"),
            bit_length=vector.length,
        )

    def to_vector(self) -> BitVector:
        return BitVector(base64.b64decode(self.payload), self.bit_length)


class MatchConfig(ProtocolMessage):
    """Session parameters shared by every participating station."""

    session_id: str = Field(min_length=1)
    threshold: float
    expected_clients: int | None = Field(default=None, ge=1)
    scheme_digest: str = ""

    @field_validator("threshold")
    @classmethod
    def _threshold_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"threshold out of range: {value} not in [0, 1]")
        return value


class SubmissionEnvelope(ProtocolMessage):
    """One client's complete vector submission for a session."""

    session_id: str = Field(min_length=1)
    client_id: str = Field(min_length=1)
    config: MatchConfig
    vectors: tuple[VectorDoc, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _consistent(self) -> "SubmissionEnvelope":
        if self.session_id != self.config.session_id:
            raise ValueError(
                "envelope session_id differs from config.session_id"
            )
        lengths = {v.bit_length for v in self.vectors}
        if len(lengths) > 1:
            raise ValueError(
                f"vectors must share one bit length, got {sorted(lengths)}"
            )
        return self


class SubmissionAck(ProtocolMessage):
    """Broker acknowledgement for a stored submission."""

    session_id: str
    client_id: str
    stored_vectors: int


class SessionProgress(ProtocolMessage):
    """Broker-side view of how far a session has come."""

    session_id: str
    submitted_clients: int = Field(ge=0)
    expected_clients: int | None = None
    comparisons_done: int = Field(ge=0)
    complete: bool = False

    @model_validator(mode="after")
    def _complete_needs_expectation(self) -> "SessionProgress":
        if self.complete and self.expected_clients is None:
            raise ValueError("complete session must know expected_clients")
        return self


class MatchEntry(ProtocolMessage):
    """One match from the querying client's point of view."""

    local_vector_index: int = Field(ge=0)
    peer_client_id: str = Field(min_length=1)
    similarity: float = Field(ge=0.0, le=1.0)


class MatchResultForClient(ProtocolMessage):
    """All stored matches involving one client, projected to its side."""

    session_id: str
    client_id: str
    matches: tuple[MatchEntry, ...] = ()


class SchemeAttributeDoc(ProtocolMessage):
    name: str = Field(min_length=1)
    weight: float = Field(ge=0.0)
    hash_count: int = Field(ge=1)
    salt: str = Field(min_length=1, description="base64")


class SchemeDoc(ProtocolMessage):
    """Canonical JSON form of an encoding scheme (secrets included).

    This document never leaves station-side configuration; only its
    digest travels to the broker.
    """

    filter_bits: int
    q: int = Field(ge=1)
    attributes: tuple[SchemeAttributeDoc, ...] = Field(min_length=1)
    hash_secret: str = Field(min_length=1, description="base64")
    permutation_seed: str = Field(min_length=1, description="base64")
    balanced: bool = True

    @classmethod
    def from_scheme(cls, scheme: EncodingScheme) -> "SchemeDoc":
        return cls(
            filter_bits=scheme.filter_bits,
            q=scheme.q,
            attributes=tuple(
                SchemeAttributeDoc(
                    name=spec.name,
                    weight=spec.weight,
                    hash_count=spec.hash_count,
                    salt=base64.b64encode(spec.salt).decode("ascii"),
                )
                for spec in scheme.attributes
            ),
            hash_secret=base64.b64encode(scheme.hash_secret).decode("ascii"),
            permutation_seed=base64.b64encode(
                scheme.permutation_seed
            ).decode("ascii"),
            balanced=scheme.balanced,
        )

    def to_scheme(self) -> EncodingScheme:
        return EncodingScheme(
            filter_bits=self.filter_bits,
            q=self.q,
            attributes=tuple(
                AttributeSpec(
                    name=doc.name,
                    weight=doc.weight,
                    hash_count=doc.hash_count,
                    salt=base64.b64decode(doc.salt),
                )
                for doc in self.attributes
            ),
            hash_secret=base64.b64decode(self.hash_secret),
            permutation_seed=base64.b64decode(self.permutation_seed),
            balanced=self.balanced,
        )


class RecordDoc(ProtocolMessage):
    """A pseudonymised record as submitted to the encoder."""

    pseudonym: str = Field(min_length=1)
    attributes: Mapping[str, str]

    @classmethod
    def from_record(cls, record: PersonRecord) -> "RecordDoc":
        return cls(pseudonym=record.pseudonym, attributes=dict(record.attributes))

    def to_record(self) -> PersonRecord:
        return PersonRecord(
            pseudonym=self.pseudonym, attributes=dict(self.attributes)
        )


def scheme_digest(scheme: EncodingScheme | SchemeDoc) -> str:
    """SHA-256 over the canonical JSON document of a scheme.

    Stations agreeing on a scheme produce the same digest; any parameter
    difference, including secrets, changes it.
    """
    doc = scheme if isinstance(scheme, SchemeDoc) else SchemeDoc.from_scheme(scheme)
    canonical = json.dumps(
        doc.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


M = TypeVar("M", bound=BaseModel)


def encode_message(message: BaseModel) -> bytes:
    """Serialise a protocol model to UTF-8 JSON bytes."""
    return message.model_dump_json().encode("utf-8")


def decode_message(model: Type[M], data: bytes | str) -> M:
    """Parse and validate JSON bytes into the given message model.

    Raises the decode-error subclass matching the failure; round-trips
    with :func:`encode_message` are identity.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="strict")
    try:
        parsed = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(f"not valid JSON: {exc}") from exc
    try:
        return model.model_validate(parsed)
    except ValidationError as exc:
        if any(_PAYLOAD_MARK in err["msg"] for err in exc.errors()):
            raise PayloadMismatchError(str(exc)) from exc
        raise InvariantViolationError(str(exc)) from exc
