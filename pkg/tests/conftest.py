import random

import httpx
import pytest
from fastapi.testclient import TestClient

from pprl.masking import AttributeSpec, BitVector, EncodingScheme, PersonRecord

MPI_FIELDS = ("first_name", "last_name", "gender", "birth_date", "city")


@pytest.fixture
def scheme() -> EncodingScheme:
    """Small two-attribute scheme for unit tests."""
    return EncodingScheme(
        filter_bits=256,
        q=2,
        attributes=(
            AttributeSpec(name="first_name", weight=2.0, hash_count=6, salt=b"fn"),
            AttributeSpec(name="last_name", weight=1.0, hash_count=4, salt=b"ln"),
        ),
        hash_secret=b"unit-test-secret",
        permutation_seed=b"unit-test-perm",
    )


@pytest.fixture
def record() -> PersonRecord:
    return PersonRecord(
        pseudonym="P-000001",
        attributes={"first_name": "Anna", "last_name": "Müller"},
    )


def random_vector(rng: random.Random, length: int, density: float = 0.3) -> BitVector:
    bits = [1 if rng.random() < density else 0 for _ in range(length)]
    return BitVector.from_bits(bits)


def five_field_scheme() -> EncodingScheme:
    """Scheme covering all MPI fields, for service-level tests."""
    attributes = tuple(
        AttributeSpec(name=name, weight=1.0, hash_count=4, salt=name.encode())
        for name in MPI_FIELDS
    )
    return EncodingScheme(
        filter_bits=256,
        q=2,
        attributes=attributes,
        hash_secret=b"resolver-test-secret",
        permutation_seed=b"resolver-test-perm",
    )


def write_mpi(path, rows) -> None:
    lines = ["pseudonym," + ",".join(MPI_FIELDS)]
    lines += [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def routed_client(apps: dict[str, object]) -> httpx.Client:
    """HTTP client whose requests are served by in-process apps, keyed by host.

    ``apps`` is consulted lazily, so entries may be added after the client
    exists (a resolver needs the client before it can join the table).  The
    returned client carries a mutable ``outages`` set; any host in it
    answers 503 until removed, which tests use to fake downtime.
    """
    inner: dict[str, TestClient] = {}
    outages: set[str] = set()

    def handler(request: httpx.Request) -> httpx.Response:
        host = request.url.host
        if host in outages:
            return httpx.Response(503, json={"detail": "down for maintenance"})
        if host not in inner:
            inner[host] = TestClient(apps[host])
        response = inner[host].request(
            request.method,
            request.url.raw_path.decode("ascii"),
            content=request.content,
            headers={"content-type": request.headers.get("content-type", "")},
        )
        return httpx.Response(response.status_code, content=response.content)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    client.outages = outages
    return client
