import json

import pytest
from fastapi.testclient import TestClient

from conftest import MPI_FIELDS, five_field_scheme, routed_client, write_mpi
from pprl.masking import PersonRecord, encode, jaccard
from pprl.protocol import SchemeDoc
from pprl.services.broker import create_broker_app
from pprl.services.encoder import create_encoder_app
from pprl.services.mpi import CsvMpiStore, MpiFormatError
from pprl.services.resolver import (
    BindingStore,
    ResolverConfig,
    SessionBinding,
    create_resolver_app,
)

STATION_A = [
    ("P-000001", "Anna", "Muller", "F", "1980-04-02", "Berlin"),
    ("P-000002", "Berta", "Schmidt", "F", "1975-11-30", "Hamburg"),
    ("P-000003", "Carl", "Fischer", "M", "1990-01-15", "Munich"),
]

STATION_B = [
    ("Q-000001", "Anna", "Muller", "F", "1980-04-02", "Berlin"),
    ("Q-000002", "Dora", "Weber", "F", "1966-07-21", "Cologne"),
]


@pytest.fixture
def stack(tmp_path):
    """Resolver for station A wired to an in-process encoder and broker."""
    scheme_path = tmp_path / "scheme.json"
    scheme_path.write_text(
        SchemeDoc.from_scheme(five_field_scheme()).model_dump_json(), encoding="utf-8"
    )
    mpi_path = tmp_path / "mpi_a.csv"
    write_mpi(mpi_path, STATION_A)

    broker_app = create_broker_app()
    shared = routed_client(
        {"encoder": create_encoder_app(), "broker": broker_app}
    )

    def make_resolver(mpi_file, strict: bool = False) -> TestClient:
        config = ResolverConfig(
            mpi_path=mpi_file,
            scheme_path=scheme_path,
            binding_store_path=mpi_file.with_suffix(".bindings.jsonl"),
            encoder_url="http://encoder",
            broker_url="http://broker",
            strict=strict,
        )
        return TestClient(create_resolver_app(config, http_client=shared))

    resolver = make_resolver(mpi_path)
    yield {
        "resolver": resolver,
        "make_resolver": make_resolver,
        "broker_app": broker_app,
        "client": shared,
        "tmp_path": tmp_path,
        "bindings_path": mpi_path.with_suffix(".bindings.jsonl"),
    }
    broker_app.state.registry.shutdown()


def submit_body(session: str, pseudonyms, threshold=0.7, expected=2) -> dict:
    return {
        "config": {
            "session_id": session,
            "threshold": threshold,
            "expected_clients": expected,
        },
        "pseudonyms": list(pseudonyms),
    }


def test_submit_resolves_encodes_and_registers(stack) -> None:
    response = stack["resolver"].post(
        "/sessions", json=submit_body("s1", ["P-000001", "P-000002"])
    )
    assert response.status_code == 201
    receipt = response.json()
    assert receipt["session_id"] == "s1"
    assert receipt["resolved"] == 2
    assert receipt["unresolved"] == 0
    assert receipt["broker_ack"]["stored_vectors"] == 2
    progress = stack["broker_app"].state.registry.progress("s1")
    assert progress.submitted_clients == 1
    # The binding survives on disk for a later resolver restart.
    lines = stack["bindings_path"].read_text().splitlines()
    assert len(lines) == 1
    stored = json.loads(lines[0])
    assert stored["pseudonym_order"] == ["P-000001", "P-000002"]
    assert stored["client_id"] == receipt["client_id"]


def test_submit_same_session_twice_conflicts(stack) -> None:
    body = submit_body("s1", ["P-000001"])
    assert stack["resolver"].post("/sessions", json=body).status_code == 201
    response = stack["resolver"].post("/sessions", json=body)
    assert response.status_code == 409
    assert "already submitted" in response.json()["detail"]


def test_unknown_pseudonyms_reported_not_submitted(stack) -> None:
    response = stack["resolver"].post(
        "/sessions", json=submit_body("s1", ["P-000001", "P-404404", "P-000003"])
    )
    assert response.status_code == 201
    receipt = response.json()
    assert receipt["resolved"] == 2
    assert receipt["unresolved"] == 1
    assert receipt["unresolved_pseudonyms"] == ["P-404404"]
    assert receipt["broker_ack"]["stored_vectors"] == 2
    stored = json.loads(stack["bindings_path"].read_text())
    assert stored["pseudonym_order"] == ["P-000001", "P-000003"]


def test_strict_mode_rejects_unknown_pseudonyms(stack) -> None:
    resolver = stack["make_resolver"](
        stack["tmp_path"] / "mpi_a.csv", strict=True
    )
    response = resolver.post(
        "/sessions", json=submit_body("s1", ["P-000001", "P-404404"])
    )
    assert response.status_code == 422
    assert response.json()["detail"]["unresolved"] == ["P-404404"]
    # Nothing must have reached the broker or the binding store.
    assert stack["broker_app"].state.registry.progress
    with pytest.raises(Exception):
        stack["broker_app"].state.registry.progress("s1")


def test_nothing_resolvable_rejected(stack) -> None:
    response = stack["resolver"].post(
        "/sessions", json=submit_body("s1", ["P-404404"])
    )
    assert response.status_code == 422


def test_broker_outage_leaves_no_binding_and_allows_retry(stack) -> None:
    stack["client"].outages.add("broker")
    body = submit_body("s1", ["P-000001", "P-000002"])
    response = stack["resolver"].post("/sessions", json=body)
    assert response.status_code == 502
    assert not stack["bindings_path"].exists() or (
        stack["bindings_path"].read_text() == ""
    )

    stack["client"].outages.discard("broker")
    retry = stack["resolver"].post("/sessions", json=body)
    assert retry.status_code == 201


def test_encoder_outage_reported_as_bad_gateway(stack) -> None:
    stack["client"].outages.add("encoder")
    response = stack["resolver"].post(
        "/sessions", json=submit_body("s1", ["P-000001"])
    )
    assert response.status_code == 502
    assert "encoder" in response.json()["detail"]


def test_results_map_indices_back_to_pseudonyms(stack) -> None:
    resolver_a = stack["resolver"]
    mpi_b = stack["tmp_path"] / "mpi_b.csv"
    write_mpi(mpi_b, STATION_B)
    resolver_b = stack["make_resolver"](mpi_b)

    pseudonyms_a = [row[0] for row in STATION_A]
    pseudonyms_b = [row[0] for row in STATION_B]
    threshold = 0.8
    assert (
        resolver_a.post(
            "/sessions", json=submit_body("s1", pseudonyms_a, threshold)
        ).status_code
        == 201
    )
    assert (
        resolver_b.post(
            "/sessions", json=submit_body("s1", pseudonyms_b, threshold)
        ).status_code
        == 201
    )
    stack["broker_app"].state.registry.wait_idle()

    response = resolver_a.post("/sessions/s1/results", json={})
    assert response.status_code == 200
    got = {
        (m["pseudonym"], round(m["similarity"], 12))
        for m in response.json()["matches"]
    }

    scheme = five_field_scheme()

    def vectors(rows):
        return [
            encode(
                PersonRecord(row[0], dict(zip(MPI_FIELDS, row[1:]))), scheme
            )
            for row in rows
        ]

    expected = set()
    for pseudonym, vector_a in zip(pseudonyms_a, vectors(STATION_A)):
        for vector_b in vectors(STATION_B):
            similarity = jaccard(vector_a, vector_b)
            if similarity >= threshold:
                expected.add((pseudonym, round(similarity, 12)))
    assert expected  # the shared person guarantees at least one pair
    assert got == expected


def test_results_for_unknown_session(stack) -> None:
    response = stack["resolver"].post("/sessions/ghost/results", json={})
    assert response.status_code == 404


def test_results_incomplete_conflict_and_force(stack) -> None:
    assert (
        stack["resolver"]
        .post("/sessions", json=submit_body("s1", ["P-000001"]))
        .status_code
        == 201
    )
    blocked = stack["resolver"].post("/sessions/s1/results", json={})
    assert blocked.status_code == 409
    forced = stack["resolver"].post(
        "/sessions/s1/results", json={"force": True}
    )
    assert forced.status_code == 200
    assert forced.json()["matches"] == []


def test_health(stack) -> None:
    assert stack["resolver"].get("/health").json() == {"status": "ok"}


# ---------------------------------------------------------- binding store


def test_binding_store_round_trip(tmp_path) -> None:
    path = tmp_path / "bindings.jsonl"
    store = BindingStore(path)
    binding = SessionBinding(
        session_id="s1",
        client_id="c1",
        pseudonym_order=("P-1", "P-2"),
        created_at=123.0,
    )
    store.add(binding)
    assert BindingStore(path).get("s1") == binding


def test_binding_store_rejects_duplicate_session(tmp_path) -> None:
    path = tmp_path / "bindings.jsonl"
    store = BindingStore(path)
    binding = SessionBinding("s1", "c1", ("P-1",), 0.0)
    store.add(binding)
    with pytest.raises(ValueError, match="exists"):
        store.add(binding)


def test_binding_store_rejects_corrupt_file(tmp_path) -> None:
    path = tmp_path / "bindings.jsonl"
    line = json.dumps(
        {
            "session_id": "s1",
            "client_id": "c1",
            "pseudonym_order": ["P-1"],
            "created_at": 0.0,
        }
    )
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(ValueError, match="duplicate binding"):
        BindingStore(path)


# ------------------------------------------------------------- MPI store


def test_mpi_store_loads_and_looks_up(tmp_path) -> None:
    path = tmp_path / "mpi.csv"
    write_mpi(path, STATION_A)
    store = CsvMpiStore.load(path)
    assert len(store) == 3
    record = store.lookup("P-000002")
    assert record is not None
    assert record.attributes["first_name"] == "Berta"
    assert store.lookup("nope") is None


def test_mpi_store_rejects_wrong_header(tmp_path) -> None:
    path = tmp_path / "mpi.csv"
    path.write_text("pseudonym,first\nx,y\n")
    with pytest.raises(MpiFormatError, match="expected header"):
        CsvMpiStore.load(path)


def test_mpi_store_rejects_duplicate_pseudonym(tmp_path) -> None:
    path = tmp_path / "mpi.csv"
    write_mpi(path, [STATION_A[0], STATION_A[0]])
    with pytest.raises(MpiFormatError, match="line 3"):
        CsvMpiStore.load(path)


def test_mpi_store_rejects_short_row(tmp_path) -> None:
    path = tmp_path / "mpi.csv"
    write_mpi(path, STATION_A)
    with path.open("a") as handle:
        handle.write("P-000009,OnlyName\n")
    with pytest.raises(MpiFormatError, match="line 5: short row"):
        CsvMpiStore.load(path)


def test_mpi_store_rejects_empty_pseudonym(tmp_path) -> None:
    path = tmp_path / "mpi.csv"
    write_mpi(path, [("", "A", "B", "F", "1980-01-01", "Berlin")])
    with pytest.raises(MpiFormatError, match="empty pseudonym"):
        CsvMpiStore.load(path)
