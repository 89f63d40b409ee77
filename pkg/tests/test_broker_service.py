import json
import random
import time

import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

import oracles
from conftest import random_vector
from pprl.protocol import MatchConfig, SubmissionEnvelope, VectorDoc, encode_message
from pprl.services.broker import BrokerConfig, SessionRegistry, create_broker_app


def make_envelope(
    session: str,
    client: str,
    vectors,
    threshold: float = 0.7,
    expected: int | None = 2,
    digest: str = "d1",
) -> SubmissionEnvelope:
    return SubmissionEnvelope(
        session_id=session,
        client_id=client,
        config=MatchConfig(
            session_id=session,
            threshold=threshold,
            expected_clients=expected,
            scheme_digest=digest,
        ),
        vectors=tuple(VectorDoc.from_vector(v) for v in vectors),
    )


def make_vectors(seed: int, count: int, length: int = 64):
    rng = random.Random(seed)
    return [random_vector(rng, length) for _ in range(count)]


@pytest.fixture
def registry():
    reg = SessionRegistry(BrokerConfig())
    yield reg
    reg.shutdown()


# ------------------------------------------------------------- registry


def test_submit_creates_session_and_acks(registry) -> None:
    ack = registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 5)))
    assert ack.session_id == "s1"
    assert ack.client_id == "alpha"
    assert ack.stored_vectors == 5
    progress = registry.progress("s1")
    assert progress.submitted_clients == 1
    assert not progress.complete


def test_submit_rejects_path_session_mismatch(registry) -> None:
    with pytest.raises(HTTPException) as err:
        registry.submit("wrong", make_envelope("s1", "alpha", make_vectors(1, 2)))
    assert err.value.status_code == 400


def test_submit_rejects_duplicate_client(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 2)))
    with pytest.raises(HTTPException) as err:
        registry.submit("s1", make_envelope("s1", "alpha", make_vectors(2, 2)))
    assert err.value.status_code == 409
    assert "already submitted" in err.value.detail


@pytest.mark.parametrize(
    ("kwargs", "field"),
    [
        (dict(threshold=0.9), "threshold"),
        (dict(digest="other"), "scheme_digest"),
        (dict(expected=3), "expected_clients"),
    ],
)
def test_submit_rejects_config_mismatch(registry, kwargs, field) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 2)))
    with pytest.raises(HTTPException) as err:
        registry.submit("s1", make_envelope("s1", "beta", make_vectors(2, 2), **kwargs))
    assert err.value.status_code == 409
    assert field in err.value.detail


def test_submit_rejects_bit_length_change(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 2, 64)))
    with pytest.raises(HTTPException) as err:
        registry.submit("s1", make_envelope("s1", "beta", make_vectors(2, 2, 128)))
    assert err.value.status_code == 400
    assert "bit length" in err.value.detail


def test_session_completes_when_all_pairs_matched(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 4)))
    assert not registry.progress("s1").complete
    registry.submit("s1", make_envelope("s1", "beta", make_vectors(2, 6)))
    registry.wait_idle()
    progress = registry.progress("s1")
    assert progress.complete
    assert progress.comparisons_done == 24


def test_without_expected_clients_session_never_completes(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 2), expected=None))
    registry.submit("s1", make_envelope("s1", "beta", make_vectors(2, 2), expected=None))
    registry.wait_idle()
    assert not registry.progress("s1").complete


def test_matches_equal_naive_oracle(registry) -> None:
    vectors_a = make_vectors(10, 20)
    vectors_b = make_vectors(11, 25)
    registry.submit("s1", make_envelope("s1", "alpha", vectors_a, threshold=0.5))
    registry.submit("s1", make_envelope("s1", "beta", vectors_b, threshold=0.5))
    registry.wait_idle()
    got = {
        (p.left_index, p.right_index, p.similarity)
        if p.left_client == "alpha"
        else (p.right_index, p.left_index, p.similarity)
        for p in registry.stored_pairs("s1")
    }
    expected = oracles.link_double_loop(
        [v.as_int() for v in vectors_a],
        [v.as_int() for v in vectors_b],
        0.5,
    )
    assert got == expected


def test_results_projection_both_sides(registry) -> None:
    vectors_a = make_vectors(20, 10)
    vectors_b = make_vectors(21, 10)
    registry.submit("s1", make_envelope("s1", "alpha", vectors_a, threshold=0.4))
    registry.submit("s1", make_envelope("s1", "beta", vectors_b, threshold=0.4))
    registry.wait_idle()
    result_a = registry.results_for("s1", "alpha", force=False)
    result_b = registry.results_for("s1", "beta", force=False)
    pairs_from_a = {
        (m.local_vector_index, m.similarity) for m in result_a.matches
    }
    pairs_from_b = {
        (m.local_vector_index, m.similarity) for m in result_b.matches
    }
    expected = oracles.link_double_loop(
        [v.as_int() for v in vectors_a],
        [v.as_int() for v in vectors_b],
        0.4,
    )
    assert pairs_from_a == {(i, s) for i, _, s in expected}
    assert pairs_from_b == {(j, s) for _, j, s in expected}
    assert all(m.peer_client_id == "beta" for m in result_a.matches)
    indices = [m.local_vector_index for m in result_a.matches]
    assert indices == sorted(indices)


def test_results_for_incomplete_session_requires_force(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 3)))
    with pytest.raises(HTTPException) as err:
        registry.results_for("s1", "alpha", force=False)
    assert err.value.status_code == 409
    assert err.value.detail["reason"] == "session incomplete"
    assert err.value.detail["progress"]["submitted_clients"] == 1
    forced = registry.results_for("s1", "alpha", force=True)
    assert forced.matches == ()


def test_results_for_unknown_client_or_session(registry) -> None:
    registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 3)))
    with pytest.raises(HTTPException) as err:
        registry.results_for("s1", "ghost", force=True)
    assert err.value.status_code == 404
    with pytest.raises(HTTPException) as err:
        registry.results_for("nope", "alpha", force=True)
    assert err.value.status_code == 404


def test_three_clients_match_every_pair(registry) -> None:
    for i, client in enumerate(("alpha", "beta", "gamma")):
        registry.submit(
            "s1",
            make_envelope("s1", client, make_vectors(30 + i, 8), expected=3),
        )
    registry.wait_idle()
    progress = registry.progress("s1")
    assert progress.complete
    assert progress.comparisons_done == 3 * 8 * 8
    clients_seen = {
        frozenset((p.left_client, p.right_client))
        for p in registry.stored_pairs("s1")
    }
    # All stored pairs reference valid client pairings.
    assert clients_seen <= {
        frozenset(("alpha", "beta")),
        frozenset(("alpha", "gamma")),
        frozenset(("beta", "gamma")),
    }


def test_ttl_purges_stale_sessions() -> None:
    registry = SessionRegistry(BrokerConfig(session_ttl_seconds=0.05))
    try:
        registry.submit("s1", make_envelope("s1", "alpha", make_vectors(1, 2)))
        registry.wait_idle()
        time.sleep(0.12)
        with pytest.raises(HTTPException) as err:
            registry.progress("s1")
        assert err.value.status_code == 404
    finally:
        registry.shutdown()


def test_snapshot_restores_sessions(tmp_path) -> None:
    snapshot = tmp_path / "broker.json"
    first = SessionRegistry(BrokerConfig(snapshot_path=snapshot))
    vectors_a = make_vectors(40, 6)
    vectors_b = make_vectors(41, 7)
    first.submit("s1", make_envelope("s1", "alpha", vectors_a, threshold=0.5))
    first.submit("s1", make_envelope("s1", "beta", vectors_b, threshold=0.5))
    first.wait_idle()
    stored = {
        (p.left_client, p.left_index, p.right_client, p.right_index, p.similarity)
        for p in first.stored_pairs("s1")
    }
    first.shutdown()

    second = SessionRegistry(BrokerConfig(snapshot_path=snapshot))
    try:
        assert {
            (p.left_client, p.left_index, p.right_client, p.right_index, p.similarity)
            for p in second.stored_pairs("s1")
        } == stored
        assert second.progress("s1").complete
    finally:
        second.shutdown()


def test_snapshot_restore_reschedules_unfinished_work(tmp_path) -> None:
    snapshot = tmp_path / "broker.json"
    first = SessionRegistry(BrokerConfig(snapshot_path=snapshot))
    vectors_a = make_vectors(50, 5)
    vectors_b = make_vectors(51, 5)
    first.submit("s1", make_envelope("s1", "alpha", vectors_a, threshold=0.3))
    first.submit("s1", make_envelope("s1", "beta", vectors_b, threshold=0.3))
    first.wait_idle()
    expected = {
        (p.left_client, p.left_index, p.right_client, p.right_index, p.similarity)
        for p in first.stored_pairs("s1")
    }
    first.shutdown()

    # Rewind the snapshot to the moment before matching finished.
    doc = json.loads(snapshot.read_text())
    doc["sessions"]["s1"]["matched_client_pairs"] = []
    doc["sessions"]["s1"]["pairs"] = []
    doc["sessions"]["s1"]["comparisons_done"] = 0
    snapshot.write_text(json.dumps(doc))

    second = SessionRegistry(BrokerConfig(snapshot_path=snapshot))
    try:
        second.wait_idle()
        got = {
            (p.left_client, p.left_index, p.right_client, p.right_index, p.similarity)
            for p in second.stored_pairs("s1")
        }
        assert got == expected
        assert second.progress("s1").complete
    finally:
        second.shutdown()


# ------------------------------------------------------------------ HTTP


@pytest.fixture
def http_client():
    app = create_broker_app()
    with TestClient(app) as client:
        yield client
    app.state.registry.shutdown()


def test_http_submit_and_progress(http_client) -> None:
    envelope = make_envelope("s1", "alpha", make_vectors(1, 3))
    response = http_client.post(
        "/sessions/s1/submissions", content=encode_message(envelope)
    )
    assert response.status_code == 202
    ack = response.json()
    assert ack["stored_vectors"] == 3
    progress = http_client.get("/sessions/s1/progress")
    assert progress.status_code == 200
    assert progress.json()["submitted_clients"] == 1


def test_http_submit_rejects_malformed_json(http_client) -> None:
    response = http_client.post("/sessions/s1/submissions", content=b"{oops")
    assert response.status_code == 400


def test_http_submit_rejects_invalid_envelope(http_client) -> None:
    response = http_client.post(
        "/sessions/s1/submissions",
        content=json.dumps({"session_id": "s1"}).encode(),
    )
    assert response.status_code == 422


def test_http_results_flow(http_client) -> None:
    for seed, client_id in ((1, "alpha"), (2, "beta")):
        envelope = make_envelope("s1", client_id, make_vectors(seed, 4), threshold=0.3)
        assert (
            http_client.post(
                "/sessions/s1/submissions", content=encode_message(envelope)
            ).status_code
            == 202
        )
    http_client.app.state.registry.wait_idle()
    response = http_client.get("/sessions/s1/results", params={"client": "alpha"})
    assert response.status_code == 200
    body = response.json()
    assert body["client_id"] == "alpha"
    assert all(m["peer_client_id"] == "beta" for m in body["matches"])


def test_http_results_incomplete_conflict(http_client) -> None:
    envelope = make_envelope("s1", "alpha", make_vectors(1, 3))
    http_client.post("/sessions/s1/submissions", content=encode_message(envelope))
    response = http_client.get("/sessions/s1/results", params={"client": "alpha"})
    assert response.status_code == 409
    assert response.json()["detail"]["reason"] == "session incomplete"
    forced = http_client.get(
        "/sessions/s1/results", params={"client": "alpha", "force": "true"}
    )
    assert forced.status_code == 200


def test_http_results_requires_client_param(http_client) -> None:
    assert http_client.get("/sessions/s1/results").status_code == 422


def test_http_health(http_client) -> None:
    assert http_client.get("/health").json() == {"status": "ok"}
