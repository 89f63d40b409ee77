"""Train orchestrator: drives a linkage session across stations.

A *train* is one linkage round described by a plan file.  The
orchestrator is a thin client: it posts pseudonym lists to each
station's resolver, watches the broker's progress, fetches per-station
results and writes them as CSV.  It never sees records or vectors.

Plan file (JSON)::

    {
      "config": {"session_id": "…", "threshold": 0.8, "expected_clients": 3},
      "broker_url": "http://broker:8300",
      "output_dir": "out",
      "stations": [
        {"name": "clinic-a",
         "resolver_url": "http://clinic-a:8100",
         "pseudonym_file": "a_pseudonyms.txt"}
      ]
    }

``session_id`` may be omitted; the submit phase then generates one and
records it in the submit report, which the results phase picks up.

Two execution styles produce identical outputs: the classic two-phase
run (``submit`` everywhere, come back later for ``results``) and the
``federated`` single-round-trip run that submits to all stations
concurrently and waits for completion.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
from pydantic import BaseModel, ConfigDict, Field, model_validator

__all__ = [
    "EXIT_HARD_FAILURE",
    "EXIT_PARTIAL",
    "EXIT_SUCCESS",
    "StationOutcome",
    "TrainPlan",
    "load_plan",
    "run_federated",
    "run_results",
    "run_submit",
]

EXIT_SUCCESS = 0
EXIT_PARTIAL = 1
EXIT_HARD_FAILURE = 2

_REPORT_NAME = "submit_report.json"


class StationPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    resolver_url: str = Field(min_length=1)
    pseudonym_file: str = Field(min_length=1)


class PlanConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_id: str | None = None
    threshold: float = Field(ge=0.0, le=1.0)
    expected_clients: int | None = Field(default=None, ge=1)


class TrainPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: PlanConfig
    broker_url: str = Field(min_length=1)
    output_dir: str = Field(min_length=1)
    stations: tuple[StationPlan, ...] = Field(min_length=2)

    @model_validator(mode="after")
    def _unique_names(self) -> "TrainPlan":
        names = [s.name for s in self.stations]
        if len(set(names)) != len(names):
            raise ValueError("station names must be unique")
        return self


@dataclass
class StationOutcome:
    station: str
    ok: bool
    client_id: str | None = None
    resolved: int = 0
    unresolved: int = 0
    error: str | None = None


def load_plan(path: str | Path) -> TrainPlan:
    return TrainPlan.model_validate_json(Path(path).read_text(encoding="utf-8"))


def _read_pseudonyms(path: Path) -> list[str]:
    lines = [
        line.strip()
        for line in path.read_text(encoding="utf-8").splitlines()
    ]
    return [line for line in lines if line]


def _submit_station(
    client: httpx.Client,
    station: StationPlan,
    session_id: str,
    plan: TrainPlan,
    plan_dir: Path,
) -> StationOutcome:
    pseudonyms = _read_pseudonyms(plan_dir / station.pseudonym_file)
    body = {
        "config": {
            "session_id": session_id,
            "threshold": plan.config.threshold,
            "expected_clients": plan.config.expected_clients,
        },
        "pseudonyms": pseudonyms,
        "broker_url": plan.broker_url,
    }
    try:
        response = client.post(f"{station.resolver_url}/sessions", json=body)
    except httpx.HTTPError as exc:
        return StationOutcome(station.name, ok=False, error=str(exc))
    if response.status_code != 201:
        return StationOutcome(
            station.name,
            ok=False,
            error=f"{response.status_code}: {response.text}",
        )
    receipt = response.json()
    return StationOutcome(
        station=station.name,
        ok=True,
        client_id=receipt["client_id"],
        resolved=receipt["resolved"],
        unresolved=receipt["unresolved"],
    )


def _write_report(
    plan: TrainPlan, session_id: str, outcomes: Sequence[StationOutcome]
) -> Path:
    out_dir = Path(plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "session_id": session_id,
        "stations": {
            o.station: {
                "ok": o.ok,
                "client_id": o.client_id,
                "resolved": o.resolved,
                "unresolved": o.unresolved,
                "error": o.error,
            }
            for o in outcomes
        },
    }
    path = out_dir / _REPORT_NAME
    path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    return path


def _exit_code(outcomes: Sequence[StationOutcome]) -> int:
    succeeded = sum(1 for o in outcomes if o.ok)
    if succeeded == len(outcomes):
        return EXIT_SUCCESS
    if succeeded > 0:
        return EXIT_PARTIAL
    return EXIT_HARD_FAILURE


def _effective_session_id(plan: TrainPlan) -> str:
    if plan.config.session_id:
        return plan.config.session_id
    report_path = Path(plan.output_dir) / _REPORT_NAME
    if report_path.exists():
        return json.loads(report_path.read_text(encoding="utf-8"))["session_id"]
    raise FileNotFoundError(
        "plan has no session_id and no submit report exists yet at "
        f"{report_path}"
    )


def run_submit(
    plan: TrainPlan,
    client: httpx.Client,
    plan_dir: Path | None = None,
    strict: bool = False,
) -> tuple[int, list[StationOutcome], str]:
    """Phase one: submit the plan's pseudonym lists station by station.

    Returns (exit code, per-station outcomes, session id).  The report
    lands in ``output_dir`` so the results phase can pick up the session
    id and the client-to-station mapping.  With ``strict`` the run
    aborts at the first failing station; later stations are not visited.
    """
    plan_dir = plan_dir or Path.cwd()
    session_id = plan.config.session_id or str(uuid.uuid4())
    outcomes = []
    for station in plan.stations:
        outcome = _submit_station(client, station, session_id, plan, plan_dir)
        outcomes.append(outcome)
        if strict and not outcome.ok:
            break
    _write_report(plan, session_id, outcomes)
    return _exit_code(outcomes), outcomes, session_id


def _poll_progress(
    plan: TrainPlan,
    client: httpx.Client,
    session_id: str,
    timeout: float,
    poll_interval: float,
) -> dict:
    deadline = time.monotonic() + timeout
    last: dict = {}
    while True:
        try:
            response = client.get(
                f"{plan.broker_url}/sessions/{session_id}/progress"
            )
        except httpx.HTTPError:
            response = None
        if response is not None and response.status_code == 200:
            last = response.json()
            if last.get("complete"):
                return last
        if time.monotonic() >= deadline:
            raise TimeoutError(
                f"session {session_id} incomplete after {timeout}s; "
                f"last progress: {last or 'unavailable'}"
            )
        time.sleep(poll_interval)


def _client_name_map(plan: TrainPlan) -> dict[str, str]:
    report_path = Path(plan.output_dir) / _REPORT_NAME
    if not report_path.exists():
        return {}
    report = json.loads(report_path.read_text(encoding="utf-8"))
    return {
        info["client_id"]: name
        for name, info in report.get("stations", {}).items()
        if info.get("client_id")
    }


def _fetch_station_results(
    client: httpx.Client,
    station: StationPlan,
    session_id: str,
    plan: TrainPlan,
    names: dict[str, str],
    force: bool,
) -> tuple[StationOutcome, list[tuple[str, str, float]]]:
    try:
        response = client.post(
            f"{station.resolver_url}/sessions/{session_id}/results",
            json={"force": force, "broker_url": plan.broker_url},
        )
    except httpx.HTTPError as exc:
        return StationOutcome(station.name, ok=False, error=str(exc)), []
    if response.status_code != 200:
        return (
            StationOutcome(
                station.name,
                ok=False,
                error=f"{response.status_code}: {response.text}",
            ),
            [],
        )
    rows = [
        (
            match["pseudonym"],
            names.get(match["peer_client"], match["peer_client"]),
            float(match["similarity"]),
        )
        for match in response.json()["matches"]
    ]
    return StationOutcome(station.name, ok=True), rows


def _write_matches_csv(
    out_dir: Path, station: str, rows: list[tuple[str, str, float]]
) -> Path:
    path = out_dir / f"{station}_matches.csv"
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pseudonym", "peer_client", "similarity"])
        for pseudonym, peer, similarity in sorted(rows):
            writer.writerow([pseudonym, peer, repr(similarity)])
    return path


def run_results(
    plan: TrainPlan,
    client: httpx.Client,
    timeout: float = 120.0,
    poll_interval: float = 0.2,
    force: bool = False,
) -> tuple[int, list[StationOutcome]]:
    """Phase two: wait for completion, then collect per-station results.

    Writes ``<output_dir>/<station>_matches.csv`` for every station that
    answered, with rows sorted and peer client ids translated to station
    names where the submit report knows them.
    """
    session_id = _effective_session_id(plan)
    if not force:
        try:
            _poll_progress(client=client, plan=plan, session_id=session_id,
                           timeout=timeout, poll_interval=poll_interval)
        except TimeoutError as exc:
            return EXIT_HARD_FAILURE, [
                StationOutcome("(broker)", ok=False, error=str(exc))
            ]
    names = _client_name_map(plan)
    out_dir = Path(plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for station in plan.stations:
        outcome, rows = _fetch_station_results(
            client, station, session_id, plan, names, force
        )
        outcomes.append(outcome)
        if outcome.ok:
            _write_matches_csv(out_dir, station.name, rows)
    return _exit_code(outcomes), outcomes


def run_federated(
    plan: TrainPlan,
    client: httpx.Client,
    timeout: float = 120.0,
    poll_interval: float = 0.2,
    plan_dir: Path | None = None,
) -> tuple[int, list[StationOutcome]]:
    """Single-round-trip execution: concurrent submits, then results.

    Requires ``expected_clients`` in the plan config, otherwise the
    broker could never report completion.  Output files are identical to
    a two-phase run over the same inputs.
    """
    if plan.config.expected_clients is None:
        return EXIT_HARD_FAILURE, [
            StationOutcome(
                "(plan)",
                ok=False,
                error="federated execution requires expected_clients",
            )
        ]
    plan_dir = plan_dir or Path.cwd()
    session_id = plan.config.session_id or str(uuid.uuid4())
    with concurrent.futures.ThreadPoolExecutor(
        max_workers=len(plan.stations)
    ) as pool:
        futures = {
            pool.submit(
                _submit_station, client, station, session_id, plan, plan_dir
            ): station.name
            for station in plan.stations
        }
        outcomes = [future.result() for future in futures]
    # Keep report order aligned with the plan regardless of completion order.
    outcomes.sort(key=lambda o: [s.name for s in plan.stations].index(o.station))
    _write_report(plan, session_id, outcomes)
    if not all(o.ok for o in outcomes):
        return _exit_code(outcomes), outcomes
    code, fetch_outcomes = run_results(
        plan, client, timeout=timeout, poll_interval=poll_interval
    )
    return code, outcomes + fetch_outcomes
