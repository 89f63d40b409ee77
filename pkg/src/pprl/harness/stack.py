"""Booting the full service stack for desk-scale experiments.

One broker plus one encoder and one resolver per station, each a real
uvicorn server on an ephemeral localhost port.  The harness writes the
station inputs (MPI store, scheme file, pseudonym list), drives the
train orchestrator against the live services and afterwards reads the
broker's stored pair set back for pair-level evaluation.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx
import uvicorn
from fastapi import FastAPI

from pprl.harness.evaluate import GroundTruth, InstanceRef, write_truth
from pprl.harness.generate import DatasetRecord, export_mpi
from pprl.masking import EncodingScheme
from pprl.protocol import SchemeDoc
from pprl.services import (
    BrokerConfig,
    ResolverConfig,
    create_broker_app,
    create_encoder_app,
    create_resolver_app,
)
from pprl.train import TrainPlan, load_plan

__all__ = ["ServerHandle", "ServiceStack", "StackExperiment"]

_STARTUP_TIMEOUT = 15.0


@dataclass
class ServerHandle:
    app: FastAPI
    server: uvicorn.Server
    thread: threading.Thread
    url: str


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def start_server(app: FastAPI) -> ServerHandle:
    port = _free_port()
    config = uvicorn.Config(
        app, host="127.0.0.1", port=port, log_level="warning", access_log=False
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + _STARTUP_TIMEOUT
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start in time")
        if not thread.is_alive():
            raise RuntimeError("server thread died during startup")
        time.sleep(0.01)
    return ServerHandle(
        app=app, server=server, thread=thread, url=f"http://127.0.0.1:{port}"
    )


def stop_server(handle: ServerHandle) -> None:
    handle.server.should_exit = True
    handle.thread.join(timeout=10)


@dataclass
class _Station:
    name: str
    records: Sequence[DatasetRecord]
    encoder: ServerHandle | None = None
    resolver: ServerHandle | None = None
    pseudonym_file: Path | None = None


class ServiceStack:
    """Context manager running broker, encoders and resolvers locally."""

    def __init__(
        self,
        work_dir: str | Path,
        files: Mapping[str, Sequence[DatasetRecord]],
        scheme: EncodingScheme,
        record_broker_traffic: bool = False,
        broker_config: BrokerConfig | None = None,
        strict_resolvers: bool = False,
    ) -> None:
        self.work_dir = Path(work_dir)
        self.scheme = scheme
        self._stations = [
            _Station(name=name, records=list(records))
            for name, records in files.items()
        ]
        self._record_traffic = record_broker_traffic
        self._broker_config = broker_config or BrokerConfig()
        self._strict = strict_resolvers
        self.broker: ServerHandle | None = None

    # -- lifecycle ----------------------------------------------------

    def __enter__(self) -> "ServiceStack":
        self.work_dir.mkdir(parents=True, exist_ok=True)
        scheme_path = self.work_dir / "scheme.json"
        scheme_path.write_text(
            SchemeDoc.from_scheme(self.scheme).model_dump_json(indent=2),
            encoding="utf-8",
        )
        self.broker = start_server(
            create_broker_app(
                self._broker_config, record_traffic=self._record_traffic
            )
        )
        for station in self._stations:
            station_dir = self.work_dir / "stations" / station.name
            station_dir.mkdir(parents=True, exist_ok=True)
            mpi_path = station_dir / "mpi.csv"
            export_mpi(station.records, mpi_path)
            pseudonym_file = station_dir / "pseudonyms.txt"
            pseudonym_file.write_text(
                "".join(r.pseudonym + "\n" for r in station.records),
                encoding="utf-8",
            )
            station.pseudonym_file = pseudonym_file
            station.encoder = start_server(create_encoder_app())
            resolver_config = ResolverConfig(
                mpi_path=mpi_path,
                scheme_path=scheme_path,
                binding_store_path=station_dir / "bindings.jsonl",
                encoder_url=station.encoder.url,
                broker_url=self.broker.url,
                strict=self._strict,
            )
            station.resolver = start_server(
                create_resolver_app(resolver_config)
            )
        return self

    def __exit__(self, *exc_info) -> None:
        for station in self._stations:
            if station.resolver:
                stop_server(station.resolver)
            if station.encoder:
                stop_server(station.encoder)
        if self.broker:
            stop_server(self.broker)

    # -- plan & evaluation helpers -------------------------------------

    def write_plan(
        self,
        threshold: float,
        session_id: str | None = None,
        expected_clients: int | None = None,
        output_subdir: str = "out",
    ) -> Path:
        assert self.broker is not None, "stack not started"
        plan = {
            "config": {
                "session_id": session_id,
                "threshold": threshold,
                "expected_clients": expected_clients,
            },
            "broker_url": self.broker.url,
            "output_dir": str(self.work_dir / output_subdir),
            "stations": [
                {
                    "name": station.name,
                    "resolver_url": station.resolver.url,
                    "pseudonym_file": str(station.pseudonym_file),
                }
                for station in self._stations
            ],
        }
        path = self.work_dir / "plan.json"
        path.write_text(json.dumps(plan, indent=2), encoding="utf-8")
        return path

    def load_plan(self, path: Path) -> TrainPlan:
        return load_plan(path)

    def client(self) -> httpx.Client:
        return httpx.Client(timeout=60.0)

    def ground_truth(self) -> GroundTruth:
        return GroundTruth.from_files(
            {s.name: s.records for s in self._stations}
        )

    def write_truth_csv(self, path: str | Path) -> None:
        write_truth({s.name: s.records for s in self._stations}, path)

    def broker_registry(self):
        assert self.broker is not None, "stack not started"
        return self.broker.app.state.registry

    def broker_traffic(self) -> list[tuple[str, bytes]]:
        assert self.broker is not None, "stack not started"
        return list(self.broker.app.state.traffic)

    def predicted_instance_pairs(
        self, session_id: str, report_path: Path
    ) -> list[tuple[InstanceRef, InstanceRef]]:
        """Map the broker's stored pairs back to (file, pseudonym) refs.

        Uses the submit report for the client-to-station mapping and the
        per-station pseudonym order the harness itself created.
        """
        report = json.loads(report_path.read_text(encoding="utf-8"))
        station_by_client = {
            info["client_id"]: name
            for name, info in report["stations"].items()
            if info.get("client_id")
        }
        order = {
            station.name: [r.pseudonym for r in station.records]
            for station in self._stations
        }
        pairs: list[tuple[InstanceRef, InstanceRef]] = []
        for pair in self.broker_registry().stored_pairs(session_id):
            left_station = station_by_client[pair.left_client]
            right_station = station_by_client[pair.right_client]
            pairs.append(
                (
                    (left_station, order[left_station][pair.left_index]),
                    (right_station, order[right_station][pair.right_index]),
                )
            )
        return pairs

    @property
    def total_comparisons(self) -> int:
        sizes = [len(s.records) for s in self._stations]
        return sum(
            sizes[i] * sizes[j]
            for i in range(len(sizes))
            for j in range(i + 1, len(sizes))
        )


@dataclass
class StackExperiment:
    """Bundle of everything a stack run produced."""

    session_id: str
    exit_code: int
    predicted: list[tuple[InstanceRef, InstanceRef]] = field(
        default_factory=list
    )
    station_csvs: dict[str, Path] = field(default_factory=dict)
    report_path: Path | None = None
