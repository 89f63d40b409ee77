"""Command line interface.

Data tooling (``gen``, ``corrupt``, ``split``, ``shuffle``,
``export-mpi``, ``make-scheme``, ``eval``, ``sweep``), the train
orchestrator (``submit``, ``results``, ``federated``) and service
launchers (``serve-encoder``, ``serve-resolver``, ``serve-broker``).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import uvicorn

from pprl import train as train_mod
from pprl.harness.corrupt import CorruptionConfig, corrupt_records
from pprl.harness.evaluate import (
    evaluate,
    read_predicted_pairs,
    read_truth,
    write_truth,
)
from pprl.harness.generate import (
    GeneratorConfig,
    export_mpi,
    generate,
    read_dataset,
    write_dataset,
)
from pprl.harness.pipeline import (
    build_scheme,
    cross_file_similarities,
    default_thresholds,
    sweep_argmax,
    write_sweep_csv,
)
from pprl.harness.splitter import interleave_versions, split_records
from pprl.protocol import SchemeDoc
from pprl.services import (
    BrokerConfig,
    ResolverConfig,
    create_broker_app,
    create_encoder_app,
    create_resolver_app,
)


@click.group()
def main() -> None:
    """Privacy-preserving record linkage toolkit."""


# ---------------------------------------------------------------- data


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen(config_path: str, out_dir: str) -> None:
    """Generate a synthetic dataset into <out>/records.csv."""
    config = GeneratorConfig.from_file(config_path)
    records = generate(config)
    path = Path(out_dir) / "records.csv"
    write_dataset(records, path)
    click.echo(f"wrote {len(records)} records to {path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--tag", default="c1", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def corrupt(in_path: str, config_path: str | None, tag: str, out_path: str) -> None:
    """Write a corrupted copy of a dataset."""
    config = (
        CorruptionConfig.from_file(config_path)
        if config_path
        else CorruptionConfig()
    )
    records = read_dataset(in_path)
    corrupted = corrupt_records(records, config, tag=tag)
    write_dataset(corrupted, out_path)
    click.echo(f"wrote {len(corrupted)} corrupted records to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--files", "file_count", required=True, type=int)
@click.option("--common", "common_count", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def split(
    in_path: str, file_count: int, common_count: int, seed: int, out_dir: str
) -> None:
    """Split a dataset into files sharing a common subset.

    Writes file_1.csv … file_n.csv plus truth.csv into <out>.
    """
    records = read_dataset(in_path)
    files = split_records(records, file_count, common_count, seed=seed)
    out = Path(out_dir)
    labelled = {}
    for i, file_records in enumerate(files, start=1):
        label = f"file_{i}"
        write_dataset(file_records, out / f"{label}.csv")
        labelled[label] = file_records
    write_truth(labelled, out / "truth.csv")
    sizes = ", ".join(str(len(f)) for f in files)
    click.echo(f"wrote {len(files)} files ({sizes} records) to {out}")


@main.command()
@click.option(
    "--in",
    "in_paths",
    required=True,
    multiple=True,
    type=click.Path(exists=True),
    help="Aligned version files (original plus corrupted copies).",
)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def shuffle(in_paths: tuple[str, ...], seed: int, out_dir: str) -> None:
    """Interleave record versions so matches only exist across files."""
    versions = [read_dataset(path) for path in in_paths]
    files = interleave_versions(versions, seed=seed)
    out = Path(out_dir)
    labelled = {}
    for i, file_records in enumerate(files, start=1):
        label = f"file_{i}"
        write_dataset(file_records, out / f"{label}.csv")
        labelled[label] = file_records
    write_truth(labelled, out / "truth.csv")
    click.echo(f"wrote {len(files)} interleaved files to {out}")


@main.command("export-mpi")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def export_mpi_cmd(in_path: str, out_path: str) -> None:
    """Strip entity ids: dataset file to station MPI store."""
    records = read_dataset(in_path)
    export_mpi(records, out_path)
    click.echo(f"wrote MPI store with {len(records)} rows to {out_path}")


@main.command("make-scheme")
@click.option(
    "--in",
    "in_paths",
    required=True,
    multiple=True,
    type=click.Path(exists=True),
    help="Dataset files to estimate attribute weights from.",
)
@click.option("--study-secret", required=True)
@click.option("--filter-bits", default=1024, show_default=True, type=int)
@click.option("--q", default=2, show_default=True, type=int)
@click.option("--unbalanced", is_flag=True, default=False)
@click.option("--out", "out_path", required=True, type=click.Path())
def make_scheme(
    in_paths: tuple[str, ...],
    study_secret: str,
    filter_bits: int,
    q: int,
    unbalanced: bool,
    out_path: str,
) -> None:
    """Derive an encoding scheme from data and write it as JSON."""
    record_sets = [read_dataset(path) for path in in_paths]
    scheme = build_scheme(
        record_sets,
        study_secret,
        q=q,
        filter_bits=filter_bits,
        balanced=not unbalanced,
    )
    doc = SchemeDoc.from_scheme(scheme)
    Path(out_path).write_text(doc.model_dump_json(indent=2), encoding="utf-8")
    click.echo(f"wrote scheme ({scheme.vector_bits}-bit vectors) to {out_path}")


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option(
    "--total",
    "total_comparisons",
    type=int,
    default=None,
    help="Comparison count; defaults to all cross-file pairs.",
)
def eval_cmd(pred_path: str, truth_path: str, total_comparisons: int | None) -> None:
    """Score predicted pairs against ground truth."""
    predicted = read_predicted_pairs(pred_path)
    truth = read_truth(truth_path)
    report = evaluate(predicted, truth, total_comparisons)
    cm = report.confusion
    click.echo(
        json.dumps(
            {
                "tp": cm.tp,
                "fp": cm.fp,
                "fn": cm.fn,
                "tn": cm.tn,
                "precision": report.metrics.precision,
                "recall": report.metrics.recall,
                "f1": report.metrics.f1,
                "degenerate": report.metrics.degenerate,
            },
            indent=2,
        )
    )


@main.command("sweep")
@click.option(
    "--dataset",
    "dataset_dir",
    required=True,
    type=click.Path(exists=True),
    help="Directory with file_*.csv station files.",
)
@click.option("--scheme", "scheme_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def sweep_cmd(dataset_dir: str, scheme_path: str, out_path: str) -> None:
    """Sweep thresholds 0.00 … 1.00 over a split dataset."""
    files = {
        path.stem: read_dataset(path)
        for path in sorted(Path(dataset_dir).glob("file_*.csv"))
    }
    if len(files) < 2:
        raise click.ClickException(
            f"{dataset_dir} holds {len(files)} station files, need >= 2"
        )
    scheme = SchemeDoc.model_validate_json(
        Path(scheme_path).read_text(encoding="utf-8")
    ).to_scheme()
    corpus = cross_file_similarities(files, scheme)
    rows = corpus.sweep(default_thresholds())
    write_sweep_csv(rows, out_path)
    best = sweep_argmax(rows)
    click.echo(
        f"wrote {len(rows)} rows to {out_path}; best F1 {best.f1:.4f} "
        f"at threshold {best.threshold:.2f}"
    )


# ---------------------------------------------------------------- train


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--strict", is_flag=True, default=False,
              help="Abort at the first failing station.")
def submit(plan_path: str, strict: bool) -> None:
    """Phase one: submit pseudonym lists to every station."""
    plan = train_mod.load_plan(plan_path)
    with httpx.Client(timeout=120.0) as client:
        code, outcomes, session_id = train_mod.run_submit(
            plan, client, plan_dir=Path(plan_path).parent, strict=strict
        )
    click.echo(f"session {session_id}")
    for outcome in outcomes:
        if outcome.ok:
            click.echo(
                f"  {outcome.station}: resolved {outcome.resolved}, "
                f"unresolved {outcome.unresolved}"
            )
        else:
            click.echo(f"  {outcome.station}: FAILED ({outcome.error})")
    sys.exit(code)


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--timeout", default=120.0, show_default=True, type=float)
@click.option("--poll", default=1.0, show_default=True, type=float)
@click.option("--force", is_flag=True, default=False)
def results(plan_path: str, timeout: float, poll: float, force: bool) -> None:
    """Phase two: collect per-station match lists."""
    plan = train_mod.load_plan(plan_path)
    with httpx.Client(timeout=120.0) as client:
        code, outcomes = train_mod.run_results(
            plan, client, timeout=timeout, poll_interval=poll, force=force
        )
    for outcome in outcomes:
        status = "ok" if outcome.ok else f"FAILED ({outcome.error})"
        click.echo(f"  {outcome.station}: {status}")
    sys.exit(code)


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--timeout", default=120.0, show_default=True, type=float)
@click.option("--poll", default=1.0, show_default=True, type=float)
def federated(plan_path: str, timeout: float, poll: float) -> None:
    """Single-round-trip execution: submit everywhere, wait, collect."""
    plan = train_mod.load_plan(plan_path)
    with httpx.Client(timeout=120.0) as client:
        code, outcomes = train_mod.run_federated(
            plan,
            client,
            timeout=timeout,
            poll_interval=poll,
            plan_dir=Path(plan_path).parent,
        )
    for outcome in outcomes:
        status = "ok" if outcome.ok else f"FAILED ({outcome.error})"
        click.echo(f"  {outcome.station}: {status}")
    sys.exit(code)


# ---------------------------------------------------------------- serve


@main.command("serve-encoder")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8200, show_default=True, type=int)
def serve_encoder(host: str, port: int) -> None:
    """Run the stateless encoder service."""
    uvicorn.run(create_encoder_app(), host=host, port=port)


@main.command("serve-resolver")
@click.option("--mpi", "mpi_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", "scheme_path", required=True, type=click.Path(exists=True))
@click.option("--bindings", "binding_path", required=True, type=click.Path())
@click.option("--encoder-url", required=True)
@click.option("--broker-url", required=True)
@click.option("--strict", is_flag=True, default=False)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8100, show_default=True, type=int)
def serve_resolver(
    mpi_path: str,
    scheme_path: str,
    binding_path: str,
    encoder_url: str,
    broker_url: str,
    strict: bool,
    host: str,
    port: int,
) -> None:
    """Run a station resolver service."""
    config = ResolverConfig(
        mpi_path=Path(mpi_path),
        scheme_path=Path(scheme_path),
        binding_store_path=Path(binding_path),
        encoder_url=encoder_url,
        broker_url=broker_url,
        strict=strict,
    )
    uvicorn.run(create_resolver_app(config), host=host, port=port)


@main.command("serve-broker")
@click.option("--snapshot", "snapshot_path", type=click.Path(), default=None)
@click.option("--ttl", default=86400.0, show_default=True, type=float)
@click.option("--parallelism", default=2, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8300, show_default=True, type=int)
def serve_broker(
    snapshot_path: str | None,
    ttl: float,
    parallelism: int,
    host: str,
    port: int,
) -> None:
    """Run the central match broker."""
    config = BrokerConfig(
        matcher_parallelism=parallelism,
        session_ttl_seconds=ttl,
        snapshot_path=Path(snapshot_path) if snapshot_path else None,
    )
    uvicorn.run(create_broker_app(config), host=host, port=port)


if __name__ == "__main__":
    main()
