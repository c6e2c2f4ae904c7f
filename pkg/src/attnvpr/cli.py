"""Unified command-line surface: attn-gen, aggregate, retrieve, evaluate,
sweep, demo.

Exit codes: 0 success, 1 usage error, 2 data error (the error class name is
printed to stderr).
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from . import aggregation, fixtures, geo_eval, llm_client, retrieval, tensor_io
from .errors import AttnVprError


def _parse_alphas(spec: str) -> tuple[float, ...]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise click.BadParameter("alpha range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise click.BadParameter("alpha step must be positive")
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(round(v, 10))
            v += step
        return tuple(values)
    return tuple(float(p) for p in spec.split(","))


def _parse_qe(spec: str) -> retrieval.QeConfig:
    kwargs = {}
    for item in spec.split(","):
        key, _, value = item.partition("=")
        if key == "k":
            kwargs["k"] = int(value)
        elif key == "alpha":
            kwargs["alpha_qe"] = float(value)
        else:
            raise click.BadParameter(f"unknown QE option {key!r}")
    return retrieval.QeConfig(**kwargs)


@click.group(name="attnvpr")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads; never changes output bytes.")
@click.option("--verbose", is_flag=True, help="Print progress information.")
@click.pass_context
def cli(ctx, threads, verbose):
    """Attention-modulated VPR descriptor pipeline."""
    if threads < 1:
        raise click.BadParameter("--threads must be >= 1")
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads
    ctx.obj["verbose"] = verbose


def _log(ctx, msg):
    if ctx.obj.get("verbose"):
        click.echo(msg, err=True)


@cli.command("attn-gen")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--city", required=True)
@click.option("--provider", required=True, help="fixture:DIR or http:URL")
@click.option("--model", default=None, help="Model name for the http provider.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def attn_gen(ctx, manifest_path, city, provider, model, out_dir):
    """Generate per-query attention responses into OUT/<id>.attn.json."""
    manifest = tensor_io.load_manifest(manifest_path)
    cfg = llm_client.ProviderConfig.parse(provider, model=model, max_concurrent=ctx.obj["threads"])
    specs = llm_client.generate_attention_files(
        manifest, city, cfg, out_dir, image_root=Path(manifest_path).parent
    )
    _log(ctx, f"wrote {len(specs)} attention files to {out_dir}")


@cli.command("aggregate")
@click.option("--features", "features_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--attention", "attention_dir", default=None, type=click.Path(exists=True),
              help="Directory of <id>.attn.json files; omit for database-side descriptors.")
@click.option("--alpha", type=float, default=0.0, show_default=True)
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def aggregate(ctx, features_dir, manifest_path, attention_dir, alpha, profile_path, out_path):
    """Aggregate feature maps into a descriptor database (.vdb)."""
    manifest = tensor_io.load_manifest(manifest_path)
    profile = aggregation.load_profile(profile_path)
    db = aggregation.aggregate_set(
        manifest,
        features_dir,
        profile,
        attention_dir=attention_dir,
        alpha=alpha,
        threads=ctx.obj["threads"],
    )
    tensor_io.write_db(db, out_path)
    _log(ctx, f"wrote {db.size} descriptors (dim {db.dim}) to {out_path}")


@cli.command("retrieve")
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--topn", type=int, default=10, show_default=True)
@click.option("--qe", "qe_spec", default=None, help="Average query expansion, e.g. k=5,alpha=0.8")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def retrieve(ctx, db_path, queries_path, topn, qe_spec, out_path):
    """Rank queries against a descriptor database, one JSON object per line."""
    db = tensor_io.read_db(db_path)
    queries = tensor_io.read_db(queries_path)
    qe = _parse_qe(qe_spec) if qe_spec else None
    results = retrieval.run_retrieval(queries, db, topn=topn, qe=qe, threads=ctx.obj["threads"])
    retrieval.write_results_jsonl(results, out_path)
    _log(ctx, f"wrote {len(results)} ranked lists to {out_path}")


@cli.command("evaluate")
@click.option("--results", "results_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--threshold-m", type=float, default=25.0, show_default=True)
@click.option("--recall", "recall_spec", default="1,5,10", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def evaluate(ctx, results_path, manifest_path, threshold_m, recall_spec, out_path):
    """Compute Recall@N against manifest ground truth; writes report CSV."""
    results = retrieval.read_results_jsonl(results_path)
    manifest = tensor_io.load_manifest(manifest_path)
    ns = tuple(sorted(int(n) for n in recall_spec.split(",")))
    cfg = geo_eval.EvalConfig(threshold_m=threshold_m, ns=ns)
    report = geo_eval.recall_at_n(results, manifest, cfg)
    tensor_io._atomic_write(out_path, geo_eval.report_to_csv(report).encode("utf-8"))
    for n in ns:
        _log(ctx, f"Recall@{n}: {report.recalls[n]:.1f}%")


@cli.command("sweep")
@click.option("--features", "features_dir", required=True, type=click.Path(exists=True))
@click.option("--attention", "attention_dir", required=True, type=click.Path(exists=True))
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True))
@click.option("--alphas", default="0:1:0.1", show_default=True)
@click.option("--threshold-m", type=float, default=25.0, show_default=True)
@click.option("--topn", type=int, default=10, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def sweep(ctx, features_dir, attention_dir, db_path, manifest_path, profile_path,
          alphas, threshold_m, topn, out_dir):
    """Evaluate the attention blend across an alpha lattice; emits CSV, JSON,
    and a recall-vs-alpha plot."""
    db = tensor_io.read_db(db_path)
    manifest = tensor_io.load_manifest(manifest_path)
    profile = aggregation.load_profile(profile_path)
    cfg = geo_eval.EvalConfig(threshold_m=threshold_m)
    report = geo_eval.alpha_sweep(
        features_dir,
        attention_dir,
        db,
        manifest,
        profile,
        cfg,
        alphas=_parse_alphas(alphas),
        topn=topn,
        threads=ctx.obj["threads"],
    )
    written = geo_eval.emit_report(report, out_dir, stem="sweep")
    _log(ctx, "wrote " + ", ".join(str(p) for p in written))


@cli.command("demo")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--n-db", type=int, default=12, show_default=True)
@click.option("--n-queries", type=int, default=8, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def demo(ctx, seed, n_db, n_queries, out_dir):
    """End-to-end smoke over a generated synthetic fixture: gen-fixture,
    aggregate, retrieve, and a full alpha sweep."""
    out_dir = Path(out_dir)
    fixture = fixtures.gen_fixture(seed, n_db, n_queries, out_dir / "fixture")
    _log(ctx, f"fixture at {fixture}")
    profile = aggregation.load_profile(fixture / "model.toml")
    db_manifest = tensor_io.load_manifest(fixture / "db_manifest.csv")
    q_manifest = tensor_io.load_manifest(fixture / "query_manifest.csv")
    db = aggregation.aggregate_set(
        db_manifest, fixture / "features", profile, threads=ctx.obj["threads"]
    )
    tensor_io.write_db(db, out_dir / "db.vdb")
    cfg = geo_eval.EvalConfig(threshold_m=25.0)
    report = geo_eval.alpha_sweep(
        fixture / "features",
        fixture / "attention",
        db,
        q_manifest,
        profile,
        cfg,
        threads=ctx.obj["threads"],
    )
    written = geo_eval.emit_report(report, out_dir / "sweep", stem="sweep")
    _log(ctx, "wrote " + ", ".join(str(p) for p in written))
    baseline = report.grid[0][1].recalls[1]
    click.echo(f"demo complete; baseline Recall@1 = {baseline:.1f}%")


def dispatch(argv: list[str]) -> int:
    """Run the CLI and map outcomes to documented exit codes."""
    try:
        cli.main(args=list(argv), prog_name="attnvpr", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except AttnVprError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
