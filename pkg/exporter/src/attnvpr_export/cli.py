"""attnvpr-export command line: run a registered VPR model over a manifest
and emit the engine's binary tensor formats."""
from __future__ import annotations

import sys

import click

from attnvpr.errors import AttnVprError

from .errors import ExporterError
from .export import ExportJob, export_features
from .models import MODEL_SPECS


@click.command(name="attnvpr-export")
@click.option("--model", "model_name", required=True,
              type=click.Choice(sorted(MODEL_SPECS)), help="Released model to export from.")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--device", default="cpu", show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--image-root", default=None, type=click.Path(exists=True),
              help="Base directory for relative manifest paths (default: manifest's directory).")
def cli(model_name, manifest_path, out_dir, device, batch_size, image_root):
    """Export per-image feature tensors from a released VPR model."""
    job = ExportJob(
        model_name=model_name,
        manifest_path=manifest_path,
        out_dir=out_dir,
        device=device,
        batch_size=batch_size,
        image_root=image_root,
    )
    ids = export_features(job)
    click.echo(f"exported {len(ids)} images to {out_dir}")


def dispatch(argv: list[str]) -> int:
    try:
        cli.main(args=list(argv), prog_name="attnvpr-export", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ExporterError, AttnVprError) as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
