"""
Command-line interface: `changechip run`, `changechip eval`, `changechip synth`.

Exit codes: 0 success, 2 pipeline failure, 3 invalid configuration or options.
"""
import functools
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .config import load_config, parse_roi
from .errors import ChangeChipError, ConfigValidationError, StageError
from .evaluation import DatasetPair, format_table, run_dataset, write_manifest
from .imaging import load_image, save_image, save_mask
from .pipeline import run_pipeline
from .synthetic import generate_defect_pair, load_defect_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_FAILURE = 2
EXIT_BAD_CONFIG = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def pipeline_options(command):
    """Options shared by `run` and `eval`; unset options fall back to config file, environment, defaults."""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="YAML file with configuration values"),
        click.option("--h", "h", type=int, help="Window size (odd, default 5)"),
        click.option("--classes", "n", type=int, help="Number of Kmeans classes (default 16)"),
        click.option("--s-rgb", "s_rgb", type=int, help="Components kept from the RGB eigenspace (default 9)"),
        click.option("--s-gray", "s_gray", type=int, help="Components kept from the gray eigenspace (default 3)"),
        click.option("--eps", type=float, help="DBSCAN eps for the class MSE scores (default by modality)"),
        click.option("--ratio", "ratio_threshold", type=float, help="Lowe ratio threshold (default 0.8)"),
        click.option("--ransac-threshold", type=float, help="RANSAC inlier threshold in pixels (default 3.0)"),
        click.option("--ransac-iters", type=int, help="RANSAC iterations (default 2000)"),
        click.option("--seed", type=int, help="Seed for RANSAC and Kmeans (default 0)"),
        click.option("--roi", help="Crop rectangle x,y,w,h applied to both images"),
        click.option("--skip-registration", is_flag=True, default=None, help="Assume the pair is pre-aligned"),
        click.option("--skip-histogram", is_flag=True, default=None, help="Do not match histograms"),
        click.option("--modality", type=click.Choice(["optical", "radiographic"]), help="Image modality"),
        click.option("--discard", type=click.Choice(["cluster", "lowest"]),
                     help="Discard the whole lowest-MSE DBSCAN cluster or only the lowest class"),
        click.option("--descriptor", type=click.Choice(["color", "gray"]), help="Pixel descriptor variant"),
        click.option("--workers", type=int, help="Dataset pairs processed concurrently"),
        click.option("--debug", is_flag=True, default=None, help="Also write matches.png and features.bin"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def build_cli_config(config_path=None, roi=None, ransac_threshold=None, ransac_iters=None, **values):
    overrides = dict(values)
    if roi is not None:
        overrides["roi"] = parse_roi(roi)
    ransac = {k: v for k, v in (("threshold_px", ransac_threshold), ("iters", ransac_iters)) if v is not None}
    if ransac:
        overrides["ransac"] = ransac
    return load_config(config_path=config_path, **overrides)


def exit_codes(command):
    """Turn library errors into the documented exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except ConfigValidationError as e:
            click.echo(f"ERROR: {e}", err=True)
            ctx.exit(EXIT_BAD_CONFIG)
        except StageError as e:
            click.echo(f"ERROR: stage '{e.stage}' failed: {e.cause}", err=True)
            ctx.exit(EXIT_STAGE_FAILURE)
        except ChangeChipError as e:
            click.echo(f"ERROR: {e}", err=True)
            ctx.exit(EXIT_STAGE_FAILURE)

    return wrapper


@click.group()
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default="INFO",
              envvar="CHANGECHIP_LOG_LEVEL", show_default=True, help="Logging level")
@click.version_option(version=__version__, prog_name="changechip")
def cli(log_level):
    """Unsupervised change detection between a golden PCB image and an inspected one."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)


@cli.command("run")
@click.option("--reference", required=True, type=click.Path(dir_okay=False), help="Golden (reference) image")
@click.option("--target", required=True, type=click.Path(dir_okay=False), help="Inspected (target) image")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@pipeline_options
@exit_codes
def run_command(reference, target, out_dir, **options):
    """Detect changes between one reference/target pair."""
    cfg = build_cli_config(**options)
    result = run_pipeline(reference, target, cfg, out_dir)
    click.echo(f"Change pixels: {result.mask.count}")
    click.echo(f"Selected classes: {sorted(result.selection.selected)} ({result.selected_count} of {cfg.n})")
    if result.registration is not None:
        click.echo(f"Registration: {result.registration.inlier_count}/{len(result.registration.matches)} inliers")
    click.echo(f"Artifacts written to {out_dir}")


@cli.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Pair list: reference target ground_truth [modality]")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@pipeline_options
@exit_codes
def eval_command(manifest, out_dir, **options):
    """Evaluate the pipeline on every pair of a manifest."""
    cfg = build_cli_config(**options)
    report = run_dataset(manifest, cfg, out_dir, workers=cfg.workers)
    click.echo(format_table(report))
    if report.failed:
        click.echo(f"WARNING: {len(report.failed)} pair(s) failed, see {Path(out_dir) / 'report.json'}")


@cli.command("synth")
@click.option("--base", required=True, type=click.Path(dir_okay=False), help="Defect-free base image")
@click.option("--spec", "spec_path", required=True, type=click.Path(dir_okay=False), help="Defect spec JSON")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for randomised defect details")
@exit_codes
def synth_command(base, spec_path, out_dir, seed):
    """Plant defects in a base image and write reference, target, ground truth and a manifest."""
    pair = generate_defect_pair(load_image(base), load_defect_spec(spec_path), seed)
    out = Path(out_dir)
    reference = save_image(pair.reference, out / "reference.png")
    target = save_image(pair.target, out / "target.png")
    ground_truth = save_mask(pair.ground_truth, out / "gt.png")
    write_manifest([DatasetPair(reference, target, ground_truth)], out / "manifest.txt")
    click.echo(f"Ground-truth change pixels: {int(pair.ground_truth.sum())}")
    click.echo(f"Pair written to {out}")


def main(argv=None) -> int:
    """Console entry point; returns the process exit code."""
    try:
        result = cli.main(args=argv, prog_name="changechip", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_BAD_CONFIG
    except click.ClickException as e:
        e.show()
        return EXIT_STAGE_FAILURE
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
