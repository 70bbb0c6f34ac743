"""
Build the synthetic acceptance suite: 20 planted-defect pairs (erase, shift,
recolor and blob defects) with illumination scale within +-10% and affine
jitter up to 3 px, plus a manifest for `changechip eval`.

Usage:
    python scripts/synthetic_suite.py --out suite/ [--size 512] [--pairs 20] [--seed 0] [--evaluate]
"""
import logging
import sys
from pathlib import Path

import click
import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from changechip.config import load_config  # noqa: E402
from changechip.evaluation import DatasetPair, format_table, run_dataset, write_manifest  # noqa: E402
from changechip.imaging import save_image, save_mask  # noqa: E402
from changechip.synthetic import generate_defect_pair, random_defect_spec, synthetic_board  # noqa: E402

logger = logging.getLogger(__name__)

DEFECT_KINDS = ("erase_block", "shift_block", "recolor_block", "paste_blob")


def build_suite(out_dir: Path, size: int = 512, pairs: int = 20, seed: int = 0, max_jitter_px: float = 3.0):
    """Write the suite images and manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(pairs):
        kind = DEFECT_KINDS[i % len(DEFECT_KINDS)]
        base = synthetic_board(size, size, seed=seed + i)
        spec = random_defect_spec(size, size, kind, seed=seed + i,
                                  illumination=float(rng.uniform(0.9, 1.1)), max_jitter_px=max_jitter_px,
                                  base=base)
        pair = generate_defect_pair(base, spec, seed=seed + i)
        name = f"{i:02d}_{kind}"
        entries.append(DatasetPair(
            reference=save_image(pair.reference, out_dir / f"{name}_ref.png"),
            target=save_image(pair.target, out_dir / f"{name}_tgt.png"),
            ground_truth=save_mask(pair.ground_truth, out_dir / f"{name}_gt.png"),
        ))
        (out_dir / f"{name}_spec.json").write_text(spec.model_dump_json(indent=2), encoding="utf-8")
    return write_manifest(entries, out_dir / "manifest.txt")


@click.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Suite directory")
@click.option("--size", type=int, default=512, show_default=True, help="Board width and height")
@click.option("--pairs", type=int, default=20, show_default=True, help="Number of pairs")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--evaluate", is_flag=True, help="Run the pipeline on the suite with default settings")
def main(out_dir, size, pairs, seed, evaluate):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out = Path(out_dir)
    manifest = build_suite(out, size, pairs, seed)
    click.echo(f"SUCCESS: {pairs} pairs written, manifest {manifest}")
    if evaluate:
        report = run_dataset(manifest, load_config(), out / "results")
        click.echo(format_table(report))


if __name__ == "__main__":
    main()
