"""Command-line frontend.

Exit codes: 0 success, 1 usage error (bad arguments, missing or malformed
inputs), 2 episode failure, 3 corrupt feature-cloud data.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .config import ENV_VAR, load_config
from .feature_fields import CloudFormatError, load as load_cloud
from .harness.episode import PRESETS
from .harness.fixtures import fixture_document, fixture_names
from .harness.suite import SuiteError, load_suite, run_suite, write_outputs
from .world_sim import SceneError, generate_scene_text, load_scene, template_names
from .world_sim.scene import dump_scene_dict

EXIT_OK, EXIT_USAGE, EXIT_EPISODE, EXIT_CORRUPT = 0, 1, 2, 3

log = logging.getLogger("panoptic_nav")


def _config(ctx: click.Context):
    try:
        return load_config(ctx.obj.get("config"))
    except (OSError, ValueError) as e:
        raise click.UsageError(f"cannot load config ({ENV_VAR}): {e}") from None


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help=f"JSON defaults file (overrides ${ENV_VAR}).")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def cli(ctx: click.Context, config_path, verbose):
    """Synthetic-scene navigation workbench."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


@cli.command("scene-gen")
@click.option("--template", type=click.Choice(template_names()), help="House layout template.")
@click.option("--fixture", type=click.Choice(fixture_names()), help="Bundled fixture scene instead of a template.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Scene file to write.")
@click.pass_context
def scene_gen(ctx, template, fixture, seed, out):
    """Generate a deterministic scene file."""
    if (template is None) == (fixture is None):
        raise click.UsageError("give exactly one of --template or --fixture")
    cfg = _config(ctx)
    text = generate_scene_text(template, seed) if template else dump_scene_dict(fixture_document(fixture, cfg.sim))
    scene = load_scene(text, cfg.sim)
    Path(out).write_text(text)
    click.echo(f"{scene.name}: rooms {', '.join(scene.room_labels)}; {len(scene.boxes)} boxes; "
               f"{len(scene.nav_nodes)} nav nodes; {len(scene.nav_edges)} edges -> {out}")


@cli.command("run")
@click.option("--suite", "suite_src", required=True,
              help="Suite JSON file or bundled suite name (main, behind_agent, door_stairs, clutter).")
@click.option("--scene", type=click.Path(exists=True, dir_okay=False),
              help="Scene file used for every episode, replacing the suite's scene table.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="full", show_default=True)
@click.option("--seed", "seeds", type=click.IntRange(min=0), multiple=True,
              help="Seed (repeatable); default 0.")
@click.option("--policy", type=click.Choice(["field_similarity", "greedy_goal"]), default=None,
              help="Waypoint policy (default from config).")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--dump-maps", is_flag=True, help="Per-step occupancy/semantic/traversable PGMs.")
@click.option("--dump-panoramas", is_flag=True, help="Per-step panorama CSVs.")
@click.option("--save-clouds", is_flag=True, help="Final feature cloud of each episode.")
@click.pass_context
def run(ctx, suite_src, scene, preset, seeds, policy, jobs, out, dump_maps, dump_panoramas, save_clouds):
    """Run a suite under one ablation preset; writes CSV/JSON metrics."""
    cfg = _config(ctx)
    try:
        override = load_scene(Path(scene).read_text(), cfg.sim) if scene else None
        suite = load_suite(suite_src, cfg, override)
    except FileNotFoundError as e:
        raise click.UsageError(f"missing file: {e.filename}") from None
    except (SuiteError, SceneError, ValueError) as e:
        raise click.UsageError(f"malformed suite: {e}") from None
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(seeds) or (0,)
    try:
        result = run_suite(suite, preset, seeds, policy, cfg, jobs, out_dir, dump_maps, dump_panoramas,
                           save_clouds=save_clouds)
    except Exception as e:  # any episode failure aborts the suite
        log.exception("episode failure")
        click.echo(f"episode failure: {e}", err=True)
        ctx.exit(EXIT_EPISODE)
    summary = write_outputs(result, out_dir)
    click.echo(json.dumps(summary))


@cli.command("field-inspect")
@click.argument("cloud_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def field_inspect(ctx, cloud_file):
    """Validate a persisted feature cloud and print a summary."""
    try:
        cloud = load_cloud(cloud_file)
    except CloudFormatError as e:
        click.echo(f"corrupt cloud file {cloud_file}: {e}", err=True)
        ctx.exit(EXIT_CORRUPT)
    n = len(cloud)
    click.echo(f"{n} points, dim {cloud.dim}, voxel {cloud.cfg.voxel:g} m")
    if n == 0:
        return
    pos = cloud.positions.astype(np.float64)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    click.echo("bbox min " + " ".join(f"{v:.3f}" for v in lo) + " max " + " ".join(f"{v:.3f}" for v in hi))
    cells = np.floor(pos / cloud.cfg.voxel).astype(np.int64)
    _, per_voxel = np.unique(cells, axis=0, return_counts=True)
    edges = [1, 2, 4, 8, 16, 32, 64]
    click.echo(f"{len(per_voxel)} occupied voxels; points per voxel:")
    for a, b in zip(edges, edges[1:] + [None]):
        cnt = int(((per_voxel >= a) & (per_voxel < b)).sum()) if b else int((per_voxel >= a).sum())
        label = f"{a}-{b - 1}" if b else f"{a}+"
        click.echo(f"  {label:>6}: {cnt}")


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="panoptic-nav", standalone_mode=False)
    except click.exceptions.NoArgsIsHelpError as e:
        click.echo(e.ctx.get_help() if e.ctx else str(e))
        return EXIT_USAGE
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
