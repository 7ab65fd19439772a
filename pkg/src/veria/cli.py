"""Command-line pipeline driver: generate | compose | report | sweep | validate."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .analytics import EmptyLog, lambda_sweep, read_records, report as render_report, sweep_svg
from .compose import compose_scene
from .dataset_io import (
    RunConfig,
    list_assets,
    load_asset,
    load_manifest,
    load_scene,
    write_cloud,
    write_image,
)
from .errors import ConfigError, VeriaError
from .pipeline import ProviderSuite, generate as run_generate
from .providers import ProviderEndpoint, ProviderUnavailable

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_EMPTY = 4


def _load_config(config_path: str | None, seed: int | None, lam: float | None, full_marginals: bool | None) -> RunConfig:
    config = RunConfig.load(config_path) if config_path else RunConfig()
    payload = config.to_json()
    if seed is not None:
        payload["run_seed"] = seed
    if lam is not None:
        payload["lambda"] = lam
    if full_marginals is not None:
        payload["full_marginals"] = full_marginals
    return RunConfig.from_json(payload)


def _manifest_paths(scenes_dir: str) -> list[Path]:
    root = Path(scenes_dir)
    return sorted(p for p in root.glob("*.json") if not p.name.endswith(".bin.json"))


def _providers_for(config: RunConfig, stub: bool) -> ProviderSuite:
    if stub or not config.provider_url:
        return ProviderSuite.stub(config.stub)
    endpoint = ProviderEndpoint(
        base_url=config.provider_url,
        timeout=config.provider_timeout,
        max_retries=config.provider_retries,
    )
    return ProviderSuite.remote(endpoint)


@click.group()
def main():
    """Synchronized RGB + pseudo-LiDAR instance synthesis with verification."""


@main.command("generate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override run_seed.")
@click.option("--workers", type=int, default=None, help="Defaults to available cores.")
@click.option("--stub", is_flag=True, help="Use deterministic stub providers.")
@click.option("--full-marginals/--no-full-marginals", "full_marginals", default=None)
@click.option("--lambda", "lam", type=float, default=None, help="Geometric tolerance override.")
@click.option("--free-z", is_flag=True, help="Sample c_z uniformly instead of ground-resting.")
def cmd_generate(config_path, scenes_dir, out_dir, seed, workers, stub, full_marginals, lam, free_z):
    """Sample, inpaint, verify, and reconstruct candidates for every scene."""
    try:
        config = _load_config(config_path, seed, lam, full_marginals)
        if free_z:
            payload = config.to_json()
            payload["free_z"] = True
            config = RunConfig.from_json(payload)
        providers = _providers_for(config, stub)
        if not stub and config.provider_url and hasattr(providers.verifier, "health"):
            providers.verifier.health()  # fail fast with exit code 3 when unreachable
        manifests = _manifest_paths(scenes_dir)
        if not manifests:
            click.echo(f"no scene manifests found under {scenes_dir}", err=True)
            sys.exit(EXIT_EMPTY)
        if workers is None:
            workers = os.cpu_count() or 1
        summary = run_generate(config, manifests, Path(out_dir), providers, workers=workers)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ProviderUnavailable as exc:
        click.echo(f"provider unreachable: {exc}", err=True)
        sys.exit(EXIT_PROVIDER)
    except VeriaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(
        f"candidates={summary.candidates} assets={summary.assets} "
        f"statuses={json.dumps(summary.statuses, sort_keys=True)}"
    )
    if summary.candidates == 0:
        sys.exit(EXIT_EMPTY)


@main.command("compose")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--assets", "asset_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option(
    "--cross-scene/--no-cross-scene",
    "cross_scene",
    default=False,
    help="Allow assets generated in one scene to be inserted into others.",
)
def cmd_compose(config_path, scenes_dir, out_dir, asset_dir, seed, cross_scene):
    """Composite verified instances into scenes: RGB painting + LiDAR occlusion.

    By default each asset is placed only into the scene it was generated in
    (assets keep their generation pose); --cross-scene lifts the restriction.
    """
    try:
        config = _load_config(config_path, seed, None, None)
        registry = config.sensor_registry()
        manifests = _manifest_paths(scenes_dir)
        asset_ids = list_assets(asset_dir)
        if not manifests or not asset_ids:
            click.echo("nothing to compose (no scenes or empty asset db)", err=True)
            sys.exit(EXIT_EMPTY)
        db = [load_asset(asset_dir, asset_id) for asset_id in asset_ids]
        out_root = Path(out_dir) / "scenes_out"
        out_root.mkdir(parents=True, exist_ok=True)
        composed_any = False
        for i, manifest_path in enumerate(manifests):
            manifest = load_manifest(manifest_path, registry)
            scene = load_scene(manifest, registry)
            scene_db = db if cross_scene else [a for a in db if a.source_scene == scene.scene_id]
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=config.run_seed, spawn_key=(1000 + i,))
            )
            result = compose_scene(scene, scene_db, config.max_per_class, rng, min_points=config.p_n)
            write_image(out_root / f"{scene.scene_id}.png", result.image)
            write_cloud(out_root / f"{scene.scene_id}.bin", result.cloud, sensor_spec_id=manifest.sensor_spec_id)
            (out_root / f"{scene.scene_id}.labels.json").write_text(
                json.dumps(result.labels, indent=2, sort_keys=True) + "\n", "utf-8"
            )
            composed_any = composed_any or bool(result.selected)
            click.echo(f"{scene.scene_id}: inserted={len(result.selected)} removed={result.removed_scene_points}")
        if not composed_any:
            sys.exit(EXIT_EMPTY)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except VeriaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command("report")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]), default="markdown")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def cmd_report(log_path, fmt, out_path):
    """Render yield decomposition, timings, and fail-reason histogram from a log."""
    try:
        records = list(read_records(log_path))
        text = render_report(records, fmt=fmt)
    except EmptyLog as exc:
        click.echo(f"empty log: {exc}", err=True)
        sys.exit(EXIT_EMPTY)
    if out_path:
        Path(out_path).write_text(text, "utf-8")
    else:
        click.echo(text, nl=False)


@main.command("sweep")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--lambda-grid", "grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
@click.option("--p-n", "p_n", type=int, default=5)
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), default=None)
def cmd_sweep(log_path, grid, p_n, svg_path):
    """Recompute joint yield across a lambda grid from logged size ratios."""
    try:
        lambdas = [float(x) for x in grid.split(",") if x.strip()]
        records = list(read_records(log_path))
        sweep = lambda_sweep(records, lambdas, p_n=p_n)
    except EmptyLog as exc:
        click.echo(f"empty log: {exc}", err=True)
        sys.exit(EXIT_EMPTY)
    except VeriaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for lam, value in sweep:
        click.echo(f"{lam:g}\t{value:.2f}")
    if svg_path:
        Path(svg_path).write_text(sweep_svg(sweep), "utf-8")


@main.command("validate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--stub", is_flag=True)
def cmd_validate(config_path, scenes_dir, stub):
    """Check config, sensor registry, priors, scene manifests, provider health."""
    try:
        config = _load_config(config_path, None, None, None)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    registry = config.sensor_registry()
    click.echo(f"categories: {', '.join(config.categories)}")
    click.echo(f"sensors: {', '.join(sorted(registry))}")
    for category in config.categories:
        prior = config.priors[category]
        click.echo(
            f"prior[{category}]: l={prior.length} w={prior.width} h={prior.height}"
        )
    if scenes_dir:
        try:
            manifests = _manifest_paths(scenes_dir)
            for path in manifests:
                load_manifest(path, registry)
            click.echo(f"scene manifests: {len(manifests)} ok")
        except VeriaError as exc:
            click.echo(f"manifest error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
    if config.provider_url and not stub:
        from .providers import HttpProviderClient

        client = HttpProviderClient(
            ProviderEndpoint(
                base_url=config.provider_url,
                timeout=config.provider_timeout,
                max_retries=0,
            )
        )
        try:
            health = client.health()
        except ProviderUnavailable as exc:
            click.echo(f"provider unreachable: {exc}", err=True)
            sys.exit(EXIT_PROVIDER)
        click.echo(f"provider health: {json.dumps(health, sort_keys=True)}")
    else:
        click.echo("providers: stub mode")
    click.echo("ok")


if __name__ == "__main__":
    main()
