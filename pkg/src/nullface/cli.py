"""Command-line surface: invert, anonymize, mask, eval, sweep, attack,
serve, plus toyset/rerun utilities.

Flag names mirror the sampler symbols (--t-skip, --lambda-id, --cfg,
--lambda-img, --mask-start); defaults are the standard evaluation
settings. An optional flat `key = value` config file supplies defaults
that explicit flags override. Every command that produces an output
writes a RunManifest JSON next to it (<output>.run.json) sufficient to
reproduce the run bit-for-bit on the same plugins via `nullface rerun`.

Exit codes: 0 ok, 2 usage error, 3 plugin error, 4 data/corruption error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import __version__
from .backbones import builtin_names, resolve_plugin
from .denoiser import AnonymizationConfig, anonymize
from .errors import (DataCorruptionError, PluginError, ValidationError)
from .estimator import FaceAnonymizer
from .evaluation import (MetricsReport, attack_recover, evaluate_pair_set,
                         frechet_distance, identity_distance, re_id_rate,
                         run_sweep, CSV_COLUMNS, _unit_rows)
from .inversion import invert, load_record, save_record
from .masks import (PRESET_NAMES, load_segmentation, mask_from_regions,
                    preset_mask, save_mask_file)
from .schedule import default_schedule
from .toyset import load_image, write_toy_faces

MANIFEST_VERSION = 1

# flag/manifest key -> click parameter name, for options whose python name
# differs from the flag
_PARAM_ALIASES = {
    "cfg": "lambda_cfg", "image": "image_path", "record": "record_path",
    "segmentation": "seg_path", "report": "report_path", "grid": "grid_specs",
    "scorer": "with_scorer", "trace": "trace_path",
}


def _read_config_file(path: str) -> dict:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"config line {line!r} is not 'key = value'")
        key = key.strip().replace("-", "_")
        values[_PARAM_ALIASES.get(key, key)] = value.strip()
    return values


@click.group()
@click.version_option(version=__version__, prog_name="nullface")
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              help="Flat 'key = value' defaults file; explicit flags override it.")
@click.pass_context
def cli(ctx, config):
    """Training-free face anonymization by diffusion inversion."""
    if config:
        values = _read_config_file(config)
        ctx.default_map = {cmd: values for cmd in cli.commands}


def _write_manifest(out_path: Path, command: str, args: dict,
                    fingerprints: dict) -> Path:
    manifest = {
        "version": MANIFEST_VERSION,
        "tool": f"nullface {__version__}",
        "command": command,
        "args": {k: v for k, v in args.items() if v is not None},
        "fingerprints": fingerprints,
    }
    path = Path(str(out_path) + ".run.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _stack_fingerprints(est: FaceAnonymizer) -> dict:
    est._build_stack()
    return {
        "backbone": est.backbone_.fingerprint,
        "schedule": est.schedule_.fingerprint,
        "codec": est.codec_.fingerprint,
        "embedder": est.embedder_.fingerprint,
        "parser": est.parser_.fingerprint,
    }


def _backend_option(fn):
    fn = click.option("--backend", default="toy-pointwise", show_default=True,
                      help=f"Denoising backbone plugin; builtins: "
                           f"{builtin_names('backbone')}.")(fn)
    fn = click.option("--backend-seed", default=0, show_default=True, type=int,
                      help="Seed of the toy backbone coefficients.")(fn)
    return fn


def _sampler_options(fn):
    fn = click.option("--t-skip", default=70, show_default=True, type=click.IntRange(min=0),
                      help="Steps skipped before identity conditioning; range [0, steps].")(fn)
    fn = click.option("--lambda-id", default=1.0, show_default=True,
                      type=click.FloatRange(min=0.0),
                      help="Identity-embedding scale (>= 0).")(fn)
    fn = click.option("--cfg", "lambda_cfg", default=10.0, show_default=True, type=float,
                      help="Guidance scale combining conditional/unconditional paths.")(fn)
    fn = click.option("--lambda-img", default=1.0, show_default=True,
                      type=click.FloatRange(min=0.0),
                      help="Image-branch attention scale (>= 0).")(fn)
    fn = click.option("--mask-preset", default="keep-eyes-mouth", show_default=True,
                      type=click.Choice(PRESET_NAMES),
                      help="Region-mask preset for the user mask.")(fn)
    fn = click.option("--mask-start", default=80, show_default=True,
                      type=click.IntRange(min=0),
                      help="Iterations before the user mask replaces the full-face "
                           "mask; range [0, steps].")(fn)
    return fn


def _check_step_ranges(steps: int, **bounded):
    for name, value in bounded.items():
        if value > steps:
            raise ValidationError(f"--{name.replace('_', '-')} {value} exceeds --steps {steps}")


@cli.command("invert")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input RGB image.")
@click.option("--steps", default=100, show_default=True, type=click.IntRange(min=1),
              help="Total denoising steps T (>= 1).")
@click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0),
              help="Noise-stream seed.")
@_backend_option
@click.option("--lean", is_flag=True, help="Store only x_T and the noise maps.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output record directory (conventionally <name>.inv).")
def cmd_invert(image_path, steps, seed, backend, backend_seed, lean, out_path):
    """Invert an image into a replayable noise record."""
    est = FaceAnonymizer(steps=steps, seed=seed, backend=backend,
                         backend_seed=backend_seed)
    est._build_stack()
    img = load_image(image_path)
    latent = est.codec_.encode(img)
    rec = invert(latent, est.backbone_, est.schedule_, seed=seed, lean=lean)
    save_record(rec, out_path)
    _write_manifest(Path(out_path), "invert", {
        "image": str(image_path), "steps": steps, "seed": seed, "backend": backend,
        "backend_seed": backend_seed, "lean": lean, "out": str(out_path),
    }, _stack_fingerprints(est))
    click.echo(f"inverted {image_path} -> {out_path} (T={steps}, seed={seed})")


def _backbone_for_record(rec, backend, backend_seed):
    backbone = resolve_plugin("backbone", backend, seed=backend_seed)
    if backbone.fingerprint != rec.backbone_fingerprint:
        # builtin fingerprints are parseable; try to recover the right one
        fp = rec.backbone_fingerprint
        name = fp.split(":", 1)[0]
        if name in builtin_names("backbone"):
            kwargs = dict(part.split("=", 1) for part in fp.split(":")[2:] if "=" in part)
            backbone = resolve_plugin("backbone", name,
                                      seed=int(kwargs.get("seed", 0)),
                                      embedding_dim=int(kwargs.get("dim", 16)))
    return backbone


@cli.command("anonymize")
@click.option("--record", "record_path", required=True, type=click.Path(exists=True),
              help="Inversion record directory from `nullface invert`.")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False),
              help="Embedding/segmentation source; defaults to the record's "
                   "stored reconstruction.")
@click.option("--steps", default=None, type=click.IntRange(min=1),
              help="Total denoising steps T; must match the record "
                   "(defaults to the record's T).")
@_sampler_options
@_backend_option
@click.option("--mask-file", type=click.Path(exists=True, dir_okay=False),
              help="Freehand user mask image overriding --mask-preset.")
@click.option("--trace", "trace_path", type=click.Path(),
              help="Dump per-step guidance arrays to this container directory.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output anonymized image (PNG).")
def cmd_anonymize(record_path, image_path, steps, t_skip, lambda_id, lambda_cfg,
                  lambda_img, mask_preset, mask_start, backend, backend_seed,
                  mask_file, trace_path, out_path):
    """Re-denoise a record under negated identity guidance."""
    if steps is not None:
        _check_step_ranges(steps, t_skip=t_skip, mask_start=mask_start)
    rec = load_record(record_path)
    if steps is None:
        steps = rec.T
    elif steps != rec.T:
        raise ValidationError(f"--steps {steps} does not match the record's T={rec.T}")
    _check_step_ranges(steps, t_skip=t_skip, mask_start=mask_start)
    backbone = _backbone_for_record(rec, backend, backend_seed)
    sched = default_schedule(rec.T)
    codec = resolve_plugin("codec", "toy-codec")
    embedder = resolve_plugin("embedder", "toy-stats")
    parser = resolve_plugin("parser", "toy-geometric")

    source = load_image(image_path) if image_path else codec.decode(rec.x0)
    from .conditioning import extract_embedding
    embedding = extract_embedding(source, embedder)
    seg = parser(source)
    if mask_file:
        from .masks import load_mask_file
        mask_user = load_mask_file(mask_file, expected_shape=rec.latent_shape[-2:])
    else:
        mask_user = preset_mask(seg, mask_preset, rec.latent_shape)
    mask_face = preset_mask(seg, "whole-face", rec.latent_shape)

    cfg = AnonymizationConfig(T=steps, t_skip=t_skip, lambda_id=lambda_id,
                              lambda_cfg=lambda_cfg, lambda_img=lambda_img,
                              mask_preset=mask_preset, mask_start=mask_start,
                              seed=rec.seed)
    result = anonymize(rec, cfg, mask_user, mask_face, embedding, backbone, sched,
                       trace=bool(trace_path))
    if trace_path:
        latent, tracer = result
        tracer.save(trace_path)
    else:
        latent = result
    out_img = codec.decode(latent)
    Image.fromarray(out_img, mode="RGB").save(out_path, format="PNG")
    dist = identity_distance(extract_embedding(source, embedder),
                             extract_embedding(out_img, embedder))
    _write_manifest(Path(out_path), "anonymize", {
        "record": str(record_path), "image": image_path, "steps": steps,
        "t_skip": t_skip, "lambda_id": lambda_id, "cfg": lambda_cfg,
        "lambda_img": lambda_img, "mask_preset": mask_preset,
        "mask_start": mask_start, "backend": backend, "backend_seed": backend_seed,
        "mask_file": mask_file, "out": str(out_path),
    }, {"backbone": backbone.fingerprint, "schedule": sched.fingerprint,
        "codec": codec.fingerprint, "embedder": embedder.fingerprint,
        "parser": parser.fingerprint})
    click.echo(f"anonymized -> {out_path} (identity distance {dist:.4f})")


@cli.command("mask")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False),
              help="Image to segment with the toy parser.")
@click.option("--segmentation", "seg_path", type=click.Path(exists=True, dir_okay=False),
              help="Pre-computed palette-indexed label map.")
@click.option("--sidecar", type=click.Path(exists=True, dir_okay=False),
              help="Text remap of foreign palette indices to region codes.")
@click.option("--preset", type=click.Choice(PRESET_NAMES), default="whole-face",
              show_default=True, help="Mask preset to render.")
@click.option("--latent-size", default=None,
              help="Latent resolution HxW (defaults to the image resolution).")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output mask image (.png or .pgm).")
def cmd_mask(image_path, seg_path, sidecar, preset, latent_size, out_path):
    """Render a region-mask preset to a mask file."""
    if bool(image_path) == bool(seg_path):
        raise ValidationError("pass exactly one of --image or --segmentation")
    if seg_path:
        seg = load_segmentation(seg_path, sidecar=sidecar)
    else:
        parser = resolve_plugin("parser", "toy-geometric")
        seg = parser(load_image(image_path))
    if latent_size:
        try:
            h, w = (int(v) for v in latent_size.lower().split("x"))
        except ValueError as exc:
            raise ValidationError(f"--latent-size must be HxW, got {latent_size!r}") from exc
        shape = (h, w)
    else:
        shape = seg.shape
    mask = preset_mask(seg, preset, shape)
    save_mask_file(mask, out_path)
    _write_manifest(Path(out_path), "mask", {
        "image": image_path, "segmentation": seg_path, "sidecar": sidecar,
        "preset": preset, "latent_size": latent_size, "out": str(out_path),
    }, {})
    click.echo(f"mask preset {preset} -> {out_path}")


def _paired_images(originals_dir: str, anonymized_dir: str):
    orig_dir, anon_dir = Path(originals_dir), Path(anonymized_dir)
    names = sorted(p.name for p in orig_dir.iterdir() if p.suffix.lower() == ".png")
    pairs = []
    for name in names:
        other = anon_dir / name
        if other.is_file():
            pairs.append((name, load_image(orig_dir / name), load_image(other)))
    if len(pairs) < 2:
        raise ValidationError("need >= 2 paired images between the two directories")
    return pairs


@cli.command("eval")
@click.option("--originals", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of original images.")
@click.option("--anonymized", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of anonymized images (paired by filename).")
@click.option("--metrics", default="reid,id-dist,frechet", show_default=True,
              help="Comma list from {reid, id-dist, frechet, attrs}.")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Output CSV report.")
def cmd_eval(originals, anonymized, metrics, report_path):
    """Measure anonymization metrics over paired image directories."""
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    unknown = wanted - {"reid", "id-dist", "frechet", "attrs"}
    if unknown:
        raise ValidationError(f"unknown metrics: {sorted(unknown)}")
    pairs = _paired_images(originals, anonymized)
    embedder = resolve_plugin("embedder", "toy-stats")
    scorer = resolve_plugin("scorer", "toy-geometry") if "attrs" in wanted else None
    from .conditioning import extract_embedding
    orig_emb = [extract_embedding(img, embedder) for _, img, _ in pairs]
    anon_emb = [extract_embedding(img, embedder) for _, _, img in pairs]
    gallery = _unit_rows(orig_emb)
    probes = _unit_rows(anon_emb)
    nearest = np.argmin(1.0 - probes @ gallery.T, axis=1)

    report = MetricsReport()
    from .evaluation import _scorer_distances
    for i, (name, orig, anon) in enumerate(pairs):
        row = dict.fromkeys(CSV_COLUMNS, "")
        row.update(scope="image", cell="eval", image=name)
        if "id-dist" in wanted:
            row["identity_distance"] = identity_distance(orig_emb[i], anon_emb[i])
        if "reid" in wanted:
            row["re_identified"] = int(nearest[i] == i)
        if scorer is not None:
            row.update(_scorer_distances(scorer, orig, anon))
        report.rows.append(row)
    agg = dict.fromkeys(CSV_COLUMNS, "")
    agg.update(scope="aggregate", cell="eval")
    if "reid" in wanted:
        agg["re_id_rate"] = re_id_rate(orig_emb, anon_emb)
    if "id-dist" in wanted:
        agg["identity_distance"] = float(np.mean(
            [r["identity_distance"] for r in report.rows]))
    if "frechet" in wanted:
        agg["frechet_distance"] = frechet_distance(
            np.stack([e.vector for e in orig_emb]),
            np.stack([e.vector for e in anon_emb]))
    report.aggregates.append(agg)
    report.write_csv(report_path)
    _write_manifest(Path(report_path), "eval", {
        "originals": str(originals), "anonymized": str(anonymized),
        "metrics": metrics, "report": str(report_path),
    }, {"embedder": embedder.fingerprint})
    click.echo(f"eval report -> {report_path}"
               + (f" (re-ID {agg['re_id_rate']:.2f}%)" if "reid" in wanted else ""))


def _parse_grid(specs: tuple[str, ...]) -> dict:
    grid = {}
    casts = {"lambda_id": float, "lambda_cfg": float, "t_skip": int,
             "mask_start": int, "mask_preset": str}
    for spec in specs:
        key, sep, values = spec.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in casts:
            raise ValidationError(
                f"--grid must be one of {sorted(casts)} = v1,v2,..., got {spec!r}")
        grid[key] = [casts[key](v.strip()) for v in values.split(",") if v.strip()]
    return grid


@cli.command("sweep")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of PNG images (>= 2 identities).")
@click.option("--grid", "grid_specs", multiple=True, required=True,
              help="Axis spec 'param=v1,v2,...'; repeatable; cells are the "
                   "cartesian product.")
@click.option("--steps", default=100, show_default=True, type=click.IntRange(min=1),
              help="Total denoising steps T (>= 1).")
@_sampler_options
@_backend_option
@click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0),
              help="Base noise seed.")
@click.option("--scorer", "with_scorer", is_flag=True,
              help="Attach the toy attribute scorer.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output CSV report.")
def cmd_sweep(dataset, grid_specs, steps, t_skip, lambda_id, lambda_cfg, lambda_img,
              mask_preset, mask_start, backend, backend_seed, seed, with_scorer,
              out_path):
    """Grid sweep over sampler parameters with per-cell metrics."""
    _check_step_ranges(steps, t_skip=t_skip, mask_start=mask_start)
    grid = _parse_grid(grid_specs)
    for key in ("t_skip", "mask_start"):
        for value in grid.get(key, []):
            if not 0 <= value <= steps:
                raise ValidationError(f"grid value {key}={value} outside [0, {steps}]")
    paths = sorted(Path(dataset).glob("*.png"))
    data = [(p.stem, load_image(p)) for p in paths]
    base = FaceAnonymizer(steps=steps, t_skip=t_skip, lambda_id=lambda_id,
                          lambda_cfg=lambda_cfg, lambda_img=lambda_img,
                          mask_preset=mask_preset, mask_start=mask_start, seed=seed,
                          backend=backend, backend_seed=backend_seed)
    scorer = resolve_plugin("scorer", "toy-geometry") if with_scorer else None
    report = run_sweep(data, grid, estimator=base, scorer=scorer, csv_path=out_path)
    _write_manifest(Path(out_path), "sweep", {
        "dataset": str(dataset), "grid": list(grid_specs), "steps": steps,
        "t_skip": t_skip, "lambda_id": lambda_id, "cfg": lambda_cfg,
        "lambda_img": lambda_img, "mask_preset": mask_preset,
        "mask_start": mask_start, "backend": backend, "backend_seed": backend_seed,
        "seed": seed, "scorer": with_scorer, "out": str(out_path),
    }, _stack_fingerprints(base))
    cells = len(report.aggregates)
    failed = sum(1 for a in report.aggregates if a.get("error"))
    click.echo(f"sweep -> {out_path} ({cells} cells, {failed} failed)")


@cli.command("attack")
@click.option("--original", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Original image (for distance reporting only).")
@click.option("--anonymized", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Anonymized image the attacker holds.")
@click.option("--steps", default=100, show_default=True, type=click.IntRange(min=1),
              help="Total denoising steps T (>= 1).")
@_sampler_options
@_backend_option
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output attacked image (PNG).")
def cmd_attack(original, anonymized, steps, t_skip, lambda_id, lambda_cfg, lambda_img,
               mask_preset, mask_start, backend, backend_seed, out_path):
    """Identity-recovery attack: positive-signed embedding on the anonymized image."""
    _check_step_ranges(steps, t_skip=t_skip, mask_start=mask_start)
    est = FaceAnonymizer(steps=steps, t_skip=t_skip, lambda_id=lambda_id,
                         lambda_cfg=lambda_cfg, lambda_img=lambda_img,
                         mask_preset=mask_preset, mask_start=mask_start,
                         backend=backend, backend_seed=backend_seed)
    attacked, dists = attack_recover(load_image(original), load_image(anonymized),
                                     estimator=est)
    Image.fromarray(attacked, mode="RGB").save(out_path, format="PNG")
    _write_manifest(Path(out_path), "attack", {
        "original": str(original), "anonymized": str(anonymized), "steps": steps,
        "t_skip": t_skip, "lambda_id": lambda_id, "cfg": lambda_cfg,
        "lambda_img": lambda_img, "mask_preset": mask_preset,
        "mask_start": mask_start, "backend": backend, "backend_seed": backend_seed,
        "out": str(out_path),
    }, _stack_fingerprints(est))
    click.echo(f"attack -> {out_path} "
               f"(distance to original: anonymized {dists['original_vs_anonymized']:.4f}, "
               f"attacked {dists['original_vs_attacked']:.4f})")


@cli.command("toyset")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Directory to materialize the bundled toy face set into.")
@click.option("--count", default=16, show_default=True, type=click.IntRange(min=1),
              help="Number of identities.")
@click.option("--size", default=32, show_default=True, type=click.IntRange(min=16),
              help="Image side length in pixels.")
@click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0),
              help="Generator seed.")
def cmd_toyset(out_dir, count, size, seed):
    """Write the bundled deterministic toy face set to a directory."""
    paths = write_toy_faces(out_dir, count=count, size=size, seed=seed)
    _write_manifest(Path(out_dir), "toyset", {
        "out": str(out_dir), "count": count, "size": size, "seed": seed,
    }, {})
    click.echo(f"wrote {len(paths)} toy faces to {out_dir}")


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8000, show_default=True, type=click.IntRange(1, 65535),
              help="Bind port.")
@click.option("--root", "root_dir", default="nullface-runs", show_default=True,
              type=click.Path(), help="Run directory for uploads and results.")
def cmd_serve(host, port, root_dir):
    """Serve the interactive-console HTTP API."""
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(Path(root_dir)), host=host, port=port)


@cli.command("rerun")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_override", type=click.Path(),
              help="Redirect the output path recorded in the manifest.")
@click.pass_context
def cmd_rerun(ctx, manifest_path, out_override):
    """Replay a RunManifest; outputs are bit-identical on the toy stack."""
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataCorruptionError(f"unparseable manifest: {exc}") from exc
    command = manifest.get("command")
    target = cli.commands.get(command)
    if target is None or command in ("serve", "rerun"):
        raise ValidationError(f"manifest command {command!r} cannot be re-run")
    args = dict(manifest.get("args", {}))
    if out_override:
        args["out"] = out_override
    # manifest args are stored under flag-style names
    kwargs = {}
    for key, value in args.items():
        kwargs[_PARAM_ALIASES.get(key, key)] = \
            tuple(value) if isinstance(value, list) else value
    if "out" in kwargs:
        out_param = {"eval": "report_path", "toyset": "out_dir"}
        kwargs[out_param.get(command, "out_path")] = kwargs.pop("out")
    ctx.invoke(target, **kwargs)


def main():
    """Console entry point with the documented exit-code mapping."""
    try:
        cli.main(standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help / --version
        return exc.exit_code
    except click.exceptions.Abort:
        return 130
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except ValidationError as exc:
        click.echo(f"nullface: usage error: {exc}", err=True)
        return 2
    except PluginError as exc:
        click.echo(f"nullface: plugin error: {exc}", err=True)
        return 3
    except DataCorruptionError as exc:
        click.echo(f"nullface: data error: {exc}", err=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
