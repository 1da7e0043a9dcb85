"""Command-line entry point: ``fiberorient <command> [options]``.

Exit codes: 0 success, 1 a chunk or step failed at run time, 2 invalid
configuration or arguments.  Diagnostics go to standard error; progress
lines go to standard output.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config, reference

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _triple(text: str, cast=float):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return tuple(cast(p) for p in parts)


def _pair(text: str, cast=float):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(cast(p) for p in parts)


def _config_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=required, help="run configuration (INI)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SEC.KEY=VAL",
                   help="override a config value; repeatable")


def _job_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, help="worker processes (overrides [chunking] workers)")
    p.add_argument("--job-index", type=int, default=0, help="this job's index when sharding (default 0)")
    p.add_argument("--job-count", type=int, default=1, help="number of sharded jobs (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiberorient", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a synthetic helical-annulus volume with mask and config")
    p.add_argument("--output", type=Path, required=True, help="directory to write into")
    p.add_argument("--dims", type=lambda s: _triple(s, int), default=(128, 128, 128), help="nx,ny,nz")
    p.add_argument("--r-inner", type=float, default=16.0)
    p.add_argument("--r-outer", type=float, default=58.0)
    p.add_argument("--ha-endo", type=float, default=60.0)
    p.add_argument("--ha-epi", type=float, default=-60.0)
    p.add_argument("--density", type=float, default=0.5, help="rods per voxel^3 of annulus (default 0.5)")
    p.add_argument("--rod-length", type=float, default=40.0, help="rod half-length in voxels")
    p.add_argument("--rod-sigma", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-z-margin", type=int, default=0, help="slices left out of the mask at each z face")
    p.add_argument("--texture-margin", type=float, default=0.0,
                   help="voxels of rod texture inside r_inner and outside r_outer (not in the mask)")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("orientation", help="structure-tensor orientation, FA, HA and IA maps")
    _config_flags(p)
    _job_flags(p)
    p.add_argument("--previews", choices=("pgm", "png"), help="also write 8-bit HA/IA slice previews")

    p = sub.add_parser("tractography", help="streamlines through a computed orientation field, as VTK")
    _config_flags(p)
    p.add_argument("--output", type=Path, help="VTK file (default <output dir>/streamlines.vtk)")
    p.add_argument("--max-lines", type=int, help="subsample to at most this many streamlines")

    p = sub.add_parser("profile", help="transmural angle profile as CSV")
    _config_flags(p)
    p.add_argument("--output", help="CSV path, '-' for standard output (default <output dir>/profile_<angle>.csv)")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--z-range", type=lambda s: _pair(s, int), help="half-open slice range z0,z1")
    p.add_argument("--azimuth", type=_pair, default=(0.0, 360.0), help="half-open degrees a0,a1 (wraps)")
    p.add_argument("--angle", choices=("ha", "ia"), default="ha")

    p = sub.add_parser("info", help="print dataset metadata, the effective config or the config reference")
    p.add_argument("datasets", nargs="*", type=Path)
    _config_flags(p, required=False)
    p.add_argument("--reference", action="store_true", help="print every config key with its default")
    return parser


def _err(msg: str) -> None:
    print(f"fiberorient: {msg}", file=sys.stderr)


def _cmd_phantom(args) -> int:
    from .phantom import AnnulusPhantomSpec, write_phantom

    try:
        spec = AnnulusPhantomSpec(
            dims=args.dims,
            cx=(args.dims[0] - 1) / 2.0,
            cy=(args.dims[1] - 1) / 2.0,
            r_inner=args.r_inner,
            r_outer=args.r_outer,
            ha_endo=args.ha_endo,
            ha_epi=args.ha_epi,
            rod_length=args.rod_length,
            rod_sigma=args.rod_sigma,
            seed=args.seed,
            noise=args.noise,
            mask_z_margin=args.mask_z_margin,
            texture_margin=args.texture_margin,
        )
        if not args.density > 0:
            raise ValueError("density must be > 0")
        spec = spec.with_density(args.density)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        paths = write_phantom(spec, args.output, overwrite=args.overwrite)
    except FileExistsError as exc:
        _err(f"{exc} (use --overwrite)")
        return EXIT_CONFIG
    print(f"wrote {paths['volume']} ({spec.rod_count} rods, density {spec.rod_density:.3f})")
    print(f"config {paths['config']}")
    return EXIT_OK


def _load(args):
    return load_config(args.config, args.overrides)


def _cmd_orientation(args) -> int:
    from .chunk_engine import run_pipeline

    config = _load(args)
    result = run_pipeline(config, workers=args.workers, job_index=args.job_index, job_count=args.job_count)
    if result.failed:
        _err(f"{len(result.failed)} chunk(s) failed: {sorted(result.failed)}")
        return EXIT_FAILED
    if args.previews:
        _write_previews(config, args.previews)
    return EXIT_OK


def _write_previews(config, fmt: str) -> None:
    from .cardiac_frame import SENTINEL
    from .export import write_previews
    from .volume_io import VoxelBox, read_metadata, read_region

    out_dir = Path(config.output.directory)
    for name in ("ha", "ia"):
        if name not in config.output.save:
            continue
        meta = read_metadata(out_dir / name)
        nx, ny, nz = meta.dims
        for z in range(nz):
            sl = VoxelBox((0, 0, z), (nx, ny, z + 1))
            plane = read_region(meta, out_dir / name, sl).values
            write_previews(plane, plane != SENTINEL, out_dir / "previews", prefix=name, fmt=fmt, z0=z)


def _load_field(config):
    from .chunk_engine import OUTPUT_DATASETS
    from .structure_tensor import OrientationField
    from .volume_io import read_metadata, read_volume

    out_dir = Path(config.output.directory)
    needed = OUTPUT_DATASETS["vectors"] + OUTPUT_DATASETS["fa"]
    missing = [n for n in needed if not (out_dir / f"{n}.meta").exists()]
    if missing:
        raise ConfigError(f"run 'orientation' with save including vectors and fa first; missing {missing}")
    meta = read_metadata(out_dir / "fa")
    vectors = np.stack([read_volume(out_dir / n) for n in ("fx", "fy", "fz")])
    fa = read_volume(out_dir / "fa")
    return OrientationField(meta.box, vectors, None, fa), meta


def _cmd_tractography(args) -> int:
    from .export import write_vtk_polylines
    from .tractography import filter_streamlines, seed_grid, track
    from .volume_io import read_volume

    config = _load(args)
    params = config.tracto_params()
    axis = config.axis()
    field, meta = _load_field(config)
    mask = None if config.input.mask is None else read_volume(config.input.mask) != 0
    if args.max_lines is not None and args.max_lines < 0:
        raise ConfigError("--max-lines must be >= 0")
    seeds = seed_grid(mask, field.fa, params)
    lines = filter_streamlines(track(field, seeds, params, axis, mask), params, args.max_lines)
    out = args.output or Path(config.output.directory) / "streamlines.vtk"
    if not lines:
        _err("no streamlines survived seeding and filtering")
        return EXIT_FAILED
    write_vtk_polylines(lines, out, spacing=meta.spacing)
    print(f"{len(lines)} streamlines from {len(seeds)} seeds -> {out}")
    return EXIT_OK


def _cmd_profile(args) -> int:
    from .analysis import SectorSpec, format_profile_csv, transmural_profile, write_profile_csv
    from .cardiac_frame import SENTINEL, AngleMaps
    from .volume_io import read_metadata, read_volume

    config = _load(args)
    if args.angle not in config.output.save:
        raise ConfigError(f"[output] save does not include {args.angle}")
    try:
        sector = SectorSpec(args.z_range, tuple(args.azimuth), args.bins)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_dir = Path(config.output.directory)
    meta = read_metadata(out_dir / args.angle)
    values = read_volume(out_dir / args.angle)
    valid = values != SENTINEL
    mask = valid if config.input.mask is None else read_volume(config.input.mask) != 0
    maps = AngleMaps(meta.box, values if args.angle == "ha" else None, values if args.angle == "ia" else None,
                     None, valid)
    try:
        profile = transmural_profile(maps, mask, config.axis(), sector, angle=args.angle)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_FAILED
    dest = args.output or str(out_dir / f"profile_{args.angle}.csv")
    if dest == "-":
        sys.stdout.write(format_profile_csv(profile))
    else:
        write_profile_csv(profile, dest)
    return EXIT_OK


def _cmd_info(args) -> int:
    from .volume_io import read_metadata

    if args.reference:
        print(reference())
    if args.config is not None:
        print(dump_config(_load(args)), end="")
    for path in args.datasets:
        meta = read_metadata(path)
        print(f"{path}: dims {meta.dims[0]}x{meta.dims[1]}x{meta.dims[2]} {meta.dtype} "
              f"spacing {','.join(repr(s) for s in meta.spacing)} ({meta.nbytes} bytes)")
    return EXIT_OK


_COMMANDS = {
    "phantom": _cmd_phantom,
    "orientation": _cmd_orientation,
    "tractography": _cmd_tractography,
    "profile": _cmd_profile,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    """Run the command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
