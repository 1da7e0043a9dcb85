"""Chunked, resumable, parallel execution of the orientation pipeline.

The volume is tiled into chunk cores.  Each chunk reads its core plus a halo
of ``R_g + R_t`` voxels (edge-replicated outside the volume), so every
output voxel sees exactly the same filter support as in a monolithic run and
the results are bit-identical for any chunking and worker count.  Chunks
write disjoint core regions of pre-created output datasets; the main
process appends each finished chunk index to ``chunks.done`` so a rerun
skips completed work.
"""
from __future__ import annotations

import fcntl
import json
import multiprocessing
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cardiac_frame import compute_angle_maps
from .config import Config, ConfigError
from .structure_tensor import StructureTensorParams, orientation_block
from .volume_io import (
    MetadataError,
    ScalarBlock,
    VolumeMeta,
    VoxelBox,
    ensure_dataset,
    read_mask_region,
    read_metadata,
    read_region,
    write_region,
)

MIN_CHUNK = 8
LEDGER_NAME = "chunks.done"
FINGERPRINT_NAME = "run.json"

# save token -> output dataset names
OUTPUT_DATASETS = {
    "ha": ("ha",),
    "ia": ("ia",),
    "fa": ("fa",),
    "vectors": ("fx", "fy", "fz"),
    "lambdas": ("l1", "l2", "l3"),
}


@dataclass(frozen=True)
class ChunkSpec:
    index: int
    core: VoxelBox
    padded: VoxelBox
    halo: int


@dataclass(frozen=True)
class PipelinePlan:
    meta: VolumeMeta
    params: StructureTensorParams
    chunk_shape: tuple[int, int, int]
    chunks: tuple[ChunkSpec, ...]
    workers: int
    outputs: dict


@dataclass
class PipelineResult:
    total: int
    computed: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    failed: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


def _axis_starts(n: int, c: int) -> list[int]:
    return list(range(0, n, c))


def plan_chunks(dims, chunk_shape, halo: int) -> list[ChunkSpec]:
    """Tile ``dims`` into chunk cores in z-major order.

    Boundary chunks shrink to fit; padded boxes extend ``halo`` voxels past
    every core face and may leave the volume.
    """
    dims = tuple(int(n) for n in dims)
    chunk_shape = tuple(int(c) for c in chunk_shape)
    if len(dims) != 3 or len(chunk_shape) != 3:
        raise ValueError("dims and chunk_shape need three components")
    if min(dims) < 1:
        raise ValueError(f"dims must be >= 1, got {dims}")
    if min(chunk_shape) < MIN_CHUNK:
        raise ValueError(f"chunk shape must be >= {MIN_CHUNK} per axis, got {chunk_shape}")
    if halo < 0:
        raise ValueError(f"halo must be >= 0, got {halo}")
    out = []
    xs, ys, zs = (_axis_starts(n, c) for n, c in zip(dims, chunk_shape))
    for z0 in zs:
        for y0 in ys:
            for x0 in xs:
                lo = (x0, y0, z0)
                hi = tuple(min(a + c, n) for a, c, n in zip(lo, chunk_shape, dims))
                core = VoxelBox(lo, hi)
                out.append(ChunkSpec(len(out), core, core.expand(halo), halo))
    return out


def job_slice(plan, job_index: int, job_count: int) -> list[ChunkSpec]:
    """Chunks assigned to one of ``job_count`` independent jobs (chunk i -> job i mod n)."""
    chunks = plan.chunks if isinstance(plan, PipelinePlan) else plan
    if job_count < 1:
        raise ValueError(f"job_count must be >= 1, got {job_count}")
    if not 0 <= job_index < job_count:
        raise ValueError(f"job_index {job_index} out of range for {job_count} jobs")
    return [c for c in chunks if c.index % job_count == job_index]


def output_names(save) -> list[str]:
    return [name for token in save for name in OUTPUT_DATASETS[token]]


def _output_dtype_meta(meta: VolumeMeta) -> VolumeMeta:
    return VolumeMeta(meta.dims, "float32", meta.spacing)


def build_plan(config: Config) -> PipelinePlan:
    """Validate inputs and derive the plan; touches nothing on disk."""
    try:
        meta = read_metadata(config.input.volume)
    except (OSError, MetadataError) as exc:
        raise ConfigError(f"cannot read input volume {config.input.volume}: {exc}") from None
    if config.input.mask is not None:
        try:
            mmeta = read_metadata(config.input.mask)
        except (OSError, MetadataError) as exc:
            raise ConfigError(f"cannot read mask {config.input.mask}: {exc}") from None
        if mmeta.dims != meta.dims:
            raise ConfigError(f"mask dims {mmeta.dims} differ from volume dims {meta.dims}")
    try:
        config.axis()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"invalid long-axis definition: {exc}") from None
    params = config.structure_tensor
    chunks = plan_chunks(meta.dims, config.chunking.chunk, params.halo)
    out_dir = Path(config.output.directory)
    outputs = {name: out_dir / name for name in output_names(config.output.save)}
    return PipelinePlan(meta, params, tuple(config.chunking.chunk), tuple(chunks),
                        config.chunking.workers, outputs)


def fingerprint(config: Config, plan: PipelinePlan) -> dict:
    """Everything that determines output bytes; worker and job counts are excluded."""
    c = config
    return {
        "volume": str(Path(c.input.volume).resolve()),
        "mask": None if c.input.mask is None else str(Path(c.input.mask).resolve()),
        "dims": list(plan.meta.dims),
        "spacing": list(plan.meta.spacing),
        "sigma_gradient": c.structure_tensor.sigma_gradient,
        "sigma_tensor": c.structure_tensor.sigma_tensor,
        "truncate": c.structure_tensor.truncate,
        "axis_point_a": None if c.frame.axis_point_a is None else list(c.frame.axis_point_a),
        "axis_point_b": None if c.frame.axis_point_b is None else list(c.frame.axis_point_b),
        "axis_centers": None if c.frame.axis_centers_file is None else [list(r) for r in c.axis().centers],
        "chunk": list(plan.chunk_shape),
        "save": list(c.output.save),
    }


def read_ledger(path) -> set[int]:
    """Chunk indices recorded as finished; a torn last line is ignored."""
    done = set()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        return done
    lines = text.split("\n")[:-1]  # the piece after the last newline may be torn
    for line in lines:
        line = line.strip()
        if line.isdigit():
            done.add(int(line))
    return done


def append_ledger(path, index: int) -> None:
    with open(path, "a", encoding="utf-8") as f:
        fcntl.flock(f, fcntl.LOCK_EX)
        try:
            f.write(f"{index}\n")
            f.flush()
            os.fsync(f.fileno())
        finally:
            fcntl.flock(f, fcntl.LOCK_UN)


def prepare_outputs(config: Config, plan: PipelinePlan) -> Path:
    """Create the output directory, fingerprint and datasets; returns the ledger path.

    An existing fingerprint must match, otherwise the directory belongs to
    a different run and ``ConfigError`` is raised.
    """
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    fp = fingerprint(config, plan)
    fp_path = out_dir / FINGERPRINT_NAME
    if fp_path.exists():
        try:
            existing = json.loads(fp_path.read_text(encoding="utf-8"))
        except ValueError:
            existing = None
        if existing != fp:
            raise ConfigError(f"{out_dir} holds outputs of a different run (see {fp_path})")
    else:
        tmp = fp_path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(fp, indent=1) + "\n", encoding="utf-8")
        os.replace(tmp, fp_path)
    ometa = _output_dtype_meta(plan.meta)
    for path in plan.outputs.values():
        try:
            ensure_dataset(ometa, path)
        except MetadataError as exc:
            raise ConfigError(str(exc)) from None
    return out_dir / LEDGER_NAME


@dataclass(frozen=True)
class _Task:
    chunk: ChunkSpec
    volume: str
    mask: str | None
    mask_meta: VolumeMeta | None
    params: StructureTensorParams
    axis: object
    meta: VolumeMeta
    outputs: tuple[tuple[str, str], ...]


def process_chunk(task: _Task) -> dict[str, np.ndarray]:
    """Compute every output plane for one chunk core (no writes)."""
    meta = task.meta
    chunk = task.chunk
    block = read_region(meta, task.volume, chunk.padded)
    field_ = orientation_block(block, task.params, meta.spacing, core=chunk.core)
    del block
    mask = None
    if task.mask is not None:
        mask = read_mask_region(task.mask_meta, task.mask, chunk.core).values
    maps = compute_angle_maps(field_, task.axis, mask)
    planes = {"ha": maps.ha, "ia": maps.ia, "fa": maps.fa}
    for k, name in enumerate(("fx", "fy", "fz")):
        planes[name] = field_.vectors[k]
    for k, name in enumerate(("l1", "l2", "l3")):
        planes[name] = field_.lambdas[k]
    return planes


def _run_task(task: _Task):
    try:
        planes = process_chunk(task)
        ometa = _output_dtype_meta(task.meta)
        core = task.chunk.core
        for name, path in task.outputs:
            write_region(ometa, path, core, ScalarBlock(core, planes[name]))
        return task.chunk.index, None
    except Exception:  # noqa: BLE001 - a failed chunk must not stop the run
        return task.chunk.index, traceback.format_exc()


def run_pipeline(
    config: Config,
    workers: int | None = None,
    job_index: int = 0,
    job_count: int = 1,
    on_chunk_done=None,
    progress=None,
) -> PipelineResult:
    """Run the orientation pipeline for this job's share of the chunks.

    Parameters
    ----------
    config : Config
        Validated configuration.
    workers : int, optional
        Worker processes; defaults to ``config.chunking.workers``.
    job_index, job_count : int
        Job sharding; chunk ``i`` belongs to job ``i % job_count``.
    on_chunk_done : callable, optional
        Called with the chunk index after its ledger record is written.
    progress : file-like, optional
        Receives ``chunk i/n done`` lines; defaults to standard output.

    Returns
    -------
    PipelineResult
        Computed, skipped (already in the ledger) and failed chunk indices.

    Raises
    ------
    ConfigError
        Invalid inputs, job indices, or an output directory holding a
        different run.  Raised before anything is written.
    """
    workers = config.chunking.workers if workers is None else int(workers)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    plan = build_plan(config)
    try:
        mine = job_slice(plan, job_index, job_count)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ledger = prepare_outputs(config, plan)
    progress = sys.stdout if progress is None else progress

    done = read_ledger(ledger)
    result = PipelineResult(total=len(mine))
    result.skipped = [c.index for c in mine if c.index in done]
    todo = [c for c in mine if c.index not in done]
    axis = config.axis()
    outputs = tuple((n, str(p)) for n, p in plan.outputs.items())
    mask = None if config.input.mask is None else str(config.input.mask)
    mask_meta = None if mask is None else read_metadata(mask)
    tasks = [
        _Task(c, str(config.input.volume), mask, mask_meta, plan.params, axis, plan.meta, outputs)
        for c in todo
    ]
    count = len(result.skipped)
    n = len(mine)

    def finish(index, error):
        nonlocal count
        if error is not None:
            result.failed[index] = error
            last = error.strip().splitlines()[-1]
            print(f"chunk {index} failed: {last}", file=sys.stderr)
            return
        append_ledger(ledger, index)
        result.computed.append(index)
        count += 1
        print(f"chunk {count}/{n} done", file=progress, flush=True)
        if on_chunk_done is not None:
            on_chunk_done(index)

    if workers == 1 or len(tasks) <= 1:
        for t in tasks:
            finish(*_run_task(t))
    else:
        ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() \
            else multiprocessing.get_context()
        with ctx.Pool(min(workers, len(tasks))) as pool:
            for index, error in pool.imap_unordered(_run_task, tasks):
                finish(index, error)
    return result
