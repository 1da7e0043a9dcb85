"""INI-style run configuration: parsing, validation, overrides and dumping.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` comments and
blank lines.  Every key is typed and checked at parse time; unknown
sections or keys are errors.  Relative paths resolve against the directory
holding the config file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .structure_tensor import StructureTensorParams

SAVE_TOKENS = ("ha", "ia", "fa", "vectors", "lambdas")
DEFAULT_SAVE = ("ha", "ia", "fa", "vectors")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the offending line number when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        elif source:
            where = f"{source}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class InputSection:
    volume: Path
    mask: Path | None = None


@dataclass(frozen=True)
class FrameSection:
    axis_point_a: tuple[float, float, float] | None = None
    axis_point_b: tuple[float, float, float] | None = None
    axis_centers_file: Path | None = None


@dataclass(frozen=True)
class ChunkingSection:
    chunk: tuple[int, int, int] = (128, 128, 128)
    workers: int = 1


@dataclass(frozen=True)
class OutputSection:
    directory: Path
    save: tuple[str, ...] = DEFAULT_SAVE


@dataclass(frozen=True)
class TractographySection:
    seed_spacing: int = 4
    step: float = 0.5
    fa_threshold: float = 0.1
    max_angle: float = 60.0
    max_steps: int = 10000
    min_length: float = 10.0


@dataclass(frozen=True)
class Config:
    input: InputSection
    structure_tensor: StructureTensorParams
    frame: FrameSection
    chunking: ChunkingSection
    output: OutputSection
    tractography: TractographySection = field(default_factory=TractographySection)
    base_dir: Path = field(default=Path("."), compare=False)  # where relative paths were resolved

    def axis(self):
        from .cardiac_frame import AxisModel

        if self.frame.axis_centers_file is not None:
            return AxisModel.from_csv(self.frame.axis_centers_file)
        return AxisModel.from_points(self.frame.axis_point_a, self.frame.axis_point_b)

    def tracto_params(self):
        from .tractography import TractoParams

        t = self.tractography
        return TractoParams(
            step=t.step,
            fa_min=t.fa_threshold,
            max_angle_deg=t.max_angle,
            max_steps=t.max_steps,
            seed_spacing=t.seed_spacing,
            min_length=t.min_length,
        )


# key -> (kind, default, check, description); default None with required=True
# means the key must be given.
_SCHEMA = {
    "input": {
        "volume": ("path", None, None, "input volume (raw dataset with sidecar, or image-stack directory); required"),
        "mask": ("path?", None, None, "tissue mask dataset, same dims as the volume; optional"),
    },
    "structure_tensor": {
        "sigma_gradient": ("float", 1.0, lambda v: v > 0, "gradient (noise) scale in voxels, > 0"),
        "sigma_tensor": ("float", 3.0, lambda v: v >= 0, "integration scale in voxels, >= 0"),
        "truncate": ("float", 4.0, lambda v: v >= 2, "kernel radius in sigmas, >= 2"),
    },
    "frame": {
        "axis_point_a": ("triple", None, None, "x,y,z point on the long axis"),
        "axis_point_b": ("triple", None, None, "second x,y,z point on the long axis (different z)"),
        "axis_centers_file": ("path?", None, None, "CSV of z,cx,cy axis centers; replaces the two points"),
    },
    "chunking": {
        "chunk": ("itriple", (128, 128, 128), lambda v: min(v) >= 8, "chunk core size cx,cy,cz, each >= 8"),
        "workers": ("int", 1, lambda v: v >= 1, "parallel worker processes, >= 1"),
    },
    "output": {
        "directory": ("path", "output", None, "output directory"),
        "save": ("save", DEFAULT_SAVE, None, "comma list from ha, ia, fa, vectors, lambdas"),
    },
    "tractography": {
        "seed_spacing": ("int", 4, lambda v: v >= 1, "voxels between lattice seeds, >= 1"),
        "step": ("float", 0.5, lambda v: 0 < v <= 2, "integration step in voxels, in (0, 2]"),
        "fa_threshold": ("float", 0.1, lambda v: 0 <= v < 1, "FA stopping threshold, in [0, 1)"),
        "max_angle": ("float", 60.0, lambda v: 0 < v <= 90, "per-step turning limit in degrees, in (0, 90]"),
        "max_steps": ("int", 10000, lambda v: v >= 1, "steps per direction, >= 1"),
        "min_length": ("float", 10.0, lambda v: v >= 0, "minimum streamline length in voxels, >= 0"),
    },
}


def _convert(kind: str, text: str, base_dir: Path):
    text = text.strip()
    if kind in ("path", "path?"):
        if not text:
            raise ValueError("empty path")
        p = Path(text).expanduser()
        return p if p.is_absolute() else (base_dir / p)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "int":
        return int(text)
    if kind in ("triple", "itriple"):
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 3:
            raise ValueError("expected three comma-separated values")
        if kind == "itriple":
            return tuple(int(s) for s in parts)
        vals = tuple(float(s) for s in parts)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("must be finite")
        return vals
    if kind == "save":
        tokens = tuple(s.strip() for s in text.split(",") if s.strip())
        if not tokens:
            raise ValueError("nothing to save")
        bad = [t for t in tokens if t not in SAVE_TOKENS]
        if bad:
            raise ValueError(f"unknown save token(s) {bad}; allowed {list(SAVE_TOKENS)}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate save token")
        return tokens
    raise AssertionError(kind)


def _scan(text: str, source: str | None):
    """Split text into ``{section: {key: (value, line)}}`` without type checks."""
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno, source)
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, source)
            if section in raw:
                raise ConfigError(f"duplicate section [{section}]", lineno, source)
            raw[section] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno, source)
        if section is None:
            raise ConfigError("key outside of any section", lineno, source)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, source)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, source)
        raw[section][key] = (value, lineno)
    return raw


def parse_override(text: str) -> tuple[str, str, str]:
    """Split ``SECTION.KEY=VALUE``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not SECTION.KEY=VALUE")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override {text!r} is not SECTION.KEY=VALUE")
    section, key = (s.strip() for s in lhs.split(".", 1))
    if section not in _SCHEMA:
        raise ConfigError(f"override names unknown section [{section}]")
    if key not in _SCHEMA[section]:
        raise ConfigError(f"override names unknown key {key!r} in [{section}]")
    return section, key, value.strip()


def parse_config(text: str, base_dir=".", overrides=(), source: str | None = None) -> Config:
    """Parse and validate configuration text.

    Parameters
    ----------
    text : str
        Config file contents.
    base_dir : path-like
        Directory that relative paths resolve against.
    overrides : iterable of str
        ``SECTION.KEY=VALUE`` items applied on top of the file values.
    source : str, optional
        Name used in error messages.

    Returns
    -------
    Config
        Fully validated configuration with defaults filled in.

    Raises
    ------
    ConfigError
        Unknown section or key, type mismatch or constraint violation.  The
        error carries the line number of the offending entry.
    """
    base_dir = Path(base_dir).resolve()
    raw = _scan(text, source)
    for item in overrides:
        section, key, value = parse_override(item)
        raw.setdefault(section, {})[key] = (value, None)

    values: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        given = raw.get(section, {})
        out = {}
        for key, (kind, default, check, _) in keys.items():
            if key not in given:
                out[key] = _convert(kind, default, base_dir) if kind == "path" and default else default
                continue
            text_value, lineno = given[key]
            where = lineno if lineno is not None else None
            label = source if lineno is not None else "--set"
            try:
                v = _convert(kind, text_value, base_dir)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc} (got {text_value!r})", where, label) from None
            if check is not None and not check(v):
                raise ConfigError(f"[{section}] {key} = {text_value} violates constraint: {keys[key][3]}", where, label)
            out[key] = v
        values[section] = out

    def line_of(section, key):
        entry = raw.get(section, {}).get(key)
        return entry[1] if entry else None

    if values["input"]["volume"] is None:
        raise ConfigError("[input] volume is required", None, source)
    fr = values["frame"]
    has_points = fr["axis_point_a"] is not None or fr["axis_point_b"] is not None
    if fr["axis_centers_file"] is not None and has_points:
        raise ConfigError("[frame] give either axis points or axis_centers_file, not both",
                          line_of("frame", "axis_centers_file"), source)
    if fr["axis_centers_file"] is None:
        if fr["axis_point_a"] is None or fr["axis_point_b"] is None:
            raise ConfigError("[frame] needs axis_point_a and axis_point_b, or axis_centers_file", None, source)
        if fr["axis_point_a"][2] == fr["axis_point_b"][2]:
            raise ConfigError("[frame] axis points must differ in z", line_of("frame", "axis_point_b"), source)
    try:
        st = StructureTensorParams(**values["structure_tensor"])
    except ValueError as exc:
        raise ConfigError(f"[structure_tensor] {exc}", None, source) from None

    return Config(
        input=InputSection(**values["input"]),
        structure_tensor=st,
        frame=FrameSection(**fr),
        chunking=ChunkingSection(**values["chunking"]),
        output=OutputSection(**values["output"]),
        tractography=TractographySection(**values["tractography"]),
        base_dir=base_dir,
    )


def load_config(path, overrides=()) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    except UnicodeDecodeError:
        raise ConfigError("config is not valid UTF-8", None, str(path)) from None
    return parse_config(text, path.parent, overrides, source=str(path))


def _format(kind: str, v) -> str:
    if kind in ("triple",):
        return ",".join(repr(float(x)) for x in v)
    if kind == "itriple":
        return ",".join(str(int(x)) for x in v)
    if kind == "save":
        return ",".join(v)
    if kind == "float":
        return repr(float(v))
    return str(v)


def dump_config(config: Config) -> str:
    """Effective configuration as text; ``parse_config`` of it gives an equal Config."""
    sections = {
        "input": config.input,
        "structure_tensor": config.structure_tensor,
        "frame": config.frame,
        "chunking": config.chunking,
        "output": config.output,
        "tractography": config.tractography,
    }
    lines = []
    for name, obj in sections.items():
        lines.append(f"[{name}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_format(_SCHEMA[name][f.name][0], v)}")
        lines.append("")
    return "\n".join(lines)


def reference() -> str:
    """Reference page listing every section, key, default and constraint."""
    out = ["Configuration reference", "=======================", ""]
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key, (kind, default, _, desc) in keys.items():
            d = "-" if default is None else _format(kind, default)
            out.append(f"  {key:<18} default {d:<14} {desc}")
        out.append("")
    return "\n".join(out)
