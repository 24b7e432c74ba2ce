"""Engine configuration: key = value text file plus CLI flag overrides.

Recognized keys (paths are resolved relative to the config file's directory
unless absolute):

    captions            JSONL caption corpus (required)
    vocab               vocabulary file (required)
    regions             regions JSONL (required)
    region_embeddings   EMB1 file for region vectors (required)
    queries             label-query EMB1 file with sidecar (required)
    out_dir             output directory (required)
    seed                64-bit integer, drives all randomness (required)
    lexicon_dir         lexicon directory (default: packaged data)
    generated_tags      comma-separated JSONL paths of generated tag ids
    generated_captions  comma-separated JSONL caption paths to parse
    seed_annotations    JSONL of externally supplied per-image tag ids
    image_embeddings    EMB1 file of whole-image vectors (enables the
                        contrary-prediction check)
    thresholds          threshold profile TSV (default: flat 0.2)
    whitelist           file of one tag_id per line; only these categories
                        are cleaned (default: every category with regions)
    fraction            outlier fraction in [0, 1) (default 0.10)
    outlier_scope       "category" pools distances across the whole category,
                        "cluster" marks the fraction within each cluster
                        (default "category")
    min_regions         skip categories with fewer regions (default 20)
    margin              contrary-prediction margin (default 0.05)
    tol                 Lloyd convergence tolerance (default 1e-4)
    max_iter            Lloyd iteration cap (default 100)
    workers             parser worker processes (default 1)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import TagforgeError


class ConfigError(TagforgeError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


_REQUIRED = ("captions", "vocab", "regions", "region_embeddings", "queries", "out_dir", "seed")
_OPTIONAL = (
    "lexicon_dir",
    "generated_tags",
    "generated_captions",
    "seed_annotations",
    "image_embeddings",
    "thresholds",
    "whitelist",
    "fraction",
    "outlier_scope",
    "min_regions",
    "margin",
    "tol",
    "max_iter",
    "workers",
)


@dataclass
class EngineConfig:
    captions: Path
    vocab: Path
    regions: Path
    region_embeddings: Path
    queries: Path
    out_dir: Path
    seed: int
    lexicon_dir: Path | None = None
    generated_tags: list[Path] = field(default_factory=list)
    generated_captions: list[Path] = field(default_factory=list)
    seed_annotations: Path | None = None
    image_embeddings: Path | None = None
    thresholds: Path | None = None
    whitelist: Path | None = None
    fraction: float = 0.10
    outlier_scope: str = "category"
    min_regions: int = 20
    margin: float = 0.05
    tol: float = 1e-4
    max_iter: int = 100
    workers: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigError("fraction", f"{self.fraction} outside [0, 1)")
        if self.outlier_scope not in ("category", "cluster"):
            raise ConfigError("outlier_scope", f"{self.outlier_scope!r} is not 'category' or 'cluster'")
        if self.margin < 0:
            raise ConfigError("margin", "must be >= 0")
        if self.tol <= 0:
            raise ConfigError("tol", "must be > 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter", "must be >= 1")
        if self.min_regions < 0:
            raise ConfigError("min_regions", "must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        for key in ("captions", "vocab", "regions", "region_embeddings", "queries"):
            path = getattr(self, key)
            if not Path(path).is_file():
                raise ConfigError(key, f"file not found: {path}")
        for key in ("seed_annotations", "image_embeddings", "thresholds", "whitelist"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(key, f"file not found: {path}")
        for key in ("generated_tags", "generated_captions"):
            for path in getattr(self, key):
                if not Path(path).is_file():
                    raise ConfigError(key, f"file not found: {path}")
        if self.lexicon_dir is not None and not Path(self.lexicon_dir).is_dir():
            raise ConfigError("lexicon_dir", f"directory not found: {self.lexicon_dir}")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(stripped.split()[0], f"line {lineno} is not 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in values:
            raise ConfigError(key, f"duplicated on line {lineno}")
        values[key] = value.strip()
    return values


def build_engine_config(
    values: dict[str, str], base_dir: str | Path = ".", overrides: dict | None = None
) -> EngineConfig:
    """Merge config-file values with override flags (overrides win)."""
    base_dir = Path(base_dir)
    merged = dict(values)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    unknown = sorted(set(merged) - set(_REQUIRED) - set(_OPTIONAL))
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    missing = [key for key in _REQUIRED if key not in merged]
    if missing:
        raise ConfigError(missing[0], "required key missing")

    def path_of(value) -> Path:
        p = Path(str(value))
        return p if p.is_absolute() else base_dir / p

    def path_list(key: str) -> list[Path]:
        raw = merged.get(key, "")
        if isinstance(raw, (list, tuple)):
            return [path_of(v) for v in raw]
        return [path_of(part.strip()) for part in str(raw).split(",") if part.strip()]

    def number(key: str, cast, default):
        if key not in merged:
            return default
        try:
            return cast(str(merged[key]))
        except ValueError:
            raise ConfigError(key, f"cannot parse {merged[key]!r}") from None

    try:
        seed = int(str(merged["seed"]), 0)
    except ValueError:
        raise ConfigError("seed", f"cannot parse {merged['seed']!r}") from None

    config = EngineConfig(
        captions=path_of(merged["captions"]),
        vocab=path_of(merged["vocab"]),
        regions=path_of(merged["regions"]),
        region_embeddings=path_of(merged["region_embeddings"]),
        queries=path_of(merged["queries"]),
        out_dir=path_of(merged["out_dir"]),
        seed=seed,
        lexicon_dir=path_of(merged["lexicon_dir"]) if merged.get("lexicon_dir") else None,
        generated_tags=path_list("generated_tags"),
        generated_captions=path_list("generated_captions"),
        seed_annotations=path_of(merged["seed_annotations"]) if merged.get("seed_annotations") else None,
        image_embeddings=path_of(merged["image_embeddings"]) if merged.get("image_embeddings") else None,
        thresholds=path_of(merged["thresholds"]) if merged.get("thresholds") else None,
        whitelist=path_of(merged["whitelist"]) if merged.get("whitelist") else None,
        fraction=number("fraction", float, 0.10),
        outlier_scope=str(merged.get("outlier_scope", "category")),
        min_regions=number("min_regions", int, 20),
        margin=number("margin", float, 0.05),
        tol=number("tol", float, 1e-4),
        max_iter=number("max_iter", int, 100),
        workers=number("workers", int, 1),
    )
    config.validate()
    return config
