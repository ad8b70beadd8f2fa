"""Declarative experiment configuration (JSON)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .channel_ops import ALL_METHODS, Method
from .embedding import SpectralEmbedderConfig
from .errors import ConfigError
from .eval_stats import SplitPlan
from .gmm import FitConfig


@dataclass(frozen=True)
class AudioSource:
    wav: str
    manifest: str


@dataclass
class ExperimentConfig:
    methods: List[Method]
    fit: FitConfig
    plan: SplitPlan
    output_dir: Path
    audio: List[AudioSource] = field(default_factory=list)
    spectral: Optional[SpectralEmbedderConfig] = None
    external: Dict[Method, str] = field(default_factory=dict)
    dataset: str = "dataset"
    base_dir: Path = Path(".")

    @property
    def external_mode(self) -> bool:
        return self.spectral is None

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        return p if p.is_absolute() else self.base_dir / p

    def canonical(self) -> dict:
        """Everything that influences results, with paths as written (output_dir excluded)."""
        doc = {
            "dataset": self.dataset,
            "audio": [asdict(a) for a in self.audio],
            "methods": [m.value for m in self.methods],
            "fit": asdict(self.fit),
            "plan": asdict(self.plan),
        }
        if self.external_mode:
            doc["embedder"] = {"type": "external", "files": {m.value: f for m, f in self.external.items()}}
        else:
            doc["embedder"] = {"type": "spectral", **asdict(self.spectral)}
        return doc

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def provenance(self) -> str:
        return (f"config_sha256={self.config_hash} plan_seed={self.plan.rng_seed} "
                f"fit_seed={self.fit.rng_seed}")


def _section(doc, key, cls, seed_override):
    raw = dict(doc.get(key) or {})
    if seed_override is not None:
        raw["rng_seed"] = seed_override
    if "rng_seed" not in raw:
        raise ConfigError(f"'{key}.rng_seed' is required (or pass --seed)")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad '{key}' section: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad '{key}' section: {exc}") from None


def parse_config(doc: dict, base_dir: Path = Path("."), seed: Optional[int] = None,
                 output_dir: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        methods = [Method.parse(m) for m in doc.get("methods", [m.value for m in ALL_METHODS])]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not methods:
        raise ConfigError("at least one method is required")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods listed more than once")
    methods = sorted(methods, key=list(Method).index)

    audio = []
    for item in doc.get("audio", []):
        try:
            audio.append(AudioSource(str(item["wav"]), str(item["manifest"])))
        except (KeyError, TypeError):
            raise ConfigError("each audio entry needs 'wav' and 'manifest'") from None

    emb = dict(doc.get("embedder") or {"type": "spectral"})
    kind = emb.pop("type", "spectral")
    spectral, external = None, {}
    if kind == "spectral":
        try:
            spectral = SpectralEmbedderConfig(**emb)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'embedder' section: {exc}") from None
    elif kind == "external":
        files = emb.get("files") or {}
        try:
            external = {Method.parse(k): str(v) for k, v in files.items()}
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        missing = [m.value for m in methods if m not in external]
        if missing:
            raise ConfigError(f"external embedder lacks files for {', '.join(missing)}")
        external = {m: external[m] for m in methods}
    else:
        raise ConfigError(f"unknown embedder type {kind!r}")

    out = output_dir if output_dir is not None else doc.get("output_dir")
    if not out:
        raise ConfigError("'output_dir' is required (or pass --out)")
    out_path = Path(out)
    if not out_path.is_absolute() and output_dir is None:
        out_path = base_dir / out_path

    return ExperimentConfig(
        methods=methods,
        fit=_section(doc, "fit", FitConfig, seed),
        plan=_section(doc, "plan", SplitPlan, seed),
        output_dir=out_path,
        audio=audio,
        spectral=spectral,
        external=external,
        dataset=str(doc.get("dataset", "dataset")),
        base_dir=base_dir,
    )


def load_config(path, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent, seed, output_dir)
