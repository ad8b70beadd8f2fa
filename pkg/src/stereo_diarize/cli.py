"""Command-line orchestration: segment -> embed -> evaluate.

Layout of an experiment's output directory::

    segments/inventory.csv   one row per one-second segment
    segments/counts.csv      segments per speaker
    embeddings/<METHOD>.dvec one DVEC file per combination method
    reports/                 report.json plus plot-ready CSV tables
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .audio_io import cut_and_segment, read_manifest, read_wav, StereoSegment, encode_wav_pcm16
from .channel_ops import Method, combine
from .config import ExperimentConfig, load_config
from .embedding import EmbeddingSet, embed_spectral, export_embeddings, read_embeddings
from .errors import ConfigError, ExperimentError, ManifestError, PipelineError
from .eval_stats import pca, run_experiment
from .synth import SynthConfig, format_manifest, generate_corpus

log = logging.getLogger("stereo_diarize")

INVENTORY_FIELDS = ["speaker_id", "index", "source", "start_sample", "sample_rate"]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows: Sequence[Sequence], header: Sequence[str], provenance: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_csv(path: Path):
    """(provenance comment, rows as dicts) of a file written by _csv_text."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path}: missing provenance header")
        return first[2:].strip(), list(csv.DictReader(fh))


def _check_provenance(found: str, cfg: ExperimentConfig, path: Path) -> None:
    if f"config_sha256={cfg.config_hash}" not in found:
        raise ConfigError(f"{path} was produced by a different configuration; rerun the earlier stage")


def _paths(cfg: ExperimentConfig) -> Dict[str, Path]:
    out = cfg.output_dir
    return {
        "inventory": out / "segments" / "inventory.csv",
        "counts": out / "segments" / "counts.csv",
        "embeddings": out / "embeddings",
        "reports": out / "reports",
    }


# --------------------------------------------------------------------------
# segment
# --------------------------------------------------------------------------

def collect_segments(cfg: ExperimentConfig) -> Dict[str, List[tuple]]:
    """speaker -> [(source, StereoSegment)] across all audio sources, renumbered from 1."""
    merged: Dict[str, List[tuple]] = defaultdict(list)
    rate = None
    for src in cfg.audio:
        manifest_path = cfg.resolve(src.manifest)
        try:
            spans = read_manifest(manifest_path)
        except ManifestError as exc:
            raise ManifestError(f"{manifest_path}: {exc}") from None
        signal = read_wav(cfg.resolve(src.wav))
        if rate is not None and signal.sample_rate != rate:
            raise ExperimentError(
                f"{src.wav} has sample rate {signal.sample_rate}, expected {rate}; resample beforehand")
        rate = signal.sample_rate
        try:
            per_speaker = cut_and_segment(signal, spans)
        except PipelineError as exc:
            raise type(exc)(f"{src.wav}: {exc}") from None
        for speaker, segments in per_speaker.items():
            merged[speaker].extend((src.wav, seg) for seg in segments)
    return {s: merged[s] for s in sorted(merged)}


def cmd_segment(cfg: ExperimentConfig) -> Path:
    merged = collect_segments(cfg)
    rows, counts = [], []
    for speaker, items in merged.items():
        counts.append([speaker, len(items)])
        for k, (source, seg) in enumerate(items, start=1):
            rows.append([speaker, k, source, seg.start_sample, seg.sample_rate])
    paths = _paths(cfg)
    prov = cfg.provenance()
    _write_atomic(paths["counts"], _csv_text(counts, ["speaker_id", "segments"], prov))
    _write_atomic(paths["inventory"], _csv_text(rows, INVENTORY_FIELDS, prov))
    log.info("segmented %d speakers into %d one-second segments", len(counts), len(rows))
    return paths["inventory"]


# --------------------------------------------------------------------------
# embed
# --------------------------------------------------------------------------

def _load_inventory_segments(cfg: ExperimentConfig) -> List[StereoSegment]:
    path = _paths(cfg)["inventory"]
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'segment' first")
    prov, rows = _read_csv(path)
    _check_provenance(prov, cfg, path)
    signals = {}
    segments = []
    for row in rows:
        source = row["source"]
        if source not in signals:
            signals[source] = read_wav(cfg.resolve(source))
        sig = signals[source]
        rate = int(row["sample_rate"])
        if sig.sample_rate != rate:
            raise ConfigError(f"{source} changed sample rate since segmentation")
        a = int(row["start_sample"])
        segments.append(StereoSegment(row["speaker_id"], int(row["index"]),
                                      sig.left[a:a + rate], sig.right[a:a + rate], rate, a))
    return segments


def cmd_embed(cfg: ExperimentConfig) -> List[Path]:
    out_dir = _paths(cfg)["embeddings"]
    prov = cfg.provenance()
    sets: Dict[Method, EmbeddingSet] = {}
    if cfg.external_mode:
        for method, rel in cfg.external.items():
            path = cfg.resolve(rel)
            emb = read_embeddings(path)
            if emb.method != method:
                raise ConfigError(f"{path} holds {emb.method} embeddings, configured for {method}")
            sets[method] = emb
    else:
        segments = _load_inventory_segments(cfg)
        dim = cfg.spectral.output_dim
        for method in cfg.methods:
            emb = EmbeddingSet(dim, method)
            for seg in segments:
                emb.append(embed_spectral(combine(seg, method), cfg.spectral))
            sets[method] = emb
    written = []
    for method, emb in sets.items():
        path = out_dir / f"{method.value}.dvec"
        _write_atomic(path, export_embeddings(emb, comment=prov))
        written.append(path)
    log.info("wrote %d embedding files", len(written))
    return written


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def _load_embedding_sets(cfg: ExperimentConfig) -> Dict[Method, EmbeddingSet]:
    out = {}
    for method in cfg.methods:
        path = _paths(cfg)["embeddings"] / f"{method.value}.dvec"
        if not path.exists():
            raise ConfigError(f"{path} not found; run 'embed' first")
        with open(path, encoding="utf-8") as fh:
            fh.readline()
            _check_provenance(fh.readline(), cfg, path)
        emb = read_embeddings(path)
        if emb.method != method:
            raise ConfigError(f"{path} holds {emb.method} embeddings")
        out[method] = emb
    return out


def cmd_evaluate(cfg: ExperimentConfig, stdout=None) -> List[Path]:
    sets = _load_embedding_sets(cfg)
    report = run_experiment(sets, cfg.plan, cfg.fit)
    prov = cfg.provenance()
    rep_dir = _paths(cfg)["reports"]
    methods = report.methods
    files: Dict[str, str] = {}

    doc = {
        "provenance": {"config_sha256": cfg.config_hash, "plan_seed": cfg.plan.rng_seed,
                       "fit_seed": cfg.fit.rng_seed, "version": __version__},
        "dataset": cfg.dataset,
        "plan": {"train_fraction": cfg.plan.train_fraction, "repeats": cfg.plan.repeats,
                 "kfold": cfg.plan.kfold, "runs": cfg.plan.n_runs},
        **report.to_dict(),
    }
    files["report.json"] = json.dumps(doc, indent=1) + "\n"

    means = report.per_method_mean_error
    low = min(means.values())
    lowest = "|".join(m.value for m in methods if means[m] == low)
    files["error_table.csv"] = _csv_text(
        [[cfg.dataset] + [_fmt(means[m]) for m in methods] + [lowest]],
        ["dataset"] + [m.value for m in methods] + ["lowest"], prov)
    files["run_errors.csv"] = _csv_text(
        [[r.run_index, r.method.value, _fmt(r.error_rate)] for r in report.run_results],
        ["run", "method", "error_rate"], prov)
    files["zscores.csv"] = _csv_text(
        [[m.value, i, _fmt(z)] for m in methods for i, z in enumerate(report.zscores[m])],
        ["method", "run", "zscore"], prov)
    files["pairwise_p.csv"] = _csv_text(
        [[a.value, b.value] + ([_fmt(s.u_statistic), _fmt(s.z_value), _fmt(s.p_value), int(s.exact)]
                               if s else ["", "", "", ""])
         for (a, b), s in report.pairwise.items()],
        ["method_a", "method_b", "u_statistic", "z_value", "p_value", "exact"], prov)
    for m in methods:
        emb = sets[m]
        if len(emb) < 3:
            continue
        coords, _, variance = pca(emb.entries, 2)
        rows = [[e.speaker_id, e.index, _fmt(c[0]), _fmt(c[1])] for e, c in zip(emb.entries, coords)]
        files[f"pca_{m.value}.csv"] = _csv_text(rows, ["speaker_id", "index", "pc1", "pc2"], prov)

    written = []
    for name, text in files.items():
        _write_atomic(rep_dir / name, text)
        written.append(rep_dir / name)

    stdout = stdout or sys.stdout
    print("dataset\t" + "\t".join(m.value for m in methods), file=stdout)
    print(cfg.dataset + "\t" + "\t".join(f"{means[m]:.4f}" + ("*" if means[m] == low else "")
                                         for m in methods), file=stdout)
    for (a, b), p in report.pairwise_p.items():
        print(f"p({a.value},{b.value})\t{p:.4g}", file=stdout)
    return written


def cmd_run_all(cfg: ExperimentConfig, stdout=None) -> List[Path]:
    if not cfg.external_mode:
        cmd_segment(cfg)
    cmd_embed(cfg)
    return cmd_evaluate(cfg, stdout)


# --------------------------------------------------------------------------
# synth-corpus
# --------------------------------------------------------------------------

def cmd_synth_corpus(out_dir: Path, synth: SynthConfig) -> Path:
    """Write corpus.wav, manifest.csv and a ready-to-run experiment.json."""
    signal, spans, talkers = generate_corpus(synth)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav = out_dir / "corpus.wav"
    tmp = wav.with_suffix(".wav.tmp")
    tmp.write_bytes(encode_wav_pcm16(signal))
    os.replace(tmp, wav)
    _write_atomic(out_dir / "manifest.csv", format_manifest(spans))
    config = {
        "dataset": f"synthetic {synth.n_speakers} speakers (seed {synth.seed})",
        "audio": [{"wav": "corpus.wav", "manifest": "manifest.csv"}],
        "methods": ["MONO", "SUM", "HSTACK", "SUMDIF"],
        "embedder": {"type": "spectral", "n_mels": 40, "frame_length": 0.025,
                     "frame_hop": 0.01, "fft_size": None, "output_dim": 256},
        "fit": {"n_components": 1, "max_iterations": 100, "convergence_tol": 1e-3,
                "covariance_ridge": 1e-6, "rng_seed": synth.seed, "kmeans_restarts": 10},
        "plan": {"train_fraction": 0.7, "rng_seed": synth.seed, "repeats": 50},
        "output_dir": "results",
    }
    path = out_dir / "experiment.json"
    _write_atomic(path, json.dumps(config, indent=2) + "\n")
    talkers_doc = [{"speaker_id": t.speaker_id, "formants_hz": list(t.formants),
                    "left_gain": t.left_gain, "right_gain": t.right_gain} for t in talkers]
    _write_atomic(out_dir / "talkers.json", json.dumps(talkers_doc, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereo-diarize",
        description="Stereo channel-combination features and per-speaker GMM utterance classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("segment", "cut annotated speech into one-second stereo segments"),
        ("embed", "write one embedding file per combination method"),
        ("evaluate", "run the repeated GMM experiment and write reports"),
        ("run-all", "segment, embed and evaluate in one go"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the plan and fit seeds")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("synth-corpus", help="generate the synthetic stereo test corpus")
    p.add_argument("--out", required=True, help="directory for corpus.wav, manifest.csv, experiment.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="optional JSON object of synthesis parameters")
    p.add_argument("--speakers", type=int)
    p.add_argument("--seconds", type=int)
    p.add_argument("--sample-rate", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "synth-corpus":
            params = {}
            if args.config:
                params.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
            for key, value in [("n_speakers", args.speakers), ("seconds_per_speaker", args.seconds),
                               ("sample_rate", args.sample_rate)]:
                if value is not None:
                    params[key] = value
            params["seed"] = args.seed
            path = cmd_synth_corpus(Path(args.out), SynthConfig(**params))
            print(path)
            return 0

        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        if args.command == "segment":
            print(cmd_segment(cfg))
        elif args.command == "embed":
            for path in cmd_embed(cfg):
                print(path)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        else:
            cmd_run_all(cfg)
        return 0
    except (PipelineError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
