"""The export pipeline: manifest audio through a feature model into SIFB files."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ExportError
from .manifest import read_manifest, write_manifest
from .models import load_model
from .sifb import write_sifb

REPORT_NAME = "export_report.json"
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ExportJob:
    """What to export: which manifest, which model, which layers, where to.

    `layers` is an inclusive (first, last) index range into the model's layer
    axis; None exports every layer. `sample_rate` is asserted per clip, never
    resampled."""

    manifest: str | os.PathLike
    model: str
    out_dir: str | os.PathLike
    layers: tuple[int, int] | None = None
    sample_rate: int = 16000
    threads: int = 1

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ExportError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.threads < 1:
            raise ExportError(f"threads must be >= 1, got {self.threads}")
        if self.layers is not None:
            lo, hi = self.layers
            if lo < 0 or hi < lo:
                raise ExportError(f"layer range must satisfy 0 <= first <= last, got {self.layers}")


@dataclass
class ClipFailure:
    clip_id: str
    reason: str


@dataclass
class ExportReport:
    exported: list[str] = field(default_factory=list)
    failures: list[ClipFailure] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    manifest_path: Path | None = None
    report_path: Path | None = None

    def to_json(self) -> dict:
        return {
            "exported": list(self.exported),
            "failures": [{"clip_id": f.clip_id, "reason": f.reason} for f in self.failures],
            "files": list(self.files),
        }


def _read_audio(path: Path, expected_rate: int) -> list[tuple[str, np.ndarray]]:
    """Per-ear float waveforms; raises ValueError with a per-clip reason."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as err:
        raise ValueError(f"unreadable audio {path.name}: {err}") from err
    if rate != expected_rate:
        raise ValueError(f"{path.name}: sample rate {rate} != required {expected_rate}")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise ValueError(f"{path.name}: unsupported sample format {data.dtype}")
    if data.ndim == 1:
        return [("L", data)]
    if data.ndim == 2 and data.shape[1] == 2:
        return [("L", data[:, 0]), ("R", data[:, 1])]
    raise ValueError(f"{path.name}: need mono or stereo, got shape {data.shape}")


def _slice_layers(arr: np.ndarray, layers: tuple[int, int] | None) -> np.ndarray:
    if layers is None:
        return arr
    lo, hi = layers
    if hi >= arr.shape[0]:
        raise ValueError(f"layer range {layers} exceeds the model's {arr.shape[0]} layers")
    return arr[lo : hi + 1]


def export(job: ExportJob) -> ExportReport:
    """Run the job; per-clip problems land in the report, not in an exception.

    Writes one SIFB file per clip per ear per pathway (noisy plus any named
    enhanced recordings), a rewritten manifest whose `features` point at the
    noisy-pathway files, and a JSON failure report. Deterministic models make
    the whole run idempotent: re-running overwrites every artifact with
    identical bytes."""
    job.validate()
    model = load_model(job.model)
    manifest_path = Path(job.manifest)
    header, rows = read_manifest(manifest_path)
    if not rows:
        raise ExportError(f"{manifest_path}: no clips to export")
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_dir = manifest_path.parent

    def rebase(rel: str) -> str:
        p = Path(rel)
        return rel if p.is_absolute() else os.path.relpath(src_dir / p, out)

    seen: set[str] = set()

    def process(row: dict):
        clip_id = str(row.get("clip_id", "")) or "<missing clip_id>"
        if clip_id in seen:
            return None, ClipFailure(clip_id, "duplicate clip_id"), []
        seen.add(clip_id)
        wav = row.get("wav")
        if not wav:
            return None, ClipFailure(clip_id, "no waveform reference"), []
        pathways = [("noisy", wav)]
        pathways += sorted((row.get("enhanced_wavs") or {}).items())
        written: list[str] = []
        exported: dict[str, dict[str, str]] = {}
        try:
            for pathway, rel in pathways:
                src = rel if Path(rel).is_absolute() else src_dir / rel
                per_ear = _read_audio(Path(src), job.sample_rate)
                exported[pathway] = {}
                for ear, samples in per_ear:
                    arr = _slice_layers(model.extract(samples, job.sample_rate), job.layers)
                    fname = f"{clip_id}.{pathway}.{ear}.sifb"
                    write_sifb(out / fname, arr)
                    written.append(fname)
                    exported[pathway][ear] = fname
        except ValueError as err:
            return None, ClipFailure(clip_id, str(err)), written
        delta = dict(row)
        for key in ("wav", "clean_wav"):
            if delta.get(key):
                delta[key] = rebase(delta[key])
        if delta.get("enhanced_wavs"):
            delta["enhanced_wavs"] = {k: rebase(v) for k, v in delta["enhanced_wavs"].items()}
        delta["features"] = dict(exported["noisy"])
        delta["extra"] = {**(row.get("extra") or {}), "exported_features": exported}
        return delta, None, written

    if job.threads > 1:
        with ThreadPoolExecutor(max_workers=job.threads) as pool:
            results = list(pool.map(process, rows))
    else:
        results = [process(row) for row in rows]

    report = ExportReport()
    deltas = []
    for row, (delta, failure, written) in zip(rows, results):
        report.files.extend(written)
        if failure is not None:
            report.failures.append(failure)
        else:
            report.exported.append(str(row["clip_id"]))
            deltas.append(delta)

    if header is None:
        header = {"manifest": {"enhancers": [], "name": "export", "sample_rate": job.sample_rate}}
    report.manifest_path = out / MANIFEST_NAME
    write_manifest(report.manifest_path, header, deltas)
    report.report_path = out / REPORT_NAME
    blob = json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n"
    tmp = report.report_path.with_name(f"{REPORT_NAME}.tmp-{os.getpid()}")
    tmp.write_text(blob, encoding="utf-8")
    os.replace(tmp, report.report_path)
    return report
