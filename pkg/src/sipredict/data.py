"""Corpus handling: JSON-lines manifests, listener-safe splits, the 3-fold
protocol, augmentation, synthetic benchmark generation, and batch assembly.

A manifest line is one clip: paths to its audio (or precomputed features),
the listener's audiogram, and the measured intelligibility score. Paths are
stored relative to the manifest file so corpora stay relocatable.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, Waveform, read_wav, write_wav
from .errors import ContractError, ValidationError

AUDIOGRAM_FREQS = (250, 500, 1000, 2000, 4000, 6000)
LISTENER_GROUPS = ("HI", "NH")

_FOLD_TAG = 303
_AUG_TAG = 404
_SYNTH_TAG = 505
_BATCH_TAG = 606


@dataclass
class Clip:
    clip_id: str
    listener_id: str
    audiogram: tuple[float, ...]
    score: float
    wav: str | None = None
    clean_wav: str | None = None
    enhanced_wavs: dict[str, str] = field(default_factory=dict)
    features: dict[str, str] | None = None  # ear ("L"/"R") -> SIFB path
    listener_group: str = "HI"
    sources: tuple[str, str] | None = None  # 2-clips augmentation provenance
    silence_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def issues(self) -> list[str]:
        """Invariant violations, empty when the clip is well-formed."""
        out = []
        if not self.clip_id:
            out.append("missing clip_id")
        if not self.listener_id:
            out.append("missing listener_id")
        try:
            agram = [float(v) for v in self.audiogram]
            if len(agram) != len(AUDIOGRAM_FREQS):
                out.append(f"audiogram has {len(agram)} values, need {len(AUDIOGRAM_FREQS)}")
        except (TypeError, ValueError):
            out.append("audiogram is not a list of numbers")
        try:
            if not 0.0 <= float(self.score) <= 100.0:
                out.append(f"score {self.score} outside [0, 100]")
        except (TypeError, ValueError):
            out.append("score is not a number")
        if self.listener_group not in LISTENER_GROUPS:
            out.append(f"listener_group '{self.listener_group}' not in {LISTENER_GROUPS}")
        if self.wav is None and self.features is None and self.sources is None:
            out.append("clip references no audio: needs wav, features or sources")
        if self.features is not None and set(self.features) - {"L", "R"}:
            out.append(f"feature ears must be L/R, got {sorted(self.features)}")
        return out

    def to_json(self) -> dict:
        out = {
            "clip_id": self.clip_id,
            "listener_id": self.listener_id,
            "audiogram": list(self.audiogram),
            "score": self.score,
            "listener_group": self.listener_group,
        }
        if self.wav is not None:
            out["wav"] = self.wav
        if self.clean_wav is not None:
            out["clean_wav"] = self.clean_wav
        if self.enhanced_wavs:
            out["enhanced_wavs"] = dict(sorted(self.enhanced_wavs.items()))
        if self.features is not None:
            out["features"] = dict(sorted(self.features.items()))
        if self.sources is not None:
            out["sources"] = list(self.sources)
            out["silence_s"] = self.silence_s
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Clip":
        return cls(
            clip_id=str(obj.get("clip_id", "")),
            listener_id=str(obj.get("listener_id", "")),
            audiogram=tuple(obj.get("audiogram", ())),
            score=obj.get("score", -1.0),
            wav=obj.get("wav"),
            clean_wav=obj.get("clean_wav"),
            enhanced_wavs=dict(obj.get("enhanced_wavs", {})),
            features=dict(obj["features"]) if "features" in obj else None,
            listener_group=obj.get("listener_group", "HI"),
            sources=tuple(obj["sources"]) if "sources" in obj else None,
            silence_s=float(obj.get("silence_s", 0.0)),
            extra=dict(obj.get("extra", {})),
        )


@dataclass
class Manifest:
    name: str
    clips: list[Clip]
    sample_rate: int = CANONICAL_RATE
    enhancers: tuple[str, ...] = ()
    root: Path | None = None  # directory relative paths resolve against

    def __len__(self) -> int:
        return len(self.clips)

    def clip_map(self) -> dict[str, Clip]:
        return {c.clip_id: c for c in self.clips}

    def by_listener(self) -> dict[str, list[Clip]]:
        out: dict[str, list[Clip]] = {}
        for c in self.clips:
            out.setdefault(c.listener_id, []).append(c)
        return out

    def listener_ids(self) -> list[str]:
        return sorted(self.by_listener())

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def replaced(self, clips: list[Clip], name: str | None = None) -> "Manifest":
        return Manifest(name or self.name, clips, self.sample_rate, self.enhancers, self.root)

    def save(self, path) -> None:
        """Write JSON lines; relative paths are rebased onto the target

        directory so the saved manifest still resolves the same files."""
        path = Path(path)
        target = path.parent

        def rebase(rel: str) -> str:
            p = Path(rel)
            if p.is_absolute() or self.root is None:
                return rel
            src = Path(self.root)
            if src.resolve() == target.resolve():
                return rel
            return os.path.relpath(src / p, target)

        header = {
            "manifest": {
                "enhancers": list(self.enhancers),
                "name": self.name,
                "sample_rate": self.sample_rate,
            }
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for clip in self.clips:
                obj = clip.to_json()
                for key in ("wav", "clean_wav"):
                    if obj.get(key):
                        obj[key] = rebase(obj[key])
                for key in ("enhanced_wavs", "features"):
                    if obj.get(key):
                        obj[key] = {k: rebase(v) for k, v in obj[key].items()}
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_manifest(path, check_paths: bool = True) -> Manifest:
    """Parse and validate a JSON-lines manifest.

    Every invariant violation in the file is collected so one load attempt
    reports them all at once.
    """
    path = Path(path)
    root = path.parent
    name = path.stem
    sample_rate = CANONICAL_RATE
    enhancers: tuple[str, ...] = ()
    clips: list[Clip] = []
    problems: list[str] = []
    seen_ids: dict[str, int] = {}

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: not valid JSON ({exc.msg})")
                continue
            if "manifest" in obj:
                meta = obj["manifest"]
                name = meta.get("name", name)
                sample_rate = int(meta.get("sample_rate", sample_rate))
                enhancers = tuple(meta.get("enhancers", ()))
                continue
            clip = Clip.from_json(obj)
            for issue in clip.issues():
                problems.append(f"line {lineno}: {issue}")
            if clip.clip_id in seen_ids:
                problems.append(
                    f"line {lineno}: duplicate clip_id '{clip.clip_id}' (first on line {seen_ids[clip.clip_id]})"
                )
            else:
                seen_ids[clip.clip_id] = lineno
            if check_paths:
                for ref in _referenced_paths(clip):
                    if not (root / ref).exists() and not Path(ref).is_absolute():
                        problems.append(f"line {lineno}: missing file '{ref}'")
                    elif Path(ref).is_absolute() and not Path(ref).exists():
                        problems.append(f"line {lineno}: missing file '{ref}'")
            clips.append(clip)

    if problems:
        raise ValidationError(f"{path}: {len(problems)} manifest problem(s)", issues=problems)
    if not clips:
        warnings.warn(f"{path}: manifest is empty", stacklevel=2)
    return Manifest(name, clips, sample_rate, enhancers, root=root)


def _referenced_paths(clip: Clip) -> list[str]:
    out = []
    if clip.wav:
        out.append(clip.wav)
    if clip.clean_wav:
        out.append(clip.clean_wav)
    out.extend(clip.enhanced_wavs.values())
    if clip.features:
        out.extend(clip.features.values())
    return out


# -- splits and folds -------------------------------------------------------


@dataclass
class FoldPlan:
    n_folds: int
    seed: int
    folds: list[tuple[list[str], list[str]]]  # per fold: (train ids, validation ids)


def make_folds(manifest: Manifest, seed: int, n_folds: int = 3, val_fraction: float = 0.2) -> FoldPlan:
    """Independent seeded random partitions; validation count floors."""
    ids = [c.clip_id for c in manifest.clips]
    if len(ids) < 5:
        raise ContractError(f"need at least 5 clips to build folds, got {len(ids)}")
    folds = []
    n_val = int(len(ids) * val_fraction)
    for k in range(n_folds):
        rng = np.random.default_rng((int(seed), _FOLD_TAG, k))
        perm = [ids[i] for i in rng.permutation(len(ids))]
        folds.append((perm[n_val:], perm[:n_val]))
    return FoldPlan(n_folds, int(seed), folds)


def split_by_listener(manifest: Manifest, holdout_listener_ids) -> tuple[Manifest, Manifest]:
    holdout = set(holdout_listener_ids)
    known = set(manifest.by_listener())
    unknown = sorted(holdout - known)
    if unknown:
        raise ContractError(f"holdout listeners not in manifest: {unknown}")
    train = [c for c in manifest.clips if c.listener_id not in holdout]
    test = [c for c in manifest.clips if c.listener_id in holdout]
    return manifest.replaced(train, f"{manifest.name}-train"), manifest.replaced(test, f"{manifest.name}-test")


def merge_nh(train: Manifest, nh: Manifest) -> Manifest:
    """Append NH-listener clips to a training manifest; groups are preserved."""
    collisions = sorted(set(c.clip_id for c in train.clips) & set(c.clip_id for c in nh.clips))
    if collisions:
        raise ContractError(f"clip_id collisions when merging: {collisions[:5]}")
    if nh.root is not None and train.root is not None and nh.root != train.root:
        raise ContractError("manifests with different root directories cannot merge; re-root paths first")
    return train.replaced(train.clips + nh.clips, f"{train.name}+{nh.name}")


# -- 2-clips augmentation ----------------------------------------------------


def two_clips_augment(manifest: Manifest, per_listener: int, silence_s: float = 0.5, seed: int = 0) -> Manifest:
    """Add same-listener pair concatenations; score is the exact source mean.

    Augmented ids are "{a}+{b}" (with a "~n" suffix when a pair repeats).
    Listeners with fewer than two clips are skipped with a warning.
    """
    if per_listener < 0:
        raise ContractError(f"per_listener must be nonnegative, got {per_listener}")
    new_clips = list(manifest.clips)
    used_ids = {c.clip_id for c in new_clips}
    for idx, listener in enumerate(manifest.listener_ids()):
        pool = manifest.by_listener()[listener]
        if len(pool) < 2:
            warnings.warn(f"listener {listener} has {len(pool)} clip(s); skipping augmentation", stacklevel=2)
            continue
        feature_backed = [c.clip_id for c in pool if c.wav is None and c.sources is None]
        if feature_backed:
            raise ContractError(
                f"listener {listener}: clips {feature_backed[:3]} are feature-backed; "
                "2-clips augmentation needs waveforms"
            )
        rng = np.random.default_rng((int(seed), _AUG_TAG, idx))
        for _ in range(per_listener):
            i, j = rng.choice(len(pool), size=2, replace=False)
            a, b = pool[i], pool[j]
            base_id = f"{a.clip_id}+{b.clip_id}"
            clip_id = base_id
            n = 1
            while clip_id in used_ids:
                clip_id = f"{base_id}~{n}"
                n += 1
            used_ids.add(clip_id)
            new_clips.append(
                Clip(
                    clip_id=clip_id,
                    listener_id=listener,
                    audiogram=a.audiogram,
                    score=(float(a.score) + float(b.score)) / 2.0,
                    listener_group=a.listener_group,
                    sources=(a.clip_id, b.clip_id),
                    silence_s=silence_s,
                )
            )
    return manifest.replaced(new_clips, f"{manifest.name}-aug")


def clip_waveform(manifest: Manifest, clip: Clip, kind: str = "noisy") -> Waveform | None:
    """Load a clip's audio; augmented clips concatenate their sources lazily."""
    if kind not in ("noisy", "clean"):
        raise ContractError(f"kind must be noisy or clean, got '{kind}'")
    if clip.sources is not None:
        clip_map = manifest.clip_map()
        missing = [s for s in clip.sources if s not in clip_map]
        if missing:
            raise ContractError(f"clip {clip.clip_id}: source clips not in manifest: {missing}")
        parts = [clip_waveform(manifest, clip_map[s], kind) for s in clip.sources]
        if any(p is None for p in parts):
            return None
        gap = np.zeros(round(clip.silence_s * manifest.sample_rate))
        a, b = parts[0].samples, parts[1].samples
        if parts[0].channels != parts[1].channels:
            raise ContractError(f"clip {clip.clip_id}: source channel counts differ")
        if parts[0].channels == 2:
            gap = np.zeros((gap.shape[0], 2))
        return Waveform(np.concatenate([a, gap, b], axis=0), manifest.sample_rate)
    path = clip.wav if kind == "noisy" else clip.clean_wav
    if path is None:
        return None
    w = read_wav(manifest.resolve(path))
    if w.sample_rate != manifest.sample_rate:
        raise ContractError(
            f"clip {clip.clip_id}: audio at {w.sample_rate} Hz, manifest says {manifest.sample_rate} Hz"
        )
    return w


# -- synthetic benchmark ------------------------------------------------------


def synth_score(snr_db: float, audiogram) -> float:
    """Logistic psychometric ground truth for the synthetic benchmark."""
    effective = snr_db - 0.25 * float(np.mean(audiogram)) - 2.0
    return 100.0 / (1.0 + math.exp(-0.25 * effective))


def _synth_audiogram(rng: np.random.Generator) -> tuple[float, ...]:
    # flat-to-sloping: random base, nondecreasing with frequency, 0-80 dB HL
    base = rng.uniform(0.0, 35.0)
    steps = rng.uniform(0.0, 9.0, size=len(AUDIOGRAM_FREQS) - 1)
    levels = base + np.concatenate([[0.0], np.cumsum(steps)])
    return tuple(np.clip(np.round(levels, 1), 0.0, 80.0))


def _synth_carrier(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Amplitude-modulated harmonic complex, peak-normalized."""
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 220.0)
    x = np.zeros(n)
    for k in range(1, 7):
        x += (1.0 / k) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    mod_rate = rng.uniform(2.0, 6.0)
    env = 0.15 + 0.85 * (0.5 * (1.0 + np.sin(2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi)))) ** 2
    x *= env
    return x / np.abs(x).max()


def synth_generate(out_dir, n_listeners: int, clips_per_listener: int, seed: int = 0,
                   duration_s: float = 0.8, sample_rate: int = CANONICAL_RATE) -> Manifest:
    """Deterministic synthetic benchmark: stereo noisy clips (shared carrier,
    independent per-ear noise), mono clean references, logistic ground truth.

    A random per-clip presentation gain makes absolute level uninformative, so
    a model must compare the pathways rather than read loudness.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_samples = int(duration_s * sample_rate)
    clips = []
    for li in range(n_listeners):
        listener = f"L{li:03d}"
        lrng = np.random.default_rng((int(seed), _SYNTH_TAG, li))
        audiogram = _synth_audiogram(lrng)
        for ci in range(clips_per_listener):
            clip_id = f"{listener}_C{ci:04d}"
            snr_db = lrng.uniform(-15.0, 25.0)
            gain = lrng.uniform(0.15, 0.75)
            carrier = gain * _synth_carrier(lrng, n_samples, sample_rate)
            p_sig = float(np.mean(carrier**2))
            noise_std = math.sqrt(p_sig / (10.0 ** (snr_db / 10.0)))
            noise = lrng.normal(scale=noise_std, size=(n_samples, 2))
            noisy = carrier[:, None] + noise
            peak = np.abs(noisy).max()
            if peak > 0.99:  # avoid clipping; same rescale keeps the SNR
                noisy *= 0.99 / peak
                carrier = carrier * (0.99 / peak)
            noisy_name = f"{clip_id}.wav"
            clean_name = f"{clip_id}_clean.wav"
            write_wav(out_dir / noisy_name, Waveform(noisy, sample_rate), pcm16=True)
            write_wav(out_dir / clean_name, Waveform(carrier, sample_rate), pcm16=True)
            clips.append(
                Clip(
                    clip_id=clip_id,
                    listener_id=listener,
                    audiogram=audiogram,
                    score=round(synth_score(snr_db, audiogram), 4),
                    wav=noisy_name,
                    clean_wav=clean_name,
                    extra={"snr_db": round(snr_db, 4)},
                )
            )
    manifest = Manifest("synth", clips, sample_rate, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


# -- batching -----------------------------------------------------------------


@dataclass
class Batch:
    clip_ids: list[str]
    noisy_l: np.ndarray  # [B, T, D] zero-padded
    enhanced_l: np.ndarray
    noisy_r: np.ndarray
    enhanced_r: np.ndarray
    mask_l: np.ndarray  # [B, T] bool
    mask_r: np.ndarray
    audiograms: np.ndarray  # [B, 6]
    scores: np.ndarray  # [B]

    def __len__(self) -> int:
        return len(self.clip_ids)


def make_batches(manifest: Manifest, batch_size: int, feature_fn, seed: int, epoch: int) -> list[Batch]:
    """Seeded per-epoch shuffle, then fixed-size zero-padded batches.

    feature_fn(clip) must return the four per-ear streams as 2-D float arrays
    under keys noisy_l / enhanced_l / noisy_r / enhanced_r. Failures are
    collected across the whole manifest and raised together.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    rng = np.random.default_rng((int(seed), _BATCH_TAG, int(epoch)))
    order = rng.permutation(len(manifest.clips))

    failures: list[str] = []
    loaded = []
    for idx in order:
        clip = manifest.clips[int(idx)]
        try:
            loaded.append((clip, feature_fn(clip)))
        except Exception as exc:
            failures.append(f"{clip.clip_id}: {exc}")
    if failures:
        raise ValidationError(f"{len(failures)} clip(s) had unobtainable features", issues=failures)

    batches = []
    for lo in range(0, len(loaded), batch_size):
        chunk = loaded[lo : lo + batch_size]
        t_max = max(f["noisy_l"].shape[0] for _, f in chunk)
        t_max = max(t_max, max(f["noisy_r"].shape[0] for _, f in chunk))
        dim = chunk[0][1]["noisy_l"].shape[1]
        b = len(chunk)
        arrays = {k: np.zeros((b, t_max, dim), dtype=np.float32) for k in
                  ("noisy_l", "enhanced_l", "noisy_r", "enhanced_r")}
        mask_l = np.zeros((b, t_max), dtype=bool)
        mask_r = np.zeros((b, t_max), dtype=bool)
        for i, (clip, feats) in enumerate(chunk):
            t_l = feats["noisy_l"].shape[0]
            t_r = feats["noisy_r"].shape[0]
            for k in ("noisy_l", "enhanced_l"):
                arrays[k][i, :t_l] = feats[k]
            for k in ("noisy_r", "enhanced_r"):
                arrays[k][i, :t_r] = feats[k]
            mask_l[i, :t_l] = True
            mask_r[i, :t_r] = True
        batches.append(
            Batch(
                clip_ids=[c.clip_id for c, _ in chunk],
                noisy_l=arrays["noisy_l"],
                enhanced_l=arrays["enhanced_l"],
                noisy_r=arrays["noisy_r"],
                enhanced_r=arrays["enhanced_r"],
                mask_l=mask_l,
                mask_r=mask_r,
                audiograms=np.array([c.audiogram for c, _ in chunk], dtype=np.float64),
                scores=np.array([float(c.score) for c, _ in chunk], dtype=np.float64),
            )
        )
    return batches
