"""Offline dataset synthesis: sample pairing, batch haze generation, manifest.

Every output byte is a pure function of (inputs, global seed, config).
Workers share nothing mutable except the output directory, so any worker
count produces the same files; the manifest is assembled once at the end and
written atomically.
"""

import json
import os
import shutil
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .core import (
    HazeParams,
    compose_haze,
    depth_to_transmission,
    quantize,
    random_transmission_baseline,
)
from .depth_io import DepthSource, NormalizationPolicy, load_depth
from .errors import DatasetError, HazeforgeError, ParameterError, RasterError
from .image_io import clean_png_bytes, encode_png, load_image, to_working
from .sampling import SamplerConfig, sample_params
from .seeding import derive_image_seed, unit_uniform

TOOL_VERSION = "0.1.0"

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
DEPTH_EXTENSIONS = (".pfm", ".png", ".f32")

MODE_DEPTH = "depth_based"
MODE_BASELINE = "transmission_randomized"
MODE_CLEAN = "passthrough_clean"

MANIFEST_NAME = "manifest.json"
SKIP_REPORT_NAME = "skip_report.txt"


@dataclass(frozen=True)
class MixPolicy:
    """How many clean copies accompany the hazy outputs.

    ``combined`` duplicates every sample (clean + hazy), ``hazy-only`` emits
    hazy images only, and ``ratio=R`` keeps a clean copy for a seed-derived
    fraction R of samples, independent of processing order.
    """

    clean_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ParameterError(
                f"clean fraction must lie in [0, 1], got {self.clean_fraction!r}"
            )

    @classmethod
    def parse(cls, text: str) -> "MixPolicy":
        if text == "combined":
            return cls(1.0)
        if text == "hazy-only":
            return cls(0.0)
        if text.startswith("ratio="):
            try:
                return cls(float(text[len("ratio="):]))
            except ValueError:
                raise ParameterError(f"bad mix ratio in {text!r}") from None
        raise ParameterError(
            f"mix must be 'hazy-only', 'combined' or 'ratio=R', got {text!r}"
        )

    @property
    def label(self) -> str:
        if self.clean_fraction == 1.0:
            return "combined"
        if self.clean_fraction == 0.0:
            return "hazy-only"
        return f"ratio={self.clean_fraction:g}"


@dataclass(frozen=True)
class AppliedParams:
    """Parameters actually used for one synthesized image.

    ``beta`` is None for the flat-transmission baseline, where the drawn
    transmission is recorded instead.
    """

    airlight: float
    beta: float | None = None
    transmission: float | None = None

    def to_dict(self) -> dict:
        return {"beta": self.beta, "airlight": self.airlight, "transmission": self.transmission}


@dataclass(frozen=True)
class SampleRecord:
    """One image/depth/label pairing plus the seed that reproduces it."""

    sample_id: str
    image_path: Path
    depth_path: Path | None
    label_path: Path | None
    image_seed: int
    mode: str = MODE_DEPTH
    applied_params: AppliedParams | None = None


def discover_samples(image_dir, depth_dir, label_dir=None, global_seed: int = 0):
    """Pair images with depth (and optionally label) files by relative stem.

    Returns (records, skipped_sample_ids). Records come back sorted by
    sample_id; images without a depth counterpart land in the skip list
    rather than being silently dropped.
    """
    image_dir = Path(image_dir)
    depth_dir = Path(depth_dir)
    label_dir = Path(label_dir) if label_dir is not None else None
    if not image_dir.is_dir():
        raise DatasetError(f"image directory {image_dir} does not exist")
    if not depth_dir.is_dir():
        raise DatasetError(f"depth directory {depth_dir} does not exist")

    rels = sorted(
        p.relative_to(image_dir).as_posix()
        for p in image_dir.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not rels:
        raise DatasetError(f"no images found under {image_dir}")

    records: list[SampleRecord] = []
    skipped: list[str] = []
    for sample_id in rels:
        rel = Path(sample_id)
        depth_path = None
        for ext in DEPTH_EXTENSIONS:
            candidate = depth_dir / rel.with_suffix(ext)
            if candidate.is_file():
                depth_path = candidate
                break
        if depth_path is None:
            skipped.append(sample_id)
            continue
        label_path = None
        if label_dir is not None:
            candidate = label_dir / rel.with_suffix(".txt")
            if candidate.is_file():
                label_path = candidate
        records.append(
            SampleRecord(
                sample_id=sample_id,
                image_path=image_dir / rel,
                depth_path=depth_path,
                label_path=label_path,
                image_seed=derive_image_seed(global_seed, sample_id),
            )
        )
    return records, skipped


def synthesize_one(
    record: SampleRecord,
    config: SamplerConfig,
    policy: NormalizationPolicy,
    disparity: bool = False,
    params_override: HazeParams | None = None,
    depth_kind: str | None = None,
):
    """Synthesize one hazy image: read depth, normalize, blend, quantize.

    Returns (storage-form image, AppliedParams). Pure given (record, config,
    policy); errors from depth or image handling are re-raised tagged with
    the sample id.
    """
    try:
        clean = to_working(load_image(record.image_path))
        params = params_override or sample_params(config, record.image_seed)
        if record.mode == MODE_BASELINE:
            hazy, t = random_transmission_baseline(clean, params, record.image_seed)
            applied = AppliedParams(airlight=params.airlight, transmission=t)
        elif record.mode == MODE_DEPTH:
            source = DepthSource(
                record.depth_path,
                kind=depth_kind,
                interpretation="disparity" if disparity else "depth",
            )
            depth = load_depth(source, policy)
            if depth.shape != clean.shape[:2]:
                raise RasterError(
                    f"depth raster {depth.shape} does not match image {clean.shape[:2]}"
                )
            transmission = depth_to_transmission(depth, params.beta)
            hazy = compose_haze(clean, transmission, params)
            applied = AppliedParams(airlight=params.airlight, beta=params.beta)
        else:
            raise DatasetError(f"mode {record.mode!r} is not synthesizable")
    except HazeforgeError as exc:
        raise type(exc)(f"{record.sample_id}: {exc}") from exc
    return quantize(hazy), applied


@dataclass
class Manifest:
    """Machine-readable ledger mapping every emitted file to its provenance."""

    tool_version: str
    config: dict
    records: list[dict]

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.records if r["status"] != "ok"]

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "config": self.config,
            "records": self.records,
        }

    def write(self, path) -> None:
        """Write atomically: temp file in the same directory, then rename."""
        path = Path(path)
        tmp = path.parent / (path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Manifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["tool_version"], data["config"], data["records"])


def _record_dict(record: SampleRecord, output_image, output_label, status="ok", error=None) -> dict:
    applied = record.applied_params
    return {
        "sample_id": record.sample_id,
        "mode": record.mode,
        "image_seed": record.image_seed,
        "image_path": str(record.image_path),
        "depth_path": str(record.depth_path) if record.depth_path else None,
        "label_path": str(record.label_path) if record.label_path else None,
        "applied_params": applied.to_dict() if applied else None,
        "output_image": output_image,
        "output_label": output_label,
        "status": status,
        "error": error,
    }


def _emit_one(job: SampleRecord, config, policy, out_dir: Path, disparity: bool) -> dict:
    subdir = "clean" if job.mode == MODE_CLEAN else "hazy"
    rel_image = f"{subdir}/{Path(job.sample_id).with_suffix('.png').as_posix()}"
    rel_label = (
        f"{subdir}/{Path(job.sample_id).with_suffix('.txt').as_posix()}"
        if job.label_path
        else None
    )
    image_out = out_dir / rel_image
    try:
        image_out.parent.mkdir(parents=True, exist_ok=True)
        if job.mode == MODE_CLEAN:
            image_out.write_bytes(clean_png_bytes(job.image_path))
        else:
            image, applied = synthesize_one(job, config, policy, disparity)
            image_out.write_bytes(encode_png(image))
            job = replace(job, applied_params=applied)
        if rel_label:
            # labels pass through byte-identically: haze moves no boxes
            shutil.copyfile(job.label_path, out_dir / rel_label)
    except Exception as exc:  # isolate per-record failures
        image_out.unlink(missing_ok=True)  # keep disk <-> manifest bijection
        return _record_dict(job, None, None, status="failed", error=str(exc))
    return _record_dict(job, rel_image, rel_label)


def _config_snapshot(config, policy, mix, disparity) -> dict:
    return {
        "sampler": {
            "beta_range": list(config.beta_range),
            "airlight_range": list(config.airlight_range),
            "global_seed": config.global_seed,
        },
        "normalization": {
            "clip_percentile": policy.clip_percentile,
            "target_max": policy.target_max,
            "disparity_epsilon": policy.disparity_epsilon,
        },
        "mix": mix.label,
        "disparity": disparity,
    }


def run_batch(
    records,
    config: SamplerConfig,
    policy: NormalizationPolicy,
    mix: MixPolicy = MixPolicy(),
    out_dir=".",
    workers: int | None = None,
    disparity: bool = False,
    skipped=(),
) -> Manifest:
    """Synthesize the whole record list into out_dir and write the manifest.

    Hazy images land under ``hazy/``, clean copies (per the mix policy) under
    ``clean/``, each mirroring the input tree with label files alongside. A
    failing record is recorded in the manifest and does not abort the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or os.cpu_count() or 1

    jobs: list[SampleRecord] = []
    for rec in records:
        jobs.append(rec)
        if unit_uniform(rec.image_seed, "mix") < mix.clean_fraction:
            jobs.append(replace(rec, mode=MODE_CLEAN))

    output_counts = Counter(
        f"{'clean' if j.mode == MODE_CLEAN else 'hazy'}/{Path(j.sample_id).with_suffix('.png')}"
        for j in jobs
    )
    dupes = sorted(o for o, n in output_counts.items() if n > 1)
    if dupes:
        raise DatasetError(f"sample ids collide after .png mapping: {dupes}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda job: _emit_one(job, config, policy, out_dir, disparity), jobs)
        )
    results.sort(key=lambda r: (r["sample_id"], r["mode"]))

    if skipped:
        (out_dir / SKIP_REPORT_NAME).write_text(
            "".join(f"{sid}\n" for sid in skipped), encoding="utf-8"
        )

    manifest = Manifest(
        tool_version=TOOL_VERSION,
        config=_config_snapshot(config, policy, mix, disparity),
        records=results,
    )
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest
