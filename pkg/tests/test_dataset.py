"""Unit tests for dataset discovery, per-record synthesis, and run_batch."""

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from hazeforge import (
    DatasetError,
    DegenerateDepthError,
    Manifest,
    MixPolicy,
    NormalizationPolicy,
    ParameterError,
    SamplerConfig,
    discover_samples,
    load_image,
    run_batch,
    sample_params,
    synthesize_one,
)
from hazeforge.dataset import MODE_BASELINE, MODE_CLEAN, SKIP_REPORT_NAME

from conftest import tree_hash


class TestDiscoverSamples:
    def test_pairs_by_relative_stem(self, build_dataset):
        data = build_dataset(names=("a.png", "b.png"), missing_depth=("b.png",))
        records, skipped = discover_samples(data.images, data.depths, data.labels)
        assert [r.sample_id for r in records] == ["a.png"]
        assert skipped == ["b.png"]

    def test_empty_image_dir_is_an_error(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "depths").mkdir()
        with pytest.raises(DatasetError, match="no images"):
            discover_samples(tmp_path / "images", tmp_path / "depths")

    def test_missing_image_dir_is_an_error(self, tmp_path):
        with pytest.raises(DatasetError):
            discover_samples(tmp_path / "nope", tmp_path / "depths")

    def test_nested_sample_ids_preserved(self, build_dataset):
        data = build_dataset(names=("seq0/f1.png", "seq0/f2.png", "top.png"))
        records, _ = discover_samples(data.images, data.depths, data.labels)
        assert [r.sample_id for r in records] == ["seq0/f1.png", "seq0/f2.png", "top.png"]

    def test_sorted_lexicographically(self, build_dataset):
        data = build_dataset(names=("z.png", "a.png", "m.png"))
        records, _ = discover_samples(data.images, data.depths, None)
        assert [r.sample_id for r in records] == ["a.png", "m.png", "z.png"]

    def test_labels_optional(self, build_dataset):
        data = build_dataset(names=("a.png",), with_labels=False)
        records, _ = discover_samples(data.images, data.depths, None)
        assert records[0].label_path is None


class TestSynthesizeOne:
    def test_all_zero_depth_propagates_degenerate_error(self, build_dataset):
        data = build_dataset(names=("flat.png",), constant_depth=0.0)
        records, _ = discover_samples(data.images, data.depths, None)
        with pytest.raises(DegenerateDepthError, match="flat.png"):
            synthesize_one(records[0], SamplerConfig(), NormalizationPolicy())

    def test_constant_depth_matches_closed_form(self, build_dataset):
        data = build_dataset(names=("c.png",), constant_depth=0.5)
        records, _ = discover_samples(data.images, data.depths, None, global_seed=5)
        config = SamplerConfig(global_seed=5)
        image, applied = synthesize_one(records[0], config, NormalizationPolicy())
        # closed form: constant depth normalizes to target_max, one global t
        params = sample_params(config, records[0].image_seed)
        t = math.exp(-params.beta * 1.0)
        clean = load_image(records[0].image_path).astype(np.float64)
        expected = clean * t + params.airlight * (1.0 - t)
        expected = np.floor(np.clip(expected, 0.0, 255.0) + 0.5).astype(np.uint8)
        assert np.array_equal(image, expected)
        assert applied.beta == params.beta and applied.airlight == params.airlight

    def test_deterministic(self, build_dataset):
        data = build_dataset(names=("a.png",))
        records, _ = discover_samples(data.images, data.depths, None)
        config = SamplerConfig()
        policy = NormalizationPolicy()
        a, _ = synthesize_one(records[0], config, policy)
        b, _ = synthesize_one(records[0], config, policy)
        assert np.array_equal(a, b)

    def test_baseline_mode_records_transmission(self, build_dataset):
        data = build_dataset(names=("a.png",))
        records, _ = discover_samples(data.images, data.depths, None)
        record = replace(records[0], mode=MODE_BASELINE)
        _, applied = synthesize_one(record, SamplerConfig(), NormalizationPolicy())
        assert applied.beta is None
        assert 0.3 <= applied.transmission <= 0.8


class TestMixPolicy:
    def test_parse(self):
        assert MixPolicy.parse("combined").clean_fraction == 1.0
        assert MixPolicy.parse("hazy-only").clean_fraction == 0.0
        assert MixPolicy.parse("ratio=0.25").clean_fraction == 0.25

    def test_parse_rejects_garbage(self):
        with pytest.raises(ParameterError):
            MixPolicy.parse("sometimes")
        with pytest.raises(ParameterError):
            MixPolicy.parse("ratio=2.0")

    def test_labels(self):
        assert MixPolicy(1.0).label == "combined"
        assert MixPolicy(0.0).label == "hazy-only"
        assert MixPolicy(0.5).label == "ratio=0.5"


class TestRunBatch:
    def _run(self, data, out, seed=0, mix="combined", workers=None):
        records, skipped = discover_samples(data.images, data.depths, data.labels, seed)
        return run_batch(
            records, SamplerConfig(global_seed=seed), NormalizationPolicy(),
            MixPolicy.parse(mix), out_dir=out, workers=workers, skipped=skipped,
        )

    def test_default_mix_counts(self, build_dataset, tmp_path):
        data = build_dataset()
        out = tmp_path / "out"
        manifest = self._run(data, out)
        images = sorted(p for p in out.rglob("*.png"))
        labels = sorted(p for p in out.rglob("*.txt") if p.name != SKIP_REPORT_NAME)
        assert len(images) == 8
        assert len(labels) == 8
        assert (out / "manifest.json").is_file()
        assert len(manifest.records) == 8
        assert not manifest.failed

    def test_manifest_bijection_with_disk(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png", "sub/b.png", "c.png"))
        out = tmp_path / "out"
        manifest = self._run(data, out)
        declared = set()
        for record in manifest.records:
            assert record["output_image"] is not None
            declared.add(record["output_image"])
            if record["output_label"]:
                declared.add(record["output_label"])
        on_disk = {
            p.relative_to(out).as_posix()
            for p in out.rglob("*")
            if p.is_file() and p.name not in ("manifest.json", SKIP_REPORT_NAME)
        }
        assert declared == on_disk

    def test_labels_pass_through_byte_identically(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png",))
        out = tmp_path / "out"
        self._run(data, out)
        source = (data.labels / "a.txt").read_bytes()
        assert (out / "hazy/a.txt").read_bytes() == source
        assert (out / "clean/a.txt").read_bytes() == source

    def test_clean_copy_is_source_bytes_for_png(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png",))
        out = tmp_path / "out"
        self._run(data, out)
        assert (out / "clean/a.png").read_bytes() == (data.images / "a.png").read_bytes()

    def test_repeat_runs_are_byte_identical(self, build_dataset, tmp_path):
        data = build_dataset()
        out1 = tmp_path / "out1"
        out2 = tmp_path / "out2"
        self._run(data, out1, seed=9)
        self._run(data, out2, seed=9)
        assert tree_hash(out1) == tree_hash(out2)

    def test_worker_count_does_not_change_bytes(self, build_dataset, tmp_path):
        data = build_dataset(names=tuple(f"s{i:02d}.png" for i in range(10)))
        out1 = tmp_path / "w1"
        out8 = tmp_path / "w8"
        m1 = self._run(data, out1, seed=2, workers=1)
        m8 = self._run(data, out8, seed=2, workers=8)
        assert tree_hash(out1) == tree_hash(out8)
        assert m1.records == m8.records

    def test_hazy_only_mix(self, build_dataset, tmp_path):
        data = build_dataset()
        out = tmp_path / "out"
        manifest = self._run(data, out, mix="hazy-only")
        assert len(manifest.records) == 4
        assert not (out / "clean").exists()

    def test_ratio_mix_is_deterministic_fraction(self, build_dataset, tmp_path):
        names = tuple(f"r{i:03d}.png" for i in range(24))
        data = build_dataset(names=names, size=(8, 6))
        out1 = tmp_path / "o1"
        out2 = tmp_path / "o2"
        m1 = self._run(data, out1, mix="ratio=0.5")
        m2 = self._run(data, out2, mix="ratio=0.5")
        cleans1 = [r["sample_id"] for r in m1.records if r["mode"] == MODE_CLEAN]
        cleans2 = [r["sample_id"] for r in m2.records if r["mode"] == MODE_CLEAN]
        assert cleans1 == cleans2
        assert 0 < len(cleans1) < len(names)

    def test_skip_report_lists_missing_depth(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png", "b.png"), missing_depth=("b.png",))
        out = tmp_path / "out"
        self._run(data, out)
        assert (out / SKIP_REPORT_NAME).read_text() == "b.png\n"

    def test_failure_isolated_to_one_record(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png", "bad.png", "c.png"))
        # corrupt one depth file
        (data.depths / "bad.pfm").write_bytes(b"Pf\n2 2\n-1.0\n\x00\x00")
        out = tmp_path / "out"
        manifest = self._run(data, out, mix="hazy-only")
        failed = manifest.failed
        assert [r["sample_id"] for r in failed] == ["bad.png"]
        assert failed[0]["error"]
        assert (out / "hazy/a.png").is_file()
        assert (out / "hazy/c.png").is_file()
        assert not (out / "hazy/bad.png").exists()

    def test_manifest_snapshot_round_trips(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png",))
        out = tmp_path / "out"
        manifest = self._run(data, out, seed=31)
        loaded = Manifest.load(out / "manifest.json")
        assert loaded.tool_version == manifest.tool_version
        assert loaded.config == manifest.config
        assert loaded.records == manifest.records
        assert loaded.config["sampler"]["global_seed"] == 31
        assert loaded.config["mix"] == "combined"

    def test_applied_params_filled_unless_clean(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png", "b.png"))
        out = tmp_path / "out"
        manifest = self._run(data, out)
        for record in manifest.records:
            if record["mode"] == MODE_CLEAN:
                assert record["applied_params"] is None
            else:
                assert record["applied_params"]["beta"] is not None

    def test_manifest_is_valid_json_with_exact_top_level_fields(self, build_dataset, tmp_path):
        data = build_dataset(names=("a.png",))
        out = tmp_path / "out"
        self._run(data, out)
        data = json.loads((out / "manifest.json").read_text())
        assert list(data) == ["tool_version", "config", "records"]
        record_keys = list(data["records"][0])
        assert record_keys[:7] == [
            "sample_id", "mode", "image_seed", "image_path",
            "depth_path", "label_path", "applied_params",
        ]
