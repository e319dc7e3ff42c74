"""Stain vector library build, persistence, and stats tests."""

import numpy as np
import pytest

from conftest import angular_error_deg, synth_slide_patches

from stainforge.color import RgbPatch
from stainforge.errors import DuplicateSlide, InsufficientTissue, SchemaViolation
from stainforge.stain import EstimationParams, StainMatrix
from stainforge.stainlib import (
    StainVectorLibrary,
    StainVectorRecord,
    build_record,
    load,
    save,
    stats,
)


def make_record(slide_id, scanner="AT2", lab="lab1", indication="HCC"):
    stains = StainMatrix.from_vectors([0.65, 0.70, 0.29], [0.07, 0.99, 0.11])
    return StainVectorRecord(stains=stains, slide_id=slide_id, lab=lab,
                             scanner=scanner, indication=indication,
                             pixel_count=500, created_at="2024-06-01T12:00:00Z")


class TestBuildRecord:
    def test_recovers_fixture_stains_from_patches(self, alt_stains):
        patches = synth_slide_patches(alt_stains, n_patches=10, seed=0)
        record = build_record(patches, "slide1", "lab1", "AT2", "HCC",
                              EstimationParams(), np.random.default_rng(0),
                              created_at="2024-06-01T00:00:00Z")
        assert angular_error_deg(record.stains.hematoxylin,
                                 alt_stains.hematoxylin) < 2.0
        assert angular_error_deg(record.stains.eosin, alt_stains.eosin) < 2.0
        assert record.pixel_count >= 100

    def test_white_patches_insufficient_tissue(self):
        patches = [RgbPatch(data=np.full((32, 32, 3), 255, dtype=np.uint8))]
        with pytest.raises(InsufficientTissue):
            build_record(patches, "s", "l", "sc", "ind", EstimationParams(),
                         np.random.default_rng(0))

    def test_subsampling_respects_cap(self, alt_stains):
        patches = synth_slide_patches(alt_stains, n_patches=4, seed=1)
        params = EstimationParams(max_pixels=2000)
        record = build_record(patches, "s", "l", "sc", "ind", params,
                              np.random.default_rng(1))
        assert record.pixel_count == 2000

    def test_empty_patch_list_rejected(self):
        with pytest.raises(ValueError):
            build_record([], "s", "l", "sc", "ind", EstimationParams(),
                         np.random.default_rng(0))


class TestLibrary:
    def test_duplicate_slide_rejected(self):
        library = StainVectorLibrary()
        library.add(make_record("slide1"))
        with pytest.raises(DuplicateSlide):
            library.add(make_record("slide1", scanner="GT450"))

    def test_scanner_index_covers_records(self):
        library = StainVectorLibrary()
        library.add(make_record("s1", scanner="AT2"))
        library.add(make_record("s2", scanner="GT450"))
        library.add(make_record("s3", scanner="AT2"))
        assert library.scanners == ["AT2", "GT450"]
        assert {r.slide_id for r in library.records_for_scanner("AT2")} == {"s1", "s3"}
        covered = sum(len(library.records_for_scanner(s)) for s in library.scanners)
        assert covered == len(library)


class TestPersistence:
    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        save(StainVectorLibrary(), path)
        assert path.read_text() == ""
        assert len(load(path)) == 0

    def test_round_trip_identity(self, tmp_path):
        library = StainVectorLibrary()
        library.add(make_record("s1", scanner="AT2", lab="lab1"))
        library.add(make_record("s2", scanner="GT450", lab="lab2"))
        library.add(make_record("s3", scanner="DP200", indication="NASH"))
        path = tmp_path / "lib.jsonl"
        save(library, path)
        loaded = load(path)
        assert len(loaded) == len(library)
        for original, restored in zip(library.records, loaded.records):
            assert np.array_equal(original.stains.columns, restored.stains.columns)
            assert original.slide_id == restored.slide_id
            assert original.lab == restored.lab
            assert original.scanner == restored.scanner
            assert original.indication == restored.indication
            assert original.pixel_count == restored.pixel_count
            assert original.created_at == restored.created_at

    def test_save_is_byte_stable(self, tmp_path):
        library = StainVectorLibrary()
        for i in range(3):
            library.add(make_record(f"s{i}"))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save(library, first)
        save(library, second)
        assert first.read_bytes() == second.read_bytes()

    def test_non_unit_column_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"slide_id":"x","lab":"l","scanner":"s","indication":"i",'
            '"pixel_count":500,"h":[0.9,0.0,0.0],"e":[0.0,1.0,0.0],'
            '"created_at":"2024-01-01T00:00:00Z"}\n')
        with pytest.raises(SchemaViolation):
            load(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"slide_id":"x","lab":"l"}\n')
        with pytest.raises(SchemaViolation):
            load(path)

    def test_rounded_but_valid_file_renormalized(self, tmp_path):
        # Hand-authored records rounded to 8 decimals (norm error ~1e-9 to
        # 1e-6, inside schema tolerance) load and are renormalized.
        path = tmp_path / "hand.jsonl"
        path.write_text(
            '{"slide_id":"x","lab":"l","scanner":"s","indication":"i",'
            '"pixel_count":500,'
            '"h":[0.65122732,0.70124478,0.29010126],'
            '"e":[0.07010316,0.99144463,0.11010496],'
            '"created_at":"2024-01-01T00:00:00Z"}\n')
        loaded = load(path)
        assert np.allclose(np.linalg.norm(loaded.records[0].stains.columns, axis=0),
                           1.0, atol=1e-12)

    def test_duplicate_slide_in_file_rejected(self, tmp_path):
        library = StainVectorLibrary()
        library.add(make_record("dup"))
        path = tmp_path / "lib.jsonl"
        save(library, path)
        line = path.read_text()
        path.write_text(line + line)
        with pytest.raises(DuplicateSlide):
            load(path)


class TestStats:
    def test_empty(self):
        result = stats(StainVectorLibrary())
        assert result["total"] == 0
        assert result["by_scanner"] == {}

    def test_balanced_seven_scanner_library(self):
        # Production-scale balance check: 7 scanners x 231 records each,
        # 1617 total, spread over 21 labs and 45 indications.
        library = StainVectorLibrary()
        scanners = ["AT2", "ATTurbo", "GT450", "ScanScope", "UFS",
                    "NanoZoomer", "ScanII"]
        for scanner in scanners:
            for i in range(231):
                library.add(make_record(f"{scanner}-{i}", scanner=scanner,
                                        lab=f"lab{i % 21}", indication=f"ind{i % 45}"))
        result = stats(library)
        assert result["total"] == 1617
        assert all(result["by_scanner"][s] == 231 for s in scanners)
        assert len(result["by_lab"]) == 21
        assert len(result["by_indication"]) == 45

    def test_two_records_same_lab_different_scanner(self):
        library = StainVectorLibrary()
        library.add(make_record("s1", scanner="AT2", lab="shared"))
        library.add(make_record("s2", scanner="GT450", lab="shared"))
        result = stats(library)
        assert result["by_lab"]["shared"] == 2
        assert result["by_scanner"] == {"AT2": 1, "GT450": 1}

    def test_insertion_conserves_totals(self):
        library = StainVectorLibrary()
        library.add(make_record("s1", scanner="AT2", lab="a", indication="x"))
        before = stats(library)
        library.add(make_record("s2", scanner="AT2", lab="b", indication="x"))
        after = stats(library)
        assert after["total"] == before["total"] + 1
        assert after["by_scanner"]["AT2"] == before["by_scanner"]["AT2"] + 1
        assert after["by_indication"]["x"] == before["by_indication"]["x"] + 1
