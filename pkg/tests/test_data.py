import dataclasses
import json

import numpy as np
import pytest

from eventcap.data import (
    Event,
    SynthParams,
    VideoRecord,
    load_annotations,
    load_dataset,
    load_features,
    resize_to_fixed_length,
    save_features,
    synth_generate,
    write_annotations,
    write_dataset,
)
from eventcap.errors import ConfigError, DataError

SMALL = SynthParams(
    n_videos=8,
    val_fraction=0.25,
    frames_range=(60, 80),
    events_range=(2, 3),
    event_len_range=(8, 20),
    d_in=16,
    seed=3,
)


class TestSynthParams:
    def test_defaults_valid(self):
        p = SynthParams()
        assert p.n_val == 20
        assert len(p.concept_lexicon) == 12

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_videos=1),
            dict(val_fraction=0.0),
            dict(val_fraction=1.0),
            dict(noise_sigma=1.5),
            dict(events_range=(3, 99)),
            dict(frames_range=(0, 10)),
        ],
    )
    def test_rejects_config(self, kwargs):
        with pytest.raises(ConfigError):
            SynthParams(**kwargs)

    def test_rejects_infeasible_packing(self):
        # 5 events of >= 30 frames cannot fit in 100 frames with gaps
        with pytest.raises(DataError, match="infeasible"):
            SynthParams(frames_range=(100, 120), events_range=(5, 5), event_len_range=(30, 40))


class TestSynthGenerate:
    def test_split_sizes(self):
        ds = synth_generate(SMALL)
        assert len(ds.train) == 6
        assert len(ds.val) == 2

    def test_split_disjoint(self):
        ds = synth_generate(SMALL)
        train_ids = {r.video_id for r in ds.train}
        val_ids = {r.video_id for r in ds.val}
        assert not train_ids & val_ids

    def test_deterministic(self):
        a = synth_generate(SMALL)
        b = synth_generate(SMALL)
        for ra, rb in zip(a.train + a.val, b.train + b.val):
            assert ra.video_id == rb.video_id
            assert ra.events == rb.events
            assert ra.features.tobytes() == rb.features.tobytes()

    def test_seed_changes_data(self):
        a = synth_generate(SMALL)
        b = synth_generate(dataclasses.replace(SMALL, seed=4))
        assert any(
            ra.features.tobytes() != rb.features.tobytes()
            for ra, rb in zip(a.train, b.train)
        )

    def test_event_counts_and_spans(self):
        ds = synth_generate(SMALL)
        for rec in ds.train + ds.val:
            assert 2 <= len(rec.events) <= 3
            assert not rec.validate()
            spans = sorted((e.start_s, e.end_s) for e in rec.events)
            for k in range(len(spans) - 1):
                # non-overlapping with at least a one-frame gap
                assert spans[k + 1][0] >= spans[k][1] + 1

    def test_event_lengths_in_range(self):
        ds = synth_generate(SMALL)
        for rec in ds.train:
            for e in rec.events:
                assert 8 <= e.end_s - e.start_s <= 20

    def test_caption_template(self):
        ds = synth_generate(SMALL)
        for rec in ds.train:
            for e in rec.events:
                verb, the, noun = e.caption.split()
                assert the == "the"
                assert verb in SMALL.verbs
                assert noun in SMALL.nouns

    def test_planted_margin(self):
        # event frames project onto the (estimated) class direction with a
        # margin of at least pattern_strength - 3 * noise_sigma over noise
        ds = synth_generate(SMALL)
        margin = SMALL.pattern_strength - 3 * SMALL.noise_sigma
        for rec in ds.train:
            covered = np.zeros(int(rec.duration_s), dtype=bool)
            for e in rec.events:
                covered[int(e.start_s) : int(e.end_s)] = True
            noise_frames = rec.features[~covered]
            for e in rec.events:
                span = rec.features[int(e.start_s) : int(e.end_s)]
                direction = span.mean(axis=0)
                direction = direction / np.linalg.norm(direction)
                event_dot = span @ direction
                noise_dot = noise_frames @ direction
                assert event_dot.mean() - noise_dot.mean() >= margin

    def test_overlap_stress(self):
        ds = synth_generate(dataclasses.replace(SMALL, overlap_stress=True))
        found = False
        for rec in ds.train + ds.val:
            segs = rec.segments_seconds()
            for i in range(len(segs)):
                for j in range(i + 1, len(segs)):
                    inter = min(segs[i][1], segs[j][1]) - max(segs[i][0], segs[j][0])
                    found = found or inter > 0
        assert found

    def test_normalized_segments_in_unit_interval(self):
        ds = synth_generate(SMALL)
        for rec in ds.train:
            norm = rec.normalized_segments()
            assert (norm >= 0).all() and (norm <= 1).all()
            np.testing.assert_allclose(norm * rec.duration_s, rec.segments_seconds())


class TestResize:
    def test_identity(self):
        x = np.arange(12, dtype=np.float32).reshape(4, 3)
        out, mask = resize_to_fixed_length(x, 4)
        np.testing.assert_array_equal(out, x)
        assert not mask.any()

    def test_stride_two(self):
        x = np.arange(400, dtype=np.float32).reshape(400, 1)
        out, mask = resize_to_fixed_length(x, 200)
        np.testing.assert_array_equal(out[:, 0], np.arange(0, 400, 2))
        assert not mask.any()

    def test_padding(self):
        x = np.ones((50, 4), dtype=np.float32)
        out, mask = resize_to_fixed_length(x, 100)
        assert out.shape == (100, 4)
        assert mask.sum() == 50
        assert (out[:50] == 1).all() and (out[50:] == 0).all()
        assert mask[50:].all() and not mask[:50].any()

    def test_coverage_of_wide_events(self):
        # an event spanning >= 2 * (F_raw / F) raw frames keeps >= 1 sample
        rng = np.random.default_rng(0)
        f_raw, f = 173, 40
        x = np.zeros((f_raw, 1))
        stride = f_raw / f
        for _ in range(20):
            s = int(rng.integers(0, f_raw - int(2 * stride) - 1))
            e = s + int(np.ceil(2 * stride))
            x[:] = 0
            x[s:e] = 1
            out, _ = resize_to_fixed_length(x, f)
            assert out.sum() >= 1

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            resize_to_fixed_length(np.zeros((0, 3)), 10)

    def test_rejects_bad_target(self):
        with pytest.raises(ConfigError):
            resize_to_fixed_length(np.zeros((5, 3)), 0)


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
        p = tmp_path / "a.evf"
        save_features(p, x)
        np.testing.assert_array_equal(load_features(p), x)

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "b.evf"
        save_features(p, np.ones((4, 4), dtype=np.float32))
        blob = p.read_bytes()
        p.write_bytes(blob[:-8])
        with pytest.raises(DataError, match="truncat|size"):
            load_features(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "c.evf"
        p.write_bytes(b"NOPE" + b"\0" * 100)
        with pytest.raises(DataError, match="magic"):
            load_features(p)

    def test_dim_mismatch_rejected(self, tmp_path):
        p = tmp_path / "d.evf"
        save_features(p, np.ones((4, 6), dtype=np.float32))
        with pytest.raises(DataError, match="dim|width"):
            load_features(p, expected_dim=5)


class TestAnnotations:
    def _records(self):
        return [
            VideoRecord("vid_b", 30.0, [Event(0.0, 10.0, "add the salt")]),
            VideoRecord("vid_a", 20.0, [Event(2.0, 8.0, "mix the egg"), Event(9.0, 19.0, "pour oil")]),
        ]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "ann.json"
        write_annotations(p, self._records())
        records, errors = load_annotations(p)
        assert not errors
        by_id = {r.video_id: r for r in records}
        for orig in self._records():
            got = by_id[orig.video_id]
            assert got.duration_s == orig.duration_s
            assert got.events == orig.events

    def test_end_before_start_flagged(self, tmp_path):
        p = tmp_path / "ann.json"
        doc = {"v": {"duration": 10.0, "timestamps": [[8.0, 2.0]], "sentences": ["x y"]}}
        p.write_text(json.dumps(doc))
        records, errors = load_annotations(p)
        assert not records
        assert any("end" in e or "<" in e for e in errors)

    def test_span_beyond_duration_flagged(self, tmp_path):
        p = tmp_path / "ann.json"
        doc = {"v": {"duration": 10.0, "timestamps": [[2.0, 15.0]], "sentences": ["x y"]}}
        p.write_text(json.dumps(doc))
        records, errors = load_annotations(p)
        assert not records
        assert any("outside" in e for e in errors)

    def test_count_mismatch_flagged(self, tmp_path):
        p = tmp_path / "ann.json"
        doc = {"v": {"duration": 10.0, "timestamps": [[1.0, 2.0], [3.0, 4.0]], "sentences": ["only one"]}}
        p.write_text(json.dumps(doc))
        records, errors = load_annotations(p)
        assert not records
        assert any("timestamps" in e for e in errors)

    def test_good_records_survive_bad_neighbors(self, tmp_path):
        p = tmp_path / "ann.json"
        doc = {
            "bad": {"duration": 10.0, "timestamps": [[9.0, 1.0]], "sentences": ["x"]},
            "good": {"duration": 10.0, "timestamps": [[1.0, 5.0]], "sentences": ["add oil"]},
        }
        p.write_text(json.dumps(doc))
        records, errors = load_annotations(p)
        assert [r.video_id for r in records] == ["good"]
        assert errors

    def test_invalid_json_raises(self, tmp_path):
        p = tmp_path / "ann.json"
        p.write_text("{не json")
        with pytest.raises(DataError):
            load_annotations(p)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(DataError):
            load_annotations(tmp_path / "nope.json")


class TestDatasetDirectory:
    def test_round_trip(self, tmp_path):
        ds = synth_generate(SMALL)
        out = tmp_path / "ds"
        write_dataset(ds, out)
        again = load_dataset(out)
        assert len(again.train) == len(ds.train)
        assert len(again.val) == len(ds.val)
        for ra, rb in zip(ds.train + ds.val, again.train + again.val):
            assert ra.video_id == rb.video_id
            assert ra.duration_s == rb.duration_s
            assert ra.events == rb.events
            np.testing.assert_array_equal(ra.features, rb.features)
        assert again.concept_lexicon == ds.concept_lexicon

    def test_manifest_contents(self, tmp_path):
        ds = synth_generate(SMALL)
        out = tmp_path / "ds"
        write_dataset(ds, out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["d_in"] == 16
        assert set(manifest["splits"]) == {"train", "val"}

    def test_refuses_overwrite_without_force(self, tmp_path):
        ds = synth_generate(SMALL)
        out = tmp_path / "ds"
        write_dataset(ds, out)
        with pytest.raises(DataError, match="force"):
            write_dataset(ds, out)
        write_dataset(ds, out, force=True)  # no raise

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
