import json

import numpy as np
import pytest

from fcdbn.config import RunConfig
from fcdbn.core import RngStream
from fcdbn.fusion import ScoreRecord, fit_fusion, synth_score_records
from fcdbn.kvrl import encode_face, extract_regions, pretrain_stages
from fcdbn.storage import (
    KinPair,
    ModelFormatError,
    PgmParseError,
    load_model,
    load_pgm,
    read_manifest,
    save_model,
    save_pgm,
    write_manifest,
)


class TestPgm:
    def test_all_zero_image(self, tmp_path):
        path = tmp_path / "zero.pgm"
        path.write_bytes(b"P5\n64 64\n255\n" + bytes(64 * 64))
        img = load_pgm(path)
        assert img.shape == (64, 64)
        assert np.all(img == 0.0)

    def test_max_intensity_image(self, tmp_path):
        path = tmp_path / "ones.pgm"
        path.write_bytes(b"P5\n64 64\n255\n" + bytes([255] * 64 * 64))
        assert np.all(load_pgm(path) == 1.0)

    def test_round_trip_is_bit_exact(self, tmp_path):
        stream = RngStream(seed=0)
        raw = np.floor(stream.uniform01(64 * 64) * 256).clip(0, 255)
        img = (raw / 255.0).reshape(64, 64)
        path = tmp_path / "rt.pgm"
        save_pgm(path, img)
        assert np.array_equal(load_pgm(path), img)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n64 64\n# another\n255\n"
                         + bytes(64 * 64))
        assert load_pgm(path).shape == (64, 64)

    def test_bad_magic_names_offset(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n64 64\n255\n" + bytes(64 * 64))
        with pytest.raises(PgmParseError, match="byte 0"):
            load_pgm(path)

    def test_wrong_dims_rejected(self, tmp_path):
        path = tmp_path / "dims.pgm"
        path.write_bytes(b"P5\n32 32\n255\n" + bytes(32 * 32))
        with pytest.raises(PgmParseError):
            load_pgm(path)

    def test_truncated_payload_names_offset(self, tmp_path):
        path = tmp_path / "trunc.pgm"
        path.write_bytes(b"P5\n64 64\n255\n" + bytes(100))
        with pytest.raises(PgmParseError, match="byte"):
            load_pgm(path)

    def test_save_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            save_pgm(tmp_path / "bad.pgm", np.full((4, 4), 1.5))


def tiny_config(seed=0):
    return RunConfig(
        seed=seed, epochs=2, batch_size=8, learning_rate=0.02,
        stage1_dims=(1024, 12, 8), stage2_dims=(24, 12, 8),
        classifier_hidden=(8,), classifier_epochs=10,
        n_filters=2, alpha=0.05, beta=1e-4,
        dropout_input=0.0, dropout_hidden=0.0,
    )


def tiny_model(seed=0):
    stream = RngStream(seed=seed)
    corpus = [stream.uniform01(64 * 64).reshape(64, 64) for _ in range(10)]
    return pretrain_stages(corpus, tiny_config(seed)), corpus


class TestModelPersistence:
    def test_kvrl_round_trip_preserves_encodings(self, tmp_path):
        model, corpus = tiny_model()
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        regions = extract_regions(corpus[0])
        before = encode_face(model, regions)
        after = encode_face(loaded, regions)
        assert np.max(np.abs(before - after)) < 1e-12

    def test_corrupted_dims_fail_closed(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "model.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        doc["payload"]["stage2"]["layers"][0]["a"] = [0.0, 0.0]  # wrong width
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_empty_file_is_a_parse_error(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "model.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_fusion_models_round_trip(self, tmp_path):
        records = synth_score_records(1, 100, 100)
        fused = fit_fusion(records, n_components=2, seed=1)
        plr_path = tmp_path / "plr.json"
        svm_path = tmp_path / "svm.json"
        save_model(fused.plr, plr_path)
        save_model(fused.svm, svm_path)
        plr = load_model(plr_path)
        svm = load_model(svm_path)
        from fcdbn.fusion import plr_score, svm_decision
        rec = ScoreRecord(s=0.4, k=(0.6,), label=1)
        assert plr_score(rec, plr) == plr_score(rec, fused.plr)
        assert svm_decision(svm, rec) == svm_decision(fused.svm, rec)

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "odd.json"
        path.write_text(json.dumps({"format": "fcdbn-model", "version": 1,
                                    "kind": "mystery", "payload": {}}))
        with pytest.raises(ModelFormatError):
            load_model(path)


class TestManifest:
    def pairs(self):
        return [
            KinPair("a.pgm", "b.pgm", "kin", "FS", "f0_p", "f0_c"),
            KinPair("c.pgm", "d.pgm", "nonkin", "MD", "f1_m", "f2_d"),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "manifest.csv"
        write_manifest(path, self.pairs())
        assert read_manifest(path) == self.pairs()

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a.pgm,b.pgm,kin,FS,x,y\n")
        with pytest.raises(ValueError):
            read_manifest(path)

    def test_bad_relation_rejected(self, tmp_path):
        path = tmp_path / "rel.csv"
        path.write_text("path_a,path_b,label,relation,subject_a,subject_b\n"
                        "a.pgm,b.pgm,kin,XX,x,y\n")
        with pytest.raises(ValueError):
            read_manifest(path)

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "lab.csv"
        path.write_text("path_a,path_b,label,relation,subject_a,subject_b\n"
                        "a.pgm,b.pgm,maybe,FS,x,y\n")
        with pytest.raises(ValueError):
            read_manifest(path)
