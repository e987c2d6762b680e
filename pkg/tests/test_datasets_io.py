import json

import numpy as np
import pytest

from src.datasets_io import (CAUSALOGUE_TYPES, DatasetStore, EmbeddingBundle, bind_embeddings,
                             load_causaction, load_causalogue, load_synthetic, save_synthetic)
from src.errors import BindingError, DataError, SchemaError, TensorFormatError


def _record(dia_id=1, n=4, label=None, causal_type="Chain_I"):
    rows = label or {str(i): ",".join("0" * n) for i in range(1, n + 1)}
    return {"causal_type": causal_type, "dia_id": dia_id,
            "clause": {str(i): f"utterance {i}" for i in range(1, n + 1)}, "label": rows}


def _write(tmp_path, records, name="records.json"):
    path = tmp_path / name
    path.write_text(json.dumps(records), encoding="utf-8")
    return str(path)


class TestCausalogue:
    def test_chain_record_adjacency(self, sample_records_path):
        records = load_causalogue(sample_records_path)
        chain = records[0]
        assert chain.causal_type == "Chain_III"
        assert chain.structure_id == CAUSALOGUE_TYPES.index("Chain_III")
        assert chain.graph().parents(1) == [0]
        assert chain.graph().parents(2) == [1]
        assert chain.graph().parents(3) == [1, 2]
        assert list(chain.clauses) == [0, 1, 2, 3]

    def test_other_maps_to_unknown_structure(self, sample_records_path):
        other = load_causalogue(sample_records_path)[1]
        assert other.structure_id == -1
        assert not other.label.any()

    def test_json_lines(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text("\n".join(json.dumps(_record(i)) for i in (1, 2)) + "\n", encoding="utf-8")
        assert [r.dia_id for r in load_causalogue(str(path))] == [1, 2]

    def test_clauses_key_accepted(self, tmp_path):
        raw = _record()
        raw["clauses"] = raw.pop("clause")
        assert load_causalogue(_write(tmp_path, [raw]))[0].n_vars == 4

    def test_three_clauses_rejected(self, tmp_path):
        with pytest.raises(SchemaError) as info:
            load_causalogue(_write(tmp_path, [_record(dia_id=9, n=3)]))
        assert "dia_id=9" in str(info.value)
        assert info.value.record_id == 9

    def test_upper_triangle_rejected(self, tmp_path):
        label = {"1": "0,1,0,0", "2": "0,0,0,0", "3": "0,0,0,0", "4": "0,0,0,0"}
        with pytest.raises(SchemaError):
            load_causalogue(_write(tmp_path, [_record(label=label)]))

    def test_malformed_label(self, tmp_path):
        label = {"1": "0,0,0", "2": "1,0,0,0", "3": "0,1,0,0", "4": "0,1,1,0"}
        with pytest.raises(SchemaError):
            load_causalogue(_write(tmp_path, [_record(label=label)]))
        label = {"1": "0,0,x,0", "2": "1,0,0,0", "3": "0,1,0,0", "4": "0,1,1,0"}
        with pytest.raises(SchemaError):
            load_causalogue(_write(tmp_path, [_record(label=label)]))

    def test_unknown_type_and_duplicates(self, tmp_path):
        with pytest.raises(SchemaError):
            load_causalogue(_write(tmp_path, [_record(causal_type="Loop_I")]))
        with pytest.raises(SchemaError):
            load_causalogue(_write(tmp_path, [_record(1), _record(1)]))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("[{", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_causalogue(str(path))


def test_causaction_allows_longer_processes(tmp_path):
    records = [_record(1, n=7, causal_type="coffee"), _record(2, n=9, causal_type="tea")]
    loaded = load_causaction(_write(tmp_path, records))
    assert [r.n_vars for r in loaded] == [7, 9]
    with pytest.raises(SchemaError):
        load_causaction(_write(tmp_path, [_record(3, n=10, causal_type="tea")], "long.json"))


class TestBinding:
    def test_bind(self, sample_records_path):
        records = load_causalogue(sample_records_path)
        bundle = EmbeddingBundle({"1": np.ones((4, 8)), "2": np.zeros((4, 8))})
        dataset = bind_embeddings(records, bundle)
        assert len(dataset) == 2
        assert dataset[0].x.shape == (4, 8)
        assert dataset[0].meta["dia_id"] == 1
        np.testing.assert_array_equal(dataset[0].ground_truth.adjacency, records[0].label)

    def test_missing_embedding_lists_ids(self, sample_records_path):
        records = load_causalogue(sample_records_path)
        with pytest.raises(BindingError) as info:
            bind_embeddings(records, EmbeddingBundle({"1": np.ones((4, 8))}))
        assert info.value.missing == [2]

    def test_wrong_size_embedding(self, sample_records_path):
        records = load_causalogue(sample_records_path)
        with pytest.raises(BindingError):
            bind_embeddings(records, EmbeddingBundle({"1": np.ones((3, 8)), "2": np.ones((4, 8))}))

    def test_bundle_directory(self, tmp_path):
        EmbeddingBundle({"1": np.arange(8.0).reshape(4, 2)}).save_dir(str(tmp_path / "emb"))
        bundle = EmbeddingBundle.load_dir(str(tmp_path / "emb"))
        assert 1 in bundle
        np.testing.assert_array_equal(bundle.get(1), np.arange(8.0).reshape(4, 2))


class TestDatasetStore:
    def test_save_and_load_are_bit_identical(self, tmp_path, small_bench):
        save_synthetic(small_bench, str(tmp_path / "ds"))
        loaded = load_synthetic(str(tmp_path / "ds"))
        assert len(loaded) == len(small_bench)
        for a, b in zip(small_bench, loaded):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.confounding, b.confounding)
            np.testing.assert_array_equal(a.noise, b.noise)
            np.testing.assert_array_equal(a.confounders, b.confounders)
            np.testing.assert_array_equal(a.ground_truth.strengths, b.ground_truth.strengths)
            np.testing.assert_array_equal(a.meta["loadings"], b.meta["loadings"])
            assert a.structure_id == b.structure_id
        assert loaded.metadata["generator"] == small_bench.metadata["generator"]

    def test_manifest_is_deterministic(self, tmp_path, small_bench):
        save_synthetic(small_bench, str(tmp_path / "a"))
        save_synthetic(small_bench, str(tmp_path / "b"))
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_stats(self, tmp_path, small_bench):
        store = save_synthetic(small_bench, str(tmp_path / "ds"))
        stats = store.get_stats()
        assert stats["total_samples"] == 12
        assert stats["skeletons"] == 3
        assert stats["sizes"] == [6]
        assert DatasetStore(str(tmp_path / "ds")).get_stats() == {"status": "not_loaded"}

    def test_missing_file_detected(self, tmp_path, small_bench):
        save_synthetic(small_bench, str(tmp_path / "ds"))
        (tmp_path / "ds" / "samples" / "s00003.idt").unlink()
        with pytest.raises(TensorFormatError):
            load_synthetic(str(tmp_path / "ds"))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_synthetic(str(tmp_path / "nothing"))

    def test_records_dataset_round_trip(self, tmp_path, sample_records_path):
        records = load_causalogue(sample_records_path)
        dataset = bind_embeddings(records, EmbeddingBundle({"1": np.ones((4, 3)), "2": np.ones((4, 3))}))
        loaded = load_synthetic(str(save_synthetic(dataset, str(tmp_path / "ds")).root))
        assert loaded[1].structure_id == -1
        assert loaded[0].confounding is None
        np.testing.assert_array_equal(loaded[0].ground_truth.adjacency, records[0].label)
