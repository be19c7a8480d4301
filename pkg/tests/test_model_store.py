"""
モデル永続化のテスト
"""
import json
from pathlib import Path

import numpy as np
import pytest

from src.exceptions import ModelFormatError
from src.models.params import Activation, VectorizerConfig
from src.models.sparse import SparseVector
from src.services import model_store
from src.services.beam_inference import batch_predict
from src.services.model_store import ModelStore, read_vocabulary, write_vocabulary
from src.services.synthetic import random_model
from src.services.text_vectorizer import fit


def _snapshot(directory) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def _queries(dim: int, n: int = 20) -> list[SparseVector]:
    rng = np.random.default_rng(42)
    queries = []
    for _ in range(n):
        indices = np.sort(rng.choice(dim, size=25, replace=False)).astype(np.int32)
        values = rng.random(25) + 0.1
        queries.append(SparseVector(dim, indices, values / np.linalg.norm(values)))
    return queries


@pytest.fixture
def model():
    return random_model(300, branching_factor=4, max_leaf=20, dim=200, nnz_per_column=20,
                        seed=0, activation=Activation.SIGMOID, default_beam=4)


class TestVocabularyFile:
    """語彙ファイル"""

    def test_round_trip(self, tmp_path):
        config = VectorizerConfig(max_unigrams=50, max_bigrams=50, max_char_trigrams=50, lowercase=False)
        vocab = fit(["Red shoe", "blue hat", "red hat"], config)
        write_vocabulary(vocab, tmp_path / "vocabulary.txt")
        loaded = read_vocabulary(tmp_path / "vocabulary.txt")
        assert loaded.token_to_id == vocab.token_to_id
        np.testing.assert_array_equal(loaded.doc_freq, vocab.doc_freq)
        assert loaded.n_docs == vocab.n_docs
        assert loaded.idf.tobytes() == vocab.idf.tobytes()
        assert loaded.config == vocab.config

    def test_bad_header(self, tmp_path):
        path = tmp_path / "vocabulary.txt"
        path.write_text("SOMETHING-ELSE 1\n", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            read_vocabulary(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError):
            read_vocabulary(tmp_path / "missing.txt")


class TestModelStore:
    """モデルディレクトリ"""

    def test_round_trip_predictions_bit_identical(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        loaded = store.load(tmp_path / "model")
        assert loaded.activation == Activation.SIGMOID
        assert loaded.default_beam == 4
        queries = _queries(200)
        for a, b in zip(batch_predict(queries, model, k=20), batch_predict(queries, loaded, k=20)):
            assert a.label_ids.tobytes() == b.label_ids.tobytes()
            assert a.scores.tobytes() == b.scores.tobytes()

    def test_chain_and_weights_preserved(self, model, tmp_path):
        store = ModelStore()
        loaded = store.load(store.save(model, tmp_path / "model"))
        for a, b in zip(model.chain.parents, loaded.chain.parents):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(model.weights.matrices, loaded.weights.matrices):
            assert a.data.tobytes() == b.data.tobytes()
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.indptr, b.indptr)

    def test_labels_and_vocabulary(self, model, tmp_path):
        vocab = fit(["red shoe", "blue hat"], VectorizerConfig())
        model = random_model(300, branching_factor=4, max_leaf=20, dim=vocab.dim, nnz_per_column=3, seed=1)
        model.vocabulary = vocab
        model.label_ids = [f"item-{i}" for i in range(300)]
        store = ModelStore()
        loaded = store.load(store.save(model, tmp_path / "model"))
        assert loaded.label_ids == model.label_ids
        assert loaded.vocabulary.token_to_id == vocab.token_to_id
        assert loaded.external_label(7) == "item-7"

    def test_same_model_same_bytes(self, model, tmp_path):
        store = ModelStore()
        config = {"seed": 0, "tree": {"branching_factor": 4}}
        store.save(model, tmp_path / "a", config=config, input_hashes={"train": "abc"})
        store.save(model, tmp_path / "b", config=config, input_hashes={"train": "abc"})
        assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")

    def test_manifest_contents(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model", config={"seed": 1}, prune_epsilon=0.2, extra={"note": "x"})
        manifest = store.read_manifest(tmp_path / "model")
        assert manifest["format"] == model_store.FORMAT_NAME
        assert manifest["version"] == model_store.FORMAT_VERSION
        assert manifest["layer_widths"] == model.chain.layer_widths
        assert manifest["prune_epsilon"] == 0.2
        assert manifest["config_hash"] == model_store.config_hash({"seed": 1})
        assert manifest["note"] == "x"
        assert store.read_config(tmp_path / "model") == {"seed": 1}

    def test_overwrite_existing_directory(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        (tmp_path / "model" / "stale.txt").write_text("old", encoding="utf-8")
        store.save(model, tmp_path / "model")
        assert not (tmp_path / "model" / "stale.txt").exists()

    def test_missing_manifest(self, tmp_path):
        (tmp_path / "model").mkdir()
        with pytest.raises(ModelFormatError):
            ModelStore().load(tmp_path / "model")

    def test_corrupt_manifest(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        (tmp_path / "model" / "manifest.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            store.load(tmp_path / "model")

    def test_unsupported_version(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        manifest_path = tmp_path / "model" / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest["version"] = "9.9"
        manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(ModelFormatError):
            store.load(tmp_path / "model")

    def test_missing_weight_file(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        next((tmp_path / "model" / "weights").glob("*.data.npy")).unlink()
        with pytest.raises(ModelFormatError):
            store.load(tmp_path / "model")

    def test_inconsistent_chain(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        leaf_path = tmp_path / "model" / "chain" / f"layer_{model.depth}.npy"
        leaf = np.load(leaf_path)
        leaf[0] = model.chain.width(model.depth - 1)
        np.save(leaf_path, leaf)
        with pytest.raises(ModelFormatError):
            store.load(tmp_path / "model")

    def test_failed_save_rolls_back(self, model, tmp_path, monkeypatch):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        before = _snapshot(tmp_path / "model")

        def broken(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(model_store, "_write_weights", broken)
        with pytest.raises(OSError):
            store.save(model, tmp_path / "model")
        assert not (tmp_path / "model.tmp").exists()
        assert _snapshot(tmp_path / "model") == before

    def test_failed_swap_restores_previous_model(self, model, tmp_path, monkeypatch):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        before = _snapshot(tmp_path / "model")
        rename = Path.rename

        def failing_rename(self, target):
            if self.name.endswith(".tmp"):
                raise OSError("rename failed")
            return rename(self, target)

        monkeypatch.setattr(Path, "rename", failing_rename)
        with pytest.raises(OSError):
            store.save(model, tmp_path / "model", extra={"note": "new"})
        assert _snapshot(tmp_path / "model") == before
        assert not (tmp_path / "model.old").exists()
        assert not (tmp_path / "model.tmp").exists()

    def test_replaced_model_leaves_no_backup(self, model, tmp_path):
        store = ModelStore()
        store.save(model, tmp_path / "model")
        store.save(model, tmp_path / "model", extra={"note": "new"})
        assert store.read_manifest(tmp_path / "model")["note"] == "new"
        assert not (tmp_path / "model.old").exists()


class TestRunManifest:
    """コマンド実行のマニフェスト"""

    def test_versions_and_hashes(self, tmp_path):
        path = model_store.write_run_manifest(
            tmp_path / "run.json", "fit-vectorizer", {"train_path": "abc"}, config={"seed": 0}, n_features=3
        )
        manifest = json.loads(path.read_text(encoding="utf-8"))
        assert manifest["command"] == "fit-vectorizer"
        assert manifest["versions"]["format"] == model_store.FORMAT_VERSION
        assert {"treematch", "numpy", "scipy"} <= set(manifest["versions"])
        assert manifest["input_hashes"] == {"train_path": "abc"}
        assert manifest["config_hash"] == model_store.config_hash({"seed": 0})
        assert manifest["n_features"] == 3
