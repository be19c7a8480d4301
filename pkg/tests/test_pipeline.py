"""
パイプライン統括サービスのテスト (小規模合成データ)
"""
import json
import logging

import numpy as np
import pytest

from src.exceptions import ConfigError, DataFormatError
from src.services.beam_inference import beam_search, exact_predict
from src.services.model_store import ModelStore, config_hash, read_chain
from src.services.pipeline import Pipeline


def _snapshot(directory) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


class TestRunTrain:
    """学習とモデルディレクトリ"""

    def test_model_directory_layout(self, small_model_dir):
        for name in ("manifest.json", "config.json", "vocabulary.txt", "labels.json", "chain/chain.json"):
            assert (small_model_dir / name).exists()
        manifest = json.loads((small_model_dir / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["layer_widths"] == [4, 16, 300]
        assert set(manifest["input_hashes"]) == {"train_path", "label_catalog_path"}
        assert manifest["default_topk"] == 100

    def test_config_echo_excludes_threads(self, small_model_dir):
        config = json.loads((small_model_dir / "config.json").read_text(encoding="utf-8"))
        assert "threads" not in config
        assert "model_dir" not in config
        assert "threads" not in config["train"]
        assert config["tree"]["seed"] == config["seed"]

    def test_byte_identical_across_runs_and_threads(self, small_config, small_model_dir, tmp_path):
        again = Pipeline(threads=1).run_train(small_config.model_copy(update={"model_dir": str(tmp_path / "a")}))
        threaded = Pipeline(threads=8).run_train(small_config.model_copy(update={"model_dir": str(tmp_path / "b")}))
        reference = _snapshot(small_model_dir)
        assert _snapshot(again) == reference
        assert _snapshot(threaded) == reference

    def test_missing_training_file(self, small_config, tmp_path):
        config = small_config.model_copy(update={"train_path": str(tmp_path / "missing.tsv")})
        with pytest.raises(ConfigError):
            Pipeline().run_train(config)


class TestPredict:
    """予測ファイル"""

    def test_prediction_file(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        output = Pipeline().run_predict(small_model_dir, paths["test"], tmp_path / "pred.tsv", beam=5, k=10)
        lines = output.read_text(encoding="utf-8").splitlines()
        model = ModelStore().load(small_model_dir)
        assert lines
        qid, label, score = lines[0].split("\t")
        assert qid == "0"
        assert label in model.label_ids
        assert 0.0 <= float(score) <= 1.0
        run_manifest = json.loads((tmp_path / "pred.tsv.manifest.json").read_text(encoding="utf-8"))
        assert run_manifest["beam"] == 5
        assert run_manifest["k"] == 10
        assert run_manifest["command"] == "predict"
        assert "treematch" in run_manifest["versions"]

    def test_zero_beam_rejected(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        with pytest.raises(ValueError):
            Pipeline().run_predict(small_model_dir, paths["test"], tmp_path / "pred.tsv", beam=0, k=10)
        with pytest.raises(ValueError):
            beam_search("red shoe", ModelStore().load(small_model_dir), beam=0, k=5)

    def test_predictions_are_reproducible(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        first = Pipeline(threads=1).run_predict(small_model_dir, paths["test"], tmp_path / "a.tsv", k=20)
        second = Pipeline(threads=8).run_predict(small_model_dir, paths["test"], tmp_path / "b.tsv", k=20)
        assert first.read_bytes() == second.read_bytes()

    def test_full_beam_matches_exact(self, small_synthetic, small_model_dir, tmp_path):
        data, paths = small_synthetic
        model = ModelStore().load(small_model_dir)
        full = max(model.chain.layer_widths)
        output = Pipeline().run_predict(small_model_dir, paths["test"], tmp_path / "pred.tsv", beam=full, k=5)
        rows = [line.split("\t") for line in output.read_text(encoding="utf-8").splitlines()]
        for qid in range(5):
            expected = exact_predict(data.test_queries[qid], model, k=5)
            got = [r for r in rows if r[0] == str(qid)]
            assert [r[1] for r in got] == [model.external_label(int(l)) for l in expected.label_ids]
            np.testing.assert_allclose([float(r[2]) for r in got], expected.scores, atol=1e-12)

    def test_resaved_model_predicts_identically(self, small_synthetic, small_model_dir, tmp_path):
        data, _ = small_synthetic
        store = ModelStore()
        loaded = store.load(small_model_dir)
        resaved = store.load(store.save(loaded, tmp_path / "copy", config=store.read_config(small_model_dir)))
        for query in data.test_queries[:30]:
            a = beam_search(query, loaded, beam=5, k=20)
            b = beam_search(query, resaved, beam=5, k=20)
            assert a.label_ids.tobytes() == b.label_ids.tobytes()
            assert a.scores.tobytes() == b.scores.tobytes()


class TestEvaluate:
    """評価レポート"""

    def test_reports_written(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        report = Pipeline().run_eval(
            small_model_dir, paths["test"], tmp_path, beam=10,
            label_catalog_path=paths["labels"], with_bm25=True,
        )
        assert list(report.recall_at) == ["10", "50", "100"]
        values = list(report.recall_at.values())
        assert values == sorted(values)
        for stem in ("report", "bm25_report"):
            assert (tmp_path / f"{stem}.json").exists()
            assert "Recall@10" in (tmp_path / f"{stem}.txt").read_text(encoding="utf-8")
        bm25 = json.loads((tmp_path / "bm25_report.json").read_text(encoding="utf-8"))
        assert bm25["config"]["k1"] == 0.5
        assert bm25["config"]["b"] == 0.45

    def test_small_k(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        report = Pipeline().run_eval(small_model_dir, paths["test"], tmp_path, k=5)
        assert list(report.recall_at) == ["5"]

    def test_predictions_file_matches_model_evaluation(self, small_synthetic, small_model_dir, tmp_path, caplog):
        _, paths = small_synthetic
        pipeline = Pipeline()
        predictions = pipeline.run_predict(small_model_dir, paths["test"], tmp_path / "pred.tsv", beam=10, k=100)
        with caplog.at_level(logging.WARNING, logger="src.services.dataset"):
            from_file = pipeline.evaluate_predictions_file(predictions, paths["test"], tmp_path / "file")
        assert not caplog.records
        from_model = pipeline.run_eval(small_model_dir, paths["test"], tmp_path / "model", beam=10, k=100)
        for key, value in from_model.recall_at.items():
            assert from_file.recall_at[key] == pytest.approx(value)

    def test_bm25_requires_catalog(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        with pytest.raises(ConfigError):
            Pipeline().run_eval(small_model_dir, paths["test"], tmp_path, with_bm25=True)


class TestPruneAndBench:
    """枝刈りと計測"""

    def test_prune_composition(self, small_model_dir, tmp_path):
        pipeline = Pipeline()
        step = pipeline.run_prune(small_model_dir, 0.1, tmp_path / "step")
        twice = pipeline.run_prune(step, 0.45, tmp_path / "twice")
        once = pipeline.run_prune(small_model_dir, 0.45, tmp_path / "once")
        assert _snapshot(twice) == _snapshot(once)

    def test_prune_reduces_nnz(self, small_model_dir, tmp_path):
        store = ModelStore()
        pruned_dir = Pipeline(store=store).run_prune(small_model_dir, 0.4, tmp_path / "pruned")
        original = store.read_manifest(small_model_dir)
        pruned = store.read_manifest(pruned_dir)
        assert sum(e["nnz"] for e in pruned["weights"]) <= sum(e["nnz"] for e in original["weights"])
        assert pruned["prune_epsilon"] == 0.4
        assert pruned["config_hash"] == original["config_hash"]

    def test_negative_epsilon(self, small_model_dir, tmp_path):
        with pytest.raises(ConfigError):
            Pipeline().run_prune(small_model_dir, -1.0, tmp_path / "bad")

    def test_bench_latency_report(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        report = Pipeline().run_bench(small_model_dir, paths["test"], tmp_path, beam=5, k=10)
        assert report.latency_ms_median > 0
        assert report.throughput_qps == pytest.approx(1000.0 / report.latency_ms_median)
        assert "model_config_hash" in report.config
        assert "queries_sha256" in report.config
        assert (tmp_path / "bench.json").exists()

    def test_beam_and_prune_sweeps(self, small_synthetic, small_model_dir, tmp_path):
        _, paths = small_synthetic
        pipeline = Pipeline()
        beam_report = pipeline.run_bench(small_model_dir, paths["test"], tmp_path, k=100, beams=[1, 10])
        assert [row["beam"] for row in beam_report.rows] == [1, 10]
        prune_report = pipeline.run_bench(small_model_dir, paths["test"], tmp_path, k=100, epsilons=[0.3, 0.1])
        assert [row["epsilon"] for row in prune_report.rows] == [0.1, 0.3]
        assert (tmp_path / "beam_sweep.json").exists()
        assert (tmp_path / "prune_sweep.txt").exists()


class TestIngest:
    """ingest コマンドの出力"""

    def test_random_split(self, small_synthetic, tmp_path):
        _, paths = small_synthetic
        outputs = Pipeline().ingest(paths["train"], tmp_path, split="random", test_fraction=0.25)
        assert {"queries", "Y", "labels", "train", "test", "manifest"} <= set(outputs)
        manifest = json.loads(outputs["manifest"].read_text(encoding="utf-8"))
        assert manifest["split"] == "random"
        assert "pairs" in manifest["input_hashes"]
        n_queries = len(outputs["queries"].read_text(encoding="utf-8").splitlines())
        n_test = len(outputs["test"].read_text(encoding="utf-8").splitlines())
        assert n_test == round(n_queries * 0.25)

    def test_column_split_needs_time(self, tmp_path):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("red shoe\tA\nblue hat\tB\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            Pipeline().ingest(pairs, tmp_path / "out", split="column")


class TestSvmlightInput:
    """特徴量化済み入力"""

    def test_train_and_evaluate(self, tmp_path):
        rng = np.random.default_rng(42)
        lines = []
        for i in range(120):
            label = i % 6
            features = sorted({label * 3 + int(j) for j in rng.integers(0, 3, size=2)} | {18 + int(rng.integers(0, 4))})
            lines.append(f"{label} " + " ".join(f"{f}:{rng.random() + 0.5:.4f}" for f in features))
        train_path = tmp_path / "train.svm"
        train_path.write_text("\n".join(lines[:100]) + "\n", encoding="utf-8")
        test_path = tmp_path / "test.svm"
        test_path.write_text("\n".join(lines[100:]) + "\n", encoding="utf-8")

        from src.models.pipeline_config import PipelineConfig

        config = PipelineConfig(
            input_format="svmlight",
            train_path=str(train_path),
            model_dir=str(tmp_path / "model"),
            tree={"branching_factor": 2, "max_leaf": 2},
            train={"prune_epsilon": 0.0},
        )
        pipeline = Pipeline()
        model_dir = pipeline.run_train(config)
        assert not (model_dir / "vocabulary.txt").exists()
        report = pipeline.run_eval(model_dir, test_path, tmp_path / "eval", beam=3, k=5)
        assert report.n_queries == 20
        assert report.recall_at["5"] > 0.5


class TestStagedCommands:
    """fit-vectorizer / build-tree の出力"""

    def test_fit_vectorizer_manifest(self, small_config, tmp_path):
        vocab = Pipeline().fit_vectorizer(small_config, tmp_path / "vocabulary.txt")
        manifest = json.loads((tmp_path / "vocabulary.txt.manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "fit-vectorizer"
        assert manifest["n_features"] == vocab.dim
        assert set(manifest["input_hashes"]) == {"train_path", "label_catalog_path"}
        assert manifest["config_hash"] == config_hash(small_config.echo())

    def test_build_tree_manifest(self, small_config, small_model_dir, tmp_path):
        pipeline = Pipeline()
        pipeline.fit_vectorizer(small_config, tmp_path / "vocabulary.txt")
        chain = pipeline.build_tree_only(small_config, tmp_path / "chain", tmp_path / "vocabulary.txt")
        manifest = json.loads((tmp_path / "chain" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "build-tree"
        assert manifest["layer_widths"] == chain.layer_widths == [4, 16, 300]
        assert set(manifest["input_hashes"]) == {"train_path", "label_catalog_path", "vocabulary"}
        # 段階実行の木は train と同じ
        staged = read_chain(tmp_path / "chain")
        trained = ModelStore().load(small_model_dir).chain
        for a, b in zip(staged.parents, trained.parents):
            np.testing.assert_array_equal(a, b)
