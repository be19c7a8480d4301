"""
パイプライン統括サービス
データ読み込み → 語彙構築 → ラベル木構築 → 学習 → 保存、および推論・評価・枝刈り・計測を行う
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from sklearn.preprocessing import normalize

from src.models.pipeline_config import InputFormat, PipelineConfig
from src.models.report import EvalReport, SweepReport, write_report
from src.config import settings
from src.exceptions import ConfigError, DataFormatError
from src.models.evaluation import RecallSummary
from src.models.params import Activation, LabelEmbedding
from src.models.sparse import SparseVector
from src.models.tree import ClusterChain
from src.models.vocabulary import Vocabulary
from src.models.xmc_model import Model, Prediction
from src.services import dataset
from src.services.beam_inference import batch_predict, beam_search
from src.services.bm25 import bm25_build, bm25_topk
from src.services.eval_harness import (
    DEFAULT_KS,
    MIN_MEASURED_QUERIES,
    beam_sweep,
    bench_latency,
    cold_start_stats,
    evaluate,
    prune_sweep,
)
from src.services.hier_trainer import prune, train
from src.services.label_indexer import build_tree, label_text_embeddings, pifa_embeddings
from src.services.model_store import (
    ModelStore,
    file_sha256,
    read_chain,
    read_vocabulary,
    write_chain,
    write_run_manifest,
    write_vocabulary,
)
from src.services.text_vectorizer import fit as fit_vocabulary
from src.services.text_vectorizer import transform_batch

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class TrainingData:
    """学習に必要な行列とメタデータ"""
    X: sp.csr_matrix
    Y: sp.csr_matrix
    vocabulary: Optional[Vocabulary] = None
    label_ids: Optional[list[str]] = None
    titles: Optional[list[str]] = None
    queries: Optional[list[str]] = None
    input_hashes: dict[str, str] = field(default_factory=dict)


def _hash_inputs(config: PipelineConfig) -> dict[str, str]:
    hashes = {}
    for name in ("train_path", "train_labels_path", "label_catalog_path"):
        value = getattr(config, name)
        if value:
            hashes[name] = file_sha256(value)
    return hashes


def _check_exists(path: Optional[str], name: str) -> None:
    if path and not Path(path).exists():
        raise ConfigError(f"{name} が存在しません: {path}", fields=[name])


def _read_queries(path: PathLike) -> list[str]:
    """1行1クエリ (タブ以降は無視)"""
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n").rstrip("\r").split("\t")[0] for line in f if line.strip()]


def _resolve_topk(manifest: dict, k: Optional[int]) -> int:
    """k 未指定時はモデルに記録された既定値"""
    return k if k is not None else int(manifest.get("default_topk", settings.default_topk))


def _recall_ks(k: int) -> tuple[int, ...]:
    """k 以下の標準カットオフと k 自身"""
    return tuple(sorted({x for x in DEFAULT_KS if x <= k} | {k}))


def _rows_as_vectors(X: sp.csr_matrix) -> list[SparseVector]:
    X = normalize(sp.csr_matrix(X, dtype=np.float64), norm="l2", axis=1)
    return [SparseVector.from_csr_row(X[i]) for i in range(X.shape[0])]


class Pipeline:
    """オフライン学習・評価パイプラインを統括するサービス"""

    def __init__(self, threads: int = 1, store: Optional[ModelStore] = None):
        self.threads = threads
        self.store = store or ModelStore()

    # ------------------------------------------------------------ 学習データ

    def ingest(
        self,
        pairs_path: PathLike,
        output_dir: PathLike,
        threshold: float = 1,
        label_catalog_path: Optional[PathLike] = None,
        split: Optional[str] = None,
        test_fraction: float = 0.2,
        seed: int = 0
    ) -> dict[str, Path]:
        """
        対データを取り込み、クエリ文書・Y・ラベルID対応を書き出す

        split を指定した場合は学習対 TSV と評価 TSV も書き出す (random / column)
        """
        catalog = dataset.read_label_catalog(label_catalog_path)[0] if label_catalog_path else None
        data = dataset.ingest(pairs_path, threshold, catalog)
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        outputs = {
            "queries": output_dir / "queries.txt",
            "Y": output_dir / "Y.npz",
            "labels": output_dir / "labels.json",
        }
        outputs["queries"].write_text("".join(f"{q}\n" for q in data.queries), encoding="utf-8")
        sp.save_npz(outputs["Y"], data.Y, compressed=False)
        outputs["labels"].write_text(json.dumps(data.label_ids, ensure_ascii=False) + "\n", encoding="utf-8")

        if split:
            if split == "column":
                if data.times is None:
                    raise DataFormatError("split=column には時刻列 (4列目) が必要です")
                train_rows, test_rows = dataset.split_by_column(data.times, test_fraction)
            else:
                train_rows, test_rows = dataset.random_split(len(data.queries), test_fraction, seed)
            train_part, test_part = data.subset(train_rows), data.subset(test_rows)
            outputs["train"] = output_dir / "train.tsv"
            outputs["test"] = output_dir / "test.tsv"
            outputs["train"].write_text(
                "".join(
                    f"{query}\t{label}\t1\n"
                    for query, labels in zip(train_part.queries, train_part.relevant_labels())
                    for label in labels
                ),
                encoding="utf-8",
            )
            dataset.write_test_tsv(outputs["test"], test_part.queries, test_part.relevant_labels())
            logger.info(f"分割 ({split}): 学習 {len(train_rows)}件, 評価 {len(test_rows)}件")

        input_hashes = {"pairs": file_sha256(pairs_path)}
        if label_catalog_path:
            input_hashes["labels"] = file_sha256(label_catalog_path)
        outputs["manifest"] = write_run_manifest(
            output_dir / "manifest.json",
            "ingest",
            input_hashes,
            threshold=threshold,
            split=split,
            test_fraction=test_fraction if split else None,
            seed=seed,
            n_queries=len(data.queries),
            n_labels=len(data.label_ids),
            n_pairs=int(data.Y.nnz),
            n_dropped=data.n_dropped,
        )
        return outputs

    def load_training_data(
        self,
        config: PipelineConfig,
        vocabulary: Optional[Vocabulary] = None
    ) -> TrainingData:
        """設定に従って学習行列を読み込む (pairs 形式は語彙を構築して特徴量化)"""
        _check_exists(config.train_path, "train_path")
        _check_exists(config.train_labels_path, "train_labels_path")
        _check_exists(config.label_catalog_path, "label_catalog_path")
        hashes = _hash_inputs(config)

        if config.input_format == InputFormat.SVMLIGHT:
            X, Y = dataset.load_svmlight(config.train_path)
            return TrainingData(normalize(X, norm="l2", axis=1), Y, input_hashes=hashes)
        if config.input_format == InputFormat.NPZ:
            X, Y = dataset.load_npz_pair(config.train_path, config.train_labels_path)
            return TrainingData(normalize(X, norm="l2", axis=1), Y, input_hashes=hashes)

        catalog_ids, catalog_titles = [], []
        if config.label_catalog_path:
            catalog_ids, catalog_titles = dataset.read_label_catalog(config.label_catalog_path)
        data = dataset.ingest(config.train_path, config.count_threshold, catalog_ids or None)
        titles = dataset.align_titles(data.label_ids, catalog_ids, catalog_titles) if catalog_ids else None

        if vocabulary is None:
            corpus = data.queries + [t for t in (titles or []) if t]
            vocabulary = fit_vocabulary(corpus, config.vectorizer, n_jobs=self.threads)
        X = transform_batch(data.queries, vocabulary)
        return TrainingData(X, data.Y, vocabulary, data.label_ids, titles, data.queries, hashes)

    def fit_vectorizer(self, config: PipelineConfig, output_path: PathLike) -> Vocabulary:
        """語彙だけを構築して保存 (隣に {名前}.manifest.json を書き出す)"""
        if not config.uses_text:
            raise ConfigError("fit-vectorizer は pairs 形式でのみ使用できます", fields=["input_format"])
        data = self.load_training_data(config)
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        write_vocabulary(data.vocabulary, output_path)
        write_run_manifest(
            output_path.with_name(output_path.name + ".manifest.json"),
            "fit-vectorizer",
            data.input_hashes,
            config=config.echo(),
            n_docs=data.vocabulary.n_docs,
            n_features=data.vocabulary.dim,
        )
        logger.info(f"語彙を保存しました: {output_path}")
        return data.vocabulary

    def build_label_tree(self, config: PipelineConfig, data: TrainingData) -> ClusterChain:
        """ラベル埋め込みを作って木を構築"""
        if config.label_embedding == LabelEmbedding.TEXT:
            Z = label_text_embeddings(data.titles, data.vocabulary)
        else:
            Z = pifa_embeddings(data.X, data.Y)
        return build_tree(Z, config.effective_tree(), n_jobs=self.threads)

    def build_tree_only(
        self,
        config: PipelineConfig,
        output_dir: PathLike,
        vocabulary_path: Optional[PathLike] = None
    ) -> ClusterChain:
        vocabulary = read_vocabulary(vocabulary_path) if vocabulary_path else None
        data = self.load_training_data(config, vocabulary)
        chain = self.build_label_tree(config, data)
        write_chain(chain, output_dir)
        input_hashes = dict(data.input_hashes)
        if vocabulary_path:
            input_hashes["vocabulary"] = file_sha256(vocabulary_path)
        write_run_manifest(
            Path(output_dir) / "manifest.json",
            "build-tree",
            input_hashes,
            config=config.echo(),
            layer_widths=chain.layer_widths,
        )
        logger.info(f"ラベル木を保存しました: {output_dir}")
        return chain

    # ------------------------------------------------------------ 学習

    def run_train(
        self,
        config: PipelineConfig,
        vocabulary_path: Optional[PathLike] = None,
        chain_path: Optional[PathLike] = None
    ) -> Path:
        """
        学習してモデルディレクトリを書き出す

        処理フロー:
        1. 学習データ読み込み (必要なら語彙構築)
        2. ラベル木構築 (または読み込み)
        3. 階層 OVR 学習と枝刈り
        4. 保存

        Args:
            config: パイプライン設定
            vocabulary_path: 構築済み語彙 (省略時は学習データから構築)
            chain_path: 構築済みラベル木 (省略時は構築)

        Returns:
            Path: モデルディレクトリ
        """
        # Step 1: 学習データ
        logger.info("Step 1: 学習データ読み込み")
        vocabulary = read_vocabulary(vocabulary_path) if vocabulary_path else None
        data = self.load_training_data(config, vocabulary)
        logger.info(f"学習データ: n={data.X.shape[0]}, d={data.X.shape[1]}, L={data.Y.shape[1]}")

        # Step 2: ラベル木
        logger.info("Step 2: ラベル木構築")
        chain = read_chain(chain_path) if chain_path else self.build_label_tree(config, data)

        # Step 3: 学習
        logger.info("Step 3: 階層 OVR 学習")
        result = train(data.X, data.Y, chain, config.effective_train(self.threads))

        # Step 4: 保存
        logger.info("Step 4: モデル保存")
        model = Model(
            weights=result.weights,
            chain=chain,
            activation=config.activation,
            default_beam=config.beam,
            vocabulary=data.vocabulary,
            label_ids=data.label_ids,
        )
        cold = np.flatnonzero(np.diff(sp.csc_matrix(data.Y).indptr) == 0)
        if len(cold):
            logger.warning(f"学習に正例のないラベル: {len(cold)}件")
        return self.store.save(
            model,
            config.model_dir,
            config=config.echo(),
            input_hashes=data.input_hashes,
            stats=[s.to_dict() for s in result.stats],
            prune_epsilon=config.train.prune_epsilon,
            extra={"cold_start_labels": [int(c) for c in cold], "default_topk": config.topk},
        )

    # ------------------------------------------------------------ 推論

    def load_queries(self, model: Model, path: PathLike) -> list:
        """語彙つきモデルはテキスト、語彙なしモデルは SVMLight の特徴ベクトル"""
        if model.vocabulary is not None:
            return _read_queries(path)
        X, _ = dataset.load_svmlight(path, n_features=model.weights.dim)
        return _rows_as_vectors(X)

    def run_predict(
        self,
        model_dir: PathLike,
        queries_path: PathLike,
        output_path: PathLike,
        beam: Optional[int] = None,
        k: Optional[int] = None,
        activation: Optional[Activation] = None
    ) -> Path:
        """予測 TSV (query_id<TAB>label_id<TAB>score) を書き出す"""
        model = self.store.load(model_dir)
        manifest = self.store.read_manifest(model_dir)
        queries = self.load_queries(model, queries_path)
        beam = beam if beam is not None else model.default_beam
        k = _resolve_topk(manifest, k)
        predictions = batch_predict(queries, model, beam, k, n_jobs=self.threads, activation=activation)

        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for qid, prediction in enumerate(predictions):
            for label, score in zip(prediction.label_ids, prediction.scores):
                lines.append(f"{qid}\t{model.external_label(int(label))}\t{float(score)!r}\n")
        output_path.write_text("".join(lines), encoding="utf-8")

        write_run_manifest(
            output_path.with_name(output_path.name + ".manifest.json"),
            "predict",
            {"queries": file_sha256(queries_path)},
            model_config_hash=manifest["config_hash"],
            beam=beam,
            k=k,
            activation=Activation(activation or model.activation).value,
            n_queries=len(predictions),
        )
        logger.info(f"予測を保存しました: {output_path} ({len(predictions)}クエリ)")
        return output_path

    # ------------------------------------------------------------ 評価

    def load_eval_set(self, model: Model, test_path: PathLike) -> tuple[list, list[set[int]]]:
        """評価クエリと正解 (内部ID)"""
        if model.vocabulary is not None:
            label_map = {label: i for i, label in enumerate(model.label_ids or [])}
            if model.label_ids is None:
                label_map = {str(i): i for i in range(model.n_labels)}
            eval_set = dataset.read_test_tsv(test_path, label_map)
            return eval_set.queries, eval_set.truths
        X, Y = dataset.load_svmlight(test_path, n_features=model.weights.dim)
        return _rows_as_vectors(X), dataset.truths_from_matrix(Y)

    def run_eval(
        self,
        model_dir: PathLike,
        test_path: PathLike,
        output_dir: PathLike,
        beam: Optional[int] = None,
        k: Optional[int] = None,
        label_catalog_path: Optional[PathLike] = None,
        with_bm25: bool = False
    ) -> EvalReport:
        """
        モデルを評価してレポートを書き出す

        with_bm25 の場合はラベルカタログのタイトルで BM25 ベースラインも評価する
        """
        model = self.store.load(model_dir)
        manifest = self.store.read_manifest(model_dir)
        queries, truths = self.load_eval_set(model, test_path)
        beam = beam if beam is not None else model.default_beam
        k = _resolve_topk(manifest, k)
        ks = _recall_ks(k)

        predictions = batch_predict(queries, model, beam, k, n_jobs=self.threads)
        summary = evaluate(predictions, truths, ks)
        cold = set(manifest.get("cold_start_labels", []))
        cold_stats = cold_start_stats(
            (l for l in range(model.n_labels) if l not in cold), truths
        )
        config = {"beam": beam, "k": k, "model_config_hash": manifest["config_hash"],
                  "test_sha256": file_sha256(test_path)}
        report = EvalReport.build("tree", summary, cold_start=cold_stats, config=config)
        write_report(report, output_dir)
        logger.info(f"評価完了: {report.recall_at}")

        if with_bm25:
            bm25_report = self.run_bm25_eval(model, queries, truths, label_catalog_path, k, ks)
            write_report(bm25_report, output_dir, stem="bm25_report")
        return report

    def run_bm25_eval(
        self,
        model: Model,
        queries: Sequence[str],
        truths: Sequence[set[int]],
        label_catalog_path: Optional[PathLike],
        k: int = 100,
        ks: Sequence[int] = DEFAULT_KS
    ) -> EvalReport:
        """ラベルタイトルに対する BM25 の Recall"""
        if not label_catalog_path or model.label_ids is None:
            raise ConfigError("BM25 評価にはラベルカタログが必要です", fields=["label_catalog_path"])
        catalog_ids, titles = dataset.read_label_catalog(label_catalog_path)
        documents = dataset.align_titles(model.label_ids, catalog_ids, titles)
        config = model.vocabulary.config if model.vocabulary else None
        index = bm25_build(documents, config=config)
        predictions = [bm25_topk(q, index, k) for q in queries]
        summary = evaluate(predictions, truths, ks)
        logger.info(f"BM25 評価完了: {summary.recall_at}")
        return EvalReport.build("bm25", summary, config={"k1": index.k1, "b": index.b, "k": k})

    def evaluate_predictions_file(
        self,
        predictions_path: PathLike,
        test_path: PathLike,
        output_dir: PathLike,
        ks: Sequence[int] = DEFAULT_KS
    ) -> EvalReport:
        """予測 TSV と評価 TSV から Recall を計算 (外部ラベルIDで照合)"""
        eval_set = dataset.read_test_tsv(test_path)
        label_map = {label: i for i, label in enumerate(eval_set.unknown_labels)}
        ranked: dict[int, list[int]] = {}
        with open(predictions_path, encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataFormatError("予測ファイルは3列である必要があります", line_number)
                try:
                    qid = int(parts[0])
                except ValueError:
                    raise DataFormatError(f"query_id が整数ではありません: {parts[0]!r}", line_number)
                ranked.setdefault(qid, []).append(label_map.get(parts[1], -1))
        predictions = [
            Prediction(np.asarray(ranked.get(i, []), dtype=np.int64), np.zeros(len(ranked.get(i, []))))
            for i in range(len(eval_set.queries))
        ]
        summary = evaluate(predictions, eval_set.truths, ks)
        report = EvalReport.build(
            "predictions", summary,
            config={"predictions_sha256": file_sha256(predictions_path), "test_sha256": file_sha256(test_path)},
        )
        write_report(report, output_dir)
        return report

    # ------------------------------------------------------------ 枝刈り・計測

    def run_prune(self, model_dir: PathLike, epsilon: float, output_dir: PathLike) -> Path:
        """
        枝刈りしたモデルを別ディレクトリに書き出す

        適用済み閾値は max(既存, ε) として記録する
        """
        if epsilon < 0:
            raise ConfigError("ε は 0 以上である必要があります", fields=["epsilon"])
        model = self.store.load(model_dir)
        manifest = self.store.read_manifest(model_dir)
        pruned = Model(
            weights=prune(model.weights, epsilon),
            chain=model.chain,
            activation=model.activation,
            default_beam=model.default_beam,
            vocabulary=model.vocabulary,
            label_ids=model.label_ids,
        )
        logger.info(f"枝刈り (ε={epsilon}): nnz {model.weights.nnz()} → {pruned.weights.nnz()}")
        return self.store.save(
            pruned,
            output_dir,
            config=self.store.read_config(model_dir),
            input_hashes=manifest.get("input_hashes"),
            stats=manifest.get("stats"),
            prune_epsilon=max(float(manifest.get("prune_epsilon", 0.0)), float(epsilon)),
            extra={
                "cold_start_labels": manifest.get("cold_start_labels", []),
                "default_topk": manifest.get("default_topk", settings.default_topk),
            },
        )

    def run_bench(
        self,
        model_dir: PathLike,
        queries_path: PathLike,
        output_dir: PathLike,
        beam: Optional[int] = None,
        k: Optional[int] = None,
        warmup: int = 10,
        repetitions: int = 1,
        beams: Optional[Sequence[int]] = None,
        epsilons: Optional[Sequence[float]] = None
    ) -> Union[EvalReport, SweepReport]:
        """
        単一スレッドのレイテンシ計測

        beams / epsilons を指定した場合は queries_path を評価 TSV として扱い、トレードオフを計測する
        """
        model = self.store.load(model_dir)
        manifest = self.store.read_manifest(model_dir)
        k = _resolve_topk(manifest, k)
        provenance = {"model_config_hash": manifest["config_hash"], "queries_sha256": file_sha256(queries_path)}
        if beams or epsilons:
            queries, truths = self.load_eval_set(model, queries_path)
            ks = _recall_ks(k)
            if beams:
                rows = beam_sweep(model, queries, truths, beams, k=k, ks=ks, warmup=warmup)
                report = SweepReport(kind="beam", rows=[r.to_dict() for r in rows], config={"k": k, **provenance})
                write_report(report, output_dir, stem="beam_sweep")
            if epsilons:
                sweep_beam = beam if beam is not None else model.default_beam
                rows = prune_sweep(
                    model, queries, truths, epsilons, beam=beam, k=k, ks=ks,
                    n_jobs=self.threads, measure_latency=len(queries) >= MIN_MEASURED_QUERIES,
                )
                report = SweepReport(
                    kind="prune", rows=[r.to_dict() for r in rows], config={"k": k, "beam": sweep_beam, **provenance}
                )
                write_report(report, output_dir, stem="prune_sweep")
            return report

        queries = self.load_queries(model, queries_path)
        beam = beam if beam is not None else model.default_beam
        latency = bench_latency(lambda q: beam_search(q, model, beam, k), queries, warmup, repetitions)
        report = EvalReport.build(
            "tree",
            summary=RecallSummary(),
            latency=latency,
            config={"beam": beam, "k": k, "warmup": warmup, "repetitions": repetitions, **provenance},
        )
        write_report(report, output_dir, stem="bench")
        return report
