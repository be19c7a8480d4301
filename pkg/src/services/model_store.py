"""
モデル永続化サービス
モデルディレクトリ (マニフェスト・語彙・木・重み) の保存と読み込みを行う
"""
import hashlib
import json
import logging
import shutil
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy
import scipy.sparse as sp

from src import __version__
from src.exceptions import ModelFormatError
from src.models.params import Activation, VectorizerConfig
from src.models.tree import ClusterChain
from src.models.vocabulary import FAMILIES, Vocabulary
from src.models.xmc_model import LayeredWeights, Model

logger = logging.getLogger(__name__)

FORMAT_NAME = "treematch-model"
FORMAT_VERSION = "1.0"
VOCAB_MAGIC = "TREEMATCH-VOCAB"
VOCAB_VERSION = "1"
CHAIN_MAGIC = "treematch-chain"

_FAMILY_CODES = {"unigram": "u", "bigram": "b", "trigram": "t"}
_CODE_FAMILIES = {code: name for name, code in _FAMILY_CODES.items()}

PathLike = Union[str, Path]


def dump_json(data: dict) -> str:
    """決定的な JSON (キー昇順、末尾改行)"""
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def config_hash(config: dict) -> str:
    """設定辞書の sha256"""
    canonical = json.dumps(config, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_sha256(path: PathLike) -> str:
    """入力ファイルの sha256"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_run_manifest(
    path: PathLike,
    command: str,
    input_hashes: dict,
    config: Optional[dict] = None,
    **fields
) -> Path:
    """
    コマンド実行のマニフェストを書き出す

    バージョン・設定ハッシュ・入力ハッシュと、コマンド固有の項目を記録する
    """
    manifest = {
        "command": command,
        "versions": {
            "treematch": __version__,
            "format": FORMAT_VERSION,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "input_hashes": dict(sorted(input_hashes.items())),
        **fields,
    }
    if config is not None:
        manifest["config_hash"] = config_hash(config)
    path = Path(path)
    path.write_text(dump_json(manifest), encoding="utf-8")
    return path


# ---------------------------------------------------------------- 語彙

def write_vocabulary(vocab: Vocabulary, path: PathLike) -> None:
    """
    語彙をテキスト形式で保存する

    1行目 "TREEMATCH-VOCAB<TAB>1"、続いて n_docs / sizes / config、
    その後 ID 順に "family<TAB>token<TAB>df"
    """
    config = json.dumps(vocab.config.model_dump(mode="json"), ensure_ascii=False, sort_keys=True)
    lines = [
        f"{VOCAB_MAGIC}\t{VOCAB_VERSION}",
        f"n_docs\t{vocab.n_docs}",
        "sizes\t" + "\t".join(str(vocab.family_size(name)) for name in FAMILIES),
        f"config\t{config}",
    ]
    for name in FAMILIES:
        tokens = sorted(vocab.token_to_id.get(name, {}).items(), key=lambda item: item[1])
        for token, feature_id in tokens:
            lines.append(f"{_FAMILY_CODES[name]}\t{token}\t{int(vocab.doc_freq[feature_id])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vocabulary(path: PathLike) -> Vocabulary:
    """テキスト形式の語彙を読み込む"""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"語彙ファイルが存在しません: {path}")
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        magic, version = lines[0].split("\t")
        if magic != VOCAB_MAGIC or version != VOCAB_VERSION:
            raise ModelFormatError(f"未対応の語彙形式です: {lines[0]}")
        n_docs = int(lines[1].split("\t")[1])
        sizes = [int(s) for s in lines[2].split("\t")[1:]]
        config = VectorizerConfig(**json.loads(lines[3].split("\t", 1)[1]))
    except (IndexError, ValueError) as e:
        raise ModelFormatError(f"語彙ヘッダーが不正です: {e}")

    records = lines[4:]
    if len(records) != sum(sizes):
        raise ModelFormatError(f"語彙レコード数 {len(records)} がヘッダーの合計 {sum(sizes)} と一致しません")

    token_to_id: dict[str, dict[str, int]] = {name: {} for name in FAMILIES}
    doc_freq = np.zeros(len(records), dtype=np.int64)
    for feature_id, record in enumerate(records):
        parts = record.split("\t")
        if len(parts) != 3 or parts[0] not in _CODE_FAMILIES:
            raise ModelFormatError(f"語彙レコードが不正です (行 {feature_id + 5})")
        token_to_id[_CODE_FAMILIES[parts[0]]][parts[1]] = feature_id
        doc_freq[feature_id] = int(parts[2])
    return Vocabulary(token_to_id=token_to_id, doc_freq=doc_freq, n_docs=n_docs, config=config)


# ---------------------------------------------------------------- 木・重み

def write_chain(chain: ClusterChain, directory: PathLike) -> None:
    """C(t) を層ごとの親ID配列として保存"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, parent in enumerate(chain.parents, start=1):
        np.save(directory / f"layer_{t}.npy", np.asarray(parent, dtype=np.int64))
    (directory / "chain.json").write_text(
        dump_json({"format": CHAIN_MAGIC, "version": FORMAT_VERSION, "layer_widths": chain.layer_widths}),
        encoding="utf-8",
    )


def read_chain(directory: PathLike) -> ClusterChain:
    directory = Path(directory)
    meta_path = directory / "chain.json"
    if not meta_path.exists():
        raise ModelFormatError(f"木のメタデータが存在しません: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != CHAIN_MAGIC or meta.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"未対応の木形式です: {meta.get('format')} {meta.get('version')}")
    parents = []
    for t, width in enumerate(meta["layer_widths"], start=1):
        parent = _load_array(directory / f"layer_{t}.npy")
        if len(parent) != width:
            raise ModelFormatError(f"層 {t} の幅が一致しません")
        parents.append(parent.astype(np.int64))
    try:
        return ClusterChain(parents=parents)
    except ValueError as e:
        raise ModelFormatError(f"木の構造が不正です: {e}")


def _load_array(path: Path) -> np.ndarray:
    if not path.exists():
        raise ModelFormatError(f"ファイルが存在しません: {path}")
    try:
        return np.load(path, allow_pickle=False)
    except ValueError as e:
        raise ModelFormatError(f"配列ファイルが壊れています ({path}): {e}")


def _write_weights(weights: LayeredWeights, directory: Path) -> list[dict]:
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, w in enumerate(weights.matrices, start=1):
        w = sp.csc_matrix(w)
        w.sort_indices()
        np.save(directory / f"layer_{t}.indptr.npy", w.indptr.astype(np.int64))
        np.save(directory / f"layer_{t}.indices.npy", w.indices.astype(np.int32))
        np.save(directory / f"layer_{t}.data.npy", w.data.astype(np.float64))
        entries.append({"layer": t, "shape": list(w.shape), "nnz": int(w.nnz)})
    return entries


def _read_weights(directory: Path, entries: list[dict]) -> LayeredWeights:
    matrices = []
    for entry in entries:
        t = entry["layer"]
        indptr = _load_array(directory / f"layer_{t}.indptr.npy")
        indices = _load_array(directory / f"layer_{t}.indices.npy")
        data = _load_array(directory / f"layer_{t}.data.npy")
        if len(data) != entry["nnz"] or len(indptr) != entry["shape"][1] + 1:
            raise ModelFormatError(f"層 {t} の重み配列がマニフェストと一致しません")
        matrices.append(sp.csc_matrix((data, indices, indptr), shape=tuple(entry["shape"])))
    return LayeredWeights(matrices)


def directory_nbytes(directory: PathLike, pattern: str = "**/*.npy") -> int:
    return int(sum(p.stat().st_size for p in sorted(Path(directory).glob(pattern))))


# ---------------------------------------------------------------- モデル

class ModelStore:
    """モデルディレクトリの保存・読み込みを行うサービス"""

    def save(
        self,
        model: Model,
        path: PathLike,
        config: Optional[dict] = None,
        input_hashes: Optional[dict] = None,
        stats: Optional[list[dict]] = None,
        prune_epsilon: float = 0.0,
        extra: Optional[dict] = None
    ) -> Path:
        """
        モデルディレクトリを書き出す

        一時ディレクトリに書いてからマニフェストを最後に保存し、置き換える。
        既存のディレクトリは置き換えが終わるまで .old に退避し、失敗時は元に戻す。

        Args:
            model: 保存するモデル
            path: 出力ディレクトリ
            config: 実効設定 (config.json に書き出し、ハッシュをマニフェストに記録)
            input_hashes: 入力ファイル名 → sha256
            stats: 層ごとの学習統計
            prune_epsilon: 適用済みの枝刈り閾値
            extra: マニフェストに追加する項目

        Returns:
            Path: 保存先ディレクトリ
        """
        path = Path(path)
        staging = path.with_name(path.name + ".tmp")
        backup = path.with_name(path.name + ".old")
        config = config or {}
        try:
            if staging.exists():
                shutil.rmtree(staging)
            staging.mkdir(parents=True)

            (staging / "config.json").write_text(dump_json(config), encoding="utf-8")
            if model.vocabulary is not None:
                write_vocabulary(model.vocabulary, staging / "vocabulary.txt")
            if model.label_ids is not None:
                (staging / "labels.json").write_text(
                    json.dumps(list(model.label_ids), ensure_ascii=False) + "\n", encoding="utf-8"
                )
            write_chain(model.chain, staging / "chain")
            entries = _write_weights(model.weights, staging / "weights")

            manifest = {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "depth": model.depth,
                "layer_widths": model.chain.layer_widths,
                "dim": model.weights.dim,
                "n_labels": model.n_labels,
                "activation": Activation(model.activation).value,
                "default_beam": model.default_beam,
                "prune_epsilon": float(prune_epsilon),
                "weights": entries,
                "size_bytes": directory_nbytes(staging / "weights"),
                "has_vocabulary": model.vocabulary is not None,
                "has_labels": model.label_ids is not None,
                "config_hash": config_hash(config),
                "input_hashes": dict(sorted((input_hashes or {}).items())),
                "stats": stats or [],
            }
            manifest.update(extra or {})
            # マニフェストは最後に書く
            (staging / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")

            # 既存ディレクトリは退避し、置き換え後に削除する
            if backup.exists():
                shutil.rmtree(backup)
            if path.exists():
                path.rename(backup)
            staging.rename(path)
            if backup.exists():
                shutil.rmtree(backup)
            logger.info(f"モデル保存完了: {path} (nnz {model.weights.nnz()})")
            return path

        except Exception as e:
            logger.error(f"モデル保存エラー: {e}")
            # ロールバック
            if backup.exists() and not path.exists():
                backup.rename(path)
            if staging.exists():
                shutil.rmtree(staging)
            raise

    def read_manifest(self, path: PathLike) -> dict:
        """マニフェストを読み込み、形式とバージョンを検証する"""
        manifest_path = Path(path) / "manifest.json"
        if not manifest_path.exists():
            raise ModelFormatError(f"マニフェストが存在しません: {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"マニフェストが壊れています: {e}")
        if manifest.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"モデル形式ではありません: {manifest.get('format')}")
        if manifest.get("version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"未対応のモデルバージョンです: {manifest.get('version')} (対応: {FORMAT_VERSION})"
            )
        return manifest

    def read_config(self, path: PathLike) -> dict:
        config_path = Path(path) / "config.json"
        if not config_path.exists():
            return {}
        return json.loads(config_path.read_text(encoding="utf-8"))

    def load(self, path: PathLike) -> Model:
        """モデルディレクトリを読み込む"""
        path = Path(path)
        manifest = self.read_manifest(path)
        try:
            vocabulary = read_vocabulary(path / "vocabulary.txt") if manifest["has_vocabulary"] else None
            label_ids = None
            if manifest.get("has_labels"):
                label_ids = json.loads((path / "labels.json").read_text(encoding="utf-8"))
            chain = read_chain(path / "chain")
            weights = _read_weights(path / "weights", manifest["weights"])
            model = Model(
                weights=weights,
                chain=chain,
                activation=Activation(manifest["activation"]),
                default_beam=int(manifest["default_beam"]),
                vocabulary=vocabulary,
                label_ids=label_ids,
            )
        except (KeyError, FileNotFoundError, ValueError) as e:
            raise ModelFormatError(f"モデルディレクトリが不正です ({path}): {e}")
        logger.info(f"モデル読み込み完了: {path} (深さ {model.depth}, ラベル数 {model.n_labels})")
        return model
