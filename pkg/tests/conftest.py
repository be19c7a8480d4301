"""
共通フィクスチャ
"""
import numpy as np
import pytest
import scipy.sparse as sp

from src.models.pipeline_config import PipelineConfig
from src.services import synthetic
from src.services.pipeline import Pipeline


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="合成データでの大規模検証も実行する")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="--runslow を指定すると実行されます")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def unit_rows(dense: np.ndarray) -> sp.csr_matrix:
    """各行を l2 正規化した CSR"""
    dense = np.asarray(dense, dtype=np.float64)
    norms = np.linalg.norm(dense, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return sp.csr_matrix(dense / norms)


@pytest.fixture(scope="session")
def small_synthetic(tmp_path_factory):
    """300 ラベル規模の合成データ (ファイル書き出し済み)"""
    data = synthetic.generate(n_queries=3000, n_labels=300, labels_per_topic=20, seed=0)
    directory = tmp_path_factory.mktemp("synthetic")
    paths = data.write(directory)
    return data, paths


@pytest.fixture(scope="session")
def small_config(small_synthetic, tmp_path_factory):
    _, paths = small_synthetic
    return PipelineConfig(
        train_path=str(paths["train"]),
        label_catalog_path=str(paths["labels"]),
        test_path=str(paths["test"]),
        model_dir=str(tmp_path_factory.mktemp("model") / "model"),
        tree={"branching_factor": 4, "max_leaf": 20},
        vectorizer={"max_unigrams": 20000, "max_bigrams": 20000, "max_char_trigrams": 5000},
    )


@pytest.fixture(scope="session")
def small_model_dir(small_config):
    """学習済みモデルディレクトリ"""
    return Pipeline(threads=1).run_train(small_config)
