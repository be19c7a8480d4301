"""
数値計算カーネル (numba)

CSR 配列 (indptr, indices, data) を直接受け取り、GIL を解放して実行する
"""
import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def dcd_squared_hinge(indptr, indices, data, y, lam, max_iter, tol, seed, n_features):
    """
    L2 正則化二乗ヒンジ損失の双対座標降下法 (バイアスなし)

    min_w  Σ_i max(0, 1 - y_i w·x_i)^2 + (lam/2)||w||^2
    C = 1/lam に相当し、双対の対角項は lam/2。
    各エポックで座標順序をシード付きでシャッフルする。
    停止条件: 射影勾配ノルム <= tol × 初回エポックの射影勾配ノルム

    Returns:
        (w, alpha, 実行エポック数)
    """
    n = y.shape[0]
    w = np.zeros(n_features)
    alpha = np.zeros(n)
    diag = 0.5 * lam
    qd = np.empty(n)
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * data[p]
        qd[i] = s + diag

    np.random.seed(seed)
    order = np.arange(n)
    pg_init = 0.0
    epochs = 0
    for it in range(max_iter):
        epochs = it + 1
        np.random.shuffle(order)
        pg_sq = 0.0
        for s in range(n):
            i = order[s]
            yi = y[i]
            wx = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                wx += w[indices[p]] * data[p]
            g = yi * wx - 1.0 + diag * alpha[i]
            pg = g
            if alpha[i] == 0.0 and g > 0.0:
                pg = 0.0
            pg_sq += pg * pg
            if pg != 0.0:
                a_old = alpha[i]
                a_new = a_old - g / qd[i]
                if a_new < 0.0:
                    a_new = 0.0
                alpha[i] = a_new
                delta = (a_new - a_old) * yi
                if delta != 0.0:
                    for p in range(indptr[i], indptr[i + 1]):
                        w[indices[p]] += delta * data[p]
        pg_norm = np.sqrt(pg_sq)
        if it == 0:
            pg_init = pg_norm
        if pg_norm <= tol * pg_init:
            break
    return w, alpha, epochs


@njit(nogil=True, cache=True)
def gather_row_dots(indptr, indices, data, rows, x_dense):
    """指定行と密ベクトルの内積 (W^T の行 = ノードの重みベクトル)"""
    out = np.empty(rows.shape[0])
    for r in range(rows.shape[0]):
        row = rows[r]
        s = 0.0
        for p in range(indptr[row], indptr[row + 1]):
            s += data[p] * x_dense[indices[p]]
        out[r] = s
    return out
