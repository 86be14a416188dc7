"""Unsupervised phase extraction from latent vectors."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.metrics import silhouette_score as _silhouette

from .validation import check_fitted, check_matrix


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PCA / kernel PCA
# ---------------------------------------------------------------------------


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(idx)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


class PCA(BaseEstimator, TransformerMixin):
    """Principal component analysis via the covariance eigendecomposition.

    Parameters
    ----------
    n_components : int
        Number of leading components kept.

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    components_ : ndarray of shape (n_components, n_features)
        Unit rows; the largest-magnitude loading of each row is positive.
    explained_variance_ : ndarray of shape (n_components,)
    explained_variance_ratio_ : ndarray of shape (n_components,)
    """

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=1)
        n, d = X.shape
        k = self.n_components
        if k > d:
            raise AnalysisError(f"n_components={k} exceeds dimension {d}")
        if k > n:
            raise AnalysisError(f"n_components={k} exceeds sample count {n}")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = Xc.T @ Xc / max(n - 1, 1)
        vals, vecs = eigh(cov)
        order = np.argsort(vals)[::-1][:k]
        vals = np.clip(vals[order], 0.0, None)
        self.components_ = _fix_signs(vecs[:, order].T)
        self.explained_variance_ = vals
        total = np.clip(np.trace(cov), 0.0, None)
        self.explained_variance_ratio_ = vals / total if total > 0 else np.zeros_like(vals)
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_fitted(self, "components_")
        X = check_matrix(X, n_features=self.n_features_in_)
        return (X - self.mean_) @ self.components_.T


def median_gamma(X: np.ndarray) -> float:
    """``1 / (d * median pairwise squared distance)``."""
    d2 = _sq_dists(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(d2[iu])) if iu[0].size else 0.0
    if med <= 0.0:
        raise AnalysisError("degenerate kernel: all points coincide")
    return 1.0 / (X.shape[1] * med)


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.clip(d2, 0.0, None)


class RBFKernelPCA(BaseEstimator, TransformerMixin):
    """Kernel PCA with ``k(x, y) = exp(-gamma |x - y|^2)``.

    Parameters
    ----------
    n_components : int
    gamma : float or None
        ``None`` selects :func:`median_gamma` on the training data.
    """

    def __init__(self, n_components=1, gamma=None):
        self.n_components = n_components
        self.gamma = gamma

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=2)
        n = X.shape[0]
        if self.n_components > n - 1:
            raise AnalysisError(f"n_components={self.n_components} too large for {n} samples")
        self.gamma_ = median_gamma(X) if self.gamma is None else float(self.gamma)
        K = np.exp(-self.gamma_ * _sq_dists(X, X))
        self._col_mean = K.mean(axis=0)
        self._all_mean = K.mean()
        Kc = K - self._col_mean[None, :] - self._col_mean[:, None] + self._all_mean
        vals, vecs = eigh(Kc)
        order = np.argsort(vals)[::-1][:self.n_components]
        vals = vals[order]
        if vals[-1] <= 1e-12 * max(abs(vals[0]), 1e-300):
            raise AnalysisError("degenerate kernel matrix")
        vecs = _fix_signs(vecs[:, order].T).T
        self.eigenvalues_ = vals
        self.alphas_ = vecs / np.sqrt(vals)[None, :]
        self.X_fit_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "alphas_")
        X = check_matrix(X, n_features=self.n_features_in_)
        K = np.exp(-self.gamma_ * _sq_dists(X, self.X_fit_))
        Kc = K - K.mean(axis=1, keepdims=True) - self._col_mean[None, :] + self._all_mean
        return Kc @ self.alphas_


# ---------------------------------------------------------------------------
# Gaussian mixture
# ---------------------------------------------------------------------------


def _kmeans_pp(X: np.ndarray, K: int, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _log_gauss(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    c, low = cho_factor(cov, lower=True)
    diff = X - mean
    sol = cho_solve((c, low), diff.T).T
    logdet = 2.0 * np.log(np.diag(c)).sum()
    d = X.shape[1]
    return -0.5 * ((diff * sol).sum(1) + logdet + d * np.log(2 * np.pi))


class GaussianMixture(BaseEstimator, ClusterMixin):
    """Full-covariance Gaussian mixture fitted by EM.

    Each restart seeds the means with k-means++, uses hard assignments to the
    nearest seed for the initial weights and covariances, then iterates EM
    until the mean log-likelihood gain falls below ``tol``. The restart with
    the best final log-likelihood wins. Components are relabelled in order of
    increasing mean along ``order_axis`` so labels are reproducible.

    Parameters
    ----------
    n_components : int
    n_init : int
    tol : float
    max_iter : int
    reg_covar : float
        Added to every covariance diagonal.
    order_axis : int
        Coordinate used for canonical relabelling (first PC by default).
    seed : int
    """

    def __init__(self, n_components=2, n_init=10, tol=1e-8, max_iter=1000, reg_covar=1e-6,
                 order_axis=0, seed=0):
        self.n_components = n_components
        self.n_init = n_init
        self.tol = tol
        self.max_iter = max_iter
        self.reg_covar = reg_covar
        self.order_axis = order_axis
        self.seed = seed

    def _log_resp(self, X, weights, means, covs):
        logp = np.stack([_log_gauss(X, m, c) for m, c in zip(means, covs)], axis=1)
        logp = logp + np.log(weights)[None, :]
        norm = logsumexp(logp, axis=1)
        return logp - norm[:, None], norm

    def _m_step(self, X, resp):
        n, d = X.shape
        nk = resp.sum(0) + 10 * np.finfo(float).eps
        means = resp.T @ X / nk[:, None]
        covs = np.empty((len(nk), d, d))
        for k in range(len(nk)):
            diff = X - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + self.reg_covar * np.eye(d)
        return nk / n, means, covs

    def _run(self, X, rng):
        K = self.n_components
        centers = _kmeans_pp(X, K, rng)
        hard = np.argmin(_sq_dists(X, centers), axis=1)
        resp = np.zeros((X.shape[0], K))
        resp[np.arange(X.shape[0]), hard] = 1.0
        weights, means, covs = self._m_step(X, resp)
        history = []
        converged = False
        for _ in range(self.max_iter):
            log_resp, norm = self._log_resp(X, weights, means, covs)
            ll = float(norm.mean())
            history.append(ll)
            if len(history) > 1 and abs(history[-1] - history[-2]) < self.tol:
                converged = True
                break
            weights, means, covs = self._m_step(X, np.exp(log_resp))
        return weights, means, covs, history, converged

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=1)
        K = self.n_components
        if K < 1:
            raise AnalysisError("n_components must be >= 1")
        if K > X.shape[0]:
            raise AnalysisError(f"n_components={K} exceeds sample count {X.shape[0]}")
        rng = np.random.default_rng(self.seed)
        best = None
        for _ in range(self.n_init):
            out = self._run(X, rng)
            if best is None or out[3][-1] > best[3][-1]:
                best = out
        weights, means, covs, history, converged = best
        order = np.argsort(means[:, min(self.order_axis, X.shape[1] - 1)], kind="stable")
        self.weights_ = weights[order]
        self.means_ = means[order]
        self.covariances_ = covs[order]
        self.log_likelihood_history_ = history
        self.lower_bound_ = history[-1]
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        self.labels_ = self.predict(X)
        return self

    def predict_proba(self, X):
        check_fitted(self, "means_")
        X = check_matrix(X, n_features=self.n_features_in_)
        w = self.weights_ / self.weights_.sum()
        log_resp, _ = self._log_resp(X, w, self.means_, self.covariances_)
        return np.exp(log_resp)

    def predict(self, X):
        check_fitted(self, "means_")
        X = check_matrix(X, n_features=self.n_features_in_)
        w = self.weights_ / self.weights_.sum()
        log_resp, _ = self._log_resp(X, w, self.means_, self.covariances_)
        return np.argmax(log_resp, axis=1)

    def score(self, X, y=None):
        check_fitted(self, "means_")
        X = check_matrix(X, n_features=self.n_features_in_)
        return float(self._log_resp(X, self.weights_, self.means_, self.covariances_)[1].mean())


def silhouette(X, labels) -> float:
    """Silhouette score; ``nan`` when fewer than two clusters are present."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2 or len(np.unique(labels)) >= len(labels):
        return float("nan")
    return float(_silhouette(X, labels))


# ---------------------------------------------------------------------------
# Window variance and peaks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceCurve:
    centers: np.ndarray
    variances: np.ndarray
    window: int
    stride: int
    center_index: np.ndarray

    def __len__(self):
        return len(self.centers)


def window_variance(labels, h_values, w: int, s: int) -> VarianceCurve:
    """Population variance of labels in length-``w`` windows advanced by ``s``.

    The first window centre sits at index ``(w - 1) // 2`` and windows never
    extend past the sequence ends.
    """
    y = np.asarray(labels, dtype=np.float64)
    hv = np.asarray(h_values, dtype=np.float64)
    if y.shape != hv.shape or y.ndim != 1:
        raise AnalysisError("labels and h_values must be 1-D of equal length")
    if w < 1 or s < 1:
        raise AnalysisError("window and stride must be positive")
    if w > len(y):
        raise AnalysisError(f"window {w} exceeds sequence length {len(y)}")
    starts = np.arange(0, len(y) - w + 1, s)
    windows = np.lib.stride_tricks.sliding_window_view(y, w)[starts]
    var = windows.var(axis=1)
    centers_idx = starts + (w - 1) // 2
    if w % 2 == 0:
        centers = 0.5 * (hv[starts + w // 2 - 1] + hv[starts + w // 2])
    else:
        centers = hv[centers_idx]
    return VarianceCurve(centers, var, w, s, centers_idx)


def strict_local_maxima(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        return np.zeros(0, dtype=int)
    mid = v[1:-1]
    return np.nonzero((v[:-2] < mid) & (mid > v[2:]))[0] + 1


def find_peaks(curve: VarianceCurve, rel_height: float = 0.5) -> list[tuple[float, float]]:
    """Strict interior maxima with height ``>= rel_height * max``, tallest first."""
    idx = strict_local_maxima(curve.variances)
    if idx.size == 0:
        return []
    heights = curve.variances[idx]
    keep = heights >= rel_height * heights.max()
    idx, heights = idx[keep], heights[keep]
    order = np.argsort(-heights, kind="stable")
    return [(float(curve.centers[i]), float(curve.variances[i])) for i in idx[order]]


def boundary_estimate(labels, x) -> float:
    """Midpoint of the single label change in a (mostly) two-phase labelling.

    Uses the threshold minimising the number of labels disagreeing with a
    step function, which tolerates isolated misassignments.
    """
    y = np.asarray(labels)
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    y, x = y[order], x[order]
    a = y[0]
    best, best_err = None, None
    left_a = np.concatenate([[0], np.cumsum(y == a)])
    right_not_a = np.concatenate([np.cumsum((y != a)[::-1])[::-1], [0]])
    for k in range(1, len(y)):
        err = (k - left_a[k]) + (len(y) - k - right_not_a[k])
        if best_err is None or err < best_err:
            best, best_err = k, err
    if best is None:
        return float("nan")
    return 0.5 * (x[best - 1] + x[best])


def largest_jump(x, scores) -> tuple[float, float]:
    """Location (midpoint in ``x``) and size of the largest consecutive score change."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    x, s = x[order], s[order]
    jumps = np.abs(np.diff(s))
    i = int(np.argmax(jumps))
    return 0.5 * (x[i] + x[i + 1]), float(jumps[i])


def phase_diagram(rows: dict) -> list[tuple[float, float, int]]:
    """Flatten ``{h1: (h2_values, labels)}`` into sorted ``(h1, h2, label)`` triples."""
    out = []
    for h1 in sorted(rows):
        h2, lab = rows[h1]
        if len(h2) != len(lab):
            raise AnalysisError(f"row h1={h1}: {len(h2)} h2 values but {len(lab)} labels")
        out.extend((float(h1), float(a), int(b)) for a, b in zip(h2, lab))
    return out


def latent_pipeline(Z, x, *, n_clusters: int, pca_depth: int = 2, seed: int = 0) -> dict:
    """PCA -> GMM -> 1D KPCA on latent means; returns every intermediate."""
    Z = check_matrix(Z, "Z", min_rows=2)
    pca = PCA(n_components=min(pca_depth, Z.shape[1])).fit(Z)
    P = pca.transform(Z)
    gmm = GaussianMixture(n_components=n_clusters, seed=seed).fit(P)
    kpca = RBFKernelPCA(n_components=1).fit(Z)
    return {"pca": pca, "pcs": P, "gmm": gmm, "labels": gmm.labels_,
            "kpca": kpca.transform(Z)[:, 0], "silhouette": silhouette(P, gmm.labels_),
            "x": np.asarray(x, dtype=np.float64)}


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(header, rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and string rows of a CSV file, skipping ``#`` provenance lines."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise AnalysisError(f"{path}: no CSV header")
    return rows[0], rows[1:]


def latent_scatter_rows(x, pcs, labels):
    return [(a, p[0], p[1] if len(p) > 1 else 0.0, int(c)) for a, p, c in zip(x, pcs, labels)]


def variance_rows(curve: VarianceCurve):
    return list(zip(curve.centers, curve.variances))
