"""scikit-learn style wrappers over the template, filter-selection and detection steps."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .summarize import discriminant_scores, kmeans_templates, select_top_filters, summary_map
from .tensorcore import build_toy_net, detect_blobs, forward_with_taps
from .trace import FusionParams, build_fusion_plan


class TemplateKMeans(ClusterMixin, BaseEstimator):
    """Cluster flattened activation patches into templates with seeded Lloyd iterations."""

    def __init__(self, n_clusters=4, seed=0, max_iter=100):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        templates = kmeans_templates(X, self.n_clusters, seed=self.seed, max_iters=self.max_iter)
        self.cluster_centers_ = np.stack([t.centroid for t in templates])
        self.member_counts_ = np.array([t.member_count for t in templates])
        self.labels_ = self.predict(X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        d = ((X[:, None, :] - self.cluster_centers_[None]) ** 2).sum(axis=2)
        return d.argmin(axis=1)


class FilterSelector(TransformerMixin, BaseEstimator):
    """Pick the ``k_n`` channels whose activations best separate person cells.

    ``fit`` takes per-frame maps [C, H, W] and boolean masks on the same grid;
    ``transform`` returns the mean of the selected channels per frame.
    """

    def __init__(self, k_n=4):
        self.k_n = k_n

    def fit(self, X, y):
        X = [np.asarray(x, dtype=np.float32) for x in X]
        self.scores_ = discriminant_scores(X, list(y))
        self.channels_ = select_top_filters(self.scores_, self.k_n)
        self.n_channels_in_ = X[0].shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "channels_")
        return np.stack([summary_map(x, self.channels_) for x in X])


class StandaloneDetector(BaseEstimator):
    """Calibrate a fusion plan on labelled images and detect persons with no collaborators.

    ``fit(images, masks)``; ``predict(images)`` returns one box list per image.
    The fitted ``plan_`` is what the collaborative pipeline consumes.
    """

    def __init__(self, net_seed=7, extract_layer=1, ingest_layer=9, k_n=4, k_prime=4,
                 alpha=1.0, beta=1.0, gamma=0.5, mask_rebinarize_tau=0.5, threshold=0.08):
        self.net_seed = net_seed
        self.extract_layer = extract_layer
        self.ingest_layer = ingest_layer
        self.k_n = k_n
        self.k_prime = k_prime
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.mask_rebinarize_tau = mask_rebinarize_tau
        self.threshold = threshold

    def fit(self, X, y):
        self.net_ = build_toy_net(self.net_seed)
        params = FusionParams(self.alpha, self.beta, self.gamma, self.mask_rebinarize_tau)
        self.plan_ = build_fusion_plan(self.net_, list(X), list(y), self.extract_layer, self.ingest_layer,
                                       self.net_.n_layers, self.k_n, self.k_prime, params)
        return self

    def predict(self, X):
        check_is_fitted(self, "plan_")
        stride = self.net_.stride(self.net_.n_layers)
        return [detect_blobs(forward_with_taps(self.net_, img).final, self.plan_.predictor_channels,
                             self.threshold, stride) for img in X]
