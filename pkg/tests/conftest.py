import numpy as np
import pytest

from costshift.dataset import FeatureSet
from costshift.gmm import ClassGmmBank, GaussianComponent


def make_fs(features, labels, class_names, groups=None, domain=0):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if groups is None:
        groups = np.array([f"g{i}" for i in range(labels.shape[0])])
    else:
        groups = np.asarray(groups, dtype=object).astype(str)
    domain_id = np.full(labels.shape[0], domain, dtype=np.int64)
    return FeatureSet(
        features=features,
        labels=labels,
        groups=groups,
        domain_id=domain_id,
        class_names=list(class_names),
    )


def make_bank(spec, domain_tag="target", class_names=None):
    """Bank from [[(weight, mean, var), ...] per class]; scalars become 1-D."""
    per_class = []
    for comps in spec:
        cl = []
        for w, mean, var in comps:
            mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
            var = np.atleast_1d(np.asarray(var, dtype=np.float64))
            cl.append(GaussianComponent(weight=w, mean=mean, var=var))
        per_class.append(cl)
    if class_names is None:
        class_names = [f"c{i}" for i in range(len(spec))]
    return ClassGmmBank(
        per_class=per_class, domain_tag=domain_tag, class_names=list(class_names)
    )


def blob_fs(rng, centers, n_per, spread, class_names=None, groups_per_class=4):
    """Gaussian blob FeatureSet, one blob per class, grouped in chunks."""
    centers = np.asarray(centers, dtype=np.float64)
    feats, labels, groups = [], [], []
    for c, center in enumerate(centers):
        X = rng.normal(center, spread, size=(n_per, center.shape[0]))
        feats.append(X)
        labels.extend([c] * n_per)
        chunk = int(np.ceil(n_per / groups_per_class))
        groups.extend(f"c{c}_g{i // chunk}" for i in range(n_per))
    if class_names is None:
        class_names = [f"c{i}" for i in range(centers.shape[0])]
    return make_fs(np.vstack(feats), labels, class_names, groups=groups)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
