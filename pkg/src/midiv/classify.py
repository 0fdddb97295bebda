"""Bag-level classification, evaluation and the simulation study harness.

Six methods share one convention: a bag's score is low when the bag looks
positive. ``rd_kl``/``rd_bh`` threshold the ratio of bag-to-class
divergences, ``ckl`` thresholds the class-conditional KL score (oriented
so that bag mass covered only by the positive class pulls the score down,
see ``_ckl_score``), ``b2b_kl``/``b2b_bh`` score by minimum bag-to-bag
dissimilarity against each class, and ``svm_divs`` feeds per-dimension
divergences into a linear SVM and scores by signed margin. AUC is computed
exactly via the rank (Mann-Whitney) statistic and cross-checked against
the trapezoidal ROC area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import divergence as dv
from .core import Bag, Dataset, Label, apply_pca, fit_pca
from .density import fit_kde, select_gmm, DensityModel
from .divergence import DivergenceSpec
from .seeds import derive_seed
from .simulate import SimConfig, sample_experiment

__all__ = [
    "METHODS",
    "ESTIMATORS",
    "TABLE1_GRID",
    "EstimatorConfig",
    "SvmConfig",
    "PipelineConfig",
    "ClassModel",
    "EvalReport",
    "StudyCell",
    "StudyResult",
    "fit_class_densities",
    "fit_classifier",
    "fit_svm_on_divergences",
    "train_linear_svm",
    "score_bag",
    "auc",
    "roc_points",
    "choose_threshold",
    "accuracy_at",
    "cross_validate",
    "evaluate_holdout",
    "run_sim_study",
    "normalize_method",
]

METHODS = ("rd_kl", "rd_bh", "ckl", "b2b_kl", "b2b_bh", "svm_divs")
ESTIMATORS = ("kde-epan", "kde-gauss", "gmm-aic")
TABLE1_GRID = tuple((p, n) for p in (1, 5, 10) for n in (5, 10, 25))

_ESTIMATOR_ALIASES = {
    "kde-epan": "kde-epan",
    "kde_epan": "kde-epan",
    "kde_epanechnikov": "kde-epan",
    "kde-gauss": "kde-gauss",
    "kde_gauss": "kde-gauss",
    "kde_gaussian": "kde-gauss",
    "gmm-aic": "gmm-aic",
    "gmm_aic": "gmm-aic",
}


def normalize_method(name: str) -> str:
    method = name.strip().lower().replace("-", "_")
    if method not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {METHODS}")
    return method


@dataclass(frozen=True)
class EstimatorConfig:
    """How per-bag and per-class densities are fitted.

    ``robust_sigma`` controls the spread estimate of the KDE bandwidth
    rule: None (default) uses the robust spread for per-bag fits and the
    plain sample sd for pooled class fits, which is where the pooled
    sample is multimodal; True/False force one choice everywhere.
    """

    kind: str = "kde-epan"
    bandwidth: float | None = None  # explicit KDE bandwidth; None = rule of thumb
    k_max: int = 5  # GMM-AIC model search ceiling
    n_restarts: int = 3
    robust_sigma: bool | None = None

    def __post_init__(self):
        key = self.kind.strip().lower()
        if key not in _ESTIMATOR_ALIASES:
            raise ValueError(f"unknown estimator {self.kind!r}; choose from {ESTIMATORS}")
        object.__setattr__(self, "kind", _ESTIMATOR_ALIASES[key])


@dataclass(frozen=True)
class SvmConfig:
    epochs: int = 200
    lam: float = 1e-3


def fit_density_1d(
    samples: np.ndarray, estimator: EstimatorConfig, seed, pooled: bool = False
) -> DensityModel:
    robust = estimator.robust_sigma
    if robust is None:
        robust = not pooled
    if estimator.kind == "kde-epan":
        return fit_kde(samples, "EPANECHNIKOV", estimator.bandwidth, robust_sigma=robust)
    if estimator.kind == "kde-gauss":
        return fit_kde(samples, "GAUSSIAN", estimator.bandwidth, robust_sigma=robust)
    model, _ = select_gmm(samples, estimator.k_max, seed, n_restarts=estimator.n_restarts)
    return model


def fit_class_densities(
    train: Dataset, estimator: EstimatorConfig, seed
) -> tuple[tuple[DensityModel, ...], tuple[DensityModel, ...]]:
    """One density per dimension per class, fitted to pooled class instances."""
    out = []
    for label in (Label.POS, Label.NEG):
        pooled = train.pooled_instances(label)
        if pooled.shape[0] == 0:
            raise ValueError(f"training set has no {label.name} bags")
        models = tuple(
            fit_density_1d(
                pooled[:, d], estimator, derive_seed(seed, "class", label.name, d), pooled=True
            )
            for d in range(train.dimension)
        )
        out.append(models)
    return out[0], out[1]


@dataclass(frozen=True)
class ClassModel:
    """A fitted bag classifier: class densities plus method parameters."""

    method: str
    dimension: int
    spec: DivergenceSpec
    estimator: EstimatorConfig
    f_pos: tuple[DensityModel, ...]
    f_neg: tuple[DensityModel, ...]
    threshold: float | None = None
    svm_weights: np.ndarray | None = None
    svm_bias: float = 0.0
    svm_measure: str = "ckl"
    scaler_mean: np.ndarray | None = None
    scaler_sd: np.ndarray | None = None
    train_bags: tuple[tuple[Label, tuple[DensityModel, ...]], ...] = ()
    train_bag_ids: tuple[str, ...] = ()  # provenance of every pooled fit

    def __post_init__(self):
        if len(self.f_pos) != self.dimension or len(self.f_neg) != self.dimension:
            raise ValueError("need one density per dimension per class")
        if self.svm_weights is not None and len(self.svm_weights) != self.dimension:
            raise ValueError("SVM weight length must equal the feature dimension")


# --------------------------------------------------------------------------
# fused per-bag divergence estimation
#
# All measures requested for one bag share the same evaluation points per
# dimension: one importance sample from the bag density (or one Riemann
# grid), against which every reference density is evaluated once.


def _est_kl(fb: np.ndarray, fr: np.ndarray, spec: DivergenceSpec, dx: float | None) -> float:
    logratio, _ = dv._kl_pointwise(fb, fr, spec)
    if dx is None:
        return max(float(logratio.mean()), 0.0)
    active = fb > 0
    return max(float((fb[active] * logratio[active]).sum() * dx), 0.0)


def _est_bh(fb: np.ndarray, fr: np.ndarray, spec: DivergenceSpec, dx: float | None) -> float:
    if dx is None:
        overlap = float(np.sqrt(fr / np.maximum(fb, dv._TINY)).mean())
    else:
        overlap = float(np.sqrt(fb * fr).sum() * dx)
    overlap = min(max(overlap, dv._TINY), 1.0)
    return -math.log(overlap)


def _est_ckl(
    fb: np.ndarray, fp: np.ndarray, fn: np.ndarray, spec: DivergenceSpec, dx: float | None
) -> float:
    logratio, _ = dv._kl_pointwise(fb, fp, spec)
    w = np.minimum(fn / np.maximum(fp, spec.floor), spec.ratio_clip)
    if dx is None:
        return float((w * logratio).mean())
    active = fb > 0
    return float((w[active] * fb[active] * logratio[active]).sum() * dx)


def _ckl_score(
    fb: np.ndarray, fp: np.ndarray, fn: np.ndarray, spec: DivergenceSpec, dx: float | None
) -> float:
    """Classifier orientation of the class-conditional KL (lower = positive).

    The bag is compared to the negative class, conditioned on the positive:
    minus the integral of (f_pos/f_neg) * f_bag * log(f_bag/f_neg). Bag mass
    in positive-only coverage then drives the score strongly down, mass in
    negative-only coverage drives it up, and regions unseen by both classes
    contribute nothing, which is what makes the method robust to sparse
    training sets.
    """
    return -_est_ckl(fb, fn, fp, spec, dx)


def _ratio(num: float, den: float) -> float:
    return num / max(den, dv._RD_DENOMINATOR_FLOOR)


def _bundle_scores(
    bag_models: tuple[DensityModel, ...],
    f_pos: tuple[DensityModel, ...],
    f_neg: tuple[DensityModel, ...],
    spec: DivergenceSpec,
    seed,
    methods: tuple[str, ...],
    train_bags: tuple[tuple[Label, tuple[DensityModel, ...]], ...] = (),
) -> dict[str, float]:
    """Scores for every requested non-SVM method, re-using evaluation points."""
    need_class = any(m in ("rd_kl", "rd_bh", "ckl") for m in methods)
    need_b2b = any(m in ("b2b_kl", "b2b_bh") for m in methods)
    klp = kln = bhp = bhn = cklv = 0.0
    b2b_kl_d = np.zeros(len(train_bags))
    b2b_bh_d = np.zeros(len(train_bags))
    for d, fb_model in enumerate(bag_models):
        child = derive_seed(seed, "dim", d)
        if spec.integrator == "IMPORTANCE":
            z = fb_model.sample(spec.n_imp, child)
            dx = None
        else:
            grid_models = [fb_model, f_pos[d], f_neg[d]]
            grid_models += [tb[1][d] for tb in train_bags]
            z, dx = dv._riemann_grid(tuple(grid_models), spec)
        fb = fb_model.pdf(z)
        if need_class:
            fp = f_pos[d].pdf(z)
            fn = f_neg[d].pdf(z)
            if "rd_kl" in methods:
                klp += _est_kl(fb, fp, spec, dx)
                kln += _est_kl(fb, fn, spec, dx)
            if "rd_bh" in methods:
                bhp += _est_bh(fb, fp, spec, dx)
                bhn += _est_bh(fb, fn, spec, dx)
            if "ckl" in methods:
                cklv += _ckl_score(fb, fp, fn, spec, dx)
        if need_b2b:
            for j, (_, tb_models) in enumerate(train_bags):
                ft = tb_models[d].pdf(z)
                if "b2b_kl" in methods:
                    b2b_kl_d[j] += _est_kl(fb, ft, spec, dx)
                if "b2b_bh" in methods:
                    b2b_bh_d[j] += _est_bh(fb, ft, spec, dx)
    scores: dict[str, float] = {}
    if "rd_kl" in methods:
        scores["rd_kl"] = _ratio(klp, kln)
    if "rd_bh" in methods:
        scores["rd_bh"] = _ratio(bhp, bhn)
    if "ckl" in methods:
        scores["ckl"] = cklv
    if need_b2b:
        labels = np.array([lab == Label.POS for lab, _ in train_bags])
        if not labels.any() or labels.all():
            raise ValueError("bag-to-bag scoring needs training bags of both classes")
        for name, dists in (("b2b_kl", b2b_kl_d), ("b2b_bh", b2b_bh_d)):
            if name in methods:
                scores[name] = float(dists[labels].min() - dists[~labels].min())
    return scores


def _fit_bag_models(
    bag: Bag, estimator: EstimatorConfig, seed
) -> tuple[DensityModel, ...]:
    try:
        return tuple(
            fit_density_1d(bag.column(d), estimator, derive_seed(seed, "bagfit", d))
            for d in range(bag.dimension)
        )
    except ValueError as exc:
        raise ValueError(f"bag {bag.id!r}: {exc}") from exc


def _divergence_features(
    bag_models, f_pos, f_neg, spec: DivergenceSpec, measure: str, seed
) -> np.ndarray:
    """Per-dimension divergence feature vector (the SVM input)."""
    feats = np.empty(len(bag_models))
    for d, fb_model in enumerate(bag_models):
        child = derive_seed(seed, "feat", d)
        if spec.integrator == "IMPORTANCE":
            z = fb_model.sample(spec.n_imp, child)
            dx = None
        else:
            z, dx = dv._riemann_grid((fb_model, f_pos[d], f_neg[d]), spec)
        fb = fb_model.pdf(z)
        fp = f_pos[d].pdf(z)
        fn = f_neg[d].pdf(z)
        if measure == "rd_kl":
            feats[d] = _ratio(_est_kl(fb, fp, spec, dx), _est_kl(fb, fn, spec, dx))
        elif measure == "rd_bh":
            feats[d] = _ratio(_est_bh(fb, fp, spec, dx), _est_bh(fb, fn, spec, dx))
        elif measure == "ckl":
            feats[d] = _ckl_score(fb, fp, fn, spec, dx)
        else:
            raise ValueError(f"unknown feature measure {measure!r}")
    return feats


def score_bag(model: ClassModel, bag: Bag, seed) -> float:
    """Score one bag under the model's method; lower means more positive."""
    if bag.dimension != model.dimension:
        raise ValueError(
            f"bag {bag.id!r} has dimension {bag.dimension}, model expects {model.dimension}"
        )
    bag_models = _fit_bag_models(bag, model.estimator, seed)
    if model.method == "svm_divs":
        feats = _divergence_features(
            bag_models, model.f_pos, model.f_neg, model.spec, model.svm_measure, seed
        )
        x = (feats - model.scaler_mean) / model.scaler_sd
        return float(x @ model.svm_weights + model.svm_bias)
    scores = _bundle_scores(
        bag_models,
        model.f_pos,
        model.f_neg,
        model.spec,
        seed,
        methods=(model.method,),
        train_bags=model.train_bags if model.method.startswith("b2b") else (),
    )
    return scores[model.method]


# --------------------------------------------------------------------------
# linear SVM on divergence features


def train_linear_svm(
    features: np.ndarray, labels: np.ndarray, config: SvmConfig, seed
) -> tuple[np.ndarray, float]:
    """L2-regularized hinge loss by seeded subgradient descent.

    ``labels`` are True for positive bags; internally positive maps to the
    -1 side so that a lower margin means a more positive-looking bag.
    """
    x = np.asarray(features, dtype=float)
    y = np.where(np.asarray(labels, dtype=bool), -1.0, 1.0)
    n, d = x.shape
    rng = np.random.default_rng(
        seed if isinstance(seed, (int, np.random.SeedSequence)) else derive_seed("svm", str(seed))
    )
    w = np.zeros(d)
    b = 0.0
    t = 0
    lam = config.lam
    for _ in range(config.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (x[i] @ w + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * x[i]
                b += eta * y[i]
    return w, b


def fit_svm_on_divergences(
    train: Dataset,
    measure: str,
    spec: DivergenceSpec,
    svm_config: SvmConfig,
    seed,
    estimator: EstimatorConfig | None = None,
) -> ClassModel:
    """Linear SVM on per-dimension divergence features of the training bags.

    Class densities are fitted once to the full training pool; training-bag
    features therefore include each bag's own instances in its class pool.
    Features are standardized before training.
    """
    measure = normalize_method(measure)
    if measure not in ("rd_kl", "rd_bh", "ckl"):
        raise ValueError("svm feature measure must be rd_kl, rd_bh or ckl")
    estimator = estimator or EstimatorConfig(kind="kde-gauss")
    f_pos, f_neg = fit_class_densities(train, estimator, derive_seed(seed, "class-fit"))
    feats = np.empty((len(train.bags), train.dimension))
    labels = np.empty(len(train.bags), dtype=bool)
    for i, bag in enumerate(train.bags):
        bag_models = _fit_bag_models(bag, estimator, derive_seed(seed, "train-bag", bag.id))
        feats[i] = _divergence_features(
            bag_models, f_pos, f_neg, spec, measure, derive_seed(seed, "train-bag", bag.id)
        )
        if bag.label is None:
            raise ValueError(f"bag {bag.id!r} is unlabelled")
        labels[i] = bag.label == Label.POS
    if not np.all(np.isfinite(feats)):
        raise AssertionError("divergence features must be finite after clipping")
    mean = feats.mean(axis=0)
    sd = feats.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    w, b = train_linear_svm((feats - mean) / sd, labels, svm_config, derive_seed(seed, "svm"))
    return ClassModel(
        method="svm_divs",
        dimension=train.dimension,
        spec=spec,
        estimator=estimator,
        f_pos=f_pos,
        f_neg=f_neg,
        threshold=0.0,
        svm_weights=w,
        svm_bias=b,
        svm_measure=measure,
        scaler_mean=mean,
        scaler_sd=sd,
        train_bag_ids=tuple(b_.id for b_ in train.bags),
    )


def fit_classifier(
    train: Dataset,
    method: str,
    estimator: EstimatorConfig,
    spec: DivergenceSpec,
    seed,
    threshold: str | float = "loocv",
    svm: SvmConfig | None = None,
    svm_measure: str = "ckl",
) -> ClassModel:
    """Fit any method on a labelled training set, including its threshold."""
    method = normalize_method(method)
    if method == "svm_divs":
        return fit_svm_on_divergences(
            train, svm_measure, spec, svm or SvmConfig(), seed, estimator=estimator
        )
    f_pos, f_neg = fit_class_densities(train, estimator, derive_seed(seed, "class-fit"))
    train_bags = ()
    if method.startswith("b2b"):
        fitted = []
        for bag in train.bags:
            if bag.label is None:
                raise ValueError(f"bag {bag.id!r} is unlabelled")
            fitted.append(
                (bag.label, _fit_bag_models(bag, estimator, derive_seed(seed, "b2b", bag.id)))
            )
        train_bags = tuple(fitted)
    model = ClassModel(
        method=method,
        dimension=train.dimension,
        spec=spec,
        estimator=estimator,
        f_pos=f_pos,
        f_neg=f_neg,
        train_bags=train_bags,
        train_bag_ids=tuple(b.id for b in train.bags),
    )
    train_scores = [
        score_bag(model, bag, derive_seed(seed, "train-score", bag.id)) for bag in train.bags
    ]
    train_labels = [bag.label for bag in train.bags]
    t = choose_threshold(train_scores, train_labels, threshold)
    return replace(model, threshold=t)


# --------------------------------------------------------------------------
# evaluation primitives


def _as_pos_mask(labels) -> np.ndarray:
    return np.array([lab == Label.POS or lab == 1 or lab is True for lab in labels], dtype=bool)


def auc(scores, labels) -> float:
    """Exact Mann-Whitney AUC under the lower-score-means-positive convention.

    Equals P(score_pos < score_neg) + 0.5 * P(tie) over all positive/negative
    pairs, computed by mid-rank sums.
    """
    scores = np.asarray(scores, dtype=float)
    pos = _as_pos_mask(labels)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    mid = (ends - counts + 1 + ends) / 2.0
    ranks = mid[inverse]
    u_neg = float(ranks[~pos].sum()) - n_neg * (n_neg + 1) / 2.0
    return u_neg / (n_pos * n_neg)


def roc_points(scores, labels) -> tuple[tuple[float, float], ...]:
    """ROC staircase swept over every unique score, from (0,0) to (1,1)."""
    scores = np.asarray(scores, dtype=float)
    pos = _as_pos_mask(labels)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    points = [(0.0, 0.0)]
    for v in np.unique(scores):
        fpr = float((scores[~pos] <= v).sum()) / n_neg
        tpr = float((scores[pos] <= v).sum()) / n_pos
        points.append((fpr, tpr))
    return tuple(points)


def _trapezoid(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y1 + y0) / 2.0
    return area


def accuracy_at(scores, labels, threshold: float) -> float:
    scores = np.asarray(scores, dtype=float)
    pos = _as_pos_mask(labels)
    pred_pos = scores < threshold
    return float((pred_pos == pos).mean())


def choose_threshold(train_scores, train_labels, policy="loocv") -> float:
    """Threshold from training scores: LOOCV over midpoint candidates, or fixed.

    Candidates are the midpoints of consecutive sorted unique scores; the
    one maximizing leave-one-out accuracy wins, ties broken toward the
    median candidate (then toward the smaller one).
    """
    if isinstance(policy, (int, float)) and not isinstance(policy, bool):
        return float(policy)
    if isinstance(policy, str) and policy.lower().startswith("fixed:"):
        return float(policy.split(":", 1)[1])
    if not (isinstance(policy, str) and policy.lower() == "loocv"):
        raise ValueError(f"threshold policy must be 'loocv', 'fixed:<t>' or a number, got {policy!r}")
    scores = np.asarray(train_scores, dtype=float)
    if scores.size < 2:
        raise ValueError("LOOCV threshold needs at least 2 training bags")
    uniq = np.unique(scores)
    if uniq.size == 1:
        return float(uniq[0])
    candidates = (uniq[:-1] + uniq[1:]) / 2.0
    accs = np.array([accuracy_at(scores, train_labels, t) for t in candidates])
    best = np.flatnonzero(accs == accs.max())
    median_idx = (len(candidates) - 1) / 2.0
    winner = best[np.lexsort((best, np.abs(best - median_idx)))][0]
    return float(candidates[winner])


# --------------------------------------------------------------------------
# evaluation reports


@dataclass(frozen=True)
class EvalReport:
    """Per-run classification outputs: scores, ROC/AUC, folds, seeds."""

    scores: tuple[float, ...]
    labels: tuple[int, ...]
    predictions: tuple[int, ...]
    auc: float
    accuracy: float
    roc: tuple[tuple[float, float], ...]
    folds: dict
    seed: object
    accuracy_sd: float = 0.0
    fold_accuracies: tuple[float, ...] = ()
    auc_fold_mean: float | None = None
    bag_ids: tuple[str, ...] = ()
    provenance: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        pts = self.roc
        if pts[0] != (0.0, 0.0) or pts[-1] != (1.0, 1.0):
            raise ValueError("ROC must start at (0,0) and end at (1,1)")
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x1 < x0 or y1 < y0:
                raise ValueError("ROC coordinates must be non-decreasing")
        if abs(_trapezoid(pts) - self.auc) > 1e-12:
            raise ValueError("AUC does not match the trapezoidal ROC area")

    def to_json_dict(self) -> dict:
        return {
            "scores": list(self.scores),
            "labels": list(self.labels),
            "predictions": list(self.predictions),
            "auc": self.auc,
            "accuracy": self.accuracy,
            "accuracy_sd": self.accuracy_sd,
            "fold_accuracies": list(self.fold_accuracies),
            "auc_fold_mean": self.auc_fold_mean,
            "roc": [list(p) for p in self.roc],
            "folds": {str(k): v for k, v in self.folds.items()},
            "bag_ids": list(self.bag_ids),
            "seed": str(self.seed),
        }


def _make_report(records, folds, provenance, fold_acc, fold_auc, seed) -> EvalReport:
    scores = [r[1] for r in records]
    labels = [int(r[2]) for r in records]
    preds = [int(r[3]) for r in records]
    pooled_auc = auc(scores, labels)
    roc = roc_points(scores, labels)
    acc = float(np.mean(fold_acc))
    acc_sd = float(np.std(fold_acc, ddof=1)) if len(fold_acc) > 1 else 0.0
    return EvalReport(
        scores=tuple(scores),
        labels=tuple(labels),
        predictions=tuple(preds),
        auc=pooled_auc,
        accuracy=acc,
        roc=roc,
        folds=folds,
        seed=seed,
        accuracy_sd=acc_sd,
        fold_accuracies=tuple(fold_acc),
        auc_fold_mean=(float(np.mean(fold_auc)) if fold_auc else None),
        bag_ids=tuple(r[0] for r in records),
        provenance=provenance,
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything cross_validate needs to fit and score within folds."""

    method: str = "ckl"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    spec: DivergenceSpec = field(default_factory=DivergenceSpec)
    pca_components: int | None = None
    threshold: str | float = "loocv"
    svm: SvmConfig = field(default_factory=SvmConfig)
    svm_measure: str = "ckl"

    def __post_init__(self):
        object.__setattr__(self, "method", normalize_method(self.method))


def _stratified_folds(bags, k_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per bag, stratified by label, bags never split.

    Bags of each class are dealt round-robin over folds with one counter
    running across classes, so each class spreads as evenly as possible and
    k equal to the bag count yields leave-one-bag-out.
    """
    assignment = np.empty(len(bags), dtype=int)
    counter = 0
    for label in (Label.POS, Label.NEG):
        idx = np.array([i for i, b in enumerate(bags) if b.label == label])
        perm = rng.permutation(len(idx))
        for i in idx[perm]:
            assignment[i] = counter % k_folds
            counter += 1
    return assignment


def cross_validate(
    data: Dataset, k_folds: int, pipeline: PipelineConfig, repeats: int = 1, seed=0
) -> EvalReport:
    """Repeated stratified k-fold CV at the bag level.

    PCA (when configured) and class densities are fitted inside training
    folds only; the report records the training bag ids behind every fold's
    fits so the hygiene is checkable. Accuracy is aggregated over
    repeats x folds; AUC pools all test-fold scores.
    """
    bags = data.bags
    if any(b.label is None for b in bags):
        raise ValueError("cross-validation needs every bag labelled")
    if k_folds < 2 or k_folds > len(bags):
        raise ValueError("k_folds must lie in [2, number of bags]")
    for label in (Label.POS, Label.NEG):
        if len(data.with_label(label)) < 2:
            raise ValueError(f"need at least 2 {label.name} bags for stratified folds")
    records = []
    folds_map: dict[int, dict[str, int]] = {}
    provenance: dict[tuple[int, int], tuple[str, ...]] = {}
    fold_acc: list[float] = []
    fold_auc: list[float] = []
    for rep in range(repeats):
        rng = np.random.default_rng(derive_seed(seed, "folds", rep))
        assignment = _stratified_folds(bags, k_folds, rng)
        folds_map[rep] = {b.id: int(f) for b, f in zip(bags, assignment)}
        for fold in range(k_folds):
            train_bags = [b for b, f in zip(bags, assignment) if f != fold]
            test_bags = [b for b, f in zip(bags, assignment) if f == fold]
            if not test_bags:
                continue
            train_ds = data.replace_bags(train_bags)
            test_ds = data.replace_bags(test_bags)
            if not train_ds.with_label(Label.POS) or not train_ds.with_label(Label.NEG):
                raise ValueError(f"fold {fold} leaves a training split missing a class")
            if pipeline.pca_components is not None:
                transform = fit_pca(train_ds, pipeline.pca_components)
                train_ds = apply_pca(transform, train_ds)
                test_ds = apply_pca(transform, test_ds)
            model = fit_classifier(
                train_ds,
                pipeline.method,
                pipeline.estimator,
                pipeline.spec,
                derive_seed(seed, "fit", rep, fold),
                threshold=pipeline.threshold,
                svm=pipeline.svm,
                svm_measure=pipeline.svm_measure,
            )
            provenance[(rep, fold)] = tuple(sorted(b.id for b in train_bags))
            fold_scores, fold_labels = [], []
            for bag in test_ds.bags:
                s = score_bag(model, bag, derive_seed(seed, "score", rep, fold, bag.id))
                pred = s < model.threshold
                records.append((bag.id, s, int(bag.label), int(pred)))
                fold_scores.append(s)
                fold_labels.append(bag.label)
            fold_acc.append(accuracy_at(fold_scores, fold_labels, model.threshold))
            if any(l == Label.POS for l in fold_labels) and any(
                l == Label.NEG for l in fold_labels
            ):
                fold_auc.append(auc(fold_scores, fold_labels))
    return _make_report(records, folds_map, provenance, fold_acc, fold_auc, seed)


def evaluate_holdout(
    train: Dataset, test: Dataset, pipeline: PipelineConfig, seed=0
) -> EvalReport:
    """Fit on the training set, score a labelled held-out test set."""
    if any(b.label is None for b in test.bags):
        raise ValueError("holdout evaluation needs labelled test bags")
    if pipeline.pca_components is not None:
        transform = fit_pca(train, pipeline.pca_components)
        train = apply_pca(transform, train)
        test = apply_pca(transform, test)
    model = fit_classifier(
        train,
        pipeline.method,
        pipeline.estimator,
        pipeline.spec,
        derive_seed(seed, "fit"),
        threshold=pipeline.threshold,
        svm=pipeline.svm,
        svm_measure=pipeline.svm_measure,
    )
    records = []
    scores, labels = [], []
    for bag in test.bags:
        s = score_bag(model, bag, derive_seed(seed, "score", bag.id))
        pred = s < model.threshold
        records.append((bag.id, s, int(bag.label), int(pred)))
        scores.append(s)
        labels.append(bag.label)
    provenance = {(0, 0): tuple(sorted(b.id for b in train.bags))}
    acc = [accuracy_at(scores, labels, model.threshold)]
    return _make_report(records, {0: {b.id: 0 for b in test.bags}}, provenance, acc, [], seed)


# --------------------------------------------------------------------------
# simulation study harness


@dataclass(frozen=True)
class StudyCell:
    pos: int
    neg: int
    mean_auc: dict[str, float]  # method -> mean AUC over repetitions, in [0, 1]
    rep_aucs: dict[str, tuple[float, ...]] = field(repr=False, default=None)


@dataclass(frozen=True)
class StudyResult:
    scenario: str
    repetitions: int
    methods: tuple[str, ...]
    cells: tuple[StudyCell, ...]
    seed: object

    def cell(self, pos: int, neg: int) -> StudyCell:
        for c in self.cells:
            if c.pos == pos and c.neg == neg:
                return c
        raise KeyError(f"no cell pos={pos}, neg={neg}")

    def mean_auc100(self, pos: int, neg: int, method: str) -> float:
        return 100.0 * self.cell(pos, neg).mean_auc[normalize_method(method)]


def _run_study_cell(
    config: SimConfig,
    pos: int,
    neg: int,
    repetitions: int,
    methods: tuple[str, ...],
    seed,
    estimator: EstimatorConfig,
    spec: DivergenceSpec,
    n_test: int,
) -> StudyCell:
    rep_aucs: dict[str, list[float]] = {m: [] for m in methods}
    need_b2b = any(m.startswith("b2b") for m in methods)
    for rep in range(repetitions):
        cell_seed = derive_seed(seed, config.scenario, pos, neg, rep)
        train, test = sample_experiment(config, pos, neg, n_test, cell_seed)
        f_pos, f_neg = fit_class_densities(train, estimator, derive_seed(cell_seed, "class-fit"))
        train_bags = ()
        if need_b2b:
            train_bags = tuple(
                (b.label, _fit_bag_models(b, estimator, derive_seed(cell_seed, "b2b", b.id)))
                for b in train.bags
            )
        scores: dict[str, list[float]] = {m: [] for m in methods}
        labels = []
        for i, bag in enumerate(test.bags):
            bag_seed = derive_seed(cell_seed, "bag", bag.id)
            bag_models = _fit_bag_models(bag, estimator, bag_seed)
            bundle = _bundle_scores(
                bag_models, f_pos, f_neg, spec, bag_seed, methods, train_bags=train_bags
            )
            for m in methods:
                scores[m].append(bundle[m])
            labels.append(bag.label)
        for m in methods:
            rep_aucs[m].append(auc(scores[m], labels))
    return StudyCell(
        pos=pos,
        neg=neg,
        mean_auc={m: float(np.mean(rep_aucs[m])) for m in methods},
        rep_aucs={m: tuple(v) for m, v in rep_aucs.items()},
    )


def run_sim_study(
    config: SimConfig,
    grid=TABLE1_GRID,
    repetitions: int = 50,
    methods=("rd_bh", "rd_kl", "ckl"),
    seed=0,
    estimator: EstimatorConfig | None = None,
    spec: DivergenceSpec | None = None,
    n_test: int = 100,
    max_workers: int = 1,
) -> StudyResult:
    """Mean test AUC per (pos, neg) training-size cell and method.

    Every repetition draws a fresh train/test experiment, fits the class
    densities, scores the test bags under all requested methods at once,
    and records one AUC per method. Deterministic given the seed; cells
    may be computed in parallel without changing the result.
    """
    methods = tuple(normalize_method(m) for m in methods)
    if "svm_divs" in methods:
        raise ValueError("the simulation study compares score-based methods; svm_divs is not one")
    estimator = estimator or EstimatorConfig()
    spec = spec or DivergenceSpec()
    args = [
        (config, pos, neg, repetitions, methods, seed, estimator, spec, n_test)
        for pos, neg in grid
    ]
    if max_workers > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            cells = tuple(pool.map(_run_study_cell_packed, args))
    else:
        cells = tuple(_run_study_cell(*a) for a in args)
    return StudyResult(
        scenario=config.scenario,
        repetitions=repetitions,
        methods=methods,
        cells=cells,
        seed=seed,
    )


def _run_study_cell_packed(packed) -> StudyCell:
    return _run_study_cell(*packed)
