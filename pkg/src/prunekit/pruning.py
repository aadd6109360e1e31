"""Weight pruning: saliency criteria, deletion schedules, mask bookkeeping,
importance-based weight revision, second-order criteria and the iterative
prune-retrain loop.

Five criteria are supported:

* ``magnitude``  - |w|
* ``affine``     - |w| summed against the layer's input activations
* ``dictionary`` - same statistic as affine, plus a post-prune revision that
  redistributes the strongest pruned importance onto kept weights
* ``obd``        - diagonal second-order saliency h_qq * w^2 / 2
* ``obs``        - full layer Hessian saliency w^2 / (2 [H^-1]_qq) with a
  compensating update to surviving weights

Second-order terms use the Gauss-Newton style estimate built from per-frame
loss gradients (sum of squared first derivatives), which is positive
semidefinite by construction. Biases are never pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nn import (
    DenseNet,
    FrameDataset,
    ShapeError,
    TrainConfig,
    cross_entropy,
    forward_batch,
    frame_accuracy,
    per_frame_deltas,
    train_sgd,
)

CRITERIA = ("magnitude", "affine", "dictionary", "obd", "obs")

# full-Hessian criterion refuses layers bigger than this (dense P x P matrix)
OBS_MAX_LAYER_WEIGHTS = 4096


class NumericalError(RuntimeError):
    """A linear-algebra step failed (e.g. non-positive-definite Hessian)."""


# ---------------------------------------------------------------------------
# masks and saliency maps


class PruneMask:
    """Per-layer 0/1 matrices matching the network's weight shapes.

    Entries are monotone: once an entry drops to 0 it never returns to 1.
    """

    def __init__(self, layers: list[np.ndarray], generation: int = 0):
        self.layers = [np.asarray(m, dtype=np.uint8) for m in layers]
        for m in self.layers:
            if not np.isin(m, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
        self.generation = generation

    @classmethod
    def ones_like(cls, net: DenseNet) -> "PruneMask":
        return cls([np.ones_like(l.weights, dtype=np.uint8) for l in net.layers])

    @property
    def remain_counts(self) -> list[int]:
        return [int(m.sum()) for m in self.layers]

    @property
    def total_weights(self) -> int:
        return sum(m.size for m in self.layers)

    def remain_rate(self) -> float:
        return sum(self.remain_counts) / self.total_weights

    def layer_remain_rates(self) -> list[float]:
        return [int(m.sum()) / m.size for m in self.layers]

    def copy(self) -> "PruneMask":
        return PruneMask([m.copy() for m in self.layers], self.generation)


@dataclass
class SaliencyMap:
    """Per-weight importance scores, one array per layer, plus the criterion
    that produced them.

    Scored entries are finite and >= 0; layers a single-layer criterion did
    not score carry +inf so they can never rank lowest.
    """

    scores: list[np.ndarray]
    criterion: str

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        for s in self.scores:
            if np.isnan(s).any() or (s < 0.0).any():
                raise ValueError("saliency scores must be non-negative and not NaN")


@dataclass
class HessianInfo:
    """Second-order bookkeeping.

    For obd: `diagonals` holds per-layer h_qq arrays (same shapes as weights).
    For obs: `layer_index`, the damped `hessian` over that layer's row-major
    flattened weights, its `inverse`, and the damping actually applied.
    """

    diagonals: list[np.ndarray] | None = None
    layer_index: int | None = None
    hessian: np.ndarray | None = None
    inverse: np.ndarray | None = None
    damping: float | None = None


# ---------------------------------------------------------------------------
# deletion schedules (the four options)


@dataclass(frozen=True)
class ProportionOfRemaining:
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")


@dataclass(frozen=True)
class FixedCount:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Threshold:
    t: float

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError("t must be >= 0")


@dataclass(frozen=True)
class ThresholdCapped:
    t: float
    max_fraction: float

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError("t must be >= 0")
        if not 0.0 < self.max_fraction <= 1.0:
            raise ValueError("max_fraction must be in (0, 1]")


ScheduleVariant = ProportionOfRemaining | FixedCount | Threshold | ThresholdCapped


@dataclass(frozen=True)
class Schedule:
    """A deletion rule plus how many retraining epochs run between prunes.

    iterations_between_prunes=None means "use the retrain config's epochs".
    """

    variant: ScheduleVariant
    iterations_between_prunes: int | None = None

    def __post_init__(self):
        if self.iterations_between_prunes is not None and self.iterations_between_prunes < 0:
            raise ValueError("iterations_between_prunes must be >= 0")


@dataclass
class PruneRunConfig:
    criterion: str
    schedule: Schedule
    target_remain_rate: float
    retrain: TrainConfig
    post_prune_lr_boost: float = 2.0
    scope: str = "per_layer"  # or "global"
    revision_mode: str = "literal"  # or "multiplicative" (dictionary only)
    obs_damping: float | None = None
    max_generations: int = 100

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if not 0.0 < self.target_remain_rate < 1.0:
            raise ValueError("target_remain_rate must be in (0, 1)")
        if self.post_prune_lr_boost < 1.0:
            raise ValueError("post_prune_lr_boost must be >= 1")
        if self.scope not in ("per_layer", "global"):
            raise ValueError("scope must be 'per_layer' or 'global'")
        if self.revision_mode not in ("literal", "multiplicative"):
            raise ValueError("revision_mode must be 'literal' or 'multiplicative'")


# ---------------------------------------------------------------------------
# first-order saliency criteria


def saliency_magnitude(net: DenseNet) -> SaliencyMap:
    """score[j, i] = |w_ji| per layer."""
    return SaliencyMap([np.abs(l.weights) for l in net.layers], "magnitude")


def _input_abs_sums(net: DenseNet, data: FrameDataset) -> list[np.ndarray]:
    """Per layer, sum over frames of |input activation| for each input node."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    _, post = forward_batch(net, data.features)
    sums = [np.abs(data.features).sum(axis=0)]
    for a in post[:-1]:
        sums.append(np.abs(a).sum(axis=0))
    return sums


def saliency_affine(net: DenseNet, data: FrameDataset) -> SaliencyMap:
    """Importance of edge (i -> j) in layer l: sum over frames of
    |w_ji * a_i|, where a_i is node i's activation feeding layer l.

    The sum factors as |w_ji| * sum_k |a_i(k)|, which is how it is computed.
    """
    sums = _input_abs_sums(net, data)
    scores = [np.abs(l.weights) * s[None, :] for l, s in zip(net.layers, sums)]
    return SaliencyMap(scores, "affine")


def saliency_dictionary(net: DenseNet, data: FrameDataset) -> SaliencyMap:
    """Same statistic as saliency_affine, tagged so the revision step runs
    after pruning."""
    sal = saliency_affine(net, data)
    return SaliencyMap(sal.scores, "dictionary")


# ---------------------------------------------------------------------------
# selection and application


def _check_shapes(saliency: SaliencyMap, mask: PruneMask):
    if len(saliency.scores) != len(mask.layers):
        raise ShapeError("saliency and mask layer counts differ")
    for s, m in zip(saliency.scores, mask.layers):
        if s.shape != m.shape:
            raise ShapeError("saliency and mask shapes differ")


def _rank_entries(scores: np.ndarray, mask: np.ndarray, layer: int):
    """Unmasked entries as (layer, row, col) sorted by (score, layer, row, col)."""
    rows, cols = np.nonzero(mask)
    vals = scores[rows, cols]
    order = np.lexsort((cols, rows, np.full_like(rows, layer), vals))
    return [(layer, int(rows[i]), int(cols[i])) for i in order], vals[order]


def _take_for_schedule(variant: ScheduleVariant, entries, vals, remain: int):
    if remain == 0:
        return []
    if isinstance(variant, ProportionOfRemaining):
        return entries[: int(np.floor(variant.p * remain))]
    if isinstance(variant, FixedCount):
        return entries[: min(variant.k, remain)]
    if isinstance(variant, Threshold):
        return [e for e, v in zip(entries, vals) if v < variant.t]
    if isinstance(variant, ThresholdCapped):
        below = [e for e, v in zip(entries, vals) if v < variant.t]
        cap = int(np.floor(variant.max_fraction * remain))
        return below[:cap]
    raise TypeError(f"unknown schedule variant {variant!r}")


def select_for_pruning(
    saliency: SaliencyMap,
    mask: PruneMask,
    schedule: Schedule,
    scope: str = "per_layer",
) -> list[tuple[int, int, int]]:
    """Pick (layer, row, col) entries to delete, lowest saliency first.

    Only unmasked entries are candidates. With scope="per_layer" the schedule
    formula applies to each layer's remaining count; with scope="global" it
    applies once to the pooled entries. Ties break by (layer, row, col).
    """
    _check_shapes(saliency, mask)
    variant = schedule.variant
    if scope == "per_layer":
        selected = []
        for k, (s, m) in enumerate(zip(saliency.scores, mask.layers)):
            entries, vals = _rank_entries(s, m, k)
            selected.extend(_take_for_schedule(variant, entries, vals, len(entries)))
        return selected
    if scope == "global":
        entries, vals = [], []
        for k, (s, m) in enumerate(zip(saliency.scores, mask.layers)):
            e, v = _rank_entries(s, m, k)
            entries.extend(e)
            vals.extend(v)
        order = sorted(range(len(entries)), key=lambda i: (vals[i], entries[i]))
        entries = [entries[i] for i in order]
        vals = np.asarray([vals[i] for i in order])
        return _take_for_schedule(variant, entries, vals, len(entries))
    raise ValueError("scope must be 'per_layer' or 'global'")


def apply_pruning(net: DenseNet, mask: PruneMask, selection) -> PruneMask:
    """Zero the selected weights and drop them from the mask, in place."""
    for layer, row, col in selection:
        if mask.layers[layer][row, col] == 0:
            raise ValueError(f"entry ({layer}, {row}, {col}) is already pruned")
        mask.layers[layer][row, col] = 0
        net.layers[layer].weights[row, col] = 0.0
    mask.generation += 1
    return mask


def dictionary_revise(
    net: DenseNet, mask: PruneMask, saliency: SaliencyMap, mode: str = "literal"
) -> DenseNet:
    """Redistribute pruned importance onto each node's kept incoming weights.

    For node j (a row of a layer's weight matrix) that has at least one pruned
    and one kept incoming weight, with revision importance I_re = the maximum
    saliency among its pruned weights:

      literal:        w <- w + |w| * I_re / (N_kept * I_w)
      multiplicative: w <- w * (1 + I_re / (N_kept * I_w))

    The literal form follows the published update verbatim (sign(w) * w = |w|,
    which shrinks negative weights toward zero). Kept weights with zero
    importance are left unchanged, as are pruned weights and rows without any
    pruned input.
    """
    if mode not in ("literal", "multiplicative"):
        raise ValueError("mode must be 'literal' or 'multiplicative'")
    if saliency.criterion != "dictionary":
        raise ValueError("revision expects a dictionary-criterion saliency map")
    _check_shapes(saliency, mask)
    for li, layer in enumerate(net.layers):
        m = mask.layers[li]
        s = saliency.scores[li]
        w = layer.weights
        for row in range(w.shape[0]):
            kept = m[row] == 1
            pruned = ~kept
            n_kept = int(kept.sum())
            if n_kept == 0 or not pruned.any():
                continue
            i_re = float(s[row][pruned].max())
            live = kept & (s[row] > 0.0)
            if not live.any():
                continue
            ratio = i_re / (n_kept * s[row][live])
            if mode == "literal":
                w[row, live] += np.abs(w[row, live]) * ratio
            else:
                w[row, live] *= 1.0 + ratio
    return net


# ---------------------------------------------------------------------------
# second-order criteria


def obd_scores(diag: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """OBD saliency for given diagonal curvature estimates: h * w^2 / 2."""
    return 0.5 * np.asarray(diag) * np.asarray(weights) ** 2


def obs_scores(hessian: np.ndarray, weights: np.ndarray):
    """OBS saliencies and inverse for an explicit (already damped) Hessian.

    Returns (scores, inverse) with scores_q = w_q^2 / (2 [H^-1]_qq). Raises
    NumericalError when the matrix is not positive definite.
    """
    H = np.asarray(hessian, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if H.shape != (w.size, w.size):
        raise ShapeError("hessian shape does not match weight count")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("hessian is not positive definite") from exc
    inv = np.linalg.inv(H)
    return w**2 / (2.0 * np.diag(inv)), inv


def obs_delta(q: int, weights: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Compensating update when weight q is deleted:
    delta = -(w_q / [H^-1]_qq) * H^-1 e_q."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    return -(w[q] / inverse[q, q]) * inverse[:, q]


def _squared_grad_diagonals(net: DenseNet, data: FrameDataset) -> list[np.ndarray]:
    """Per-layer sum over frames of squared per-frame weight gradients."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    out = []
    for delta, a_prev in per_frame_deltas(net, data):
        out.append((delta**2).T @ (a_prev**2))
    return out


def saliency_obd(net: DenseNet, data: FrameDataset):
    """Diagonal second-order saliency s_q = h_qq * w_q^2 / 2, with h_qq the
    summed squared per-frame loss gradient. Returns (SaliencyMap, HessianInfo)."""
    diags = _squared_grad_diagonals(net, data)
    scores = [obd_scores(h, l.weights) for h, l in zip(diags, net.layers)]
    return SaliencyMap(scores, "obd"), HessianInfo(diagonals=diags)


def layer_hessian(net: DenseNet, data: FrameDataset, layer_index: int, chunk: int = 256):
    """Undamped Gauss-Newton Hessian over one layer's row-major flattened
    weights: H = sum_k g_k g_k^T with g_k the frame-k gradient."""
    layer = net.layers[layer_index]
    p = layer.weights.size
    if p > OBS_MAX_LAYER_WEIGHTS:
        raise ValueError(
            f"layer {layer_index} has {p} weights; the full-Hessian criterion "
            f"is limited to {OBS_MAX_LAYER_WEIGHTS} (desk-scale guard)"
        )
    delta, a_prev = per_frame_deltas(net, data)[layer_index]
    H = np.zeros((p, p))
    n = delta.shape[0]
    for start in range(0, n, chunk):
        d = delta[start : start + chunk]
        a = a_prev[start : start + chunk]
        G = (d[:, :, None] * a[:, None, :]).reshape(d.shape[0], p)
        H += G.T @ G
    return H


def saliency_obs(
    net: DenseNet, data: FrameDataset, layer_index: int, damping: float | None = None
):
    """Full-Hessian saliency for one layer.

    damping=None applies the default 1e-4 * mean(diag H); an explicit value is
    used as the absolute Tikhonov term. Other layers' scores are +inf so a
    selection over the whole map can only pick from the designated layer.
    Returns (SaliencyMap, HessianInfo).
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    H = layer_hessian(net, data, layer_index)
    mean_diag = float(np.diag(H).mean())
    lam = 1e-4 * mean_diag if damping is None else float(damping)
    if lam <= 0.0:
        raise NumericalError(f"damping resolved to {lam}; must be > 0")
    H_damped = H + lam * np.eye(H.shape[0])
    flat_scores, inv = obs_scores(H_damped, net.layers[layer_index].weights)
    scores = [np.full_like(l.weights, np.inf) for l in net.layers]
    scores[layer_index] = flat_scores.reshape(net.layers[layer_index].weights.shape)
    return SaliencyMap(scores, "obs"), HessianInfo(
        layer_index=layer_index, hessian=H_damped, inverse=inv, damping=lam
    )


def obs_apply_update(
    net: DenseNet, mask: PruneMask, q: int, info: HessianInfo
) -> tuple[DenseNet, PruneMask]:
    """Delete flat weight q of info.layer_index and spread the compensating
    update over that layer's surviving weights.

    Update components that would land on masked entries are discarded so mask
    monotonicity is preserved.
    """
    if info.layer_index is None or info.inverse is None:
        raise ValueError("HessianInfo does not carry a full-Hessian layer")
    li = info.layer_index
    layer = net.layers[li]
    flat_mask = mask.layers[li].ravel()
    if flat_mask[q] == 0:
        raise ValueError(f"weight {q} of layer {li} is already pruned")
    w = layer.weights.ravel()
    delta = obs_delta(q, w, info.inverse)
    delta = delta * flat_mask
    w += delta
    w[q] = 0.0
    flat_mask[q] = 0
    layer.weights = w.reshape(layer.weights.shape)
    mask.layers[li] = flat_mask.reshape(mask.layers[li].shape)
    return net, mask


# ---------------------------------------------------------------------------
# the prune-retrain loop


@dataclass
class GenerationRecord:
    generation: int
    remain_rate: float
    loss: float
    frame_acc: float


@dataclass
class PruneHistory:
    records: list[GenerationRecord] = field(default_factory=list)
    status: str = "target_reached"


def _compute_saliency(net, data, cfg, mask):
    if cfg.criterion == "magnitude":
        return saliency_magnitude(net), None
    if cfg.criterion == "affine":
        return saliency_affine(net, data), None
    if cfg.criterion == "dictionary":
        return saliency_dictionary(net, data), None
    if cfg.criterion == "obd":
        return saliency_obd(net, data)
    if cfg.criterion == "obs":
        # one combined map over all layers, each with its own damped Hessian
        scores = []
        infos = []
        for li in range(len(net.layers)):
            sal_l, info_l = saliency_obs(net, data, li, cfg.obs_damping)
            scores.append(sal_l.scores[li])
            infos.append(info_l)
        return SaliencyMap(scores, "obs"), infos
    raise ValueError(f"unknown criterion {cfg.criterion!r}")


def prune_retrain_loop(
    net: DenseNet,
    data: FrameDataset,
    cfg: PruneRunConfig,
    eval_data: FrameDataset | None = None,
    mask: PruneMask | None = None,
):
    """Alternate saliency -> select -> delete -> retrain until the global
    remain rate drops to the target.

    Retraining runs at cfg.retrain.learning_rate * post_prune_lr_boost for
    schedule.iterations_between_prunes epochs (retrain.epochs when unset),
    with a fresh per-generation shuffle seed. History records remain rate,
    training loss and frame accuracy (on eval_data when provided) after each
    generation; a schedule that stops making progress ends the loop with
    status "target_not_reached".

    Returns (net, mask, history). The network and mask are updated in place.
    """
    if mask is None:
        mask = PruneMask.ones_like(net)
    measure = eval_data if eval_data is not None else data
    history = PruneHistory()
    history.records.append(
        GenerationRecord(0, mask.remain_rate(), cross_entropy(net, data), frame_accuracy(net, measure))
    )
    epochs = cfg.schedule.iterations_between_prunes
    if epochs is None:
        epochs = cfg.retrain.epochs
    generation = 0
    while mask.remain_rate() > cfg.target_remain_rate:
        if generation >= cfg.max_generations:
            history.status = "target_not_reached"
            break
        generation += 1
        saliency, extra = _compute_saliency(net, data, cfg, mask)
        selection = select_for_pruning(saliency, mask, cfg.schedule, cfg.scope)
        if not selection:
            history.status = "target_not_reached"
            break
        if cfg.criterion == "obs":
            infos = extra
            for layer, row, col in selection:
                q = row * net.layers[layer].in_dim + col
                obs_apply_update(net, mask, q, infos[layer])
            mask.generation += 1
        else:
            apply_pruning(net, mask, selection)
            if cfg.criterion == "dictionary":
                dictionary_revise(net, mask, saliency, cfg.revision_mode)
        retrain_cfg = replace(
            cfg.retrain,
            learning_rate=cfg.retrain.learning_rate * cfg.post_prune_lr_boost,
            epochs=epochs,
            seed=cfg.retrain.seed + generation,
        )
        train_sgd(net, data, retrain_cfg, mask)
        history.records.append(
            GenerationRecord(
                generation,
                mask.remain_rate(),
                cross_entropy(net, data),
                frame_accuracy(net, measure),
            )
        )
    return net, mask, history
