"""Low-rank layer compression.

An m x n weight matrix is replaced by m x r and r x n factors (a linear
bottleneck), with r chosen so the factor parameter count r*(m+n) fits a
remain-rate budget of the original m*n. Factors are trained on the one-hot
column-reconstruction objective; a truncated-SVD oracle provides the
Eckart-Young optimal error for validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import DenseNet, FrameDataset, Layer, TrainConfig, train_sgd


def rank_for_remain_rate(m: int, n: int, rate: float) -> int:
    """Largest rank whose factor cost r*(m+n) fits rate*m*n, never below 1.

    r = max(1, floor(rate * m * n / (m + n))), additionally capped at
    min(m, n) so the factorization is never artificially over-parameterized.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError("rate must be in (0, 1]")
    if m < 1 or n < 1:
        raise ValueError("matrix dims must be positive")
    r = int(np.floor(rate * m * n / (m + n)))
    return max(1, min(r, min(m, n)))


def factor_param_ratio(m: int, n: int, r: int) -> float:
    """Achieved parameter ratio r*(m+n) / (m*n)."""
    return r * (m + n) / (m * n)


@dataclass
class FactorPair:
    """left (m x r) @ right (r x n) approximates the source matrix."""

    left: np.ndarray
    right: np.ndarray
    source_layer: int = -1

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        self.right = np.asarray(self.right, dtype=np.float64)
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.left.shape[1] != self.right.shape[0]:
            raise ValueError("factor inner dimensions disagree")
        m, r = self.left.shape
        n = self.right.shape[1]
        if r > min(m, n):
            raise ValueError("rank exceeds min(m, n)")

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    def product(self) -> np.ndarray:
        return self.left @ self.right


@dataclass
class DecompTrainConfig:
    learning_rate: float = 0.05
    epochs: int = 4000
    seed: int = 0
    tolerance: float = 1e-10  # on relative change of the Frobenius error

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.tolerance <= 0:
            raise ValueError("config values must be positive")


@dataclass
class DecompResult:
    factors: FactorPair
    frob_error: float
    converged: bool
    epochs_run: int


def frobenius_error(M: np.ndarray, pair: FactorPair) -> float:
    return float(np.linalg.norm(M - pair.product(), "fro"))


def decompose_train(M: np.ndarray, r: int, cfg: DecompTrainConfig) -> DecompResult:
    """Fit factors by gradient descent on the one-hot reconstruction network.

    Each one-hot input selects a column of M as the target, so the summed
    column losses equal ||M - left@right||_F^2; a full gradient step over all
    one-hot inputs is taken per epoch. The step size adapts: it halves when
    the error rises and creeps back up while progress is monotone.

    Converged means the relative error change fell below cfg.tolerance; on a
    non-converged run the best factors seen are still returned.
    """
    M = np.asarray(M, dtype=np.float64)
    m, n = M.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for {m}x{n}")
    norm = float(np.linalg.norm(M, "fro"))
    if norm == 0.0:
        pair = FactorPair(np.zeros((m, r)), np.zeros((r, n)))
        return DecompResult(pair, 0.0, True, 0)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    scale = np.sqrt(1.0 / r)
    A = rng.normal(0.0, scale, size=(m, r))
    B = rng.normal(0.0, scale, size=(r, n))

    # normalize the step by the objective's local curvature scale so one
    # learning rate works across weight-matrix magnitudes
    def step_size(lr):
        curv = max(np.linalg.norm(A, 2) ** 2, np.linalg.norm(B, 2) ** 2, 1e-12)
        return lr / curv

    lr = cfg.learning_rate
    R = A @ B - M
    err = float(np.linalg.norm(R, "fro"))
    best = (err, A.copy(), B.copy())
    epochs_run = 0
    converged = False
    for epoch in range(cfg.epochs):
        epochs_run = epoch + 1
        eta = step_size(lr)
        gA = 2.0 * R @ B.T
        gB = 2.0 * A.T @ R
        A_new = A - eta * gA
        B_new = B - eta * gB
        R_new = A_new @ B_new - M
        err_new = float(np.linalg.norm(R_new, "fro"))
        if err_new > err:
            lr *= 0.5
            if lr < 1e-12 * cfg.learning_rate:
                break
            continue
        lr = min(lr * 1.05, cfg.learning_rate)
        rel_change = (err - err_new) / max(err, 1e-300)
        A, B, R, err = A_new, B_new, R_new, err_new
        if err < best[0]:
            best = (err, A.copy(), B.copy())
        if rel_change < cfg.tolerance:
            converged = True
            break
    err, A, B = best
    return DecompResult(FactorPair(A, B), err, converged, epochs_run)


def svd_oracle(M: np.ndarray, r: int, max_iters: int = 1000, tol: float = 1e-14):
    """Best rank-r factors by orthogonal (subspace) iteration on M^T M.

    The iterated subspace is oversampled by a few columns so near-degenerate
    gaps at position r do not stall convergence; the top-r directions are
    extracted exactly from the converged subspace. Returns
    (FactorPair, optimal_error) where the error is the Eckart-Young minimum
    ||M - A@B||_F. Factors are left = U_r * diag(sigma_r), right = V_r^T,
    singular values in non-increasing order.
    """
    M = np.asarray(M, dtype=np.float64)
    m, n = M.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for {m}x{n}")
    transposed = m < n
    W = M.T if transposed else M  # iterate on the smaller side
    rows, cols = W.shape
    q = min(r + 4, min(m, n))

    rng = np.random.Generator(np.random.PCG64(0))
    Q, _ = np.linalg.qr(rng.normal(size=(cols, q)))
    prev_sigma = None
    for _ in range(max_iters):
        Z = W.T @ (W @ Q)
        Q, _ = np.linalg.qr(Z)
        sigma = np.linalg.norm(W @ Q, axis=0)
        if prev_sigma is not None and np.allclose(sigma, prev_sigma, rtol=tol, atol=tol):
            break
        prev_sigma = sigma

    # finish with an exact eigen-decomposition of the small projected matrix
    B_proj = W @ Q
    evals, vecs = np.linalg.eigh(B_proj.T @ B_proj)
    order = np.argsort(evals)[::-1][:r]
    evals = np.maximum(evals[order], 0.0)
    vecs = vecs[:, order]
    sigma = np.sqrt(evals)
    V = Q @ vecs  # right singular vectors of W (cols x r)
    U = np.zeros((rows, r))
    for i in range(r):
        if sigma[i] > 1e-300:
            U[:, i] = (W @ V[:, i]) / sigma[i]

    if transposed:
        U, V = V, U
    left = U * sigma[None, :]
    right = V.T
    pair = FactorPair(left, right)
    return pair, frobenius_error(M, pair)


def splice_factors(net: DenseNet, layer_index: int, pair: FactorPair) -> DenseNet:
    """Replace a layer by its bottleneck: right factor first (identity
    activation, zero bias), then left factor carrying the original bias and
    activation. Returns a new network."""
    layer = net.layers[layer_index]
    m, n = layer.weights.shape
    if pair.left.shape[0] != m or pair.right.shape[1] != n:
        raise ValueError(
            f"factors {pair.left.shape}x{pair.right.shape} do not fit layer "
            f"{layer_index} of shape {(m, n)}"
        )
    bottleneck = Layer(pair.right.copy(), np.zeros(pair.rank), "identity")
    head = Layer(pair.left.copy(), layer.bias.copy(), layer.activation)
    layers = [l.copy() for l in net.layers]
    layers[layer_index : layer_index + 1] = [bottleneck, head]
    return DenseNet(layers, net.input_dim)


@dataclass
class LayerDecompRecord:
    layer: int
    m: int
    n: int
    r: int
    frob_error: float
    oracle_error: float
    params_before: int
    params_after: int
    converged: bool = True


@dataclass
class DecompReport:
    records: list[LayerDecompRecord] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0

    @property
    def param_ratio(self) -> float:
        return self.params_after / self.params_before if self.params_before else 1.0


def decompose_network(
    net: DenseNet,
    rate: float,
    cfg: DecompTrainConfig,
    fine_tune: tuple[TrainConfig, FrameDataset] | None = None,
    skip_output_layer: bool = True,
):
    """Replace every eligible layer with trained rank-budgeted factors.

    The final layer is skipped by default (tiny output dims make factorization
    pointless). Per-layer training seeds derive from cfg.seed so runs are
    reproducible. Optional fine-tuning retrains the spliced network on task
    loss. Returns (new_net, DecompReport).
    """
    from .nn import param_count  # local import to keep module deps one-way

    report = DecompReport(params_before=param_count(net))
    eligible = list(range(len(net.layers) - 1 if skip_output_layer else len(net.layers)))
    result = net.copy()
    # splice back-to-front so earlier indices stay valid
    for li in reversed(eligible):
        W = result.layers[li].weights
        m, n = W.shape
        r = rank_for_remain_rate(m, n, rate)
        layer_cfg = DecompTrainConfig(
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            seed=cfg.seed + li,
            tolerance=cfg.tolerance,
        )
        trained = decompose_train(W, r, layer_cfg)
        _, oracle_err = svd_oracle(W, r)
        trained.factors.source_layer = li
        result = splice_factors(result, li, trained.factors)
        report.records.append(
            LayerDecompRecord(
                layer=li,
                m=m,
                n=n,
                r=r,
                frob_error=trained.frob_error,
                oracle_error=oracle_err,
                params_before=m * n + m,
                params_after=r * (m + n) + r + m,
                converged=trained.converged,
            )
        )
    report.records.sort(key=lambda rec: rec.layer)
    report.params_after = param_count(result)
    if fine_tune is not None:
        tune_cfg, tune_data = fine_tune
        train_sgd(result, tune_data, tune_cfg)
    return result, report
