"""
Implicit-feedback alternating least squares.

Objective over every (user, item) cell:
    sum_ui c_ui (p_ui - u_u . v_i)^2 + reg (|U|^2 + |V|^2)
with p_ui = 1 and c_ui = 1 + alpha * w_ui on stored entries, p_ui = 0 and
c_ui = 1 elsewhere. Each half-sweep solves the row normal equations exactly,
so the objective never increases.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import NumericalError, UsageError
from ..public.schemas import MFConfig
from ..services.file_handler import read_checkpoint, write_checkpoint

logger = logging.getLogger("ilm.cf")

USER_EMBEDDINGS = "user_emb"
ITEM_EMBEDDINGS = "item_emb"


@dataclass(frozen=True)
class InteractionMatrix:
    num_users: int
    num_items: int
    matrix: sp.csr_matrix

    @classmethod
    def from_triples(cls, users: Sequence[int], items: Sequence[int], weights: Optional[Sequence[float]],
                     num_users: int, num_items: int) -> "InteractionMatrix":
        """Duplicate (user, item) entries are summed; zero weights are dropped."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        weights = np.ones(len(users)) if weights is None else np.asarray(weights, dtype=np.float64)
        if not (len(users) == len(items) == len(weights)):
            raise UsageError("users, items and weights must have equal length")
        if len(users):
            if users.min() < 0 or users.max() >= num_users:
                raise UsageError(f"user index out of range [0, {num_users})")
            if items.min() < 0 or items.max() >= num_items:
                raise UsageError(f"item index out of range [0, {num_items})")
            if not np.all(np.isfinite(weights)) or weights.min() < 0:
                raise UsageError("confidence weights must be finite and >= 0")
        matrix = sp.coo_matrix((weights, (users, items)), shape=(num_users, num_items)).tocsr()
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        matrix.sort_indices()
        return cls(num_users=num_users, num_items=num_items, matrix=matrix)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def transpose(self) -> sp.csr_matrix:
        transposed = self.matrix.T.tocsr()
        transposed.sort_indices()
        return transposed


@dataclass
class FactorModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    regularization: float
    alpha: float
    objective_trace: List[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(self.user_factors.shape[1])

    @classmethod
    def initialize(cls, num_users: int, num_items: int, rank: int, regularization: float, alpha: float,
                   rng: np.random.Generator, init_std: float = 0.01) -> "FactorModel":
        if rank < 1:
            raise UsageError("factor rank must be >= 1")
        if regularization <= 0:
            raise UsageError("regularization must be > 0")
        return cls(
            user_factors=rng.normal(0.0, init_std, size=(num_users, rank)),
            item_factors=rng.normal(0.0, init_std, size=(num_items, rank)),
            regularization=regularization,
            alpha=alpha,
        )


def _solve_row(this_row: int, matrix: sp.csr_matrix, other: np.ndarray, gram: np.ndarray, reg_eye: np.ndarray,
               alpha: float) -> np.ndarray:
    start, end = matrix.indptr[this_row], matrix.indptr[this_row + 1]
    cols = matrix.indices[start:end]
    confidence = 1.0 + alpha * matrix.data[start:end]
    observed = other[cols]
    lhs = gram + (observed.T * (confidence - 1.0)) @ observed + reg_eye
    rhs = observed.T @ confidence
    try:
        factor = cho_factor(lhs, lower=True, check_finite=False)
    except LinAlgError:
        raise NumericalError(f"normal equations for row {this_row} are not positive definite")
    return cho_solve(factor, rhs, check_finite=False)


def solve_half(matrix: sp.csr_matrix, other: np.ndarray, regularization: float, alpha: float,
               workers: int = 1) -> np.ndarray:
    """Solve every row of `matrix` (rows x other-rows) against fixed `other` factors."""
    rank = other.shape[1]
    gram = other.T @ other
    reg_eye = regularization * np.eye(rank)
    rows = range(matrix.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(lambda r: _solve_row(r, matrix, other, gram, reg_eye, alpha), rows))
    else:
        solved = [_solve_row(r, matrix, other, gram, reg_eye, alpha) for r in rows]
    if not solved:
        return np.zeros((0, rank))
    return np.vstack(solved)


def objective(model: FactorModel, interactions: InteractionMatrix) -> float:
    U, V = model.user_factors, model.item_factors
    # all cells as if unobserved: sum (u.v)^2 = trace(U^T U V^T V)
    dense_term = float(np.sum((U.T @ U) * (V.T @ V)))
    coo = interactions.matrix.tocoo()
    predictions = np.einsum("ij,ij->i", U[coo.row], V[coo.col])
    confidence = 1.0 + model.alpha * coo.data
    observed_term = float(np.sum(confidence * (1.0 - predictions) ** 2 - predictions ** 2))
    penalty = model.regularization * float(np.sum(U * U) + np.sum(V * V))
    return dense_term + observed_term + penalty


def ials_sweep(model: FactorModel, interactions: InteractionMatrix, workers: int = 1) -> FactorModel:
    """One alternating pass: users with items fixed, then items with users fixed."""
    if model.user_factors.shape[0] != interactions.num_users or model.item_factors.shape[0] != interactions.num_items:
        raise UsageError("factor shapes do not match the interaction matrix")
    users = solve_half(interactions.matrix, model.item_factors, model.regularization, model.alpha, workers)
    items = solve_half(interactions.transpose(), users, model.regularization, model.alpha, workers)
    if not (np.all(np.isfinite(users)) and np.all(np.isfinite(items))):
        raise NumericalError("non-finite factors after ALS sweep")
    return replace(model, user_factors=users, item_factors=items, objective_trace=list(model.objective_trace))


def train_mf(interactions: InteractionMatrix, config: MFConfig, rng: np.random.Generator,
             show_progress: bool = False) -> FactorModel:
    if interactions.nnz == 0:
        raise UsageError("cannot factorize an empty interaction set")
    model = FactorModel.initialize(interactions.num_users, interactions.num_items, config.rank,
                                   config.regularization, config.alpha, rng, config.init_std)
    trace = [objective(model, interactions)]
    logger.info(f"iALS start: {interactions.num_users} users, {interactions.num_items} items, "
                f"{interactions.nnz} entries, rank={config.rank}, objective={trace[0]:.6f}")

    sweeps = range(config.sweeps)
    if show_progress:
        from tqdm import tqdm
        sweeps = tqdm(sweeps, desc="iALS", unit="sweep")
    for sweep in sweeps:
        model = ials_sweep(model, interactions, workers=config.workers)
        current = objective(model, interactions)
        previous = trace[-1]
        trace.append(current)
        improvement = (previous - current) / max(abs(previous), 1e-12)
        logger.debug(f"iALS sweep {sweep + 1}: objective={current:.6f} rel_improvement={improvement:.3e}")
        if improvement < config.tolerance:
            break
    model.objective_trace = trace
    logger.info(f"iALS finished after {len(trace) - 1} sweeps, objective={trace[-1]:.6f}")
    return model


def export_embeddings(model: FactorModel, path, metadata: Optional[dict] = None) -> str:
    arrays = {USER_EMBEDDINGS: model.user_factors, ITEM_EMBEDDINGS: model.item_factors}
    meta = dict(metadata or {})
    meta.update({"kind": "cf-embeddings", "rank": model.rank, "objective_trace": model.objective_trace})
    return write_checkpoint(path, arrays, meta)


def load_embeddings(path, expected_hash: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    checkpoint = read_checkpoint(path, expected_hash)
    return checkpoint[USER_EMBEDDINGS], checkpoint[ITEM_EMBEDDINGS]
