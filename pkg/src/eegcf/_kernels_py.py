"""Pure-numpy candidate scan; fallback for the compiled ``_kernels``.

Both backends score a single-swap candidate (q, d) as the softmax
probability of ``target`` under logits ``z + (A[d] - B[q]) / hw``, written
as ``1 / sum_c exp(v_c - v_target)``.
"""
import numpy as np


def target_prob_matrix(B, A, z, target, hw):
    v = z[None, None, :] + (A[None, :, :] - B[:, None, :]) / hw
    with np.errstate(over="ignore"):
        return 1.0 / np.exp(v - v[:, :, target:target + 1]).sum(axis=2)


def best_candidate(B, A, z, target, hw, edited):
    """Best (q, d) over unedited query rows; first maximum in row-major order."""
    free = np.flatnonzero(np.asarray(edited) == 0)
    if free.size == 0:
        return -1, -1, float("nan")
    scores = target_prob_matrix(B[free], A, z, target, hw)
    flat = int(np.argmax(scores))
    qi, d = divmod(flat, scores.shape[1])
    return int(free[qi]), int(d), float(scores[qi, d])
