"""Composite training objective: masked L1 offsets + weighted L2 heatmap.

The two L1 terms are mean absolute error over ground-truth center pixels
only (mean over persons and channels); the heatmap term is mean squared
error over all pixels, scaled by alpha. Whole-map L1 would be dominated
by the zero padding outside centers, hence the masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"alpha must be nonnegative, got {self.alpha}")


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean |pred - target| over mask-selected pixels, all channels."""
    ch = pred.shape[0]
    hw = pred.shape[1] * pred.shape[2]
    idx = np.flatnonzero(mask.reshape(-1))
    if idx.size == 0:
        if np.any(target != 0):
            raise ContractError("masked_l1: empty mask with nonzero targets")
        return T.tsum(pred) * 0.0
    cols = T.transpose(T.reshape(pred, (ch, hw)), (1, 0))  # (H*W, ch)
    sel = T.take_rows(cols, idx)
    tgt = target.reshape(ch, hw).T[idx]
    return T.tmean(T.absolute(sel - Tensor(tgt)))


def total_loss(pred: tuple[Tensor, Tensor, Tensor],
               target: tuple[np.ndarray, np.ndarray, np.ndarray],
               weights: LossWeights,
               mask: np.ndarray | tuple[np.ndarray, np.ndarray]
               ) -> tuple[Tensor, dict[str, float]]:
    """Scalar objective plus per-term values for logging.

    pred/target order: (heatmap, 3D offsets, 2D offsets). ``mask`` is a
    center-pixel mask, or a pair (mask for 3D map, mask for 2D map) when
    the two offset maps live at different resolutions.
    """
    pred_hm, pred_o3, pred_o2 = pred
    tgt_hm, tgt_o3, tgt_o2 = target
    mask3d, mask2d = mask if isinstance(mask, tuple) else (mask, mask)
    if pred_hm.shape != tgt_hm.shape:
        raise ContractError(f"heatmap shapes differ: {pred_hm.shape} vs {tgt_hm.shape}")
    l1_3d = masked_l1(pred_o3, tgt_o3, mask3d)
    l1_2d = masked_l1(pred_o2, tgt_o2, mask2d)
    diff = pred_hm - Tensor(tgt_hm)
    l2_hm = T.tmean(diff * diff)
    total = l1_3d + l1_2d + T.scale(l2_hm, weights.alpha)
    terms = {"l1_3d": l1_3d.item(), "l1_2d": l1_2d.item(),
             "l2_hm": l2_hm.item(), "total": total.item()}
    return total, terms
