# /src/airsq/prediction/layers.py

"""Forward/backward pairs for the few layer types the model needs. Float64, one example at a time."""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ W + b


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dW, db)."""
    return W @ dy, np.outer(x, dy), dy.copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


def masked_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Softmax over all entries; entries where `mask` is False get probability exactly 0."""
    z = np.asarray(logits, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p))


# -------------------------
# 3x3 convolution, zero padding 1
# -------------------------
def conv_output_size(size: int, stride: int = 2) -> int:
    return (size + 2 - 3) // stride + 1


def conv2d_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, stride: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    x: (H, W, Cin); W: (Cin, 3, 3, Cout); b: (Cout,).
    Returns the (Ho, Wo, Cout) output and the im2col matrix kept for backward.
    """
    h, w, cin = x.shape
    ho, wo = conv_output_size(h, stride), conv_output_size(w, stride)
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(xp, (3, 3), axis=(0, 1))[::stride, ::stride][:ho, :wo]
    cols = windows.reshape(ho * wo, cin * 9)
    out = cols @ W.reshape(cin * 9, -1) + b
    return out.reshape(ho, wo, -1), cols


def conv2d_backward(
    dy: np.ndarray,
    cols: np.ndarray,
    W: np.ndarray,
    input_shape: Tuple[int, int, int],
    stride: int = 2,
    need_dx: bool = True,
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Returns (dx or None, dW, db)."""
    ho, wo, cout = dy.shape
    cin = W.shape[0]
    dy2 = dy.reshape(ho * wo, cout)
    dW = (cols.T @ dy2).reshape(W.shape)
    db = dy2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    h, w, _ = input_shape
    dcols = (dy2 @ W.reshape(cin * 9, cout).T).reshape(ho, wo, cin, 3, 3)
    dxp = np.zeros((h + 2, w + 2, cin))
    for kh in range(3):
        for kw in range(3):
            dxp[kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :] += dcols[:, :, :, kh, kw]
    return dxp[1:-1, 1:-1, :], dW, db


def avg_pool_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(0, 1))


def avg_pool_backward(dy: np.ndarray, input_shape: Tuple[int, int, int]) -> np.ndarray:
    h, w, _ = input_shape
    return np.broadcast_to(dy / (h * w), input_shape).copy()
