"""Merging of separately encoded prompt embeddings.

The two prompts are encoded independently so their tokens never attend to
each other; the merge is pure row splicing, no re-encoding or rescaling.
"""

from __future__ import annotations

import numpy as np

from .errors import EmbeddingOverflowError
from .types import EmbeddingMatrix


def coalesce(e_p: EmbeddingMatrix, e_w: EmbeddingMatrix) -> EmbeddingMatrix:
    """Splice two independently encoded prompts into one embedding matrix.

    Keeps the start token plus the base prompt's actual tokens, then appends
    the object prompt's rows from its first actual token onward, truncating
    the pad tail so the result fits the encoder window.
    """
    n, d = e_p.window, e_p.dim
    if e_w.window != n or e_w.dim != d:
        raise ValueError(
            f"embedding shapes differ: {e_p.data.shape} vs {e_w.data.shape}"
        )
    n_p, n_w = e_p.actual_tokens, e_w.actual_tokens
    if n_p + n_w + 2 > n:
        raise EmbeddingOverflowError(
            f"coalesced prompt needs {n_p + n_w + 2} rows but window is {n}"
        )
    head = e_p.data[: n_p + 1]          # start token + base prompt tokens
    tail = e_w.data[1:]                 # object tokens, its end token, pads
    merged = np.concatenate([head, tail], axis=0)[:n]
    return EmbeddingMatrix(merged, actual_tokens=n_p + n_w)


def object_token_index(n_p: int, object_word_offset: int, window: int = None) -> int:
    """Row index of the added object's token inside the coalesced matrix.

    One start-token row is retained, then the base prompt's tokens, then the
    object prompt's tokens, so the object noun lands at 1 + n_p + offset.
    """
    if n_p < 0 or object_word_offset < 0:
        raise ValueError("token counts must be non-negative")
    k = 1 + n_p + object_word_offset
    if window is not None and k >= window:
        raise EmbeddingOverflowError(
            f"object token index {k} beyond encoder window {window}"
        )
    return k
