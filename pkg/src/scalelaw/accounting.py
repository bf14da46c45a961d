"""Model-size accounting and compute/size/token conversions.

Three ways of counting model size are supported:

* ``LINEAR``: parameters in every linear layer, including the output head.
* ``EFFECTIVE``: ``LINEAR`` plus ``seq_len * width * depth``, so that
  ``6 * N * D`` also covers the attention operation.
* ``KAPLAN_NO_HEAD``: ``LINEAR`` minus the ``width * vocab`` head parameters.
"""

from __future__ import annotations

import enum

from .ingest import ModelArch

CHINCHILLA_FLOPS = 5.88e23

# (depth, width) of the 16-model search grid, 5M to 901M parameters
CANONICAL_SHAPES = (
    (3, 96), (4, 128), (5, 160), (6, 224), (8, 288), (9, 320), (10, 384), (12, 480),
    (14, 576), (15, 640), (18, 704), (21, 832), (23, 1024), (26, 1120), (26, 1312), (30, 1504),
)


class SizeScheme(str, enum.Enum):
    LINEAR = "linear"
    EFFECTIVE = "effective"
    KAPLAN_NO_HEAD = "kaplan"

    @classmethod
    def parse(cls, value) -> "SizeScheme":
        if isinstance(value, cls):
            return value
        aliases = {"n": "linear", "eff": "effective", "n_eff": "effective",
                   "kaplannohead": "kaplan", "kaplan_no_head": "kaplan", "n_kaplan": "kaplan"}
        key = str(value).strip().lower()
        return cls(aliases.get(key, key))


def ffn_dim(d: int) -> int:
    """Feed-forward width used by the SwiGLU blocks: ``256 * floor((255 + floor(8d/3)) / 256)``."""
    if d < 1:
        raise ValueError("width must be positive")
    return 256 * ((255 + (8 * d) // 3) // 256)


def model_size(arch: ModelArch, scheme=SizeScheme.LINEAR) -> float:
    scheme = SizeScheme.parse(scheme)
    d, l = arch.width, arch.depth
    n = float((3 * ffn_dim(d) + 4 * d) * d * l + d * arch.vocab)
    if scheme is SizeScheme.LINEAR:
        return n
    if scheme is SizeScheme.EFFECTIVE:
        return n + arch.seq_len * d * l
    n -= d * arch.vocab
    if n <= 0:
        raise ValueError(f"degenerate architecture {arch}: head-free size is {n}")
    return n


def train_flops(n_params, tokens):
    return 6 * n_params * tokens


def tokens_for_budget(n_params, flops):
    return flops / (6 * n_params)


def tokens_per_param(n_params, flops):
    """Token-to-parameter ratio ``C / (6 N^2)`` of training ``N`` parameters on budget ``C``."""
    return flops / (6 * n_params * n_params)


def canonical_model_grid(vocab: int = 50432, seq_len: int = 2048, heads: int = 4) -> list[ModelArch]:
    return [ModelArch(depth=l, width=d, vocab=vocab, seq_len=seq_len, heads=heads)
            for l, d in CANONICAL_SHAPES]


def grid_table(archs=None) -> list[dict]:
    """Rows of (depth, width, N under each scheme) for ``archs`` (canonical grid by default)."""
    archs = canonical_model_grid() if archs is None else archs
    return [
        {"depth": a.depth, "width": a.width,
         "N_linear": model_size(a, SizeScheme.LINEAR),
         "N_eff": model_size(a, SizeScheme.EFFECTIVE),
         "N_kaplan": model_size(a, SizeScheme.KAPLAN_NO_HEAD)}
        for a in archs
    ]
