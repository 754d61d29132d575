"""Grammar for temporal down-sampling configurations.

A spec string combines up to three mechanisms, joined by ``+``:

    stack{k,s}                 frame stacking: k frames per row, stride s
    conv-stride{2,2}           one conv layer per listed time stride
    pooling{1,2}-width{2,2}    max pooling after the named LSTM layers

Example: ``conv-stride{2}+pooling{2,4}-width{2,2}`` down-samples time by 8.
The overall rate is the product of the stack stride, every conv stride and
every pooling width.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import FormatError


@dataclass
class DownsampleSpec:
    """Parsed down-sampling plan; layer indices are 1-based and increasing."""

    stack: tuple | None = None        # (k frames, stride s)
    conv_strides: list = field(default_factory=list)
    pooling: list = field(default_factory=list)   # (after-LSTM-layer, width)

    @property
    def rate(self):
        """Overall output/input length ratio as an exact fraction."""
        denom = 1
        if self.stack:
            denom *= self.stack[1]
        for s in self.conv_strides:
            denom *= s
        for _, w in self.pooling:
            denom *= w
        return Fraction(1, denom)

    def output_length(self, T):
        """Composed ceil rule: each stage rounds its own length up."""
        u = T
        if self.stack:
            u = -(-u // self.stack[1])
        for s in self.conv_strides:
            u = -(-u // s)
        for _, w in self.pooling:
            u = -(-u // w)
        return u


def _ints(body, what, position):
    if body.strip() == "":
        return []
    try:
        return [int(tok) for tok in body.replace(" ", "").split(",")]
    except ValueError:
        raise FormatError(f"bad integer list in {what} at position {position}") from None


def parse_downsample_spec(text):
    """Parse a down-sampling spec string into a DownsampleSpec."""
    spec = DownsampleSpec()
    text = text.strip()
    if not text:
        return spec
    pos = 0
    for part in text.split("+"):
        token = part.strip()
        # pooling{...}-width{...} is one token with two brace groups
        if token.startswith("pooling{"):
            m = re.match(r"^pooling\{([0-9, ]*)\}-width\{([0-9, ]*)\}$", token)
            if not m:
                raise FormatError(f"malformed pooling token at position {pos}: {token!r}")
            pool_layers = _ints(m.group(1), "pooling{}", pos)
            pool_widths = _ints(m.group(2), "width{}", pos)
            if len(pool_layers) != len(pool_widths):
                raise FormatError(
                    f"pooling{{}} lists {len(pool_layers)} layers but width{{}} lists "
                    f"{len(pool_widths)} widths")
            if any(l < 1 for l in pool_layers) or any(w < 1 for w in pool_widths):
                raise FormatError("pooling layer indices and widths must be >= 1")
            if pool_layers != sorted(set(pool_layers)):
                raise FormatError("pooling layer indices must be strictly increasing")
            spec.pooling = list(zip(pool_layers, pool_widths))
        elif token.startswith("conv-stride{"):
            m = re.match(r"^conv-stride\{([0-9, ]*)\}$", token)
            if not m:
                raise FormatError(f"malformed conv-stride token at position {pos}: {token!r}")
            strides = _ints(m.group(1), "conv-stride{}", pos)
            if any(s < 1 for s in strides):
                raise FormatError("conv strides must be >= 1")
            spec.conv_strides = strides
        elif token.startswith("stack{"):
            m = re.match(r"^stack\{([0-9, ]*)\}$", token)
            if not m:
                raise FormatError(f"malformed stack token at position {pos}: {token!r}")
            nums = _ints(m.group(1), "stack{}", pos)
            if len(nums) != 2 or nums[0] < 1 or nums[1] < 1:
                raise FormatError("stack{} takes exactly k,s with k >= 1 and s >= 1")
            spec.stack = (nums[0], nums[1])
        else:
            raise FormatError(f"unknown token at position {pos}: {token!r}")
        pos += len(part) + 1
    return spec
