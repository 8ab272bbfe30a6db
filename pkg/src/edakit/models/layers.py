"""Layer building blocks: parameter containers over the engine ops.

Each layer knows its forward pass and its closed-form complexity: parameter
count from tensor sizes, multiply-accumulates from the standard per-op
formulas (conv: K*C_in*C_out*L_out/groups; linear: in*out; attention:
QKV/score/context terms). Normalizations and activations contribute no MACs.
"""

import numpy as np

from ..engine import Parameter, Tensor, ops
from ..errors import ConfigError

LEAKY_SLOPE = 0.01
GN_EPS = 1e-5


def gn_groups(channels):
    """8 groups when the channel count allows, else a single group."""
    return 8 if channels >= 8 and channels % 8 == 0 else 1


class Layer:
    """Named container of parameters and sub-layers."""

    def __init__(self, name):
        self.name = name
        self._params = []
        self._children = []

    def param(self, suffix, data):
        p = Parameter(f"{self.name}.{suffix}", np.asarray(data, dtype=np.float64))
        self._params.append(p)
        return p

    def child(self, layer):
        self._children.append(layer)
        return layer

    def parameters(self):
        for p in self._params:
            yield p
        for c in self._children:
            yield from c.parameters()

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv1d(Layer):
    def __init__(self, name, c_in, c_out, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        super().__init__(name)
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = (c_in // groups) * kernel
        self.weight = self.param("weight", he_normal(rng, (c_out, c_in // groups, kernel), fan_in))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ops.conv1d(
            x, self.weight.tensor,
            bias=self.bias.tensor if self.bias else None,
            stride=self.stride, padding=self.padding, groups=self.groups,
        )

    def out_length(self, l_in):
        return (l_in + 2 * self.padding - self.kernel) // self.stride + 1

    def macs(self, l_in):
        return self.kernel * self.c_in * self.c_out * self.out_length(l_in) // self.groups


class DSConv1d(Layer):
    """Depthwise conv (no bias) followed by a pointwise 1x1 conv (bias)."""

    def __init__(self, name, c_in, c_out, kernel, rng, stride=1, padding=0):
        super().__init__(name)
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding = stride, padding
        self.dw = self.param("dw_weight", he_normal(rng, (c_in, 1, kernel), kernel))
        self.pw = self.param("pw_weight", he_normal(rng, (c_out, c_in, 1), c_in))
        self.bias = self.param("pw_bias", np.zeros(c_out))

    def forward(self, x):
        return ops.depthwise_separable_conv1d(
            x, self.dw.tensor, self.pw.tensor, pw_bias=self.bias.tensor,
            stride=self.stride, padding=self.padding,
        )

    def out_length(self, l_in):
        return (l_in + 2 * self.padding - self.kernel) // self.stride + 1

    def macs(self, l_in):
        l_out = self.out_length(l_in)
        return self.kernel * self.c_in * l_out + self.c_in * self.c_out * l_out


class ConvTranspose1d(Layer):
    def __init__(self, name, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True):
        super().__init__(name)
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding = stride, padding
        self.weight = self.param("weight", he_normal(rng, (c_in, c_out, kernel), c_in * kernel))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ops.conv_transpose1d(
            x, self.weight.tensor,
            bias=self.bias.tensor if self.bias else None,
            stride=self.stride, padding=self.padding,
        )

    def out_length(self, l_in):
        return (l_in - 1) * self.stride - 2 * self.padding + self.kernel

    def macs(self, l_in):
        return self.kernel * self.c_in * self.c_out * l_in


class GroupNorm(Layer):
    def __init__(self, name, channels, groups=None):
        super().__init__(name)
        self.channels = channels
        self.groups = gn_groups(channels) if groups is None else groups
        self.gamma = self.param("gamma", np.ones((channels, 1)))
        self.beta = self.param("beta", np.zeros((channels, 1)))

    def forward(self, x):
        return ops.group_norm(x, self.groups, self.gamma.tensor, self.beta.tensor, eps=GN_EPS)

    def macs(self, l_in):
        return 0


class ChannelLayerNorm(Layer):
    """Layer norm across channels, per sequence position."""

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels
        self.gamma = self.param("gamma", np.ones((channels, 1)))
        self.beta = self.param("beta", np.zeros((channels, 1)))

    def forward(self, x):
        return ops.layer_norm(x, self.gamma.tensor, self.beta.tensor, axes=(-2,), eps=GN_EPS)

    def macs(self, l_in):
        return 0


class Film(Layer):
    """Scalar-conditioned per-channel affine modulation.

    Scale comes from the raw segment mean, shift from its std, both through
    single-input FC layers. Zero init plus the +1 offset makes a fresh layer
    the exact identity.
    """

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels
        self.w_gamma = self.param("w_gamma", np.zeros(channels))
        self.b_gamma = self.param("b_gamma", np.zeros(channels))
        self.w_beta = self.param("w_beta", np.zeros(channels))
        self.b_beta = self.param("b_beta", np.zeros(channels))

    def forward(self, x, mu, sigma):
        c = self.channels
        if x.data.ndim == 3:
            n = x.data.shape[0]
            mu_col = Tensor(np.asarray(mu, dtype=np.float64).reshape(n, 1))
            sg_col = Tensor(np.asarray(sigma, dtype=np.float64).reshape(n, 1))
            wg = ops.reshape(self.w_gamma.tensor, (1, c))
            bg = ops.reshape(self.b_gamma.tensor, (1, c))
            wb = ops.reshape(self.w_beta.tensor, (1, c))
            bb = ops.reshape(self.b_beta.tensor, (1, c))
            gamma = ops.reshape(ops.shift(ops.add(ops.mul(wg, mu_col), bg), 1.0), (n, c, 1))
            beta = ops.reshape(ops.add(ops.mul(wb, sg_col), bb), (n, c, 1))
        else:
            gamma = ops.reshape(
                ops.shift(ops.add(ops.scale(self.w_gamma.tensor, float(mu)), self.b_gamma.tensor), 1.0),
                (c, 1),
            )
            beta = ops.reshape(
                ops.add(ops.scale(self.w_beta.tensor, float(sigma)), self.b_beta.tensor),
                (c, 1),
            )
        return ops.add(ops.mul(x, gamma), beta)

    def macs(self, l_in):
        return 2 * self.channels


class MultiHeadAttention(Layer):
    def __init__(self, name, channels, heads, rng):
        super().__init__(name)
        if channels % heads != 0:
            raise ConfigError(f"{channels} channels not divisible by {heads} heads")
        self.channels, self.heads = channels, heads
        std = 1.0 / np.sqrt(channels)
        for proj in ("q", "k", "v", "o"):
            setattr(self, f"w{proj}", self.param(f"w{proj}", rng.normal(0, std, (channels, channels))))
            setattr(self, f"b{proj}", self.param(f"b{proj}", np.zeros(channels)))
        # residual branch starts as a no-op
        self.wo.data = np.zeros_like(self.wo.data)

    def forward(self, x):
        return ops.multi_head_attention(
            x, self.heads,
            self.wq.tensor, self.bq.tensor, self.wk.tensor, self.bk.tensor,
            self.wv.tensor, self.bv.tensor, self.wo.tensor, self.bo.tensor,
        )

    def macs(self, l_in):
        c = self.channels
        return 4 * c * c * l_in + 2 * l_in * l_in * c


class ConvFFN(Layer):
    """conv -> GELU -> conv feed-forward over the sequence."""

    def __init__(self, name, channels, expansion, kernel, rng):
        super().__init__(name)
        hidden = channels * expansion
        pad = kernel // 2
        self.expand = self.child(Conv1d(f"{name}.expand", channels, hidden, kernel, rng, padding=pad))
        self.project = self.child(Conv1d(f"{name}.project", hidden, channels, kernel, rng, padding=pad))

    def forward(self, x):
        return self.project.forward(ops.gelu(self.expand.forward(x)))

    def macs(self, l_in):
        return self.expand.macs(l_in) + self.project.macs(l_in)
