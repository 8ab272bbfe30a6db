"""Teacher and student denoising networks.

Both are 1-D U-Nets over [1, 512] maps: five stride-2 residual encoder
blocks with FiLM conditioning, a mirrored decoder with transposed-conv
upsampling and skip concatenation, and a final 1x1 projection. The teacher
adds an attention bottleneck at the 16-sample resolution; the student halves
every channel width, swaps encoder convolutions for depthwise-separable
ones, and drops the bottleneck.
"""

from dataclasses import dataclass, field

import numpy as np

from ..engine import Tensor, ops
from ..errors import ConfigError, InferenceError
from ..signal_io import SEGMENT_LEN, denormalize, normalize
from .layers import (
    LEAKY_SLOPE,
    ChannelLayerNorm,
    Conv1d,
    ConvFFN,
    ConvTranspose1d,
    DSConv1d,
    Film,
    GroupNorm,
    Layer,
    MultiHeadAttention,
)


@dataclass
class TeacherConfig:
    encoder_channels: tuple = (16, 32, 64, 128, 256)
    kernel: int = 3
    stride_per_block: int = 2
    heads: int = 4
    ffn_expansion: int = 2
    ffn_kernel: int = 3
    input_length: int = SEGMENT_LEN

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if len(self.encoder_channels) != 5:
            raise ConfigError("encoder needs exactly 5 blocks")
        if self.input_length % 2 ** len(self.encoder_channels) != 0:
            raise ConfigError(
                f"input length {self.input_length} not divisible by 2^5"
            )
        if self.encoder_channels[-1] % self.heads != 0:
            raise ConfigError("bottleneck channels must divide attention heads")


@dataclass
class StudentConfig:
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    keep_film: bool = True
    ds_fusion: bool = False  # decoder fusion convs stay plain; encoder is DS

    @property
    def encoder_channels(self):
        for c in self.teacher.encoder_channels:
            if c % 2:
                raise ConfigError(f"teacher channel {c} cannot be halved")
        return tuple(c // 2 for c in self.teacher.encoder_channels)


class EncoderBlock(Layer):
    """conv -> GN -> FiLM -> LeakyReLU -> conv -> GN with a strided 1x1 skip."""

    def __init__(self, name, c_in, c_out, kernel, stride, rng, separable, with_film):
        super().__init__(name)
        pad = kernel // 2
        conv = DSConv1d if separable else Conv1d
        self.conv1 = self.child(conv(f"{name}.conv1", c_in, c_out, kernel, rng, stride=stride, padding=pad))
        self.gn1 = self.child(GroupNorm(f"{name}.gn1", c_out))
        self.film = self.child(Film(f"{name}.film", c_out)) if with_film else None
        self.conv2 = self.child(conv(f"{name}.conv2", c_out, c_out, kernel, rng, stride=1, padding=pad))
        self.gn2 = self.child(GroupNorm(f"{name}.gn2", c_out))
        self.skip = self.child(Conv1d(f"{name}.skip", c_in, c_out, 1, rng, stride=stride))

    def forward(self, x, mu, sigma, film_enabled):
        h = self.gn1.forward(self.conv1.forward(x))
        if self.film is not None and film_enabled:
            h = self.film.forward(h, mu, sigma)
        h = ops.leaky_relu(h, LEAKY_SLOPE)
        h = self.gn2.forward(self.conv2.forward(h))
        return ops.leaky_relu(ops.residual_add(h, self.skip.forward(x)), LEAKY_SLOPE)

    def out_length(self, l_in):
        return self.conv1.out_length(l_in)

    def macs(self, l_in):
        l_mid = self.conv1.out_length(l_in)
        total = self.conv1.macs(l_in) + self.conv2.macs(l_mid) + self.skip.macs(l_in)
        if self.film is not None:
            total += self.film.macs(l_mid)
        return total


class Bottleneck(Layer):
    """Post-norm transformer layer: MHA + LN, then ConvFFN + LN."""

    def __init__(self, name, channels, heads, ffn_expansion, ffn_kernel, rng):
        super().__init__(name)
        self.attn = self.child(MultiHeadAttention(f"{name}.attn", channels, heads, rng))
        self.ln1 = self.child(ChannelLayerNorm(f"{name}.ln1", channels))
        self.ffn = self.child(ConvFFN(f"{name}.ffn", channels, ffn_expansion, ffn_kernel, rng))
        self.ln2 = self.child(ChannelLayerNorm(f"{name}.ln2", channels))

    def forward(self, x):
        h = self.ln1.forward(ops.residual_add(x, self.attn.forward(x)))
        return self.ln2.forward(ops.residual_add(h, self.ffn.forward(h)))

    def macs(self, l_in):
        return self.attn.macs(l_in) + self.ffn.macs(l_in)


class DecoderStage(Layer):
    """Transposed conv upsample -> concat skip -> conv -> GN -> LeakyReLU."""

    def __init__(self, name, c_in, c_out, rng, with_skip, separable):
        super().__init__(name)
        self.with_skip = with_skip
        self.up = self.child(ConvTranspose1d(f"{name}.up", c_in, c_out, 4, rng, stride=2, padding=1))
        fuse_in = 2 * c_out if with_skip else c_out
        conv = DSConv1d if separable else Conv1d
        self.fuse = self.child(conv(f"{name}.fuse", fuse_in, c_out, 3, rng, stride=1, padding=1))
        self.gn = self.child(GroupNorm(f"{name}.gn", c_out))

    def forward(self, x, skip_map=None):
        h = self.up.forward(x)
        if self.with_skip:
            if skip_map is None:
                raise ConfigError(f"{self.name}: missing skip input")
            h = ops.concat([h, skip_map], axis=-2)
        return ops.leaky_relu(self.gn.forward(self.fuse.forward(h)), LEAKY_SLOPE)

    def out_length(self, l_in):
        return self.up.out_length(l_in)

    def macs(self, l_in):
        l_up = self.up.out_length(l_in)
        return self.up.macs(l_in) + self.fuse.macs(l_up)


class DenoiserNet(Layer):
    """Full model graph: ordered layers, parameter table, encoder feature taps."""

    def __init__(self, kind, channels, rng, config, separable_encoder, with_bottleneck,
                 with_film, separable_fusion):
        super().__init__(kind)
        self.kind = kind
        self.channels = tuple(channels)
        self.config = config
        self.input_length = config.input_length if isinstance(config, TeacherConfig) else config.teacher.input_length
        self.film_enabled = with_film
        kernel = 3
        self.blocks = []
        c_prev = 1
        for i, c in enumerate(self.channels, start=1):
            block = self.child(EncoderBlock(
                f"{kind}.enc{i}", c_prev, c, kernel, 2, rng,
                separable=separable_encoder, with_film=with_film,
            ))
            self.blocks.append(block)
            c_prev = c
        if with_bottleneck:
            tc = config if isinstance(config, TeacherConfig) else config.teacher
            self.bottleneck = self.child(Bottleneck(
                f"{kind}.bottleneck", self.channels[-1], tc.heads, tc.ffn_expansion, tc.ffn_kernel, rng,
            ))
        else:
            self.bottleneck = None
        self.stages = []
        down = list(self.channels)  # e.g. [16, 32, 64, 128, 256]
        for j in range(5, 0, -1):
            c_in = down[j - 1]
            c_out = down[j - 2] if j >= 2 else down[0]
            stage = self.child(DecoderStage(
                f"{kind}.dec{j}", c_in, c_out, rng,
                with_skip=(j >= 2), separable=separable_fusion,
            ))
            self.stages.append(stage)
        self.head = self.child(Conv1d(f"{kind}.head", down[0], 1, 1, rng))
        # start from the zero map so early epochs predict the normalized mean
        self.head.weight.data = np.zeros_like(self.head.weight.data)

    @property
    def param_table(self):
        return {p.name: p for p in self.parameters()}

    def forward(self, x, stats):
        """Run the net on a normalized [1, L] or [N, 1, L] map.

        stats is the raw segment's NormStats (or a sequence of them for a
        batch); FiLM conditions on those values. Returns (output, taps) with
        taps keyed by encoder block index 1..5.
        """
        if isinstance(stats, (list, tuple)):
            mu = np.array([s.mu for s in stats])
            sigma = np.array([s.sigma for s in stats])
        else:
            mu, sigma = stats.mu, stats.sigma
        taps = {}
        h = x
        for i, block in enumerate(self.blocks, start=1):
            h = block.forward(h, mu, sigma, self.film_enabled)
            taps[i] = h
        if self.bottleneck is not None:
            h = self.bottleneck.forward(h)
        for j, stage in zip(range(5, 0, -1), self.stages):
            skip_map = taps[j - 1] if j >= 2 else None
            h = stage.forward(h, skip_map)
        return self.head.forward(h), taps

    def profile_rows(self, input_length=None):
        """Per-layer (name, params, macs) rows following the forward walk."""
        length = input_length or self.input_length
        rows = []
        l = length
        for block in self.blocks:
            rows.append((block.name, block.param_count(), block.macs(l)))
            l = block.out_length(l)
        if self.bottleneck is not None:
            rows.append((self.bottleneck.name, self.bottleneck.param_count(), self.bottleneck.macs(l)))
        for stage in self.stages:
            rows.append((stage.name, stage.param_count(), stage.macs(l)))
            l = stage.out_length(l)
        rows.append((self.head.name, self.head.param_count(), self.head.macs(l)))
        return rows


def build_teacher(config=None, seed=0):
    config = config or TeacherConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EAC]))
    return DenoiserNet(
        "teacher", config.encoder_channels, rng, config,
        separable_encoder=False, with_bottleneck=True, with_film=True,
        separable_fusion=False,
    )


def build_student(config=None, seed=0):
    config = config or StudentConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57D4]))
    return DenoiserNet(
        "student", config.encoder_channels, rng, config,
        separable_encoder=True, with_bottleneck=False, with_film=config.keep_film,
        separable_fusion=config.ds_fusion,
    )


def forward_segments(net, segments_raw):
    """Normalize raw segments, run the net batched, de-normalize the outputs.

    segments_raw: [N, 512] array. Returns (denorm outputs [N, 512],
    normalized outputs [N, 512], stats list).
    """
    arr = np.asarray(segments_raw, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None]
    normed = np.empty_like(arr)
    stats = []
    for i, row in enumerate(arr):
        normed[i], st = normalize(row)
        stats.append(st)
    out, _ = net.forward(Tensor(normed[:, None, :]), stats)
    out_norm = out.data[:, 0, :]
    denorm = np.stack([denormalize(row, st) for row, st in zip(out_norm, stats)])
    if squeeze:
        return denorm[0], out_norm[0], stats[0]
    return denorm, out_norm, stats


def denoise(net, segment):
    """normalize -> forward -> denormalize with the input's own stats."""
    denorm, _, _ = forward_segments(net, segment.samples)
    if not np.all(np.isfinite(denorm)):
        raise InferenceError("model produced non-finite samples")
    return segment.copy(samples=denorm)
