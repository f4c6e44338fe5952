"""Desk-scale encoders, projection heads and the masked query-token signal decoder."""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from config import LossWeights, ModelConfig, RenderConfig
from errors import LifecycleError, PadPolicyError, ParameterError, ShapeError
from lab import autodiff as ad
from lab.autodiff import Graph, Tensor
from lab.lead_rules import LEAD_NAMES
from lab.losses import Temperatures
from lab.render import EcgImage, expected_size
from lab.report import ReportText, Vocabulary
from lab.signal_core import EcgRecord
from logger import get_logger
from utils import rng_for

logger = get_logger("ecglab.models")

N_LEADS = len(LEAD_NAMES)

# stream ids for per-component initialisation
_IMAGE, _HEADS, _DECODER, _SIGNAL, _TEXT = range(5)


class Affine:
    def __init__(self, graph: Graph, name: str, d_in: int, d_out: int, rng: np.random.Generator, scale=None):
        scale = math.sqrt(1.0 / d_in) if scale is None else scale
        self.w = graph.param(f"{name}.w", rng.normal(0.0, scale, size=(d_in, d_out)))
        self.b = graph.param(f"{name}.b", np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        return ad.matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, graph: Graph, name: str, d: int):
        self.gain = graph.param(f"{name}.gain", np.ones(d))
        self.bias = graph.param(f"{name}.bias", np.zeros(d))

    def __call__(self, x) -> Tensor:
        return ad.layer_norm_rows(x, self.gain, self.bias)


# image side --------------------------------------------------------------------


class ImageEncoder:
    """Grayscale downsample, 16x16 patch flattening, two relu affines, mean-pool, affine to d_img."""

    def __init__(self, graph: Graph, config: ModelConfig, render_config: RenderConfig):
        self.config = config
        self.expected = expected_size(render_config)
        self.size = tuple(config.image_size)
        p = config.image_patch
        rng = rng_for(config.seed, _IMAGE)
        self.embed = Affine(graph, "image.embed", p * p, config.image_hidden, rng)
        self.mix = Affine(graph, "image.mix", config.image_hidden, config.image_hidden, rng)
        self.out = Affine(graph, "image.out", config.image_hidden, config.d_img, rng)

    def patches(self, images: Sequence[EcgImage]) -> np.ndarray:
        h, w = self.size
        p = self.config.image_patch
        batch = []
        for image in images:
            if (image.height, image.width) != self.expected:
                raise ShapeError(
                    f"image is {image.height}x{image.width}, "
                    f"encoder expects renders of {self.expected[0]}x{self.expected[1]}"
                )
            gray = Image.fromarray(image.pixels).convert("L").resize((w, h), Image.BILINEAR)
            ink = 1.0 - np.asarray(gray, dtype=np.float32) / 255.0
            tiles = ink.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p * p)
            batch.append(tiles)
        return np.stack(batch)

    def __call__(self, images: Sequence[EcgImage], patches: Optional[np.ndarray] = None) -> Tensor:
        x = Tensor(self.patches(images) if patches is None else patches)
        hidden = ad.relu(self.mix(ad.relu(self.embed(x))))
        return self.out(hidden.mean(axis=1))


class ProjectionHeads:
    def __init__(self, graph: Graph, config: ModelConfig):
        rng = rng_for(config.seed, _HEADS)
        self.rec = Affine(graph, "head.rec", config.d_img, config.d_sig, rng)
        self.ctr = Affine(graph, "head.ctr", config.d_img, config.d_sig, rng)

    def __call__(self, z_img) -> Tuple[Tensor, Tensor]:
        z_img = ad.as_tensor(z_img)
        if z_img.ndim == 1:
            rec, ctr = self(z_img.reshape(1, -1))
            return rec.reshape(-1), ctr.reshape(-1)
        return ad.tanh(self.rec(z_img)), ad.tanh(self.ctr(z_img))


class DecoderBlock:
    def __init__(self, graph: Graph, name: str, d: int, heads: int, ffn_mult: int, rng: np.random.Generator):
        self.heads = heads
        self.ln_attn = LayerNorm(graph, f"{name}.ln_attn", d)
        self.q = Affine(graph, f"{name}.q", d, d, rng)
        self.k = Affine(graph, f"{name}.k", d, d, rng)
        self.v = Affine(graph, f"{name}.v", d, d, rng)
        self.o = Affine(graph, f"{name}.o", d, d, rng)
        self.ln_ffn = LayerNorm(graph, f"{name}.ln_ffn", d)
        self.ffn_in = Affine(graph, f"{name}.ffn_in", d, d * ffn_mult, rng)
        self.ffn_out = Affine(graph, f"{name}.ffn_out", d * ffn_mult, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return ad.transpose(x.reshape(b, n, self.heads, d // self.heads), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.ln_attn(x)
        att = ad.scaled_dot_attention(self._split(self.q(h)), self._split(self.k(h)), self._split(self.v(h)))
        x = x + self.o(ad.transpose(att, (0, 2, 1, 3)).reshape(b, n, d))
        h = self.ln_ffn(x)
        return x + self.ffn_out(ad.relu(self.ffn_in(h)))


class QueryDecoder:
    """Learnable query tokens, one per P-sample patch, decoded to the 12-lead signal."""

    def __init__(self, graph: Graph, config: ModelConfig):
        dc = config.decoder
        self.config = config
        self.length = config.signal_length
        self.patch = dc.patch
        self.n_queries = math.ceil(self.length / dc.patch)
        self.padding = self.n_queries * dc.patch - self.length
        if self.padding and not dc.pad:
            raise PadPolicyError(
                f"signal length {self.length} is not a multiple of patch {dc.patch} and padding is disabled"
            )
        rng = rng_for(config.seed, _DECODER)
        self.latent = Affine(graph, "decoder.latent", config.d_sig, dc.d, rng)
        self.queries = graph.param("decoder.queries", rng.normal(0.0, 0.1, size=(self.n_queries, dc.d)))
        self.positions = graph.param("decoder.positions", rng.normal(0.0, 0.1, size=(self.n_queries, dc.d)))
        self.mask_embedding = graph.param("decoder.mask_embedding", rng.normal(0.0, 0.1, size=(1, dc.d)))
        self.blocks = [
            DecoderBlock(graph, f"decoder.block{i}", dc.d, dc.heads, dc.ffn_mult, rng) for i in range(dc.layers)
        ]
        self.norm = LayerNorm(graph, "decoder.norm", dc.d)
        self.out = Affine(graph, "decoder.out", dc.d, N_LEADS * dc.patch, rng)

    def mask_for(self, mask_seed: int, mask_ratio: float) -> np.ndarray:
        mask = np.zeros((self.n_queries, 1))
        n_masked = int(math.floor(mask_ratio * self.n_queries))
        if n_masked:
            picks = np.random.default_rng(mask_seed).choice(self.n_queries, size=n_masked, replace=False)
            mask[picks] = 1.0
        return mask

    def __call__(self, z_rec, mask_seed: int = 0, training: bool = True, mask_ratio: Optional[float] = None) -> Tensor:
        """(B, d_sig) -> (B, 12, T). Masking replaces query tokens before the latent and positions are added."""
        z_rec = ad.as_tensor(z_rec)
        if z_rec.ndim == 1:
            return self(z_rec.reshape(1, -1), mask_seed, training, mask_ratio).reshape(N_LEADS, self.length)
        if z_rec.ndim != 2 or z_rec.shape[1] != self.config.d_sig:
            raise ShapeError(f"decoder expects (B, {self.config.d_sig}) latents, got {z_rec.shape}")
        ratio = self.config.decoder.mask_ratio if mask_ratio is None else mask_ratio
        if not 0.0 <= ratio <= 1.0:
            raise ParameterError(f"mask_ratio must lie in [0, 1], got {ratio}")
        b, n, d = z_rec.shape[0], self.n_queries, self.config.decoder.d

        tokens = self.queries
        if training and ratio > 0:
            mask = self.mask_for(mask_seed, ratio)
            tokens = tokens * (1.0 - mask) + self.mask_embedding * mask
        x = tokens.reshape(1, n, d) + self.positions.reshape(1, n, d) + self.latent(z_rec).reshape(b, 1, d)
        for block in self.blocks:
            x = block(x)
        patches = self.out(self.norm(x)).reshape(b, n, N_LEADS, self.patch)
        signal = ad.transpose(patches, (0, 2, 1, 3)).reshape(b, N_LEADS, n * self.patch)
        return signal[:, :, : self.length] if self.padding else signal


# teachers ----------------------------------------------------------------------


class SignalEncoder:
    """Per-lead strided patches, shared patch embedding plus a lead bias, relu stack, mean-pool."""

    def __init__(self, graph: Graph, config: ModelConfig):
        self.config = config
        self.patch = config.signal_patch
        self.n_patches = math.ceil(config.signal_length / self.patch)
        rng = rng_for(config.seed, _SIGNAL)
        self.embed = Affine(graph, "signal.embed", self.patch, config.signal_hidden, rng)
        self.lead_bias = graph.param("signal.lead_bias", rng.normal(0.0, 0.1, size=(N_LEADS, 1, config.signal_hidden)))
        self.mix = Affine(graph, "signal.mix", config.signal_hidden, config.signal_hidden, rng)
        self.out = Affine(graph, "signal.out", config.signal_hidden, config.d_sig, rng)

    def patches(self, signals: np.ndarray) -> np.ndarray:
        signals = np.asarray(signals, dtype=np.float32)
        if signals.ndim != 3 or signals.shape[1:] != (N_LEADS, self.config.signal_length):
            raise ShapeError(f"signal encoder expects (B, 12, {self.config.signal_length}), got {signals.shape}")
        pad = self.n_patches * self.patch - signals.shape[2]
        if pad:
            signals = np.pad(signals, ((0, 0), (0, 0), (0, pad)))
        return signals.reshape(signals.shape[0], N_LEADS, self.n_patches, self.patch)

    def __call__(self, signals: np.ndarray) -> Tensor:
        x = Tensor(self.patches(signals))
        b = x.shape[0]
        h = ad.relu(self.embed(x) + self.lead_bias)
        h = ad.relu(self.mix(h.reshape(b, N_LEADS * self.n_patches, self.config.signal_hidden)))
        return self.out(h.mean(axis=1))


class TextEncoder:
    """Token embedding, masked mean-pool, affine to d_sig."""

    def __init__(self, graph: Graph, config: ModelConfig, vocab: Vocabulary):
        self.vocab = vocab
        rng = rng_for(config.seed, _TEXT)
        self.embedding = graph.param("text.embedding", rng.normal(0.0, 1.0, size=(len(vocab), config.text_dim)))
        self.out = Affine(graph, "text.out", config.text_dim, config.d_sig, rng)

    def __call__(self, reports: Sequence[ReportText]) -> Tensor:
        ids, mask = self.vocab.batch(reports)
        one_hot = np.eye(len(self.vocab), dtype=np.float32)[ids] * mask[..., None]
        pooled = ad.matmul(Tensor(one_hot), self.embedding).sum(axis=1) / mask.sum(axis=1, keepdims=True)
        return self.out(pooled)


class Teachers:
    """Frozen signal and text encoders; usable only after stage-0 pretraining froze them."""

    def __init__(self, config: ModelConfig, vocab: Optional[Vocabulary] = None):
        self.graph = Graph("teachers")
        self.vocab = vocab or Vocabulary(config.vocab)
        self.signal = SignalEncoder(self.graph, config)
        self.text = TextEncoder(self.graph, config, self.vocab)

    @property
    def ready(self) -> bool:
        return self.graph.frozen

    def freeze(self):
        self.graph.freeze()

    def _require_ready(self, what: str):
        if not self.ready:
            raise LifecycleError(f"{what} called before stage-0 teacher pretraining completed")

    def encode_signal(self, signals) -> Tensor:
        """(B, 12, T) array -> (B, d_sig); a single EcgRecord -> (d_sig,)."""
        self._require_ready("encode_signal")
        if isinstance(signals, EcgRecord):
            return self.signal(signals.samples[None]).reshape(-1)
        return self.signal(signals)

    def encode_text(self, reports) -> Tensor:
        self._require_ready("encode_text")
        if isinstance(reports, ReportText):
            return self.text([reports]).reshape(-1)
        return self.text(reports)


# student bundle ----------------------------------------------------------------


class Student:
    """Everything trained in stage 1: image encoder, both heads, the decoder and the two temperatures."""

    def __init__(self, config: ModelConfig, render_config: RenderConfig, loss: Optional[LossWeights] = None):
        self.config = config
        self.render_config = render_config
        self.graph = Graph("student")
        self.encoder = ImageEncoder(self.graph, config, render_config)
        self.heads = ProjectionHeads(self.graph, config)
        self.decoder = QueryDecoder(self.graph, config)
        self.temperatures = Temperatures(self.graph, loss or LossWeights())

    def encode_image(self, images) -> Tensor:
        if isinstance(images, EcgImage):
            return self.encoder([images]).reshape(-1)
        return self.encoder(images)

    def project(self, z_img) -> Tuple[Tensor, Tensor]:
        return self.heads(z_img)

    def decode_signal(self, z_rec, mask_seed: int = 0, training: bool = True, mask_ratio: Optional[float] = None):
        return self.decoder(z_rec, mask_seed, training, mask_ratio)

    def parameter_names(self) -> List[str]:
        return self.graph.names()
