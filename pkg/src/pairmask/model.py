"""The paired masked-autoencoding model, desk scale.

One shared trunk serves four heads: a pre-norm ViT encoder over visible
image patches, a light decoder that reconstructs the full low-res image
from encoded patches plus a learned mask token, a residual
super-resolution head over the reconstruction, and a text path that
embeds (masked) report tokens, fuses them with vision features at two
scales, and decodes token logits. All tensors flow through the autodiff
engine; every trainable array lives in ``Model.params`` under a stable
dotted name so optimizers and checkpoints can address it.

Fusion wiring: token features attend over local patch features
(cross-attention, no residual) while a linear projection of the
mean-pooled global patch feature is broadcast over positions; the fused
sequence is exactly ``f_t + local + global``, so either vision path can
be ablated without disturbing the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .masking import PatchMaskPlan, patchify

MODE_GLOBAL = "global"
MODE_LOCAL = "local"


@dataclass
class ModelConfig:
    image_size: int = 32        # low-res input side; SR target is 2x
    patch: int = 8
    dim: int = 64
    encoder_depth: int = 4
    decoder_depth: int = 2
    text_decoder_depth: int = 2
    heads: int = 4
    max_text_len: int = 64
    vocab_size: int = 128
    patch_mask_ratio: float = 0.75
    text_mask_ratio: float = 0.75
    sr_channels: int = 8
    sr_factor: int = 2

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError(f"ModelConfig: image_size {self.image_size} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError(f"ModelConfig: dim {self.dim} not divisible by heads {self.heads}")
        if self.vocab_size < 3:
            raise ValueError("ModelConfig: vocab_size must cover pad/oov/mask")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def grid(self) -> int:
        return self.image_size // self.patch


def sinusoid_table(n_positions: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position encodings, (n_positions, dim)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((n_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


@dataclass
class FusionBundle:
    """All intermediate fusion features, kept for probing and tests."""

    f_t: Tensor         # (L, D) self-attended token features
    f_v_local: Tensor   # (N, D) patch features as given
    f_v_global: Tensor  # (D,)   mean-pooled patch feature
    f_a_local: Tensor   # (L, D) cross-attention over patches
    f_a_global: Tensor  # (D,)   projected global feature
    f_f: Tensor         # (L, D) fused sequence


class Model:
    """Parameter container plus the forward graphs."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict = {}
        self._rng = np.random.default_rng([seed, 4])
        self._build()
        n_pos = max(cfg.n_patches, cfg.max_text_len)
        self.pos_table = sinusoid_table(n_pos, cfg.dim, dtype=dtype)

    # ---- construction ----

    def _p(self, name: str, shape: tuple, init: str = "normal") -> Tensor:
        if init == "normal":
            data = self._rng.normal(0.0, 0.02, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(init)
        t = ad.parameter(data, dtype=self.dtype)
        self.params[name] = t
        return t

    def _block_params(self, prefix: str) -> None:
        d, f = self.cfg.dim, 4 * self.cfg.dim
        self._p(f"{prefix}.ln1.g", (d,), "ones")
        self._p(f"{prefix}.ln1.b", (d,), "zeros")
        self._attn_params(f"{prefix}.attn")
        self._p(f"{prefix}.ln2.g", (d,), "ones")
        self._p(f"{prefix}.ln2.b", (d,), "zeros")
        self._p(f"{prefix}.ff.w1", (d, f))
        self._p(f"{prefix}.ff.b1", (f,), "zeros")
        self._p(f"{prefix}.ff.w2", (f, d))
        self._p(f"{prefix}.ff.b2", (d,), "zeros")

    def _attn_params(self, prefix: str) -> None:
        d = self.cfg.dim
        for name in ("wq", "wk", "wv", "wo"):
            self._p(f"{prefix}.{name}", (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            self._p(f"{prefix}.{name}", (d,), "zeros")

    def _build(self) -> None:
        cfg = self.cfg
        d = cfg.dim
        self._p("patch_embed.w", (cfg.patch * cfg.patch, d))
        self._p("patch_embed.b", (d,), "zeros")
        for i in range(cfg.encoder_depth):
            self._block_params(f"enc.{i}")
        self._p("enc.norm.g", (d,), "ones")
        self._p("enc.norm.b", (d,), "zeros")

        self._p("mask_token", (1, d))
        for i in range(cfg.decoder_depth):
            self._block_params(f"dec.{i}")
        self._p("dec.norm.g", (d,), "ones")
        self._p("dec.norm.b", (d,), "zeros")
        self._p("dec.head.w", (d, cfg.patch * cfg.patch))
        self._p("dec.head.b", (cfg.patch * cfg.patch,), "zeros")

        c = cfg.sr_channels
        self._p("sr.conv1.w", (c, 1, 3, 3))
        self._p("sr.conv1.b", (c,), "zeros")
        # zero-initialized final conv: the SR head starts as exact bilinear
        self._p("sr.conv2.w", (1, c, 3, 3), "zeros")
        self._p("sr.conv2.b", (1,), "zeros")

        self._p("tok_embed.w", (cfg.vocab_size, d))
        self._p("fuse.sa.ln.g", (d,), "ones")
        self._p("fuse.sa.ln.b", (d,), "zeros")
        self._attn_params("fuse.sa.attn")
        self._p("fuse.ca.lnq.g", (d,), "ones")
        self._p("fuse.ca.lnq.b", (d,), "zeros")
        self._attn_params("fuse.ca.attn")
        self._p("fuse.global.w", (d, d))
        self._p("fuse.global.b", (d,), "zeros")

        for i in range(cfg.text_decoder_depth):
            self._block_params(f"txtdec.{i}")
        self._p("txtdec.norm.g", (d,), "ones")
        self._p("txtdec.norm.b", (d,), "zeros")
        self._p("txtdec.head.w", (d, cfg.vocab_size))
        self._p("txtdec.head.b", (cfg.vocab_size,), "zeros")

    # ---- shared pieces ----

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_normalize(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _heads_split(self, x: Tensor) -> Tensor:
        L, d = x.shape
        h = self.cfg.heads
        return ad.transpose(ad.reshape(x, (L, h, d // h)), (1, 0, 2))  # (h, L, hd)

    def _heads_join(self, x: Tensor) -> Tensor:
        h, L, hd = x.shape
        return ad.reshape(ad.transpose(x, (1, 0, 2)), (L, h * hd))

    def _attention(self, prefix: str, query: Tensor, kv: Tensor) -> Tensor:
        p = self.params
        q = ad.add(ad.matmul(query, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
        k = ad.add(ad.matmul(kv, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
        v = ad.add(ad.matmul(kv, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
        qh, kh, vh = self._heads_split(q), self._heads_split(k), self._heads_split(v)
        scale = 1.0 / math.sqrt(self.cfg.dim // self.cfg.heads)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 2, 1))), scale)  # (h, Lq, Lk)
        ctx = ad.matmul(ad.softmax(scores, axis=-1), vh)
        return ad.add(ad.matmul(self._heads_join(ctx), p[f"{prefix}.wo"]), p[f"{prefix}.bo"])

    def _block(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        normed = self._ln(f"{prefix}.ln1", x)
        x = ad.add(x, self._attention(f"{prefix}.attn", normed, normed))
        h = self._ln(f"{prefix}.ln2", x)
        h = ad.add(ad.matmul(h, p[f"{prefix}.ff.w1"]), p[f"{prefix}.ff.b1"])
        h = ad.add(ad.matmul(ad.gelu(h), p[f"{prefix}.ff.w2"]), p[f"{prefix}.ff.b2"])
        return ad.add(x, h)

    def _positions(self, positions: Sequence[int]) -> Tensor:
        return ad.constant(self.pos_table[np.asarray(positions, dtype=np.int64)], dtype=self.dtype)

    # ---- vision ----

    def encode_image(self, patches: np.ndarray, positions: Sequence[int]) -> Tensor:
        """Encode visible patches given their grid positions: (N_vis, D).

        Position encodings are looked up per given index, so the output
        is equivariant to permuting (patches, positions) together.
        """
        positions = list(positions)
        if len(positions) != patches.shape[0]:
            raise ValueError(
                f"encode_image: {patches.shape[0]} patches vs {len(positions)} positions"
            )
        if patches.shape[1] != self.cfg.patch * self.cfg.patch:
            raise ValueError(f"encode_image: patch rows {patches.shape[1]} != patch^2")
        x = ad.constant(patches, dtype=self.dtype)
        x = ad.add(ad.matmul(x, self.params["patch_embed.w"]), self.params["patch_embed.b"])
        x = ad.add(x, self._positions(positions))
        for i in range(self.cfg.encoder_depth):
            x = self._block(f"enc.{i}", x)
        return self._ln("enc.norm", x)

    def decoder_sequence(self, f_v: Tensor, plan: PatchMaskPlan) -> Tensor:
        """Pre-decoder rows: encoded patches scattered to their positions,
        mask token + position encoding everywhere else."""
        n = plan.n_patches
        if n != self.cfg.n_patches:
            raise ValueError(f"decoder_sequence: plan has {n} patches, config {self.cfg.n_patches}")
        n_vis = len(plan.visible)
        if f_v.shape[0] != n_vis:
            raise ValueError(f"decoder_sequence: {f_v.shape[0]} encoded rows vs {n_vis} visible")
        mask_rows = ad.take_rows(self.params["mask_token"], np.zeros(n - n_vis, dtype=np.int64))
        unordered = ad.concat([f_v, mask_rows], axis=0)
        perm = np.empty(n, dtype=np.int64)
        for slot, patch_idx in enumerate(plan.visible):
            perm[patch_idx] = slot
        for slot, patch_idx in enumerate(plan.masked):
            perm[patch_idx] = n_vis + slot

        ordered = ad.take_rows(unordered, perm)
        return ad.add(ordered, self._positions(range(n)))

    def decode_image(self, f_v: Tensor, plan: PatchMaskPlan) -> Tensor:
        """Reconstruct the full low-res image: (H, W)."""
        x = self.decoder_sequence(f_v, plan)
        for i in range(self.cfg.decoder_depth):
            x = self._block(f"dec.{i}", x)
        x = self._ln("dec.norm", x)
        pred = ad.add(ad.matmul(x, self.params["dec.head.w"]), self.params["dec.head.b"])
        return self.unpatchify_t(pred)

    def unpatchify_t(self, patches: Tensor) -> Tensor:
        """Differentiable inverse of row-major patchify."""
        g, p = self.cfg.grid, self.cfg.patch
        tiles = ad.reshape(patches, (g, g, p, p))
        return ad.reshape(ad.transpose(tiles, (0, 2, 1, 3)), (g * p, g * p))

    def patchify_t(self, image: Tensor) -> Tensor:
        """Differentiable row-major patchify of a (H, W) tensor."""
        g, p = self.cfg.grid, self.cfg.patch
        tiles = ad.transpose(ad.reshape(image, (g, p, g, p)), (0, 2, 1, 3))
        return ad.reshape(tiles, (g * g, p * p))

    def sr_head(self, low: Tensor) -> Tensor:
        """Residual super-resolution: bilinear 2x plus a learned correction."""
        up = ad.bilinear_upsample(low, self.cfg.sr_factor)
        h, w = up.shape
        r = ad.reshape(up, (1, h, w))
        hid = ad.gelu(ad.conv2d(r, self.params["sr.conv1.w"], self.params["sr.conv1.b"]))
        out = ad.conv2d(hid, self.params["sr.conv2.w"], self.params["sr.conv2.b"])
        return ad.add(up, ad.reshape(out, (h, w)))

    # ---- text ----

    def embed_text(self, ids: np.ndarray) -> Tensor:
        """Token embedding plus sinusoidal position encoding: (L, D)."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size > self.cfg.max_text_len:
            raise ValueError(f"embed_text: {ids.size} tokens exceed max {self.cfg.max_text_len}")
        emb = ad.embedding_lookup(self.params["tok_embed.w"], ids)
        return ad.add(emb, self._positions(range(ids.size)))

    def mscf_fuse(self, f_v_local: Tensor, e_t: Tensor) -> FusionBundle:
        """Fuse token features with patch features at two scales.

        ``f_f = f_t + cross_attention(f_t over patches) + broadcast
        (linear(mean(patches)))``; with zero patch features and zero-bias
        projections both vision terms vanish and ``f_f == f_t``.
        """
        p = self.params
        sa_in = self._ln("fuse.sa.ln", e_t)
        f_t = ad.add(e_t, self._attention("fuse.sa.attn", sa_in, sa_in))
        f_v_global = ad.mean(f_v_local, axis=0)
        f_a_local = self._attention("fuse.ca.attn", self._ln("fuse.ca.lnq", f_t), f_v_local)
        f_a_global = ad.add(ad.matmul(ad.reshape(f_v_global, (1, self.cfg.dim)), p["fuse.global.w"]), p["fuse.global.b"])
        f_a_global = ad.reshape(f_a_global, (self.cfg.dim,))
        f_f = ad.add(ad.add(f_t, f_a_local), f_a_global)
        return FusionBundle(
            f_t=f_t,
            f_v_local=f_v_local,
            f_v_global=f_v_global,
            f_a_local=f_a_local,
            f_a_global=f_a_global,
            f_f=f_f,
        )

    def decode_text(self, f_f: Tensor) -> Tensor:
        """Token logits from fused features: (L, vocab). Position-free."""
        x = f_f
        for i in range(self.cfg.text_decoder_depth):
            x = self._block(f"txtdec.{i}", x)
        x = self._ln("txtdec.norm", x)
        return ad.add(ad.matmul(x, self.params["txtdec.head.w"]), self.params["txtdec.head.b"])

    # ---- fine-tuning path ----

    def forward_finetune(self, image: np.ndarray, mode: str = MODE_GLOBAL) -> Tensor:
        """Encode a full unmasked image; global mode mean-pools patches."""
        if mode not in (MODE_GLOBAL, MODE_LOCAL):
            raise ValueError(f"forward_finetune: unknown mode {mode!r}")
        patches = patchify(image, self.cfg.patch)
        f_v = self.encode_image(patches, range(self.cfg.n_patches))
        if mode == MODE_LOCAL:
            return f_v
        return ad.mean(f_v, axis=0)
