"""
A tiny cross-attention denoiser used by the toy backbone.

Every latent position issues a query from fixed positional features and
attends over the prompt tokens; the attended values are the model's estimate
of the clean latent, which the schedule turns into a noise estimate. Key,
value, query and output projections can carry low-rank adapters.
"""
import math

import torch
import torch.nn as nn

PROJECTIONS = ("query", "key", "value", "output")
POSITION_FEATURES = 6


def _fill_normal(tensor, std, generator):
    with torch.no_grad():
        tensor.copy_(
            torch.randn(tensor.shape, generator=generator, dtype=tensor.dtype)
            * std
        )


class LoRALinear(nn.Module):
    def __init__(self, base, rank, alpha=None, generator=None):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scale = (alpha if alpha is not None else rank) / rank
        self.lora_down = nn.Linear(base.in_features, rank, bias=False)
        self.lora_up = nn.Linear(rank, base.out_features, bias=False)
        _fill_normal(self.lora_down.weight, 1.0 / rank, generator)
        nn.init.zeros_(self.lora_up.weight)

    def forward(self, x):
        return self.base(x) + self.scale * self.lora_up(self.lora_down(x))


def position_features(height, width, dtype=torch.float32):
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    features = torch.stack(
        [
            grid_y,
            grid_x,
            grid_y * grid_x,
            torch.sin(math.pi * grid_y),
            torch.cos(math.pi * grid_x),
            torch.ones_like(grid_y),
        ],
        dim=-1,
    )
    return features.reshape(height * width, POSITION_FEATURES)


class ToyDenoiser(nn.Module):
    def __init__(self, latent_channels=3, token_dim=32, attn_dim=16, seed=0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.attn_dim = attn_dim
        self.to_q = nn.Linear(POSITION_FEATURES, attn_dim)
        self.to_k = nn.Linear(token_dim, attn_dim)
        self.to_v = nn.Linear(token_dim, latent_channels)
        self.to_out = nn.Linear(latent_channels, latent_channels)
        _fill_normal(self.to_q.weight, 1.0, generator)
        _fill_normal(self.to_k.weight, 1.0 / math.sqrt(token_dim), generator)
        _fill_normal(self.to_v.weight, 0.1 / math.sqrt(token_dim), generator)
        for layer in (self.to_q, self.to_k, self.to_v):
            nn.init.zeros_(layer.bias)
        with torch.no_grad():
            self.to_out.weight.copy_(torch.eye(latent_channels))
            self.to_out.bias.zero_()
        self._adapter_generator = generator

    def projection(self, name):
        return {
            "query": "to_q",
            "key": "to_k",
            "value": "to_v",
            "output": "to_out",
        }[name]

    def add_adapters(self, rank, targets, alpha=None):
        for target in targets:
            attr_name = self.projection(target)
            layer = getattr(self, attr_name)
            if isinstance(layer, LoRALinear):
                continue
            setattr(
                self,
                attr_name,
                LoRALinear(
                    layer, rank, alpha=alpha, generator=self._adapter_generator
                ),
            )

    def predict_clean(self, tokens, height, width):
        """
        tokens: (B, L, d) -> clean latent estimate (B, height, width, C).
        """
        positions = position_features(height, width, dtype=tokens.dtype)
        query = self.to_q(positions)
        key = self.to_k(tokens)
        value = self.to_v(tokens)
        logits = torch.einsum("pk,blk->bpl", query, key) / math.sqrt(
            self.attn_dim
        )
        weights = torch.softmax(logits, dim=-1)
        clean = self.to_out(torch.einsum("bpl,blc->bpc", weights, value))
        return clean.reshape(tokens.shape[0], height, width, -1)

    def forward(self, z_t, tokens, alpha_t, delta_t):
        """
        z_t: (B, h, w, C) noisy latents; alpha_t, delta_t: (B,) coefficients.
        Returns the noise estimate with the shape of z_t.
        """
        clean = self.predict_clean(tokens, z_t.shape[1], z_t.shape[2])
        alpha_t = alpha_t.reshape(-1, 1, 1, 1)
        delta_t = delta_t.reshape(-1, 1, 1, 1)
        return (z_t - alpha_t * clean) / delta_t
