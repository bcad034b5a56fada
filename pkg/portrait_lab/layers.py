"""
Style-modulated building blocks shared by the generator
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class ModulatedLinear(nn.Module):
    """Fully connected layer whose input channels are scaled per sample by a style"""

    def __init__(self, in_features: int, out_features: int, w_dim: int,
                 activation: bool = True, demodulate: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / math.sqrt(in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.affine = nn.Linear(w_dim, in_features)
        nn.init.ones_(self.affine.bias)
        self.activation = activation
        self.demodulate = demodulate

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        # x: (B, N, in), w: (B, w_dim)
        styles = self.affine(w)
        weight = self.weight.unsqueeze(0) * styles.unsqueeze(1)
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.pow(2).sum(dim=2, keepdim=True) + 1e-8)
        out = torch.einsum("bni,boi->bno", x, weight) + self.bias
        return F.silu(out) if self.activation else out


class ModulatedConv2d(nn.Module):
    """Modulated convolution, non-fused form: scale inputs, convolve, demodulate outputs"""

    def __init__(self, in_channels: int, out_channels: int, w_dim: int, kernel_size: int = 3,
                 activation: bool = True, demodulate: bool = True):
        super().__init__()
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel_size, kernel_size)
            / math.sqrt(in_channels * kernel_size * kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = nn.Linear(w_dim, in_channels)
        nn.init.ones_(self.affine.bias)
        self.padding = kernel_size // 2
        self.activation = activation
        self.demodulate = demodulate

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        styles = self.affine(w)
        out = F.conv2d(x * styles[:, :, None, None], self.weight, padding=self.padding)
        if self.demodulate:
            squared = self.weight.pow(2).sum(dim=(2, 3))
            demod = torch.rsqrt(styles.pow(2) @ squared.t() + 1e-8)
            out = out * demod[:, :, None, None]
        out = out + self.bias[None, :, None, None]
        return F.silu(out) if self.activation else out


class MappingNetwork(nn.Module):
    """Latent z -> style w, fully connected with LeakyReLU"""

    def __init__(self, z_dim: int, w_dim: int, num_layers: int, slope: float = 0.2):
        super().__init__()
        layers = []
        in_dim = z_dim
        for i in range(num_layers):
            layers.append(nn.Linear(in_dim, w_dim))
            if i < num_layers - 1:
                layers.append(nn.LeakyReLU(slope))
            in_dim = w_dim
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        # pixel norm on the latent
        z = z * torch.rsqrt(z.pow(2).mean(dim=-1, keepdim=True) + 1e-8)
        return self.net(z)


def positional_encoding(x: torch.Tensor, num_freqs: int) -> torch.Tensor:
    """[x, sin(2^k pi x), cos(2^k pi x)] for k < num_freqs"""
    parts = [x]
    for k in range(num_freqs):
        scaled = (2.0 ** k) * math.pi * x
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)
