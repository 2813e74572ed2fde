"""Torch builds of the adaptation networks, double precision throughout.

The IMU network is a two-layer bidirectional GRU (hidden size 32, dual
biases, which is what pins the 27,276 parameter count) feeding a dense
head with the final timestep's concatenated hidden vector after a ReLU.
The vision network is two conv+pool stages per eye with separate weights,
flatten/concat, and a two-layer dense head.

The dense heads start at zero, so an untrained model emits gamma = 0 and
the filter runs at its nominal noise levels from epoch zero.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class ImuNet(nn.Module):
    def __init__(self, d_h: int = 32, d_gru: int = 10):
        super().__init__()
        self.d_h = d_h
        self.d_gru = d_gru
        self.gru = nn.GRU(input_size=6, hidden_size=d_h, num_layers=2,
                          bidirectional=True)
        self.head = nn.Linear(2 * d_h, 12)
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
        self.double()

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        """(B, d_gru, 6) windows -> (B, 12) scaling logits."""
        seq = windows.transpose(0, 1)          # (T, B, 6)
        out, _ = self.gru(seq)                 # (T, B, 2*d_h)
        feat = torch.relu(out[-1])             # final timestep, both directions
        return self.head(feat)


class VisionNet(nn.Module):
    def __init__(self, img_w: int = 752, img_h: int = 480):
        super().__init__()
        self.img_w = img_w
        self.img_h = img_h
        def stack():
            return nn.Sequential(
                nn.Conv2d(1, 16, 5, padding=2), nn.ReLU(), nn.MaxPool2d(4),
                nn.Conv2d(16, 32, 5, padding=2), nn.ReLU(), nn.MaxPool2d(4))
        self.left = stack()
        self.right = stack()
        flat = 2 * 32 * (((img_h // 4)) // 4) * (((img_w // 4)) // 4)
        self.fc1 = nn.Linear(flat, 32)
        self.fc2 = nn.Linear(32, 1)
        with torch.no_grad():
            self.fc2.weight.zero_()
            self.fc2.bias.zero_()
        self.double()

    def forward(self, img_l: torch.Tensor, img_r: torch.Tensor) -> torch.Tensor:
        a = self.left(img_l.unsqueeze(1)).flatten(1)
        b = self.right(img_r.unsqueeze(1)).flatten(1)
        hidden = torch.relu(self.fc1(torch.cat([a, b], dim=1)))
        return self.fc2(hidden).squeeze(-1)


def scale_sigma(gamma: torch.Tensor, nominal: torch.Tensor,
                upsilon: float) -> torch.Tensor:
    """c = nominal * 10^(upsilon * tanh(gamma)), differentiable."""
    return nominal * torch.pow(10.0, upsilon * torch.tanh(gamma))


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
