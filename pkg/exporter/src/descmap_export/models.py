"""Dense fully-convolutional wrappers around local-feature networks.

Each entry in MODELS declares the grid geometry its network implies: the
stride between descriptor cells, the integer pixel offset of cell (0, 0)
(fractional alignments are rounded to the nearest pixel), the theoretical
receptive field, and whether the exported descriptors are L2-normalized.

The patch networks (HardNet, SOSNet) run as dense maps: 3x3 convolutions
padded to keep resolution, two stride-2 stages, and a final valid 8x8
convolution, which lands cell (x, y) on pixel (4x + 14, 4y + 14) with a
51 px window. Descriptors are tapped before the final L2 normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

MIN_SIDE = 32


@dataclass(frozen=True)
class ModelSpec:
    name: str
    stride: int
    offset: int
    receptive_field: int
    channels: int
    normalized: bool
    input_channels: int
    weights_file: str
    weights_hint: str
    emits_scores: bool
    # "image": score map at full image resolution; "grid": one per cell
    score_resolution: str | None = None


MODELS = {
    "hardnet": ModelSpec(
        name="hardnet",
        stride=4,
        offset=14,
        receptive_field=51,
        channels=128,
        normalized=False,
        input_channels=1,
        weights_file="hardnet_liberty.pth",
        weights_hint=(
            "checkpoint_liberty_with_aug.pth from "
            "https://github.com/DagnyT/hardnet"
        ),
        emits_scores=False,
    ),
    "sosnet": ModelSpec(
        name="sosnet",
        stride=4,
        offset=14,
        receptive_field=51,
        channels=128,
        normalized=False,
        input_channels=1,
        weights_file="sosnet_32x32_liberty.pth",
        weights_hint="https://github.com/scape-research/SOSNet",
        emits_scores=False,
    ),
    "superpoint": ModelSpec(
        name="superpoint",
        stride=8,
        offset=4,  # true alignment is 8x + 3.5
        receptive_field=84,
        channels=256,
        normalized=True,
        input_channels=1,
        weights_file="superpoint_v1.pth",
        weights_hint=(
            "superpoint_v1.pth from "
            "https://github.com/magicleap/SuperPointPretrainedNetwork"
        ),
        emits_scores=True,
        score_resolution="image",
    ),
    "d2net": ModelSpec(
        name="d2net",
        stride=4,
        offset=2,  # true alignment is 4x + 1.5
        receptive_field=64,
        channels=512,
        normalized=False,
        input_channels=3,
        weights_file="d2net.pth",
        weights_hint="d2_tf.pth from https://dusmanu.com/publications/d2-net.html",
        emits_scores=True,
        score_resolution="grid",
    ),
}


class DenseL2Net(nn.Module):
    """L2Net trunk (HardNet/SOSNet weights layout) as a dense map network."""

    def __init__(self, out_dim: int = 128):
        super().__init__()

        def bn(c):
            return nn.BatchNorm2d(c, affine=False)

        self.features = nn.Sequential(
            nn.Conv2d(1, 32, 3, padding=1, bias=False), bn(32), nn.ReLU(),
            nn.Conv2d(32, 32, 3, padding=1, bias=False), bn(32), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1, bias=False), bn(64), nn.ReLU(),
            nn.Conv2d(64, 64, 3, padding=1, bias=False), bn(64), nn.ReLU(),
            nn.Conv2d(64, 128, 3, stride=2, padding=1, bias=False), bn(128), nn.ReLU(),
            nn.Conv2d(128, 128, 3, padding=1, bias=False), bn(128), nn.ReLU(),
            nn.Dropout(0.3),
            nn.Conv2d(128, out_dim, 8, bias=False), bn(out_dim),
        )

    def forward(self, x):
        # per-image standardization, as the patch pipelines do per patch
        mu = x.mean()
        sd = x.std()
        x = (x - mu) / (sd + 1e-7)
        return self.features(x)  # pre-normalization descriptors


class SuperPointNet(nn.Module):
    """Shared-encoder detector/descriptor network (stride-8 grid)."""

    def __init__(self):
        super().__init__()
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.MaxPool2d(2, 2)
        c1, c2, c3, c4, c5, d1 = 64, 64, 128, 128, 256, 256
        self.conv1a = nn.Conv2d(1, c1, 3, padding=1)
        self.conv1b = nn.Conv2d(c1, c1, 3, padding=1)
        self.conv2a = nn.Conv2d(c1, c2, 3, padding=1)
        self.conv2b = nn.Conv2d(c2, c2, 3, padding=1)
        self.conv3a = nn.Conv2d(c2, c3, 3, padding=1)
        self.conv3b = nn.Conv2d(c3, c3, 3, padding=1)
        self.conv4a = nn.Conv2d(c3, c4, 3, padding=1)
        self.conv4b = nn.Conv2d(c4, c4, 3, padding=1)
        self.convPa = nn.Conv2d(c4, c5, 3, padding=1)
        self.convPb = nn.Conv2d(c5, 65, 1)
        self.convDa = nn.Conv2d(c4, c5, 3, padding=1)
        self.convDb = nn.Conv2d(c5, d1, 1)

    def forward(self, x):
        x = self.relu(self.conv1a(x))
        x = self.relu(self.conv1b(x))
        x = self.pool(x)
        x = self.relu(self.conv2a(x))
        x = self.relu(self.conv2b(x))
        x = self.pool(x)
        x = self.relu(self.conv3a(x))
        x = self.relu(self.conv3b(x))
        x = self.pool(x)
        x = self.relu(self.conv4a(x))
        x = self.relu(self.conv4b(x))
        semi = self.convPb(self.relu(self.convPa(x)))
        desc = self.convDb(self.relu(self.convDa(x)))
        return semi, desc


class DenseVGG(nn.Module):
    """VGG-style trunk to conv4_3 with two pools: stride-4, 512 channels."""

    def __init__(self):
        super().__init__()
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.MaxPool2d(2, 2)
        self.conv1_1 = nn.Conv2d(3, 64, 3, padding=1)
        self.conv1_2 = nn.Conv2d(64, 64, 3, padding=1)
        self.conv2_1 = nn.Conv2d(64, 128, 3, padding=1)
        self.conv2_2 = nn.Conv2d(128, 128, 3, padding=1)
        self.conv3_1 = nn.Conv2d(128, 256, 3, padding=1)
        self.conv3_2 = nn.Conv2d(256, 256, 3, padding=1)
        self.conv3_3 = nn.Conv2d(256, 256, 3, padding=1)
        self.conv4_1 = nn.Conv2d(256, 512, 3, padding=1)
        self.conv4_2 = nn.Conv2d(512, 512, 3, padding=1)
        self.conv4_3 = nn.Conv2d(512, 512, 3, padding=1)

    def forward(self, x):
        x = self.relu(self.conv1_1(x))
        x = self.relu(self.conv1_2(x))
        x = self.pool(x)
        x = self.relu(self.conv2_1(x))
        x = self.relu(self.conv2_2(x))
        x = self.pool(x)
        x = self.relu(self.conv3_1(x))
        x = self.relu(self.conv3_2(x))
        x = self.relu(self.conv3_3(x))
        x = self.relu(self.conv4_1(x))
        x = self.relu(self.conv4_2(x))
        x = self.relu(self.conv4_3(x))
        return x


def build_model(name: str) -> nn.Module:
    if name in ("hardnet", "sosnet"):
        return DenseL2Net(MODELS[name].channels)
    if name == "superpoint":
        return SuperPointNet()
    if name == "d2net":
        return DenseVGG()
    raise KeyError(name)


def soft_local_max_score(features: torch.Tensor) -> torch.Tensor:
    """Detection score per grid cell: channelwise ratio-to-max weighted by a
    3x3 local softmax, maximized over channels. Nonnegative by construction."""
    exp = torch.exp(features - features.amax())
    local_sum = F.avg_pool2d(exp, 3, stride=1, padding=1) * 9.0
    beta = exp / local_sum
    alpha = features / (features.amax(dim=1, keepdim=True) + 1e-12)
    return (alpha.clamp(min=0.0) * beta).amax(dim=1)


def run_model(name: str, module: nn.Module, image: np.ndarray):
    """Forward one prepared image; return (descriptors hwc, score or None).

    `image` is float32, (H, W) for single-channel models or (H, W, 3).
    """
    with torch.no_grad():
        if name in ("hardnet", "sosnet"):
            x = torch.from_numpy(image)[None, None, :, :]
            desc = module(x)
            score = None
        elif name == "superpoint":
            x = torch.from_numpy(image / 255.0)[None, None, :, :]
            semi, desc = module(x)
            prob = torch.softmax(semi, dim=1)[:, :-1]  # drop the dustbin bin
            score = F.pixel_shuffle(prob, 8)[0, 0]
            desc = F.normalize(desc, p=2, dim=1)
        elif name == "d2net":
            mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
            std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
            x = torch.from_numpy(image / 255.0).permute(2, 0, 1)[None]
            desc = module((x - mean) / std)
            score = soft_local_max_score(desc)[0]
        else:
            raise KeyError(name)
    dense = desc[0].permute(1, 2, 0).contiguous().numpy().astype(np.float32)
    score_arr = None if score is None else score.numpy().astype(np.float32)
    return dense, score_arr
