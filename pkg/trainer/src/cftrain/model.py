"""Backbone and tracking-branch modules.

The backbone is the 16-conv prefix of VGG-19 (through relu5_4); it stays
frozen, only the per-tap branch (multi-scale adaptation conv + R^4 head) ever
trains. The head regresses, per feature cell, a center displacement (x, y)
from the cell's default box plus two objectness logits; it exists only for
training and is dropped from every export.
"""

import torch
import torch.nn as nn
from torchvision.models import vgg19

# feature-module indices of the post-ReLU taps in torchvision's VGG-19
TAP_INDICES = {"relu3_4": 17, "relu4_4": 26, "relu5_4": 35}
TAP_STRIDES = {"relu3_4": 4, "relu4_4": 8, "relu5_4": 16}
TAP_CHANNELS = {"relu3_4": 256, "relu4_4": 512, "relu5_4": 512}

# preprocessing conventions of the exported runtime files (BGR, mean only)
CAFFE_MEAN_BGR = (103.939, 116.779, 123.68)
# torchvision checkpoints instead expect RGB in [0,1], normalized by these
TORCHVISION_MEAN_RGB = (0.485, 0.456, 0.406)
TORCHVISION_STD_RGB = (0.229, 0.224, 0.225)


def backbone_prefix(src="random:0"):
    """VGG-19 conv prefix through relu5_4, frozen and in eval mode.

    src: "random:SEED" for a deterministic seeded init, or a path to a
    torchvision-layout state dict (full model or features-only keys).
    """
    if isinstance(src, str) and src.startswith("random:"):
        seed = int(src.split(":", 1)[1])
        torch.manual_seed(seed)
        model = vgg19(weights=None)
        pretrained_layout = False
    else:
        model = vgg19(weights=None)
        state = torch.load(src, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            model.load_state_dict(state, strict=False)
        else:
            model.features.load_state_dict(state)
        pretrained_layout = True
    prefix = model.features[:36]  # conv1_1 .. relu5_4, pool5 excluded
    prefix.eval()
    for p in prefix.parameters():
        p.requires_grad_(False)
    return prefix, pretrained_layout


@torch.no_grad()
def extract_tap(prefix, images, tap):
    """Run the frozen prefix and return the activations at one tap.

    images: (N,3,H,W) float tensor, already preprocessed to match the
    prefix's weight conventions.
    """
    end = TAP_INDICES[tap]
    x = images
    for i, layer in enumerate(prefix):
        x = layer(x)
        if i == end:
            return x
    raise KeyError(f"tap {tap!r} beyond the prefix")


class AdaptBranch(nn.Module):
    """Multi-scale channel-reducing adaptation: parallel odd-sized convs,
    each emitting K/(8*n_scales) channels, concatenated in scale order."""

    def __init__(self, in_channels, scales=(3, 5)):
        super().__init__()
        if in_channels % (8 * len(scales)) != 0:
            raise ValueError(f"{in_channels} channels not divisible for scales {scales}")
        out = in_channels // (8 * len(scales))
        self.scales = tuple(scales)
        self.convs = nn.ModuleList(
            nn.Conv2d(in_channels, out, s, stride=1, padding=s // 2) for s in scales)

    def forward(self, x):
        return torch.cat([conv(x) for conv in self.convs], dim=1)


class BranchHead(nn.Module):
    """Per-cell R^4 output: displacement (dx, dy) in input pixels plus
    (background, object) logits. Training-only; never exported.

    Matched defaults are the nearest cell centers, so true offsets stay
    within ~stride/2 px; a small output scale keeps localization gradients
    from swamping the adaptation conv. Near-zero head init bounds the first
    steps regardless of the backbone's activation magnitude.
    """

    def __init__(self, channels, displacement_scale=4.0):
        super().__init__()
        self.conv = nn.Conv2d(channels, 4, 3, padding=1)
        nn.init.normal_(self.conv.weight, std=1e-3)
        nn.init.zeros_(self.conv.bias)
        self.displacement_scale = displacement_scale

    def forward(self, feats):
        out = self.conv(feats)
        # raw conv outputs are O(1); scale up to meaningful pixel offsets
        offsets = out[:, :2] * self.displacement_scale
        logits = out[:, 2:]
        return offsets, logits


class TrackingBranch(nn.Module):
    """Adaptation + head for one tap, the unit train_branch optimizes."""

    def __init__(self, tap, scales=(3, 5), displacement_scale=4.0):
        super().__init__()
        self.tap = tap
        self.adapt = AdaptBranch(TAP_CHANNELS[tap], scales=scales)
        self.head = BranchHead(TAP_CHANNELS[tap] // 8,
                               displacement_scale=displacement_scale)

    def forward(self, feats):
        adapted = self.adapt(feats)
        offsets, logits = self.head(adapted)
        return adapted, offsets, logits
