"""Model registry and tap-point adapters.

Every supported model is wrapped in an adapter that exposes one method,
``taps(batch) -> GemTaps | ClusterTaps``, returning the pre-aggregation
tensors the engine consumes plus the model's own global descriptor for
parity auditing. The adapter, not the engine, decides where the tap point
sits, and the exported profile records that choice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ModelLoadFailure

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class GemTaps:
    """Pre-GeM activations (C, H, W, nonnegative) + reference descriptor."""

    feature_map: np.ndarray
    reference: np.ndarray


@dataclass
class ClusterTaps:
    """Pre-assignment tensors for cluster aggregators + reference descriptor."""

    local_features: np.ndarray  # (D, n)
    assignments: np.ndarray  # (K, n), columns sum to 1
    class_token: np.ndarray | None  # (T,) or None
    reference: np.ndarray


class GemModelAdapter:
    """Adapter for CosPlace/EigenPlaces-style models: a ``backbone`` module
    followed by an ``aggregation`` Sequential whose stages are
    [spatial L2 norm, GeM, flatten, linear projection, L2 norm].

    Tap point: the spatially normalized backbone activations entering GeM,
    clamped at the GeM epsilon so they are strictly nonnegative. The final
    linear projection is part of the reference path only; it cannot be
    folded into a per-location map without changing the GeM result, so the
    engine reproduces the model's *pooled* descriptor, and parity against
    the full reference descriptor is what the audit measures.
    """

    tap_point = "aggregation input (post spatial L2 norm, pre GeM, clamped at GeM eps)"

    def __init__(self, model: torch.nn.Module):
        self.model = model.eval()
        stages = list(getattr(model, "aggregation", torch.nn.Sequential()))
        gem_idx = next(
            (i for i, m in enumerate(stages) if hasattr(m, "p") and hasattr(m, "eps")),
            None,
        )
        if not hasattr(model, "backbone") or gem_idx is None:
            raise ModelLoadFailure(
                "GeM adapter needs model.backbone and a GeM stage (with .p/.eps) "
                "inside model.aggregation"
            )
        self._pre_gem = torch.nn.Sequential(*stages[:gem_idx])
        self._gem = stages[gem_idx]

    @property
    def p(self) -> float:
        p = self._gem.p
        return float(p.detach().reshape(-1)[0]) if isinstance(p, torch.Tensor) else float(p)

    @torch.no_grad()
    def taps(self, batch: torch.Tensor) -> list[GemTaps]:
        feats = self._pre_gem(self.model.backbone(batch))
        feats = feats.clamp(min=float(self._gem.eps))
        refs = self.model(batch)
        return [
            GemTaps(
                feature_map=feats[i].cpu().numpy().astype(np.float32),
                reference=refs[i].cpu().numpy().astype(np.float32),
            )
            for i in range(batch.shape[0])
        ]


class ClusterModelAdapter:
    """Adapter for SALAD-style models. The released implementations differ in
    internal naming, so the adapter duck-types a single hook: the model (or
    its aggregator) must provide ``export_taps(batch)`` returning per-image
    (local_features (D, n), assignments (K, n), class_token or None). The
    chosen tap point is whatever that hook reports via ``tap_point``.
    """

    def __init__(self, model: torch.nn.Module):
        self.model = model.eval()
        hook = getattr(model, "export_taps", None) or getattr(
            getattr(model, "aggregator", None), "export_taps", None
        )
        if hook is None:
            raise ModelLoadFailure(
                "cluster adapter needs an export_taps(batch) hook exposing the "
                "pre-assignment tensors; the released checkpoint does not provide one"
            )
        self._hook = hook
        self.tap_point = getattr(model, "tap_point", "model export_taps hook")

    @torch.no_grad()
    def taps(self, batch: torch.Tensor) -> list[ClusterTaps]:
        refs = self.model(batch)
        out = []
        for i, (lf, am, tok) in enumerate(self._hook(batch)):
            out.append(
                ClusterTaps(
                    local_features=np.asarray(lf, dtype=np.float32),
                    assignments=np.asarray(am, dtype=np.float32),
                    class_token=None if tok is None else np.asarray(tok, dtype=np.float32),
                    reference=refs[i].cpu().numpy().astype(np.float32),
                )
            )
        return out


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str  # "gem" or "cluster"
    hub_repo: str
    hub_entry: str
    hub_kwargs: tuple[tuple[str, object], ...]
    descriptor_dim: int
    class_token_dim: int = 0
    image_size: int = 512


MODEL_SPECS = {
    "cosplace-vgg16-512": ModelSpec(
        "cosplace-vgg16-512", "gem", "gmberton/cosplace", "get_trained_model",
        (("backbone", "VGG16"), ("fc_output_dim", 512)), 512),
    "cosplace-resnet50-512": ModelSpec(
        "cosplace-resnet50-512", "gem", "gmberton/cosplace", "get_trained_model",
        (("backbone", "ResNet50"), ("fc_output_dim", 512)), 512),
    "eigenplaces-vgg16-512": ModelSpec(
        "eigenplaces-vgg16-512", "gem", "gmberton/eigenplaces", "get_trained_model",
        (("backbone", "VGG16"), ("fc_output_dim", 512)), 512),
    "eigenplaces-resnet50-512": ModelSpec(
        "eigenplaces-resnet50-512", "gem", "gmberton/eigenplaces", "get_trained_model",
        (("backbone", "ResNet50"), ("fc_output_dim", 512)), 512),
    "salad-full": ModelSpec(
        "salad-full", "cluster", "serizba/salad", "dinov2_salad",
        (), 8192, class_token_dim=256, image_size=504),
    "salad-compact": ModelSpec(
        "salad-compact", "cluster", "serizba/salad", "dinov2_salad",
        (("num_channels", 128), ("token_dim", 32)), 512, class_token_dim=32,
        image_size=504),
}


def load_model(name: str, device: str = "cpu"):
    """Build the adapter for a registered model, fetching released weights
    through torch.hub. Raises ModelLoadFailure when the name is unknown or
    the weights cannot be fetched (e.g. offline)."""
    spec = MODEL_SPECS.get(name)
    if spec is None:
        raise ModelLoadFailure(
            f"unknown model {name!r}; supported: {', '.join(sorted(MODEL_SPECS))}"
        )
    try:
        model = torch.hub.load(
            spec.hub_repo, spec.hub_entry, trust_repo=True, **dict(spec.hub_kwargs)
        ).to(device)
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load {name!r} via torch.hub: {exc}") from exc
    return wrap_model(model, spec)


def wrap_model(model: torch.nn.Module, spec: ModelSpec):
    """Wrap an already-constructed model in the right tap adapter (split out
    so tests can inject stub models without torch.hub)."""
    if spec.kind == "gem":
        return GemModelAdapter(model)
    return ClusterModelAdapter(model)


def preprocess(image, image_size: int) -> torch.Tensor:
    """PIL image -> normalized (3, S, S) tensor with ImageNet statistics."""
    image = image.convert("RGB").resize((image_size, image_size))
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
    return torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32))
