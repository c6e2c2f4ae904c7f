"""Prompt composition, axis-annotated images, and attention providers.

Two providers exist behind the same interface: an HTTP adapter for a
multimodal LLM endpoint and a deterministic fixture directory of canned
`<image_id>.attn.json` responses. Raw response text is cached to disk before
parsing so runs can be replayed offline.
"""
from __future__ import annotations

import base64
import io
import os
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .attention import AttentionSpec, parse_attention_points
from .errors import (
    AttnVprError,
    EmptyCity,
    ExhaustedRetries,
    FixtureMissing,
    ProviderUnavailable,
)
from .tensor_io import Manifest, _atomic_write

DEFAULT_API_KEY_ENV = "ATTNVPR_API_KEY"
AXIS_MARGIN_PX = 40
AXIS_TICKS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def load_prompt_template() -> str:
    return (
        resources.files("attnvpr")
        .joinpath("assets/prompts/attention_prompt.txt")
        .read_text(encoding="utf-8")
    )


def load_flood_simulation_prompt() -> str:
    """Documentation asset describing the synthetic flooding image prompt."""
    return (
        resources.files("attnvpr")
        .joinpath("assets/prompts/flood_simulation_prompt.txt")
        .read_text(encoding="utf-8")
    )


def build_prompt(city: str, template: str | None = None) -> str:
    """Substitute the city into the prompt template. Passing a mismatched
    city deliberately enables the reversed-city ablation."""
    if not city.strip():
        raise EmptyCity("city must be nonempty")
    template = template if template is not None else load_prompt_template()
    if "{city}" not in template:
        raise AttnVprError("prompt template lacks the {city} placeholder")
    return template.replace("{city}", city)


@dataclass
class AnnotatedImage:
    pixels: "object"  # PIL.Image.Image
    original_extent: tuple[int, int]  # (w, h)
    margin: int


def compose_axis_image(image) -> AnnotatedImage:
    """Extend the canvas by a fixed margin on the left and top and draw
    normalized-coordinate tick labels outside the frame. Pixels inside the
    original frame are copied unchanged."""
    from PIL import Image, ImageDraw

    image = image.convert("RGB")
    w, h = image.size
    m = AXIS_MARGIN_PX
    canvas = Image.new("RGB", (w + m, h + m), (255, 255, 255))
    canvas.paste(image, (m, m))
    draw = ImageDraw.Draw(canvas)
    for t in AXIS_TICKS:
        # x axis along the top edge
        px = m + t * w
        draw.line([(px, m - 6), (px, m - 1)], fill=(0, 0, 0))
        draw.text((px, m - 18), f"{t:.1f}", fill=(0, 0, 0), anchor="mm")
        # y axis along the left edge
        py = m + t * h
        draw.line([(m - 6, py), (m - 1, py)], fill=(0, 0, 0))
        draw.text((m - 20, py), f"{t:.1f}", fill=(0, 0, 0), anchor="mm")
    return AnnotatedImage(pixels=canvas, original_extent=(w, h), margin=m)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # "fixture" or "http"
    fixture_dir: str | None = None
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout_s: float = 60.0
    max_retries: int = 3
    max_concurrent: int = 4
    backoff_base_s: float = 0.5  # doubled per retry

    def __post_init__(self):
        if self.kind not in ("fixture", "http"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.max_retries > 5:
            raise ValueError("max_retries must be <= 5")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.kind == "fixture" and not self.fixture_dir:
            raise ValueError("fixture provider requires a directory")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http provider requires an endpoint URL")

    @classmethod
    def parse(cls, spec: str, **kwargs) -> "ProviderConfig":
        """Parse the CLI form `fixture:DIR` or `http:URL`."""
        kind, _, rest = spec.partition(":")
        if kind == "fixture":
            return cls(kind="fixture", fixture_dir=rest, **kwargs)
        if kind == "http":
            return cls(kind="http", endpoint=rest, **kwargs)
        raise ValueError(f"provider must be fixture:DIR or http:URL, got {spec!r}")


@dataclass
class AttentionResult:
    spec: AttentionSpec
    raw_text: str
    retries: int


def _post_http(cfg: ProviderConfig, prompt: str, image) -> str:
    import requests

    api_key = os.environ.get(cfg.api_key_env)
    if not api_key:
        raise ProviderUnavailable(f"API key env var {cfg.api_key_env} is not set")
    buf = io.BytesIO()
    image.convert("RGB").save(buf, format="PNG")
    payload = {
        "model": cfg.model,
        "prompt": prompt,
        "image_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
    }
    try:
        resp = requests.post(
            cfg.endpoint,
            json=payload,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=cfg.timeout_s,
        )
        resp.raise_for_status()
    except requests.RequestException as exc:
        raise ProviderUnavailable(f"provider request failed: {exc}") from exc
    return resp.text


class AttentionClient:
    """Fetches and parses attention specs with retry, backoff, and caching.

    In-flight HTTP requests are bounded by max_concurrent via a semaphore so
    callers may fan out freely.
    """

    def __init__(self, cfg: ProviderConfig, transport=None):
        self.cfg = cfg
        self._transport = transport or _post_http  # injectable for tests
        self._gate = threading.Semaphore(cfg.max_concurrent)

    def _fetch_raw(self, image_id: str, image, prompt: str) -> str:
        if self.cfg.kind == "fixture":
            path = Path(self.cfg.fixture_dir) / f"{image_id}.attn.json"
            if not path.exists():
                raise FixtureMissing(f"fixture file {path} does not exist")
            return path.read_text(encoding="utf-8")
        with self._gate:
            return self._transport(self.cfg, prompt, image)

    def request_attention(
        self, image_id: str, image, city: str, out_dir=None
    ) -> AttentionResult:
        """Fetch, cache, and parse one attention response. Malformed
        responses are retried with the same prompt up to max_retries."""
        cache_path = Path(out_dir) / f"{image_id}.attn.json" if out_dir is not None else None
        if cache_path is not None and cache_path.exists():
            raw = cache_path.read_text(encoding="utf-8")
            return AttentionResult(spec=parse_attention_points(raw), raw_text=raw, retries=0)

        prompt = build_prompt(city)
        annotated = compose_axis_image(image).pixels if (
            image is not None and self.cfg.kind == "http"
        ) else image
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0 and self.cfg.backoff_base_s > 0:
                time.sleep(self.cfg.backoff_base_s * 2 ** (attempt - 1))
            try:
                raw = self._fetch_raw(image_id, annotated, prompt)
            except (FixtureMissing, ProviderUnavailable):
                raise
            try:
                spec = parse_attention_points(raw)
            except AttnVprError as exc:
                last_error = exc
                continue
            if cache_path is not None:
                cache_path.parent.mkdir(parents=True, exist_ok=True)
                _atomic_write(cache_path, raw.encode("utf-8"))
            return AttentionResult(spec=spec, raw_text=raw, retries=attempt)
        raise ExhaustedRetries(
            f"no parseable response for {image_id!r} after "
            f"{self.cfg.max_retries + 1} attempts: {last_error}"
        )


def generate_attention_files(
    manifest: Manifest,
    city: str,
    cfg: ProviderConfig,
    out_dir,
    image_root=None,
) -> dict[str, AttentionSpec]:
    """Resolve an AttentionSpec for every manifest entry, writing the raw
    responses to `<out_dir>/<id>.attn.json`."""
    from concurrent.futures import ThreadPoolExecutor

    client = AttentionClient(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry):
        image = None
        if cfg.kind == "http":
            from PIL import Image

            path = Path(entry.path)
            if image_root is not None and not path.is_absolute():
                path = Path(image_root) / path
            image = Image.open(path)
        return entry.id, client.request_attention(entry.id, image, city, out_dir=out_dir).spec

    if cfg.max_concurrent > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_concurrent) as pool:
            pairs = list(pool.map(one, manifest.entries))
    else:
        pairs = [one(e) for e in manifest.entries]
    return dict(pairs)
