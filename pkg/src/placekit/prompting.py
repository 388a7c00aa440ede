"""Prompt rendering, chat-completion client, and the deterministic provider.

Two prompt templates are rendered from checked-in fixture files: a caption
prompt (two object names in, a two-object caption out) and a layout prompt
(caption in, a two-line layout out).  Both embed a task description plus
in-context demonstrations, and carry the sampling defaults the templates
were tuned with (temperature 1, top_p 0.5, max_tokens 100, zero penalties,
stop ``"."`` for captions and ``"\\n\\n"`` for layouts).

Completion backends:

* ``external`` — POSTs to an OpenAI-compatible chat-completions endpoint
  with retries and backoff;
* ``deterministic`` — synthesizes grammar-exact output locally from a seed,
  so the whole dataset pipeline runs reproducibly with no network.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Protocol

import requests

from .errors import (
    AuthError,
    EmptyResponseError,
    InvalidInputError,
    RateLimitedError,
    TransportError,
)
from .geometry import BBox, CanvasSpec
from .layout import CaptionSpec, Layout, ObjectAnnotation, head_noun, parse_caption, render_layout

__all__ = [
    "ChatMessage",
    "ChatRequest",
    "ProviderConfig",
    "ChatProvider",
    "DeterministicProvider",
    "ExternalProvider",
    "render_caption_prompt",
    "render_layout_prompt",
    "complete",
    "deterministic_caption",
    "deterministic_layout",
    "make_provider",
]


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "user" | "assistant"
    content: str


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call: task text, ICL exchange, sampling params."""

    model: str
    task_text: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 1.0
    top_p: float = 0.5
    max_tokens: int = 100
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    stop: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InvalidInputError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise InvalidInputError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens <= 0:
            raise InvalidInputError(f"max_tokens must be positive, got {self.max_tokens}")
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stop", tuple(self.stop))

    @property
    def final_user_turn(self) -> str:
        if not self.messages or self.messages[-1].role != "user":
            raise InvalidInputError("a chat request must end with a user turn")
        return self.messages[-1].content

    def to_payload(self) -> dict[str, Any]:
        """Wire form for an OpenAI-compatible chat-completions endpoint."""
        return {
            "model": self.model,
            "messages": [{"role": "system", "content": self.task_text}]
            + [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
            "stop": list(self.stop),
        }


@dataclass(frozen=True)
class ProviderConfig:
    """Completion-backend settings; ``external`` mode requires an endpoint."""

    mode: str = "deterministic"
    endpoint_url: str = ""
    model: str = "gpt-3.5-turbo"
    api_key_env_var: str = "PLACEKIT_API_KEY"
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    timeout_seconds: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.mode not in ("external", "deterministic"):
            raise InvalidInputError(f"provider mode must be 'external' or 'deterministic', got {self.mode!r}")
        if self.mode == "external" and not self.endpoint_url:
            raise InvalidInputError("external provider mode requires an endpoint URL")
        if self.max_attempts < 1:
            raise InvalidInputError(f"max_attempts must be >= 1, got {self.max_attempts}")


# --------------------------------------------------------------------------
# Prompt fixtures
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _fixture_text(name: str) -> str:
    return resources.files("placekit").joinpath(f"prompts/{name}").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _fixture_demos(name: str) -> tuple[ChatMessage, ...]:
    """Parse a demo fixture into alternating user/assistant turns.

    Blocks are separated by blank lines; within a block the first line is the
    user turn and the remaining lines (joined) are the assistant turn.
    """
    blocks = [b for b in _fixture_text(name).split("\n\n") if b.strip()]
    turns: list[ChatMessage] = []
    for block in blocks:
        lines = block.strip().splitlines()
        if len(lines) < 2:
            raise InvalidInputError(f"demo fixture {name} holds a block without a response: {block!r}")
        turns.append(ChatMessage("user", lines[0]))
        turns.append(ChatMessage("assistant", "\n".join(lines[1:])))
    return tuple(turns)


def _check_name(value: str, what: str) -> str:
    if not value or not value.strip() or "\n" in value:
        raise InvalidInputError(f"{what} must be a non-empty single-line string, got {value!r}")
    return value.strip()


def render_caption_prompt(object_a: str, object_b: str, *, model: str = "gpt-3.5-turbo") -> ChatRequest:
    """Caption request: task text, demos, then ``[Objects]: {a} and {b}.``"""
    a = _check_name(object_a, "object_a")
    b = _check_name(object_b, "object_b")
    messages = _fixture_demos("caption_demos.txt") + (
        ChatMessage("user", f"[Objects]: {a} and {b}."),
    )
    return ChatRequest(
        model=model,
        task_text=_fixture_text("caption_task.txt").strip(),
        messages=messages,
        stop=(".",),
    )


def render_layout_prompt(caption: str, *, model: str = "gpt-3.5-turbo") -> ChatRequest:
    """Layout request: task text, the four demos, then ``[Caption]: {caption}``."""
    cap = _check_name(caption, "caption")
    messages = _fixture_demos("layout_demos.txt") + (
        ChatMessage("user", f"[Caption]: {cap}"),
    )
    return ChatRequest(
        model=model,
        task_text=_fixture_text("layout_task.txt").strip(),
        messages=messages,
        stop=("\n\n",),
    )


# --------------------------------------------------------------------------
# Deterministic provider
# --------------------------------------------------------------------------

_ADJECTIVES = (
    "gray", "orange", "small", "large", "fluffy", "sleek", "bright",
    "striped", "spotted", "shiny", "old", "tiny", "pale", "dark",
)

_BACKGROUNDS = (
    "A realistic photo of a garden",
    "A realistic photo of a quiet street",
    "A realistic photo of a sunlit meadow",
    "A realistic photo of a cozy living room",
    "An oil painting of the sea",
    "A watercolor painting of a forest",
    "A realistic photo of a sandy beach",
    "A realistic photo of a snowy hillside",
)

_FALLBACK_SETTINGS = ("backdrop", "field", "surface", "expanse")

_OBJECTS_TURN_RE = re.compile(r"^\[Objects\]:\s*(?P<a>.+?) and (?P<b>.+?)\.?\s*$")


def _derived_seed(base_seed: int, text: str) -> int:
    digest = hashlib.blake2b(f"{base_seed}\x1f{text}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _article(phrase: str) -> str:
    return "an" if phrase[0].lower() in "aeiou" else "a"


def _noun_clashes(noun: str, text: str) -> bool:
    return re.search(rf"\b{re.escape(noun)}\b", text, re.IGNORECASE) is not None


def deterministic_caption(object_a: str, object_b: str, seed: int) -> str:
    """A seeded caption that always satisfies the two-object grammar.

    Each object gets one adjective; the background is chosen so that neither
    object's head noun occurs in it; left/right assignment and phrase order
    are drawn from the seed.
    """
    a = _check_name(object_a, "object_a")
    b = _check_name(object_b, "object_b")
    rng = random.Random(seed)
    phrases = {}
    for name in (a, b):
        adjective = rng.choice(_ADJECTIVES)
        phrases[name] = f"{_article(adjective)} {adjective} {name}"
    nouns = (head_noun(a), head_noun(b))
    candidates = [bg for bg in _BACKGROUNDS if not any(_noun_clashes(n, bg) for n in nouns)]
    if not candidates:
        words = [w for w in _FALLBACK_SETTINGS if not any(_noun_clashes(n, w) for n in nouns)]
        candidates = [f"A plain photo of a {words[0]}"]
    background = rng.choice(candidates)
    left, right = (a, b) if rng.random() < 0.5 else (b, a)
    if rng.random() < 0.5:
        return f"{background} with {phrases[left]} on the left and {phrases[right]} on the right."
    return f"{background} with {phrases[right]} on the right and {phrases[left]} on the left."


def deterministic_layout(spec: CaptionSpec, seed: int, canvas: CanvasSpec = CanvasSpec()) -> Layout:
    """A seeded two-object layout that always validates on the given canvas.

    The left object's box is drawn with x in [16, 64] and the right object's
    with x in [272, 336]; y in [64, 160]; heights in [140, 220]; widths in
    [140, 220] further capped so the left box never crosses x = 272 and the
    right box never leaves the canvas.  The disjoint x-ranges force
    relation(left object, right object) = LEFT.
    """
    if canvas.width < 476 or canvas.height < 380 or canvas.max_box_dim <= 220:
        raise InvalidInputError(
            "deterministic layouts need a canvas of at least 476x380 with max_box_dim > 220"
        )
    rng = random.Random(seed)

    def draw_box(x_lo: int, x_hi: int, wall: int) -> BBox:
        x = rng.randint(x_lo, x_hi)
        y = rng.randint(64, 160)
        w = rng.randint(140, min(220, wall - x))
        h = rng.randint(140, 220)
        return BBox(x, y, w, h)

    left_box = draw_box(16, 64, 272)
    right_box = draw_box(272, 336, canvas.width)
    return Layout(
        objects=(
            ObjectAnnotation(caption=spec.left_object, bbox=left_box),
            ObjectAnnotation(caption=spec.right_object, bbox=right_box),
        ),
        background_prompt=spec.background,
        canvas=canvas,
    )


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class DeterministicProvider:
    """Offline completion backend: synthesizes grammar-exact responses.

    The response seed is derived from the provider seed and the request's
    final user turn, so identical requests under the same seed always get
    identical responses.
    """

    seed: int = 0
    canvas: CanvasSpec = CanvasSpec()

    def complete(self, request: ChatRequest) -> str:
        final = request.final_user_turn.strip()
        call_seed = _derived_seed(self.seed, final)
        m = _OBJECTS_TURN_RE.match(final)
        if m is not None:
            return deterministic_caption(m.group("a"), m.group("b"), seed=call_seed)
        if final.startswith("[Caption]:"):
            caption = final[len("[Caption]:"):].strip()
            spec = parse_caption(caption)
            return render_layout(deterministic_layout(spec, seed=call_seed, canvas=self.canvas))
        raise InvalidInputError(
            "deterministic provider expects a final turn of the form "
            f"'[Objects]: a and b.' or '[Caption]: ...', got {final!r}"
        )


# --------------------------------------------------------------------------
# External provider
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExternalProvider:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Retries transport failures and 5xx responses with exponential backoff,
    honors 429 Retry-After, fails fast on authentication errors, and raises
    when the response carries no usable text.
    """

    config: ProviderConfig
    _sleep: Any = field(default=time.sleep, repr=False)

    def complete(self, request: ChatRequest) -> str:
        cfg = self.config
        api_key = os.environ.get(cfg.api_key_env_var, "")
        if not api_key:
            raise AuthError(f"environment variable {cfg.api_key_env_var} holds no API key")
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        last_error: Exception = TransportError("no attempt was made")
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                response = requests.post(
                    cfg.endpoint_url,
                    json=request.to_payload(),
                    headers=headers,
                    timeout=cfg.timeout_seconds,
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"attempt {attempt}: {exc}")
            else:
                if response.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials with HTTP {response.status_code}")
                if response.status_code == 429:
                    retry_after = _parse_retry_after(response.headers.get("Retry-After"))
                    last_error = RateLimitedError(
                        f"attempt {attempt}: rate limited", retry_after=retry_after
                    )
                    if attempt < cfg.max_attempts:
                        self._sleep(retry_after if retry_after is not None else _backoff(cfg, attempt))
                    continue
                elif response.status_code >= 500:
                    last_error = TransportError(f"attempt {attempt}: HTTP {response.status_code}")
                elif response.status_code != 200:
                    raise TransportError(f"endpoint returned HTTP {response.status_code}")
                else:
                    return _extract_content(response)
            if attempt < cfg.max_attempts:
                self._sleep(_backoff(cfg, attempt))
        raise last_error


def _backoff(cfg: ProviderConfig, attempt: int) -> float:
    return cfg.backoff_seconds * (2 ** (attempt - 1))


def _parse_retry_after(header: str | None) -> float | None:
    if header is None:
        return None
    try:
        value = float(header)
    except ValueError:
        return None
    return value if math.isfinite(value) and value >= 0 else None


def _extract_content(response: Any) -> str:
    try:
        body = response.json()
    except ValueError as exc:
        raise EmptyResponseError(f"endpoint returned non-JSON body: {exc}") from exc
    choices = body.get("choices") if isinstance(body, dict) else None
    if not choices:
        raise EmptyResponseError("endpoint response holds no choices")
    message = choices[0].get("message") if isinstance(choices[0], dict) else None
    content = message.get("content") if isinstance(message, dict) else None
    if not isinstance(content, str) or not content.strip():
        raise EmptyResponseError("endpoint response holds no message content")
    return content


def make_provider(config: ProviderConfig, *, seed: int = 0, canvas: CanvasSpec = CanvasSpec()) -> ChatProvider:
    if config.mode == "deterministic":
        return DeterministicProvider(seed=seed, canvas=canvas)
    return ExternalProvider(config=config)


def complete(request: ChatRequest, config: ProviderConfig, *, seed: int = 0) -> str:
    """Resolve the configured backend and run one completion."""
    return make_provider(config, seed=seed).complete(request)
