"""Chat-template rendering for the two supported model families.

``idefics_style``::

    User:<image>{q}<end_of_utterance>
    Assistant:{a}<end_of_utterance>

``phi3_style``::

    <|user|>
    <|image_1|>
    {q}<|end|>
    <|assistant|>
    {a}<|end|>

Only the first user turn carries image markers; follow-up turns are
text-only. Marker strings are stripped from payload text before
rendering so the result can be parsed back unambiguously.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

FAMILIES = ("idefics_style", "phi3_style")

_IDEFICS_MARKERS = ("<image>", "<end_of_utterance>")
_PHI3_MARKER_RE = re.compile(r"<\|(?:user|assistant|end|image_\d+)\|>")


@dataclass(frozen=True)
class ChatTurn:
    user: str
    assistant: str


def sanitize_payload(text: str, family: str) -> str:
    """Remove the family's control markers from free text."""
    if family == "idefics_style":
        for marker in _IDEFICS_MARKERS:
            text = text.replace(marker, "")
        return text
    if family == "phi3_style":
        return _PHI3_MARKER_RE.sub("", text)
    raise ValueError(f"unsupported template family {family!r}")


def render_turns(turns: list[ChatTurn], family: str, n_images: int = 1) -> str:
    """Render a conversation; images appear only in the first user turn."""
    if family not in FAMILIES:
        raise ValueError(f"unsupported template family {family!r}")
    if not turns:
        raise ValueError("no turns to render")
    parts: list[str] = []
    for i, turn in enumerate(turns):
        q = sanitize_payload(turn.user, family)
        a = sanitize_payload(turn.assistant, family)
        first = i == 0
        if family == "idefics_style":
            image_marker = "<image>" * n_images if first else ""
            parts.append(f"User:{image_marker}{q}<end_of_utterance>")
            parts.append(f"Assistant:{a}<end_of_utterance>")
        else:
            image_line = "".join(f"<|image_{j}|>" for j in range(1, n_images + 1))
            parts.append("<|user|>")
            if first and image_line:
                parts.append(image_line)
            parts.append(f"{q}<|end|>")
            parts.append("<|assistant|>")
            parts.append(f"{a}<|end|>")
    return "\n".join(parts)


def parse_turns(rendered: str, family: str) -> tuple[list[ChatTurn], int]:
    """Invert render_turns; returns (turns, image count). For testing the
    rendering is lossless, and for auditing existing training files."""
    if family == "idefics_style":
        pattern = re.compile(
            r"User:((?:<image>)*)(.*?)<end_of_utterance>\nAssistant:(.*?)<end_of_utterance>",
            re.S,
        )
        turns = []
        n_images = 0
        for m in pattern.finditer(rendered):
            if not turns:
                n_images = m.group(1).count("<image>")
            turns.append(ChatTurn(m.group(2), m.group(3)))
        return turns, n_images
    if family == "phi3_style":
        pattern = re.compile(
            r"<\|user\|>\n((?:<\|image_\d+\|>)*\n)?(.*?)<\|end\|>\n<\|assistant\|>\n(.*?)<\|end\|>",
            re.S,
        )
        turns = []
        n_images = 0
        for m in pattern.finditer(rendered):
            if not turns and m.group(1):
                n_images = len(re.findall(r"<\|image_\d+\|>", m.group(1)))
            turns.append(ChatTurn(m.group(2), m.group(3)))
        return turns, n_images
    raise ValueError(f"unsupported template family {family!r}")
