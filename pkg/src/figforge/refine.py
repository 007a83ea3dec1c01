"""Caption refinement through a vision-capable chat endpoint.

Three shipped prompt templates (``wiki``, ``paper_concise``,
``paper_reasoned``) turn a short caption into a detailed description.
The endpoint speaks the common chat-completions wire format: POST
``/v1/chat/completions`` with a messages array whose user message
carries the prompt text plus the image as a base64 data URL, so any
compatible backend (local server or hosted API) can serve refinement.

Responses are validated softly: text not opening with one of the
expected phrases is tagged ``warn:opener`` but always kept.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

import requests

log = logging.getLogger(__name__)

TEMPLATE_IDS = ("wiki", "paper_concise", "paper_reasoned")

ACCEPTED_OPENERS = ("the image shows", "shown in the image", "the image depicts")


class RefineError(Exception):
    def __init__(self, message: str, record_id: str | None = None):
        super().__init__(message)
        self.record_id = record_id


@dataclass(frozen=True)
class RefineTemplate:
    id: str
    system_text: str
    user_text: str  # contains the {caption} placeholder exactly once

    def __post_init__(self) -> None:
        if self.user_text.count("{caption}") != 1:
            raise ValueError(f"template {self.id!r} must contain one {{caption}} placeholder")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    max_in_flight: int = 2
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    temperature: float = 0.2  # this artifact's default, config-exposed
    max_tokens: int = 1024
    api_key_env: str = "FIGFORGE_API_KEY"

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass
class RefineResult:
    record_id: str
    refined_text: str
    template_id: str
    model_name: str
    latency: float
    validation: str  # "pass" | "warn:<reason>" | "error:<message>"

    def to_json(self) -> dict:
        return dict(self.__dict__)


def load_templates(path: str | None = None) -> dict[str, RefineTemplate]:
    """Load prompt templates; defaults to the shipped template file."""
    if path is None:
        raw = resources.files("figforge.data").joinpath("refine_templates.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    data = json.loads(raw)
    out = {}
    for tid, body in data.items():
        out[tid] = RefineTemplate(tid, body["system"], body["user"])
    return out


def escape_caption(caption: str) -> str:
    """Backticks collide with the prompt's quoting delimiters; use apostrophes."""
    return caption.replace("`", "'")


def build_prompt(template: RefineTemplate, caption: str) -> str:
    """Full prompt text: system paragraph, blank line, filled user text."""
    caption = caption.strip()
    if not caption:
        raise ValueError("caption must be non-empty")
    user = template.user_text.replace("{caption}", escape_caption(caption))
    return template.system_text + "\n\n" + user


def split_prompt(prompt: str) -> tuple[str, str]:
    """Undo build_prompt's system/user concatenation.

    The system part is a single paragraph by construction, so the first
    blank line is the boundary.
    """
    system, _, user = prompt.partition("\n\n")
    return system, user


def validate_response(text: str) -> str:
    lowered = text.strip().lower()
    if any(lowered.startswith(op) for op in ACCEPTED_OPENERS):
        return "pass"
    return "warn:opener"


def _image_part(image_bytes: bytes, mime: str = "image/png") -> dict:
    b64 = base64.b64encode(image_bytes).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{b64}"}}


def refine_caption(
    cfg: EndpointConfig,
    image_bytes: bytes | None,
    prompt: str,
    record_id: str = "",
) -> RefineResult:
    """One refinement call; returns the model text verbatim.

    Raises RefineError (carrying record_id) after retries are exhausted
    or when the endpoint returns an empty completion.
    """
    system, user = split_prompt(prompt)
    content: list[dict] | str
    if image_bytes is not None:
        content = [{"type": "text", "text": user}, _image_part(image_bytes)]
    else:
        content = user
    payload = {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": content},
        ],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    url = cfg.base_url.rstrip("/") + "/v1/chat/completions"
    start = time.monotonic()
    last_exc: Exception | None = None
    for attempt in range(cfg.max_attempts):
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise RefineError(f"HTTP {resp.status_code}", record_id)
            resp.raise_for_status()
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            break
        except (requests.RequestException, RefineError, KeyError, IndexError, ValueError) as exc:
            last_exc = exc
            if attempt + 1 < cfg.max_attempts:
                time.sleep(cfg.backoff * (2**attempt))
    else:
        raise RefineError(f"endpoint failed after {cfg.max_attempts} attempts: {last_exc}", record_id)

    latency = time.monotonic() - start
    if not isinstance(text, str) or not text.strip():
        raise RefineError("endpoint returned an empty completion", record_id)
    return RefineResult(
        record_id=record_id,
        refined_text=text,
        template_id="",
        model_name=cfg.model_name,
        latency=latency,
        validation=validate_response(text),
    )


# ---------------------------------------------------------------------------
# batch driver


@dataclass(frozen=True)
class BatchItem:
    record_id: str
    caption: str
    image_path: str | None = None


def _load_done_ids(results_path: str) -> set[str]:
    done = set()
    if os.path.exists(results_path):
        with open(results_path, encoding="utf-8") as fh:
            for line in fh:
                try:
                    row = json.loads(line)
                except ValueError:
                    continue
                if not str(row.get("validation", "")).startswith("error"):
                    done.add(row["record_id"])
    return done


def refine_batch(
    cfg: EndpointConfig,
    items: Iterable[BatchItem],
    template: RefineTemplate,
    out_dir: str,
) -> list[RefineResult]:
    """Refine a batch resumably with bounded concurrency.

    Completed ids found in ``out_dir/results.jsonl`` are not re-sent.
    Results append to that file as they finish; ``manifest.json`` lists
    every input id in input order with its final status. The returned
    list is in input order, failures included as ``error:`` results.
    """
    from concurrent.futures import ThreadPoolExecutor, as_completed

    items = list(items)
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.jsonl")
    done = _load_done_ids(results_path)

    prior: dict[str, RefineResult] = {}
    if done:
        with open(results_path, encoding="utf-8") as fh:
            for line in fh:
                try:
                    row = json.loads(line)
                except ValueError:
                    continue
                if row.get("record_id") in done:
                    prior[row["record_id"]] = RefineResult(**row)

    def work(item: BatchItem) -> RefineResult:
        image_bytes = None
        if item.image_path:
            with open(item.image_path, "rb") as fh:
                image_bytes = fh.read()
        prompt = build_prompt(template, item.caption)
        result = refine_caption(cfg, image_bytes, prompt, record_id=item.record_id)
        result.template_id = template.id
        return result

    by_id: dict[str, RefineResult] = dict(prior)
    todo = [item for item in items if item.record_id not in done]
    with open(results_path, "a", encoding="utf-8") as out_fh:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            futures = {pool.submit(work, item): item for item in todo}
            for future in as_completed(futures):
                item = futures[future]
                try:
                    result = future.result()
                except (RefineError, ValueError, OSError) as exc:
                    log.warning("refine failed for %s: %s", item.record_id, exc)
                    result = RefineResult(
                        record_id=item.record_id,
                        refined_text="",
                        template_id=template.id,
                        model_name=cfg.model_name,
                        latency=0.0,
                        validation=f"error:{exc}",
                    )
                by_id[item.record_id] = result
                out_fh.write(json.dumps(result.to_json(), ensure_ascii=False) + "\n")
                out_fh.flush()

    ordered = [by_id[item.record_id] for item in items if item.record_id in by_id]
    manifest = {
        "template_id": template.id,
        "model_name": cfg.model_name,
        "items": [
            {"record_id": item.record_id, "status": by_id[item.record_id].validation if item.record_id in by_id else "missing"}
            for item in items
        ],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return ordered
