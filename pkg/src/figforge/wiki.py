"""Encyclopedia harvesting: keyword search, article fetch, image-caption scraping.

Talks to any MediaWiki-compatible site (search API at ``/w/api.php``,
articles at ``/wiki/<TITLE>``); endpoints are configurable so tests can
point at a local fixture server. Downloads are throttled per host and
retried with exponential backoff. Harvest output is an append-only JSONL
store plus a content-addressed image directory, safe to resume.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from html.parser import HTMLParser
from importlib import resources
from urllib.parse import quote, urljoin, urlsplit

import requests
from PIL import Image

log = logging.getLogger(__name__)


class WikiError(Exception):
    pass


@dataclass(frozen=True)
class SearchHit:
    keyword: str
    title: str
    rank: int  # 1-based API order


@dataclass
class WikiImageRecord:
    image_url: str
    original_caption: str
    article_url: str
    article_title: str
    keyword: str
    intrinsic_width_px: int = 0
    intrinsic_height_px: int = 0
    content_hash: str = ""
    image_ref: str = ""

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "WikiImageRecord":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def load_default_keywords() -> list[str]:
    """The shipped search-term list, one keyword per line."""
    text = resources.files("figforge.data").joinpath("wiki_keywords.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_keywords_file(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# politeness: spacing and one in-flight request per host


class HostThrottle:
    def __init__(self, min_interval: float = 0.5):
        self.min_interval = min_interval
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}
        self._guard = threading.Lock()

    def _lock_for(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def slot(self, url: str):
        host = urlsplit(url).netloc
        lock = self._lock_for(host)

        class _Slot:
            def __enter__(slot_self):
                lock.acquire()
                wait = self._last.get(host, 0.0) + self.min_interval - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
                return slot_self

            def __exit__(slot_self, *exc):
                self._last[host] = time.monotonic()
                lock.release()

        return _Slot()


@dataclass
class WikiClient:
    base_url: str = "https://en.wikipedia.org"
    api_path: str = "/w/api.php"
    article_path: str = "/wiki/"
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    min_interval: float = 0.5
    user_agent: str = "figforge/0.1 (corpus building; contact: repository issues)"
    session: requests.Session = field(default_factory=requests.Session)
    throttle: HostThrottle = field(default_factory=HostThrottle)

    def __post_init__(self) -> None:
        self.throttle.min_interval = self.min_interval
        self.session.headers.setdefault("User-Agent", self.user_agent)

    def _get(self, url: str, params: dict | None = None) -> requests.Response:
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                with self.throttle.slot(url):
                    resp = self.session.get(url, params=params, timeout=self.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise WikiError(f"HTTP {resp.status_code} from {url}")
                resp.raise_for_status()
                return resp
            except (requests.RequestException, WikiError) as exc:
                last_exc = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * (2**attempt))
        raise WikiError(f"request failed after {self.max_attempts} attempts: {last_exc}")

    # -- API operations ----------------------------------------------------

    def search_articles(self, keyword: str, limit: int = 100) -> list[SearchHit]:
        """Top article titles for a keyword, in API rank order."""
        if not keyword:
            raise ValueError("keyword must be non-empty")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        params = {
            "action": "query",
            "list": "search",
            "srsearch": keyword,
            "srlimit": str(min(limit, 500)),
            "format": "json",
        }
        resp = self._get(urljoin(self.base_url, self.api_path), params=params)
        try:
            results = resp.json()["query"]["search"]
        except (ValueError, KeyError) as exc:
            raise WikiError(f"malformed search response for {keyword!r}: {exc}") from exc
        hits = []
        for rank, item in enumerate(results[:limit], start=1):
            title = str(item.get("title", "")).strip()
            if title:
                hits.append(SearchHit(keyword, title, rank))
        return hits

    def article_url(self, title: str) -> str:
        return urljoin(self.base_url, self.article_path + quote(title.replace(" ", "_")))

    def fetch_article(self, title: str) -> str:
        return self._get(self.article_url(title)).text

    def fetch_bytes(self, url: str) -> bytes:
        return self._get(url).content


# ---------------------------------------------------------------------------
# article markup parsing


class _FigureParser(HTMLParser):
    """Collects (img src, caption text, declared w/h) from rendered article HTML.

    Handles the modern <figure>/<figcaption> markup and the legacy
    div.thumb / div.thumbcaption layout.
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.found: list[tuple[str, str, int, int]] = []
        self._stack: list[dict] = []
        self._caption_depth = 0

    @staticmethod
    def _classes(attrs) -> set[str]:
        for name, value in attrs:
            if name == "class" and value:
                return set(value.split())
        return set()

    def handle_starttag(self, tag, attrs):
        classes = self._classes(attrs)
        if tag == "figure" or (tag == "div" and ("thumb" in classes or "thumbinner" in classes)):
            self._stack.append({"src": "", "w": 0, "h": 0, "caption": [], "depth": 1})
            return
        if not self._stack:
            return
        ctx = self._stack[-1]
        ctx["depth"] += 1
        if tag == "img" and not ctx["src"]:
            a = dict(attrs)
            ctx["src"] = a.get("src") or ""
            for key, slot in (("width", "w"), ("height", "h")):
                try:
                    ctx[slot] = int(a.get(key) or 0)
                except ValueError:
                    ctx[slot] = 0
        if tag == "figcaption" or (tag == "div" and "thumbcaption" in classes):
            self._caption_depth = ctx["depth"]

    def handle_endtag(self, tag):
        if not self._stack:
            return
        ctx = self._stack[-1]
        if self._caption_depth and ctx["depth"] == self._caption_depth and tag in ("figcaption", "div"):
            self._caption_depth = 0
        ctx["depth"] -= 1
        if ctx["depth"] == 0:
            self._stack.pop()
            caption = " ".join("".join(ctx["caption"]).split())
            if ctx["src"] and caption:
                self.found.append((ctx["src"], caption, ctx["w"], ctx["h"]))

    def handle_data(self, data):
        if self._stack and self._caption_depth:
            self._stack[-1]["caption"].append(data)


def extract_article_images(
    article_markup: str, base_url: str, icon_min_px: int = 128
) -> list[tuple[str, str]]:
    """(absolute image URL, caption) pairs for captioned figures in an article.

    Images whose declared width/height mark them as icons (shorter side
    below ``icon_min_px``) are skipped; images without declared sizes are
    kept for the post-download size check. Malformed markup yields an
    empty list, never an exception.
    """
    parser = _FigureParser()
    try:
        parser.feed(article_markup)
        parser.close()
    except Exception as exc:  # html.parser is lenient; belt and braces
        log.warning("markup parse failed: %s", exc)
        return []
    out = []
    seen = set()
    for src, caption, w, h in parser.found:
        if w and h and min(w, h) < icon_min_px:
            continue
        url = urljoin(base_url, src)
        if url in seen:
            continue
        seen.add(url)
        out.append((url, caption))
    return out


# ---------------------------------------------------------------------------
# harvest driver


@dataclass
class HarvestStats:
    keywords: int = 0
    articles: int = 0
    records_added: int = 0
    duplicates: int = 0
    errors: int = 0
    skipped_small: int = 0


def _article_worker(
    client: WikiClient, hit: SearchHit, icon_min_px: int, known: frozenset[str]
) -> list[WikiImageRecord]:
    html = client.fetch_article(hit.title)
    article_url = client.article_url(hit.title)
    records = []
    for image_url, caption in extract_article_images(html, article_url, icon_min_px):
        if image_url in known:
            continue
        records.append(
            WikiImageRecord(
                image_url=image_url,
                original_caption=caption,
                article_url=article_url,
                article_title=hit.title,
                keyword=hit.keyword,
            )
        )
    return records


def harvest(
    keywords: list[str],
    limit_per_keyword: int = 100,
    out_dir: str = "harvest",
    client: WikiClient | None = None,
    max_workers: int = 4,
    icon_min_px: int = 128,
    download_min_px: int = 128,
) -> list[WikiImageRecord]:
    """Search every keyword, scan the top articles, store image records.

    Appends to ``records.jsonl`` under ``out_dir`` and stores image bytes
    content-addressed under ``images/``; rerunning skips image URLs that
    are already present. Returns the records added by this run.
    """
    if not keywords:
        raise ValueError("keyword list is empty")
    client = client or WikiClient()
    os.makedirs(out_dir, exist_ok=True)
    records_path = os.path.join(out_dir, "records.jsonl")
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)

    seen: set[str] = set()
    if os.path.exists(records_path):
        with open(records_path, encoding="utf-8") as fh:
            for line in fh:
                try:
                    seen.add(json.loads(line)["image_url"])
                except (ValueError, KeyError):
                    continue

    stats = HarvestStats(keywords=len(keywords))
    added: list[WikiImageRecord] = []

    with open(records_path, "a", encoding="utf-8") as out_fh:
        for keyword in keywords:
            try:
                hits = client.search_articles(keyword, limit_per_keyword)
            except (WikiError, ValueError) as exc:
                log.warning("search failed for %r: %s", keyword, exc)
                stats.errors += 1
                continue
            known = frozenset(seen)
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = {
                    pool.submit(_article_worker, client, hit, icon_min_px, known): hit
                    for hit in hits
                }
                for future in as_completed(futures):
                    hit = futures[future]
                    try:
                        candidates = future.result()
                    except (WikiError, requests.RequestException) as exc:
                        log.warning("article %r failed: %s", hit.title, exc)
                        stats.errors += 1
                        continue
                    stats.articles += 1
                    # single-writer section: dedupe and persist on this thread
                    for rec in candidates:
                        if rec.image_url in seen:
                            stats.duplicates += 1
                            continue
                        try:
                            payload = client.fetch_bytes(rec.image_url)
                            with Image.open(io.BytesIO(payload)) as im:
                                im.load()
                                rec.intrinsic_width_px, rec.intrinsic_height_px = im.size
                        except (WikiError, requests.RequestException, OSError) as exc:
                            log.warning("image %r failed: %s", rec.image_url, exc)
                            stats.errors += 1
                            continue
                        if min(rec.intrinsic_width_px, rec.intrinsic_height_px) < download_min_px:
                            stats.skipped_small += 1
                            continue
                        digest = hashlib.sha256(payload).hexdigest()
                        ext = os.path.splitext(urlsplit(rec.image_url).path)[1] or ".bin"
                        rec.content_hash = digest
                        rec.image_ref = os.path.join("images", digest + ext.lower())
                        img_path = os.path.join(out_dir, rec.image_ref)
                        if not os.path.exists(img_path):
                            with open(img_path, "wb") as img_fh:
                                img_fh.write(payload)
                        out_fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
                        out_fh.flush()
                        seen.add(rec.image_url)
                        added.append(rec)
                        stats.records_added += 1

    manifest = {
        "keywords": len(keywords),
        "limit_per_keyword": limit_per_keyword,
        "deduplicated_by_image_url": True,
        "icon_min_px": icon_min_px,
        "download_min_px": download_min_px,
        "records_added": stats.records_added,
        "articles_visited": stats.articles,
        "errors": stats.errors,
        "skipped_small": stats.skipped_small,
    }
    with open(os.path.join(out_dir, "harvest_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return added


def load_harvest_records(out_dir: str) -> list[WikiImageRecord]:
    path = os.path.join(out_dir, "records.jsonl")
    if not os.path.exists(path):
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(WikiImageRecord.from_json(json.loads(line)))
    return out
