"""Shared fixtures: in-process HTTP servers standing in for the wiki API
and the chat-completions endpoint. Everything binds to 127.0.0.1 so the
suite runs with no outside network."""

from __future__ import annotations

import io
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlsplit

import pytest
from PIL import Image


def png_bytes(width: int, height: int, color=(120, 40, 200)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, "PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# wiki site


class WikiSite:
    """Scripted wiki: search results, article HTML, image files.

    ``fail_once`` maps a path prefix to a count of 503 responses to serve
    before succeeding, for retry tests. Every request lands in ``log``.
    """

    def __init__(self):
        self.search: dict[str, list[str]] = {}
        self.articles: dict[str, str] = {}
        self.images: dict[str, bytes] = {}
        self.fail_once: dict[str, int] = {}
        self.log: list[str] = []
        self.lock = threading.Lock()

    def add_article(self, title: str, figures: list[dict]) -> None:
        """figures: {src, caption, w?, h?, legacy?} dicts rendered to HTML."""
        parts = ["<html><body><p>Lead paragraph.</p>"]
        for fig in figures:
            size = ""
            if fig.get("w"):
                size = f' width="{fig["w"]}" height="{fig["h"]}"'
            if fig.get("legacy"):
                parts.append(
                    '<div class="thumb tright"><div class="thumbinner">'
                    f'<img src="{fig["src"]}"{size}/>'
                    f'<div class="thumbcaption">{fig["caption"]}</div></div></div>'
                )
            elif fig.get("caption") is None:
                parts.append(f'<figure><img src="{fig["src"]}"{size}/></figure>')
            else:
                parts.append(
                    f'<figure><img src="{fig["src"]}"{size}/>'
                    f'<figcaption>{fig["caption"]}</figcaption></figure>'
                )
        parts.append("</body></html>")
        self.articles[title] = "".join(parts)


def populate_default_site(site: WikiSite) -> None:
    """Two keywords, three articles, four large images (one shared)."""
    site.images["/img/spider.png"] = png_bytes(200, 150, (10, 90, 30))
    site.images["/img/silk.png"] = png_bytes(180, 180, (200, 120, 10))
    site.images["/img/beam.png"] = png_bytes(256, 144, (90, 10, 160))
    site.images["/img/shared.png"] = png_bytes(150, 150, (5, 5, 5))
    site.images["/img/tiny.png"] = png_bytes(40, 40, (250, 0, 0))

    site.search["spider silk"] = ["Spider silk", "Silk protein"]
    site.search["composite beams"] = ["Beam lattice"]

    site.add_article(
        "Spider silk",
        [
            {"src": "/img/spider.png", "caption": "A spider web glistening with dew"},
            {"src": "/img/icon.png", "caption": "tiny icon", "w": 24, "h": 24},
            {"src": "/img/shared.png", "caption": "Shared electron micrograph"},
            {"src": "/img/nocap.png", "caption": None},
        ],
    )
    site.add_article(
        "Silk protein",
        [
            {"src": "/img/silk.png", "caption": "Fibroin secondary structure", "legacy": True},
            {"src": "/img/shared.png", "caption": "Shared electron micrograph, second home"},
            {"src": "/img/tiny.png", "caption": "Undeclared size, small once downloaded"},
        ],
    )
    site.add_article(
        "Beam lattice",
        [{"src": "/img/beam.png", "caption": "A 3D printed lattice beam under load"}],
    )


def _wiki_handler(site: WikiSite):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code: int, body: bytes, ctype: str):
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            parsed = urlsplit(self.path)
            with site.lock:
                site.log.append(self.path)
                for prefix, remaining in site.fail_once.items():
                    if parsed.path.startswith(prefix) and remaining > 0:
                        site.fail_once[prefix] = remaining - 1
                        self._send(503, b"try later", "text/plain")
                        return
            if parsed.path == "/w/api.php":
                params = parse_qs(parsed.query)
                if params.get("list") == ["search"]:
                    term = params.get("srsearch", [""])[0]
                    limit = int(params.get("srlimit", ["10"])[0])
                    titles = site.search.get(term, [])[:limit]
                    body = {"query": {"search": [{"title": t} for t in titles]}}
                    self._send(200, json.dumps(body).encode(), "application/json")
                    return
                self._send(400, b"unsupported api call", "text/plain")
                return
            if parsed.path.startswith("/wiki/"):
                title = unquote(parsed.path[len("/wiki/") :]).replace("_", " ")
                html = site.articles.get(title)
                if html is None:
                    self._send(404, b"no such article", "text/plain")
                    return
                self._send(200, html.encode(), "text/html")
                return
            payload = site.images.get(parsed.path)
            if payload is None:
                self._send(404, b"no such file", "text/plain")
                return
            self._send(200, payload, "image/png")

    return Handler


# ---------------------------------------------------------------------------
# chat-completions endpoint


_CAPTION_RE = re.compile(r"```(.*?)```", re.S)
_MARKER_RE = re.compile(r"\[(?:empty|noopener|fail:\d+)\]\s*")


class RefineEndpoint:
    """Scripted chat endpoint. Captions steer behaviour via markers:

    ``[fail:N]`` serve N 500s for this caption before succeeding,
    ``[empty]`` return an empty completion,
    ``[noopener]`` return text that skips the standard opener.
    """

    def __init__(self):
        self.calls: list[dict] = []
        self.counts: dict[str, int] = {}
        self.lock = threading.Lock()

    def reply_for(self, caption: str) -> str:
        core = _MARKER_RE.sub("", caption).strip().rstrip(".")
        return f"The image shows {core}, rendered for inspection."


def _refine_handler(endpoint: RefineEndpoint):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send_json(self, code: int, body: dict):
            payload = json.dumps(body).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_POST(self):
            if urlsplit(self.path).path != "/v1/chat/completions":
                self._send_json(404, {"error": "unknown route"})
                return
            size = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(size) or b"{}")
            user_text = ""
            has_image = False
            for message in body.get("messages", []):
                if message.get("role") != "user":
                    continue
                content = message.get("content")
                if isinstance(content, str):
                    user_text = content
                else:
                    for part in content:
                        if part.get("type") == "text":
                            user_text = part["text"]
                        if part.get("type") == "image_url":
                            has_image = True
            m = _CAPTION_RE.search(user_text)
            caption = m.group(1) if m else user_text
            with endpoint.lock:
                endpoint.calls.append(
                    {
                        "model": body.get("model"),
                        "caption": caption,
                        "has_image": has_image,
                        "auth": self.headers.get("Authorization"),
                        "temperature": body.get("temperature"),
                    }
                )
                endpoint.counts[caption] = endpoint.counts.get(caption, 0) + 1
                count = endpoint.counts[caption]
            fail = re.search(r"\[fail:(\d+)\]", caption)
            if fail and count <= int(fail.group(1)):
                self._send_json(500, {"error": "scripted failure"})
                return
            if "[empty]" in caption:
                text = ""
            elif "[noopener]" in caption:
                text = "A bare description with a nonstandard opening."
            else:
                text = endpoint.reply_for(caption)
            self._send_json(200, {"choices": [{"message": {"content": text}}]})

    return Handler


# ---------------------------------------------------------------------------
# fixtures


def _serve(handler_cls):
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


@pytest.fixture
def wiki_site():
    site = WikiSite()
    populate_default_site(site)
    server, thread = _serve(_wiki_handler(site))
    site.base_url = f"http://127.0.0.1:{server.server_address[1]}"
    yield site
    server.shutdown()
    thread.join()
    server.server_close()


@pytest.fixture
def refine_endpoint():
    endpoint = RefineEndpoint()
    server, thread = _serve(_refine_handler(endpoint))
    endpoint.base_url = f"http://127.0.0.1:{server.server_address[1]}"
    yield endpoint
    server.shutdown()
    thread.join()
    server.server_close()
