"""Figure-caption pairing for PDF documents.

Walks every page, collects embedded raster images and text blocks, keeps
the blocks that look like figure captions, and pairs each image with the
nearest caption below it. All coordinates handed to callers use a
top-down frame: y grows downward, so "below" means larger y.

Outputs can be persisted as one PNG per paired image plus a JSONL
sidecar describing the pairs.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

from PIL import Image

from .content import RawImagePlacement, interpret_page
from .document import PdfDocument, PdfPage
from .objects import PdfError, PdfStream

Box = tuple[float, float, float, float]

CAPTION_PREFIXES = ("fig", "figure")
BELOW_TOLERANCE = 2.0

REJECT_CODES = frozenset(
    {
        "in_exclusion_list",
        "extreme_aspect_ratio",
        "too_small",
        "undecodable",
        "unsupported_colorspace",
        "no_caption_found",
    }
)


@dataclass(frozen=True)
class RejectReason:
    code: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.code not in REJECT_CODES:
            raise ValueError(f"unknown reject code {self.code!r}")


@dataclass(frozen=True)
class FilterPolicy:
    """Image acceptance thresholds; hashes in ``exclusion_hashes`` are dropped."""

    max_aspect: float = 8.0
    min_px: int = 64
    exclusion_hashes: frozenset[str] = frozenset()


@dataclass(frozen=True)
class PageGeometry:
    page_index: int
    width: float
    height: float
    origin_convention: str = "y-down"

    def clamp(self, box: Box) -> Box:
        x0, y0, x1, y1 = box
        cx = lambda v: min(max(v, 0.0), self.width)
        cy = lambda v: min(max(v, 0.0), self.height)
        return (cx(min(x0, x1)), cy(min(y0, y1)), cx(max(x0, x1)), cy(max(y0, y1)))


@dataclass
class TextBlock:
    text: str
    bbox: Box
    page_index: int


@dataclass
class ExtractedImage:
    bytes: bytes
    format: str  # "png" or "jpeg"
    bbox: Box
    page_index: int
    intrinsic_width_px: int
    intrinsic_height_px: int
    content_hash: str


@dataclass
class FigurePair:
    image: ExtractedImage
    caption: TextBlock
    distance: float
    doc_id: str
    shared_caption: bool = False


@dataclass
class ExtractionIssue:
    """A rejected image or a page-level failure."""

    page_index: int
    reason: RejectReason
    image: ExtractedImage | None = None


# ---------------------------------------------------------------------------
# caption predicates and geometry


def is_caption_block(text: str, prefixes: Iterable[str] = CAPTION_PREFIXES) -> bool:
    """True when the (trimmed) block starts with a caption prefix."""
    lowered = text.lower()
    return any(lowered.startswith(p.lower()) for p in prefixes)


def caption_distance(
    image_bbox: Box,
    caption_bbox: Box,
    tol: float = BELOW_TOLERANCE,
    below_is_larger_y: bool = True,
) -> float | None:
    """Distance from the image's lower-left corner to the caption's
    top-left corner, or None when the caption is not below the image.

    ``below_is_larger_y`` selects the top-down frame (default). Flip it
    for documents whose boxes arrive in bottom-up page coordinates.
    """
    ix0, iy0, ix1, iy1 = image_bbox
    cx0, cy0, cx1, cy1 = caption_bbox
    if below_is_larger_y:
        image_bottom = max(iy0, iy1)
        caption_top = min(cy0, cy1)
        if caption_top < image_bottom - tol:
            return None
    else:
        image_bottom = min(iy0, iy1)
        caption_top = max(cy0, cy1)
        if caption_top > image_bottom + tol:
            return None
    x_image = min(ix0, ix1)
    x_caption = min(cx0, cx1)
    return math.hypot(caption_top - image_bottom, x_caption - x_image)


def match_figures(
    images: list[ExtractedImage],
    captions: list[TextBlock],
    doc_id: str = "",
    tol: float = BELOW_TOLERANCE,
    below_is_larger_y: bool = True,
    prefixes: Iterable[str] = CAPTION_PREFIXES,
) -> tuple[list[FigurePair], list[tuple[ExtractedImage, RejectReason]]]:
    """Pair each image with its nearest caption below it on the same page.

    Text blocks failing :func:`is_caption_block` are ignored. A caption may
    be claimed by several images; such pairs get ``shared_caption=True``.
    """
    usable = [c for c in captions if is_caption_block(c.text.strip(), prefixes)]
    pairs: list[FigurePair] = []
    rejects: list[tuple[ExtractedImage, RejectReason]] = []
    claims: dict[int, int] = {}
    chosen: list[tuple[FigurePair, int]] = []
    for img in images:
        best: tuple[float, int] | None = None
        for idx, cap in enumerate(usable):
            d = caption_distance(img.bbox, cap.bbox, tol, below_is_larger_y)
            if d is None:
                continue
            if best is None or d < best[0]:
                best = (d, idx)
        if best is None:
            rejects.append((img, RejectReason("no_caption_found", "no caption below image")))
            continue
        d, idx = best
        pair = FigurePair(img, usable[idx], d, doc_id)
        chosen.append((pair, idx))
        claims[idx] = claims.get(idx, 0) + 1
    for pair, idx in chosen:
        if claims[idx] > 1:
            pair.shared_caption = True
        pairs.append(pair)
    return pairs, rejects


def filter_image(img: ExtractedImage, policy: FilterPolicy) -> ExtractedImage | RejectReason:
    """Apply the acceptance policy; returns the image (accept) or a reason."""
    if img.content_hash in policy.exclusion_hashes:
        return RejectReason("in_exclusion_list", img.content_hash)
    w, h = img.intrinsic_width_px, img.intrinsic_height_px
    if w <= 0 or h <= 0:
        return RejectReason("undecodable", "zero-sized image")
    aspect = max(w, h) / min(w, h)
    if aspect > policy.max_aspect:
        return RejectReason("extreme_aspect_ratio", f"aspect {aspect:.2f} for {w}x{h}")
    if min(w, h) < policy.min_px:
        return RejectReason("too_small", f"{w}x{h}")
    return img


# ---------------------------------------------------------------------------
# page decoding


def _colorspace_mode(doc: PdfDocument, cs) -> tuple[str, list | None]:
    """Map a PDF color space to a PIL raw mode; returns (mode, palette)."""
    cs = doc.resolve(cs)
    if cs is None:
        raise PdfError("image has no color space")
    if isinstance(cs, str):
        table = {"DeviceRGB": "RGB", "DeviceGray": "L", "DeviceCMYK": "CMYK", "CalRGB": "RGB", "CalGray": "L"}
        if cs in table:
            return table[cs], None
        raise PdfError(f"unsupported color space {cs}")
    if isinstance(cs, list) and cs:
        head = str(doc.resolve(cs[0]))
        if head == "ICCBased":
            stream = doc.resolve(cs[1])
            n = doc.dget(stream.dict, "N", 3) if isinstance(stream, PdfStream) else 3
            return {1: "L", 3: "RGB", 4: "CMYK"}.get(int(n), "RGB"), None
        if head in ("CalRGB", "Lab"):
            return "RGB", None
        if head == "CalGray":
            return "L", None
        if head == "Indexed":
            base_mode, _ = _colorspace_mode(doc, cs[1])
            lookup = doc.resolve(cs[3])
            if isinstance(lookup, PdfStream):
                lookup = doc.decode_stream(lookup)
            if not isinstance(lookup, bytes):
                raise PdfError("indexed palette not readable")
            return "P", [base_mode, lookup]
    raise PdfError(f"unsupported color space {cs!r}")


def decode_image_xobject(doc: PdfDocument, stream: PdfStream) -> tuple[Image.Image, bytes, str]:
    """Decode an image XObject into (PIL image, encoded bytes, format).

    JPEG payloads pass through untouched; raw sample data is re-encoded
    as PNG. Raises PdfError for anything we cannot decode.
    """
    width = int(doc.dget(stream.dict, "Width", 0))
    height = int(doc.dget(stream.dict, "Height", 0))
    if width <= 0 or height <= 0:
        raise PdfError("image with non-positive dimensions")

    final = doc.final_filter(stream)
    if final in ("DCTDecode", "DCT"):
        payload = doc.decode_stream(stream, stop_at_passthrough=True)
        try:
            pil = Image.open(io.BytesIO(payload))
            pil.load()
        except Exception as exc:
            raise PdfError(f"embedded JPEG failed to decode: {exc}") from exc
        return pil, payload, "jpeg"
    if final == "JPXDecode":
        raise PdfError("JPEG2000 images are not supported")

    if doc.dget(stream.dict, "ImageMask", False):
        raise PdfError("stencil masks carry no color content")
    bpc = int(doc.dget(stream.dict, "BitsPerComponent", 8))
    if bpc != 8:
        raise PdfError(f"unsupported bit depth {bpc}")

    mode, palette = _colorspace_mode(doc, stream.dict.get("ColorSpace"))
    ncomp = {"RGB": 3, "L": 1, "CMYK": 4, "P": 1}[mode]
    data = doc.decode_stream(stream)
    expected = width * height * ncomp
    if len(data) < expected:
        raise PdfError(f"image data truncated: {len(data)} < {expected}")
    pil = Image.frombytes(mode, (width, height), data[:expected])
    if mode == "P" and palette is not None:
        base_mode, lookup = palette
        if base_mode == "RGB":
            pil.putpalette(lookup[: 256 * 3])
        else:  # grayscale palette: expand to RGB triples
            pil.putpalette(b"".join(bytes([v, v, v]) for v in lookup[:256]))
    pil = _normalize_mode(pil)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return pil, buf.getvalue(), "png"


def _normalize_mode(pil: Image.Image) -> Image.Image:
    if pil.mode in ("CMYK", "P", "LA"):
        return pil.convert("RGB")
    if pil.mode == "1":
        return pil.convert("L")
    return pil


def pixel_hash(pil: Image.Image) -> str:
    h = hashlib.sha256()
    h.update(pil.mode.encode())
    h.update(f"{pil.width}x{pil.height}".encode())
    h.update(pil.tobytes())
    return h.hexdigest()


def _flip_box(box: Box, page_height: float) -> Box:
    x0, y0, x1, y1 = box
    return (x0, page_height - y1, x1, page_height - y0)


def collect_page(
    page: PdfPage,
) -> tuple[PageGeometry, list[ExtractedImage], list[TextBlock], list[ExtractionIssue]]:
    """Decode one page into y-down images and text blocks."""
    geom = PageGeometry(page.index, page.width, page.height)
    interp = interpret_page(page)
    issues: list[ExtractionIssue] = []

    images: list[ExtractedImage] = []
    for placement in interp.images:
        images_box = geom.clamp(_flip_box(placement.bbox(), geom.height))
        try:
            pil, payload, fmt = decode_image_xobject(page.doc, placement.stream)
        except PdfError as exc:
            code = "unsupported_colorspace" if "color space" in str(exc) or "bit depth" in str(exc) else "undecodable"
            issues.append(ExtractionIssue(page.index, RejectReason(code, f"{placement.name}: {exc}")))
            continue
        images.append(
            ExtractedImage(
                bytes=payload,
                format=fmt,
                bbox=images_box,
                page_index=page.index,
                intrinsic_width_px=pil.width,
                intrinsic_height_px=pil.height,
                content_hash=pixel_hash(pil),
            )
        )

    blocks: list[TextBlock] = []
    for raw in interp.text_blocks:
        lines = []
        x0 = y_top = math.inf
        x1 = y_bot = -math.inf
        for line in raw.lines:
            text = "".join(run.text for run in line).strip()
            if text:
                lines.append(text)
            for run in line:
                x0 = min(x0, run.x)
                x1 = max(x1, run.x + run.width)
                y_top = min(y_top, geom.height - (run.y + 0.8 * run.font_size))
                y_bot = max(y_bot, geom.height - (run.y - 0.2 * run.font_size))
        joined = "\n".join(lines).strip()
        if not joined or not math.isfinite(x0):
            continue
        blocks.append(TextBlock(joined, geom.clamp((x0, y_top, x1, y_bot)), page.index))

    images.sort(key=lambda im: (im.bbox[1], im.bbox[0]))
    blocks.sort(key=lambda b: (b.bbox[1], b.bbox[0]))
    return geom, images, blocks, issues


# ---------------------------------------------------------------------------
# document-level driver


def extract_document(
    pdf_bytes: bytes,
    policy: FilterPolicy | None = None,
    doc_id: str | None = None,
    caption_prefixes: Iterable[str] = CAPTION_PREFIXES,
    below_tolerance: float = BELOW_TOLERANCE,
) -> tuple[list[FigurePair], list[ExtractionIssue]]:
    """Extract figure-caption pairs from a whole document.

    Pairs are ordered by (page index, image top y, left x). Every decoded
    image lands either in the pair list or in the issue list; pages that
    fail outright are recorded as issues and skipped.
    """
    policy = policy or FilterPolicy()
    try:
        doc = PdfDocument(pdf_bytes)
    except PdfError as exc:
        raise PdfError(f"unreadable PDF ({doc_id or 'unnamed'}): {exc}") from exc
    if doc_id is None:
        doc_id = hashlib.sha256(pdf_bytes).hexdigest()[:12]

    all_pairs: list[FigurePair] = []
    all_issues: list[ExtractionIssue] = []
    for page in doc.iter_pages():
        try:
            _geom, images, blocks, issues = collect_page(page)
        except (PdfError, ValueError, OverflowError) as exc:
            all_issues.append(
                ExtractionIssue(page.index, RejectReason("undecodable", f"page failed: {exc}"))
            )
            continue
        all_issues.extend(issues)

        kept: list[ExtractedImage] = []
        for img in images:
            verdict = filter_image(img, policy)
            if isinstance(verdict, RejectReason):
                all_issues.append(ExtractionIssue(page.index, verdict, img))
            else:
                kept.append(verdict)
        pairs, rejects = match_figures(
            kept, blocks, doc_id, below_tolerance, prefixes=caption_prefixes
        )
        all_pairs.extend(pairs)
        for img, reason in rejects:
            all_issues.append(ExtractionIssue(page.index, reason, img))

    all_pairs.sort(key=lambda p: (p.image.page_index, p.image.bbox[1], p.image.bbox[0]))
    return all_pairs, all_issues


def write_outputs(
    pairs: list[FigurePair],
    out_dir: str,
    doc_id: str,
) -> str:
    """Write paired images as PNGs plus a JSONL sidecar; returns sidecar path."""
    os.makedirs(out_dir, exist_ok=True)
    sidecar = os.path.join(out_dir, f"{doc_id}.jsonl")
    counters: dict[int, int] = {}
    with open(sidecar, "w", encoding="utf-8") as fh:
        for pair in pairs:
            page = pair.image.page_index
            n = counters.get(page, 0)
            counters[page] = n + 1
            name = f"{doc_id}_p{page}_{n}.png"
            path = os.path.join(out_dir, name)
            if pair.image.format == "png":
                with open(path, "wb") as img_fh:
                    img_fh.write(pair.image.bytes)
            else:
                Image.open(io.BytesIO(pair.image.bytes)).save(path, format="PNG")
            fh.write(
                json.dumps(
                    {
                        "doc_id": pair.doc_id,
                        "page": page,
                        "image": name,
                        "content_hash": pair.image.content_hash,
                        "caption": pair.caption.text,
                        "distance": round(pair.distance, 4),
                        "shared_caption": pair.shared_caption,
                        "image_width_px": pair.image.intrinsic_width_px,
                        "image_height_px": pair.image.intrinsic_height_px,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return sidecar
