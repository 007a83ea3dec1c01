"""Minimal PDF reading stack used by the figure extractor.

Split in three layers: ``objects`` (lexing and the COS object model),
``document`` (xref, filters, object and page access) and ``content``
(content-stream interpretation into text runs and image placements).
"""

from .document import PdfDocument, PdfPage, open_pdf
from .objects import PdfError, PdfName, PdfRef, PdfStream

__all__ = [
    "PdfDocument",
    "PdfPage",
    "PdfError",
    "PdfName",
    "PdfRef",
    "PdfStream",
    "open_pdf",
]
