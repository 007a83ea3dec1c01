"""figforge: figure-caption corpus construction and mechanics-evaluation toolkit.

Subsystems: PDF figure extraction (:mod:`figforge.pdf`), encyclopedia
harvesting (:mod:`figforge.wiki`), caption refinement (:mod:`figforge.refine`),
corpus assembly (:mod:`figforge.corpus`), dataset statistics
(:mod:`figforge.stats`), mechanics instruction building and evaluation
(:mod:`figforge.mechanics`), and expert-mixture / layer-merge arithmetic
(:mod:`figforge.moe`). The ``figforge`` CLI fronts all of them.
"""

__version__ = "0.1.0"
