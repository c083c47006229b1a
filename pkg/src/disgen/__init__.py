"""Size-generalizable graph classification via disentangled representations.

Subsystems:

- :mod:`disgen.autodiff`, :mod:`disgen.params`, :mod:`disgen.linalg`,
  :mod:`disgen.gradcheck`: dense float64 reverse-mode core.
- :mod:`disgen.data`: graph records, TU flat files, size splits, batching.
- :mod:`disgen.backbone`: GCN/GIN message passing and pretraining.
- :mod:`disgen.explain`: occlusion edge-importance scores.
- :mod:`disgen.augment`: size- and task-invariant graph views.
- :mod:`disgen.disentangle`: encoders and the contrastive / supervision /
  decoupling losses.
- :mod:`disgen.trainer`: joint training loop and F1 evaluation.
- :mod:`disgen.theory`: numerical probes of the decoupling analysis.
- :mod:`disgen.cli`: reproducible pipeline commands.
"""

__version__ = "0.1.0"
