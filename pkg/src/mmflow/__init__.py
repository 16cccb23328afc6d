"""Multi-modal flow matching for toy protein-ligand systems.

Modules: ``hetgraph`` (graph and task model), ``chem`` (toy chemistry and
filters), ``flow`` (flow matching maths and sampler), ``net`` (equivariant
denoiser), ``autodiff`` (reverse-mode gradients), ``train``, ``evaluate``,
``store`` and ``cli``.
"""
__version__ = "0.1.0"
