"""patchlift: extract flat, front-view pattern assets from rendered scenes.

The pipeline has four stages, each with its own submodule:

* :mod:`patchlift.synthdata` renders paired (scene, mask, edge map, flat asset)
  samples with a deterministic CPU ray caster.
* :mod:`patchlift.diffusion` holds the DDPM/DDIM arithmetic shared by training,
  fine-tuning, and inference.
* :mod:`patchlift.models` / :mod:`patchlift.training` define and train the
  conditional extractor and the inverse-task inpainter.
* :mod:`patchlift.reward` fine-tunes the extractor against the frozen
  inpainter with a pixel-space cycle-consistency loss.
* :mod:`patchlift.evaluate` / :mod:`patchlift.report` score checkpoints and
  render the ablation table plus qualitative figures.
"""

__version__ = "0.1.0"

from patchlift.errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateViewError,
    InvariantError,
    ShapeError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateViewError",
    "InvariantError",
    "ShapeError",
    "__version__",
]
