"""facevox: recover a dense 3D facial occupancy grid from a single depth view.

Subpackages map onto the pipeline stages: a small reverse-mode tensor engine
(autograd), synthetic data generation (geometry, dataset), the attention-guided
generator/critic pair (model), loss terms (objectives), the alternating
adversarial training loop (training, checkpoint), metrics (evaluation) and the
batch CLI (cli).
"""

__version__ = "0.1.0"
