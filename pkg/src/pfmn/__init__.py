"""Story-based temporal summarization of 360-degree videos.

Pipeline: spherical view scoring over an 81-viewpoint grid, kernel temporal
segmentation into subshots, and greedy summary decoding with a past/future
memory network, trained in two phases (photostream pretraining, then video
fine-tuning). Built on a small numpy tensor engine with reverse-mode
differentiation.
"""

__version__ = "0.1.0"
