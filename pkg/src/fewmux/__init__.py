"""Few-shot multitask multimodal adaptation of frozen encoders.

Frozen text/vision encoder stacks get per-task residual bottleneck adapters
whose weights are emitted by a shared per-modality hypernetwork; the trainable
pieces are fit contrastively on mined pairs, then small per-task heads are
trained on the resulting embeddings.
"""

__version__ = "0.1.0"
