"""Motion data toolkit: curation filters, pose features, wavelet-wrapped FSQ
tokenizer, a small hybrid-attention generator and evaluation metrics."""

__version__ = "0.1.0"
