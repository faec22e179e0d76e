"""Artist-group-factor transfer learning for musical genre classification.

Pipeline: audio -> mel/MFCC features -> K-means codebooks -> artist
bag-of-words -> LDA artist groups -> convolutional feature learners
(single-task, shared-trunk multi-task, width-matched control) -> frozen
embeddings -> transfer MLP -> segment-averaged genre predictions.
"""

__version__ = "0.1.0"
