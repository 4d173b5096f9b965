"""seizcoh: seizure-prediction ensembles on iEEG clips and the coherence of their errors.

Subpackages and modules
-----------------------
recording   clip labeling, resampling, normalization and segmentation
synth       deterministic synthetic recordings with preictal signatures
features    univariate and bivariate segment features
nnet        a small numpy neural-network substrate
method1     feature-based MLP ensemble with combination search
method2     raw-signal 1-D CNN ensemble
evaluation  AUC, Hanley-McNeil, permutation tests, error coherence, transfer curves
pipeline    cached end-to-end runs driven by a YAML config
"""

__version__ = "0.1.0"
