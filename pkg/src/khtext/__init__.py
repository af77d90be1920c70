"""khtext: Khmer text classification toolkit.

Subword-aware word embeddings for unsegmented Khmer script, three neural
classifiers over frozen embeddings, a TF-IDF + linear SVM baseline, and
an evaluation harness for multi-class and multi-label tasks.
"""

__version__ = "0.1.0"
