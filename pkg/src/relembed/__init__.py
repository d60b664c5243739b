"""relembed: joint visual-language embeddings for relation triplets.

Subject, object and predicate appearance is embedded jointly with word
vectors of the corresponding phrases; unseen triplets are scored by
transferring embeddings from similar seen triplets through an analogy map.
"""

__version__ = "0.1.0"
