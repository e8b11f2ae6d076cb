"""asktree: decision trees whose splits are questions.

Split conditions are natural-language yes/no questions answered by a model,
deterministic predicate expressions, or groupings of a categorical feature;
candidates are scored by weighted Gini impurity and the tree is refined
post-training by a human expert.
"""

__version__ = "0.1.0"
