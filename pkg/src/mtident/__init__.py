"""Two-stage identifiable multi-task representation learning.

Stage one fits a multi-task regression network whose shared features are
identifiable up to an invertible linear map; stage two fits a multi-task
linear causal model on those features, resolving the map down to
permutation and scaling and labelling each latent as causal or spurious
for every task.
"""

__version__ = "0.1.0"
