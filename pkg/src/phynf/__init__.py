"""Physics-integrated variational autoencoders with planar-flow posteriors."""

__version__ = "0.1.0"
