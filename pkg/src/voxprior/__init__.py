"""Adversarially learned shape priors for single-view voxel completion,
at desk scale: procedural shapes, ray-cast observations, a from-scratch
autodiff engine with double backprop, WGAN-GP critic pretraining, and
IoU / Chamfer-distance evaluation."""

__version__ = "0.1.0"
