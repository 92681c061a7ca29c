"""GeoGen: two-stage coarse-to-fine synthetic LBSN check-in trajectory generation.

Stage 1 learns a denoising diffusion model over coarse, temporally regular
latent movement sequences; stage 2 translates sampled latent sequences into
fine-grained (POI, timestamp) check-in trajectories. An evaluation harness
scores fidelity (Jensen-Shannon divergence over four spatio-temporal
distributions) and downstream utility (next check-in prediction).
"""

__version__ = "0.1.0"
