"""slatpaint: training-free 3D voxel inpainting by optimizing the initial
noise seed of a two-stage rectified-flow generator.

Modules:
    core       grids, spectral transforms, moments, seeded randomness
    shapes     procedural assets, toy latent encoders, region masks
    flownet    velocity networks, CFM training, Adam, checkpoints
    sampler    Euler sampling and the two-stage generation pipeline
    seedopt    initial-noise optimization (the method under study)
    baselines  RePaint/SDEdit/ILVR-style trajectory guidance
    metrics    geometry and appearance evaluation
    cli        reproducible experiment driver (`slatpaint <command>`)
"""

from . import baselines, cli, core, flownet, metrics, sampler, seedopt, shapes

__version__ = "0.1.0"

__all__ = [
    "core",
    "shapes",
    "flownet",
    "sampler",
    "seedopt",
    "baselines",
    "metrics",
    "cli",
    "__version__",
]
