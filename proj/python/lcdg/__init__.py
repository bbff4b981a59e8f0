"""Structure-guided diffusion toolkit.

Thin python surface over the native core: noise schedules and the forward
process, timestep resampling, the procedural shape dataset with its condition
extractors, denoiser/adapter training, and the guided reverse sampler.
"""

_NAMES = [
    "Schedule",
    "Dataset",
    "Denoiser",
    "Adapter",
    "q_sample",
    "resample_timestep",
    "condition",
    "train_denoiser",
    "train_adapter",
    "sample_guided",
    "fidelity",
    "ConfigError",
    "CheckpointError",
]

try:
    from . import _core  # installed layout: extension inside the package
except ImportError:  # pragma: no cover - build-tree layout
    import _core

for _n in _NAMES:
    globals()[_n] = getattr(_core, _n)

__all__ = list(_NAMES)
__version__ = "0.1.0"
