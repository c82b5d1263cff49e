"""JAX setup: float64 on CPU, with an on-disk compilation cache.

The kernels are small but their traces are deep (nested jvp through the
kinematic chain), so compilation dominates the first call.  Caching compiled
executables under ``BIPED3D_JAX_CACHE`` (default ``~/.cache/biped3d/jax``)
makes later processes start warm.  Set the variable to an empty string to
disable the cache.
"""
import os

import jax

jax.config.update("jax_enable_x64", True)
jax.config.update("jax_platform_name", "cpu")

_cache = os.environ.get("BIPED3D_JAX_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "biped3d", "jax"))
if _cache:
    try:
        os.makedirs(_cache, exist_ok=True)
        jax.config.update("jax_compilation_cache_dir", _cache)
        jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.0)
        jax.config.update("jax_persistent_cache_min_entry_size_bytes", 0)
    except (OSError, AttributeError):  # read-only home or older jax
        pass

import jax.numpy as jnp  # noqa: E402

__all__ = ["jax", "jnp"]
