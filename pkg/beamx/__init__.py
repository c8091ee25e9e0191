import jax

__version__ = "0.1.0"

# every jnp array in the package is float64
jax.config.update("jax_enable_x64", True)
