from .bessel import bessel_k
from .fundamental import (
    KernelContext,
    SlopeFit,
    gamma_0,
    gamma_hatA,
    kernel_difference_rate,
)

__all__ = [
    "bessel_k",
    "KernelContext",
    "SlopeFit",
    "gamma_0",
    "gamma_hatA",
    "kernel_difference_rate",
]
