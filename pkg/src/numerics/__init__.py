from src.numerics.tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad"]
