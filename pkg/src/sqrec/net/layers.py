"""Layer objects over the functional ops, composed into a Network.

Layers own their parameter arrays and the gradients from the last backward
pass.  Parameter blocks are addressed as ``<layer>.<field>`` so a whole
network flattens to an ordered name -> array mapping for the optimizer and
the weight file writer.
"""

from __future__ import annotations

import numpy as np

from . import ops


class Conv:
    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 dtype=np.float32):
        self.name = name
        self.in_ch, self.out_ch, self.kernel_size, self.stride = in_ch, out_ch, kernel, stride
        self.kernel = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.grads = {}
        self._cache = None

    def init_params(self, rng: np.random.Generator):
        fan_in = self.in_ch * self.kernel_size * self.kernel_size
        self.kernel = ops.he_uniform(self.kernel.shape, fan_in, rng, self.kernel.dtype)
        self.bias = np.zeros_like(self.bias)

    def params(self):
        return {f"{self.name}.kernel": self.kernel, f"{self.name}.bias": self.bias}

    def buffers(self):
        return {}

    def forward(self, x, train: bool):
        y, self._cache = ops.conv_forward(x, self.kernel, self.bias, self.stride)
        return y

    def backward(self, dy):
        dx, dk, db = ops.conv_backward(dy, self._cache)
        self.grads = {f"{self.name}.kernel": dk, f"{self.name}.bias": db}
        self._cache = None
        return dx


class BatchNorm:
    def __init__(self, name: str, channels: int, momentum: float = ops.BN_MOMENTUM,
                 eps: float = ops.BN_EPS, dtype=np.float32):
        self.name = name
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gain = np.ones(channels, dtype=dtype)
        self.shift = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grads = {}
        self._cache = None

    def init_params(self, rng):
        pass

    def params(self):
        return {f"{self.name}.gain": self.gain, f"{self.name}.shift": self.shift}

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, train: bool):
        y, rm, rv, cache = ops.batchnorm_forward(
            x, self.gain, self.shift, self.running_mean, self.running_var,
            train=train, momentum=self.momentum, eps=self.eps)
        if train:
            self.running_mean = rm.astype(self.running_mean.dtype, copy=False)
            self.running_var = rv.astype(self.running_var.dtype, copy=False)
            self._cache = cache
        else:
            self._cache = None
        return y

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward requires a training-mode forward")
        dx, dgain, dshift = ops.batchnorm_backward(dy, self._cache)
        self.grads = {f"{self.name}.gain": dgain, f"{self.name}.shift": dshift}
        self._cache = None
        return dx


class Relu:
    def __init__(self, name: str):
        self.name = name
        self.grads = {}
        self._cache = None

    def init_params(self, rng):
        pass

    def params(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, train: bool):
        y, self._cache = ops.relu_forward(x)
        return y

    def backward(self, dy):
        dx = ops.relu_backward(dy, self._cache)
        self._cache = None
        return dx


class Flatten:
    def __init__(self, name: str):
        self.name = name
        self.grads = {}
        self._cache = None

    def init_params(self, rng):
        pass

    def params(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, train: bool):
        y, self._cache = ops.flatten_forward(x)
        return y

    def backward(self, dy):
        dx = ops.flatten_backward(dy, self._cache)
        self._cache = None
        return dx


class Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int, dtype=np.float32):
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = np.zeros((in_dim, out_dim), dtype=dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.grads = {}
        self._cache = None

    def init_params(self, rng):
        self.weight = ops.he_uniform(self.weight.shape, self.in_dim, rng, self.weight.dtype)
        self.bias = np.zeros_like(self.bias)

    def params(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def buffers(self):
        return {}

    def forward(self, x, train: bool):
        y, self._cache = ops.dense_forward(x, self.weight, self.bias)
        return y

    def backward(self, dy):
        dx, dw, db = ops.dense_backward(dy, self._cache)
        self.grads = {f"{self.name}.weight": dw, f"{self.name}.bias": db}
        self._cache = None
        return dx


class Network:
    """Plain sequential container."""

    def __init__(self, layers):
        self.layers = list(layers)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")

    def init_params(self, rng: np.random.Generator):
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x, train: bool = False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def grads(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.grads)
        return out

    def state_blocks(self) -> dict:
        """Trainable parameters plus normalization buffers, in layer order."""
        out = {}
        for layer in self.layers:
            out.update(layer.params())
            out.update(layer.buffers())
        return out

    def load_state(self, blocks: dict):
        """Copy matching arrays into the layers; shapes must agree exactly."""
        own = self.state_blocks()
        missing = sorted(set(own) - set(blocks))
        extra = sorted(set(blocks) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in own.items():
            src = np.asarray(blocks[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src
