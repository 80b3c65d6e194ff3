"""Completion encoder-decoder, shape generator and Wasserstein critic at
configurable toy scale, plus deterministic fan-in initialization."""

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError


class Dense:
    def __init__(self, name, n_in, n_out, dtype):
        self.name = name
        self.w = ad.Tensor(np.zeros((n_out, n_in), dtype=dtype), requires_grad=True)
        self.b = ad.Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
        self.fan_in = n_in

    def params(self):
        return {self.name + ".w": self.w, self.name + ".b": self.b}

    def __call__(self, x, mode="train"):
        return ad.dense(x, self.w, self.b)


class Conv:
    """Strided n-D convolution layer (nd inferred from the kernel tuple)."""

    def __init__(self, name, c_in, c_out, kernel, stride, padding, dtype):
        k = tuple(kernel)
        self.name = name
        self.stride, self.padding = stride, padding
        self.w = ad.Tensor(np.zeros((c_out, c_in) + k, dtype=dtype), requires_grad=True)
        self.b = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.fan_in = c_in * int(np.prod(k))
        self.nd = len(k)

    def params(self):
        return {self.name + ".w": self.w, self.name + ".b": self.b}

    def __call__(self, x, mode="train"):
        out = ad.conv_nd(x, self.w, self.stride, self.padding)
        return ad.add(out, ad.reshape(self.b, (1, self.b.shape[0]) + (1,) * self.nd))


class ConvTranspose:
    def __init__(self, name, c_in, c_out, kernel, stride, padding, dtype):
        k = tuple(kernel)
        self.name = name
        self.stride, self.padding = stride, padding
        self.w = ad.Tensor(np.zeros((c_in, c_out) + k, dtype=dtype), requires_grad=True)
        self.b = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.fan_in = c_in * int(np.prod(k))
        self.nd = len(k)

    def params(self):
        return {self.name + ".w": self.w, self.name + ".b": self.b}

    def __call__(self, x, mode="train"):
        out = ad.conv_transpose_nd(x, self.w, self.stride, self.padding)
        return ad.add(out, ad.reshape(self.b, (1, self.b.shape[0]) + (1,) * self.nd))


class BatchNorm:
    def __init__(self, name, channels, dtype, eps=1e-5, momentum=0.1):
        self.name = name
        self.eps, self.momentum = eps, momentum
        self.gamma = ad.Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running = {"mean": np.zeros(channels, dtype=dtype),
                        "var": np.ones(channels, dtype=dtype)}

    def params(self):
        return {self.name + ".gamma": self.gamma, self.name + ".beta": self.beta}

    def buffers(self):
        return {self.name + ".running_mean": self.running["mean"],
                self.name + ".running_var": self.running["var"]}

    def load_buffers(self, buffers):
        self.running["mean"] = buffers[self.name + ".running_mean"].copy()
        self.running["var"] = buffers[self.name + ".running_var"].copy()

    def __call__(self, x, mode="train"):
        return ad.batchnorm(x, self.gamma, self.beta, eps=self.eps, mode=mode,
                            running=self.running, momentum=self.momentum)


class _Net:
    """Shared parameter bookkeeping for the three networks."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)
        self.layers = []

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def buffers(self):
        out = {}
        for layer in self.layers:
            if hasattr(layer, "buffers"):
                out.update(layer.buffers())
        return out

    def load_params(self, arrays):
        params = self.params()
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.shape:
                raise ShapeMismatchError("param %r shape %r != %r" % (name, arr.shape, t.shape))
            t.data = arr.copy()
        for layer in self.layers:
            if hasattr(layer, "load_buffers"):
                layer.load_buffers(arrays)

    def state_arrays(self):
        out = {name: t.data.copy() for name, t in self.params().items()}
        out.update({name: arr.copy() for name, arr in self.buffers().items()})
        return out


class CompletionNet(_Net):
    """Encoder-decoder mapping a 4-channel W x W view image to an N^3 occupancy."""

    def __init__(self, image_size=32, voxels=16, latent_dim=64, base_channels=16,
                 dtype="float64"):
        super().__init__(dtype)
        if image_size < 8 or image_size & (image_size - 1):
            raise ValueError("image_size must be a power of two >= 8")
        if voxels < 4 or voxels & (voxels - 1):
            raise ValueError("voxels must be a power of two >= 4")
        self.image_size, self.voxels, self.latent_dim = image_size, voxels, latent_dim
        dt = self.dtype
        self.encoder = []
        c, size = 4, image_size
        i = 0
        while size > 4:
            c_out = base_channels * (2 ** i)
            self.encoder.append(Conv("enc%d" % i, c, c_out, (4, 4), 2, 1, dt))
            c, size, i = c_out, size // 2, i + 1
        self.enc_flat = c * size * size
        self.to_latent = Dense("to_latent", self.enc_flat, latent_dim, dt)
        dec_blocks = int(np.log2(voxels // 2))
        c3 = base_channels * (2 ** (dec_blocks - 1))
        self.from_latent = Dense("from_latent", latent_dim, c3 * 8, dt)
        self.dec_c0 = c3
        self.decoder = []
        for j in range(dec_blocks):
            c_out = 1 if j == dec_blocks - 1 else c3 // 2
            self.decoder.append(ConvTranspose("dec%d" % j, c3, c_out, (4, 4, 4), 2, 1, dt))
            c3 = c_out
        self.layers = self.encoder + [self.to_latent, self.from_latent] + self.decoder

    def encode(self, x, mode="train", upto=None):
        """Run the encoder conv stack; `upto` stops after that many conv blocks."""
        h = x
        for i, layer in enumerate(self.encoder):
            h = ad.relu(layer(h, mode))
            if upto is not None and i == upto:
                return h
        h = ad.reshape(h, (h.shape[0], self.enc_flat))
        return ad.relu(self.to_latent(h, mode))

    def forward(self, x, mode="train"):
        if x.ndim != 4 or x.shape[1] != 4 or x.shape[2] != self.image_size:
            raise ShapeMismatchError(
                "expected (B, 4, %d, %d) input, got %r" % (self.image_size, self.image_size, x.shape))
        z = self.encode(x, mode)
        h = self.from_latent(z, mode)
        h = ad.relu(ad.reshape(h, (x.shape[0], self.dec_c0, 2, 2, 2)))
        for j, layer in enumerate(self.decoder):
            h = layer(h, mode)
            h = ad.sigmoid(h) if j == len(self.decoder) - 1 else ad.relu(h)
        return ad.reshape(h, (x.shape[0],) + (self.voxels,) * 3)


class Generator(_Net):
    """Latent vector to N^3 occupancy; transposed convs + batchnorm + ReLU."""

    def __init__(self, voxels=16, latent_dim=32, base_channels=16, dtype="float64"):
        super().__init__(dtype)
        self.voxels, self.latent_dim = voxels, latent_dim
        dt = self.dtype
        blocks = int(np.log2(voxels // 2))
        c = base_channels * (2 ** (blocks - 1))
        self.c0 = c
        self.from_latent = Dense("g_from_latent", latent_dim, c * 8, dt)
        self.blocks = []
        self.layers = [self.from_latent]
        for j in range(blocks):
            c_out = 1 if j == blocks - 1 else c // 2
            conv = ConvTranspose("g_dec%d" % j, c, c_out, (4, 4, 4), 2, 1, dt)
            bn = BatchNorm("g_bn%d" % j, c_out, dt) if j < blocks - 1 else None
            self.blocks.append((conv, bn))
            self.layers.append(conv)
            if bn is not None:
                self.layers.append(bn)
            c = c_out

    def forward(self, z, mode="train"):
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeMismatchError("expected (B, %d) latent, got %r" % (self.latent_dim, z.shape))
        h = ad.relu(ad.reshape(self.from_latent(z, mode), (z.shape[0], self.c0, 2, 2, 2)))
        for j, (conv, bn) in enumerate(self.blocks):
            h = conv(h, mode)
            if bn is not None:
                h = ad.relu(bn(h, mode))
        h = ad.sigmoid(h)
        return ad.reshape(h, (z.shape[0],) + (self.voxels,) * 3)


class Critic(_Net):
    """Strided 3-D convs + leaky ReLU, dense to an unbounded scalar per shape."""

    def __init__(self, voxels=16, base_channels=16, leaky_slope=0.2, dtype="float64"):
        super().__init__(dtype)
        self.voxels = voxels
        self.leaky_slope = leaky_slope
        dt = self.dtype
        blocks = int(np.log2(voxels // 2))
        self.convs = []
        c, size = 1, voxels
        for j in range(blocks):
            c_out = base_channels * (2 ** j)
            self.convs.append(Conv("d_conv%d" % j, c, c_out, (4, 4, 4), 2, 1, dt))
            c, size = c_out, size // 2
        self.flat = c * size ** 3
        self.head = Dense("d_head", self.flat, 1, dt)
        self.layers = self.convs + [self.head]

    def forward(self, x, mode="train"):
        if x.ndim != 4 or x.shape[1:] != (self.voxels,) * 3:
            raise ShapeMismatchError(
                "expected (B, %d, %d, %d) grids, got %r" % ((self.voxels,) * 3 + (x.shape,)))
        h = ad.reshape(x, (x.shape[0], 1) + (self.voxels,) * 3)
        for conv in self.convs:
            h = ad.leaky_relu(conv(h, mode), self.leaky_slope)
        h = ad.reshape(h, (x.shape[0], self.flat))
        return ad.reshape(self.head(h, mode), (x.shape[0],))


def init_weights(net, seed):
    """Fan-in-scaled uniform weights (variance 2/fan_in), zero biases,
    batchnorm gamma=1 beta=0; deterministic per seed."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.gamma.data = np.ones_like(layer.gamma.data)
            layer.beta.data = np.zeros_like(layer.beta.data)
            continue
        a = np.sqrt(6.0 / layer.fan_in)
        layer.w.data = rng.uniform(-a, a, size=layer.w.shape).astype(net.dtype)
        layer.b.data = np.zeros_like(layer.b.data)


def completion_forward(net, batch, mode="train"):
    return net.forward(ad.as_tensor(batch), mode)


def generator_forward(gen, z, mode="train"):
    return gen.forward(ad.as_tensor(z), mode)


def critic_forward(critic, grids, mode="train"):
    return critic.forward(ad.as_tensor(grids), mode)
