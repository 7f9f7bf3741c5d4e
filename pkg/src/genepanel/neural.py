"""Dense networks with hand-written backprop and Adam.

Small enough to be exact and deterministic: every network is a stack of
affine layers with ReLU between them and an identity or softmax head. The
autoencoder that turns a gene selection into a fixed-length state lives here
too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, NumericBlowup
from .expr import ExpressionMatrix, GeneStatsBlock, descriptive_stats

LATENT_DIM = 64
ENCODER_HIDDEN = (256, 128)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class DenseNet:
    """Fully connected net: ReLU hidden layers, identity or softmax output.

    Parameters are kept in ``params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W_l`` shaped ``(fan_in, fan_out)`` so that a batch ``x @ W + b`` works
    on row vectors.
    """

    def __init__(self, layer_dims, output="identity", rng=None):
        if output not in ("identity", "softmax"):
            raise ValueError(f"unknown output activation {output!r}")
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.output = output
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def forward(self, x):
        """Return ``(output, cache)``; ``x`` may be a single vector or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.layer_dims[0]:
            raise DimensionMismatch(f"input has {x.shape[1]} features, net expects {self.layer_dims[0]}")
        acts = [x]
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            if layer < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output == "softmax":
                h = _softmax(z)
            else:
                h = z
            acts.append(h)
        out = acts[-1][0] if single else acts[-1]
        return out, (acts, single)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, output_grad):
        """Gradients of ``sum(output * output_grad)`` w.r.t. every parameter.

        ``output_grad`` is the gradient with respect to the *post-activation*
        output; the softmax Jacobian is applied here.
        """
        acts, single = cache
        g = np.asarray(output_grad, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise DimensionMismatch(f"output_grad shape {g.shape} != output shape {acts[-1].shape}")
        if self.output == "softmax":
            p = acts[-1]
            g = p * (g - (g * p).sum(axis=1, keepdims=True))
        grads = [None] * len(self.params)
        for layer in reversed(range(self.n_layers)):
            h_in = acts[layer]
            grads[2 * layer] = h_in.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ self.params[2 * layer].T
            if layer > 0:
                g = g * (acts[layer] > 0)
        return grads, (g[0] if single else g)

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.layer_dims = self.layer_dims
        clone.output = self.output
        clone.params = [p.copy() for p in self.params]
        return clone


def forward(net, x):
    return net.forward(x)


def backward(net, cache, output_grad):
    """Parameter gradients only (see :meth:`DenseNet.backward`)."""
    return net.backward(cache, output_grad)[0]


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=0.005, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(net, state: AdamState, grads) -> None:
    """Bias-corrected Adam update applied in place to ``net.params``."""
    if len(grads) != len(net.params):
        raise DimensionMismatch("gradient list does not match parameters")
    for g, p in zip(grads, net.params):
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericBlowup("numeric blowup: non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (g, p) in enumerate(zip(grads, net.params)):
        state.m[i] *= state.beta1
        state.m[i] += (1.0 - state.beta1) * g
        state.v[i] *= state.beta2
        state.v[i] += (1.0 - state.beta2) * g * g
        p -= state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)


class Autoencoder:
    """Mirrored encoder/decoder around a 64-d latent code.

    Encoder ``d -> 256 -> 128 -> 64``, decoder ``64 -> 128 -> 256 -> d``. Inputs
    are standardized per dimension with statistics frozen at training time.
    """

    def __init__(self, input_dim: int, rng=None, hidden=ENCODER_HIDDEN, latent_dim=LATENT_DIM):
        rng = np.random.default_rng(rng)
        enc_dims = (input_dim, *hidden, latent_dim)
        self.encoder = DenseNet(enc_dims, rng=rng)
        self.decoder = DenseNet(enc_dims[::-1], rng=rng)
        self.shift = np.zeros(input_dim)
        self.scale = np.ones(input_dim)
        self.loss_history: list[float] = []

    @property
    def latent_dim(self) -> int:
        return self.encoder.layer_dims[-1]

    @property
    def params(self):
        return self.encoder.params + self.decoder.params

    def forward(self, x):
        z, enc_cache = self.encoder.forward(x)
        out, dec_cache = self.decoder.forward(z)
        return out, (enc_cache, dec_cache)

    def backward(self, cache, output_grad):
        enc_cache, dec_cache = cache
        dec_grads, gz = self.decoder.backward(dec_cache, output_grad)
        enc_grads, gx = self.encoder.backward(enc_cache, gz)
        return enc_grads + dec_grads, gx

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def encode(self, x) -> np.ndarray:
        return self.encoder(self.standardize(x))


def train_autoencoder(stats, epochs: int = 10, seed=0, lr: float = 0.005) -> Autoencoder:
    """Fit a fresh autoencoder to the per-gene statistic rows, full batch MSE.

    Each gene's statistics row is one sample, so the input width is fixed by
    the number of statistics regardless of how many genes are selected.
    """
    x = stats.table if isinstance(stats, GeneStatsBlock) else np.asarray(stats, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DegenerateInput("empty state input")
    ae = Autoencoder(x.shape[1], rng=seed)
    ae.shift = x.mean(axis=0)
    sd = x.std(axis=0)
    ae.scale = np.where(sd > 0, sd, 1.0)
    xs = ae.standardize(x)
    opt = AdamState.for_params(ae.params, lr=lr)
    net = _ParamView(ae)
    for _ in range(epochs):
        out, cache = ae.forward(xs)
        diff = out - xs
        ae.loss_history.append(float(np.mean(diff * diff)))
        grads, _ = ae.backward(cache, 2.0 * diff / diff.size)
        adam_step(net, opt, grads)
    out, _ = ae.forward(xs)
    ae.loss_history.append(float(np.mean((out - xs) ** 2)))
    return ae


class _ParamView:
    """Adapter so adam_step can update a composite model's flat parameter list."""

    def __init__(self, model):
        self.params = model.params


def encode_state(m_selected: ExpressionMatrix, seed=0, epochs: int = 10, lr: float = 0.005) -> np.ndarray:
    """Summarize a selected-gene matrix as a 64-d state vector.

    descriptive stats -> freshly trained autoencoder -> mean latent code over
    genes. An empty selection maps to the zero vector.
    """
    if m_selected.n_genes == 0:
        return np.zeros(LATENT_DIM)
    stats = descriptive_stats(m_selected)
    ae = train_autoencoder(stats, epochs=epochs, seed=seed, lr=lr)
    state = ae.encode(stats.table).mean(axis=0)
    if not np.all(np.isfinite(state)):
        raise NumericBlowup("numeric blowup: non-finite state")
    return state


def _relu_pattern(cache) -> np.ndarray:
    """Which hidden ReLU units are active, read from a forward cache.

    A dense net caches ``(acts, single)``; composite nets cache a tuple of
    those, which is walked in order.
    """
    if len(cache) == 2 and isinstance(cache[1], bool):
        return np.concatenate([np.ravel(a > 0) for a in cache[0][1:-1]] or [np.zeros(0, dtype=bool)])
    return np.concatenate([_relu_pattern(c) for c in cache])


def finite_diff_check(net, x, h: float = 1e-5, rng=None, max_per_param: int | None = None,
                      floor: float = 1e-7, report: dict | None = None) -> float:
    """Largest relative error between backprop and central differences.

    The probed scalar is ``sum(net(x) * R)`` for a fixed random ``R``.
    ``max_per_param`` limits how many coordinates of each tensor are probed.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.

    A ReLU net is not differentiable where a unit sits at zero, and a probe
    of width ``h`` that flips a unit on or off measures the average of two
    one-sided slopes. Such coordinates are re-probed with the step shrunk
    tenfold until no unit flips (down to ``h * 1e-4``). If ``report`` is a
    dict it receives the number of probed and re-probed coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(rng)
    out, cache = net.forward(x)
    weights = rng.standard_normal(np.shape(out))
    grads = net.backward(cache, weights)[0]
    base_pattern = _relu_pattern(cache)

    def probe():
        value, c = net.forward(x)
        return float(np.sum(value * weights)), _relu_pattern(c)

    worst, probed, reprobed = 0.0, 0, 0
    for p, g in zip(net.params, grads):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        coords = np.arange(flat_p.size)
        if max_per_param is not None and flat_p.size > max_per_param:
            coords = rng.choice(flat_p.size, size=max_per_param, replace=False)
        for i in coords:
            orig = flat_p[i]
            step = h
            while True:
                flat_p[i] = orig + step
                up, up_pattern = probe()
                flat_p[i] = orig - step
                down, down_pattern = probe()
                flat_p[i] = orig
                crossed = not (np.array_equal(up_pattern, base_pattern)
                               and np.array_equal(down_pattern, base_pattern))
                if not crossed or step <= h * 1e-4:
                    break
                step /= 10.0
            reprobed += step < h
            probed += 1
            numeric = (up - down) / (2 * step)
            err = abs(numeric - flat_g[i]) / max(abs(numeric), abs(flat_g[i]), floor)
            worst = max(worst, err)
    if report is not None:
        report.update(probed=probed, reprobed=reprobed)
    return worst
