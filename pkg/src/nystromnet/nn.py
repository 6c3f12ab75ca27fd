"""Layer stack with hand-written reverse-mode gradients, softmax
cross-entropy, Adam and finite-difference gradient checking.

Layers work on two kinds of input. ``embed`` maps raw features to whatever
the layer's frozen front end produces (kernel vectors for Nystrom layers,
zero padding for Fastfood, identity otherwise). ``forward`` and
``backward`` only see the embedded input, so frozen work can be computed
once per dataset and reused across epochs.
"""

import copy

import numpy as np

from .features import LandmarkSet, pad_to
from .kernels import gram
from .linalg import fwht


class StaleCacheError(RuntimeError):
    pass


class Layer:
    frozen_front = False

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self._cache = None

    def embed(self, x):
        return x

    def forward(self, z):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def invalidate(self):
        self._cache = None

    def _cached(self):
        if self._cache is None:
            raise StaleCacheError(f"{type(self).__name__}: backward without a fresh forward")
        cache, self._cache = self._cache, None
        return cache

    @property
    def in_dim(self):
        raise NotImplementedError

    @property
    def out_dim(self):
        raise NotImplementedError

    def landmark_memory(self):
        return 0


def glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class DenseLayer(Layer):
    def __init__(self, weight, bias, activation="none"):
        super().__init__()
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[1],):
            raise ValueError("bias length must match weight columns")
        self.params = {"weight": weight, "bias": bias}
        self.activation = activation

    @classmethod
    def init(cls, n_in, n_out, activation="none", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(glorot(rng, n_in, n_out), np.zeros(n_out), activation)

    @property
    def in_dim(self):
        return self.params["weight"].shape[0]

    @property
    def out_dim(self):
        return self.params["weight"].shape[1]

    def forward(self, z):
        if z.shape[1] != self.in_dim:
            raise ValueError(f"DenseLayer expects {self.in_dim} inputs, got {z.shape[1]}")
        pre = z @ self.params["weight"] + self.params["bias"]
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        self._cache = (z, pre)
        return out

    def backward(self, g):
        z, pre = self._cached()
        if self.activation == "relu":
            g = g * (pre > 0)
        grads = {"weight": z.T @ g, "bias": g.sum(axis=0)}
        return g @ self.params["weight"].T, grads



class AdaptiveNystromLayer(Layer):
    """Kernel vector against frozen landmarks followed by a linear map W.

    With ``adaptive=False`` W stays at K11^{-1/2} and nothing is trained.
    """
    frozen_front = True

    def __init__(self, landmarks: LandmarkSet, adaptive=True, w=None):
        super().__init__()
        self.landmarks = landmarks
        self.adaptive = adaptive
        if not adaptive:
            if w is not None:
                raise ValueError("a non-adaptive layer always uses K11^{-1/2}")
            self.buffers = {"w": landmarks.k11_inv_sqrt}
        else:
            w = np.array(landmarks.k11_inv_sqrt if w is None else w, dtype=np.float64)
            if w.shape[0] != landmarks.m:
                raise ValueError(f"W must have {landmarks.m} rows")
            self.params = {"w": w}

    @classmethod
    def init(cls, landmarks, adaptive=True, out_dim=None, init="k11", rng=None):
        m = landmarks.m
        out_dim = m if out_dim is None else out_dim
        if not adaptive or (init == "k11" and out_dim == m):
            return cls(landmarks, adaptive)
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(landmarks, True, glorot(rng, m, out_dim))

    @property
    def w(self):
        return self.params["w"] if self.adaptive else self.buffers["w"]

    @property
    def in_dim(self):
        return self.landmarks.d

    @property
    def out_dim(self):
        return self.w.shape[1]

    @property
    def embed_dim(self):
        return self.landmarks.m

    def embed(self, x):
        if x.shape[1] != self.landmarks.d:
            raise ValueError(f"Nystrom layer expects {self.landmarks.d} inputs, got {x.shape[1]}")
        return gram(self.landmarks.kernel, x, self.landmarks.points)

    def forward(self, kvec):
        self._cache = kvec
        return kvec @ self.w

    def backward(self, g):
        kvec = self._cached()
        # the kernel vector does not depend on any trainable tensor
        return None, ({"w": kvec.T @ g} if self.adaptive else {})

    def landmark_memory(self):
        return self.landmarks.points.size



class MultiKernelLayer(Layer):
    """Concatenation of several Nystrom layers.

    ``group_slices`` optionally restricts sublayer i to input columns
    ``group_slices[i]`` (one kernel per feature group).
    """
    frozen_front = True

    def __init__(self, sublayers, group_slices=None):
        super().__init__()
        if not sublayers:
            raise ValueError("need at least one sublayer")
        self.sublayers = list(sublayers)
        if group_slices is not None:
            group_slices = [slice(*s) if isinstance(s, tuple) else s for s in group_slices]
            if len(group_slices) != len(self.sublayers):
                raise ValueError("one slice per sublayer")
            spans = sorted((s.start, s.stop) for s in group_slices)
            if any(a[1] > b[0] for a, b in zip(spans, spans[1:])):
                raise ValueError("group slices overlap")
            for s, sub in zip(group_slices, self.sublayers):
                if s.stop - s.start != sub.in_dim:
                    raise ValueError("slice width does not match sublayer landmarks")
        else:
            d = {s.in_dim for s in self.sublayers}
            if len(d) != 1:
                raise ValueError("sublayers disagree on input dimension")
        self.group_slices = group_slices
        self._sync()

    def _sync(self):
        self.params = {}
        for i, s in enumerate(self.sublayers):
            for k, v in s.params.items():
                self.params[f"sub{i}.{k}"] = v

    @property
    def in_dim(self):
        if self.group_slices is None:
            return self.sublayers[0].in_dim
        return max(s.stop for s in self.group_slices)

    @property
    def out_dim(self):
        return sum(s.out_dim for s in self.sublayers)

    @property
    def embed_dim(self):
        return sum(s.embed_dim for s in self.sublayers)

    def embed(self, x):
        if x.shape[1] < self.in_dim:
            raise ValueError(f"multi-kernel layer expects {self.in_dim} inputs, got {x.shape[1]}")
        parts = []
        for i, s in enumerate(self.sublayers):
            xi = x if self.group_slices is None else x[:, self.group_slices[i]]
            parts.append(s.embed(xi))
        return np.hstack(parts)

    def forward(self, kvec):
        # sublayers hold views of self.params after an optimizer step
        for i, s in enumerate(self.sublayers):
            for k in s.params:
                s.params[k] = self.params[f"sub{i}.{k}"]
        outs, off = [], 0
        for s in self.sublayers:
            outs.append(s.forward(kvec[:, off:off + s.embed_dim]))
            off += s.embed_dim
        self._cache = True
        return np.hstack(outs)

    def backward(self, g):
        self._cached()
        grads, off = {}, 0
        for i, s in enumerate(self.sublayers):
            _, gi = s.backward(g[:, off:off + s.out_dim])
            off += s.out_dim
            for k, v in gi.items():
                grads[f"sub{i}.{k}"] = v
        return None, grads

    def invalidate(self):
        self._cache = None
        for s in self.sublayers:
            s.invalidate()

    def landmark_memory(self):
        return sum(s.landmark_memory() for s in self.sublayers)



class FastfoodLayer(Layer):
    """Stacked Fastfood trig features; adaptive mode trains S, G and B."""

    def __init__(self, blocks, adaptive=False, in_dim=None):
        super().__init__()
        if not blocks:
            raise ValueError("need at least one block")
        self._setup([b.s_diag for b in blocks], [b.g_diag for b in blocks],
                    [b.b_diag for b in blocks], [b.perm for b in blocks],
                    [b.sigma for b in blocks], adaptive, in_dim)

    @classmethod
    def from_arrays(cls, s, g, b, perms, sigmas, adaptive, in_dim):
        """Rebuild from stored diagonals; trained diagonals need not satisfy
        the sampling constraints of a fresh FastfoodBlock."""
        layer = cls.__new__(cls)
        Layer.__init__(layer)
        layer._setup(s, g, b, perms, sigmas, adaptive, in_dim)
        return layer

    def _setup(self, s, g, b, perms, sigmas, adaptive, in_dim):
        n = len(s[0])
        if any(len(a) != n for a in (*s, *g, *b, *perms)):
            raise ValueError("blocks disagree on d_pad")
        self.d_pad = n
        self._in_dim = n if in_dim is None else in_dim
        if self._in_dim > n:
            raise ValueError("input dimension exceeds d_pad")
        self.adaptive = adaptive
        self.perms = [np.asarray(p) for p in perms]
        self.sigmas = [float(x) for x in sigmas]
        self.scales = [1.0 / (sig * np.sqrt(n)) for sig in self.sigmas]
        store = self.params if adaptive else self.buffers
        for i in range(len(s)):
            store[f"s{i}"] = np.array(s[i], dtype=np.float64)
            store[f"g{i}"] = np.array(g[i], dtype=np.float64)
            store[f"b{i}"] = np.array(b[i], dtype=np.float64)

    def _get(self, name):
        return self.params[name] if self.adaptive else self.buffers[name]

    @property
    def stacks(self):
        return len(self.perms)

    @property
    def in_dim(self):
        return self._in_dim

    @property
    def out_dim(self):
        return 2 * self.d_pad * self.stacks

    def embed(self, x):
        if x.shape[1] != self._in_dim:
            raise ValueError(f"Fastfood layer expects {self._in_dim} inputs, got {x.shape[1]}")
        return pad_to(x, self.d_pad)

    def forward(self, x):
        norm = 1.0 / np.sqrt(self.d_pad * self.stacks)
        cos_parts, sin_parts, cache = [], [], []
        for i in range(self.stacks):
            s, g, b = self._get(f"s{i}"), self._get(f"g{i}"), self._get(f"b{i}")
            p = fwht(x * b)[:, self.perms[i]]
            h2 = fwht(p * g)
            v = h2 * (s * self.scales[i])
            cos_parts.append(np.cos(v))
            sin_parts.append(np.sin(v))
            cache.append((p, h2))
        self._cache = (x, cache, cos_parts, sin_parts)
        return np.hstack(cos_parts + sin_parts) * norm

    def backward(self, gout):
        x, cache, cos_parts, sin_parts = self._cached()
        n, k = self.d_pad, self.stacks
        norm = 1.0 / np.sqrt(n * k)
        grads = {}
        for i in range(k):
            gc = gout[:, i * n:(i + 1) * n]
            gs = gout[:, (k + i) * n:(k + i + 1) * n]
            dv = norm * (cos_parts[i] * gs - sin_parts[i] * gc)
            if not self.adaptive:
                continue
            p, h2 = cache[i]
            s, g = self.params[f"s{i}"], self.params[f"g{i}"]
            c = self.scales[i]
            grads[f"s{i}"] = c * np.sum(dv * h2, axis=0)
            # H is symmetric, so its adjoint is another transform
            dt = fwht(dv * (s * c))
            grads[f"g{i}"] = np.sum(dt * p, axis=0)
            dh1 = np.empty_like(dt)
            dh1[:, self.perms[i]] = dt * g
            grads[f"b{i}"] = np.sum(fwht(dh1) * x, axis=0)
        return None, grads



class LayerStack:
    """Ordered layers ending in logits. Only the first layer may have a
    frozen front end; its embedded input carries no gradient."""

    def __init__(self, layers):
        self.layers = list(layers)
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer {i} outputs {a.out_dim}, layer {i + 1} expects {b.in_dim}")
        for i, layer in enumerate(self.layers[1:], 1):
            if layer.frozen_front or isinstance(layer, FastfoodLayer):
                raise ValueError(f"layer {i}: kernel layers must come first")

    def named_params(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def set_params(self, params):
        for name, value in params.items():
            i, k = name.split(".", 1)
            self.layers[int(i)].params[k] = value

    def embed(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not self.layers:
            return x
        return self.layers[0].embed(x)

    def forward(self, x, embedded=False):
        z = x if embedded else self.embed(x)
        for layer in self.layers:
            z = layer.forward(z)
        return z

    def backward(self, dlogits):
        grads = {}
        g = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            g, gi = self.layers[i].backward(g)
            for k, v in gi.items():
                grads[f"{i}.{k}"] = v
        return grads

    def invalidate(self):
        for layer in self.layers:
            layer.invalidate()

    def predict(self, x, embedded=False):
        out = self.forward(x, embedded)
        self.invalidate()
        return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError("one label per row")
    if b and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    if b == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return float(loss), d / b


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place from ``grads`` (both keyed by name)."""
        if set(params) != set(grads):
            raise ValueError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {params[k].shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= lr_t * m / (np.sqrt(v) + self.eps * np.sqrt(1 - b2 ** self.t))
        return params

    def copy(self):
        return copy.deepcopy(self)


def adam_step(state, params, grads):
    return state.step(params, grads)


def param_count(stack):
    """Number of trainable scalars; landmark storage is not counted."""
    layers = stack.layers if isinstance(stack, LayerStack) else stack
    return int(sum(p.size for layer in layers for p in layer.params.values()))


def landmark_memory(stack):
    layers = stack.layers if isinstance(stack, LayerStack) else stack
    return int(sum(layer.landmark_memory() for layer in layers))


def gradient_check(stack, x, labels, n_probe=100, h=1e-5, seed=0, floor=1e-6):
    """Compare backprop gradients to central differences on random scalars.

    Returns a list of (name, index, analytic, numeric, rel_err). Relative
    error is |a - n| / max(|a|, |n|, floor); the floor keeps roundoff on
    near-zero gradients from dominating.
    """
    z = stack.embed(x)
    _, d = loss_softmax_xent(stack.forward(z, embedded=True), labels)
    grads = stack.backward(d)
    params = stack.named_params()
    names = sorted(params)
    if not names:
        return []
    sizes = np.array([params[k].size for k in names])
    rng = np.random.default_rng(seed)
    # spread probes over tensors in proportion to size, at least one each
    picks = [(k, int(rng.integers(params[k].size))) for k in names]
    flat = rng.choice(sizes.sum(), size=max(0, n_probe - len(names)), replace=sizes.sum() < n_probe)
    bounds = np.cumsum(sizes)
    for f in flat:
        j = int(np.searchsorted(bounds, f, side="right"))
        picks.append((names[j], int(f - (bounds[j] - sizes[j]))))

    def loss_at():
        out = stack.forward(z, embedded=True)
        stack.invalidate()
        return loss_softmax_xent(out, labels)[0]

    results = []
    for k, idx in picks:
        p = params[k].reshape(-1)
        old = p[idx]
        p[idx] = old + h
        lp = loss_at()
        p[idx] = old - h
        lm = loss_at()
        p[idx] = old
        num = (lp - lm) / (2 * h)
        ana = grads[k].reshape(-1)[idx]
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        results.append((k, idx, float(ana), float(num), float(rel)))
    return results
