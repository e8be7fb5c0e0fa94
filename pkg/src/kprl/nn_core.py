"""Dense numeric kernels: stacked bidirectional LSTM, BPTT, Adam.

Everything is float64 numpy. Parameter arrays may carry extra leading axes
(a "stack" of independently initialized models sharing one input batch);
every operation broadcasts over those axes, so training an ensemble costs
one fused tensor program instead of one slow loop per member. Single-model
use is the degenerate case with no leading axes.

Sequences are right-padded; masked steps carry hidden state through
unchanged, so padding never enters the recurrence in either direction.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

GATE_ORDER = "ifgo"  # input, forget, cell, output


def sigmoid(x):
    """Elementwise logistic function (saturates cleanly at 0/1)."""
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass
class SequenceBatch:
    """A padded batch of feature sequences.

    features: (batch, max_len, feature_dim) float64
    mask:     (batch, max_len) float64, 1.0 on real tokens, 0.0 on padding;
              within each row the ones form a prefix (right padding).
    """

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.features.ndim != 3:
            raise ShapeError(f"features must be 3-D, got {self.features.shape}")
        if self.mask.shape != self.features.shape[:2]:
            raise ShapeError(
                f"mask shape {self.mask.shape} != {self.features.shape[:2]}"
            )

    @property
    def batch_size(self):
        return self.features.shape[0]

    @property
    def max_len(self):
        return self.features.shape[1]

    @property
    def feature_dim(self):
        return self.features.shape[2]

    @property
    def lengths(self):
        return self.mask.sum(axis=1).astype(int)

    def validate(self):
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ValueError("mask must be 0/1")
        # right padding: once a row hits 0 it stays 0
        if np.any(np.diff(self.mask, axis=1) > 0):
            raise ValueError("mask must be a prefix of ones (right padding)")

    @classmethod
    def from_sequences(cls, seqs, max_len=None):
        """Stack per-sentence (len, dim) arrays into one padded batch."""
        seqs = [np.asarray(s, dtype=np.float64) for s in seqs]
        if not seqs:
            raise ShapeError("cannot batch zero sequences")
        dim = seqs[0].shape[1]
        for s in seqs:
            if s.ndim != 2 or s.shape[1] != dim:
                raise ShapeError("all sequences must be (len, dim) with equal dim")
        longest = max(s.shape[0] for s in seqs)
        if max_len is None:
            max_len = longest
        elif max_len < longest:
            raise ShapeError(f"max_len {max_len} < longest sequence {longest}")
        feats = np.zeros((len(seqs), max_len, dim))
        mask = np.zeros((len(seqs), max_len))
        for r, s in enumerate(seqs):
            feats[r, : s.shape[0]] = s
            mask[r, : s.shape[0]] = 1.0
        return cls(feats, mask)


@dataclass
class LstmDirectionParams:
    """One LSTM direction: W (...,4H,D), U (...,4H,H), b (...,4H).

    Gate blocks along the 4H axis follow ``GATE_ORDER`` (i, f, g, o).
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)

    @property
    def hidden_size(self):
        return self.U.shape[-1]

    @property
    def input_size(self):
        return self.W.shape[-1]

    def validate(self):
        h = self.hidden_size
        if self.W.shape[-2] != 4 * h or self.U.shape[-2] != 4 * h or self.b.shape[-1] != 4 * h:
            raise ShapeError(
                f"inconsistent gate dimension: W {self.W.shape}, U {self.U.shape}, b {self.b.shape}"
            )
        for a in (self.W, self.U, self.b):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters contain non-finite values")


@dataclass(frozen=True)
class NetworkDims:
    """Shape summary of the two-layer bidirectional network."""

    input_dim: int
    hidden1: int = 150
    hidden2: int = 32


@dataclass
class NetworkParams:
    """All weights of the 2-layer bi-LSTM with a per-token sigmoid head."""

    layer1_fw: LstmDirectionParams
    layer1_bw: LstmDirectionParams
    layer2_fw: LstmDirectionParams
    layer2_bw: LstmDirectionParams
    out_w: np.ndarray  # (..., 2*H2)
    out_b: np.ndarray  # (...,) scalar per stacked model

    def __post_init__(self):
        self.out_w = np.asarray(self.out_w, dtype=np.float64)
        self.out_b = np.asarray(self.out_b, dtype=np.float64)

    @property
    def dims(self):
        return NetworkDims(
            input_dim=self.layer1_fw.input_size,
            hidden1=self.layer1_fw.hidden_size,
            hidden2=self.layer2_fw.hidden_size,
        )

    @property
    def stack_shape(self):
        """Leading axes shared by every parameter array (empty for a single model)."""
        return self.out_w.shape[:-1]

    def validate(self):
        for d in (self.layer1_fw, self.layer1_bw, self.layer2_fw, self.layer2_bw):
            d.validate()
        h1, h2 = self.layer1_fw.hidden_size, self.layer2_fw.hidden_size
        if self.layer2_fw.input_size != 2 * h1 or self.layer2_bw.input_size != 2 * h1:
            raise ShapeError("layer2 input size must be 2*H1")
        if self.out_w.shape[-1] != 2 * h2:
            raise ShapeError("output head width must be 2*H2")
        if not np.all(np.isfinite(self.out_w)) or not np.all(np.isfinite(self.out_b)):
            raise ValueError("parameters contain non-finite values")


PARAM_LEAF_NAMES = tuple(
    f"{layer}.{leaf}"
    for layer in ("layer1_fw", "layer1_bw", "layer2_fw", "layer2_bw")
    for leaf in ("W", "U", "b")
) + ("out_w", "out_b")


def param_leaves(p):
    """All parameter arrays of ``p`` in ``PARAM_LEAF_NAMES`` order."""
    leaves = []
    for d in (p.layer1_fw, p.layer1_bw, p.layer2_fw, p.layer2_bw):
        leaves.extend([d.W, d.U, d.b])
    leaves.extend([p.out_w, p.out_b])
    return leaves


def params_from_leaves(leaves):
    """Rebuild a NetworkParams from arrays in ``PARAM_LEAF_NAMES`` order."""
    return _from_leaves(list(leaves))


def _from_leaves(leaves):
    dirs = [
        LstmDirectionParams(leaves[i], leaves[i + 1], leaves[i + 2])
        for i in (0, 3, 6, 9)
    ]
    return NetworkParams(*dirs, out_w=leaves[12], out_b=leaves[13])


def clone_params(p):
    return _from_leaves([a.copy() for a in param_leaves(p)])


def zeros_like_params(p):
    return _from_leaves([np.zeros_like(a) for a in param_leaves(p)])


def stack_params(models):
    """Stack single-model parameter sets along a new leading axis."""
    groups = zip(*(param_leaves(m) for m in models))
    return _from_leaves([np.stack(g) for g in groups])


def param_slice(p, index):
    """Extract one model from a stacked parameter set (copies)."""
    return _from_leaves([a[index].copy() for a in param_leaves(p)])


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _glorot(rng, rows, cols):
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_params(seed, dims):
    """Glorot-uniform weights, zero biases except forget-gate bias 1.0.

    Deterministic for a given seed; different seeds give the ensemble its
    diversity (no other source of randomness in the model).
    """
    rng = np.random.default_rng(seed)

    def direction(input_size, hidden):
        W = _glorot(rng, 4 * hidden, input_size)
        U = _glorot(rng, 4 * hidden, hidden)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        return LstmDirectionParams(W, U, b)

    l1f = direction(dims.input_dim, dims.hidden1)
    l1b = direction(dims.input_dim, dims.hidden1)
    l2f = direction(2 * dims.hidden1, dims.hidden2)
    l2b = direction(2 * dims.hidden1, dims.hidden2)
    a = np.sqrt(6.0 / (2 * dims.hidden2 + 1))
    out_w = rng.uniform(-a, a, size=2 * dims.hidden2)
    out_b = np.zeros(())
    return NetworkParams(l1f, l1b, l2f, l2b, out_w, out_b)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def lstm_cell_forward(x_t, h_prev, c_prev, p):
    """One LSTM step for a single (unstacked) direction.

    i, f, o are sigmoids of their gate pre-activations, g is tanh;
    c_t = f*c_prev + i*g and h_t = o*tanh(c_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if p.W.ndim != 2:
        raise ShapeError("lstm_cell_forward expects unstacked parameters")
    H = p.hidden_size
    if x_t.shape != (p.input_size,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ShapeError(
            f"cell inputs {x_t.shape}/{h_prev.shape}/{c_prev.shape} do not match "
            f"D={p.input_size}, H={H}"
        )
    z = p.W @ x_t + p.U @ h_prev + p.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H : 2 * H])
    g = np.tanh(z[2 * H : 3 * H])
    o = sigmoid(z[3 * H :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


@dataclass
class _DirectionCache:
    """Per-step activations saved in processing order for the backward pass."""

    reverse: bool
    mask_proc: np.ndarray  # (B, T)
    x_flat: np.ndarray  # (..., B*T, D) processing order
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray
    h_prev: np.ndarray


def lstm_direction_forward(features, mask, p, reverse=False, return_cache=False):
    """Run one LSTM direction over a padded batch.

    features: (B, T, D) or, when sharing a stacked layer's output,
    (..., B, T, D) with leading axes matching the parameter stack.
    With ``reverse=True`` the recurrence consumes positions right to left,
    i.e. it processes each sentence's real-token subsequence reversed
    (left padding after the flip is skipped by the state carry).
    Outputs are (..., B, T, H), aligned to the original positions.
    """
    feats = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if feats.shape[-1] != p.input_size:
        raise ShapeError(
            f"feature dim {feats.shape[-1]} != direction input size {p.input_size}"
        )
    B, T = mask.shape
    if feats.shape[-3:-1] != (B, T):
        raise ShapeError(f"features {feats.shape} do not match mask {mask.shape}")
    H = p.hidden_size
    lead = p.W.shape[:-2]
    if reverse:
        feats = feats[..., ::-1, :]
        mask_proc = mask[:, ::-1]
    else:
        mask_proc = mask
    x_flat = np.ascontiguousarray(feats).reshape(feats.shape[:-3] + (B * T, feats.shape[-1]))
    zx = np.matmul(x_flat, np.swapaxes(p.W, -1, -2))
    zx = zx.reshape(zx.shape[:-2] + (B, T, 4 * H)) + p.b[..., None, None, :]
    UT = np.swapaxes(p.U, -1, -2)

    h = np.zeros(lead + (B, H))
    c = np.zeros(lead + (B, H))
    outs = np.empty(lead + (B, T, H))
    cache = None
    if return_cache:
        alloc = lambda: np.empty(lead + (B, T, H))
        cache = _DirectionCache(
            reverse=reverse,
            mask_proc=mask_proc,
            x_flat=x_flat,
            i=alloc(),
            f=alloc(),
            g=alloc(),
            o=alloc(),
            c_prev=alloc(),
            tanh_c=alloc(),
            h_prev=alloc(),
        )
    for t in range(T):
        z = zx[..., t, :] + np.matmul(h, UT)
        i = sigmoid(z[..., :H])
        f = sigmoid(z[..., H : 2 * H])
        g = np.tanh(z[..., 2 * H : 3 * H])
        o = sigmoid(z[..., 3 * H :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        m = mask_proc[:, t][:, None]
        if return_cache:
            cache.i[..., t, :] = i
            cache.f[..., t, :] = f
            cache.g[..., t, :] = g
            cache.o[..., t, :] = o
            cache.c_prev[..., t, :] = c
            cache.tanh_c[..., t, :] = tanh_c
            cache.h_prev[..., t, :] = h
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        outs[..., t, :] = h
    if reverse:
        outs = outs[..., ::-1, :]
    if return_cache:
        return outs, cache
    return outs


def _lstm_direction_backward(cache, grad_out, p, need_dx):
    """Backward through one direction.

    grad_out is (..., B, T, H) in original order; returns parameter grads
    and, when requested, the gradient with respect to the direction input
    (also in original order).
    """
    H = p.hidden_size
    B, T = cache.mask_proc.shape
    lead = p.W.shape[:-2]
    gout = grad_out[..., ::-1, :] if cache.reverse else grad_out

    dzs = np.empty(lead + (B, T, 4 * H))
    dh = np.zeros(lead + (B, H))
    dc = np.zeros(lead + (B, H))
    for t in range(T - 1, -1, -1):
        m = cache.mask_proc[:, t][:, None]
        i = cache.i[..., t, :]
        f = cache.f[..., t, :]
        g = cache.g[..., t, :]
        o = cache.o[..., t, :]
        c_prev = cache.c_prev[..., t, :]
        tanh_c = cache.tanh_c[..., t, :]
        dh_total = dh + gout[..., t, :]
        dh_new = m * dh_total
        dc_new = m * dc + dh_new * o * (1.0 - tanh_c * tanh_c)
        dz = dzs[..., t, :]
        dz[..., :H] = dc_new * g * (i * (1.0 - i))
        dz[..., H : 2 * H] = dc_new * c_prev * (f * (1.0 - f))
        dz[..., 2 * H : 3 * H] = dc_new * i * (1.0 - g * g)
        dz[..., 3 * H :] = dh_new * tanh_c * (o * (1.0 - o))
        dh = (1.0 - m) * dh_total + np.matmul(dz, p.U)
        dc = (1.0 - m) * dc + dc_new * f
    dz_flat = dzs.reshape(lead + (B * T, 4 * H))
    dz_T = np.swapaxes(dz_flat, -1, -2)
    dW = np.matmul(dz_T, cache.x_flat)
    h_prev_flat = cache.h_prev.reshape(lead + (B * T, H))
    dU = np.matmul(dz_T, h_prev_flat)
    db = dz_flat.sum(axis=-2)
    grads = LstmDirectionParams(dW, dU, db)
    dx = None
    if need_dx:
        # align stack axes: dzs is (..., B, T, 4H), W is (..., 4H, D)
        dx = np.matmul(dzs, p.W[..., None, :, :] if p.W.ndim > 2 else p.W)
        if cache.reverse:
            dx = dx[..., ::-1, :]
    return grads, dx


@dataclass
class _ForwardCache:
    y_hat: np.ndarray
    h2: np.ndarray
    c1f: _DirectionCache = field(repr=False, default=None)
    c1b: _DirectionCache = field(repr=False, default=None)
    c2f: _DirectionCache = field(repr=False, default=None)
    c2b: _DirectionCache = field(repr=False, default=None)


def _forward(batch, p, want_cache):
    if batch.feature_dim != p.layer1_fw.input_size:
        raise ShapeError(
            f"batch feature dim {batch.feature_dim} != network input "
            f"{p.layer1_fw.input_size}"
        )
    feats, mask = batch.features, batch.mask
    if want_cache:
        o1f, c1f = lstm_direction_forward(feats, mask, p.layer1_fw, False, True)
        o1b, c1b = lstm_direction_forward(feats, mask, p.layer1_bw, True, True)
    else:
        o1f = lstm_direction_forward(feats, mask, p.layer1_fw, False)
        o1b = lstm_direction_forward(feats, mask, p.layer1_bw, True)
        c1f = c1b = None
    l1 = np.concatenate([o1f, o1b], axis=-1)
    if want_cache:
        o2f, c2f = lstm_direction_forward(l1, mask, p.layer2_fw, False, True)
        o2b, c2b = lstm_direction_forward(l1, mask, p.layer2_bw, True, True)
    else:
        o2f = lstm_direction_forward(l1, mask, p.layer2_fw, False)
        o2b = lstm_direction_forward(l1, mask, p.layer2_bw, True)
        c2f = c2b = None
    h2 = np.concatenate([o2f, o2b], axis=-1)
    logits = np.einsum("...btk,...k->...bt", h2, p.out_w) + p.out_b[..., None, None]
    y_hat = sigmoid(logits)
    return _ForwardCache(y_hat=y_hat, h2=h2, c1f=c1f, c1b=c1b, c2f=c2f, c2b=c2b)


def network_forward(batch, p):
    """Per-token probabilities, shape (..., B, T) in [0, 1].

    Padded positions still emit a value; callers exclude them via the mask.
    """
    return _forward(batch, p, want_cache=False).y_hat


def _backprop(batch, p, fw, dy):
    mask = batch.mask
    h1 = p.layer1_fw.hidden_size
    h2 = p.layer2_fw.hidden_size
    dlogit = dy * mask * fw.y_hat * (1.0 - fw.y_hat)
    d_out_w = np.einsum("...bt,...btk->...k", dlogit, fw.h2)
    d_out_b = dlogit.sum(axis=(-2, -1))
    dh2 = dlogit[..., None] * p.out_w[..., None, None, :]
    g2f, dx2f = _lstm_direction_backward(fw.c2f, dh2[..., :h2], p.layer2_fw, True)
    g2b, dx2b = _lstm_direction_backward(fw.c2b, dh2[..., h2:], p.layer2_bw, True)
    dl1 = dx2f + dx2b
    g1f, _ = _lstm_direction_backward(fw.c1f, dl1[..., :h1], p.layer1_fw, False)
    g1b, _ = _lstm_direction_backward(fw.c1b, dl1[..., h1:], p.layer1_bw, False)
    return NetworkParams(g1f, g1b, g2f, g2b, out_w=d_out_w, out_b=np.asarray(d_out_b))


def network_backward(batch, labels, p, loss_grad_fn):
    """Exact gradients of the batch loss with respect to every parameter.

    ``loss_grad_fn(labels, y_hat, mask) -> (loss, dloss/dy_hat)`` must
    supply zero gradient at padded positions (the mask is applied again
    here defensively).
    """
    fw = _forward(batch, p, want_cache=True)
    _, dy = loss_grad_fn(labels, fw.y_hat, batch.mask)
    return _backprop(batch, p, fw, dy)


def forward_backward(batch, labels, p, loss_grad_fn):
    """One fused pass; returns ``(loss, y_hat, grads)``."""
    fw = _forward(batch, p, want_cache=True)
    loss, dy = loss_grad_fn(labels, fw.y_hat, batch.mask)
    grads = _backprop(batch, p, fw, dy)
    return loss, fw.y_hat, grads


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates mirroring the parameter shapes."""

    m: NetworkParams
    v: NetworkParams
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=zeros_like_params(p), v=zeros_like_params(p),
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(p, grads, state):
    """Standard Adam update with bias correction; mutates ``p`` and ``state``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for leaf, g, m, v in zip(
        param_leaves(p), param_leaves(grads), param_leaves(state.m), param_leaves(state.v)
    ):
        if leaf.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {leaf.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        leaf -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return p, state


def clip_global_norm(grads, max_norm):
    """Scale gradients so each stacked model's global L2 norm is <= max_norm.

    Mutates ``grads`` in place and returns the pre-clip norms (one per
    stacked model, scalar for a single model).
    """
    lead = grads.stack_shape
    total = np.zeros(lead)
    for leaf in param_leaves(grads):
        extra = leaf.ndim - len(lead)
        sq = leaf * leaf
        total += sq.sum(axis=tuple(range(-extra, 0))) if extra else sq
    norms = np.sqrt(total)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > max_norm, max_norm / np.where(norms > 0, norms, 1.0), 1.0)
    for leaf in param_leaves(grads):
        extra = leaf.ndim - len(lead)
        leaf *= scale.reshape(lead + (1,) * extra) if extra else scale
    return norms


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def grad_check(p, batch, labels, eps=1e-5, loss_fn=None, loss_grad_fn=None, analytic=None):
    """Max relative error between BPTT and central finite differences.

    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8). Only
    practical for small networks; the default loss is the soft-F1 loss.
    ``analytic`` overrides the backward-pass gradients (fault injection).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    from . import loss as loss_mod

    if loss_grad_fn is None:
        loss_grad_fn = loss_mod.loss_and_grad
    if loss_fn is None:
        loss_fn = lambda y, y_hat, mask: loss_grad_fn(y, y_hat, mask)[0]
    if analytic is None:
        analytic = network_backward(batch, labels, p, loss_grad_fn)
    worst = 0.0
    for leaf, a_leaf in zip(param_leaves(p), param_leaves(analytic)):
        it = np.nditer(leaf, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = leaf[idx]
            leaf[idx] = orig + eps
            up = loss_fn(labels, network_forward(batch, p), batch.mask)
            leaf[idx] = orig - eps
            down = loss_fn(labels, network_forward(batch, p), batch.mask)
            leaf[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(a_leaf[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def require_finite(p, context="network"):
    """Raise NumericError if any parameter is non-finite."""
    for leaf in param_leaves(p):
        if not np.all(np.isfinite(leaf)):
            raise NumericError(f"{context} produced non-finite values")
