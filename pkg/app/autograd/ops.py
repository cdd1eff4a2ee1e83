"""
Operatori differenziabili del motore

Ogni op calcola il forward (riduzioni e convoluzioni accumulate in float64),
registra un nodo sul tape attivo e dichiara la propria regola backward.
"""
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.autograd.tensor import OpKind, Tensor, record, register_backward
from app.errors import ShapeMismatchError

# Clamp delle probabilità prima di ogni log
PROB_EPS = 1e-7


def _f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _require_rank(t: Tensor, rank: int, what: str) -> None:
    if t.data.ndim != rank:
        raise ShapeMismatchError(f"{what}: atteso rank {rank}, ricevuto shape {t.shape}")


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shape diverse {a.shape} vs {b.shape}")


def _pad(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="constant", constant_values=value)


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Vista N x C x Ho x Wo x K x K delle finestre (nessuna copia)"""
    return sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """floor((in + 2*pad - K) / stride) + 1"""
    return (size + 2 * pad - kernel) // stride + 1


# --------------------------------------------------------------------------- conv2d

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Convoluzione 2D (cross-correlation) NCHW x OIKK con zero padding

    Raises:
        ShapeMismatchError: canali incompatibili o input più piccolo del kernel
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(w, 4, "conv2d kernel")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: stride={stride} pad={pad} non validi")
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if c != i:
        raise ShapeMismatchError(f"conv2d: input {x.shape} incompatibile con kernel {w.shape} (canali {c} != {i})")
    if kh != kw:
        raise ShapeMismatchError(f"conv2d: kernel non quadrato {w.shape} (input {x.shape})")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeMismatchError(f"conv2d: input {x.shape} più piccolo del kernel {w.shape} con pad={pad}")
    if b is not None and b.shape != (o,):
        raise ShapeMismatchError(f"conv2d: bias {b.shape} incompatibile con kernel {w.shape}")

    xp = _pad(_f64(x.data), pad)
    cols = _windows(xp, kh, stride)
    out = np.tensordot(cols, _f64(w.data), axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + _f64(b.data)[None, :, None, None]

    inputs = (x, w) if b is None else (x, w, b)
    return record(OpKind.CONV2D, inputs, out, stride=stride, pad=pad)


@register_backward(OpKind.CONV2D)
def _conv2d_backward(node, grad):
    x, w = node.inputs[0], node.inputs[1]
    stride, pad = node.saved["stride"], node.saved["pad"]
    grad = _f64(grad)
    k = w.shape[2]
    _, _, h, wd = x.shape
    ho, wo = grad.shape[2], grad.shape[3]

    xp = _pad(_f64(x.data), pad)
    dw = None
    if w.tracked:
        cols = _windows(xp, k, stride)
        dw = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))

    dx = None
    if x.tracked:
        dcols = np.tensordot(grad, _f64(w.data), axes=([1], [0]))  # N, Ho, Wo, C, K, K
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd]

    grads = [dx, dw]
    if len(node.inputs) == 3:
        grads.append(grad.sum(axis=(0, 2, 3)))
    return grads


# --------------------------------------------------------------------------- elementwise

def relu(x: Tensor) -> Tensor:
    """
    ReLU elemento per elemento

    Il sottogradiente in 0 è 0: un'attivazione esattamente nulla non propaga gradiente.
    """
    mask = x.data > 0
    return record(OpKind.RELU, (x,), np.where(mask, x.data, 0), mask=mask)


@register_backward(OpKind.RELU)
def _relu_backward(node, grad):
    return [grad * node.saved["mask"]]


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return record(OpKind.ADD, (a, b), _f64(a.data) + _f64(b.data))


@register_backward(OpKind.ADD)
def _add_backward(node, grad):
    return [grad, grad]


def resblock_add(skip: Tensor, branch: Tensor) -> Tensor:
    """Somma della skip connection seguita da ReLU: relu(skip + branch)"""
    _require_same_shape(skip, branch, "resblock_add")
    total = _f64(skip.data) + _f64(branch.data)
    mask = total > 0
    return record(OpKind.RESBLOCK_ADD, (skip, branch), np.where(mask, total, 0), mask=mask)


@register_backward(OpKind.RESBLOCK_ADD)
def _resblock_add_backward(node, grad):
    masked = grad * node.saved["mask"]
    return [masked, masked]


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(_f64(x.data))
    return record(OpKind.TANH, (x,), t, t=t)


@register_backward(OpKind.TANH)
def _tanh_backward(node, grad):
    t = node.saved["t"]
    return [grad * (1.0 - t * t)]


def scale(x: Tensor, factor: float, shift: float = 0.0) -> Tensor:
    """factor * x + shift"""
    return record(OpKind.SCALE, (x,), factor * _f64(x.data) + shift, factor=float(factor))


@register_backward(OpKind.SCALE)
def _scale_backward(node, grad):
    return [grad * node.saved["factor"]]


def log(x: Tensor, eps: float = PROB_EPS) -> Tensor:
    """
    Logaritmo di probabilità, clampate in [eps, 1 - eps]

    Dove il clamp è attivo il gradiente è 0.
    """
    data = _f64(x.data)
    clamped = np.clip(data, eps, 1.0 - eps)
    inside = (data >= eps) & (data <= 1.0 - eps)
    return record(OpKind.LOG, (x,), np.log(clamped), clamped=clamped, inside=inside)


@register_backward(OpKind.LOG)
def _log_backward(node, grad):
    return [grad / node.saved["clamped"] * node.saved["inside"]]


# --------------------------------------------------------------------------- pooling / reshape

def maxpool(x: Tensor, kernel: int, stride: int, pad: int = 0) -> Tensor:
    """
    Max pooling KxK su input NCHW, padding con -inf

    Args:
        x: Input N x C x H x W
        kernel: Lato della finestra
        stride: Passo tra finestre
        pad: Bordo aggiunto su ogni lato (mai scelto come massimo)

    Returns:
        Tensor N x C x Ho x Wo; a parità vince la prima posizione nella finestra,
        che è anche l'unica a ricevere gradiente

    Raises:
        ShapeMismatchError: rank diverso da 4 o input più piccolo della finestra
    """
    _require_rank(x, 4, "maxpool input")
    n, c, h, wd = x.shape
    if h + 2 * pad < kernel or wd + 2 * pad < kernel:
        raise ShapeMismatchError(f"maxpool: input {x.shape} più piccolo della finestra {kernel}x{kernel}")
    xp = _pad(_f64(x.data), pad, value=-np.inf)
    win = _windows(xp, kernel, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return record(OpKind.MAXPOOL, (x,), out, arg=arg, kernel=kernel, stride=stride, pad=pad)


@register_backward(OpKind.MAXPOOL)
def _maxpool_backward(node, grad):
    x = node.inputs[0]
    arg, k, s, pad = node.saved["arg"], node.saved["kernel"], node.saved["stride"], node.saved["pad"]
    n, c, h, wd = x.shape
    ho, wo = arg.shape[2], arg.shape[3]
    di, dj = np.divmod(arg, k)
    rows = np.arange(ho)[None, None, :, None] * s + di
    cols = np.arange(wo)[None, None, None, :] * s + dj
    nn_idx = np.broadcast_to(np.arange(n)[:, None, None, None], arg.shape)
    cc_idx = np.broadcast_to(np.arange(c)[None, :, None, None], arg.shape)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    np.add.at(dxp, (nn_idx, cc_idx, rows, cols), _f64(grad))
    return [dxp[:, :, pad:pad + h, pad:pad + wd]]


def avg_channel(x: Tensor) -> Tensor:
    """Media sui canali: N x C x H x W -> N x 1 x H x W"""
    _require_rank(x, 4, "avg_channel input")
    return record(OpKind.AVG_CHANNEL, (x,), _f64(x.data).mean(axis=1, keepdims=True))


@register_backward(OpKind.AVG_CHANNEL)
def _avg_channel_backward(node, grad):
    c = node.inputs[0].shape[1]
    return [np.broadcast_to(grad / c, node.inputs[0].shape)]


def spatial_mean(x: Tensor) -> Tensor:
    """Media globale sulle dimensioni spaziali: N x C x H x W -> N x C x 1 x 1"""
    _require_rank(x, 4, "spatial_mean input")
    return record(OpKind.SPATIAL_MEAN, (x,), _f64(x.data).mean(axis=(2, 3), keepdims=True))


@register_backward(OpKind.SPATIAL_MEAN)
def _spatial_mean_backward(node, grad):
    shape = node.inputs[0].shape
    return [np.broadcast_to(grad / (shape[2] * shape[3]), shape)]


def select_channel(x: Tensor, channel: int) -> Tensor:
    """
    Estrae un canale: N x C x H x W -> N x 1 x H x W

    Raises:
        ShapeMismatchError: `channel` fuori da [0, C)
    """
    _require_rank(x, 4, "select_channel input")
    if not 0 <= channel < x.shape[1]:
        raise ShapeMismatchError(f"select_channel: canale {channel} fuori da shape {x.shape}")
    return record(OpKind.SELECT_CHANNEL, (x,), x.data[:, channel:channel + 1], channel=channel)


@register_backward(OpKind.SELECT_CHANNEL)
def _select_channel_backward(node, grad):
    out = np.zeros(node.inputs[0].shape, dtype=np.float64)
    ch = node.saved["channel"]
    out[:, ch:ch + 1] = grad
    return [out]


def forward_diff(x: Tensor) -> Tensor:
    """
    Differenze in avanti per canale, bordo replicato

    N x C x H x W -> N x 2C x H x W (per ogni canale: d/dx poi d/dy).
    L'ultima colonna (riga) ha differenza 0.
    """
    _require_rank(x, 4, "forward_diff input")
    data = _f64(x.data)
    dx = np.zeros_like(data)
    dy = np.zeros_like(data)
    dx[..., :, :-1] = data[..., :, 1:] - data[..., :, :-1]
    dy[..., :-1, :] = data[..., 1:, :] - data[..., :-1, :]
    n, c, h, w = data.shape
    out = np.stack([dx, dy], axis=2).reshape(n, 2 * c, h, w)
    return record(OpKind.FORWARD_DIFF, (x,), out)


@register_backward(OpKind.FORWARD_DIFF)
def _forward_diff_backward(node, grad):
    n, c, h, w = node.inputs[0].shape
    g = _f64(grad).reshape(n, c, 2, h, w)
    gx, gy = g[:, :, 0], g[:, :, 1]
    out = np.zeros((n, c, h, w), dtype=np.float64)
    out[..., :, 1:] += gx[..., :, :-1]
    out[..., :, :-1] -= gx[..., :, :-1]
    out[..., 1:, :] += gy[..., :-1, :]
    out[..., :-1, :] -= gy[..., :-1, :]
    return [out]


def flatten(x: Tensor) -> Tensor:
    """N x ... -> N x D"""
    return record(OpKind.FLATTEN, (x,), x.data.reshape(x.shape[0], -1))


@register_backward(OpKind.FLATTEN)
def _flatten_backward(node, grad):
    return [np.reshape(grad, node.inputs[0].shape)]


# --------------------------------------------------------------------------- dense / softmax

def affine(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Layer denso: x (N x D) @ W (D x M) + b (M)

    Args:
        x: Feature appiattite, una riga per esempio
        w: Pesi D x M
        b: Bias opzionale di lunghezza M

    Raises:
        ShapeMismatchError: D di x e di W non coincidono o bias di lunghezza sbagliata
    """
    _require_rank(x, 2, "affine input")
    _require_rank(w, 2, "affine weight")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatchError(f"affine: input {x.shape} incompatibile con pesi {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatchError(f"affine: bias {b.shape} incompatibile con pesi {w.shape}")
    out = _f64(x.data) @ _f64(w.data)
    if b is not None:
        out = out + _f64(b.data)[None, :]
    inputs = (x, w) if b is None else (x, w, b)
    return record(OpKind.AFFINE, inputs, out)


@register_backward(OpKind.AFFINE)
def _affine_backward(node, grad):
    x, w = node.inputs[0], node.inputs[1]
    grad = _f64(grad)
    grads = [
        grad @ _f64(w.data).T if x.tracked else None,
        _f64(x.data).T @ grad if w.tracked else None,
    ]
    if len(node.inputs) == 3:
        grads.append(grad.sum(axis=0))
    return grads


def softmax2(logits: Tensor) -> Tensor:
    """
    Softmax sui 2 canali di ogni patch: N x 2 x h x w

    Calcolata sottraendo il massimo tra i due logit di ogni patch,
    quindi stabile anche con logit grandi.
    """
    _require_rank(logits, 4, "softmax2 input")
    if logits.shape[1] != 2:
        raise ShapeMismatchError(f"softmax2: attesi 2 canali, ricevuto shape {logits.shape}")
    z = _f64(logits.data)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return record(OpKind.SOFTMAX2, (logits,), p, p=p)


@register_backward(OpKind.SOFTMAX2)
def _softmax2_backward(node, grad):
    p = node.saved["p"]
    grad = _f64(grad)
    return [p * (grad - (grad * p).sum(axis=1, keepdims=True))]


# --------------------------------------------------------------------------- riduzioni

def sum(x: Tensor) -> Tensor:  # noqa: A001 - nome dell'op
    """Somma di tutti gli elementi -> scalare"""
    return record(OpKind.SUM, (x,), np.asarray(_f64(x.data).sum()))


@register_backward(OpKind.SUM)
def _sum_backward(node, grad):
    return [np.full(node.inputs[0].shape, float(np.asarray(grad).reshape(())))]


def l1_diff(a: Tensor, b: Tensor) -> Tensor:
    """Somma delle differenze assolute |a - b| -> scalare"""
    _require_same_shape(a, b, "l1_diff")
    diff = _f64(a.data) - _f64(b.data)
    return record(OpKind.L1_DIFF, (a, b), np.asarray(np.abs(diff).sum()), sign=np.sign(diff))


@register_backward(OpKind.L1_DIFF)
def _l1_diff_backward(node, grad):
    g = float(np.asarray(grad).reshape(()))
    sign = node.saved["sign"]
    return [sign * g, -sign * g]


def sq_diff(a: Tensor, b: Tensor) -> Tensor:
    """Somma dei quadrati (a - b)^2 -> scalare"""
    _require_same_shape(a, b, "sq_diff")
    diff = _f64(a.data) - _f64(b.data)
    return record(OpKind.SQ_DIFF, (a, b), np.asarray((diff * diff).sum()), diff=diff)


@register_backward(OpKind.SQ_DIFF)
def _sq_diff_backward(node, grad):
    g = float(np.asarray(grad).reshape(()))
    diff = node.saved["diff"]
    return [2.0 * diff * g, -2.0 * diff * g]
