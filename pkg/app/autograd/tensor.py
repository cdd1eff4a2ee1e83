"""
Motore di differenziazione automatica reverse-mode

Un Tape registra, in ordine di esecuzione, i nodi (TapeNode) prodotti dagli op
di app.autograd.ops. L'ordine di registrazione è già topologico: backward()
visita i nodi in ordine inverso, ciascuno una sola volta.

Gli op eseguiti fuori da un Tape attivo non vengono registrati (inferenza).
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import GradientError

logger = logging.getLogger(__name__)


class OpKind(str, Enum):
    """Tipi di nodo registrabili sul tape"""
    CONV2D = "conv2d"
    RELU = "relu"
    ADD = "add"
    RESBLOCK_ADD = "resblock-add"
    MAXPOOL = "maxpool"
    AVG_CHANNEL = "avg-channel"
    L1_DIFF = "l1-diff"
    SOFTMAX2 = "softmax2"
    LOG = "log"
    SUM = "sum"
    SCALE = "scale"
    AFFINE = "affine"
    TANH = "tanh"
    SELECT_CHANNEL = "select-channel"
    SPATIAL_MEAN = "spatial-mean"
    FORWARD_DIFF = "forward-diff"
    FLATTEN = "flatten"
    SQ_DIFF = "sq-diff"


# dtype corrente del motore (float32; grad_check usa float64)
_DTYPE = np.float32


def get_dtype() -> type:
    return _DTYPE


@contextmanager
def precision(dtype: type):
    """Esegue il blocco con un dtype diverso (es. float64 per le differenze finite)"""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


class Tensor:
    """
    Array n-dimensionale row-major con slot gradiente opzionale

    requires_grad=True identifica i parametri (foglie) su cui backward()
    materializza il gradiente.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional["TapeNode"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def tracked(self) -> bool:
        """True se il tensore partecipa al grafo (parametro o prodotto di un nodo)"""
        return self.requires_grad or self._node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() richiede un tensore scalare, shape={self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copia dei dati (mai alias)"""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


BackwardRule = Callable[["TapeNode", np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class TapeNode:
    """Nodo del tape: tipo di op, input, output e contesto salvato per la regola backward"""
    kind: OpKind
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Dict[str, Any] = field(default_factory=dict)
    tape: Optional["Tape"] = None


# Registro delle regole backward, popolato da app.autograd.ops
_BACKWARD_RULES: Dict[OpKind, BackwardRule] = {}


def register_backward(kind: OpKind) -> Callable[[BackwardRule], BackwardRule]:
    def decorator(fn: BackwardRule) -> BackwardRule:
        _BACKWARD_RULES[kind] = fn
        return fn
    return decorator


_ACTIVE_TAPES: List["Tape"] = []


class Tape:
    """Registro di un forward pass; consumabile una sola volta da backward()"""

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record(kind: OpKind, inputs: Sequence[Tensor], out_data: np.ndarray, **saved: Any) -> Tensor:
    """
    Crea il tensore di output di un op e, se serve, il nodo sul tape attivo

    Il nodo viene registrato solo se c'è un tape attivo e almeno un input è tracciato.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        if tape.consumed:
            raise GradientError("Il tape è già stato consumato da backward(): serve un nuovo forward")
        node = TapeNode(kind=kind, inputs=tuple(inputs), output=out, saved=saved, tape=tape)
        out._node = node
        tape.nodes.append(node)
    return out


def _accumulate(store: Dict[int, np.ndarray], key: int, grad: np.ndarray) -> None:
    if key in store:
        store[key] = store[key] + grad
    else:
        store[key] = grad


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """
    Propaga all'indietro dalla loss scalare

    Args:
        loss: Tensore scalare prodotto su un Tape
        params: Parametri che devono ricevere un gradiente anche se non raggiunti
            (in quel caso tutto zero)

    Post:
        ogni foglia con requires_grad raggiungibile ha .grad = d loss / d foglia
        (accumulato se un grad era già presente)

    Raises:
        GradientError: loss non scalare, nessun forward registrato, backward ripetuto
    """
    if loss.size != 1:
        raise GradientError(f"backward richiede una loss scalare, shape={loss.shape}")
    node = loss._node
    if node is None or node.tape is None:
        raise GradientError("La loss non è stata prodotta su un Tape: nessun forward registrato")
    tape = node.tape
    if tape.consumed:
        raise GradientError("backward() già eseguito su questo forward: serve un nuovo forward")
    tape.consumed = True

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    leaves: Dict[int, Tensor] = {}

    for current in reversed(tape.nodes):
        grad_out = grads.pop(id(current.output), None)
        if grad_out is None:
            continue
        rule = _BACKWARD_RULES[current.kind]
        input_grads = rule(current, grad_out)
        for tensor, grad in zip(current.inputs, input_grads):
            if grad is None or not tensor.tracked:
                continue
            if tensor._node is None:
                leaves[id(tensor)] = tensor
            _accumulate(grads, id(tensor), grad)

    targets: Dict[int, Tensor] = dict(leaves)
    for p in params or ():
        if p.requires_grad:
            targets.setdefault(id(p), p)

    for key, tensor in targets.items():
        if not tensor.requires_grad:
            continue
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros(tensor.shape, dtype=tensor.data.dtype)
        grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad

    logger.debug(f"backward completato: {len(tape.nodes)} nodi, {len(targets)} foglie")
