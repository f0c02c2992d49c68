"""In-place optimizers over named :class:`~supercut.nn.layers.Param` dicts."""
import numpy as np

from ..errors import NumericError, StructuralError


def _check_grads(params):
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")


class SGD:
    """SGD with heavy-ball momentum: ``v = mu*v + g; theta -= lr*v``."""

    def __init__(self, params, lr=5e-2, momentum=0.9):
        self.params, self.lr, self.momentum = params, lr, momentum

    def step(self):
        _check_grads(self.params)
        for p in self.params.values():
            if self.momentum:
                v = p.state.setdefault("velocity", np.zeros_like(p.data))
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad
            p.zero_grad()


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.lr, self.eps = params, lr, eps
        self.beta1, self.beta2 = betas

    def step(self):
        _check_grads(self.params)
        for p in self.params.values():
            m = p.state.setdefault("m", np.zeros_like(p.data))
            v = p.state.setdefault("v", np.zeros_like(p.data))
            t = p.state["t"] = p.state.get("t", 0) + 1
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.zero_grad()


def optimizer_step(params, kind, lr, momentum=0.9):
    """One update of ``params`` (a name -> Param dict) by ``kind``.

    Optimizer state lives on the parameters, so repeated calls continue the
    same trajectory. Gradient buffers are zeroed afterwards.
    """
    if kind == "adam":
        opt = Adam(params, lr=lr)
    elif kind == "sgd_momentum":
        opt = SGD(params, lr=lr, momentum=momentum)
    else:
        raise StructuralError(f"unknown optimizer {kind!r}")
    opt.step()
    return params
