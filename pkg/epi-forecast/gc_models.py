"""Graph-convolutional recurrent forecasters (GCRN and GCLSTM) with their heads and trainer."""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F
from torch import nn

from errors import (
    ConfigurationError,
    DivergenceError,
    EmptyDataError,
    InvalidArgumentError,
    ShapeMismatchError,
)

log = logging.getLogger(__name__)

MODELS = ("gcrn", "gclstm")
TASKS = ("regression", "classification")
OPTIMIZERS = ("adam", "sgd")
PRECISIONS = {"float64": torch.float64, "float32": torch.float32}


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    task: str = "regression"
    hidden_size: int = 32
    optimizer: str = "adam"
    precision: str = "float64"
    log_every: int = 50

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.hidden_size < 1:
            raise ConfigurationError(f"hidden size must be >= 1, got {self.hidden_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision must be one of {tuple(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        return asdict(self)


def to_torch_propagation(matrix, dtype=torch.float64):
    """scipy CSR (or dense array) propagation matrix as a sparse COO tensor."""
    coo = sp.coo_matrix(matrix)
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data.astype(np.float64)).to(dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


def propagate(P, X):
    """P @ X for X of shape (N, d) or (B, N, d)."""
    if X.dim() == 2:
        return torch.sparse.mm(P, X) if P.is_sparse else P @ X
    if not P.is_sparse:
        return P @ X
    batch, n, d = X.shape
    flat = X.transpose(0, 1).reshape(n, batch * d)
    return torch.sparse.mm(P, flat).reshape(n, batch, d).transpose(0, 1)


def graph_conv(X, weight, bias, P):
    """P X W + bias (no activation)."""
    if X.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(f"input has {X.shape[-1]} features, weights expect {weight.shape[0]}")
    if X.shape[-2] != P.shape[0]:
        raise ShapeMismatchError(f"input has {X.shape[-2]} nodes, propagation matrix {P.shape[0]}")
    return propagate(P, X @ weight) + bias


class GraphConv(nn.Module):
    """Order-1 graph convolution; the self weight lives in the self-loops of P."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, X, P):
        return graph_conv(X, self.weight, self.bias, P)


class GCRNCell(nn.Module):
    """GRU cell whose input and state maps are graph convolutions."""

    def __init__(self, in_dim, hidden_size):
        super().__init__()
        self.hidden_size = hidden_size
        self.conv_xz = GraphConv(in_dim, hidden_size)
        self.conv_hz = GraphConv(hidden_size, hidden_size)
        self.conv_xr = GraphConv(in_dim, hidden_size)
        self.conv_hr = GraphConv(hidden_size, hidden_size)
        self.conv_xh = GraphConv(in_dim, hidden_size)
        self.conv_hh = GraphConv(hidden_size, hidden_size)

    def initial_state(self, x):
        return (x.new_zeros(*x.shape[:-1], self.hidden_size),)

    def forward(self, x, state, P):
        (h,) = state
        z = torch.sigmoid(self.conv_xz(x, P) + self.conv_hz(h, P))
        r = torch.sigmoid(self.conv_xr(x, P) + self.conv_hr(h, P))
        h_tilde = torch.tanh(self.conv_xh(x, P) + self.conv_hh(r * h, P))
        return (z * h + (1 - z) * h_tilde,)


class GCLSTMCell(nn.Module):
    """LSTM cell with graph-convolutional gates and elementwise peepholes."""

    def __init__(self, in_dim, hidden_size):
        super().__init__()
        self.hidden_size = hidden_size
        for gate in ("i", "f", "c", "o"):
            setattr(self, f"conv_x{gate}", GraphConv(in_dim, hidden_size))
            setattr(self, f"conv_h{gate}", GraphConv(hidden_size, hidden_size))
            setattr(self, f"b_{gate}", nn.Parameter(torch.zeros(hidden_size)))
        self.w_ci = nn.Parameter(torch.zeros(hidden_size))
        self.w_cf = nn.Parameter(torch.zeros(hidden_size))
        self.w_co = nn.Parameter(torch.zeros(hidden_size))

    def initial_state(self, x):
        zeros = x.new_zeros(*x.shape[:-1], self.hidden_size)
        return zeros, zeros.clone()

    def forward(self, x, state, P):
        h, c = state
        i = torch.sigmoid(self.conv_xi(x, P) + self.conv_hi(h, P) + self.w_ci * c + self.b_i)
        f = torch.sigmoid(self.conv_xf(x, P) + self.conv_hf(h, P) + self.w_cf * c + self.b_f)
        c_next = f * c + i * torch.tanh(self.conv_xc(x, P) + self.conv_hc(h, P) + self.b_c)
        o = torch.sigmoid(self.conv_xo(x, P) + self.conv_ho(h, P) + self.w_co * c_next + self.b_o)
        return o * torch.tanh(c_next), c_next


CELLS = {"gcrn": GCRNCell, "gclstm": GCLSTMCell}


def gcrn_step(cell, x_t, h_prev, P):
    """One GCRN update, returns h_next."""
    (h_next,) = cell(x_t, (h_prev,), P)
    return h_next


def gclstm_step(cell, x_t, h_prev, c_prev, P):
    """One GCLSTM update, returns (h_next, c_next)."""
    return cell(x_t, (h_prev, c_prev), P)


class SpatioTemporalModel(nn.Module):
    """One recurrent graph block followed by a per-node head.

    Regression heads emit the F horizon values, classification heads emit
    two log-probabilities (Stable, Alert).
    """

    def __init__(self, model="gcrn", task="regression", horizon=1, hidden_size=32, in_dim=1):
        super().__init__()
        if model not in CELLS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {model!r}")
        if task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {task!r}")
        self.kind = model
        self.task = task
        self.horizon = horizon
        self.hidden_size = hidden_size
        self.cell = CELLS[model](in_dim, hidden_size)
        self.head = nn.Linear(hidden_size, horizon if task == "regression" else 2)
        nn.init.xavier_uniform_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def hidden(self, windows, P):
        """Final hidden state after running the cell over every window day."""
        if windows.dim() not in (2, 3):
            raise ShapeMismatchError(f"windows must be (N, l) or (B, N, l), got {tuple(windows.shape)}")
        if windows.shape[-1] < 1:
            raise ShapeMismatchError("window length must be >= 1")
        if windows.shape[-2] != P.shape[0]:
            raise ShapeMismatchError(
                f"windows cover {windows.shape[-2]} nodes, the graph has {P.shape[0]}"
            )
        x = windows[..., 0:1]
        state = self.cell.initial_state(x)
        for t in range(windows.shape[-1]):
            state = self.cell(windows[..., t:t + 1], state, P)
        return state[0]

    def forward(self, windows, P):
        out = self.head(self.hidden(windows, P))
        if self.task == "classification":
            return F.log_softmax(out, dim=-1)
        return out

    def blocks(self):
        """Named parameter blocks in a stable order."""
        return OrderedDict(self.named_parameters())


def build_model(model, task, horizon, config):
    """Seeded model in the configured precision."""
    torch.manual_seed(config.seed)
    net = SpatioTemporalModel(model=model, task=task, horizon=horizon, hidden_size=config.hidden_size)
    return net.to(config.dtype)


def stack_snapshots(snapshots, task, dtype=torch.float64):
    """Batch tensors (B, N, l) and targets (B, N, F) or (B, N) labels."""
    if not snapshots:
        raise EmptyDataError("empty snapshot batch")
    windows = torch.from_numpy(np.stack([s.window for s in snapshots])).to(dtype)
    targets = np.stack([s.target for s in snapshots])
    if task == "classification":
        return windows, torch.from_numpy(targets.astype(np.int64))
    return windows, torch.from_numpy(targets.astype(np.float64)).to(dtype)


def forward(model, snapshot, P):
    """Prediction for a single snapshot: N x F values or N x 2 log-probabilities."""
    dtype = next(model.parameters()).dtype
    window = torch.as_tensor(np.asarray(snapshot.window), dtype=dtype)
    return model(window, P)


def loss(prediction, target, task):
    """MSE for regression, mean negative log-likelihood over nodes for classification."""
    if task == "regression":
        if prediction.shape != target.shape:
            raise ShapeMismatchError(
                f"prediction {tuple(prediction.shape)} and target {tuple(target.shape)} differ"
            )
        return F.mse_loss(prediction, target)
    if task == "classification":
        if prediction.shape[:-1] != target.shape or prediction.shape[-1] != 2:
            raise ShapeMismatchError(
                f"log-probabilities {tuple(prediction.shape)} do not match labels {tuple(target.shape)}"
            )
        return F.nll_loss(prediction.reshape(-1, 2), target.reshape(-1))
    raise InvalidArgumentError(f"task must be one of {TASKS}, got {task!r}")


def _non_finite_block(model):
    for name, param in model.named_parameters():
        if not torch.isfinite(param).all():
            return name
        if param.grad is not None and not torch.isfinite(param.grad).all():
            return name
    return None


def gradients(model, snapshots, P, task):
    """Exact gradient of the mean batch loss for every parameter block."""
    dtype = next(model.parameters()).dtype
    windows, targets = stack_snapshots(snapshots, task, dtype)
    model.zero_grad()
    value = loss(model(windows, P), targets, task)
    if not torch.isfinite(value):
        block = _non_finite_block(model) or "inputs"
        raise DivergenceError(f"non-finite loss, offending block: {block}", block=block)
    value.backward()
    block = _non_finite_block(model)
    if block is not None:
        raise DivergenceError(f"non-finite gradient in block {block}", block=block)
    return OrderedDict((name, p.grad.detach().clone()) for name, p in model.named_parameters())


def _optimizer(model, config):
    if config.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate)


def train(model, train_snapshots, P, config):
    """Full-batch training; returns the model and one loss value per epoch."""
    if not train_snapshots:
        raise EmptyDataError("no training snapshots")
    torch.manual_seed(config.seed)
    dtype = next(model.parameters()).dtype
    windows, targets = stack_snapshots(train_snapshots, config.task, dtype)
    optimizer = _optimizer(model, config)
    history = []

    model.train()
    for epoch in range(config.epochs):
        optimizer.zero_grad()
        value = loss(model(windows, P), targets, config.task)
        current = float(value.detach())
        if not np.isfinite(current):
            block = _non_finite_block(model) or "inputs"
            raise DivergenceError(
                f"loss diverged at epoch {epoch} (block {block})", epoch=epoch, block=block
            )
        history.append(current)
        value.backward()
        optimizer.step()
        if config.log_every and (epoch + 1) % config.log_every == 0:
            log.info("epoch %d/%d loss %.6g", epoch + 1, config.epochs, current)
    model.eval()
    return model, history


@torch.no_grad()
def predict_batch(model, snapshots, P, params=None, task="regression"):
    """Predictions in natural units: (B, N, F) values or (B, N) labels.

    Classification ties go to Stable.
    """
    if not snapshots:
        return np.empty((0,))
    dtype = next(model.parameters()).dtype
    windows = torch.from_numpy(np.stack([s.window for s in snapshots])).to(dtype)
    out = model(windows, P).numpy().astype(np.float64)
    if task == "classification":
        return (out[..., 1] > out[..., 0]).astype(np.int64)
    if params is None:
        return out
    return out * params.sigma[:, None] + params.mu[:, None]


def persistence_forecast(snapshots, horizon):
    """Repeat the last observed window value across the horizon."""
    last = np.stack([np.asarray(s.window)[:, -1] for s in snapshots])
    return np.repeat(last[..., None], horizon, axis=-1)


def save_checkpoint(model, path, config, extra=None):
    """Config, seed and named parameter blocks in one torch file."""
    payload = {
        "model": model.kind,
        "task": model.task,
        "horizon": model.horizon,
        "hidden_size": model.hidden_size,
        "train": config.to_dict(),
        "seed": config.seed,
        "state": OrderedDict((k, v.detach().clone()) for k, v in model.state_dict().items()),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild (model, TrainConfig, extra) from save_checkpoint output."""
    payload = torch.load(path, map_location="cpu")
    config = TrainConfig(**payload["train"])
    model = SpatioTemporalModel(
        model=payload["model"],
        task=payload["task"],
        horizon=payload["horizon"],
        hidden_size=payload["hidden_size"],
    ).to(config.dtype)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, config, payload["extra"]
