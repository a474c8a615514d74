# ============================================================
# classifier.py
#
# Black-box classifiers with exact query accounting.
#
# Every classifier answers predict(image) with a ConfidenceVector and
# bumps its QueryCounter once per answered query. Three families:
#   - FunctionClassifier: wraps a plain callable (oracles, baselines)
#   - ToyModel: a two-layer network (32x32x3 -> 64 ReLU -> C softmax)
#     trained with or without random-shadow augmentation
#   - OracleClassifier: a child process speaking line-delimited JSON
#
# Handshake : child writes {"classes": C}
# Request   : {"id": n, "png_b64": "<base64 PNG>"}
# Response  : {"id": n, "confidences": [c_0, ..., c_{C-1}]}
# ============================================================

import base64
import json
import logging
import queue
import shlex
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from .dataio import encode_png
from .errors import ConfigError, ProtocolError, QueryError, QueryTimeoutError
from .shadow import K_RANDOM_RANGE, apply_shadow, random_shadow

logger = logging.getLogger(__name__)

INPUT_SIZE = 32
ORACLE_TIMEOUT = 10.0
SUM_TOLERANCE = 1e-6


class ConfidenceVector:
    """
    Per-class confidences f_i(x): each in [0, 1], summing to 1 within 1e-6.

    Supports ``len``, indexing and ``np.asarray``.
    """
    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError("a confidence vector needs at least one class")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("confidences must be finite and lie in [0, 1]")
        if abs(v.sum() - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"confidences sum to {v.sum():.9f}, not 1")
        v.setflags(write=False)
        self.values = v

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, index):
        return float(self.values[index])

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self) -> str:
        return f"ConfidenceVector({np.array2string(self.values, precision=4)})"

    @property
    def label(self) -> int:
        """argmax_i f_i(x); the first index wins ties."""
        return int(np.argmax(self.values))


class QueryCounter:
    """A monotone counter incremented atomically once per answered query."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def increment(self, n: int = 1) -> int:
        with self._lock:
            self._count += n
            return self._count

    @property
    def count(self) -> int:
        with self._lock:
            return self._count


class Classifier(ABC):
    """
    Base class of every black-box classifier.

    Subclasses implement ``_confidences``; :meth:`predict` validates the
    answer and counts the query.
    """
    concurrent_safe = True

    def __init__(self, num_classes: int):
        if int(num_classes) < 1:
            raise ValueError("num_classes must be positive")
        self.num_classes = int(num_classes)
        self.counter = QueryCounter()

    @property
    def queries(self) -> int:
        return self.counter.count

    @abstractmethod
    def _confidences(self, x: np.ndarray) -> np.ndarray:
        ...

    def predict(self, x: np.ndarray) -> ConfidenceVector:
        vector = ConfidenceVector(self._confidences(x))
        if len(vector) != self.num_classes:
            raise QueryError(f"expected {self.num_classes} confidences, got {len(vector)}")
        self.counter.increment()
        return vector

    def label(self, x: np.ndarray) -> int:
        return self.predict(x).label


def predict(model: Classifier, x: np.ndarray) -> ConfidenceVector:
    """Query ``model`` once: ỹ = argmax_i f_i(x) is ``predict(model, x).label``."""
    return model.predict(x)


class FunctionClassifier(Classifier):
    """
    Classifier backed by a callable ``fn(image) -> confidences``.

    Args:
        fn: The callable.
        num_classes (int): Length of the vectors ``fn`` returns.
        name (str): Label used in reports and benchmark tables.
    """

    def __init__(self, fn, num_classes: int, name: str = "function"):
        super().__init__(num_classes)
        self.fn = fn
        self.name = name

    def _confidences(self, x):
        return self.fn(x)


class CountingView(Classifier):
    """
    Forwards queries to ``inner`` while keeping a private counter.

    Attacks count their own queries through a view so that concurrent
    attacks on one shared classifier still report exact per-call totals.
    """

    def __init__(self, inner: Classifier):
        super().__init__(inner.num_classes)
        self.inner = inner
        self.concurrent_safe = inner.concurrent_safe

    def _confidences(self, x):
        return self.inner.predict(x).values


# ------------------------------------------------------------
# Toy network
# ------------------------------------------------------------

@dataclass(frozen=True)
class TrainHyper:
    """
    Training hyperparameters of the toy network.

    Attributes:
        lr (float): Adam learning rate.
        epochs (int): Passes over the corpus.
        batch (int): Mini-batch size.
        hidden (int): Hidden layer width.
        seed (int): Seed for initialization, shuffling and random shadows.
        k_range (tuple): Range of k for random training shadows.
        weight_decay (float): L2 penalty.
    """
    lr: float = 1e-3
    epochs: int = 40
    batch: int = 32
    hidden: int = 64
    seed: int = 0
    k_range: tuple = K_RANDOM_RANGE
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch < 1 or self.hidden < 1:
            raise ConfigError("lr, epochs, batch and hidden must be positive")
        lo, hi = self.k_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"k_range must satisfy 0 < lo <= hi <= 1, got {self.k_range}")
        object.__setattr__(self, "k_range", tuple(float(v) for v in self.k_range))

    @staticmethod
    def from_dict(data: dict) -> "TrainHyper":
        known = {f.name for f in fields(TrainHyper)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training settings: {sorted(unknown)}")
        casts = {"lr": float, "epochs": int, "batch": int, "hidden": int, "seed": int,
                 "weight_decay": float, "k_range": lambda v: tuple(float(x) for x in v)}
        return TrainHyper(**{k: casts[k](v) for k, v in data.items()})


class ToyNet(nn.Module):
    def __init__(self, num_classes: int, hidden: int = 64, size: int = INPUT_SIZE):
        super().__init__()
        self.input_size = size * size * 3
        self.hidden = nn.Linear(self.input_size, hidden)
        self.out = nn.Linear(hidden, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.view(-1, self.input_size)
        return self.out(F.relu(self.hidden(x)))


def prepare_input(images) -> torch.Tensor:
    """
    Crop-resize-then-normalize: nearest resize to 32x32, scale to [0, 1].

    Args:
        images: One H x W x 3 uint8 image or a sequence of them.

    Returns:
        torch.Tensor: float32 tensor of shape (N, 32 * 32 * 3).
    """
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    batch = []
    for image in images:
        if image.shape[:2] != (INPUT_SIZE, INPUT_SIZE):
            image = cv2.resize(image, (INPUT_SIZE, INPUT_SIZE), interpolation=cv2.INTER_NEAREST)
        batch.append(image)
    array = np.stack(batch).astype(np.float32) / 255.0
    return torch.from_numpy(array.reshape(len(batch), -1))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float


class ToyModel(Classifier):
    """
    The built-in desk-scale classifier.

    Attributes:
        net (ToyNet): The network.
        hyper (TrainHyper): Hyperparameters it was trained with.
        augmented (bool): Whether random-shadow augmentation was used.
        history (list): Per-epoch :class:`EpochLog` rows.
    """

    def __init__(self, net: ToyNet, hyper: TrainHyper | None = None, augmented: bool = False,
                 history: list | None = None, name: str | None = None):
        super().__init__(net.out.out_features)
        self.net = net.eval()
        self.hyper = hyper or TrainHyper()
        self.augmented = augmented
        self.history = history or []
        self.name = name or ("toy-augmented" if augmented else "toy")

    @staticmethod
    def zeros(num_classes: int, hidden: int = 64) -> "ToyModel":
        """An untrained model with all weights zero; it answers the uniform vector."""
        net = ToyNet(num_classes, hidden)
        for p in net.parameters():
            nn.init.zeros_(p)
        return ToyModel(net, TrainHyper(hidden=hidden))

    def logits(self, images) -> torch.Tensor:
        with torch.inference_mode():
            return self.net(prepare_input(images))

    def _confidences(self, x):
        return torch.softmax(self.logits(x).double(), dim=1)[0].numpy()

    def accuracy(self, samples) -> float:
        """Fraction of ``samples`` classified correctly; not counted as queries."""
        if not samples:
            raise ValueError("accuracy of an empty sample set is undefined")
        predicted = self.logits([s.image for s in samples]).argmax(dim=1).numpy()
        labels = np.array([s.label for s in samples])
        return float((predicted == labels).mean())


def accuracy(model: ToyModel, samples) -> float:
    return model.accuracy(samples)


def train(corpus, hyper: TrainHyper | None = None, augment: bool = False,
          num_classes: int | None = None, progress: bool = False) -> ToyModel:
    """
    Train a toy network, optionally casting a fresh random shadow on every
    sample in every epoch (the defense).

    Args:
        corpus: Sequence of samples with ``image``, ``label`` and ``mask``.
        hyper (TrainHyper): Hyperparameters; defaults when None.
        augment (bool): Random-shadow augmentation on/off.
        num_classes (int): Class count; inferred from the labels when None.
        progress (bool): Show a tqdm bar.

    Returns:
        ToyModel: The trained model with its per-epoch history.

    Raises:
        ValueError: If the corpus is empty.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    hyper = hyper or TrainHyper()
    num_classes = num_classes or max(s.label for s in corpus) + 1

    torch.manual_seed(hyper.seed)
    generator = torch.Generator().manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    net = ToyNet(num_classes, hyper.hidden)
    optimizer = torch.optim.Adam(net.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)

    clean = prepare_input([s.image for s in corpus])
    labels = torch.tensor([s.label for s in corpus], dtype=torch.long)
    history = []
    logger.info("training on %d samples, %d classes, augment=%s", len(corpus), num_classes, augment)

    for epoch in tqdm(range(1, hyper.epochs + 1), desc="train", disable=not progress):
        if augment:
            shadowed = [apply_shadow(s.image, random_shadow(rng, s.image.shape, s.mask, hyper.k_range))
                        for s in corpus]
            inputs = prepare_input(shadowed)
        else:
            inputs = clean
        net.train()
        order = torch.randperm(len(corpus), generator=generator)
        total = 0.0
        for start in range(0, len(corpus), hyper.batch):
            idx = order[start:start + hyper.batch]
            optimizer.zero_grad()
            loss = F.cross_entropy(net(inputs[idx]), labels[idx])
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
        net.eval()
        with torch.inference_mode():
            acc = float((net(clean).argmax(dim=1) == labels).float().mean())
        history.append(EpochLog(epoch, total / len(corpus), acc))
        logger.debug("epoch %d: loss %.4f, clean accuracy %.4f", epoch, total / len(corpus), acc)

    logger.info("training done: clean accuracy %.4f", history[-1].accuracy)
    return ToyModel(net, hyper, augment, history)


def save_model(model: ToyModel, path) -> Path:
    """Write the weights file (state dict, class count, hidden width, hyperparameters)."""
    path = Path(path)
    torch.save({
        "state_dict": model.net.state_dict(),
        "num_classes": model.num_classes,
        "hidden": model.hyper.hidden,
        "hyper": asdict(model.hyper),
        "augmented": model.augmented,
    }, path)
    return path


def load_model(path) -> ToyModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"weights file not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    try:
        net = ToyNet(int(blob["num_classes"]), int(blob["hidden"]))
        net.load_state_dict(blob["state_dict"])
        hyper = TrainHyper.from_dict(dict(blob.get("hyper", {})))
    except (KeyError, RuntimeError, TypeError) as exc:
        raise ConfigError(f"{path} is not an umbra weights file: {exc}") from exc
    augmented = bool(blob.get("augmented", False))
    return ToyModel(net, hyper, augmented, name=path.stem)


# ------------------------------------------------------------
# External oracle
# ------------------------------------------------------------

class OracleClassifier(Classifier):
    """
    A classifier living in a child process (see the module header for the protocol).

    Requests from concurrent callers are queued on one pipe. Any protocol
    violation or timeout leaves the pipe in an unknown state, so the child is
    terminated and further queries fail.

    Args:
        command: Command line as a string or argument list.
        timeout (float): Seconds to wait for each response.
        startup_timeout (float): Seconds to wait for the handshake.
    """

    def __init__(self, command, timeout: float = ORACLE_TIMEOUT, startup_timeout: float = ORACLE_TIMEOUT):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        if not args:
            raise ConfigError("oracle command is empty")
        self.command = args
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._lines = queue.Queue()
        self._broken = None
        try:
            self._proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, bufsize=1)
        except OSError as exc:
            raise QueryError(f"cannot start oracle {args!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

        hello = self._receive(startup_timeout)
        classes = hello.get("classes") if isinstance(hello, dict) else None
        if not isinstance(classes, int) or isinstance(classes, bool) or classes < 1:
            self._fail(ProtocolError(f"bad oracle handshake: {hello!r}"))
        super().__init__(classes)
        self.name = Path(args[-1]).stem
        logger.info("oracle %s ready with %d classes", " ".join(args), classes)

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _fail(self, error: QueryError):
        self._broken = error
        self.close()
        raise error

    def _receive(self, timeout: float):
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self._fail(QueryTimeoutError(f"oracle did not answer within {timeout:g} s"))
        if line is None:
            self._fail(ProtocolError("oracle closed its output"))
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            self._fail(ProtocolError(f"oracle sent invalid JSON: {line.strip()[:80]!r}"))

    def _confidences(self, x):
        with self._lock:
            if self._broken is not None:
                raise QueryError(f"oracle unavailable after earlier failure: {self._broken}")
            self._next_id += 1
            request = {"id": self._next_id, "png_b64": base64.b64encode(encode_png(x)).decode("ascii")}
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._fail(ProtocolError(f"cannot write to oracle: {exc}"))
            reply = self._receive(self.timeout)
            if not isinstance(reply, dict) or reply.get("id") != request["id"]:
                self._fail(ProtocolError(f"oracle reply does not match request {request['id']}: {reply!r}"))
            values = reply.get("confidences")
            if not isinstance(values, list) or len(values) != self.num_classes:
                self._fail(ProtocolError(f"oracle must return {self.num_classes} confidences, got {values!r}"))
            try:
                return ConfidenceVector(values).values
            except (TypeError, ValueError) as exc:
                self._fail(ProtocolError(f"oracle confidences rejected: {exc}"))

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
            proc.wait(timeout=2)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()


def external_oracle(endpoint, timeout: float = ORACLE_TIMEOUT) -> OracleClassifier:
    """Start the child process ``endpoint`` and return a classifier handle for it."""
    return OracleClassifier(endpoint, timeout=timeout)
