"""Uniform predictor interface over in-process networks and external models.

White-box predictors wrap a DenseNet and expose analytic input gradients.
Black-box predictors talk to a spawned process over line-delimited JSON
(request ``{"id": n, "x": [[...], ...]}``, response ``{"id": n, "p":
[[...], ...]}``) and only ever see prediction outputs, so gradients must
be estimated numerically.  Every predictor counts single-instance
evaluations; the search relies on that accounting being exact.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading

import numpy as np

from .nn import SOFTMAX, DenseNet, forward_batch, input_gradient

DEFAULT_EPS = 1e-4
DEFAULT_TIMEOUT = 30.0


class PredictError(Exception):
    pass


class TransportError(PredictError):
    """Black-box process died, timed out, or broke the wire protocol."""


class ContractError(PredictError):
    """Model responded, but not with probability vectors."""


class WhiteboxPredictor:
    """In-process softmax classifier with exact gradients."""

    def __init__(self, net: DenseNet):
        if net.layers[-1].activation != SOFTMAX:
            raise PredictError("white-box predictor requires a softmax head")
        self.net = net
        self.n_classes = net.n_out
        self.input_dim = net.n_in
        self.call_count = 0

    def predict(self, batch: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        if batch.shape[1] != self.input_dim:
            raise PredictError(
                f"instance dim {batch.shape[1]} != predictor dim {self.input_dim}"
            )
        self.call_count += batch.shape[0]
        return forward_batch(self.net, batch)

    def input_gradient(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Analytic upstream^T . d f_pred/dx; not a prediction evaluation."""
        return input_gradient(self.net, x, upstream)

    def close(self):
        pass


class BlackboxPredictor:
    """Spawned external model reachable only through its prediction function.

    One request in flight at a time; responses must arrive within
    ``timeout`` seconds and carry the request id.
    """

    def __init__(self, cmd, n_classes: int, input_dim: int,
                 timeout: float = DEFAULT_TIMEOUT):
        self.n_classes = n_classes
        self.input_dim = input_dim
        self.timeout = timeout
        self.call_count = 0
        self._next_id = 0
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise TransportError(f"failed to spawn model process: {e}") from e
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _roundtrip(self, payload: dict) -> dict:
        if self._proc.poll() is not None:
            raise TransportError("model process is not running")
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"model process pipe closed: {e}") from e
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(
                f"model process did not respond within {self.timeout}s"
            ) from None
        if line is None:
            raise TransportError("model process closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise TransportError(f"unparseable response line: {line!r}") from e

    def predict(self, batch: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if batch.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        if batch.shape[1] != self.input_dim:
            raise PredictError(
                f"instance dim {batch.shape[1]} != predictor dim {self.input_dim}"
            )
        self._next_id += 1
        response = self._roundtrip({"id": self._next_id, "x": batch.tolist()})
        if response.get("id") != self._next_id:
            raise TransportError(
                f"response id {response.get('id')} != request id {self._next_id}"
            )
        p = response.get("p")
        if not isinstance(p, list) or len(p) != batch.shape[0]:
            raise TransportError("response row count does not match request")
        probs = np.asarray(p, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != self.n_classes:
            raise TransportError(
                f"response width {probs.shape} != {self.n_classes} classes"
            )
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-3) or np.any(probs < -1e-9):
            raise ContractError(
                f"response rows are not probability vectors (sums {sums})"
            )
        self.call_count += batch.shape[0]
        return np.clip(probs, 0.0, None) / sums[:, None]

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def predicted_class(predictor, x: np.ndarray) -> int:
    """Argmax class; ties broken toward the lowest index."""
    probs = predictor.predict(np.atleast_2d(x))[0]
    return int(np.argmax(probs))


def label_dataset(predictor, xs: np.ndarray, chunk: int = 1024) -> dict[int, np.ndarray]:
    """Partition row indices of a numeric matrix by predicted class."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] == 0:
        raise PredictError("cannot label an empty dataset")
    classes = np.empty(xs.shape[0], dtype=np.int64)
    for start in range(0, xs.shape[0], chunk):
        probs = predictor.predict(xs[start : start + chunk])
        classes[start : start + probs.shape[0]] = np.argmax(probs, axis=1)
    return {
        c: np.flatnonzero(classes == c) for c in range(predictor.n_classes)
    }


def numerical_jacobian(predictor, x: np.ndarray, eps: float = DEFAULT_EPS):
    """Central-difference Jacobian of the prediction function.

    Submits one batch of 2*D instances (x +- eps along each feature) and
    returns (J, p_est) where J[i, k] ~= d p_i / d x_k and p_est is the
    second-order-accurate probability estimate at x recovered from the
    same batch, so no extra evaluation is spent on it.
    """
    if not eps > 0:
        raise PredictError("eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    batch = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    batch[2 * idx, idx] += eps
    batch[2 * idx + 1, idx] -= eps
    probs = predictor.predict(batch)
    plus, minus = probs[0::2], probs[1::2]
    jac = (plus - minus).T / (2.0 * eps)
    p_est = 0.5 * (plus + minus).mean(axis=0)
    return jac, p_est


def numerical_gradient(predictor, x: np.ndarray, upstream: np.ndarray,
                       eps: float = DEFAULT_EPS) -> np.ndarray:
    """upstream^T . J via central differences; exactly 2*D evaluations."""
    jac, _ = numerical_jacobian(predictor, x, eps)
    return np.asarray(upstream, dtype=np.float64) @ jac
