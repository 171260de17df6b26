"""Two-party split-learning engine.

A single deterministic lockstep driver moves batches through the client and
server state machines over a pluggable transport.  Two topologies:

  label_share:     client holds the bottom of the model, sends smashed data
                   plus labels; the server owns the rest of the model and the
                   task loss.
  label_protected: labels never leave the client; the server's output comes
                   back to a client-side top model (three-leg forward, inverse
                   gradient path).

Optional hooks: a client-side defense (transforms outgoing features or the
returned gradient), a server-side observer (read-only view of arriving
messages, used by the attack trainer), and a client-side monitor inspecting
returned gradients (may abort the session).
"""

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .framing import Message, frame_encode, frame_decode, FrameError
from .layers import ShapeError
from .losses import cross_entropy_with_grad, accuracy
from .models import target_specs, split_index, build_split_pair
from .network import subnetwork
from .optim import make_optimizer
from .rng import Rng, STREAM_INIT, STREAM_BATCHING, STREAM_STUB

TOPOLOGIES = ("label_share", "label_protected")
TRANSPORTS = ("in_process_queue", "framed_stream")


@dataclass
class SessionConfig:
    topology: str = "label_share"
    split_point: int = 2
    batch_size: int = 32
    epochs: int = 1
    iterations: Optional[int] = None  # overrides epochs when set
    image_size: int = 16
    base_channels: int = 8
    num_blocks: int = 4
    num_classes: int = 4
    dtype: type = np.float32
    client_optimizer: dict = field(default_factory=lambda: {"kind": "sgd-momentum", "lr": 0.05})
    server_optimizer: dict = field(default_factory=lambda: {"kind": "sgd-momentum", "lr": 0.05})
    transport: str = "in_process_queue"
    client_defense: object = None   # defenses.Defense or None
    server_observer: object = None  # .observe(msg), read-only
    client_monitor: object = None   # .update(grads, labels) -> (score, verdict) or None
    hijack_stub: bool = False       # replace the server with a label-agnostic one
    record_snapshot: bool = True

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        split_index(self.split_point, self.num_blocks)  # validates range


# ---------------------------------------------------------------------------
# transports

class InProcessQueue:
    """Plain FIFO handoff of Message objects (no serialization)."""

    kind = "in_process_queue"

    def __init__(self):
        self._c2s, self._s2c = [], []

    def send_to_server(self, msg):
        self._c2s.append(msg)

    def recv_at_server(self):
        return self._c2s.pop(0)

    def send_to_client(self, msg):
        self._s2c.append(msg)

    def recv_at_client(self):
        return self._s2c.pop(0)

    def digests(self):
        return None


class FramedStream:
    """Byte-pipe transport: every message is framed, hashed, and re-decoded.

    Enforces the per-direction batch_id audit (strictly increasing) on the
    receive path, so FIFO violations or replays surface immediately.
    """

    kind = "framed_stream"

    def __init__(self):
        self._buf = {"c2s": bytearray(), "s2c": bytearray()}
        self._read = {"c2s": 0, "s2c": 0}
        self._hash = {"c2s": hashlib.sha256(), "s2c": hashlib.sha256()}
        self._last_id = {"c2s": -1, "s2c": -1}

    def _send(self, direction, msg):
        frame = frame_encode(msg)
        self._buf[direction] += frame
        self._hash[direction].update(frame)

    def _recv(self, direction):
        buf = self._buf[direction]
        if self._read[direction] >= len(buf):
            raise FrameError(f"no message pending on {direction}")
        msg, offset = frame_decode(bytes(buf), self._read[direction])
        self._read[direction] = offset
        if msg.batch_id <= self._last_id[direction]:
            raise FrameError(f"batch_id regression on {direction}")
        self._last_id[direction] = msg.batch_id
        return msg

    def send_to_server(self, msg):
        self._send("c2s", msg)

    def recv_at_server(self):
        return self._recv("c2s")

    def send_to_client(self, msg):
        self._send("s2c", msg)

    def recv_at_client(self):
        return self._recv("s2c")

    def digests(self):
        return {d: h.hexdigest() for d, h in self._hash.items()}


def make_transport(kind):
    if kind == "in_process_queue":
        return InProcessQueue()
    if kind == "framed_stream":
        return FramedStream()
    raise ValueError(f"unknown transport {kind!r}")


# ---------------------------------------------------------------------------
# snapshot store

class SnapshotStore:
    """Rolling archive of the most recent pass over every batch slot.

    Smashed entries are attacker-visible; the paired ground-truth images are
    reachable only through the evaluation accessor, which attack-side code
    must never call (reconstruction quality is scored by the experiment
    harness, not the attacker).
    """

    def __init__(self, num_slots):
        if num_slots < 1:
            raise ValueError("need at least one slot")
        self._slots = [None] * num_slots
        self.epoch_tag = -1

    def record(self, slot, batch_id, smashed, images, labels, epoch):
        self._slots[slot] = (int(batch_id), np.array(smashed, copy=True),
                             np.array(images, copy=True),
                             np.array(labels, copy=True))
        self.epoch_tag = max(self.epoch_tag, epoch)

    def __len__(self):
        return sum(1 for s in self._slots if s is not None)

    @property
    def num_slots(self):
        return len(self._slots)

    def is_complete(self):
        return len(self) == self.num_slots

    def smashed_entries(self):
        """(batch_id, smashed) pairs in slot order; the attacker's view."""
        return [(s[0], s[1]) for s in self._slots if s is not None]

    def evaluation_pairs(self):
        """(smashed, images, labels) triples; evaluation-side only."""
        return [(s[1], s[2], s[3]) for s in self._slots if s is not None]


# ---------------------------------------------------------------------------
# transcript

class Transcript:
    def __init__(self):
        self.records = []
        self.wire_digests = None

    def log(self, **fields):
        self.records.append(fields)

    def iteration_records(self):
        return [r for r in self.records if "iteration" in r]

    def to_jsonl(self):
        import json
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class SessionResult:
    status: str  # completed | detector-aborted
    client: object
    server: object
    top: object  # None in label_share
    snapshot: SnapshotStore
    transcript: Transcript
    abort_iteration: Optional[int] = None
    full_net: object = None  # parameter-sharing view of the whole model


# ---------------------------------------------------------------------------
# helpers

def _batch_plan(n, batch_size):
    slots = -(-n // batch_size)  # ceil
    return slots


def _epoch_order(rng_batch, n):
    return rng_batch.permutation(n)


def _build_session_nets(cfg, rng):
    specs = target_specs(cfg.image_size, cfg.base_channels, cfg.num_blocks,
                         cfg.num_classes)
    idx = split_index(cfg.split_point, cfg.num_blocks)
    full, client, server = build_split_pair(specs, idx, (3, cfg.image_size, cfg.image_size),
                                            rng.spawn(STREAM_INIT), dtype=cfg.dtype)
    top = None
    if cfg.topology == "label_protected":
        # the head (final linear) stays on the client as the top model
        server = subnetwork(full, idx, len(full.layers) - 1)
        top = subnetwork(full, len(full.layers) - 1, len(full.layers))
    return full, client, server, top


def _optimizers(cfg, client, server, top):
    copt = make_optimizer(cfg.client_optimizer["kind"], client.params,
                          **{k: v for k, v in cfg.client_optimizer.items() if k != "kind"})
    sopt = make_optimizer(cfg.server_optimizer["kind"], server.params,
                          **{k: v for k, v in cfg.server_optimizer.items() if k != "kind"})
    topt = None
    if top is not None:
        topt = make_optimizer(cfg.client_optimizer["kind"], top.params,
                              **{k: v for k, v in cfg.client_optimizer.items() if k != "kind"})
    return copt, sopt, topt


def _evaluate(full, images, labels, dtype, batch=256):
    full.eval()
    losses, accs, counts = [], [], []
    for i in range(0, len(labels), batch):
        x = images[i:i + batch].astype(dtype)
        y = labels[i:i + batch]
        logits = full.forward(x, train=False)
        loss, _ = cross_entropy_with_grad(logits, y)
        losses.append(loss * len(y))
        accs.append(accuracy(logits, y) * len(y))
        counts.append(len(y))
    full.train()
    n = sum(counts)
    return sum(losses) / n, sum(accs) / n


# ---------------------------------------------------------------------------
# the lockstep driver

def run_training(cfg: SessionConfig, priv, rng: Rng, eval_ds=None) -> SessionResult:
    """Train one split-learning session; see module docstring for the flow."""
    if cfg.topology == "label_protected":
        return _run(cfg, priv, rng, eval_ds, protected=True)
    return _run(cfg, priv, rng, eval_ds, protected=False)


def run_label_protected(cfg: SessionConfig, priv, rng: Rng, eval_ds=None) -> SessionResult:
    if cfg.topology != "label_protected":
        raise ValueError("config topology is not label_protected")
    return _run(cfg, priv, rng, eval_ds, protected=True)


def _run(cfg, priv, rng, eval_ds, protected):
    n = len(priv)
    if n < 1:
        raise ValueError("empty private dataset")
    full, client, server, top = _build_session_nets(cfg, rng)
    copt, sopt, topt = _optimizers(cfg, client, server, top)
    transport = make_transport(cfg.transport)
    rng_batch = rng.spawn(STREAM_BATCHING)
    rng_stub = rng.spawn(STREAM_STUB)
    slots = _batch_plan(n, cfg.batch_size)
    total = cfg.iterations if cfg.iterations is not None else cfg.epochs * slots
    snapshot = SnapshotStore(slots) if cfg.record_snapshot else None
    transcript = Transcript()
    defense = cfg.client_defense
    observer = cfg.server_observer
    monitor = cfg.client_monitor

    smashed_dims = None  # fixed after handshake
    send_id = {"c2s": 0, "s2c": 0}
    status, abort_at = "completed", None
    order = None
    images = priv.images
    labels_all = priv.labels

    for it in range(total):
        epoch, slot = divmod(it, slots)
        if slot == 0:
            order = _epoch_order(rng_batch, n)
        idx = order[slot * cfg.batch_size:(slot + 1) * cfg.batch_size]
        x = images[idx].astype(cfg.dtype)
        y = labels_all[idx]

        # client leg: forward, defense, send
        z = client.forward(x, train=True)
        z_sent = defense.transform_smashed(z, x) if defense is not None else z
        z_sent = np.ascontiguousarray(z_sent, dtype=cfg.dtype)
        msg = Message("SmashedData", send_id["c2s"], z_sent,
                      labels=None if protected else y)
        send_id["c2s"] += 1
        transport.send_to_server(msg)

        # server leg
        smsg = transport.recv_at_server()
        if observer is not None:
            observer.observe(smsg)
        if smashed_dims is None:
            smashed_dims = smsg.payload.shape[1:]
            if not cfg.hijack_stub and tuple(server.input_shape) != smashed_dims:
                raise ShapeError("shape handshake failure: client output "
                                 f"{smashed_dims} vs server input {server.input_shape}")
        elif smsg.payload.shape[1:] != smashed_dims:
            raise ShapeError("smashed shape changed mid-session")

        task_loss = None
        if cfg.hijack_stub:
            # label-agnostic gradient source: shape-correct noise, no model
            g_back = rng_stub.normal(size=smsg.payload.shape).astype(cfg.dtype)
            transport.send_to_client(Message("GradientReturn", send_id["s2c"], g_back))
            send_id["s2c"] += 1
        elif not protected:
            logits = server.forward(smsg.payload, train=True)
            task_loss, dlogits = cross_entropy_with_grad(logits, smsg.labels)
            dz, sgrads = server.backward(dlogits)
            sopt.step(sgrads)
            transport.send_to_client(Message("GradientReturn", send_id["s2c"],
                                             np.ascontiguousarray(dz, dtype=cfg.dtype)))
            send_id["s2c"] += 1
        else:
            s_out = server.forward(smsg.payload, train=True)
            transport.send_to_client(Message("TopForward", send_id["s2c"],
                                             np.ascontiguousarray(s_out, dtype=cfg.dtype)))
            send_id["s2c"] += 1
            # client top leg
            tmsg = transport.recv_at_client()
            logits = top.forward(tmsg.payload, train=True)
            task_loss, dlogits = cross_entropy_with_grad(logits, y)
            ds, tgrads = top.backward(dlogits)
            topt.step(tgrads)
            transport.send_to_server(Message("TopGradient", send_id["c2s"],
                                             np.ascontiguousarray(ds, dtype=cfg.dtype)))
            send_id["c2s"] += 1
            # server gradient leg
            gmsg_at_server = transport.recv_at_server()
            dz, sgrads = server.backward(gmsg_at_server.payload)
            sopt.step(sgrads)
            transport.send_to_client(Message("GradientReturn", send_id["s2c"],
                                             np.ascontiguousarray(dz, dtype=cfg.dtype)))
            send_id["s2c"] += 1

        # client gradient leg
        gmsg = transport.recv_at_client()
        g = gmsg.payload
        gs_score, gs_verdict = None, None
        if monitor is not None:
            out = monitor.update(g.reshape(g.shape[0], -1), y)
            if out is not None:
                gs_score, gs_verdict = out

        if snapshot is not None:
            snapshot.record(slot, smsg.batch_id, z_sent, x, y, epoch)

        record = {"iteration": it, "epoch": epoch, "slot": slot,
                  "task_loss": task_loss,
                  "smashed_norm": float(np.linalg.norm(z_sent)),
                  "grad_norm": float(np.linalg.norm(g))}
        if defense is not None:
            record.update(defense.describe())
        if gs_score is not None:
            record["gs_score"] = gs_score
            record["gs_verdict"] = gs_verdict
        if observer is not None and getattr(observer, "last_losses", None):
            record.update(observer.last_losses)
        transcript.log(**record)

        if gs_verdict == "attack":
            status, abort_at = "detector-aborted", it
            break

        if defense is not None:
            g = defense.transform_upstream(g, x, z)
        _, cgrads = client.backward(np.ascontiguousarray(g, dtype=cfg.dtype))
        copt.step(cgrads)

        if eval_ds is not None and slot == slots - 1:
            ev_loss, ev_acc = _evaluate(full, eval_ds.images, eval_ds.labels, cfg.dtype)
            transcript.log(epoch=epoch, eval_loss=ev_loss, eval_accuracy=ev_acc)

    transcript.wire_digests = transport.digests()
    return SessionResult(status, client, server, top, snapshot, transcript,
                         abort_iteration=abort_at, full_net=full)


# ---------------------------------------------------------------------------
# monolithic oracle

def monolithic_train(cfg: SessionConfig, priv, rng: Rng):
    """Train the undivided model with the same seed, batching, and optimizer
    grouping as the split session; the reference for equivalence checks."""
    n = len(priv)
    full, client, server, top = _build_session_nets(cfg, rng)
    copt, sopt, topt = _optimizers(cfg, client, server, top)
    rng_batch = rng.spawn(STREAM_BATCHING)
    slots = _batch_plan(n, cfg.batch_size)
    total = cfg.iterations if cfg.iterations is not None else cfg.epochs * slots
    n_client = len(client.params)
    n_server = len(server.params)
    order = None
    for it in range(total):
        epoch, slot = divmod(it, slots)
        if slot == 0:
            order = _epoch_order(rng_batch, n)
        idx = order[slot * cfg.batch_size:(slot + 1) * cfg.batch_size]
        x = priv.images[idx].astype(cfg.dtype)
        y = priv.labels[idx]
        logits = full.forward(x, train=True)
        _, dlogits = cross_entropy_with_grad(logits, y)
        _, grads = full.backward(dlogits)
        if top is None:
            sopt.step(grads[n_client:])
        else:
            sopt.step(grads[n_client:n_client + n_server])
            topt.step(grads[n_client + n_server:])
        copt.step(grads[:n_client])
    return full
