"""Architecture builders, epsilon-greedy policy, targets, and the train step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .optim import q_loss_grad, rmsprop_step
from .tensor_core import LayerSpec, ShapeError, backward, forward, make_network

ARCHITECTURES = ("just_ram", "big_ram", "nips", "mixed_ram", "big_mixed_ram")

# (filters, kernel, stride) per conv layer; the full-scale pair is inherited
# from the benchmark lineage, the micro pair keeps tiny screens viable.
CONV_FULL = ((16, 8, 4), (32, 4, 2))
CONV_MICRO = ((16, 4, 2), (32, 2, 1))


@dataclass
class HyperParams:
    minibatch_size: int = 32
    replay_capacity: int = 100_000
    phi_length: int = 4
    learning_rate: float = 0.0002
    discount: float = 0.95
    epsilon_start: float = 1.0
    epsilon_decay_steps: int = 1_000_000
    epsilon_min: float = 0.1
    replay_start_size: int = 100
    frame_skip: int = 4
    dropout_p: float = 0.0
    steps_per_epoch: int = 12_500
    test_steps: int = 10_000
    test_epsilon: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon_min must not exceed epsilon_start")
        for name in ("minibatch_size", "replay_capacity", "phi_length",
                     "epsilon_decay_steps", "frame_skip", "steps_per_epoch",
                     "test_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    min: float = 0.1
    decay_steps: int = 1_000_000

    @classmethod
    def from_hyper(cls, hyper):
        return cls(start=hyper.epsilon_start, min=hyper.epsilon_min,
                   decay_steps=hyper.epsilon_decay_steps)


def epsilon_at(schedule, step):
    """Linear fade from start to min over decay_steps, clamped thereafter."""
    if step >= schedule.decay_steps:
        return schedule.min
    frac = step / schedule.decay_steps
    return schedule.start + (schedule.min - schedule.start) * frac


def architecture_streams(name):
    """Which input streams an architecture consumes: (needs_ram, needs_screen)."""
    if name in ("just_ram", "big_ram"):
        return True, False
    if name == "nips":
        return False, True
    if name in ("mixed_ram", "big_mixed_ram"):
        return True, True
    raise ValueError(f"unknown architecture {name!r}")


def _conv_plan(screen_shape):
    """Full-scale conv hyperparameters when they fit, micro ones otherwise."""
    for plan in (CONV_FULL, CONV_MICRO):
        h, w = screen_shape
        ok = True
        for _, k, s in plan:
            if k > h or k > w:
                ok = False
                break
            h, w = (h - k) // s + 1, (w - k) // s + 1
        if ok and h >= 1 and w >= 1:
            return plan
    raise ShapeError(f"screen {screen_shape} too small for any conv plan")


def build_architecture(name, output_dim, screen_shape=None, phi_length=4,
                       dropout_p=0.0, rng=None, dtype=np.float32):
    """Build one of the five network architectures.

    Dropout (when enabled) follows every hidden layer but never the output.
    screen_shape is the (H, W) of a single frame; screen networks receive a
    phi_length-channel stack.
    """
    needs_ram, needs_screen = architecture_streams(name)
    if needs_screen and screen_shape is None:
        raise ValueError(f"{name} needs a screen_shape")
    if rng is None:
        rng = np.random.default_rng(0)

    specs = []

    def add(spec):
        specs.append(spec)
        return len(specs) - 1

    def hidden(spec):
        idx = add(spec)
        if dropout_p > 0.0:
            idx = add(LayerSpec(kind="dropout", drop_p=dropout_p, input_refs=(idx,)))
        return idx

    ram_idx = screen_tail = None
    if needs_ram:
        ram_idx = add(LayerSpec(kind="input", stream="ram", shape=(128,)))
    if needs_screen:
        s_in = add(LayerSpec(kind="input", stream="screen",
                             shape=(phi_length,) + tuple(screen_shape)))
        prev = s_in
        for filters, kernel, stride in _conv_plan(screen_shape):
            prev = hidden(LayerSpec(kind="conv2d", activation="rectify",
                                    filters=filters, kernel=kernel, stride=stride,
                                    input_refs=(prev,)))
        screen_tail = prev

    def dense(units, ref):
        return hidden(LayerSpec(kind="dense", activation="rectify",
                                units=units, input_refs=(ref,)))

    def out(ref):
        add(LayerSpec(kind="dense", activation="none",
                      units=output_dim, input_refs=(ref,)))

    if name == "just_ram":
        out(dense(128, dense(128, ram_idx)))
    elif name == "big_ram":
        h = ram_idx
        for _ in range(4):
            h = dense(128, h)
        out(h)
    elif name == "nips":
        out(dense(256, screen_tail))
    elif name == "mixed_ram":
        h = dense(256, screen_tail)
        cat = add(LayerSpec(kind="concat", input_refs=(h, ram_idx)))
        out(cat)
    else:  # big_mixed_ram
        h1 = dense(256, screen_tail)
        h3 = dense(128, dense(128, ram_idx))
        cat = add(LayerSpec(kind="concat", input_refs=(h1, h3)))
        out(dense(256, cat))

    return make_network(specs, rng, dtype=dtype)


def select_action(net, observation_inputs, epsilon, rng, action_count):
    """Epsilon-greedy over Q(observation); argmax ties break to lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(action_count))
    batch = {k: v[None, ...] for k, v in observation_inputs.items()}
    acts = forward(net, batch, mode="eval")
    q = acts[net.terminal]["out"][0]
    return int(np.argmax(q))


def _stack_states(states):
    streams = states[0].keys()
    return {k: np.stack([s[k] for s in states]) for k in streams}


def compute_targets(net, minibatch, discount):
    """Bellman targets y_i = r_i (+ discount * max_a Q(s'_i, a) if non-terminal).

    Uses the online network in eval mode; terminal next states are never read.
    """
    if not minibatch:
        raise ValueError("minibatch must be nonempty")
    targets = np.array([t.reward for t in minibatch], dtype=np.float64)
    live = [i for i, t in enumerate(minibatch) if not t.terminal]
    if live and discount > 0.0:
        batch = _stack_states([minibatch[i].next_state for i in live])
        acts = forward(net, batch, mode="eval")
        q_next = acts[net.terminal]["out"]
        targets[live] += discount * q_next.max(axis=1)
    return targets


def train_step(net, memory, optimizer_state, hyper, sample_rng, dropout_rng=None):
    """One parameter update: sample, target, squared-loss gradient, rmsprop."""
    batch = memory.sample_minibatch(hyper.minibatch_size, sample_rng)
    targets = compute_targets(net, batch, hyper.discount)
    states = _stack_states([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.intp)
    mode = "train" if hyper.dropout_p > 0.0 else "eval"
    acts = forward(net, states, mode=mode, rng=dropout_rng)
    q = acts[net.terminal]["out"]
    loss, dq = q_loss_grad(q, actions, targets)
    grads = backward(net, acts, dq)
    rmsprop_step(net.params, grads, optimizer_state)
    return loss
