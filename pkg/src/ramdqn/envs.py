"""Micro-game environments with Atari-style observations.

Every environment emits an Observation pairing a 128-byte RAM vector with a
small grayscale screen, advances exactly one frame per step, and is fully
deterministic given (seed, action sequence).  The documented RAM maps are
byte-exact mirrors of the internal game variables so that RAM-only agents
have something real to learn from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RAM_SIZE = 128


@dataclass
class Observation:
    """128-byte RAM vector plus a grayscale screen frame."""

    ram: np.ndarray     # (128,) uint8
    screen: np.ndarray  # (H, W) uint8


@dataclass
class EnvStepResult:
    observation: Observation
    reward: float
    terminal: bool


def scale_ram(ram):
    """Scale RAM bytes by 256 so inputs lie in [0, 255/256]."""
    return np.asarray(ram, dtype=np.float32) / 256.0


class PhiBuffer:
    """Rolling window of the last `phi_length` screens, oldest first."""

    def __init__(self, phi_length=4):
        if phi_length < 1:
            raise ValueError("phi_length must be positive")
        self.phi_length = phi_length
        self.frames = []

    def reset(self, screen):
        self.frames = [np.array(screen, dtype=np.uint8) for _ in range(self.phi_length)]

    def stack(self):
        if not self.frames:
            raise RuntimeError("PhiBuffer not initialized; call reset first")
        return np.stack(self.frames).astype(np.float32) / 256.0

    def observe(self, new_screen):
        if not self.frames:
            raise RuntimeError("PhiBuffer not initialized; call reset first")
        self.frames.pop(0)
        self.frames.append(np.array(new_screen, dtype=np.uint8))
        return np.stack(self.frames).astype(np.float32) / 256.0


def phi_observe(buffer, new_screen):
    """Evict the oldest frame, append the newest, return the scaled stack."""
    return buffer.observe(new_screen)


class MicroGame:
    """Base class: RAM assembly, terminal bookkeeping, rng state plumbing."""

    name = ""
    action_count = 0
    screen_shape = (0, 0)

    def __init__(self):
        self._rng = None
        self.terminal = True

    def reset(self, seed):
        self._rng = np.random.default_rng(seed)
        self.terminal = False
        self._reset_game()
        return self._observation()

    def step(self, action):
        if self.terminal:
            raise RuntimeError(f"{self.name}: stepping a terminated episode")
        if not 0 <= action < self.action_count:
            raise ValueError(f"{self.name}: illegal action index {action}")
        reward = self._advance(action)
        return EnvStepResult(self._observation(), float(reward), self.terminal)

    def ram(self):
        ram = np.zeros(RAM_SIZE, dtype=np.uint8)
        self._fill_ram(ram)
        return ram

    def _observation(self):
        return Observation(ram=self.ram(), screen=self._render())

    def get_state(self):
        return {
            "vars": self._game_state(),
            "terminal": self.terminal,
            "rng": self._rng.bit_generator.state,
        }

    def set_state(self, state):
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = state["rng"]
        self.terminal = state["terminal"]
        self._set_game_state(state["vars"])


class MicroCatch(MicroGame):
    """Catch falling objects with a paddle on a 16x16 grid.

    Positions live in fine units (multiples of 16 spanning 0..240) so the RAM
    bytes cover most of the 0..255 range; one grid cell = 16 units.  The
    object falls one cell per frame from row 0 and spawns within five columns
    of the paddle, so a greedy chaser always reaches it.  The paddle is three
    columns wide (its RAM byte stores the center).  +1 per catch; the first
    miss ends the episode, as does the tenth catch (keeps the optimal episode
    score finite).

    RAM map: [0]=paddle x, [1]=object x, [2]=object y, [3]=score mod 256,
    [4]=frame counter mod 256, [5..127]=0.
    """

    name = "micro_catch"
    action_count = 3  # noop / left / right
    screen_shape = (16, 16)
    max_catches = 10
    spawn_window = 5  # columns either side of the paddle

    def _reset_game(self):
        self.paddle = 7 * 16
        self.score = 0
        self.frame = 0
        self.catches = 0
        self._spawn()

    def _spawn(self):
        offset = int(self._rng.integers(-self.spawn_window, self.spawn_window + 1))
        self.obj_x = min(max(self.paddle + 16 * offset, 0), 240)
        self.obj_y = 0

    def _advance(self, action):
        if action == 1:
            self.paddle = max(self.paddle - 16, 0)
        elif action == 2:
            self.paddle = min(self.paddle + 16, 240)
        self.obj_y += 16
        reward = 0
        if self.obj_y == 240:
            if abs(self.obj_x - self.paddle) <= 16:  # paddle spans 3 columns
                reward = 1
                self.score = (self.score + 1) % 256
                self.catches += 1
                if self.catches >= self.max_catches:
                    self.terminal = True
                else:
                    self._spawn()
            else:
                self.terminal = True
        self.frame += 1
        return reward

    def _fill_ram(self, ram):
        ram[0] = self.paddle
        ram[1] = self.obj_x
        ram[2] = self.obj_y
        ram[3] = self.score % 256
        ram[4] = self.frame % 256

    def _render(self):
        screen = np.zeros(self.screen_shape, dtype=np.uint8)
        screen[min(self.obj_y // 16, 15), self.obj_x // 16] = 128
        col = self.paddle // 16
        screen[15, max(col - 1, 0) : min(col + 1, 15) + 1] = 255
        return screen

    def _game_state(self):
        return {
            "paddle": self.paddle, "obj_x": self.obj_x, "obj_y": self.obj_y,
            "score": self.score, "frame": self.frame, "catches": self.catches,
        }

    def _set_game_state(self, v):
        self.paddle = v["paddle"]
        self.obj_x = v["obj_x"]
        self.obj_y = v["obj_y"]
        self.score = v["score"]
        self.frame = v["frame"]
        self.catches = v["catches"]


class MicroBreakout(MicroGame):
    """Single-ball brick breaker on a 20x16 grid.

    The ball sits on the paddle until fired; bricks occupy rows 2..4 and
    respawn once cleared.  Losing the ball past the paddle row ends the
    episode.  +1 per brick.

    RAM map: [0]=paddle x (center of a width-3 paddle), [1]=ball x,
    [2]=ball y, [3]=velocity code (0 = not launched, else
    1 + (dx>0) + 2*(dy>0)), [4..9]=brick bitmasks (two bytes per row,
    low columns first), [10]=score mod 256, [11..127]=0.
    """

    name = "micro_breakout"
    action_count = 4  # noop / fire / left / right
    screen_shape = (20, 16)
    brick_rows = (2, 3, 4)

    def _reset_game(self):
        self.paddle = 8
        self.score = 0
        self.bricks = [[1] * 16 for _ in self.brick_rows]
        self._rack_ball()

    def _rack_ball(self):
        self.ball_x = self.paddle
        self.ball_y = 18
        self.dx = 0
        self.dy = 0
        self.launched = False

    def _advance(self, action):
        if action == 2:
            self.paddle = max(self.paddle - 1, 1)
        elif action == 3:
            self.paddle = min(self.paddle + 1, 14)

        reward = 0
        if not self.launched:
            self.ball_x = self.paddle
            if action == 1:
                self.launched = True
                self.dx = int(self._rng.choice((-1, 1)))
                self.dy = -1
            return 0

        self.ball_x += self.dx
        self.ball_y += self.dy
        if self.ball_x < 0:
            self.ball_x = 0
            self.dx = 1
        elif self.ball_x > 15:
            self.ball_x = 15
            self.dx = -1
        if self.ball_y < 0:
            self.ball_y = 0
            self.dy = 1

        if self.ball_y in self.brick_rows:
            row = self.brick_rows.index(self.ball_y)
            if self.bricks[row][self.ball_x]:
                self.bricks[row][self.ball_x] = 0
                reward = 1
                self.score = (self.score + 1) % 256
                self.dy = -self.dy
                if not any(any(r) for r in self.bricks):
                    self.bricks = [[1] * 16 for _ in self.brick_rows]

        if self.ball_y == 19:
            if abs(self.ball_x - self.paddle) <= 1:
                self.ball_y = 18
                self.dy = -1
            else:
                self.terminal = True
        return reward

    def _velocity_code(self):
        if not self.launched:
            return 0
        return 1 + (1 if self.dx > 0 else 0) + (2 if self.dy > 0 else 0)

    def _fill_ram(self, ram):
        ram[0] = self.paddle
        ram[1] = self.ball_x
        ram[2] = self.ball_y
        ram[3] = self._velocity_code()
        for row in range(3):
            lo = sum(self.bricks[row][c] << c for c in range(8))
            hi = sum(self.bricks[row][c + 8] << c for c in range(8))
            ram[4 + 2 * row] = lo
            ram[5 + 2 * row] = hi
        ram[10] = self.score % 256

    def _render(self):
        screen = np.zeros(self.screen_shape, dtype=np.uint8)
        for row, y in enumerate(self.brick_rows):
            for c in range(16):
                if self.bricks[row][c]:
                    screen[y, c] = 96
        screen[19, self.paddle - 1 : self.paddle + 2] = 160
        screen[min(self.ball_y, 19), self.ball_x] = 255
        return screen

    def _game_state(self):
        return {
            "paddle": self.paddle, "ball_x": self.ball_x, "ball_y": self.ball_y,
            "dx": self.dx, "dy": self.dy, "launched": self.launched,
            "score": self.score, "bricks": [list(r) for r in self.bricks],
        }

    def _set_game_state(self, v):
        self.paddle = v["paddle"]
        self.ball_x = v["ball_x"]
        self.ball_y = v["ball_y"]
        self.dx = v["dx"]
        self.dy = v["dy"]
        self.launched = v["launched"]
        self.score = v["score"]
        self.bricks = [list(r) for r in v["bricks"]]


class MicroDiver(MicroGame):
    """Submarine game on a 20x20 grid with an oxygen clock.

    Eight enemy slots patrol fixed rows (3, 5, ..., 17), drifting one column
    right per frame; firing destroys the enemy sharing the submarine's row
    (+1) and it respawns at a random column.  One diver is present at a time;
    moving onto it picks it up (up to 6 held).  Surfacing (row 0) with divers
    aboard scores +5 per diver and refills oxygen.  Oxygen drops one unit per
    frame; hitting 0 or colliding with an enemy ends the episode.

    RAM map: [0]=sub x, [1]=sub y, [2]=oxygen, [3]=divers held,
    [4]=score mod 256, [5..12]=enemy slots (column+1, 0 = empty),
    [13..127]=0.
    """

    name = "micro_diver"
    action_count = 6  # noop / fire / up / down / left / right
    screen_shape = (20, 20)
    n_slots = 8
    max_divers = 6

    @staticmethod
    def slot_row(slot):
        return 3 + 2 * slot

    def _reset_game(self):
        self.sub_x = 10
        self.sub_y = 10
        self.oxygen = 255
        self.divers = 0
        self.score = 0
        self.enemies = [int(self._rng.integers(0, 20)) for _ in range(self.n_slots)]
        self._spawn_diver()

    def _spawn_diver(self):
        self.diver_x = int(self._rng.integers(0, 20))
        self.diver_y = int(self._rng.integers(1, 20))

    def _advance(self, action):
        reward = 0
        if action == 2:
            self.sub_y = max(self.sub_y - 1, 0)
        elif action == 3:
            self.sub_y = min(self.sub_y + 1, 19)
        elif action == 4:
            self.sub_x = max(self.sub_x - 1, 0)
        elif action == 5:
            self.sub_x = min(self.sub_x + 1, 19)

        if action == 1 and self.sub_y >= 3 and (self.sub_y - 3) % 2 == 0:
            slot = (self.sub_y - 3) // 2
            if slot < self.n_slots:
                reward += 1
                self.score = (self.score + 1) % 256
                self.enemies[slot] = int(self._rng.integers(0, 20))

        if (self.sub_x, self.sub_y) == (self.diver_x, self.diver_y):
            if self.divers < self.max_divers:
                self.divers += 1
            self._spawn_diver()

        if self.sub_y == 0 and self.divers > 0:
            delivered = 5 * self.divers
            reward += delivered
            self.score = (self.score + delivered) % 256
            self.divers = 0
            self.oxygen = 255

        self.enemies = [(e + 1) % 20 for e in self.enemies]
        for slot, ex in enumerate(self.enemies):
            if self.sub_y == self.slot_row(slot) and self.sub_x == ex:
                self.terminal = True

        self.oxygen -= 1
        if self.oxygen <= 0:
            self.oxygen = 0
            self.terminal = True
        return reward

    def _fill_ram(self, ram):
        ram[0] = self.sub_x
        ram[1] = self.sub_y
        ram[2] = self.oxygen
        ram[3] = self.divers
        ram[4] = self.score % 256
        for slot, ex in enumerate(self.enemies):
            ram[5 + slot] = ex + 1

    def _render(self):
        screen = np.zeros(self.screen_shape, dtype=np.uint8)
        screen[self.diver_y, self.diver_x] = 64
        for slot, ex in enumerate(self.enemies):
            screen[self.slot_row(slot), ex] = 128
        screen[self.sub_y, self.sub_x] = 255
        return screen

    def _game_state(self):
        return {
            "sub_x": self.sub_x, "sub_y": self.sub_y, "oxygen": self.oxygen,
            "divers": self.divers, "score": self.score,
            "enemies": list(self.enemies),
            "diver_x": self.diver_x, "diver_y": self.diver_y,
        }

    def _set_game_state(self, v):
        self.sub_x = v["sub_x"]
        self.sub_y = v["sub_y"]
        self.oxygen = v["oxygen"]
        self.divers = v["divers"]
        self.score = v["score"]
        self.enemies = list(v["enemies"])
        self.diver_x = v["diver_x"]
        self.diver_y = v["diver_y"]


ENV_REGISTRY = {
    MicroCatch.name: MicroCatch,
    MicroBreakout.name: MicroBreakout,
    MicroDiver.name: MicroDiver,
}


def make_env(name):
    try:
        return ENV_REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}") from None


def frame_skip_step(env, action, k):
    """Repeat `action` for k frames (or until terminal); rewards are summed
    and the final frame's observation is returned."""
    if k < 1:
        raise ValueError("frame skip must be >= 1")
    total = 0.0
    result = None
    for _ in range(k):
        result = env.step(action)
        total += result.reward
        if result.terminal:
            break
    return EnvStepResult(result.observation, total, result.terminal)
