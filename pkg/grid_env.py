#!/usr/bin/env python3
"""
FourRoom Gridworld Environment

The FourRoom maze family: a 19x19 grid split into four 9x9 rooms by one wall
row (y = 9) and one wall column (x = 9), each internal wall segment pierced by
a single door. The agent moves left/right/up/down or stays; entering the goal
pays 1 and ends the episode; episodes are also cut after 50 steps.

Coordinates are (x, y) with x the column and y the row; "up" increases y, so
the bottom-left room is x < 9, y < 9.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from errors import GridError

logger = logging.getLogger(__name__)

GRID_SIZE = 19
WALL_LINE = 9
DOOR_CELLS: Tuple[Tuple[int, int], ...] = ((4, 9), (14, 9), (9, 4), (9, 14))
FOURROOM_GOAL = (15, 15)
FOURROOM2_GOAL = (2, 18)
MAX_EPISODE_STEPS = 50
GOAL_REWARD = 1.0

# Layout file characters
OPEN_CHAR = "."
WALL_CHAR = "#"
GOAL_CHAR = "G"


class Action(IntEnum):
    """The five gridworld actions; the integer value is the action index"""
    LEFT = 0
    RIGHT = 1
    UP = 2
    DOWN = 3
    STAY = 4


NUM_ACTIONS = len(Action)
ACTION_DELTAS = np.array([[-1, 0], [1, 0], [0, 1], [0, -1], [0, 0]], dtype=np.int64)


class GridState(NamedTuple):
    """Integer cell coordinate; also the 2-d state feature vector"""
    x: int
    y: int


class CellInfo(NamedTuple):
    """One enumerated grid cell"""
    index: int
    x: int
    y: int
    is_wall: bool


class StepResult(NamedTuple):
    """Outcome of one environment step"""
    next_state: GridState
    reward: float
    done: bool
    terminal: bool  # reached the goal; bootstrapping stops here
    timeout: bool  # hit the episode step cap; not a true terminal


@dataclass(frozen=True)
class GridSpec:
    """Geometry, goal and episode limits of a gridworld"""
    name: str
    width: int
    height: int
    walls: FrozenSet[Tuple[int, int]]
    goal: GridState
    doors: Tuple[GridState, ...] = field(default_factory=tuple)
    max_episode_steps: int = MAX_EPISODE_STEPS
    goal_reward: float = GOAL_REWARD

    def __post_init__(self):
        result = validate_grid_spec(self)
        if not result["valid"]:
            raise GridError(f"Invalid grid specification '{self.name}'", result["errors"])

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @cached_property
    def wall_mask(self) -> np.ndarray:
        """Boolean array indexed [x, y], True on wall cells"""
        mask = np.zeros((self.width, self.height), dtype=bool)
        for x, y in self.walls:
            mask[x, y] = True
        return mask

    @cached_property
    def open_cells(self) -> np.ndarray:
        """(N, 2) integer coordinates of open cells in enumeration order"""
        cells = [(c.x, c.y) for c in enumerate_states(self) if not c.is_wall]
        return np.array(cells, dtype=np.int64)

    @cached_property
    def start_cells(self) -> np.ndarray:
        """Open cells other than the goal; the reset distribution's support"""
        cells = self.open_cells
        keep = ~((cells[:, 0] == self.goal.x) & (cells[:, 1] == self.goal.y))
        return cells[keep]

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_wall(self, x: int, y: int) -> bool:
        return (x, y) in self.walls

    def cell_index(self, x: int, y: int) -> int:
        """Row-major index used by tabular approximators and the DP tables"""
        return y * self.width + x

    def same_dynamics(self, other: "GridSpec") -> bool:
        """True when two specs differ at most in their goal cell"""
        return (self.width, self.height, self.walls) == (other.width, other.height, other.walls)

    @cached_property
    def dynamics_signature(self) -> str:
        """Single-line fingerprint of size and walls, shared by specs with the same dynamics"""
        walls = ";".join(f"{x},{y}" for x, y in sorted(self.walls))
        return f"{self.width}x{self.height}:" + hashlib.sha256(walls.encode("utf-8")).hexdigest()[:16]


def validate_grid_spec(spec: GridSpec) -> Dict[str, Any]:
    """
    Validate a grid specification.

    Returns:
        Dict with 'valid' boolean and 'errors' list
    """
    errors = []

    if spec.width <= 0 or spec.height <= 0:
        errors.append(f"Grid dimensions must be positive, got {spec.width}x{spec.height}")
        return {"valid": False, "errors": errors}

    for x, y in spec.walls:
        if not (0 <= x < spec.width and 0 <= y < spec.height):
            errors.append(f"Wall cell ({x},{y}) lies outside the grid")

    gx, gy = spec.goal
    if not (0 <= gx < spec.width and 0 <= gy < spec.height):
        errors.append(f"Goal ({gx},{gy}) lies outside the grid")
    elif (gx, gy) in spec.walls:
        errors.append(f"Goal ({gx},{gy}) is a wall cell")

    for door in spec.doors:
        if tuple(door) in spec.walls:
            errors.append(f"Door ({door.x},{door.y}) is a wall cell")

    if spec.max_episode_steps < 1:
        errors.append("max_episode_steps must be at least 1")

    return {"valid": len(errors) == 0, "errors": errors}


def check_four_room_geometry(spec: GridSpec) -> Dict[str, Any]:
    """
    Check the FourRoom invariants: 19x19, one wall row and column, one door
    per internal wall segment.

    Returns:
        Dict with 'valid' boolean and 'errors' list
    """
    errors = []
    if (spec.width, spec.height) != (GRID_SIZE, GRID_SIZE):
        errors.append(f"FourRoom grids are {GRID_SIZE}x{GRID_SIZE}, got {spec.width}x{spec.height}")
        return {"valid": False, "errors": errors}

    line_cells = {(WALL_LINE, y) for y in range(GRID_SIZE)} | {(x, WALL_LINE) for x in range(GRID_SIZE)}
    if not spec.walls <= line_cells:
        extra = sorted(spec.walls - line_cells)
        errors.append(f"Wall cells off the internal wall lines: {extra[:5]}")

    # four segments: left/right halves of the wall row, bottom/top halves of the wall column
    segments = {
        "row-left": [(x, WALL_LINE) for x in range(WALL_LINE)],
        "row-right": [(x, WALL_LINE) for x in range(WALL_LINE + 1, GRID_SIZE)],
        "column-bottom": [(WALL_LINE, y) for y in range(WALL_LINE)],
        "column-top": [(WALL_LINE, y) for y in range(WALL_LINE + 1, GRID_SIZE)],
    }
    for segment_name, cells in segments.items():
        openings = [c for c in cells if c not in spec.walls]
        if len(openings) != 1:
            errors.append(f"Wall segment {segment_name} has {len(openings)} doors, expected 1")

    if (WALL_LINE, WALL_LINE) not in spec.walls:
        errors.append("Wall crossing (9,9) must be a wall cell")

    return {"valid": len(errors) == 0, "errors": errors}


def four_room_spec(goal: Tuple[int, int] = FOURROOM_GOAL, name: str = "fourroom") -> GridSpec:
    """Build the FourRoom maze with doors at the middle of each wall segment"""
    doors = {tuple(d) for d in DOOR_CELLS}
    walls = set()
    for i in range(GRID_SIZE):
        for cell in ((WALL_LINE, i), (i, WALL_LINE)):
            if cell not in doors:
                walls.add(cell)
    return GridSpec(
        name=name,
        width=GRID_SIZE,
        height=GRID_SIZE,
        walls=frozenset(walls),
        goal=GridState(*goal),
        doors=tuple(GridState(*d) for d in DOOR_CELLS),
    )


ENV_FACTORIES = {
    "fourroom": lambda: four_room_spec(FOURROOM_GOAL, "fourroom"),
    "fourroom2": lambda: four_room_spec(FOURROOM2_GOAL, "fourroom2"),
}


def make_spec(name: str, layout_file: Optional[Union[str, Path]] = None) -> GridSpec:
    """Look up a named environment, or load it from a layout file"""
    if layout_file is not None:
        return load_layout_file(layout_file, name=name)
    if name not in ENV_FACTORIES:
        raise GridError(f"Unknown environment '{name}'", [f"Must be one of: {', '.join(sorted(ENV_FACTORIES))}"])
    return ENV_FACTORIES[name]()


# Layout files

def parse_layout(text: str, name: str = "custom", max_episode_steps: int = MAX_EPISODE_STEPS) -> GridSpec:
    """
    Parse a plain-text layout: one character per cell, top row (highest y)
    first. '.' open, '#' wall, 'G' goal (exactly one).
    """
    rows = [line.rstrip() for line in text.splitlines() if line.strip() and not line.startswith(";")]
    errors = []
    if not rows:
        raise GridError("Layout is empty")

    width = len(rows[0])
    height = len(rows)
    walls = set()
    goals = []
    for row_number, line in enumerate(rows):
        y = height - 1 - row_number
        if len(line) != width:
            errors.append(f"Row {row_number} has width {len(line)}, expected {width}")
            continue
        for x, char in enumerate(line):
            if char == WALL_CHAR:
                walls.add((x, y))
            elif char == GOAL_CHAR:
                goals.append(GridState(x, y))
            elif char != OPEN_CHAR:
                errors.append(f"Unknown layout character '{char}' at ({x},{y})")

    if len(goals) != 1:
        errors.append(f"Layout must contain exactly one goal '{GOAL_CHAR}', found {len(goals)}")
    if errors:
        raise GridError(f"Invalid layout '{name}'", errors)

    mid_x, mid_y = width // 2, height // 2
    doors = tuple(
        GridState(x, y)
        for y in range(height)
        for x in range(width)
        if (x == mid_x or y == mid_y) and (x, y) not in walls
    )
    return GridSpec(
        name=name,
        width=width,
        height=height,
        walls=frozenset(walls),
        goal=goals[0],
        doors=doors,
        max_episode_steps=max_episode_steps,
    )


def format_layout(spec: GridSpec) -> str:
    """Render a spec in the layout file format"""
    lines = []
    for y in range(spec.height - 1, -1, -1):
        chars = []
        for x in range(spec.width):
            if (x, y) == tuple(spec.goal):
                chars.append(GOAL_CHAR)
            elif (x, y) in spec.walls:
                chars.append(WALL_CHAR)
            else:
                chars.append(OPEN_CHAR)
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def load_layout_file(path: Union[str, Path], name: Optional[str] = None) -> GridSpec:
    path = Path(path)
    if not path.exists():
        raise GridError(f"Layout file not found: {path}")
    spec = parse_layout(path.read_text(), name=name or path.stem)
    logger.info(f"Loaded layout '{spec.name}' from {path} ({spec.width}x{spec.height}, goal {tuple(spec.goal)})")
    return spec


# Transitions

def enumerate_states(spec: GridSpec) -> List[CellInfo]:
    """All cells in row-major order (index = y * width + x)"""
    return [
        CellInfo(spec.cell_index(x, y), x, y, (x, y) in spec.walls)
        for y in range(spec.height)
        for x in range(spec.width)
    ]


def transition(spec: GridSpec, s: Tuple[int, int], a: int) -> GridState:
    """Deterministic move; blocked by walls and the outer boundary"""
    dx, dy = ACTION_DELTAS[int(a)]
    nx, ny = s[0] + int(dx), s[1] + int(dy)
    if not spec.in_bounds(nx, ny) or (nx, ny) in spec.walls:
        return GridState(int(s[0]), int(s[1]))
    return GridState(nx, ny)


def transition_batch(spec: GridSpec, cells: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Vectorised `transition` over (B, 2) integer cells"""
    cells = np.asarray(cells, dtype=np.int64)
    moved = cells + ACTION_DELTAS[np.asarray(actions, dtype=np.int64)]
    inside = (
        (moved[:, 0] >= 0) & (moved[:, 0] < spec.width)
        & (moved[:, 1] >= 0) & (moved[:, 1] < spec.height)
    )
    clipped = np.clip(moved, 0, [spec.width - 1, spec.height - 1])
    blocked = ~inside | spec.wall_mask[clipped[:, 0], clipped[:, 1]]
    return np.where(blocked[:, None], cells, moved)


def snap_to_grid(spec: GridSpec, points: np.ndarray) -> np.ndarray:
    """Round real-valued (B, 2) points to the nearest in-grid cell"""
    snapped = np.rint(np.asarray(points, dtype=np.float64)).astype(np.int64)
    return np.clip(snapped, 0, [spec.width - 1, spec.height - 1])


def is_goal(spec: GridSpec, cells: np.ndarray) -> np.ndarray:
    cells = np.asarray(cells)
    return (cells[:, 0] == spec.goal.x) & (cells[:, 1] == spec.goal.y)


def reset(spec: GridSpec, rng: np.random.Generator) -> GridState:
    """Uniformly random open non-goal cell"""
    x, y = spec.start_cells[rng.integers(len(spec.start_cells))]
    return GridState(int(x), int(y))


def step(spec: GridSpec, s: Tuple[int, int], a: int, t: int = 0) -> StepResult:
    """
    Pure environment step.

    Args:
        spec: Grid specification
        s: Current (open) cell
        a: Action index
        t: Number of steps already taken in the episode

    Raises:
        GridError: If s is a wall cell or off the grid
    """
    x, y = int(s[0]), int(s[1])
    if not spec.in_bounds(x, y):
        raise GridError(f"State ({x},{y}) is outside the grid")
    if (x, y) in spec.walls:
        raise GridError(f"State ({x},{y}) is a wall cell")

    next_state = transition(spec, (x, y), a)
    terminal = next_state == spec.goal
    reward = spec.goal_reward if terminal else 0.0
    timeout = (not terminal) and (t + 1 >= spec.max_episode_steps)
    return StepResult(next_state, reward, terminal or timeout, terminal, timeout)


class FourRoomEnv:
    """Stateful episode wrapper around the pure step function"""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.state: Optional[GridState] = None
        self.steps = 0
        self.episodes = 0

    def reset(self, rng: np.random.Generator) -> GridState:
        self.state = reset(self.spec, rng)
        self.steps = 0
        self.episodes += 1
        return self.state

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise GridError("Environment stepped before reset")
        result = step(self.spec, self.state, action, self.steps)
        self.steps += 1
        self.state = result.next_state
        return result
