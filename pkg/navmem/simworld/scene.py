import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from ..data import load_themes, DEFAULT_THEME_ORDER
from .grid import grid_path, line_of_sight

__all__ = ['Room', 'PlacedObject', 'Scene', 'SceneConfig', 'AgentState', 'UnreachableTargetError',
           'generate_scene', 'detect', 'move_to', 'visible_cells']

logger = logging.getLogger(__name__)


class UnreachableTargetError(RuntimeError):
    pass


@dataclass
class Room:
    rect: tuple                    # interior (x0, y0, x1, y1), inclusive
    theme: str

    def contains(self, x, y):
        x0, y0, x1, y1 = self.rect
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass
class PlacedObject:
    label: str
    position: tuple
    room: int


@dataclass
class SceneConfig:
    rooms: int = 4
    objects_per_room: int = 6
    room_size: int = 8
    grid_size: tuple = None
    themes: tuple = None
    goals: tuple = ('tv',)
    themes_file: str = None

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError('rooms must be at least 1')
        if self.objects_per_room < 0:
            raise ValueError('objects_per_room must be non-negative')
        if self.grid_size is not None:
            self.grid_size = tuple(self.grid_size)
        if self.themes is not None:
            self.themes = tuple(self.themes)
        self.goals = tuple(self.goals or ())

    def to_dict(self):
        d = asdict(self)
        for k in ('grid_size', 'themes', 'goals'):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


@dataclass
class Scene:
    '''
    Synthetic indoor world: walls on an occupancy grid, themed rooms and placed objects.

    walls is a (height, width) bool array indexed [y, x]. Object positions are (x, y, z)
    with z a per-object synthetic height; navigation is planar.
    '''
    walls: np.ndarray
    rooms: list
    objects: list
    start_pool: list = field(default_factory=list)
    seed: int = 0

    def __repr__(self):
        output = 'Scene (seed ' + str(self.seed) + ')\n'
        output += 'Grid (' + str(self.width) + ' x ' + str(self.height) + '), '
        output += str(int(self.walls.sum())) + ' wall cells\n'
        output += str(len(self.rooms)) + ' rooms: ' + ', '.join(r.theme for r in self.rooms) + '\n'
        output += str(len(self.objects)) + ' objects\n'
        return output

    @property
    def width(self):
        return self.walls.shape[1]

    @property
    def height(self):
        return self.walls.shape[0]

    @property
    def diagonal(self):
        return math.hypot(self.width, self.height)

    def is_free(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and not self.walls[y, x]

    def goal_cells(self, goal):
        g = goal.lower()
        return [tuple(o.position[:2]) for o in self.objects if o.label.lower() == g]

    def to_dict(self):
        walls = [[int(x), int(y)] for y, x in zip(*np.nonzero(self.walls))]
        return {'seed': self.seed,
                'grid': {'width': self.width, 'height': self.height, 'walls': walls},
                'rooms': [{'rect': list(r.rect), 'theme': r.theme} for r in self.rooms],
                'objects': [{'label': o.label, 'position': list(o.position), 'room': o.room} for o in self.objects],
                'start_pool': [list(c) for c in self.start_pool]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path):
        with open(path, 'w') as f:
            f.write(self.to_json())

    @classmethod
    def from_dict(cls, d):
        g = d['grid']
        walls = np.zeros((g['height'], g['width']), dtype=bool)
        for x, y in g['walls']:
            walls[y, x] = True
        rooms = [Room(tuple(r['rect']), r['theme']) for r in d['rooms']]
        objects = [PlacedObject(o['label'], tuple(o['position']), o.get('room', -1)) for o in d['objects']]
        pool = [tuple(c) for c in d.get('start_pool', [])]
        return cls(walls, rooms, objects, pool, d.get('seed', 0))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _layout(cfg):
    '''
    Room interiors in a ceil(sqrt(rooms)) column arrangement; a short last row is widened
    to span the grid. Walls are one cell thick.
    '''
    n = cfg.rooms
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    if cfg.grid_size is not None:
        W, H = cfg.grid_size
        rw, rh = (W - 1) // cols - 1, (H - 1) // rows - 1
    else:
        rw = rh = cfg.room_size
        W, H = cols * (rw + 1) + 1, rows * (rh + 1) + 1
    if rw < 3 or rh < 3:
        raise ValueError('grid %s is too small for %d rooms' % ((W, H), n))
    span = cols * (rw + 1)
    rects = []
    for r in range(rows):
        k = min(cols, n - r * cols)
        y0 = 1 + r * (rh + 1)
        edges = [round(i * span / k) for i in range(k + 1)]
        for c in range(k):
            rects.append((edges[c] + 1, y0, edges[c + 1] - 1, y0 + rh - 1))
    return (W, H), rects, cols


def generate_scene(seed, cfg=None):
    '''
    Deterministic themed scene.

    Rooms take themes in order (default: the shipped theme order); each room draws
    objects_per_room distinct labels from its theme vocabulary and places them on distinct
    interior cells. Every goal category of cfg.goals is guaranteed at least one instance.
    Neighbouring rooms are joined by one-cell doors and the free space is checked to form a
    single connected component.
    '''
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    vocab = load_themes(cfg.themes_file)
    themes = list(cfg.themes or [t for t in DEFAULT_THEME_ORDER if t in vocab] + sorted(set(vocab) - set(DEFAULT_THEME_ORDER)))
    if len(themes) < cfg.rooms:
        themes = [themes[i % len(themes)] for i in range(cfg.rooms)]
    for t in themes[:cfg.rooms]:
        if t not in vocab:
            raise ValueError('unknown theme %r' % t)

    (W, H), rects, cols = _layout(cfg)
    walls = np.ones((H, W), dtype=bool)
    rooms = []
    for i, rect in enumerate(rects):
        x0, y0, x1, y1 = rect
        walls[y0:y1 + 1, x0:x1 + 1] = False
        rooms.append(Room(rect, themes[i]))

    doors = set()
    for i, a in enumerate(rects):
        for j, b in enumerate(rects[:i]):
            ax0, ay0, ax1, ay1 = a
            bx0, by0, bx1, by1 = b
            if ay0 == by0 and ax0 == bx1 + 2 and j == i - 1:
                y = int(rng.integers(max(ay0, by0), min(ay1, by1) + 1))
                doors.add((ax0 - 1, y))
            elif ay0 == by1 + 2:
                lo, hi = max(ax0, bx0), min(ax1, bx1)
                if lo <= hi and not any(d[1] == ay0 - 1 and ax0 <= d[0] <= ax1 for d in doors):
                    doors.add((int(rng.integers(lo, hi + 1)), ay0 - 1))
    for x, y in doors:
        walls[y, x] = False

    labels, n_comp = ndimage.label(~walls)
    if n_comp != 1:
        raise RuntimeError('scene %d has %d disconnected regions' % (seed, n_comp))

    objects = []
    for i, room in enumerate(rooms):
        x0, y0, x1, y1 = room.rect
        cells = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]
        pool = vocab[room.theme]
        k = min(cfg.objects_per_room, len(pool), len(cells))
        names = rng.choice(len(pool), size=k, replace=False)
        spots = rng.choice(len(cells), size=k, replace=False)
        for n, s in zip(names, spots):
            x, y = cells[s]
            objects.append(PlacedObject(pool[n], (x, y, int(rng.integers(10, 90))), i))

    for goal in cfg.goals:
        if any(o.label.lower() == goal.lower() for o in objects):
            continue
        home = next((i for i, r in enumerate(rooms) if goal.lower() in (w.lower() for w in vocab[r.theme])), 0)
        x0, y0, x1, y1 = rooms[home].rect
        taken = {o.position[:2] for o in objects}
        free = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1) if (x, y) not in taken]
        mine = [k for k, o in enumerate(objects) if o.room == home]
        if free:
            x, y = free[int(rng.integers(len(free)))]
            objects.append(PlacedObject(goal, (x, y, int(rng.integers(10, 90))), home))
        else:
            k = mine[int(rng.integers(len(mine)))]
            objects[k] = PlacedObject(goal, objects[k].position, home)

    pool = [(x, y) for r in rooms for y in range(r.rect[1], r.rect[3] + 1) for x in range(r.rect[0], r.rect[2] + 1)]
    scene = Scene(walls, rooms, objects, pool, seed)
    logger.debug('generated scene %d: %d rooms, %d objects', seed, len(rooms), len(objects))
    return scene


def detect(scene, position, range_):
    """Objects within planar Euclidean range_ and unobstructed line of sight, in scene order."""
    px, py = position[0], position[1]
    out = []
    for o in scene.objects:
        x, y = o.position[0], o.position[1]
        if math.hypot(x - px, y - py) <= range_ and line_of_sight(scene.walls, (px, py), (x, y)):
            out.append((o.label, tuple(o.position)))
    return out


def visible_cells(scene, position, range_):
    """Bool (height, width) mask of free cells seen from position."""
    px, py = position[0], position[1]
    mask = np.zeros(scene.walls.shape, dtype=bool)
    r = int(math.floor(range_))
    for y in range(max(0, py - r), min(scene.height, py + r + 1)):
        for x in range(max(0, px - r), min(scene.width, px + r + 1)):
            if not scene.walls[y, x] and math.hypot(x - px, y - py) <= range_ \
                    and line_of_sight(scene.walls, (px, py), (x, y)):
                mask[y, x] = True
    return mask


@dataclass
class AgentState:
    position: tuple
    path_length: float = 0.0
    step_index: int = 0
    visited: set = field(default_factory=set)


def move_to(scene, agent, target, graph=None):
    """Walk a shortest 4-connected path to target; returns the distance traveled."""
    target = (int(target[0]), int(target[1]))
    path = grid_path(scene.walls, agent.position, target, graph)
    if path is None:
        raise UnreachableTargetError('no path from %s to %s' % (agent.position, target))
    d = len(path) - 1
    agent.position = target
    agent.path_length += d
    return d
