from collections import deque

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path

__all__ = ['grid_graph', 'grid_distances', 'grid_path', 'line_of_sight', 'cell_index', 'index_cell',
           'bfs_distance']


def cell_index(cell, width):
    x, y = cell
    return y * width + x


def index_cell(k, width):
    return int(k % width), int(k // width)


def grid_graph(walls):
    '''
    4-connected adjacency over the free cells of an occupancy grid.

    walls is a bool (height, width) array, True for wall cells. Cells are numbered row by
    row, k = y * width + x, so horizontal neighbours sit on offsets -1/+1 and vertical ones
    on -width/+width; links across a row end and links touching a wall are removed.
    '''
    my, mx = walls.shape
    N = mx * my
    free = ~walls.ravel()
    horiz = np.ones(N - 1)
    horiz[np.arange(mx - 1, N - 1, mx)] = 0.
    horiz *= free[:-1] & free[1:]
    vert = (free[:-mx] & free[mx:]).astype(float)
    A = sparse.diags([vert, horiz, horiz, vert], [-mx, -1, 1, mx], (N, N), format='csr')
    A.eliminate_zeros()
    return A


def grid_distances(walls, source, graph=None):
    """Breadth-first step counts from source to every cell (inf where unreachable) and predecessors."""
    my, mx = walls.shape
    graph = grid_graph(walls) if graph is None else graph
    dist, pred = shortest_path(graph, directed=False, unweighted=True, indices=cell_index(source, mx),
                               return_predecessors=True)
    return dist.reshape(my, mx), pred


def grid_path(walls, start, goal, graph=None):
    """Cells from start to goal inclusive along a shortest path, or None when unreachable."""
    my, mx = walls.shape
    if walls[start[1], start[0]] or walls[goal[1], goal[0]]:
        return None
    if tuple(start) == tuple(goal):
        return [tuple(start)]
    dist, pred = grid_distances(walls, start, graph)
    if not np.isfinite(dist[goal[1], goal[0]]):
        return None
    path = []
    k = cell_index(goal, mx)
    s = cell_index(start, mx)
    while k != s:
        path.append(index_cell(k, mx))
        k = pred[k]
    path.append(tuple(start))
    return path[::-1]


def bfs_distance(walls, start, goal):
    """Plain queue search over the grid; used to cross-check the sparse-graph distances."""
    my, mx = walls.shape
    seen = {tuple(start): 0}
    queue = deque([tuple(start)])
    while queue:
        x, y = queue.popleft()
        if (x, y) == tuple(goal):
            return seen[(x, y)]
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < mx and 0 <= ny < my and not walls[ny, nx] and (nx, ny) not in seen:
                seen[(nx, ny)] = seen[(x, y)] + 1
                queue.append((nx, ny))
    return None


def line_of_sight(walls, a, b):
    """True when no wall cell lies on the Bresenham line from a to b."""
    x0, y0 = int(a[0]), int(a[1])
    x1, y1 = int(b[0]), int(b[1])
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if walls[y0, x0]:
            return False
        if x0 == x1 and y0 == y1:
            return True
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
