""" Spatial hash grid for nearest surface-point lookup.

Buckets are keyed by integer cell coordinates floor(mean / cell_size). With a
query radius no larger than the cell size, the 3x3 block of cells around the
query contains every candidate, so a lookup touches at most nine buckets.

Besides the dict of buckets used for single queries, the grid keeps a packed
copy (sorted int64 keys with bucket offsets) for vectorized batch queries. Grids
of several keyframes can be stacked into one packed index whose keys also carry
the keyframe slot, so that a whole registration step is a single batch lookup.

"""
from collections import defaultdict

import numpy as np

from polar_odom.errors import RadiusExceedsCell

_CELL_BITS = 21
_CELL_OFFSET = 1 << (_CELL_BITS - 1)
_CELL_MASK = (1 << _CELL_BITS) - 1
_NEIGHBOURS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


def _pack_keys(cells, groups=None):
    cells = np.asarray(cells, dtype=np.int64)
    ix = (cells[:, 0] + _CELL_OFFSET) & _CELL_MASK
    iy = (cells[:, 1] + _CELL_OFFSET) & _CELL_MASK
    keys = (ix << _CELL_BITS) | iy
    if groups is not None:
        keys = keys | (np.asarray(groups, dtype=np.int64) << (2 * _CELL_BITS))
    return keys


class HashGrid:
    def __init__(self, cell_size, means, groups=None):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive, got {}".format(cell_size))

        self.cell_size = float(cell_size)
        self.means = np.asarray(means, dtype=float).reshape(-1, 2)
        self.groups = None if groups is None else np.asarray(groups, dtype=np.int64)

        cells = np.floor(self.means / self.cell_size).astype(np.int64)

        self.buckets = defaultdict(list)
        if self.groups is None:
            for idx, (ix, iy) in enumerate(cells.tolist()):
                self.buckets[(ix, iy)].append(idx)
        else:
            for idx, ((ix, iy), g) in enumerate(zip(cells.tolist(), self.groups.tolist())):
                self.buckets[(g, ix, iy)].append(idx)
        self.buckets = dict(self.buckets)

        keys = _pack_keys(cells, self.groups)
        self._order = np.argsort(keys, kind="stable")
        self._keys, self._starts, self._counts = np.unique(
            keys[self._order], return_index=True, return_counts=True)
        self._max_count = int(self._counts.max()) if self._counts.size else 0

    def __len__(self):
        return self.means.shape[0]

    def _check_radius(self, radius):
        if radius > self.cell_size:
            raise RadiusExceedsCell(
                "query radius {} exceeds grid cell size {}".format(radius, self.cell_size))

    def nearest_within(self, query, radius, group=None):
        """ Index of the closest mean within `radius` of `query` (ties -> lowest index), or None. """
        self._check_radius(radius)

        q = np.asarray(query, dtype=float)
        ix, iy = (int(v) for v in np.floor(q / self.cell_size))

        candidates = []
        for dx, dy in _NEIGHBOURS:
            key = (ix + dx, iy + dy) if group is None else (group, ix + dx, iy + dy)
            candidates.extend(self.buckets.get(key, ()))
        if not candidates:
            return None

        candidates = np.sort(np.array(candidates, dtype=np.int64))
        diff = self.means[candidates] - q
        dist2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
        best = int(np.argmin(dist2))
        if dist2[best] > radius * radius:
            return None
        return int(candidates[best])

    def nearest_within_batch(self, queries, radius, groups=None):
        """ Vectorized nearest_within. Returns (indices, squared distances); index -1 means no match. """
        self._check_radius(radius)

        queries = np.asarray(queries, dtype=float).reshape(-1, 2)
        n = queries.shape[0]
        best_idx = np.full(n, -1, dtype=np.int64)
        best_d2 = np.full(n, np.inf)
        if n == 0 or self._keys.size == 0:
            return best_idx, best_d2

        r2 = radius * radius
        base = np.floor(queries / self.cell_size).astype(np.int64)

        for dx, dy in _NEIGHBOURS:
            keys = _pack_keys(base + np.array([dx, dy]), groups)
            pos = np.searchsorted(self._keys, keys)
            pos_c = np.minimum(pos, self._keys.size - 1)
            found = self._keys[pos_c] == keys
            if not np.any(found):
                continue

            q_idx = np.nonzero(found)[0]
            starts = self._starts[pos_c[q_idx]]
            counts = self._counts[pos_c[q_idx]]
            qx, qy = queries[q_idx, 0], queries[q_idx, 1]

            for slot in range(self._max_count):
                live = counts > slot
                if not np.any(live):
                    break
                cand = self._order[starts[live] + slot]
                rows = q_idx[live]
                ddx = self.means[cand, 0] - qx[live]
                ddy = self.means[cand, 1] - qy[live]
                d2 = ddx * ddx + ddy * ddy
                better = (d2 <= r2) & (
                    (d2 < best_d2[rows]) | ((d2 == best_d2[rows]) & (cand < best_idx[rows])))
                best_idx[rows[better]] = cand[better]
                best_d2[rows[better]] = d2[better]

        return best_idx, best_d2


def build_hash_grid(surface_points, cell_size):
    return HashGrid(cell_size, surface_points.means)


def nearest_within(grid, surface_points, query, radius):
    """ Nearest mean of `surface_points` (the set `grid` was built from) within `radius`. """
    if len(grid) != len(surface_points):
        raise ValueError("grid holds {} points, set holds {}".format(len(grid), len(surface_points)))
    return grid.nearest_within(query, radius)


def stack_grids(grids):
    """ One grid over several, with keys tagged by slot. Returns (grid, offsets); global index = offset + local. """
    if not grids:
        raise ValueError("need at least one grid to stack")
    cell_size = grids[0].cell_size
    if any(g.cell_size != cell_size for g in grids):
        raise ValueError("stacked grids must share one cell size")

    sizes = [len(g) for g in grids]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    means = np.concatenate([g.means for g in grids]) if sum(sizes) else np.zeros((0, 2))
    groups = np.repeat(np.arange(len(grids), dtype=np.int64), sizes)
    return HashGrid(cell_size, means, groups=groups), offsets
