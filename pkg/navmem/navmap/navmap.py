import json
import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ['ObjectEntry', 'ObjectGroup', 'NavigationMap', 'UnknownGroupError', 'UnknownObjectError',
           'add_detections', 'find_goal', 'apply_assignments', 'DEDUP_RADIUS']

logger = logging.getLogger(__name__)

DEDUP_RADIUS = 2.0


class UnknownGroupError(KeyError):
    pass


class UnknownObjectError(KeyError):
    pass


@dataclass
class ObjectEntry:
    id: int
    label: str
    position: tuple
    discovered_step: int
    visited: bool = False

    def __post_init__(self):
        self.position = tuple(int(c) for c in self.position)
        if len(self.position) != 3:
            raise ValueError('position must be an integer triple, got %r' % (self.position,))
        if min(self.position) < 0:
            raise ValueError('position components must be non-negative, got %r' % (self.position,))

    def to_dict(self):
        return {'id': self.id, 'label': self.label, 'position': list(self.position),
                'discovered_step': self.discovered_step, 'visited': self.visited}


@dataclass
class ObjectGroup:
    group_id: int
    members: list = field(default_factory=list)
    created_step: int = 0

    def to_dict(self):
        return {'id': self.group_id, 'members': list(self.members), 'created_step': self.created_step}


class NavigationMap:
    '''
    Semantic memory of the agent: detected objects, the groups that partition them, and the
    visited trajectory.

    Attributes:

        objects {dict} : object id -> ObjectEntry
        groups {list} : ObjectGroup in creation order. Position in this list (1-based) is the
        group number used in rendering, so groups are only ever appended.
        trajectory {list} : ids of visited objects, in visiting order
        staged {list} : ids of objects not yet placed in a group by the clusterer
        dedup_radius {float} : re-detections of the same label within this Euclidean distance
        are dropped

    Methods:

        add_detections: insert new objects into the staging list
        place: apply clusterer assignments to the staged objects
        mark_visited: flag an object visited and extend the trajectory
        find_goal: lowest-id unvisited object with a given label
    '''

    def __repr__(self):
        output = 'Navigation map\n'
        output += str(len(self.objects)) + ' objects, ' + str(len(self.staged)) + ' staged\n'
        output += str(len(self.groups)) + ' groups'
        if self.groups:
            output += ' (sizes ' + ', '.join(str(len(g.members)) for g in self.groups) + ')'
        output += '\n'
        output += 'Trajectory length = ' + str(len(self.trajectory)) + '\n'
        return output

    def __init__(self, dedup_radius=DEDUP_RADIUS):

        self.objects = {}
        self.groups = []
        self.trajectory = []
        self.staged = []
        self.dedup_radius = dedup_radius
        self.max_step = -1
        self._next_object_id = 0
        self._next_group_id = 0
        self._group_index = {}
        self._object_group = {}

    def group(self, group_id):
        try:
            return self.groups[self._group_index[group_id]]
        except KeyError:
            raise UnknownGroupError('unknown group id %r' % (group_id,))

    def group_number(self, group_id):
        """1-based position of the group in the map's group list."""
        if group_id not in self._group_index:
            raise UnknownGroupError('unknown group id %r' % (group_id,))
        return self._group_index[group_id] + 1

    def group_of(self, object_id):
        self.entry(object_id)
        return self._object_group.get(object_id)

    def entry(self, object_id):
        try:
            return self.objects[object_id]
        except KeyError:
            raise UnknownObjectError('unknown object id %r' % (object_id,))

    @property
    def group_ids(self):
        return [g.group_id for g in self.groups]

    def labels(self, group_id):
        return [self.objects[i].label for i in self.group(group_id).members]

    def centroid(self, group_id, planar=True):
        members = self.group(group_id).members
        if not members:
            return None
        pts = np.array([self.objects[i].position for i in members], dtype=float)
        if planar:
            pts = pts[:, :2]
        return pts.mean(axis=0)

    def _is_duplicate(self, label, position):
        p = np.asarray(position, dtype=float)
        for obj in self.objects.values():
            if obj.label != label:
                continue
            if np.linalg.norm(p - np.asarray(obj.position, dtype=float)) <= self.dedup_radius:
                return True
        return False

    def add_detections(self, step, detections):

        if step < self.max_step:
            raise ValueError('step %d precedes the latest recorded step %d' % (step, self.max_step))
        self.max_step = step
        new_ids = []
        for label, position in detections:
            if self._is_duplicate(label, position):
                continue
            entry = ObjectEntry(self._next_object_id, label, position, step)
            self.objects[entry.id] = entry
            self.staged.append(entry.id)
            self._next_object_id += 1
            new_ids.append(entry.id)
        if len(new_ids) < len(detections):
            logger.debug('step %d: %d of %d detections were re-detections', step,
                         len(detections) - len(new_ids), len(detections))
        return new_ids

    def new_group(self, step):
        grp = ObjectGroup(self._next_group_id, [], step)
        self._group_index[grp.group_id] = len(self.groups)
        self.groups.append(grp)
        self._next_group_id += 1
        return grp.group_id

    def append_member(self, group_id, object_id):
        self.entry(object_id)
        if object_id in self._object_group:
            raise ValueError('object %d already belongs to group %d' % (object_id, self._object_group[object_id]))
        self.group(group_id).members.append(object_id)
        self._object_group[object_id] = group_id
        if object_id in self.staged:
            self.staged.remove(object_id)

    def place(self, assignments, step):
        """Apply clusterer output.

        Every assignment carries an existing group id or None; all None targets of one call
        go into a single new group, in assignment order. Returns (changed group ids in map
        order, id of the new group or None).
        """
        changed = set()
        leftovers = []
        for a in assignments:
            if a.group_id is None:
                leftovers.append(a.object_id)
            else:
                self.append_member(a.group_id, a.object_id)
                changed.add(a.group_id)
        new_id = None
        if leftovers:
            new_id = self.new_group(step)
            for oid in leftovers:
                self.append_member(new_id, oid)
            changed.add(new_id)
        return [gid for gid in self.group_ids if gid in changed], new_id

    def mark_visited(self, object_id):
        entry = self.entry(object_id)
        if not entry.visited:
            entry.visited = True
            self.trajectory.append(object_id)

    def find_goal(self, goal_label):
        goal = goal_label.lower()
        for oid in sorted(self.objects):
            obj = self.objects[oid]
            if not obj.visited and obj.label.lower() == goal:
                return oid
        return None

    def to_dict(self):
        return {'objects': [self.objects[i].to_dict() for i in sorted(self.objects)],
                'groups': [g.to_dict() for g in self.groups],
                'trajectory': list(self.trajectory),
                'staged': list(self.staged)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, dedup_radius=DEDUP_RADIUS):
        nav_map = cls(dedup_radius=dedup_radius)
        for o in d['objects']:
            entry = ObjectEntry(o['id'], o['label'], o['position'], o.get('discovered_step', 0),
                                o.get('visited', False))
            nav_map.objects[entry.id] = entry
            nav_map.max_step = max(nav_map.max_step, entry.discovered_step)
        for g in d['groups']:
            grp = ObjectGroup(g['id'], [], g.get('created_step', 0))
            nav_map._group_index[grp.group_id] = len(nav_map.groups)
            nav_map.groups.append(grp)
            for oid in g['members']:
                nav_map.append_member(grp.group_id, oid)
        nav_map.trajectory = list(d['trajectory'])
        nav_map.staged = [i for i in d.get('staged', []) if i not in nav_map._object_group]
        nav_map._next_object_id = max(nav_map.objects, default=-1) + 1
        nav_map._next_group_id = max(nav_map._group_index, default=-1) + 1
        return nav_map


def add_detections(nav_map, step, detections):
    return nav_map.add_detections(step, detections)


def find_goal(nav_map, goal_label):
    return nav_map.find_goal(goal_label)


def apply_assignments(nav_map, assignments, step):
    return nav_map.place(assignments, step)
