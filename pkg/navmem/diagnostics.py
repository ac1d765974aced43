"""Invariant checks run by the episode loop; a failure means a bug, not a bad input."""

__all__ = ['InvariantViolation', 'check_map', 'check_store', 'check_report']


class InvariantViolation(RuntimeError):
    pass


def check_map(nav_map):
    members = [oid for g in nav_map.groups for oid in g.members]
    if len(members) != len(set(members)):
        raise InvariantViolation('an object belongs to more than one group')
    placed = set(members) | set(nav_map.staged)
    if placed != set(nav_map.objects) or set(members) & set(nav_map.staged):
        raise InvariantViolation('groups and staging list do not partition the objects')
    for oid in nav_map.trajectory:
        if oid not in nav_map.objects or not nav_map.objects[oid].visited:
            raise InvariantViolation('trajectory entry %r is not a visited object' % oid)


def check_store(store):
    if store.device_bytes() > store.budget_bytes:
        raise InvariantViolation('device tier holds %d bytes over a %d byte budget'
                                 % (store.device_bytes(), store.budget_bytes))
    for gid, e in store.entries.items():
        if e.tier == 'device' and (e.block is None or e.block.nbytes != e.size_bytes):
            raise InvariantViolation('resident group %d is out of sync with its size' % gid)


def check_report(report):
    if report.tokens_recomputed > report.prompt_tokens_total:
        raise InvariantViolation('step %d recomputes %d tokens of a %d token prompt'
                                 % (report.step, report.tokens_recomputed, report.prompt_tokens_total))
    for name, value in report.counters().items():
        if value < 0:
            raise InvariantViolation('step %d: negative counter %s' % (report.step, name))
