"""Text rendering of the navigation map used as planner context."""

__all__ = ['render_object', 'render_group', 'render_prompt', 'render_instruction',
           'render_trajectory', 'render_prompt_suffix', 'group_text', 'ANSWER_FORMAT']

ANSWER_FORMAT = 'The next subgoal is xxx at position (xx, xx, xx)'

INSTRUCTION = ('Instruction: You are a navigation robot. The above is a description of different objects '
               'in the environment that you have seen. Your final goal is to find the %s in the environment. '
               'Based on the environmental information, please choose one specific object to travel to as '
               'your sub-goal, following such format: "' + ANSWER_FORMAT + '". Here are the objects that '
               'you have traveled to before: ')


def _position(position):
    return '(%d,%d,%d)' % tuple(position)


def render_object(entry):
    return '{object: %s, position:%s}' % (entry.label, _position(entry.position))


def render_group(nav_map, group_id):
    grp = nav_map.group(group_id)
    k = nav_map.group_number(group_id)
    members = ', '.join(render_object(nav_map.objects[i]) for i in grp.members)
    return 'Object Group %d: %s' % (k, members)


def group_text(nav_map, group_id):
    """Space-joined member labels: the text a group is embedded by."""
    return ' '.join(nav_map.labels(group_id))


def render_instruction(goal):
    return INSTRUCTION % goal


def render_trajectory(nav_map, trajectory):
    if not trajectory:
        return ''
    visits = ['the %s at position %s' % (nav_map.entry(i).label, _position(nav_map.entry(i).position))
              for i in trajectory]
    return 'Trajectory: You have visited ' + ' and '.join(visits) + '.'


def render_prompt_suffix(goal, trajectory, nav_map):
    """Everything after the group blocks: the instruction and, if any, the trajectory."""
    blocks = [render_instruction(goal)]
    traj = render_trajectory(nav_map, trajectory)
    if traj:
        blocks.append(traj)
    return '\n'.join(blocks)


def render_prompt(selected, goal, trajectory, nav_map):
    for gid in selected:
        nav_map.group(gid)
    chosen = set(selected)
    blocks = [render_group(nav_map, gid) for gid in nav_map.group_ids if gid in chosen]
    blocks.append(render_prompt_suffix(goal, trajectory, nav_map))
    return '\n'.join(blocks)
