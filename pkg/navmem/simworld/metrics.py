"""Success rate and success weighted by path length."""

__all__ = ['compute_spl', 'compute_success_rate', 'spl_term']


def spl_term(success, shortest, length):
    """S * p / max(p, l), with l clamped below by p; a zero-length shortest path scores S."""
    if not success:
        return 0.0
    length = max(length, shortest)
    if length == 0:
        return 1.0
    return shortest / max(shortest, length)


def compute_spl(results):
    results = list(results)
    if not results:
        return 0.0
    return sum(spl_term(r.success, r.shortest_path_length, r.path_length) for r in results) / len(results)


def compute_success_rate(results):
    results = list(results)
    if not results:
        return 0.0
    return sum(1.0 for r in results if r.success) / len(results)
