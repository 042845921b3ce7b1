from concurrent.futures import ThreadPoolExecutor


def pmap(fn, items, jobs=1):
    """Order-preserving map; threads only when ``jobs > 1``."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))
