import numpy as np

# trailing key components that keep derived streams apart from the outer paths (key = (path,))
BRIDGE_STREAM = 1
INNER_STREAM = 2


def path_generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for one (path, node, ...) key.

    Streams depend only on the root seed and the key, never on the order in
    which they are created, so chunking paths across threads cannot change draws.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def chunk_ranges(n_items: int, n_chunks: int) -> list[tuple[int, int]]:
    n_chunks = max(1, min(n_chunks, n_items))
    edges = np.linspace(0, n_items, n_chunks + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:])]
