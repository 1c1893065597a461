"""Compiled inner loop for the matrix-free grid operator."""

import numba

# probe OpenMP before TBB; the bundled TBB is often too old and only warns
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@numba.njit(cache=True, parallel=True)
def table_matvec(table, tgt, src, offset, w, out):
    """out[i] = sum_j table[tgt[i] - src[j] + offset] * w[j].

    ``table`` holds a translation-invariant kernel on all grid index offsets;
    ``offset`` shifts signed offsets into the table's index range.  Rows are
    split across threads; each row is summed in a fixed order, so the result
    does not depend on the thread count.
    """
    for i in numba.prange(tgt.shape[0]):
        acc = 0j
        a0 = tgt[i, 0] + offset[0]
        a1 = tgt[i, 1] + offset[1]
        a2 = tgt[i, 2] + offset[2]
        for j in range(src.shape[0]):
            acc += table[a0 - src[j, 0], a1 - src[j, 1], a2 - src[j, 2]] * w[j]
        out[i] = acc
    return out
