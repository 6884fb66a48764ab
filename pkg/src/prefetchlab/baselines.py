"""Table-driven hardware prefetcher baselines.

Both prefetchers consume the miss stream one event at a time through
observe(pc, line) and return the delta set they would prefetch after that
miss, which makes them directly comparable to the sequence models: the
deltas returned at miss t are scored against the true delta t -> t+1.
All deltas are in line units.
"""

from __future__ import annotations

from collections import OrderedDict

from .eval import PredictionSet
from .trace import signed_delta


class StreamPrefetcher:
    """Confirmation-based stream prefetcher.

    Tracks up to `max_streams` streams with LRU replacement. A miss joins
    the most recently used stream whose last line is within +-`window`
    lines; a stream is confirmed once the same stride repeats, and while
    confirmed it prefetches stride multiples 1..degree ahead.
    """

    def __init__(self, max_streams: int = 10, window: int = 16, degree: int = 10):
        self.max_streams = max_streams
        self.window = window
        self.degree = degree
        self._streams: OrderedDict[int, list] = OrderedDict()  # id -> [last, stride, confirmed]
        self._next_id = 0

    def observe(self, pc: int, line: int) -> tuple[int, ...]:
        match = None
        for sid in reversed(self._streams):
            if abs(line - self._streams[sid][0]) <= self.window:
                match = sid
                break
        if match is None:
            if len(self._streams) >= self.max_streams:
                self._streams.popitem(last=False)
            self._streams[self._next_id] = [line, None, False]
            self._next_id += 1
            return ()

        s = self._streams[match]
        self._streams.move_to_end(match)
        d = line - s[0]
        if d == 0:
            return ()
        if s[1] == d:
            s[2] = True
        else:
            s[1] = d
            s[2] = False
        s[0] = line
        if s[2]:
            return tuple(d * i for i in range(1, self.degree + 1))
        return ()


class GhbPcDc:
    """Global history buffer prefetcher with PC-localized delta correlation.

    A circular `buffer_size`-entry history buffer holds one node per miss,
    linked per PC; an LRU index table of `index_size` PCs points at each
    PC's most recent node. On a miss the current localized delta pair is
    looked up in that PC's delta history (most recent earlier occurrence
    wins) and up to `degree` following deltas are replayed as cumulative
    offsets. Prediction happens before the miss is inserted.
    """

    def __init__(self, index_size: int = 256, buffer_size: int = 256, degree: int = 10):
        self.index_size = index_size
        self.buffer_size = buffer_size
        self.degree = degree
        self._buf: list[tuple[int, int, int]] = [(-1, 0, -1)] * buffer_size  # seq, line, prev_seq
        self._index: OrderedDict[int, int] = OrderedDict()  # pc -> seq
        self._seq = 0

    def _chain_lines(self, pc: int) -> list[int]:
        """This PC's miss lines still in the buffer, most recent first."""
        lines = []
        seq = self._index.get(pc, -1)
        while seq >= 0:
            entry = self._buf[seq % self.buffer_size]
            if entry[0] != seq:  # overwritten
                break
            lines.append(entry[1])
            seq = entry[2]
        return lines

    def observe(self, pc: int, line: int) -> tuple[int, ...]:
        preds = self._predict(pc, line)
        self._insert(pc, line)
        return preds

    def _predict(self, pc: int, line: int) -> tuple[int, ...]:
        hist = self._chain_lines(pc)
        if len(hist) < 2:
            return ()
        d_cur = line - hist[0]
        d_prev = hist[0] - hist[1]
        # deltas[i] leads into hist[i]; chronological order is reversed
        deltas = [hist[i] - hist[i + 1] for i in range(len(hist) - 1)]
        for j in range(1, len(deltas)):
            if deltas[j] == d_cur and j + 1 < len(deltas) and deltas[j + 1] == d_prev:
                out = []
                total = 0
                for i in range(j - 1, -1, -1):
                    total += deltas[i]
                    out.append(total)
                    if len(out) >= self.degree:
                        break
                return tuple(out)
        return ()

    def _insert(self, pc: int, line: int) -> None:
        prev = self._index.get(pc, -1)
        self._buf[self._seq % self.buffer_size] = (self._seq, line, prev)
        if pc in self._index:
            self._index.move_to_end(pc)
        elif len(self._index) >= self.index_size:
            self._index.popitem(last=False)
        self._index[pc] = self._seq
        self._seq += 1


def baseline_prediction_sets(prefetcher, misses) -> list[PredictionSet]:
    """Run a prefetcher over a miss stream; one PredictionSet per transition."""
    out = []
    for t, m in enumerate(misses):
        preds = prefetcher.observe(m.pc, m.line_addr)
        if t + 1 < len(misses):
            true = signed_delta(m.line_addr, misses[t + 1].line_addr)
            out.append(PredictionSet(timestep=m.timestep, predicted=preds[:10], true_delta=true))
    return out
