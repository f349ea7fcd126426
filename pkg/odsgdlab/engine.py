import logging

from odsgdlab.errors import ProtocolError

logger = logging.getLogger(__name__)


class OpSpec(object):
    """
    An operation over variables (VarIds are plain integers). `duration` is
    simulated time; `action` runs when the op starts and `on_complete` when it
    finishes. An `external` op is not completed by its duration but by an
    outside event (a message arriving), which must call complete() itself.
    """

    def __init__(self, label, reads=(), writes=(), duration=0.0, action=None, on_complete=None, external=False):
        if duration < 0:
            raise ProtocolError(f'op {label} has negative duration {duration}')
        self.label = label
        self.reads = frozenset(reads)
        self.writes = frozenset(writes)
        self.duration = duration
        self.action = action
        self.on_complete = on_complete
        self.external = external

    def touched(self):
        return self.reads | self.writes

    def __repr__(self):
        return f'OpSpec({self.label!r}, reads={sorted(self.reads)}, writes={sorted(self.writes)})'


class Ticket(object):
    __slots__ = ('seq',)

    def __init__(self, seq):
        self.seq = seq

    def __eq__(self, other):
        return isinstance(other, Ticket) and self.seq == other.seq

    def __lt__(self, other):
        return self.seq < other.seq

    def __hash__(self):
        return hash(self.seq)

    def __repr__(self):
        return f'Ticket({self.seq})'


class TraceEntry(object):
    __slots__ = ('ticket', 'label', 'start', 'end')

    def __init__(self, ticket, label, start, end=None):
        self.ticket = ticket
        self.label = label
        self.start = start
        self.end = end

    def __repr__(self):
        return f'TraceEntry({self.ticket.seq}, {self.label!r}, {self.start}, {self.end})'


class EngineState(object):
    def __init__(self):
        # map VarId to a list of [ticket, is_write] for uncompleted ops, in
        # submission order
        self._queues = {}
        self._ops = {}
        self._pending = set()
        self._running = set()
        self._trace = {}
        self._next_seq = 0

    def submit(self, op):
        """Enqueue `op` on every variable it touches and return its ticket"""
        ticket = Ticket(self._next_seq)
        self._next_seq += 1
        self._ops[ticket] = op
        self._pending.add(ticket)
        for var in sorted(op.touched()):
            self._queues.setdefault(var, []).append((ticket, var in op.writes))
        return ticket

    def op(self, ticket):
        try:
            return self._ops[ticket]
        except KeyError as ke:
            raise ProtocolError(f'unknown ticket {ticket.seq}') from ke

    def _is_ready(self, ticket):
        op = self._ops[ticket]
        for var in op.touched():
            writing = var in op.writes
            for earlier, earlier_writes in self._queues[var]:
                if earlier == ticket:
                    break
                if writing or earlier_writes:
                    return False
        return True

    def ready(self):
        """Tickets that may start now, in submission order"""
        return sorted(t for t in self._pending if self._is_ready(t))

    def start(self, ticket, now=None):
        if ticket not in self._pending or not self._is_ready(ticket):
            raise ProtocolError(f'ticket {ticket.seq} is not ready to start')
        self._pending.remove(ticket)
        self._running.add(ticket)
        self._trace[ticket] = TraceEntry(ticket, self._ops[ticket].label, now)

    def complete(self, ticket, now=None):
        if ticket not in self._running:
            raise ProtocolError(f'ticket {getattr(ticket, "seq", ticket)} is not running')
        self._running.remove(ticket)
        self._trace[ticket].end = now
        op = self._ops[ticket]
        for var in op.touched():
            queue = self._queues[var]
            queue[:] = [entry for entry in queue if entry[0] != ticket]
            if len(queue) == 0:
                del self._queues[var]

    def drained(self):
        return len(self._pending) == 0 and len(self._running) == 0

    def trace(self):
        """(ticket, label, start, end) of every started op, by start time"""
        return sorted(self._trace.values(), key=lambda e: (e.start if e.start is not None else 0.0, e.ticket.seq))
