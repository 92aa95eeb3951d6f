import pytest

from qoeweb.core import (ConditionOutcome, Direction, PacketRecord, PacketTrace, Priority, SessionLog,
                         TcpFlag)

U, D = Direction.UP, Direction.DOWN
S, A, P, F = TcpFlag.SYN, TcpFlag.ACK, TcpFlag.PSH, TcpFlag.FIN


def rec(ts, conn, d, seq, ack, flags, plen=0):
    return PacketRecord(ts, conn, d, seq, ack, flags, plen)


def make_session(subject="s01", service="A", env="1", achieved=(2, 2, 2), totals=(2, 2, 2),
                 counts=(1.0, 0.5, 3, 4), rating=4):
    conditions = []
    for priority, got, tot in zip((Priority.HIGH, Priority.MID, Priority.LOW), achieved, totals):
        conditions += [ConditionOutcome(priority, i < got) for i in range(tot)]
    return SessionLog(subject, service, env, counts[0], counts[1], counts[2], counts[3],
                      tuple(conditions), rating)


@pytest.fixture
def small_trace():
    records = [
        rec(0, 1, U, 1000, 0, S),
        rec(150_000, 1, D, 5000, 1001, S | A),
        rec(150_000, 1, U, 1001, 5001, A | P, 100),
        rec(300_000, 1, D, 5001, 1101, A, 1000),
        rec(450_000, 1, U, 1101, 6001, A),
    ]
    return PacketTrace(tuple(records), ("A", "2"))
