import csv
import json

import pytest

from dronepki.bench import (
    CSV_HEADER,
    by_class,
    measure_block_size,
    read_csv,
    sidecar_path,
    sweep_nodes,
    sweep_transactions,
    write_csv,
    write_metadata,
)
from dronepki.errors import EmptyLedger
from dronepki.ledger import LedgerState
from dronepki.simnet import OP_CLASSES

from _world import Corpus


def field(n):
    return 4 + n


def expected_size(block):
    # arithmetic size of the length-prefixed layout, independent of the encoder
    header = field(18) + field(8) + field(1) + field(32) + field(0 if block.header.service_prev is None else 32)
    body = field(16) + field(len(block.drone_name.encode())) + field(32) + field(64) + field(8) + field(32)
    approvals = len(block.footer.approvals) * field(field(32) + field(64))
    footer = field(18) + field(8) + field(approvals)
    return field(17) + field(header) + field(body) + field(footer)


def test_block_size_matches_layout():
    corpus = Corpus(40, seed=2)
    blocks = corpus.ledger.blocks
    assert measure_block_size(corpus.ledger) == pytest.approx(sum(map(expected_size, blocks)) / len(blocks))
    assert measure_block_size(blocks[:1]) == expected_size(blocks[0])


def test_empty_ledger_raises():
    with pytest.raises(EmptyLedger):
        measure_block_size(LedgerState())
    with pytest.raises(EmptyLedger):
        measure_block_size([])


def test_node_sweep_shape(tmp_path):
    points = sweep_nodes([4, 8, 12], tx_count=40, repetitions=2)
    assert len(points) == 9
    assert {(p.axis, p.op_class) for p in points} == {(n, c) for n in (4, 8, 12) for c in OP_CLASSES}
    assert all(p.seeds == (1, 2) for p in points)
    assert [p.axis for p in by_class(points, "registration")] == [4, 8, 12]

    out = tmp_path / "nodes.csv"
    write_csv(points, out)
    back = read_csv(out)
    assert [(p.axis, p.op_class) for p in back] == [(p.axis, p.op_class) for p in points]
    for a, b in zip(points, back):
        assert b.throughput_ops == pytest.approx(a.throughput_ops, abs=1e-6)


def test_degenerate_point_gives_wellformed_csv(tmp_path):
    points = sweep_nodes([100], tx_count=5, repetitions=1)
    out = tmp_path / "big.csv"
    write_csv(points, out)
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + len(OP_CLASSES)
    assert all(len(r) == len(CSV_HEADER) for r in rows)
    assert all(float(r[3]) >= 0 for r in rows[1:])


def test_tx_sweep_and_sidecar(tmp_path):
    points = sweep_transactions([20, 40], node_count=4, repetitions=1)
    out = tmp_path / "txs.csv"
    write_csv(points, out)
    meta_path = sidecar_path(out)
    assert meta_path.name == "txs.json"
    write_metadata(meta_path, "txs", points, {"node_count": 4})
    meta = json.loads(meta_path.read_text())
    assert meta["axis"] == "txs" and meta["primitives"]["signature"] == "Ed25519"
    assert 200 <= meta["mean_block_bytes"] <= 2048
    assert set(meta["block_bytes_by_axis"]) == {"20", "40"}


@pytest.mark.parametrize("call", [
    lambda: sweep_nodes([]),
    lambda: sweep_nodes([0]),
    lambda: sweep_transactions([4], repetitions=0),
])
def test_bad_sweep_arguments(call):
    with pytest.raises(ValueError):
        call()


def test_sidecar_path_for_other_suffix(tmp_path):
    assert sidecar_path(tmp_path / "x.out").name == "x.out.json"
