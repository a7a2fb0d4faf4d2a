"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (with its runtime against the
limit) in ``RESULTS``; the terminal summary prints them after the run.
"""

import random
import time
from contextlib import contextmanager

import pytest

from dronepki.bench import bench_config, by_class, measure_block_size, sidecar_path, sweep_nodes, sweep_transactions, write_csv, write_metadata
from dronepki.cli import main
from dronepki.crypto import SealedEnvelope, Signature
from dronepki.errors import HandshakeAbort
from dronepki.ledger import LedgerState, verify_chain
from dronepki.model import CrtType, canonical_bytes, decode_block
from dronepki.plugin import VerificationArray
from dronepki.replay import replay_file
from dronepki.simnet import (
    MAJORITY_COMPROMISE,
    SimConfig,
    inject_malicious_validators,
    inject_spoofing,
    inject_sybil,
    inject_victim_targeting,
    run,
)
from dronepki.validator import run_handshake

from _world import Corpus, commit, keys, run_round_votes, tx

RESULTS: list[str] = []


@contextmanager
def criterion(number, name, limit_s):
    """Time the block and record one PASS/FAIL line; re-raise failures."""
    detail = {"text": ""}
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        RESULTS.append(f"FAIL  {number:>2}. {name}: {exc!s:.200} ({elapsed:.2f}s, limit {limit_s}s)")
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < limit_s
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {name}: {detail['text']} ({elapsed:.2f}s, limit {limit_s}s)")
    assert ok, f"runtime {elapsed:.2f}s exceeds {limit_s}s"


# 1 ---------------------------------------------------------------------------


def test_01_threshold_exactness():
    with criterion(1, "threshold exactness", 1.0) as d:
        cases = disagreements = 0
        for n in range(1, 10):
            vals = keys(n, f"acc-th{n}")
            for k in range(n + 1):
                committed = run_round_votes(vals, k)
                oracle = k > n / 2
                cases += 1
                disagreements += committed != oracle
        assert disagreements == 0, f"{disagreements} of {cases} cases disagree"
        d["text"] = f"{cases}/{cases} (n,k) cases agree with k > n/2"


# 2 ---------------------------------------------------------------------------


def test_02_tamper_evidence():
    with criterion(2, "tamper evidence", 10.0) as d:
        corpus = Corpus(50, seed=2024)
        blocks = corpus.ledger.blocks
        assert verify_chain(blocks).ok
        rng = random.Random(2)
        trials = caught = undecodable = 0
        for index, block in enumerate(blocks):
            encoded = canonical_bytes(block)
            spans = []
            for part in (block.header, block.body):
                raw = canonical_bytes(part)
                start = encoded.find(raw)
                spans.extend(range(start, start + len(raw)))
            for pos in rng.sample(spans, 20):
                trials += 1
                mutated = bytearray(encoded)
                mutated[pos] ^= 1 << rng.randrange(8)
                try:
                    forged = decode_block(bytes(mutated))
                except (ValueError, UnicodeError):
                    # the ledger no longer parses, so it cannot verify
                    caught += 1
                    undecodable += 1
                    continue
                caught += not verify_chain(blocks[:index] + [forged] + blocks[index + 1 :]).ok
        assert trials == 1000 and caught == trials, f"{caught}/{trials} detected"
        d["text"] = f"{caught}/{trials} flips rejected ({undecodable} no longer decode); clean ledger verifies"


# 3 ---------------------------------------------------------------------------


def test_03_challenge_soundness():
    with criterion(3, "challenge soundness", 30.0) as d:
        attempts = commits = 0
        for seed in range(1, 11):
            out = inject_spoofing(SimConfig(seed=seed, n_transactions=4), attempts=100)
            attempts += out.attempts
            commits += out.commits
        assert attempts == 1000 and commits == 0, f"{commits} of {attempts} spoofs committed"
        d["text"] = f"0/{attempts} spoofed registrations committed"


# 4 ---------------------------------------------------------------------------


def test_04_minority_impotence():
    with criterion(4, "minority impotence", 60.0) as d:
        minority_invalid = majority_invalid = 0
        unlabelled = wrongly_evicted = seeds_without_invalid = 0
        for n in (3, 5, 7):
            for seed in range(1, 101):
                base = SimConfig(seed=seed, n_validators=n)
                low = inject_malicious_validators(base, n // 2)
                minority_invalid += low.invalid_commits
                wrongly_evicted += len(set(low.evicted) - set(low.malicious))
                high = inject_malicious_validators(base, n // 2 + 1)
                majority_invalid += high.invalid_commits
                seeds_without_invalid += high.invalid_commits == 0
                unlabelled += high.label != MAJORITY_COMPROMISE
        assert minority_invalid == 0, f"{minority_invalid} invalid commits under a malicious minority"
        assert wrongly_evicted == 0, f"{wrongly_evicted} honest validators evicted"
        assert majority_invalid > 0 and unlabelled == 0
        d["text"] = (
            f"minority: 0 invalid over 300 runs; majority: {majority_invalid} invalid commits, "
            f"all labelled {MAJORITY_COMPROMISE} ({seeds_without_invalid} runs without one)"
        )


# 5 ---------------------------------------------------------------------------


def test_05_victim_targeting_liveness():
    with criterion(5, "victim-targeting liveness", 30.0) as d:
        worst = 0
        for seed in range(1, 101):
            cfg = SimConfig(seed=seed, n_validators=4)
            offender = seed % cfg.n_validators
            out = inject_victim_targeting(cfg, victim=0, offender=offender)
            bound = cfg.age_threshold + cfg.n_validators
            assert out.attempts > 0 and out.commits == out.attempts, f"seed {seed}: victim tx left uncommitted"
            assert max(out.rounds_to_commit) <= bound, f"seed {seed}: {max(out.rounds_to_commit)} rounds > {bound}"
            assert out.inactivity.get(str(offender), 0) > 0, f"seed {seed}: offender inactivity log empty"
            worst = max(worst, max(out.rounds_to_commit))
        d["text"] = f"100/100 runs commit the victim within {worst} rounds (bound {bound}); offender always logged"


# 6 ---------------------------------------------------------------------------


def test_06_sybil_neutrality():
    with criterion(6, "sybil neutrality", 30.0) as d:
        out = inject_sybil(SimConfig(seed=6, n_transactions=20), 100)
        assert out.baseline_equal, "terminal ledger differs from the baseline"
        d["text"] = f"100 Sybils rejected; terminal ledger byte-identical ({len(out.trace.ledger)} blocks)"


# 7 ---------------------------------------------------------------------------


def _fold_status(blocks, ticks, name, now):
    latest = None
    for block, tick in zip(blocks, ticks):
        if tick <= now and block.drone_name == name:
            latest = block
    return latest is not None and latest.crt_type is CrtType.INITIAL and now < latest.body.expiry


def test_07_plugin_coherence():
    with criterion(7, "plugin coherence", 10.0) as d:
        vals = keys(4, "fig-val")
        op1, op2 = keys(2, "fig-op")
        fig = LedgerState(v.public for v in vals)
        commit(fig, tx(CrtType.INITIAL, "Drone_1", op1, 500), vals[:3], now=1)
        commit(fig, tx(CrtType.INITIAL, "Drone_2", op2, 500), vals[:3], now=2)
        commit(fig, tx(CrtType.REVOKE, "Drone_2", op2, 500), vals[:3], now=3)
        plugin = VerificationArray().sync(fig, 4)
        assert plugin.is_valid("Drone_1") is True and plugin.is_valid("Drone_2") is False

        corpus = Corpus(500, seed=77, n_drones=20)
        blocks, ticks = corpus.ledger.blocks, corpus.ticks
        # per-name commit index for a fast fold
        by_name = {}
        for i, b in enumerate(blocks):
            by_name.setdefault(b.drone_name, []).append(i)
        plugin = VerificationArray()
        checked = cursor = 0
        for now in range(corpus.horizon + 1):
            while cursor < len(blocks) and ticks[cursor] <= now:
                cursor += 1
            plugin = plugin.sync(blocks[:cursor], now)
            for name in corpus.names:
                idx = [i for i in by_name.get(name, ()) if i < cursor]
                b = blocks[idx[-1]] if idx else None
                expected = b is not None and b.crt_type is CrtType.INITIAL and now < b.body.expiry
                assert plugin.is_valid(name) == expected, f"{name} at tick {now}"
                checked += 1
        # spot-check the fast fold against the plain one
        rng = random.Random(7)
        for _ in range(200):
            name, now = rng.choice(corpus.names), rng.randrange(corpus.horizon)
            assert VerificationArray().sync([b for b, t in zip(blocks, ticks) if t <= now], now).is_valid(name) == \
                _fold_status(blocks, ticks, name, now)
        d["text"] = f"{checked} (drone, tick) pairs agree over 500 blocks; Drone_1 valid, revoked Drone_2 invalid"


# 8 ---------------------------------------------------------------------------

NEXT_CHECK = {
    "encreq": "sv_verify_request",
    "signature": "sv_verify_request",
    "enctoken": "do_verify_token",
    "tokensig": "do_verify_token",
    "enctokendo": "sv_verify_confirmation",
    "sigtokendo": "sv_verify_confirmation",
}
STEPS = ["sv_verify_request", "sv_open_request", "do_verify_token", "sv_verify_confirmation", "sv_open_confirmation", "assert"]


def _flip(value, rng):
    if isinstance(value, SealedEnvelope):
        ct = bytearray(value.ciphertext)
        ct[rng.randrange(len(ct))] ^= 1 << rng.randrange(8)
        return SealedEnvelope(bytes(ct), value.recipient)
    sig = bytearray(value.value)
    sig[rng.randrange(len(sig))] ^= 1 << rng.randrange(8)
    return Signature(bytes(sig), value.signer)


def test_08_handshake_fidelity():
    with criterion(8, "handshake fidelity", 10.0) as d:
        do, sv = keys(2, "acc-hs")
        aborts = 0
        for seed in range(100):
            rec = run_handshake(do, sv, b"csr", "Drone_1", entropy=random.Random(seed).randbytes)
            assert rec.initialtoken == rec.enctoken.to_bytes(), f"honest seed {seed} fails assert"
            for position, limit in NEXT_CHECK.items():
                rng = random.Random(seed * 31 + len(position))

                def intercept(name, value, position=position, rng=rng):
                    return _flip(value, rng) if name == position else value

                with pytest.raises(HandshakeAbort) as err:
                    run_handshake(do, sv, b"csr", "Drone_1", entropy=random.Random(seed).randbytes, intercept=intercept)
                assert STEPS.index(err.value.step) <= STEPS.index(limit), f"{position}: caught late at {err.value.step}"
                aborts += 1
        d["text"] = f"100/100 honest runs pass the assert; {aborts}/600 tampered runs abort by the next check"


# 9 ---------------------------------------------------------------------------


def _non_decreasing(xs):
    return all(b >= a for a, b in zip(xs, xs[1:]))


def _non_increasing(xs):
    return all(b <= a for a, b in zip(xs, xs[1:]))


def test_09_performance_trends(tmp_path):
    with criterion(9, "performance trends", 600.0) as d:
        nodes = sweep_nodes([4, 8, 12], tx_count=2000, repetitions=5)
        txs = sweep_transactions([500, 1000, 2000], node_count=12, repetitions=5)
        write_csv(nodes, tmp_path / "nodes.csv")
        write_csv(txs, tmp_path / "txs.csv")

        def series(points, klass):
            return [p.throughput_ops for p in by_class(points, klass)]

        n_reg, n_rev, n_ver = (series(nodes, k) for k in ("registration", "revocation", "verification"))
        t_reg, t_rev, t_ver = (series(txs, k) for k in ("registration", "revocation", "verification"))
        mean_ver = sum(n_ver) / len(n_ver)
        problems = []
        if not _non_decreasing(n_reg):
            problems.append(f"node sweep registration {n_reg}")
        if not _non_decreasing(n_rev):
            problems.append(f"node sweep revocation {n_rev}")
        if not all(abs(v - mean_ver) <= 0.2 * mean_ver for v in n_ver):
            problems.append(f"node sweep verification outside +/-20% {n_ver}")
        if not _non_increasing(t_reg):
            problems.append(f"tx sweep registration {t_reg}")
        if not _non_increasing(t_rev):
            problems.append(f"tx sweep revocation {t_rev}")
        if not _non_decreasing(t_ver):
            problems.append(f"tx sweep verification {t_ver}")
        assert not problems, "; ".join(problems)
        fmt = lambda xs: "/".join(f"{x:.2f}" for x in xs)  # noqa: E731
        d["text"] = (
            f"nodes 4/8/12 reg {fmt(n_reg)} rev {fmt(n_rev)} ver {fmt(n_ver)}; "
            f"txs 500/1000/2000 reg {fmt(t_reg)} rev {fmt(t_rev)} ver {fmt(t_ver)} ops/s"
        )


# 10 --------------------------------------------------------------------------


def test_10_block_size(tmp_path):
    with criterion(10, "block size", 5.0) as d:
        points = sweep_nodes([4], tx_count=50, repetitions=1)
        out = tmp_path / "size.csv"
        write_csv(points, out)
        meta = write_metadata(sidecar_path(out), "nodes", points, {"node_counts": [4], "tx_count": 50})
        size = measure_block_size(run(bench_config(4, 50, 1)).ledger)
        assert meta["mean_block_bytes"] == pytest.approx(size)
        assert 200 <= size <= 2000, f"{size:.1f} bytes"
        d["text"] = f"mean block {size / 1000:.3f} KB, recorded in bench metadata"


# 11 --------------------------------------------------------------------------

DETERMINISM_RUNS = [
    ["--seed", "1"],
    ["--seed", "2", "--validators", "7", "--transactions", "20"],
    ["--seed", "3", "--mode", "handshake"],
    ["--seed", "4", "--adversary", "spoof:20"],
    ["--seed", "5", "--validators", "5", "--adversary", "malicious:2"],
    ["--seed", "6", "--validators", "5", "--adversary", "malicious:3"],
    ["--seed", "7", "--adversary", "target:0,2"],
    ["--seed", "8", "--adversary", "sybil:30"],
    ["--seed", "9", "--strict-voting", "--mode", "handshake"],
]


def test_11_determinism_and_replay(tmp_path, capsys):
    with criterion(11, "determinism and replay", 30.0) as d:
        for i, args in enumerate(DETERMINISM_RUNS):
            a, b = tmp_path / f"{i}a.jsonl", tmp_path / f"{i}b.jsonl"
            assert main(["simulate", *args, "--out", str(a)]) == 0
            assert main(["simulate", *args, "--out", str(b)]) == 0
            assert a.read_bytes() == b.read_bytes(), f"{args} not byte-identical"
            report = replay_file(a)
            assert report.ok, f"{args}: {report.discrepancies[:3]}"
        capsys.readouterr()
        d["text"] = f"{len(DETERMINISM_RUNS)} configurations byte-identical; 0 replay discrepancies"
