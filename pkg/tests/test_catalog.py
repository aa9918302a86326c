import threading

import pytest

from minilake.catalog import MAIN, BranchKind, Catalog, CatalogState
from minilake.errors import (
    AlreadyExists,
    MergeConflict,
    ProtectedBranch,
    StaleHead,
    UnknownBranch,
    UnknownRef,
    UnknownSource,
)
from minilake.objectstore import ObjectStore


@pytest.fixture
def cat(tmp_path):
    return Catalog(tmp_path, ObjectStore(tmp_path / "objects"))


def put_table(cat, branch, name, payload):
    head = cat.head(branch)
    state = cat.resolve(branch).with_table(name, cat.store.put(payload.encode()))
    return cat.commit(branch, state, f"set {name}", head)


def test_fresh_catalog_main_is_empty(cat):
    assert cat.resolve(MAIN).tables == {}
    assert [b.name for b in cat.list_branches()] == [MAIN]


def test_reopening_keeps_main(tmp_path, cat):
    put_table(cat, MAIN, "trips", "v1")
    again = Catalog(tmp_path, cat.store)
    assert again.head(MAIN) == cat.head(MAIN)


def test_create_branch_from_main(cat):
    put_table(cat, MAIN, "taxi_table", "x")
    cat.create_branch("feat_1", MAIN)
    assert cat.head("feat_1") == cat.head(MAIN)


def test_create_existing_branch(cat):
    with pytest.raises(AlreadyExists):
        cat.create_branch(MAIN)


def test_create_from_unknown_source(cat):
    with pytest.raises(UnknownSource):
        cat.create_branch("x", "nope")


def test_ephemeral_branch_records_kind_and_owner(cat):
    cat.create_branch("feat_1")
    ref = cat.create_branch("run_12", "feat_1", BranchKind.EPHEMERAL)
    assert ref.kind is BranchKind.EPHEMERAL
    assert ref.owner_pid is not None
    assert ref.head == cat.head("feat_1")


def test_commit_unchanged_state_still_commits(cat):
    cat.create_branch("b")
    before = cat.head("b")
    new = cat.commit("b", cat.resolve("b"), "noop", before)
    assert new != before
    assert cat.get_commit(new).parents == (before,)
    assert cat.resolve("b") == cat.resolve(before)


def test_commit_adds_table(cat):
    put_table(cat, MAIN, "trips", "data")
    assert "trips" in cat.resolve(MAIN).tables


def test_stale_head_rejected(cat):
    head = cat.head(MAIN)
    cat.commit(MAIN, CatalogState(), "first", head)
    with pytest.raises(StaleHead):
        cat.commit(MAIN, CatalogState(), "second", head)


def test_two_writer_race_exactly_one_wins(cat):
    head = cat.head(MAIN)
    barrier = threading.Barrier(2)
    results = []

    def writer(i):
        barrier.wait()
        try:
            cat.commit(MAIN, CatalogState().with_table("t", cat.store.put(bytes([i]))), f"w{i}", head)
            results.append("ok")
        except StaleHead:
            results.append("stale")

    ts = [threading.Thread(target=writer, args=(i,)) for i in range(2)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert sorted(results) == ["ok", "stale"]


def test_fast_forward_merge(cat):
    cat.create_branch("feat_1")
    cat.create_branch("run_12", "feat_1", BranchKind.EPHEMERAL)
    new = put_table(cat, "run_12", "trips", "t")
    assert cat.merge("run_12", "feat_1") == new
    assert cat.head("feat_1") == new


def test_merge_without_new_commits_is_noop(cat):
    cat.create_branch("b")
    head = cat.head(MAIN)
    assert cat.merge("b", MAIN) == head
    assert cat.head(MAIN) == head


def test_three_way_merge_takes_changed_side(cat):
    put_table(cat, MAIN, "base", "0")
    cat.create_branch("feat")
    put_table(cat, "feat", "trips", "f")
    put_table(cat, MAIN, "other", "m")
    merged = cat.merge("feat", MAIN)
    state = cat.resolve(MAIN)
    assert set(state.tables) == {"base", "trips", "other"}
    assert len(cat.get_commit(merged).parents) == 2


def test_three_way_merge_carries_deletions(cat):
    put_table(cat, MAIN, "old", "0")
    cat.create_branch("feat")
    head = cat.head("feat")
    cat.commit("feat", cat.resolve("feat").without_table("old"), "drop", head)
    put_table(cat, MAIN, "other", "m")
    cat.merge("feat", MAIN)
    assert set(cat.resolve(MAIN).tables) == {"other"}


def test_conflicting_merge_leaves_target_unchanged(cat):
    put_table(cat, MAIN, "pickups", "0")
    cat.create_branch("feat_1")
    cat.create_branch("other")
    put_table(cat, "feat_1", "pickups", "a")
    put_table(cat, "other", "pickups", "b")
    before = cat.head("feat_1")
    with pytest.raises(MergeConflict) as info:
        cat.merge("other", "feat_1")
    assert "pickups" in str(info.value)
    assert cat.head("feat_1") == before


def test_repeated_merges_use_latest_base(cat):
    cat.create_branch("feat")
    put_table(cat, "feat", "t", "1")
    put_table(cat, MAIN, "m", "1")
    cat.merge("feat", MAIN)
    put_table(cat, "feat", "t", "2")
    put_table(cat, MAIN, "m", "2")
    cat.merge(MAIN, "feat")
    # t changed only on feat since the last merge, so no conflict
    put_table(cat, "feat", "t", "3")
    cat.merge("feat", MAIN)
    assert cat.store.get(cat.resolve(MAIN).tables["t"]) == b"3"


def test_delete_branch_keeps_commits(cat):
    cat.create_branch("run_12", MAIN, BranchKind.EPHEMERAL)
    commit = put_table(cat, "run_12", "trips", "t")
    cat.delete_branch("run_12")
    assert "trips" in cat.resolve(commit).tables
    with pytest.raises(UnknownBranch):
        cat.head("run_12")
    with pytest.raises(UnknownRef):
        cat.resolve("run_12")


def test_delete_main_is_protected(cat):
    with pytest.raises(ProtectedBranch):
        cat.delete_branch(MAIN)


def test_delete_unknown(cat):
    with pytest.raises(UnknownBranch):
        cat.delete_branch("ghost")


def test_time_travel_to_old_commit(cat):
    first = put_table(cat, MAIN, "trips", "v1")
    put_table(cat, MAIN, "trips", "v2")
    assert cat.store.get(cat.resolve(first).tables["trips"]) == b"v1"
    assert cat.store.get(cat.resolve(MAIN).tables["trips"]) == b"v2"


def test_history_newest_first(cat):
    ids = [put_table(cat, MAIN, "t", str(i)) for i in range(3)]
    hist = [c.id for c in cat.history(MAIN)]
    assert set(ids) <= set(hist)
    assert hist[0] == ids[-1]
    assert len(hist) == 4


def test_orphaned_ephemeral_branches(cat):
    cat.create_branch("run_1", MAIN, BranchKind.EPHEMERAL, owner_pid=2**22 + 12345)
    cat.create_branch("run_2", MAIN, BranchKind.EPHEMERAL)
    assert [r.name for r in cat.orphaned_ephemeral_branches()] == ["run_1"]


def test_invalid_branch_name(cat):
    with pytest.raises(UnknownBranch):
        cat.create_branch("../escape")


# -- properties ------------------------------------------------------------------

from hypothesis import given, settings, strategies as st  # noqa: E402

_ops = st.lists(
    st.tuples(
        st.sampled_from(["commit", "branch", "merge", "delete"]),
        st.sampled_from([MAIN, "a", "b", "run_1"]),
        st.sampled_from([MAIN, "a", "b", "run_1"]),
        st.sampled_from(["t", "u"]),
        st.integers(0, 3),
    ),
    max_size=25,
)


@settings(max_examples=60, deadline=None)
@given(_ops)
def test_history_is_immutable_and_merges_are_safe(tmp_path_factory, ops):
    root = tmp_path_factory.mktemp("cat")
    cat = Catalog(root, ObjectStore(root / "objects"))
    observed = {cat.head(MAIN): cat.resolve(MAIN)}
    for op, x, y, table, val in ops:
        try:
            if op == "commit" and cat.has_branch(x):
                others = {b.name: cat.resolve(b.name) for b in cat.list_branches() if b.name != x}
                new = put_table(cat, x, table, str(val))
                observed[new] = cat.resolve(x)
                # no other branch sees the commit until a merge
                assert {n: cat.resolve(n) for n in others} == others
            elif op == "branch" and cat.has_branch(x) and not cat.has_branch(y):
                cat.create_branch(y, x)
            elif op == "merge" and cat.has_branch(x) and cat.has_branch(y) and x != y:
                src_head, tgt_head = cat.head(x), cat.head(y)
                try:
                    new = cat.merge(x, y)
                    observed[new] = cat.resolve(y)
                except MergeConflict:
                    assert cat.head(y) == tgt_head
                assert cat.head(x) == src_head
            elif op == "delete" and x != MAIN and cat.has_branch(x):
                cat.delete_branch(x)
        except AlreadyExists:
            pass
    for commit_id, state in observed.items():
        assert cat.resolve(commit_id) == state


def test_ephemeral_commits_invisible_until_merge(cat):
    cat.create_branch("feat_1")
    cat.create_branch("run_12", "feat_1", BranchKind.EPHEMERAL)
    put_table(cat, "run_12", "trips", "t")
    assert "trips" not in cat.resolve("feat_1").tables
    cat.merge("run_12", "feat_1")
    assert "trips" in cat.resolve("feat_1").tables


def test_commit_blob_layout(cat):
    import json

    head = put_table(cat, MAIN, "t", "x")
    obj = json.loads(cat.store.get(head))
    assert set(obj) == {"parents", "state", "message", "timestamp"}
    assert obj["parents"] == [cat.get_commit(head).parents[0]]
