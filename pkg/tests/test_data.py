import numpy as np
import pytest

from transfir import data as D
from transfir.errors import ConfigError, ContractError, IntegrityError, ParseError, VocabError

from conftest import toy_graph


def write_dataset(tmp_path, facts, n_entities=5, n_relations=2, name="facts.txt"):
    (tmp_path / "entity2id.txt").write_text("".join(f"e{i}\t{i}\n" for i in range(n_entities)))
    (tmp_path / "relation2id.txt").write_text("".join(f"r{i}\t{i}\n" for i in range(n_relations)))
    (tmp_path / name).write_text("".join(f"{s}\t{r}\t{o}\t{t}\n" for s, r, o, t in facts))


def test_load_normalizes_by_gcd_granularity(tmp_path):
    write_dataset(tmp_path, [(3, 1, 4, 24), (0, 0, 1, 0), (2, 1, 0, 48)])
    g = D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))
    facts = {(q.subject, q.relation, q.object, q.timestamp) for q in g.all_facts()}
    assert (3, 1, 4, 1) in facts and (0, 0, 1, 0) in facts and (2, 1, 0, 2) in facts
    assert g.num_timestamps == 3


def test_load_empty_file(tmp_path):
    write_dataset(tmp_path, [])
    g = D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))
    assert g.num_timestamps == 0
    assert g.num_facts() == 0


def test_duplicate_lines_are_kept(tmp_path):
    write_dataset(tmp_path, [(0, 0, 1, 5), (0, 0, 1, 5), (1, 1, 2, 10)])
    g = D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))
    assert g.num_facts() == 3
    assert len(g.snapshots[1]) == 2  # granularity 5


def test_trailing_columns_ignored(tmp_path):
    write_dataset(tmp_path, [])
    (tmp_path / "facts.txt").write_text("0\t0\t1\t7\textra\tcols\n")
    g = D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))
    assert g.num_facts() == 1


def test_parse_error_carries_line_number(tmp_path):
    write_dataset(tmp_path, [])
    (tmp_path / "facts.txt").write_text("0\t0\t1\t0\nbad line\n")
    with pytest.raises(ParseError) as exc:
        D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))
    assert ":2" in str(exc.value)


def test_unknown_id_is_vocab_error(tmp_path):
    write_dataset(tmp_path, [(0, 0, 99, 0)])
    with pytest.raises(VocabError):
        D.load_quadruples(str(tmp_path / "facts.txt"), str(tmp_path))


def test_add_inverse_relations_hand_case():
    g = toy_graph()
    aug = D.add_inverse_relations(g)
    assert aug.num_facts() == 2 * g.num_facts()
    snap0 = {(q.subject, q.relation, q.object) for q in aug.snapshots[0]}
    assert (1, 2, 0) in snap0  # (0,0,1) with |R|=2 gains (1,2,0)
    assert max(q.relation for q in aug.all_facts()) == 2 * g.vocab.num_relations - 1


def test_add_inverse_relations_empty_graph():
    g = D.TemporalKG(snapshots=[], vocab=toy_graph().vocab)
    assert D.add_inverse_relations(g).num_facts() == 0


def test_add_inverse_twice_rejected():
    aug = D.add_inverse_relations(toy_graph())
    with pytest.raises(ContractError):
        D.add_inverse_relations(aug)


def test_inverse_preserves_per_timestamp_distribution():
    g = toy_graph()
    aug = D.add_inverse_relations(g)
    for t in range(g.num_timestamps):
        assert len(aug.snapshots[t]) == 2 * len(g.snapshots[t])


def _graph_with_timestamps(n):
    vocab = D.Vocab(entity_names={0: "a", 1: "b"}, relation_names={0: "r"})
    snaps = [[D.Quadruple(0, 0, 1, t)] for t in range(n)]
    return D.TemporalKG(snapshots=snaps, vocab=vocab)


def test_split_arithmetic():
    split = D.chronological_split(_graph_with_timestamps(10), (0.5, 0.2, 0.3))
    assert split.train == (0, 5) and split.valid == (5, 7) and split.test == (7, 10)


def test_split_conventional_ratios():
    split = D.chronological_split(_graph_with_timestamps(365), (0.8, 0.1, 0.1))
    assert split.train == (0, 292)


def test_split_minimal_three_timestamps():
    split = D.chronological_split(_graph_with_timestamps(3), (0.34, 0.33, 0.33))
    assert split.train == (0, 1) and split.valid == (1, 2) and split.test == (2, 3)


def test_split_rejects_empty_partition_and_bad_ratios():
    with pytest.raises(ConfigError):
        D.chronological_split(_graph_with_timestamps(2), (0.5, 0.2, 0.3))
    with pytest.raises(ConfigError):
        D.chronological_split(_graph_with_timestamps(10), (0.5, 0.2, 0.2))


def test_first_appearance_hand_minimum():
    vocab = D.Vocab(entity_names={0: "a", 1: "b"}, relation_names={0: "r"})
    snaps = [[] for _ in range(6)]
    snaps[2] = [D.Quadruple(0, 0, 1, 2)]
    snaps[5] = [D.Quadruple(1, 0, 0, 5)]
    g = D.TemporalKG(snapshots=snaps, vocab=vocab)
    first = D.first_appearance(g)
    assert first == {0: 2, 1: 2}


def test_first_appearance_empty_graph():
    g = D.TemporalKG(snapshots=[], vocab=toy_graph().vocab)
    assert D.first_appearance(g) == {}


def test_first_appearance_invariant_under_inverses():
    g = toy_graph()
    assert D.first_appearance(g) == D.first_appearance(D.add_inverse_relations(g))


def test_emerging_entities_boundaries():
    vocab = D.Vocab(entity_names={i: str(i) for i in range(4)}, relation_names={0: "r"})
    snaps = [[] for _ in range(10)]
    snaps[0] = [D.Quadruple(0, 0, 1, 0)]
    snaps[6] = [D.Quadruple(2, 0, 0, 6)]   # valid-only entity: excluded
    snaps[9] = [D.Quadruple(3, 0, 0, 9)]   # last timestamp: included
    g = D.TemporalKG(snapshots=snaps, vocab=vocab)
    split = D.chronological_split(g, (0.5, 0.2, 0.3))
    assert D.emerging_entities(g, split) == {3}


def test_no_leakage_split_property():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_t = int(rng.integers(3, 40))
        g = _graph_with_timestamps(n_t)
        split = D.chronological_split(_graph_with_timestamps(n_t), (0.5, 0.2, 0.3))
        assert 0 < split.train[1] <= split.valid[1] <= split.test[1] == n_t
        assert split.train[1] == split.valid[0] and split.valid[1] == split.test[0]


def test_load_embeddings_shape_and_errors(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2 3\n0 1.0 2.0 3.0\n1 4.0 5.0 6.0\n")
    table = D.load_embeddings(str(path), 2)
    assert table.entities.values.shape == (2, 3)
    assert not table.entities.requires_grad
    assert np.allclose(table.entities.values[1], [4.0, 5.0, 6.0])

    path.write_text("2 3\n0 1 2 3\n1 4 5 6\n0 7 8 9\n")
    with pytest.raises(IntegrityError):
        D.load_embeddings(str(path), 2)

    path.write_text("2 3\n0 1 2 three\n1 4 5 6\n")
    with pytest.raises(ParseError):
        D.load_embeddings(str(path), 2)

    path.write_text("3 3\n0 1 2 3\n1 4 5 6\n2 7 8 9\n")
    with pytest.raises(IntegrityError):
        D.load_embeddings(str(path), 2)


def test_load_embeddings_rows_in_any_order(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2 2\n1 9.0 9.5\n0 1.0 1.5\n")
    table = D.load_embeddings(str(path), 2)
    assert np.allclose(table.entities.values, [[1.0, 1.5], [9.0, 9.5]])


def test_embed_export_round_trip(tmp_path):
    # cross-component: the exporter writes exactly what this loader reads
    embed_export = pytest.importorskip("embed_export")
    (tmp_path / "entity2id.txt").write_text(
        "".join(f"title {i}\t{i}\n" for i in range(5)))
    out = tmp_path / "embeddings.txt"
    matrix = embed_export.export_embeddings(str(tmp_path), str(out),
                                            encoder="hashing", dim=12)
    table = D.load_embeddings(str(out), 5)
    assert np.max(np.abs(table.entities.values - matrix)) < 1e-6


def test_multifile_dataset_merges_with_shared_granularity(tmp_path):
    (tmp_path / "entity2id.txt").write_text("a\t0\nb\t1\n")
    (tmp_path / "relation2id.txt").write_text("r\t0\n")
    (tmp_path / "train.txt").write_text("0\t0\t1\t0\n0\t0\t1\t24\n")
    (tmp_path / "test.txt").write_text("1\t0\t0\t72\n")
    g = D.load_dataset(str(tmp_path))
    assert g.num_timestamps == 4
    assert len(g.snapshots[3]) == 1
