import json

import numpy as np
import pytest

from mlcl.data import (
    Dataset,
    Example,
    SyntheticConfig,
    batch_iterator,
    generate_synthetic,
    load_jsonl,
    load_splits,
    split_indices,
    write_jsonl,
)
from mlcl.errors import ConfigError, RecordError
from mlcl.losses import LabelSet

DATA = __import__("pathlib").Path(__file__).parent / "data"


def _write(tmp_path, lines):
    path = tmp_path / "corpus.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_shared_label_counted_once(tmp_path):
    path = _write(
        tmp_path,
        [json.dumps({"text": "a b", "labels": ["joy"]}), json.dumps({"text": "c", "labels": ["joy"]})],
    )
    assert load_jsonl(path).label_names == ["joy"]


def test_missing_labels_names_line(tmp_path):
    path = _write(tmp_path, [json.dumps({"text": "a", "labels": ["x"]}), json.dumps({"text": "b"})])
    with pytest.raises(RecordError) as err:
        load_jsonl(path)
    assert err.value.line == 2 and "line 2" in str(err.value)


@pytest.mark.parametrize(
    "line",
    ['{"text": "a", "labels": []}', "not json", '{"text": 3, "labels": ["x"]}', '["text"]'],
)
def test_malformed_records(tmp_path, line):
    with pytest.raises(RecordError):
        load_jsonl(_write(tmp_path, [line]))


def test_fixture_dataset():
    ds = load_jsonl(DATA / "tiny.jsonl")
    expected = Dataset(
        examples=[
            Example((1, 2, 3), LabelSet.from_indices([0], 3)),
            Example((4, 5, 1, 6), LabelSet.from_indices([0, 1], 3)),
            Example((7, 8, 3), LabelSet.from_indices([2], 3)),
        ],
        label_names=["joy", "surprise", "anger"],
        vocabulary={
            "<unk>": 0, "happy": 1, "day": 2, "today": 3, "what": 4, "a": 5,
            "surprise": 6, "so": 7, "angry": 8,
        },
    )
    assert ds == expected


def test_unknown_words_map_to_unk(tmp_path):
    train = load_jsonl(DATA / "tiny.jsonl")
    path = _write(tmp_path, [json.dumps({"text": "happy unseen", "labels": ["anger"]})])
    other = load_jsonl(path, train.vocabulary, train.label_names)
    assert other.examples[0].tokens == (1, 0)


def test_roundtrip(tmp_path):
    ds = load_jsonl(DATA / "tiny.jsonl")
    path = tmp_path / "out.jsonl"
    write_jsonl(ds, path)
    assert load_jsonl(path) == ds


def test_synthetic_roundtrip(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_examples=50, vocab_size=40, n_labels=3, seed=4))
    path = tmp_path / "syn.jsonl"
    write_jsonl(ds, path)
    assert load_jsonl(path, label_names=ds.label_names) == ds


def test_synthetic_single_label_when_rate_zero():
    ds = generate_synthetic(SyntheticConfig(n_examples=300, multi_label_rate=0.0, seed=1))
    assert all(len(ex.labels) == 1 for ex in ds.examples)


def test_synthetic_all_labels_when_cooccurrence_full():
    ones = np.ones((4, 4)).tolist()
    ds = generate_synthetic(SyntheticConfig(n_labels=4, n_examples=100, cooccurrence=ones, multi_label_rate=1.0))
    assert all(len(ex.labels) == 4 for ex in ds.examples)


def test_synthetic_deterministic():
    cfg = SyntheticConfig(n_examples=200, seed=11)
    assert generate_synthetic(cfg) == generate_synthetic(cfg)


def test_synthetic_label_marginals():
    c = np.array(
        [
            [1.0, 0.6, 0.1, 0.0],
            [0.6, 1.0, 0.3, 0.2],
            [0.1, 0.3, 1.0, 0.5],
            [0.0, 0.2, 0.5, 1.0],
        ]
    )
    cfg = SyntheticConfig(n_labels=4, vocab_size=60, n_examples=12000, tokens_per_example=2,
                          cooccurrence=c.tolist(), multi_label_rate=0.7, seed=2)
    freq = generate_synthetic(cfg).label_matrix().mean(axis=0)
    expected = cfg.label_marginals()
    # analytic marginal: 1/l for the primary draw plus co-occurrence from other primaries
    hand = np.array([(1 + 0.7 * (c[:, j].sum() - 1)) / 4 for j in range(4)])
    np.testing.assert_allclose(expected, hand, atol=1e-15)
    se = np.sqrt(expected * (1 - expected) / cfg.n_examples)
    assert np.all(np.abs(freq - expected) <= 3 * se)


@pytest.mark.parametrize(
    "field, value",
    [
        ("multi_label_rate", 1.5),
        ("n_examples", 0),
        ("cooccurrence", [[1.0, 0.5], [0.4, 1.0]]),
        ("cooccurrence", [[0.9, 0.5], [0.5, 1.0]]),
        ("cooccurrence", [[1.0, 1.5], [1.5, 1.0]]),
    ],
)
def test_synthetic_invalid_config(field, value):
    with pytest.raises(ConfigError) as err:
        SyntheticConfig(n_labels=2, **{field: value})
    assert err.value.field == field


def test_synthetic_from_dict_unknown_field():
    with pytest.raises(ConfigError):
        SyntheticConfig.from_dict({"n_labels": 3, "bogus": 1})


def test_batch_iterator_no_shuffle():
    groups = batch_iterator(10, 4, shuffle=False)
    assert [g.tolist() for g in groups] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]


def test_batch_iterator_shuffle_reproducible():
    a = batch_iterator(25, 4, seed=3, shuffle=True)
    b = batch_iterator(25, 4, seed=3, shuffle=True)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(25))


def test_batch_iterator_single_group():
    assert len(batch_iterator(7, 7, shuffle=False)) == 1
    assert len(batch_iterator(7, 100, shuffle=False)) == 1


def test_split_sizes():
    tr, va, te = split_indices(100, 0)
    assert (len(tr), len(va), len(te)) == (70, 10, 20)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(100))


def test_load_splits_vocab_from_train(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_examples=100, vocab_size=300, n_labels=3, seed=0))
    path = tmp_path / "c.jsonl"
    write_jsonl(ds, path)
    train, valid, test = load_splits(path, seed=5)
    assert (len(train), len(valid), len(test)) == (70, 10, 20)
    assert valid.vocabulary is not None and valid.vocabulary == train.vocabulary
    train_words = set(w for text in train.texts() for w in text.split())
    assert set(train.vocabulary) == train_words | {"<unk>"}
