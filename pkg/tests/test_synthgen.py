import numpy as np
import pytest

from tformer_lab.synthgen import (SPLITS, TOK_NO, TOK_Q_EVENT, TOK_Q_ORDER,
                                  TOK_YES, TYPE_TOKEN_BASE, TaskSpec,
                                  file_checksum, generate, load_dataset,
                                  save_dataset, vocab_tokens)


def planted_spec(**over):
    base = dict(kind="planted_event", n=8, t_f=2, d=16, num_event_types=6,
                num_options=3, noise_sigma=0.0, train_size=30, val_size=30,
                test_size=60, seed=0)
    base.update(over)
    return TaskSpec(**base)


def order_spec(**over):
    base = dict(kind="event_order", n=6, t_f=2, d=8, num_event_types=4,
                num_options=2, noise_sigma=0.1, train_size=40, val_size=20,
                test_size=40, seed=0)
    base.update(over)
    return TaskSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown task kind"):
        planted_spec(kind="frame_count")
    with pytest.raises(ValueError, match="num_options"):
        planted_spec(num_options=7)  # more options than event types
    with pytest.raises(ValueError, match="orthonormal"):
        planted_spec(d=8)  # needs d >= 2*num_event_types
    with pytest.raises(ValueError, match="divisible"):
        planted_spec(train_size=31)
    with pytest.raises(ValueError, match="even"):
        order_spec(val_size=21)
    with pytest.raises(ValueError, match="yes/no"):
        order_spec(num_options=3)
    with pytest.raises(ValueError, match="noise_sigma"):
        order_spec(noise_sigma=-0.1)


def test_vocab_layout():
    vocab = vocab_tokens(5)
    assert len(vocab) == 9
    assert vocab[TOK_Q_EVENT] == "<q_event>"
    assert vocab[TOK_Q_ORDER] == "<q_order>"
    assert vocab[TOK_YES] == "<yes>"
    assert vocab[TOK_NO] == "<no>"
    assert vocab[TYPE_TOKEN_BASE] == "type_0"


def test_generation_deterministic():
    a = generate(planted_spec())
    b = generate(planted_spec())
    for split in SPLITS:
        assert np.array_equal(a.splits[split].frames, b.splits[split].frames)
        assert np.array_equal(a.splits[split].gold, b.splits[split].gold)
    c = generate(planted_spec(seed=1))
    assert not np.array_equal(a.splits["train"].frames, c.splits["train"].frames)


def test_prototypes_orthonormal():
    ds = generate(planted_spec())
    protos = np.concatenate([ds.event_protos, ds.attr_protos])
    gram = protos @ protos.T
    assert np.max(np.abs(gram - np.eye(len(protos)))) <= 1e-9


def test_planted_noise_free_oracle_is_exact():
    """With sigma=0 the queried frame contains exactly event+attribute
    prototypes; projecting onto the attribute set must recover the gold
    option on every sample."""
    ds = generate(planted_spec())
    data = ds.splits["test"]
    for s in range(data.size):
        frame_vec = data.frames[s, data.queried_frame[s]].mean(axis=0)
        attr = int(np.argmax(ds.attr_protos @ frame_vec))
        gold_token = data.options[s, data.gold[s], 0]
        assert gold_token == TYPE_TOKEN_BASE + attr


def test_planted_gold_exactly_balanced():
    ds = generate(planted_spec())
    for split in SPLITS:
        data = ds.splits[split]
        counts = np.bincount(data.gold, minlength=ds.spec.num_options)
        assert counts.tolist() == [data.size // ds.spec.num_options] * ds.spec.num_options


def test_planted_annotations_consistent():
    ds = generate(planted_spec())
    data = ds.splits["val"]
    for s in range(data.size):
        planted = data.planted_frames[s]
        m = int((planted >= 0).sum())
        assert m in (2, 3)
        assert data.queried_frame[s] in planted[:m]
        # orthonormality: a planted frame projects to 1 on its event prototype
        for j in range(m):
            vec = data.frames[s, planted[j]].mean(axis=0)
            proj = float(ds.event_protos[data.planted_types[s, j]] @ vec)
            assert proj == pytest.approx(1.0, abs=1e-9)
        assert data.question_ids[s, 0] == TOK_Q_EVENT


def test_planted_distractors_unique_and_exclude_gold():
    ds = generate(planted_spec())
    data = ds.splits["train"]
    for s in range(data.size):
        opts = data.options[s, :, 0].tolist()
        assert len(set(opts)) == len(opts)


def test_order_pairs_share_frame_multiset():
    ds = generate(order_spec())
    data = ds.splits["train"]
    n = ds.spec.n
    for p in range(data.size // 2):
        a, b = data.frames[2 * p], data.frames[2 * p + 1]
        a_rows = np.sort(a.reshape(n, -1), axis=0)
        b_rows = np.sort(b.reshape(n, -1), axis=0)
        assert np.array_equal(a_rows, b_rows)
        assert np.array_equal(data.question_ids[2 * p], data.question_ids[2 * p + 1])
        assert data.gold[2 * p] + data.gold[2 * p + 1] == 1


def test_order_gold_matches_slots():
    ds = generate(order_spec())
    data = ds.splits["test"]
    for s in range(data.size):
        fa, fb = data.planted_frames[s, :2]
        assert data.gold[s] == (0 if fa < fb else 1)
        assert data.options[s, :, 0].tolist() == [TOK_YES, TOK_NO]
        assert data.queried_frame[s] == -1


def test_order_balanced():
    ds = generate(order_spec())
    for split in SPLITS:
        gold = ds.splits[split].gold
        assert int(gold.sum()) == len(gold) // 2


def test_save_load_round_trip(tmp_path):
    ds = generate(order_spec())
    path = tmp_path / "ds.tflb"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.spec == ds.spec
    assert back.vocab == ds.vocab
    assert np.array_equal(back.event_protos, ds.event_protos)
    for split in SPLITS:
        assert np.array_equal(back.splits[split].frames, ds.splits[split].frames)
        assert np.array_equal(back.splits[split].options, ds.splits[split].options)

    again = tmp_path / "ds2.tflb"
    save_dataset(ds, again)
    assert file_checksum(path) == file_checksum(again)


def test_wrong_kind_dispatch():
    from tformer_lab.rng import SeededRng
    from tformer_lab.synthgen import gen_order_task, gen_planted_event
    with pytest.raises(ValueError, match="expected planted_event"):
        gen_planted_event(order_spec(), SeededRng(0))
    with pytest.raises(ValueError, match="expected event_order"):
        gen_order_task(planted_spec(), SeededRng(0))
